//! Rough training-step throughput probe used to size the desk-scale
//! presets. Times forward + backward + Adam on value-net- and
//! policy-net-shaped MLPs at a few widths and batch sizes.

use std::time::Instant;

use scrl_core::exec::ExecMode;
use scrl_core::nn::{adam_step, backward, forward, init_params, AdamConfig, MlpSpec};
use scrl_core::tensor::DenseArray;

fn time_net(name: &str, spec: &MlpSpec, batch: usize, labels: bool, iters: usize) {
    let mut params = init_params(spec, 7);
    let obs: Vec<f32> = (0..batch * spec.input_dim)
        .map(|i| ((i * 2654435761) % 1000) as f32 / 500.0 - 1.0)
        .collect();
    let obs = DenseArray::from_vec(&[batch, spec.input_dim], obs).unwrap();
    let z: Vec<u8> = (0..batch)
        .map(|i| (i % spec.embedding.map_or(1, |e| e.num_labels)) as u8)
        .collect();
    let zr = labels.then_some(&z[..]);
    let cfg = AdamConfig::default();
    let start = Instant::now();
    for _ in 0..iters {
        let (out, tape) = forward(spec, &params, &obs, zr, ExecMode::Sequential).unwrap();
        let mut dout = out;
        let n = dout.len() as f32;
        for v in dout.data_mut() {
            *v = 2.0 * *v / n;
        }
        let grads = backward(spec, &params, &tape, &dout, ExecMode::Sequential).unwrap();
        adam_step(&mut params, &grads, &cfg, 1.0).unwrap();
    }
    let dt = start.elapsed().as_secs_f64() / iters as f64;
    // Dominant cost: 3 matmul-sized products per layer (forward, dW, dx).
    let mut flops = 0usize;
    let mut fan_in = spec.full_input_dim();
    for &h in spec.hidden.iter().chain(std::iter::once(&spec.output_dim)) {
        flops += 2 * batch * fan_in * h * 3;
        fan_in = h;
    }
    println!(
        "{name:28} batch {batch:4}  {:8.1} us/step  ~{:6.2} GFLOP/s",
        dt * 1e6,
        flops as f64 / dt / 1e9
    );
}

fn main() {
    let iters = 2000;
    for &(w, b) in &[(48usize, 128usize), (64, 128), (64, 256), (96, 256), (256, 256)] {
        let v_spec = MlpSpec::new(12, &[w, w], 1)
            .with_layer_norm()
            .with_embedding(8, 16);
        time_net("value net (ln + embed)", &v_spec, b, true, iters);
        let q_spec = MlpSpec::new(14, &[w, w], 1).with_embedding(8, 16);
        time_net("q net (embed)", &q_spec, b, true, iters);
        let pi_spec = MlpSpec::new(12, &[w, w], 2).with_embedding(8, 16);
        time_net("policy net (embed)", &pi_spec, b, true, iters);
        println!();
    }
}
