//! MLP specification, initialization, forward pass with activation tape, and
//! the matching backward pass.
//!
//! Architecture: optional label-embedding columns appended to the input,
//! then `hidden` fully connected layers (each optionally layer-normalized
//! before its ReLU), then a linear output layer. Layer normalization uses
//! learnable gain/shift and is applied between the linear map and the ReLU.

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::nn::params::{GradientSet, ParameterSet};
use crate::tensor::{matmul, DenseArray};

const LN_EPS: f64 = 1e-5;

/// Label-embedding table dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub num_labels: usize,
    pub dim: usize,
}

/// Shape of an MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Width of the non-embedding input.
    pub input_dim: usize,
    /// Hidden layer widths (ReLU activations).
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Layer-normalize each hidden layer between its linear map and ReLU.
    pub layer_norm: bool,
    /// Optional label-embedding columns appended to the input.
    pub embedding: Option<EmbeddingSpec>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            layer_norm: false,
            embedding: None,
        }
    }

    pub fn with_layer_norm(mut self) -> MlpSpec {
        self.layer_norm = true;
        self
    }

    pub fn with_embedding(mut self, num_labels: usize, dim: usize) -> MlpSpec {
        self.embedding = Some(EmbeddingSpec { num_labels, dim });
        self
    }

    fn emb_dim(&self) -> usize {
        self.embedding.map_or(0, |e| e.dim)
    }

    /// Width of the assembled first-layer input.
    pub fn full_input_dim(&self) -> usize {
        self.input_dim + self.emb_dim()
    }
}

/// Initialize parameters for `spec`.
///
/// Weights are Xavier-uniform in `±sqrt(6 / (fan_in + fan_out))`, biases
/// zero, layer-norm gains one and shifts zero, and embedding rows are drawn
/// from `N(0, 0.02)`. The draw order (embedding table first, then layers in
/// depth order, each row-major) is fixed, so a seed pins every value.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    if let Some(e) = spec.embedding {
        let data: Vec<f32> = (0..e.num_labels * e.dim)
            .map(|_| 0.02 * rng.sample::<f32, _>(StandardNormal))
            .collect();
        params.insert(
            "emb",
            DenseArray::from_vec(&[e.num_labels, e.dim], data).unwrap(),
        );
    }
    let mut fan_in = spec.full_input_dim();
    for (i, &width) in spec.hidden.iter().enumerate() {
        insert_linear(&mut params, &format!("l{i}"), fan_in, width, &mut rng);
        if spec.layer_norm {
            let mut gain = DenseArray::zeros(&[width]);
            gain.data_mut().fill(1.0);
            params.insert(format!("l{i}.g"), gain);
            params.insert(format!("l{i}.s"), DenseArray::zeros(&[width]));
        }
        fan_in = width;
    }
    insert_linear(&mut params, "out", fan_in, spec.output_dim, &mut rng);
    params
}

fn insert_linear(
    params: &mut ParameterSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let data: Vec<f32> = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    params.insert(
        format!("{prefix}.w"),
        DenseArray::from_vec(&[fan_in, fan_out], data).unwrap(),
    );
    params.insert(format!("{prefix}.b"), DenseArray::zeros(&[fan_out]));
}

/// Recorded activations from a forward pass, consumed by [`backward`].
pub struct Tape {
    /// `xs[i]` is the input to hidden layer `i`; `xs[hidden.len()]` is the
    /// input to the output layer. `xs[0]` is the assembled (obs ++ embedding)
    /// input.
    xs: Vec<DenseArray>,
    labels: Option<Vec<u8>>,
    /// Per hidden layer: pre-activation (after layer-norm affine when
    /// enabled), used for the ReLU mask.
    pre: Vec<DenseArray>,
    /// Per hidden layer: layer-norm internals, when enabled.
    ln: Vec<Option<LnTape>>,
}

impl Tape {
    /// Smallest `|pre-activation|` any ReLU saw during the pass. A finite
    /// difference probe of the network is only trustworthy while its
    /// induced activation shifts stay well inside this margin.
    pub fn relu_margin(&self) -> f32 {
        self.pre
            .iter()
            .flat_map(|p| p.data())
            .fold(f32::INFINITY, |m, v| m.min(v.abs()))
    }
}

struct LnTape {
    normed: DenseArray,
    inv_std: Vec<f32>,
}

fn assemble_input(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &DenseArray,
    labels: Option<&[u8]>,
) -> Result<DenseArray> {
    let (batch, width) = obs.dims2();
    if width != spec.input_dim {
        return Err(Error::invalid_argument(format!(
            "input width {width} does not match spec input_dim {}",
            spec.input_dim
        )));
    }
    let emb = match (spec.embedding, labels) {
        (None, None) => return Ok(obs.clone()),
        (None, Some(_)) => {
            return Err(Error::invalid_argument(
                "labels passed to a network without an embedding table",
            ))
        }
        (Some(_), None) => {
            return Err(Error::invalid_argument(
                "network has an embedding table but no labels were passed",
            ))
        }
        (Some(e), Some(labels)) => {
            if labels.len() != batch {
                return Err(Error::invalid_argument(format!(
                    "{} labels for a batch of {batch}",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&z| (z as usize) >= e.num_labels) {
                return Err(Error::invalid_argument(format!(
                    "label {bad} out of range for {} classes",
                    e.num_labels
                )));
            }
            e
        }
    };
    let table = params.get("emb")?;
    let full = spec.full_input_dim();
    let mut out = DenseArray::zeros(&[batch, full]);
    let labels = labels.unwrap();
    for i in 0..batch {
        let row = out.row_mut(i);
        row[..spec.input_dim].copy_from_slice(obs.row(i));
        row[spec.input_dim..].copy_from_slice(table.row(labels[i] as usize));
    }
    let _ = emb;
    Ok(out)
}

fn add_bias(x: &mut DenseArray, bias: &DenseArray) {
    let (rows, cols) = x.dims2();
    debug_assert_eq!(bias.len(), cols);
    let b = bias.data();
    for i in 0..rows {
        for (v, bv) in x.row_mut(i).iter_mut().zip(b) {
            *v += *bv;
        }
    }
}

/// Column sums of a 2-D array (batch-ascending accumulation order).
fn column_sums(x: &DenseArray) -> DenseArray {
    let (rows, cols) = x.dims2();
    let mut out = DenseArray::zeros(&[cols]);
    for i in 0..rows {
        for (acc, v) in out.data_mut().iter_mut().zip(x.row(i)) {
            *acc += *v;
        }
    }
    out
}

fn run_forward(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &DenseArray,
    labels: Option<&[u8]>,
    mode: ExecMode,
    want_tape: bool,
) -> Result<(DenseArray, Option<Tape>)> {
    let input = assemble_input(spec, params, obs, labels)?;
    let n_hidden = spec.hidden.len();
    let mut xs = Vec::with_capacity(n_hidden + 1);
    let mut pre = Vec::with_capacity(n_hidden);
    let mut ln = Vec::with_capacity(n_hidden);
    let mut h = input;
    for i in 0..n_hidden {
        let w = params.get(&format!("l{i}.w"))?;
        let b = params.get(&format!("l{i}.b"))?;
        let mut lin = matmul(&h, w, mode);
        add_bias(&mut lin, b);
        if want_tape {
            xs.push(h);
        }
        let mut ln_tape = None;
        if spec.layer_norm {
            let gain = params.get(&format!("l{i}.g"))?;
            let shift = params.get(&format!("l{i}.s"))?;
            let (rows, cols) = lin.dims2();
            let mut inv_std = vec![0.0f32; rows];
            let mut normed = DenseArray::zeros(&[rows, cols]);
            for r in 0..rows {
                let row = lin.row(r);
                let mut sum = 0.0f64;
                for &v in row {
                    sum += v as f64;
                }
                let mean = sum / cols as f64;
                let mut var = 0.0f64;
                for &v in row {
                    let d = v as f64 - mean;
                    var += d * d;
                }
                var /= cols as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                inv_std[r] = is as f32;
                let nr = normed.row_mut(r);
                for (dst, &v) in nr.iter_mut().zip(row) {
                    *dst = ((v as f64 - mean) * is) as f32;
                }
            }
            // Affine: y = g * normed + s, overwriting lin.
            let g = gain.data();
            let s = shift.data();
            for r in 0..rows {
                let (nr, lr) = (normed.row(r), lin.row_mut(r));
                for j in 0..cols {
                    lr[j] = g[j] * nr[j] + s[j];
                }
            }
            if want_tape {
                ln_tape = Some(LnTape { normed, inv_std });
            }
        }
        if want_tape {
            pre.push(lin.clone());
            ln.push(ln_tape);
        }
        for v in lin.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        h = lin;
    }
    let w = params.get("out.w")?;
    let b = params.get("out.b")?;
    let mut out = matmul(&h, w, mode);
    add_bias(&mut out, b);
    if want_tape {
        xs.push(h);
        Ok((
            out,
            Some(Tape {
                xs,
                labels: labels.map(|l| l.to_vec()),
                pre,
                ln,
            }),
        ))
    } else {
        Ok((out, None))
    }
}

/// Forward pass recording the activation tape needed for [`backward`].
pub fn forward(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &DenseArray,
    labels: Option<&[u8]>,
    mode: ExecMode,
) -> Result<(DenseArray, Tape)> {
    let (out, tape) = run_forward(spec, params, obs, labels, mode, true)?;
    Ok((out, tape.unwrap()))
}

/// Forward pass without a tape (target networks, evaluation).
pub fn forward_only(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &DenseArray,
    labels: Option<&[u8]>,
    mode: ExecMode,
) -> Result<DenseArray> {
    Ok(run_forward(spec, params, obs, labels, mode, false)?.0)
}

/// Backpropagate `dout` (gradient of a scalar loss w.r.t. the network
/// output) through the tape, returning gradients for every parameter the
/// pass touched.
pub fn backward(
    spec: &MlpSpec,
    params: &ParameterSet,
    tape: &Tape,
    dout: &DenseArray,
    mode: ExecMode,
) -> Result<GradientSet> {
    let n_hidden = spec.hidden.len();
    let (batch, out_w) = dout.dims2();
    if out_w != spec.output_dim || batch != tape.xs[0].dims2().0 {
        return Err(Error::invalid_argument(format!(
            "output gradient shape {:?} does not match tape",
            dout.shape()
        )));
    }
    let mut grads = GradientSet::new();
    let x_last = &tape.xs[n_hidden];
    grads.accumulate("out.w", matmul(&x_last.transpose2(), dout, mode));
    grads.accumulate("out.b", column_sums(dout));
    let mut dx = matmul(dout, &params.get("out.w")?.transpose2(), mode);

    for i in (0..n_hidden).rev() {
        // ReLU mask from the recorded pre-activation.
        let pre = &tape.pre[i];
        for (g, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let d_lin = if let Some(ln) = &tape.ln[i] {
            let gain = params.get(&format!("l{i}.g"))?;
            let (rows, cols) = dx.dims2();
            let mut dg = DenseArray::zeros(&[cols]);
            let mut ds = DenseArray::zeros(&[cols]);
            let mut d_lin = DenseArray::zeros(&[rows, cols]);
            let g = gain.data();
            for r in 0..rows {
                let dy = dx.row(r);
                let n = ln.normed.row(r);
                // Gain/shift gradients (batch-ascending accumulation).
                for j in 0..cols {
                    dg.data_mut()[j] += dy[j] * n[j];
                    ds.data_mut()[j] += dy[j];
                }
                let mut s1 = 0.0f64;
                let mut s2 = 0.0f64;
                for j in 0..cols {
                    let dn = (dy[j] * g[j]) as f64;
                    s1 += dn;
                    s2 += dn * n[j] as f64;
                }
                let inv_w = 1.0 / cols as f64;
                let is = ln.inv_std[r] as f64;
                let dl = d_lin.row_mut(r);
                for j in 0..cols {
                    let dn = (dy[j] * g[j]) as f64;
                    dl[j] = (is * (dn - s1 * inv_w - n[j] as f64 * s2 * inv_w)) as f32;
                }
            }
            grads.accumulate(&format!("l{i}.g"), dg);
            grads.accumulate(&format!("l{i}.s"), ds);
            d_lin
        } else {
            dx
        };
        let x = &tape.xs[i];
        grads.accumulate(&format!("l{i}.w"), matmul(&x.transpose2(), &d_lin, mode));
        grads.accumulate(&format!("l{i}.b"), column_sums(&d_lin));
        dx = matmul(&d_lin, &params.get(&format!("l{i}.w"))?.transpose2(), mode);
    }

    if let Some(labels) = &tape.labels {
        let e = spec.embedding.unwrap();
        let mut demb = DenseArray::zeros(&[e.num_labels, e.dim]);
        for (r, &z) in labels.iter().enumerate() {
            let src = &dx.row(r)[spec.input_dim..];
            let dst = demb.row_mut(z as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
        grads.accumulate("emb", demb);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let spec = MlpSpec::new(4, &[8, 8], 2).with_layer_norm().with_embedding(5, 3);
        let a = init_params(&spec, 42);
        let b = init_params(&spec, 42);
        let c = init_params(&spec, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // emb + 2x(w,b,g,s) + out(w,b)
        let names: Vec<&str> = a.names().collect();
        assert_eq!(
            names,
            vec!["emb", "l0.b", "l0.g", "l0.s", "l0.w", "l1.b", "l1.g", "l1.s", "l1.w", "out.b", "out.w"]
        );
    }

    #[test]
    fn xavier_bounds_hold() {
        let spec = MlpSpec::new(10, &[20], 5);
        let p = init_params(&spec, 1);
        let w = p.get("l0.w").unwrap();
        let bound = (6.0f32 / 30.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() < bound));
        assert!(p.get("l0.b").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_matches_hand_computation_without_hidden() {
        // No hidden layers: out = x @ W + b.
        let spec = MlpSpec::new(2, &[], 2);
        let mut p = ParameterSet::new();
        p.insert(
            "out.w",
            DenseArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        p.insert("out.b", DenseArray::from_vec(&[2], vec![0.5, -0.5]).unwrap());
        let x = DenseArray::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
        let out = forward_only(&spec, &p, &x, None, ExecMode::Sequential).unwrap();
        assert_eq!(out.data(), &[1.0 - 3.0 + 0.5, 2.0 - 4.0 - 0.5]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let spec = MlpSpec::new(3, &[16], 4).with_layer_norm();
        let p = init_params(&spec, 7);
        let x = DenseArray::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.0, 5.0]).unwrap();
        let (_, tape) = forward(&spec, &p, &x, None, ExecMode::Sequential).unwrap();
        // With gain 1/shift 0 at init, pre-activation rows have ~zero mean
        // and ~unit variance.
        let pre = &tape.pre[0];
        for r in 0..2 {
            let row = pre.row(r);
            let mean: f32 = row.iter().sum::<f32>() / row.len() as f32;
            let var: f32 =
                row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / row.len() as f32;
            assert!(mean.abs() < 1e-5, "row {r} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "row {r} var {var}");
        }
    }

    #[test]
    fn embedding_rows_select_by_label() {
        let spec = MlpSpec::new(1, &[], 1).with_embedding(3, 2);
        let mut p = init_params(&spec, 3);
        // Identity-ish readout of the embedding columns.
        p.insert(
            "out.w",
            DenseArray::from_vec(&[3, 1], vec![0.0, 1.0, 0.0]).unwrap(),
        );
        p.insert("out.b", DenseArray::zeros(&[1]));
        let x = DenseArray::from_vec(&[2, 1], vec![0.0, 0.0]).unwrap();
        let out = forward_only(&spec, &p, &x, Some(&[2, 0]), ExecMode::Sequential).unwrap();
        let table = p.get("emb").unwrap();
        assert_eq!(out.data()[0], table.row(2)[0]);
        assert_eq!(out.data()[1], table.row(0)[0]);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let spec = MlpSpec::new(1, &[], 1).with_embedding(3, 2);
        let p = init_params(&spec, 3);
        let x = DenseArray::from_vec(&[1, 1], vec![0.0]).unwrap();
        assert!(forward_only(&spec, &p, &x, Some(&[3]), ExecMode::Sequential).is_err());
        assert!(forward_only(&spec, &p, &x, None, ExecMode::Sequential).is_err());
    }
}
