//! Ablation sweeps: families of training runs fanned out over a worker
//! pool, reduced to comparison CSVs (and an SVG front for the pareto kind).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Result;
use clap::Args;
use scrl_core::agents::{Algo, ChiStrategy, GateMode, TrainConfig};
use scrl_core::eval::{
    self, aggregate, EvalCell, NoiseCurvePoint, ParetoPoint,
};
use scrl_core::labeling::{LabeledDataset, StyleSampling};
use scrl_core::seeding::derive_seed_indexed;
use scrl_core::{Error, ExecMode};
use serde::{Deserialize, Serialize};

use crate::commands::{load_labeled, preset_hyper_params};
use crate::rundir;
use crate::settings::{self, override_with};

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// chi_strategy | relabel_dist | noise | pareto.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Worker threads for the run fan-out; runs execute their own math
    /// sequentially when more than one worker is active.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Comma-separated training seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Evaluation episodes per (label, seed).
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub steps_chi: Option<u64>,
    /// Comma-separated pollution rates (noise kind).
    #[arg(long)]
    pub zetas: Option<String>,
    /// Comma-separated advantage temperatures (pareto kind).
    #[arg(long)]
    pub betas: Option<String>,
    /// Algorithm trained by the noise kind.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub dataset: PathBuf,
    pub labels: PathBuf,
    pub preset: String,
    /// Trained by the noise kind; the other kinds fix their own algorithms.
    pub algo: String,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub zetas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gates: Vec<String>,
    pub workers: usize,
    pub seed: u64,
    pub steps: Option<u64>,
    pub steps_chi: Option<u64>,
    pub batch_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            dataset: PathBuf::new(),
            labels: PathBuf::new(),
            preset: "desk".into(),
            algo: "sciql".into(),
            seeds: vec![0],
            episodes: 5,
            zetas: vec![0.0, 0.4, 0.9],
            betas: vec![0.0, 1.0, 3.0],
            gates: vec!["style_only".into(), "style_first".into(), "task_first".into()],
            workers: 1,
            seed: 0,
            steps: None,
            steps_chi: None,
            batch_size: None,
            hidden: None,
            learning_rate: None,
        }
    }
}

impl SweepSettings {
    fn base_config(&self, algo: Algo) -> Result<TrainConfig> {
        let mut config = TrainConfig::new(algo);
        config.hp = preset_hyper_params(&self.preset)?;
        config.seed = self.seed;
        override_with(&mut config.hp.steps, self.steps);
        override_with(&mut config.hp.steps_chi, self.steps_chi);
        override_with(&mut config.hp.batch_size, self.batch_size);
        if let Some(hidden) = &self.hidden {
            config.hp.hidden = hidden.clone();
        }
        override_with(&mut config.hp.learning_rate, self.learning_rate);
        Ok(config)
    }
}

/// What one fanned-out run contributes: evaluation cells per named variant
/// (a run with several policy heads yields several variants).
struct JobOut {
    seed: u64,
    /// Pollution level, for the noise kind's curve reconstruction.
    zeta: Option<f64>,
    variants: Vec<(String, Vec<EvalCell>)>,
}

type Job = Box<dyn FnOnce() -> Result<JobOut> + Send>;

/// Run the jobs on `workers` threads, returning results in job order. The
/// pool only schedules; each job's output is independent of scheduling.
fn run_pool(workers: usize, jobs: Vec<Job>) -> Vec<Result<JobOut>> {
    let n = jobs.len();
    if workers <= 1 || n <= 1 {
        return jobs.into_iter().map(|job| job()).collect();
    }
    let slots: Vec<Mutex<Option<Job>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<Result<JobOut>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().unwrap().take().unwrap();
                *results[i].lock().unwrap() = Some(job());
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("job completed"))
        .collect()
}

/// Train one configuration and evaluate every policy head across all
/// promptable labels.
fn train_and_eval(
    labeled: &LabeledDataset,
    config: &TrainConfig,
    prefix: &str,
    episodes: usize,
    seed: u64,
    zeta: Option<f64>,
    mode: ExecMode,
) -> Result<JobOut> {
    let out = scrl_core::agents::train_agent(labeled, config, mode)?;
    if let Some(report) = out.diverged {
        return Err(Error::Diverged {
            step: report.step,
            message: format!("sweep run '{prefix}' (seed {seed}): {}", report.message),
        }
        .into());
    }
    let mut variants = Vec::new();
    for head in out.checkpoint.policy_heads() {
        let cells: Vec<EvalCell> =
            eval::evaluate_head_all_labels(&out.checkpoint, &head, episodes, seed, mode)?
                .iter()
                .map(EvalCell::from_report)
                .collect();
        let name = if prefix.is_empty() { head.clone() } else { format!("{prefix}:{head}") };
        variants.push((name, cells));
    }
    Ok(JobOut { seed, zeta, variants })
}

/// Per-cell rows for every variant of a sweep.
fn runs_csv(outs: &[JobOut]) -> String {
    let mut csv = String::from("variant,seed,criterion,label,alignment,normalized_return\n");
    for out in outs {
        for (name, cells) in &out.variants {
            for c in cells {
                csv.push_str(&format!(
                    "{name},{},{},{},{:.6},{:.6}\n",
                    out.seed,
                    c.criterion.name(),
                    c.label,
                    c.alignment,
                    c.normalized_return
                ));
            }
        }
    }
    csv
}

/// One aggregate row per variant (means over labels, std over seeds).
fn summary_csv(outs: &[JobOut]) -> String {
    let mut by_variant: BTreeMap<&str, Vec<EvalCell>> = BTreeMap::new();
    for out in outs {
        for (name, cells) in &out.variants {
            by_variant.entry(name).or_default().extend(cells.iter().cloned());
        }
    }
    let mut csv =
        String::from("variant,mean_alignment,std_alignment,mean_return,std_return,n_cells\n");
    for (name, cells) in &by_variant {
        let table = aggregate(cells);
        if let Some(row) = table.rows.iter().find(|r| r.scope == "overall") {
            csv.push_str(&format!(
                "{name},{:.6},{:.6},{:.6},{:.6},{}\n",
                row.mean_alignment, row.std_alignment, row.mean_return, row.std_return, row.n_cells
            ));
        }
    }
    csv
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn run_sweep(args: SweepArgs) -> Result<()> {
    let mut s: SweepSettings = settings::load(args.config.as_deref())?;
    override_with(&mut s.dataset, args.dataset);
    override_with(&mut s.labels, args.labels);
    override_with(&mut s.workers, args.workers);
    if let Some(seeds) = args.seeds.as_deref() {
        s.seeds = settings::parse_u64_list(seeds, "seed")?;
    }
    override_with(&mut s.episodes, args.episodes);
    if args.steps.is_some() {
        s.steps = args.steps;
    }
    if args.steps_chi.is_some() {
        s.steps_chi = args.steps_chi;
    }
    if let Some(zetas) = args.zetas.as_deref() {
        s.zetas = settings::parse_f64_list(zetas, "zeta")?;
    }
    if let Some(betas) = args.betas.as_deref() {
        s.betas = settings::parse_f64_list(betas, "beta")?;
    }
    override_with(&mut s.algo, args.algo);
    let outer_mode = match args.mode.as_deref() {
        Some(m) => settings::parse_exec_mode(m)?,
        None => ExecMode::default(),
    };
    // With several workers the fan-out provides the parallelism; inner
    // math runs sequentially (outputs are bit-identical either way).
    let inner_mode = if s.workers > 1 { ExecMode::Sequential } else { outer_mode };

    // Pick the runner before any directory is allocated, so an unknown
    // kind is a pure usage error.
    type Runner = fn(&SweepSettings, &LabeledDataset, &std::path::Path, ExecMode) -> Result<()>;
    let runner: Runner = match args.kind.as_str() {
        "chi_strategy" => sweep_chi,
        "relabel_dist" => sweep_relabel,
        "noise" => sweep_noise,
        "pareto" => sweep_pareto,
        other => {
            return Err(Error::invalid_argument(format!(
                "unknown sweep kind '{other}'; expected chi_strategy, relabel_dist, noise, or pareto"
            ))
            .into())
        }
    };

    let labeled = load_labeled(&s.dataset, &s.labels, outer_mode)?;
    let dir = rundir::resolve(args.out.as_deref(), &format!("sweep-{}", args.kind))?;

    #[derive(Serialize)]
    struct SweepEcho<'a> {
        kind: &'a str,
        #[serde(flatten)]
        settings: &'a SweepSettings,
    }
    rundir::echo_config(&dir, &SweepEcho { kind: &args.kind, settings: &s })?;

    runner(&s, &labeled, &dir, inner_mode)?;
    println!("{}", dir.display());
    Ok(())
}

fn collect(results: Vec<Result<JobOut>>) -> Result<Vec<JobOut>> {
    results.into_iter().collect()
}

/// Every style-membership estimator, for both algorithms that consume one.
fn sweep_chi(
    s: &SweepSettings,
    labeled: &LabeledDataset,
    dir: &std::path::Path,
    mode: ExecMode,
) -> Result<()> {
    let strategies = [
        ChiStrategy::Indicator,
        ChiStrategy::Mine,
        ChiStrategy::Sigmoid,
        ChiStrategy::Softmax,
    ];
    let mut jobs: Vec<Job> = Vec::new();
    for algo in [Algo::Sorl, Algo::Sciql] {
        for strategy in strategies {
            for &seed in &s.seeds {
                let mut config = s.base_config(algo)?;
                config.chi = strategy;
                config.seed = seed;
                let name = format!("{}:{}", algo.name(), strategy.name());
                let (labeled, episodes) = (labeled.clone(), s.episodes);
                jobs.push(Box::new(move || {
                    train_and_eval(&labeled, &config, &name, episodes, seed, None, mode)
                }));
            }
        }
    }
    let outs = collect(run_pool(s.workers, jobs))?;
    rundir::write_text(dir, "runs.csv", &runs_csv(&outs))?;
    rundir::write_text(dir, "chi_strategy.csv", &summary_csv(&outs))?;
    Ok(())
}

/// Conditioning labels drawn from the transition's own label versus the
/// dataset marginal.
fn sweep_relabel(
    s: &SweepSettings,
    labeled: &LabeledDataset,
    dir: &std::path::Path,
    mode: ExecMode,
) -> Result<()> {
    let mut jobs: Vec<Job> = Vec::new();
    for (name, sampling) in
        [("current", StyleSampling::Current), ("random", StyleSampling::Random)]
    {
        for &seed in &s.seeds {
            let mut config = s.base_config(Algo::Sciql)?;
            config.sampling = sampling;
            config.seed = seed;
            let prefix = format!("sciql:{name}");
            let (labeled, episodes) = (labeled.clone(), s.episodes);
            jobs.push(Box::new(move || {
                train_and_eval(&labeled, &config, &prefix, episodes, seed, None, mode)
            }));
        }
    }
    let outs = collect(run_pool(s.workers, jobs))?;
    rundir::write_text(dir, "runs.csv", &runs_csv(&outs))?;
    rundir::write_text(dir, "relabel_dist.csv", &summary_csv(&outs))?;
    Ok(())
}

/// Retrain at each pollution rate; label streams above the information
/// threshold should stop steering the policy.
fn sweep_noise(
    s: &SweepSettings,
    labeled: &LabeledDataset,
    dir: &std::path::Path,
    mode: ExecMode,
) -> Result<()> {
    let algo: Algo = s.algo.parse()?;
    let template = s.base_config(algo)?;
    let mut jobs: Vec<Job> = Vec::new();
    for (zi, &zeta) in s.zetas.iter().enumerate() {
        for &seed in &s.seeds {
            let mut config = template.clone();
            config.seed = seed;
            let prefix = format!("{}:zeta_{zeta}", algo.name());
            let pollution_seed = derive_seed_indexed(template.seed, "pollute", zi as u64);
            let (labeled, episodes) = (labeled.clone(), s.episodes);
            jobs.push(Box::new(move || {
                let polluted = if zeta > 0.0 {
                    labeled.pollute(zeta, pollution_seed, mode)?
                } else {
                    labeled
                };
                train_and_eval(&polluted, &config, &prefix, episodes, seed, Some(zeta), mode)
            }));
        }
    }
    let outs = collect(run_pool(s.workers, jobs))?;
    // Rebuild the curve in zeta order; cells inside a point follow seed
    // order because that is job order.
    let mut curve: Vec<NoiseCurvePoint> =
        s.zetas.iter().map(|&zeta| NoiseCurvePoint { zeta, cells: Vec::new() }).collect();
    for out in &outs {
        let zeta = out.zeta.expect("noise jobs carry zeta");
        let point = curve
            .iter_mut()
            .find(|p| p.zeta == zeta)
            .expect("curve covers every swept zeta");
        for (_, cells) in &out.variants {
            point.cells.extend(cells.iter().cloned());
        }
    }
    rundir::write_text(dir, "runs.csv", &runs_csv(&outs))?;
    rundir::write_text(dir, "noise.csv", &eval::noise_csv(&curve, labeled.num_labels()))?;
    Ok(())
}

/// Style/task front: gated extraction variants against one run of the
/// per-temperature baseline, with hypervolumes for both families.
fn sweep_pareto(
    s: &SweepSettings,
    labeled: &LabeledDataset,
    dir: &std::path::Path,
    mode: ExecMode,
) -> Result<()> {
    let gates: Vec<GateMode> = s
        .gates
        .iter()
        .map(|g| g.parse())
        .collect::<std::result::Result<Vec<_>, Error>>()?;
    let mut jobs: Vec<Job> = Vec::new();
    for &seed in &s.seeds {
        let mut sciql = s.base_config(Algo::Sciql)?;
        sciql.gates = gates.clone();
        sciql.seed = seed;
        let (l, episodes) = (labeled.clone(), s.episodes);
        jobs.push(Box::new(move || {
            train_and_eval(&l, &sciql, "sciql", episodes, seed, None, mode)
        }));

        let mut sorl = s.base_config(Algo::Sorl)?;
        sorl.sorl_betas = s.betas.clone();
        sorl.seed = seed;
        let (l, episodes) = (labeled.clone(), s.episodes);
        jobs.push(Box::new(move || {
            train_and_eval(&l, &sorl, "sorl", episodes, seed, None, mode)
        }));
    }
    let outs = collect(run_pool(s.workers, jobs))?;

    // Percent-scaled mean point per variant, grouped by algorithm family.
    let mut by_variant: BTreeMap<String, Vec<EvalCell>> = BTreeMap::new();
    for out in &outs {
        for (name, cells) in &out.variants {
            by_variant.entry(name.clone()).or_default().extend(cells.iter().cloned());
        }
    }
    let mut groups: Vec<(String, Vec<ParetoPoint>)> =
        vec![("sciql".into(), Vec::new()), ("sorl".into(), Vec::new())];
    for (name, cells) in &by_variant {
        let point = ParetoPoint {
            variant: name.clone(),
            style: 100.0 * mean(cells.iter().map(|c| c.alignment)),
            task: 100.0 * mean(cells.iter().map(|c| c.normalized_return)),
        };
        let family = name.split(':').next().unwrap_or_default().to_string();
        if let Some((_, points)) = groups.iter_mut().find(|(g, _)| *g == family) {
            points.push(point);
        }
    }
    rundir::write_text(dir, "runs.csv", &runs_csv(&outs))?;
    rundir::write_text(dir, "pareto.csv", &eval::pareto_csv(&groups))?;
    rundir::write_text(dir, "pareto.svg", &eval::pareto_svg(&groups))?;
    Ok(())
}
