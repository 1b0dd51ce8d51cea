//! The single-run subcommands: generate, annotate, histogram, train, eval.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use scrl_core::agents::{self, Algo, HyperParams, TrainConfig};
use scrl_core::data::Dataset;
use scrl_core::env::scripted::{generate_dataset, GenConfig};
use scrl_core::env::EnvConfig;
use scrl_core::eval;
use scrl_core::labeling::{self, CriterionId, LabeledDataset, StyleSampling};
use scrl_core::{Error, ExecMode};
use serde::{Deserialize, Serialize};

use crate::rundir;
use crate::settings::{self, override_with};

fn exec_mode(flag: Option<&str>) -> Result<ExecMode> {
    match flag {
        Some(s) => settings::parse_exec_mode(s),
        None => Ok(ExecMode::default()),
    }
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Behavior family: inplace | navigate.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Steps per episode.
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Run directory (must be fresh); default allocated under the output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// sequential | parallel (identical outputs either way).
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSettings {
    pub variant: String,
    pub episodes: usize,
    pub seed: u64,
    pub horizon: u32,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            variant: "inplace".into(),
            episodes: 50,
            seed: 0,
            horizon: EnvConfig::default().horizon,
        }
    }
}

pub fn run_generate(args: GenerateArgs) -> Result<()> {
    let mut s: GenerateSettings = settings::load(args.config.as_deref())?;
    override_with(&mut s.variant, args.variant);
    override_with(&mut s.episodes, args.episodes);
    override_with(&mut s.seed, args.seed);
    override_with(&mut s.horizon, args.horizon);
    let variant = settings::parse_variant(&s.variant)?;
    let mode = exec_mode(args.mode.as_deref())?;

    let config = GenConfig {
        env: EnvConfig { horizon: s.horizon, ..EnvConfig::default() },
        variant,
        n_episodes: s.episodes,
        seed: s.seed,
    };
    let dir = rundir::resolve(args.out.as_deref(), "generate")?;
    rundir::echo_config(&dir, &s)?;
    let dataset = generate_dataset(&config, mode)?;
    dataset.save(&dir.join("dataset.bin"))?;
    println!("{}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------- annotate

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file produced by `generate`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Labeling criterion name (e.g. position, speed_category).
    #[arg(long)]
    pub criterion: Option<String>,
    /// Label-pollution rate in [0, 1].
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Pollution seed (only meaningful with --zeta > 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateSettings {
    pub dataset: PathBuf,
    pub criterion: String,
    pub zeta: f64,
    pub seed: u64,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        AnnotateSettings {
            dataset: PathBuf::new(),
            criterion: "position".into(),
            zeta: 0.0,
            seed: 0,
        }
    }
}

pub fn run_annotate(args: AnnotateArgs) -> Result<()> {
    let mut s: AnnotateSettings = settings::load(args.config.as_deref())?;
    override_with(&mut s.dataset, args.dataset);
    override_with(&mut s.criterion, args.criterion);
    override_with(&mut s.zeta, args.zeta);
    override_with(&mut s.seed, args.seed);
    let criterion: CriterionId = s.criterion.parse()?;
    let mode = exec_mode(args.mode.as_deref())?;

    let dataset = Dataset::load(settings::require_path(&s.dataset, "dataset")?)?;
    let dir = rundir::resolve(args.out.as_deref(), "annotate")?;
    rundir::echo_config(&dir, &s)?;
    let mut labeled = labeling::annotate(&dataset, criterion, mode);
    if s.zeta > 0.0 {
        labeled = labeled.pollute(s.zeta, s.seed, mode)?;
    }
    labeled.save_sidecar(&dir.join("labels.bin"))?;
    println!("{}", dir.display());
    Ok(())
}

// --------------------------------------------------------------- histogram

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Restrict to one criterion; default covers all of them.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSettings {
    pub dataset: PathBuf,
    pub criterion: Option<String>,
}

pub fn run_histogram(args: HistogramArgs) -> Result<()> {
    let mut s: HistogramSettings = settings::load(args.config.as_deref())?;
    override_with(&mut s.dataset, args.dataset);
    if args.criterion.is_some() {
        s.criterion = args.criterion;
    }
    let criteria: Vec<CriterionId> = match &s.criterion {
        Some(name) => vec![name.parse()?],
        None => CriterionId::all().to_vec(),
    };
    let mode = exec_mode(args.mode.as_deref())?;

    let dataset = Dataset::load(settings::require_path(&s.dataset, "dataset")?)?;
    let dir = rundir::resolve(args.out.as_deref(), "histogram")?;
    rundir::echo_config(&dir, &s)?;
    let mut csv = String::from("criterion,label,count\n");
    for criterion in criteria {
        let labeled = labeling::annotate(&dataset, criterion, mode);
        for (z, count) in labeled.histogram().iter().enumerate() {
            csv.push_str(&format!("{},{z},{count}\n", criterion.name()));
        }
    }
    rundir::write_text(&dir, "histogram.csv", &csv)?;
    println!("{}", dir.display());
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Label sidecar produced by `annotate`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// bc | cbc | scbc | bcpmi | sorl | sciql.
    #[arg(long)]
    pub algo: Option<String>,
    /// Hyper-parameter preset: desk | full.
    #[arg(long)]
    pub preset: Option<String>,
    /// Label-sampling distribution: current | future | random.
    #[arg(long)]
    pub sampling: Option<String>,
    /// Style-membership estimator: indicator | mine | sigmoid | softmax.
    #[arg(long)]
    pub chi: Option<String>,
    /// Comma-separated gated extraction heads, e.g. style_only,style_first.
    #[arg(long)]
    pub gawr: Option<String>,
    /// Comma-separated advantage temperatures (one policy head each).
    #[arg(long)]
    pub sorl_betas: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub steps_chi: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub dataset: PathBuf,
    pub labels: PathBuf,
    pub algo: String,
    pub preset: String,
    pub sampling: Option<StyleSampling>,
    pub chi: Option<String>,
    pub gawr: Option<Vec<String>>,
    pub sorl_betas: Option<Vec<f64>>,
    pub seed: u64,
    pub steps: Option<u64>,
    pub steps_chi: Option<u64>,
    pub batch_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
    pub beta: Option<f64>,
    pub log_every: Option<u64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            dataset: PathBuf::new(),
            labels: PathBuf::new(),
            algo: "sciql".into(),
            preset: "desk".into(),
            sampling: None,
            chi: None,
            gawr: None,
            sorl_betas: None,
            seed: 0,
            steps: None,
            steps_chi: None,
            batch_size: None,
            hidden: None,
            learning_rate: None,
            beta: None,
            log_every: None,
        }
    }
}

pub fn preset_hyper_params(preset: &str) -> Result<HyperParams> {
    match preset {
        "desk" => Ok(HyperParams::desk_preset()),
        "full" => Ok(HyperParams::default()),
        other => Err(Error::invalid_argument(format!(
            "unknown preset '{other}'; expected 'desk' or 'full'"
        ))
        .into()),
    }
}

fn parse_sampling(s: &str) -> Result<StyleSampling> {
    match s {
        "current" => Ok(StyleSampling::Current),
        "future" => Ok(StyleSampling::Future),
        "random" => Ok(StyleSampling::Random),
        other => Err(Error::invalid_argument(format!(
            "unknown sampling '{other}'; expected current, future, or random \
             (mixtures only via the config file)"
        ))
        .into()),
    }
}

impl TrainSettings {
    /// Expand into the core training configuration.
    pub fn materialize(&self) -> Result<TrainConfig> {
        let algo: Algo = self.algo.parse()?;
        let mut config = TrainConfig::new(algo);
        config.hp = preset_hyper_params(&self.preset)?;
        config.seed = self.seed;
        if let Some(sampling) = self.sampling {
            config.sampling = sampling;
        }
        if let Some(chi) = &self.chi {
            config.chi = chi.parse()?;
        }
        if let Some(gates) = &self.gawr {
            config.gates = gates
                .iter()
                .map(|g| g.parse())
                .collect::<std::result::Result<Vec<_>, Error>>()?;
        }
        if let Some(betas) = &self.sorl_betas {
            config.sorl_betas = betas.clone();
        }
        override_with(&mut config.hp.steps, self.steps);
        override_with(&mut config.hp.steps_chi, self.steps_chi);
        override_with(&mut config.hp.batch_size, self.batch_size);
        if let Some(hidden) = &self.hidden {
            config.hp.hidden = hidden.clone();
        }
        override_with(&mut config.hp.learning_rate, self.learning_rate);
        override_with(&mut config.hp.beta, self.beta);
        override_with(&mut config.hp.log_every, self.log_every);
        Ok(config)
    }
}

/// Materialized-config echo for a training run: input paths plus the full
/// expanded core configuration.
#[derive(Serialize)]
struct TrainEcho<'a> {
    dataset: &'a Path,
    labels: &'a Path,
    preset: &'a str,
    train: &'a TrainConfig,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One CSV row per logged step and policy head (steps without policy
/// losses, e.g. the estimator pre-training phase, emit a single row with
/// the head column empty).
pub fn log_csv(log: &[agents::LogRow]) -> String {
    let mut out = String::from(
        "phase,step,chi_objective,v_task_loss,q_task_loss,v_style_loss,q_style_loss,head,policy_loss\n",
    );
    for row in log {
        let prefix = format!(
            "{},{},{},{},{},{},{}",
            row.phase,
            row.step,
            fmt_opt(row.chi_objective),
            fmt_opt(row.v_task_loss),
            fmt_opt(row.q_task_loss),
            fmt_opt(row.v_style_loss),
            fmt_opt(row.q_style_loss),
        );
        if row.policy_loss.is_empty() {
            out.push_str(&format!("{prefix},,\n"));
        } else {
            for (head, loss) in &row.policy_loss {
                out.push_str(&format!("{prefix},{head},{loss:.6}\n"));
            }
        }
    }
    out
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let mut s: TrainSettings = settings::load(args.config.as_deref())?;
    override_with(&mut s.dataset, args.dataset);
    override_with(&mut s.labels, args.labels);
    override_with(&mut s.algo, args.algo);
    override_with(&mut s.preset, args.preset);
    if let Some(sampling) = args.sampling.as_deref() {
        s.sampling = Some(parse_sampling(sampling)?);
    }
    if args.chi.is_some() {
        s.chi = args.chi;
    }
    if let Some(gawr) = args.gawr.as_deref() {
        s.gawr = Some(settings::parse_list(gawr, "gate", |p| Some(p.to_string()))?);
    }
    if let Some(betas) = args.sorl_betas.as_deref() {
        s.sorl_betas = Some(settings::parse_f64_list(betas, "beta")?);
    }
    override_with(&mut s.seed, args.seed);
    if args.steps.is_some() {
        s.steps = args.steps;
    }
    if args.steps_chi.is_some() {
        s.steps_chi = args.steps_chi;
    }
    if args.batch_size.is_some() {
        s.batch_size = args.batch_size;
    }
    if args.learning_rate.is_some() {
        s.learning_rate = args.learning_rate;
    }
    if args.beta.is_some() {
        s.beta = args.beta;
    }
    let config = s.materialize()?;
    let mode = exec_mode(args.mode.as_deref())?;

    let dataset = Dataset::load(settings::require_path(&s.dataset, "dataset")?)?;
    let labeled =
        LabeledDataset::load_sidecar(settings::require_path(&s.labels, "label sidecar")?, &dataset, mode)?;
    let dir = rundir::resolve(args.out.as_deref(), "train")?;
    rundir::echo_config(
        &dir,
        &TrainEcho { dataset: &s.dataset, labels: &s.labels, preset: &s.preset, train: &config },
    )?;

    let output = agents::train_agent(&labeled, &config, mode)?;
    output.checkpoint.save(&dir.join("checkpoint.bin"))?;
    rundir::write_text(&dir, "log.csv", &log_csv(&output.log))?;
    if let Some(report) = output.diverged {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        rundir::write_text(&dir, "divergence.json", &text)?;
        return Err(Error::Diverged {
            step: report.step,
            message: format!("{} (phase {}); last stable snapshot saved", report.message, report.phase),
        }
        .into());
    }
    println!("{}", dir.display());
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint file produced by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Policy head to roll out; default is the checkpoint's first head.
    #[arg(long)]
    pub head: Option<String>,
    /// Comma-separated target labels; default is every promptable label.
    #[arg(long)]
    pub labels: Option<String>,
    /// Episodes per (label, seed).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Comma-separated evaluation seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub checkpoint: PathBuf,
    pub head: Option<String>,
    pub labels: Option<Vec<u8>>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            checkpoint: PathBuf::new(),
            head: None,
            labels: None,
            episodes: eval::DEFAULT_EVAL_EPISODES,
            seeds: vec![0],
        }
    }
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let mut s: EvalSettings = settings::load(args.config.as_deref())?;
    override_with(&mut s.checkpoint, args.checkpoint);
    if args.head.is_some() {
        s.head = args.head;
    }
    if let Some(labels) = args.labels.as_deref() {
        s.labels = Some(settings::parse_u8_list(labels, "label")?);
    }
    override_with(&mut s.episodes, args.episodes);
    if let Some(seeds) = args.seeds.as_deref() {
        s.seeds = settings::parse_u64_list(seeds, "seed")?;
    }
    let mode = exec_mode(args.mode.as_deref())?;

    let checkpoint =
        agents::AgentCheckpoint::load(settings::require_path(&s.checkpoint, "checkpoint")?)?;
    let head = match &s.head {
        Some(h) => h.clone(),
        None => checkpoint
            .policy_heads()
            .into_iter()
            .next()
            .ok_or_else(|| Error::invalid_argument("checkpoint has no policy heads"))?,
    };
    let labels: Vec<u8> = match &s.labels {
        Some(list) => list.clone(),
        None => checkpoint.context.criterion.promptable().to_vec(),
    };
    // Reject bad requests before a run directory is allocated.
    checkpoint.network(&format!("policy:{head}"))?;
    let criterion = checkpoint.context.criterion;
    for &label in &labels {
        if !criterion.promptable().contains(&label) {
            return Err(Error::invalid_argument(format!(
                "label {label} is not promptable for criterion '{}'; promptable labels: {:?}",
                criterion.name(),
                criterion.promptable()
            ))
            .into());
        }
    }
    // Echo the materialized settings (head and labels resolved).
    let materialized = EvalSettings {
        checkpoint: s.checkpoint.clone(),
        head: Some(head.clone()),
        labels: Some(labels.clone()),
        episodes: s.episodes,
        seeds: s.seeds.clone(),
    };
    let dir = rundir::resolve(args.out.as_deref(), "eval")?;
    rundir::echo_config(&dir, &materialized)?;

    let mut reports = Vec::new();
    let mut cells = Vec::new();
    for &seed in &s.seeds {
        for &label in &labels {
            let report =
                eval::evaluate_head(&checkpoint, &head, label, s.episodes, seed, mode)?;
            cells.push(eval::EvalCell::from_report(&report));
            reports.push(report);
        }
    }
    let bounds = (checkpoint.context.return_lo, checkpoint.context.return_hi);
    rundir::write_text(&dir, "rollouts.csv", &eval::rollout_csv(&reports, bounds))?;
    rundir::write_text(&dir, "aggregate.csv", &eval::aggregate_csv(&eval::aggregate(&cells)))?;
    println!("{}", dir.display());
    Ok(())
}

// Shared with the sweep module, which builds labeled datasets the same way
// train does.
pub fn load_labeled(dataset: &Path, labels: &Path, mode: ExecMode) -> Result<LabeledDataset> {
    let dataset = Dataset::load(settings::require_path(dataset, "dataset")?)?;
    LabeledDataset::load_sidecar(settings::require_path(labels, "label sidecar")?, &dataset, mode)
        .map_err(Into::into)
}
