//! Offline agent training.
//!
//! Six algorithms share one trainer: plain behavior cloning, three
//! conditioned cloning variants, a per-label advantage-weighted baseline,
//! and the two-level value-learning agent that extracts policies from
//! style and task advantages. Everything is deterministic given the seed;
//! the execution mode only changes wall-clock time.

pub mod batch;
pub mod chi;
pub mod policy;
pub mod score;
pub mod values;

pub use batch::{featurize_obs, sample_batch, Batch};
pub use chi::{ChiModel, ChiStrategy};
pub use score::{awr_weight, gate, EmaNorm};
pub use values::{ValueLearner, ValueStepStats};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::io::{self, Container, NamedArray, MAGIC_CHECKPOINT};
use crate::labeling::{CriterionId, LabeledDataset, StyleSampling};
use crate::nn::{adam_step, cosine_factor, AdamConfig, MlpSpec, ParameterSet};
use crate::seeding::{derive_seed, rng_for};

const SNAPSHOT_EVERY: u64 = 5000;
const LOSS_DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Unconditional behavior cloning.
    Bc,
    /// Cloning conditioned on the transition's own label.
    Cbc,
    /// Cloning conditioned on a label drawn from the episode's future.
    Scbc,
    /// Cloning weighted by the estimated pointwise dependence between the
    /// transition and its label.
    Bcpmi,
    /// Per-label cloning weighted by compatibility times exponentiated
    /// task advantage.
    Sorl,
    /// Style-conditioned value learning with advantage-weighted
    /// extraction.
    Sciql,
}

impl Algo {
    pub fn all() -> [Algo; 6] {
        [Algo::Bc, Algo::Cbc, Algo::Scbc, Algo::Bcpmi, Algo::Sorl, Algo::Sciql]
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Bc => "bc",
            Algo::Cbc => "cbc",
            Algo::Scbc => "scbc",
            Algo::Bcpmi => "bcpmi",
            Algo::Sorl => "sorl",
            Algo::Sciql => "sciql",
        }
    }

    /// Whether policies take a conditioning label.
    pub fn conditioned(self) -> bool {
        !matches!(self, Algo::Bc)
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Algo> {
        Algo::all()
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::invalid_argument(format!(
                    "unknown algorithm '{s}' (expected bc|cbc|scbc|bcpmi|sorl|sciql)"
                ))
            })
    }
}

/// How the two advantage streams combine into one extraction score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Style advantage alone.
    StyleOnly,
    /// Style advantage, plus task advantage where style is favorable.
    StyleFirst,
    /// Task advantage, plus style advantage where task is favorable.
    TaskFirst,
}

impl GateMode {
    pub fn all() -> [GateMode; 3] {
        [GateMode::StyleOnly, GateMode::StyleFirst, GateMode::TaskFirst]
    }

    pub fn name(self) -> &'static str {
        match self {
            GateMode::StyleOnly => "style_only",
            GateMode::StyleFirst => "style_first",
            GateMode::TaskFirst => "task_first",
        }
    }

    pub fn uses_task_values(self) -> bool {
        !matches!(self, GateMode::StyleOnly)
    }
}

impl std::str::FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<GateMode> {
        GateMode::all()
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                Error::invalid_argument(format!(
                    "unknown gate mode '{s}' (expected style_only|style_first|task_first)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    pub kappa: f64,
    pub beta: f64,
    pub polyak: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub steps: u64,
    pub steps_chi: u64,
    /// Cap on exponential extraction weights.
    pub awr_clip: f64,
    /// Decay of the advantage-scale moving average.
    pub adv_norm_decay: f64,
    pub log_every: u64,
}

impl Default for HyperParams {
    /// Full-size configuration.
    fn default() -> HyperParams {
        HyperParams {
            gamma: 0.99,
            kappa: 0.7,
            beta: 3.0,
            polyak: 0.005,
            learning_rate: 3e-3,
            batch_size: 256,
            hidden: vec![256, 256],
            embed_dim: 16,
            steps: 1_000_000,
            steps_chi: 100_000,
            awr_clip: 100.0,
            adv_norm_decay: 0.995,
            log_every: 1000,
        }
    }
}

impl HyperParams {
    /// Scaled-down configuration for single-core machines; same shape of
    /// training, smaller nets and fewer steps.
    pub fn desk_preset() -> HyperParams {
        HyperParams {
            hidden: vec![48, 48],
            batch_size: 128,
            steps: 200_000,
            steps_chi: 30_000,
            ..HyperParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::nn::check_kappa(self.kappa)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid_argument(format!(
                "discount must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::invalid_argument(format!(
                "target smoothing rate must lie in [0, 1], got {}",
                self.polyak
            )));
        }
        if !(0.0..1.0).contains(&self.adv_norm_decay) {
            return Err(Error::invalid_argument(format!(
                "advantage-norm decay must lie in [0, 1), got {}",
                self.adv_norm_decay
            )));
        }
        for (what, v) in [
            ("learning rate", self.learning_rate),
            ("beta", self.beta),
            ("weight clip", self.awr_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid_argument(format!("{what} must be finite and >= 0, got {v}")));
            }
        }
        // `steps` may be zero: that trains nothing and yields the
        // random-init networks, which chance-level baselines rely on.
        if self.batch_size == 0 {
            return Err(Error::invalid_argument("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algo: Algo,
    /// Distribution of the conditioning label attached to each sampled
    /// transition.
    pub sampling: StyleSampling,
    pub chi: ChiStrategy,
    /// Extraction heads trained jointly (one policy each).
    pub gates: Vec<GateMode>,
    /// Advantage temperatures, one policy head per entry.
    pub sorl_betas: Vec<f64>,
    pub hp: HyperParams,
    pub seed: u64,
}

impl TrainConfig {
    /// Per-algorithm defaults.
    pub fn new(algo: Algo) -> TrainConfig {
        let sampling = match algo {
            Algo::Scbc => StyleSampling::Future,
            // Value-stitching methods learn from mismatched (state, label)
            // pairs, so they draw labels from the dataset marginal.
            Algo::Sciql | Algo::Sorl => StyleSampling::Random,
            _ => StyleSampling::Current,
        };
        let chi = match algo {
            Algo::Bcpmi => ChiStrategy::Mine,
            Algo::Sorl => ChiStrategy::Softmax,
            _ => ChiStrategy::Indicator,
        };
        TrainConfig {
            algo,
            sampling,
            chi,
            gates: vec![GateMode::StyleOnly],
            sorl_betas: vec![3.0],
            hp: HyperParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.sampling.validate()?;
        match self.algo {
            Algo::Cbc | Algo::Bcpmi => {
                if self.sampling != StyleSampling::Current {
                    return Err(Error::invalid_argument(format!(
                        "{} is defined with current-label conditioning",
                        self.algo.name()
                    )));
                }
            }
            Algo::Scbc => {
                if self.sampling != StyleSampling::Future {
                    return Err(Error::invalid_argument(
                        "scbc is defined with future-label conditioning",
                    ));
                }
            }
            _ => {}
        }
        if self.algo == Algo::Bcpmi && self.chi != ChiStrategy::Mine {
            return Err(Error::invalid_argument(
                "bcpmi weights require the statistics-network strategy",
            ));
        }
        if self.algo == Algo::Sciql && self.gates.is_empty() {
            return Err(Error::invalid_argument("sciql needs at least one gate mode"));
        }
        if self.algo == Algo::Sorl {
            if self.sorl_betas.is_empty() {
                return Err(Error::invalid_argument("sorl needs at least one beta"));
            }
            for &b in &self.sorl_betas {
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::invalid_argument(format!(
                        "sorl beta must be finite and >= 0, got {b}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn uses_task_values(&self) -> bool {
        match self.algo {
            Algo::Sorl => true,
            Algo::Sciql => self.gates.iter().any(|g| g.uses_task_values()),
            _ => false,
        }
    }

    fn uses_style_values(&self) -> bool {
        self.algo == Algo::Sciql
    }

    fn uses_chi(&self) -> bool {
        matches!(self.algo, Algo::Bcpmi | Algo::Sorl | Algo::Sciql)
    }

    fn trains_chi(&self) -> bool {
        self.uses_chi() && self.chi.needs_training()
    }
}

/// Dataset-derived facts a checkpoint needs to be evaluated later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainContext {
    pub criterion: CriterionId,
    pub num_labels: usize,
    pub env: EnvConfig,
    pub return_lo: f64,
    pub return_hi: f64,
    /// Task rewards were multiplied by this during value learning.
    pub reward_scale: f64,
    /// Empirical label marginal of the training labels.
    pub chi_marginal: Vec<f64>,
}

/// Periodic training metrics. Fields are present when the corresponding
/// component exists for the configured algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: String,
    pub step: u64,
    pub chi_objective: Option<f64>,
    pub v_task_loss: Option<f64>,
    pub q_task_loss: Option<f64>,
    pub v_style_loss: Option<f64>,
    pub q_style_loss: Option<f64>,
    /// Weighted negative log-likelihood per policy head.
    pub policy_loss: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub phase: String,
    pub step: u64,
    pub message: String,
}

/// Everything produced by a training run: the final (or last stable)
/// networks plus the context to evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub config: TrainConfig,
    pub context: TrainContext,
    /// Keyed by role: `policy:<head>`, `v_task`, `q_task`,
    /// `q_task_target`, `v_style`, `q_style`, `q_style_target`, `chi`.
    pub networks: BTreeMap<String, ParameterSet>,
}

impl AgentCheckpoint {
    pub fn network(&self, name: &str) -> Result<&ParameterSet> {
        self.networks
            .get(name)
            .ok_or_else(|| Error::invalid_argument(format!("checkpoint has no network '{name}'")))
    }

    /// Policy head names, in deterministic order.
    pub fn policy_heads(&self) -> Vec<String> {
        self.networks
            .keys()
            .filter(|k| k.starts_with("policy:"))
            .map(|k| k["policy:".len()..].to_string())
            .collect()
    }

    /// Architecture of the policy heads (identical across heads).
    pub fn policy_spec(&self) -> MlpSpec {
        policy_spec(self.config.algo, &self.config.hp, self.context.num_labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut steps = BTreeMap::new();
        let mut c = Container::default();
        for (net, params) in &self.networks {
            steps.insert(net.clone(), params.step());
            for arr in params.to_container().arrays {
                c.push(NamedArray::f32(
                    format!("{net}/{}", arr.name),
                    &arr.shape,
                    arr.as_f32()?.to_vec(),
                ));
            }
        }
        c.meta = serde_json::json!({
            "config": self.config,
            "context": self.context,
            "steps": steps,
        });
        io::write_file(path, MAGIC_CHECKPOINT, &c)
    }

    pub fn load(path: &Path) -> Result<AgentCheckpoint> {
        let c = io::read_file(path, MAGIC_CHECKPOINT)?;
        #[derive(Deserialize)]
        struct Meta {
            config: TrainConfig,
            context: TrainContext,
            steps: BTreeMap<String, u64>,
        }
        let meta: Meta = c.meta_as()?;
        let mut per_net: BTreeMap<String, Container> = BTreeMap::new();
        for arr in &c.arrays {
            let (net, rest) = arr.name.split_once('/').ok_or_else(|| {
                Error::format(format!("array '{}'", arr.name), "expected '<network>/<param>'")
            })?;
            let step = *meta.steps.get(net).ok_or_else(|| {
                Error::format(format!("network '{net}'"), "no step count recorded")
            })?;
            per_net
                .entry(net.to_string())
                .or_insert_with(|| Container::new(serde_json::json!({ "step": step })))
                .push(NamedArray::f32(rest, &arr.shape, arr.as_f32()?.to_vec()));
        }
        let mut networks = BTreeMap::new();
        for (net, container) in &per_net {
            networks.insert(net.clone(), ParameterSet::from_container(container)?);
        }
        if networks.is_empty() {
            return Err(Error::format("checkpoint", "contains no networks"));
        }
        Ok(AgentCheckpoint { config: meta.config, context: meta.context, networks })
    }
}

pub struct TrainOutput {
    pub checkpoint: AgentCheckpoint,
    pub log: Vec<LogRow>,
    /// Set when training was cut short; the checkpoint then holds the
    /// last stable snapshot instead of the final parameters.
    pub diverged: Option<DivergenceReport>,
}

fn policy_spec(algo: Algo, hp: &HyperParams, num_labels: usize) -> MlpSpec {
    let spec = MlpSpec::new(OBS_DIM, &hp.hidden, ACTION_DIM);
    if algo.conditioned() {
        spec.with_embedding(num_labels, hp.embed_dim)
    } else {
        spec
    }
}

fn value_specs(hp: &HyperParams, labels: Option<usize>) -> (MlpSpec, MlpSpec) {
    let mut v = MlpSpec::new(OBS_DIM, &hp.hidden, 1).with_layer_norm();
    let mut q = MlpSpec::new(OBS_DIM + ACTION_DIM, &hp.hidden, 1);
    if let Some(l) = labels {
        v = v.with_embedding(l, hp.embed_dim);
        q = q.with_embedding(l, hp.embed_dim);
    }
    (v, q)
}

struct Head {
    name: String,
    gate: Option<GateMode>,
    beta: Option<f64>,
    params: ParameterSet,
}

/// Train one agent on an annotated dataset.
pub fn train_agent(
    labeled: &LabeledDataset,
    config: &TrainConfig,
    mode: ExecMode,
) -> Result<TrainOutput> {
    config.validate()?;
    let hp = &config.hp;
    let num_labels = labeled.num_labels();
    let header = &labeled.dataset.header;

    let max_abs_reward = labeled
        .dataset
        .episodes
        .iter()
        .flat_map(|e| e.rewards.iter())
        .fold(0.0f64, |m, &r| m.max((r as f64).abs()));
    let reward_scale = if max_abs_reward > 0.0 { 1.0 / max_abs_reward } else { 1.0 };

    let total: u64 = labeled.histogram().iter().sum();
    let chi_marginal: Vec<f64> =
        labeled.histogram().iter().map(|&c| c as f64 / total as f64).collect();
    let context = TrainContext {
        criterion: labeled.criterion,
        num_labels,
        env: header.env,
        return_lo: header.return_lo,
        return_hi: header.return_hi,
        reward_scale,
        chi_marginal,
    };

    let pol_spec = policy_spec(config.algo, hp, num_labels);
    let mut heads: Vec<Head> = match config.algo {
        Algo::Sciql => config
            .gates
            .iter()
            .map(|&g| (format!("policy:{}", g.name()), Some(g), None))
            .collect::<Vec<_>>(),
        Algo::Sorl => config
            .sorl_betas
            .iter()
            .map(|&b| (format!("policy:beta_{b}"), None, Some(b)))
            .collect(),
        _ => vec![("policy:main".to_string(), None, None)],
    }
    .into_iter()
    .map(|(name, gate, beta)| {
        let params = policy::init_policy(&pol_spec, derive_seed(config.seed, &format!("init:{name}")));
        Head { name, gate, beta, params }
    })
    .collect();
    if heads.iter().map(|h| &h.name).collect::<std::collections::BTreeSet<_>>().len()
        != heads.len()
    {
        return Err(Error::invalid_argument("duplicate policy head names"));
    }

    let mut task_values = config.uses_task_values().then(|| {
        let (v, q) = value_specs(hp, None);
        ValueLearner::new(v, q, derive_seed(config.seed, "init:task"))
    });
    let mut style_values = config.uses_style_values().then(|| {
        let (v, q) = value_specs(hp, Some(num_labels));
        ValueLearner::new(v, q, derive_seed(config.seed, "init:style"))
    });
    let mut chi_model = if config.uses_chi() {
        Some(ChiModel::new(
            config.chi,
            num_labels,
            OBS_DIM + ACTION_DIM,
            &hp.hidden,
            hp.embed_dim,
            labeled.histogram(),
            derive_seed(config.seed, "init:chi"),
        )?)
    } else {
        None
    };

    let mut rng_batches = rng_for(config.seed, "batches");
    let mut rng_chi = rng_for(config.seed, "chi-batches");
    let mut rng_marginal = rng_for(config.seed, "chi-marginal");
    let adam = AdamConfig::with_learning_rate(hp.learning_rate);
    let mut ema_task = EmaNorm::new(hp.adv_norm_decay);
    let mut ema_style = EmaNorm::new(hp.adv_norm_decay);
    let mut log: Vec<LogRow> = Vec::new();

    let collect_networks = |heads: &[Head],
                            task: &Option<ValueLearner>,
                            style: &Option<ValueLearner>,
                            chi: &Option<ChiModel>| {
        let mut nets = BTreeMap::new();
        for h in heads {
            nets.insert(h.name.clone(), h.params.clone());
        }
        if let Some(t) = task {
            nets.insert("v_task".to_string(), t.v.clone());
            nets.insert("q_task".to_string(), t.q.clone());
            nets.insert("q_task_target".to_string(), t.q_target.clone());
        }
        if let Some(s) = style {
            nets.insert("v_style".to_string(), s.v.clone());
            nets.insert("q_style".to_string(), s.q.clone());
            nets.insert("q_style_target".to_string(), s.q_target.clone());
        }
        if let Some(c) = chi {
            if let Some(p) = &c.params {
                nets.insert("chi".to_string(), p.clone());
            }
        }
        nets
    };
    let mut snapshot = collect_networks(&heads, &task_values, &style_values, &chi_model);

    let finish = |networks: BTreeMap<String, ParameterSet>,
                  log: Vec<LogRow>,
                  diverged: Option<DivergenceReport>| TrainOutput {
        checkpoint: AgentCheckpoint { config: config.clone(), context: context.clone(), networks },
        log,
        diverged,
    };

    // Compatibility model pretraining.
    if config.trains_chi() {
        for step in 0..hp.steps_chi {
            let b = sample_batch(labeled, &StyleSampling::Current, hp.batch_size, &mut rng_chi);
            let marginal_z: Vec<u8> = (0..b.len())
                .map(|_| labeled.sample_style(0, 0, &StyleSampling::Random, &mut rng_marginal))
                .collect();
            let chi = chi_model.as_mut().expect("trained strategy has a model");
            let objective =
                match chi.train_step(&b.obs_act, &b.z_center, &marginal_z, &adam, mode) {
                    Ok(j) => j,
                    Err(Error::Diverged { step: _, message }) => {
                        return Ok(finish(
                            snapshot,
                            log,
                            Some(DivergenceReport { phase: "chi".into(), step, message }),
                        ))
                    }
                    Err(e) => return Err(e),
                };
            if !objective.is_finite() || objective.abs() > LOSS_DIVERGENCE_LIMIT {
                return Ok(finish(
                    snapshot,
                    log,
                    Some(DivergenceReport {
                        phase: "chi".into(),
                        step,
                        message: format!("bound estimate became {objective}"),
                    }),
                ));
            }
            if step % SNAPSHOT_EVERY == 0 {
                snapshot = collect_networks(&heads, &task_values, &style_values, &chi_model);
            }
            if step % hp.log_every == 0 || step + 1 == hp.steps_chi {
                log.push(LogRow {
                    phase: "chi".into(),
                    step,
                    chi_objective: Some(objective),
                    v_task_loss: None,
                    q_task_loss: None,
                    v_style_loss: None,
                    q_style_loss: None,
                    policy_loss: BTreeMap::new(),
                });
            }
        }
    }

    // Main loop: value updates, then policy extraction, all on the same
    // batch.
    for step in 0..hp.steps {
        let b = sample_batch(labeled, &config.sampling, hp.batch_size, &mut rng_batches);
        let mut row = LogRow {
            phase: "main".into(),
            step,
            chi_objective: None,
            v_task_loss: None,
            q_task_loss: None,
            v_style_loss: None,
            q_style_loss: None,
            policy_loss: BTreeMap::new(),
        };
        let mut failure: Option<String> = None;

        let mut adv_task: Vec<f64> = Vec::new();
        let mut adv_style: Vec<f64> = Vec::new();
        let step_result = (|| -> Result<()> {
            if let Some(task) = task_values.as_mut() {
                let rewards: Vec<f64> =
                    b.rewards.iter().map(|&r| r as f64 * reward_scale).collect();
                let stats = task.step(
                    &b.obs,
                    &b.obs_act,
                    &b.next_obs,
                    None,
                    &rewards,
                    &b.done,
                    hp.gamma,
                    hp.kappa,
                    &adam,
                    hp.polyak,
                    mode,
                )?;
                row.v_task_loss = Some(stats.v_loss);
                row.q_task_loss = Some(stats.q_loss);
                adv_task = ema_task.normalize(&stats.advantages);
                if !(stats.v_loss.is_finite() && stats.q_loss.is_finite())
                    || stats.v_loss.abs() > LOSS_DIVERGENCE_LIMIT
                    || stats.q_loss.abs() > LOSS_DIVERGENCE_LIMIT
                {
                    failure = Some(format!(
                        "task value losses ({}, {})",
                        stats.v_loss, stats.q_loss
                    ));
                    return Ok(());
                }
            }
            if let Some(style) = style_values.as_mut() {
                let chi = chi_model.as_ref().expect("style values need a compatibility model");
                let rewards = chi.values(&b.obs_act, &b.z, &b.z_center, mode)?;
                let stats = style.step(
                    &b.obs,
                    &b.obs_act,
                    &b.next_obs,
                    Some(&b.z),
                    &rewards,
                    &b.done,
                    hp.gamma,
                    hp.kappa,
                    &adam,
                    hp.polyak,
                    mode,
                )?;
                row.v_style_loss = Some(stats.v_loss);
                row.q_style_loss = Some(stats.q_loss);
                adv_style = ema_style.normalize(&stats.advantages);
                if !(stats.v_loss.is_finite() && stats.q_loss.is_finite())
                    || stats.v_loss.abs() > LOSS_DIVERGENCE_LIMIT
                    || stats.q_loss.abs() > LOSS_DIVERGENCE_LIMIT
                {
                    failure = Some(format!(
                        "style value losses ({}, {})",
                        stats.v_loss, stats.q_loss
                    ));
                    return Ok(());
                }
            }

            let lr_scale = cosine_factor(step, hp.steps);
            // Per-label compatibility, shared by every temperature head.
            let chi_all = if config.algo == Algo::Sorl {
                let chi = chi_model.as_ref().expect("sorl needs a compatibility model");
                Some(chi.values_all(&b.obs_act, &b.z_center, num_labels, mode)?)
            } else {
                None
            };
            for head in heads.iter_mut() {
                let (loss, grads) = match config.algo {
                    Algo::Bc => {
                        let w = vec![1.0; b.len()];
                        policy::policy_loss_grads(
                            &pol_spec, &head.params, &b.obs, None, &b.actions, &w, mode,
                        )?
                    }
                    Algo::Cbc | Algo::Scbc => {
                        let w = vec![1.0; b.len()];
                        policy::policy_loss_grads(
                            &pol_spec, &head.params, &b.obs, Some(&b.z), &b.actions, &w, mode,
                        )?
                    }
                    Algo::Bcpmi => {
                        let chi = chi_model.as_ref().expect("bcpmi needs a compatibility model");
                        let vals = chi.values(&b.obs_act, &b.z, &b.z_center, mode)?;
                        // Density ratio = chi / marginal, capped like any
                        // other extraction weight.
                        let w: Vec<f64> = vals
                            .iter()
                            .zip(&b.z)
                            .map(|(&v, &z)| {
                                let m = context.chi_marginal[z as usize];
                                if m > 0.0 {
                                    (v / m).min(hp.awr_clip)
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        policy::policy_loss_grads(
                            &pol_spec, &head.params, &b.obs, Some(&b.z), &b.actions, &w, mode,
                        )?
                    }
                    Algo::Sciql => {
                        let gate_mode = head.gate.expect("sciql heads carry a gate mode");
                        let w: Vec<f64> = (0..b.len())
                            .map(|i| {
                                let score = match gate_mode {
                                    GateMode::StyleOnly => adv_style[i],
                                    GateMode::StyleFirst => gate(adv_style[i], adv_task[i]),
                                    GateMode::TaskFirst => gate(adv_task[i], adv_style[i]),
                                };
                                awr_weight(score, hp.beta, hp.awr_clip)
                            })
                            .collect();
                        policy::policy_loss_grads(
                            &pol_spec, &head.params, &b.obs, Some(&b.z), &b.actions, &w, mode,
                        )?
                    }
                    Algo::Sorl => {
                        let beta = head.beta.expect("sorl heads carry a beta");
                        let chi_all = chi_all.as_ref().expect("per-label compatibility computed");
                        let inv_l = 1.0 / num_labels as f64;
                        let mut total_loss = 0.0;
                        let mut merged: Option<crate::nn::GradientSet> = None;
                        for z in 0..num_labels {
                            let labels = vec![z as u8; b.len()];
                            let w: Vec<f64> = (0..b.len())
                                .map(|i| {
                                    inv_l
                                        * chi_all.row(i)[z] as f64
                                        * awr_weight(adv_task[i], beta, hp.awr_clip)
                                })
                                .collect();
                            let (l, g) = policy::policy_loss_grads(
                                &pol_spec,
                                &head.params,
                                &b.obs,
                                Some(&labels),
                                &b.actions,
                                &w,
                                mode,
                            )?;
                            total_loss += l;
                            match merged.as_mut() {
                                Some(m) => m.merge(g),
                                None => merged = Some(g),
                            }
                        }
                        (total_loss, merged.expect("at least one label"))
                    }
                };
                if !loss.is_finite() || loss.abs() > LOSS_DIVERGENCE_LIMIT {
                    failure = Some(format!("policy loss for {} became {loss}", head.name));
                    return Ok(());
                }
                adam_step(&mut head.params, &grads, &adam, lr_scale)?;
                row.policy_loss.insert(head.name.clone(), loss);
            }
            Ok(())
        })();

        match step_result {
            Err(Error::Diverged { message, .. }) => failure = Some(message),
            Err(e) => return Err(e),
            Ok(()) => {}
        }
        if let Some(message) = failure {
            return Ok(finish(
                snapshot,
                log,
                Some(DivergenceReport { phase: "main".into(), step, message }),
            ));
        }
        if step % SNAPSHOT_EVERY == 0 {
            snapshot = collect_networks(&heads, &task_values, &style_values, &chi_model);
        }
        if step % hp.log_every == 0 || step + 1 == hp.steps {
            log.push(row);
        }
    }

    let networks = collect_networks(&heads, &task_values, &style_values, &chi_model);
    Ok(finish(networks, log, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scripted::{generate_dataset, GenConfig};
    use crate::env::{DEFAULT_HORIZON, EnvConfig};
    use crate::data::GenVariant;
    use crate::labeling::annotate;
    use std::sync::Arc;

    fn tiny_labeled() -> LabeledDataset {
        let env = EnvConfig { horizon: 40, ..EnvConfig::default() };
        let config =
            GenConfig { env, variant: GenVariant::Inplace, n_episodes: 4, seed: 900 };
        let ds = Arc::new(generate_dataset(&config, ExecMode::Sequential).unwrap());
        annotate(&ds, CriterionId::SpeedCategory, ExecMode::Sequential)
    }

    fn tiny_hp(steps: u64, steps_chi: u64) -> HyperParams {
        HyperParams {
            hidden: vec![16],
            batch_size: 32,
            steps,
            steps_chi,
            log_every: 10,
            ..HyperParams::default()
        }
    }

    #[test]
    fn defaults_are_full_scale() {
        let hp = HyperParams::default();
        assert_eq!(hp.hidden, vec![256, 256]);
        assert_eq!(hp.batch_size, 256);
        assert_eq!(hp.steps, 1_000_000);
        assert_eq!(hp.steps_chi, 100_000);
        assert!((hp.gamma - 0.99).abs() < 1e-12);
        assert!((hp.kappa - 0.7).abs() < 1e-12);
        assert!((hp.beta - 3.0).abs() < 1e-12);
        assert!((hp.polyak - 0.005).abs() < 1e-12);
        assert!((hp.learning_rate - 3e-3).abs() < 1e-12);
        assert_eq!(hp.embed_dim, 16);
        assert_eq!(DEFAULT_HORIZON, 1000);
    }

    #[test]
    fn cloning_loss_decreases() {
        let labeled = tiny_labeled();
        let mut config = TrainConfig::new(Algo::Bc);
        config.hp = tiny_hp(400, 0);
        config.seed = 1;
        let out = train_agent(&labeled, &config, ExecMode::Sequential).unwrap();
        assert!(out.diverged.is_none());
        let first = out.log.first().unwrap().policy_loss["policy:main"];
        let last = out.log.last().unwrap().policy_loss["policy:main"];
        assert!(last < first, "loss went {first} -> {last}");
        assert_eq!(out.checkpoint.policy_heads(), vec!["main"]);
    }

    #[test]
    fn gated_heads_round_trip_through_a_file() {
        let labeled = tiny_labeled();
        let mut config = TrainConfig::new(Algo::Sciql);
        config.gates = GateMode::all().to_vec();
        config.hp = tiny_hp(40, 0);
        config.seed = 2;
        let out = train_agent(&labeled, &config, ExecMode::Sequential).unwrap();
        assert!(out.diverged.is_none());
        let ck = &out.checkpoint;
        for net in
            ["policy:style_only", "policy:style_first", "policy:task_first", "v_task", "q_task",
             "q_task_target", "v_style", "q_style", "q_style_target"]
        {
            assert!(ck.networks.contains_key(net), "missing {net}");
        }
        let max_abs = labeled
            .dataset
            .episodes
            .iter()
            .flat_map(|e| e.rewards.iter())
            .fold(0.0f64, |m, &r| m.max((r as f64).abs()));
        assert!(
            (ck.context.reward_scale * max_abs - 1.0).abs() < 1e-9,
            "reward scale {} should invert the largest dataset reward {max_abs}",
            ck.context.reward_scale
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        ck.save(&path).unwrap();
        let back = AgentCheckpoint::load(&path).unwrap();
        assert_eq!(*ck, back);
    }

    #[test]
    fn temperature_heads_differ() {
        let labeled = tiny_labeled();
        let mut config = TrainConfig::new(Algo::Sorl);
        config.sorl_betas = vec![0.0, 3.0];
        config.hp = tiny_hp(60, 30);
        config.seed = 3;
        let out = train_agent(&labeled, &config, ExecMode::Sequential).unwrap();
        assert!(out.diverged.is_none());
        let a = out.checkpoint.network("policy:beta_0").unwrap();
        let b = out.checkpoint.network("policy:beta_3").unwrap();
        assert!(out.checkpoint.networks.contains_key("chi"));
        // Same init, different weighting: the heads must have separated.
        let (wa, wb) = (a.get("out.w").unwrap().data(), b.get("out.w").unwrap().data());
        assert!(wa.iter().zip(wb).any(|(x, y)| (x - y).abs() > 1e-7));
    }

    #[test]
    fn divergence_returns_last_stable_networks() {
        let labeled = tiny_labeled();
        let mut config = TrainConfig::new(Algo::Sciql);
        config.hp = tiny_hp(500, 0);
        config.hp.learning_rate = 1e9;
        config.seed = 4;
        let out = train_agent(&labeled, &config, ExecMode::Sequential).unwrap();
        let report = out.diverged.expect("absurd learning rate must diverge");
        assert_eq!(report.phase, "main");
        for (name, params) in &out.checkpoint.networks {
            assert!(params.all_finite(), "snapshot network {name} has non-finite values");
        }
    }

    #[test]
    fn mismatched_sampling_is_rejected() {
        let mut config = TrainConfig::new(Algo::Cbc);
        config.sampling = StyleSampling::Future;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::new(Algo::Scbc);
        assert!(config.validate().is_ok());
        config.sampling = StyleSampling::Current;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::new(Algo::Bcpmi);
        config.chi = ChiStrategy::Softmax;
        assert!(config.validate().is_err());
    }

    #[test]
    fn algo_and_gate_names_round_trip() {
        for a in Algo::all() {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        for g in GateMode::all() {
            assert_eq!(g.name().parse::<GateMode>().unwrap(), g);
        }
        assert!("frobnicate".parse::<Algo>().is_err());
    }
}
