//! Rollout evaluation: style alignment, normalized task return,
//! label/criterion aggregation, Pareto hypervolume, and the label-noise
//! robustness sweep.
//!
//! Policies act with their deterministic mean action; the only randomness
//! in an evaluation is the seeded episode reset, so a `(checkpoint, seed)`
//! pair always reproduces the same report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{self, featurize_obs, AgentCheckpoint, TrainConfig};
use crate::data::Trajectory;
use crate::env::{self, EnvConfig};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::labeling::{label_trajectory, zeta_threshold, CriterionId, LabeledDataset};
use crate::nn::{MlpSpec, ParameterSet};
use crate::seeding::{derive_seed_indexed, rng_for};

pub const DEFAULT_EVAL_EPISODES: usize = 10;

/// Metrics of one evaluated episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    /// Fraction of steps whose post-hoc label equals the target.
    pub alignment: f64,
    pub raw_return: f64,
    pub normalized_return: f64,
}

/// All episodes of one `(criterion, target label, seed)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub criterion: CriterionId,
    pub target_label: u8,
    pub seed: u64,
    pub episodes: Vec<EpisodeEval>,
}

impl RolloutReport {
    pub fn mean_alignment(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.alignment))
    }

    pub fn mean_raw_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.raw_return))
    }

    pub fn mean_normalized_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.normalized_return))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in it {
        sum += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values.iter().copied());
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Fraction of labels equal to the target.
pub fn alignment(labels: &[u8], target: u8) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|&&z| z == target).count() as f64 / labels.len() as f64
}

/// Min-max normalization of an episode return against the dataset bounds
/// `(lo, hi)`: dataset minimum episode return and best scripted on-target
/// return. Clamped into `[0, 1]`.
pub fn normalized_return(raw: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    debug_assert!(hi > lo, "degenerate return bounds ({lo}, {hi})");
    ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Play one episode with the mean action of a policy network.
pub fn rollout_episode(
    env_config: &EnvConfig,
    spec: &MlpSpec,
    params: &ParameterSet,
    label: Option<u8>,
    seed: u64,
) -> Result<Trajectory> {
    let mut state = env::reset(env_config, &mut rng_for(seed, "reset"))?;
    let t_len = env_config.horizon as usize;
    let mut triplets = Vec::with_capacity(t_len + 1);
    let mut actions = Vec::with_capacity(t_len);
    let mut rewards = Vec::with_capacity(t_len);
    triplets.push(state.pose());
    loop {
        let obs = featurize_obs(&state.observation());
        let action = agents::policy::mean_action(spec, params, &obs, label)?;
        let (next, reward, truncated) = env::step(env_config, &state, action)?;
        triplets.push(next.pose());
        actions.push(action);
        rewards.push(reward);
        state = next;
        if truncated {
            break;
        }
    }
    Ok(Trajectory { triplets, actions, rewards })
}

/// Evaluate one policy for one target label over `n_episodes` seeded
/// episodes. Episodes run in parallel under the given mode; every episode
/// derives its own RNG stream from `(seed, target, episode index)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    spec: &MlpSpec,
    params: &ParameterSet,
    conditioned: bool,
    env_config: &EnvConfig,
    criterion: CriterionId,
    target_label: u8,
    bounds: (f64, f64),
    n_episodes: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<RolloutReport> {
    let promptable = criterion.promptable();
    if !promptable.contains(&target_label) {
        return Err(Error::invalid_argument(format!(
            "label {target_label} is not promptable for criterion '{}'; promptable labels: {:?}",
            criterion.name(),
            promptable
        )));
    }
    let label_seed = derive_seed_indexed(seed, "target", target_label as u64);
    let episodes = exec::try_map_indexed(mode, n_episodes, |i| {
        let ep_seed = derive_seed_indexed(label_seed, "episode", i as u64);
        let traj = rollout_episode(
            env_config,
            spec,
            params,
            conditioned.then_some(target_label),
            ep_seed,
        )?;
        let labels = label_trajectory(criterion, &traj);
        let raw = traj.episode_return();
        Ok(EpisodeEval {
            alignment: alignment(&labels, target_label),
            raw_return: raw,
            normalized_return: normalized_return(raw, bounds),
        })
    })?;
    Ok(RolloutReport { criterion, target_label, seed, episodes })
}

/// Evaluate one policy head of a checkpoint for one target label.
pub fn evaluate_head(
    checkpoint: &AgentCheckpoint,
    head: &str,
    target_label: u8,
    n_episodes: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<RolloutReport> {
    let spec = checkpoint.policy_spec();
    let params = checkpoint.network(&format!("policy:{head}"))?;
    evaluate_policy(
        &spec,
        params,
        checkpoint.config.algo.conditioned(),
        &checkpoint.context.env,
        checkpoint.context.criterion,
        target_label,
        (checkpoint.context.return_lo, checkpoint.context.return_hi),
        n_episodes,
        seed,
        mode,
    )
}

/// Evaluate one head across every promptable label of the checkpoint's
/// criterion.
pub fn evaluate_head_all_labels(
    checkpoint: &AgentCheckpoint,
    head: &str,
    n_episodes: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<RolloutReport>> {
    checkpoint
        .context
        .criterion
        .promptable()
        .iter()
        .map(|&z| evaluate_head(checkpoint, head, z, n_episodes, seed, mode))
        .collect()
}

/// One `(criterion, label, seed)` cell: episode-averaged metrics, the unit
/// the aggregate tables are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub criterion: CriterionId,
    pub label: u8,
    pub seed: u64,
    pub alignment: f64,
    pub normalized_return: f64,
}

impl EvalCell {
    pub fn from_report(report: &RolloutReport) -> EvalCell {
        EvalCell {
            criterion: report.criterion,
            label: report.target_label,
            seed: report.seed,
            alignment: report.mean_alignment(),
            normalized_return: report.mean_normalized_return(),
        }
    }
}

/// One aggregated table row: a criterion, or the overall summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scope: String,
    pub mean_alignment: f64,
    pub std_alignment: f64,
    pub mean_return: f64,
    pub std_return: f64,
    /// `(label, seed)` samples feeding this row.
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    /// One row per criterion, then an `overall` row.
    pub rows: Vec<AggregateRow>,
    /// Promptable `(criterion, label)` pairs with no data.
    pub gaps: Vec<String>,
}

/// Aggregate evaluation cells: means average over labels then criteria;
/// standard deviations are the seed-wise dispersion of each `(criterion,
/// label)` pair, averaged over pairs. Promptable labels with no cells are
/// reported as gaps, never silently dropped.
pub fn aggregate(cells: &[EvalCell]) -> AggregateTable {
    use std::collections::BTreeMap;
    // (criterion index, label) -> per-seed metric pairs.
    let mut groups: BTreeMap<(usize, u8), Vec<(f64, f64)>> = BTreeMap::new();
    let order: Vec<CriterionId> = CriterionId::all().to_vec();
    for c in cells {
        let ci = order.iter().position(|x| *x == c.criterion).expect("known criterion");
        groups.entry((ci, c.label)).or_default().push((c.alignment, c.normalized_return));
    }

    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    let mut crit_means: Vec<(f64, f64)> = Vec::new();
    let mut all_stds: Vec<(f64, f64)> = Vec::new();
    for (ci, criterion) in order.iter().enumerate() {
        let label_stats: Vec<(&Vec<(f64, f64)>, u8)> = criterion
            .promptable()
            .iter()
            .filter_map(|&z| groups.get(&(ci, z)).map(|g| (g, z)))
            .collect();
        if label_stats.is_empty() {
            continue;
        }
        for &z in criterion.promptable() {
            if !groups.contains_key(&(ci, z)) {
                gaps.push(format!("{}:{z}", criterion.name()));
            }
        }
        let mut cell_means = Vec::new();
        let mut cell_stds = Vec::new();
        let mut n_cells = 0;
        for (g, _) in &label_stats {
            let aligns: Vec<f64> = g.iter().map(|p| p.0).collect();
            let rets: Vec<f64> = g.iter().map(|p| p.1).collect();
            cell_means.push((mean(aligns.iter().copied()), mean(rets.iter().copied())));
            cell_stds.push((std_dev(&aligns), std_dev(&rets)));
            n_cells += g.len();
        }
        let row = AggregateRow {
            scope: criterion.name().to_string(),
            mean_alignment: mean(cell_means.iter().map(|p| p.0)),
            std_alignment: mean(cell_stds.iter().map(|p| p.0)),
            mean_return: mean(cell_means.iter().map(|p| p.1)),
            std_return: mean(cell_stds.iter().map(|p| p.1)),
            n_cells,
        };
        crit_means.push((row.mean_alignment, row.mean_return));
        all_stds.extend(cell_stds);
        rows.push(row);
    }
    if !crit_means.is_empty() {
        rows.push(AggregateRow {
            scope: "overall".to_string(),
            mean_alignment: mean(crit_means.iter().map(|p| p.0)),
            std_alignment: mean(all_stds.iter().map(|p| p.0)),
            mean_return: mean(crit_means.iter().map(|p| p.1)),
            std_return: mean(all_stds.iter().map(|p| p.1)),
            n_cells: cells.len(),
        });
    }
    AggregateTable { rows, gaps }
}

/// A labeled point on the style/task plane, both axes on the 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub variant: String,
    /// Mean alignment x 100.
    pub style: f64,
    /// Mean normalized return x 100.
    pub task: f64,
}

/// Area dominated by a point set relative to the origin: the union of the
/// axis-aligned rectangles spanned by each point. Negative coordinates are
/// treated as zero.
pub fn hypervolume(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> =
        points.iter().map(|&(x, y)| (x.max(0.0), y.max(0.0))).collect();
    pts.sort_by(|a, b| b.partial_cmp(a).expect("finite coordinates"));
    let mut best_y = 0.0;
    let mut hv = 0.0;
    for (x, y) in pts {
        if y > best_y {
            hv += x * (y - best_y);
            best_y = y;
        }
    }
    hv
}

pub fn hypervolume_of(points: &[ParetoPoint]) -> f64 {
    hypervolume(&points.iter().map(|p| (p.style, p.task)).collect::<Vec<_>>())
}

/// Alignment curve under increasing label pollution: for each pollution
/// level, retrain from scratch on polluted labels and evaluate every
/// promptable label across the given seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurvePoint {
    pub zeta: f64,
    pub cells: Vec<EvalCell>,
}

impl NoiseCurvePoint {
    pub fn mean_alignment(&self) -> f64 {
        mean(self.cells.iter().map(|c| c.alignment))
    }
}

pub fn noise_sweep(
    clean: &LabeledDataset,
    template: &TrainConfig,
    zetas: &[f64],
    seeds: &[u64],
    n_episodes: usize,
    mode: ExecMode,
) -> Result<Vec<NoiseCurvePoint>> {
    let mut curve = Vec::with_capacity(zetas.len());
    for (zi, &zeta) in zetas.iter().enumerate() {
        let labeled = if zeta > 0.0 {
            clean.pollute(zeta, derive_seed_indexed(template.seed, "pollute", zi as u64), mode)?
        } else {
            clean.clone()
        };
        let mut cells = Vec::new();
        for &seed in seeds {
            let config = TrainConfig { seed, ..template.clone() };
            let out = agents::train_agent(&labeled, &config, mode)?;
            if let Some(report) = &out.diverged {
                return Err(Error::Diverged {
                    step: report.step,
                    message: format!(
                        "noise sweep (zeta {zeta}, seed {seed}): {}",
                        report.message
                    ),
                });
            }
            let head = out
                .checkpoint
                .policy_heads()
                .into_iter()
                .next()
                .ok_or_else(|| Error::invalid_state("checkpoint trained without policy heads"))?;
            for report in
                evaluate_head_all_labels(&out.checkpoint, &head, n_episodes, seed, mode)?
            {
                cells.push(EvalCell::from_report(&report));
            }
        }
        curve.push(NoiseCurvePoint { zeta, cells });
    }
    Ok(curve)
}

fn bounds_comment(bounds: (f64, f64)) -> String {
    format!(
        "# normalized_return = clamp((raw - lo) / (hi - lo), 0, 1); lo = dataset minimum \
         episode return = {:.6}; hi = best scripted on-target return = {:.6}\n",
        bounds.0, bounds.1
    )
}

/// Per-episode CSV rows for a set of reports.
pub fn rollout_csv(reports: &[RolloutReport], bounds: (f64, f64)) -> String {
    let mut out = bounds_comment(bounds);
    out.push_str("criterion,target_label,seed,episode,alignment,raw_return,normalized_return\n");
    for r in reports {
        for (i, e) in r.episodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.criterion.name(),
                r.target_label,
                r.seed,
                i,
                e.alignment,
                e.raw_return,
                e.normalized_return
            );
        }
    }
    out
}

/// Aggregate-table CSV; gaps become comment lines so they cannot be
/// mistaken for data.
pub fn aggregate_csv(table: &AggregateTable) -> String {
    let mut out = String::new();
    out.push_str("scope,mean_alignment,std_alignment,mean_return,std_return,cells\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            row.scope,
            row.mean_alignment,
            row.std_alignment,
            row.mean_return,
            row.std_return,
            row.n_cells
        );
    }
    for gap in &table.gaps {
        let _ = writeln!(out, "# gap: no data for {gap}");
    }
    out
}

/// Pareto summary CSV: one row per point plus one hypervolume row per
/// group.
pub fn pareto_csv(groups: &[(String, Vec<ParetoPoint>)]) -> String {
    let mut out = String::from("group,variant,style,task,hypervolume\n");
    for (name, points) in groups {
        for p in points {
            let _ = writeln!(out, "{name},{},{:.6},{:.6},", p.variant, p.style, p.task);
        }
        let _ = writeln!(out, "{name},__hypervolume__,,,{:.6}", hypervolume_of(points));
    }
    out
}

/// Noise-robustness curve CSV with the information-theoretic pollution
/// threshold recorded alongside every row.
pub fn noise_csv(curve: &[NoiseCurvePoint], num_labels: usize) -> String {
    let zeta_bar = zeta_threshold(num_labels);
    let mut out = String::from("zeta,zeta_bar,label,seed,alignment,normalized_return\n");
    for point in curve {
        for c in &point.cells {
            let _ = writeln!(
                out,
                "{:.6},{:.6},{},{},{:.6},{:.6}",
                point.zeta, zeta_bar, c.label, c.seed, c.alignment, c.normalized_return
            );
        }
    }
    out
}

/// Minimal SVG scatter of Pareto groups on the 0-100 plane.
pub fn pareto_svg(groups: &[(String, Vec<ParetoPoint>)]) -> String {
    const SIZE: f64 = 440.0;
    const MARGIN: f64 = 50.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let scale = (SIZE - 2.0 * MARGIN) / 100.0;
    let px = |v: f64| MARGIN + v.clamp(0.0, 100.0) * scale;
    let py = |v: f64| SIZE - MARGIN - v.clamp(0.0, 100.0) * scale;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\" font-family=\"monospace\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        s,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"#444\"/>",
        m = MARGIN,
        w = SIZE - 2.0 * MARGIN
    );
    for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{tick}</text>",
            px(tick),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{tick}</text>",
            MARGIN - 6.0,
            py(tick) + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">style alignment x100</text>",
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">\
         normalized return x100</text>",
        SIZE / 2.0,
        SIZE / 2.0
    );
    for (gi, (name, points)) in groups.iter().enumerate() {
        let color = colors[gi % colors.len()];
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name} (hv {:.0})</text>",
            MARGIN + 4.0,
            MARGIN + 14.0 + 14.0 * gi as f64,
            hypervolume_of(points)
        );
        for p in points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{color}\"/>",
                px(p.style),
                py(p.task)
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
                px(p.style) + 6.0,
                py(p.task) - 6.0,
                p.variant
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{policy::init_policy, Algo};
    use crate::env::scripted::{rollout as scripted_rollout, Orientation, ScriptedPlan};
    use proptest::prelude::*;

    #[test]
    fn alignment_counts_only_the_target() {
        assert_eq!(alignment(&[2, 2, 2, 2], 2), 1.0);
        assert_eq!(alignment(&[2, 0, 2, 1], 2), 0.5);
        // Relabeling non-target entries changes nothing.
        assert_eq!(alignment(&[2, 7, 2, 5], 2), 0.5);
        assert_eq!(alignment(&[0, 1, 0, 1], 2), 0.0);
    }

    #[test]
    fn normalized_return_endpoints() {
        assert_eq!(normalized_return(-100.0, (-100.0, -20.0)), 0.0);
        assert_eq!(normalized_return(-20.0, (-100.0, -20.0)), 1.0);
        assert_eq!(normalized_return(-60.0, (-100.0, -20.0)), 0.5);
        // Out-of-range values clamp.
        assert_eq!(normalized_return(-200.0, (-100.0, -20.0)), 0.0);
        assert_eq!(normalized_return(5.0, (-100.0, -20.0)), 1.0);
    }

    #[test]
    fn counterclockwise_circler_aligns_with_left_turns() {
        let env_config = EnvConfig { horizon: 300, ..EnvConfig::default() };
        let plan = ScriptedPlan {
            circle_center: [5.0, -3.0],
            circle_radius: 6.0,
            orientation: Orientation::CounterClockwise,
            speed: 1.5,
            turn_noise: 0.0,
            approach_first: false,
        };
        let traj = scripted_rollout(&env_config, &plan, 77).unwrap();
        let labels = label_trajectory(CriterionId::TurnDirection, &traj);
        assert!(
            alignment(&labels, 1) >= 0.9,
            "ccw circler alignment {}",
            alignment(&labels, 1)
        );
    }

    #[test]
    fn evaluation_is_deterministic_and_mode_independent() {
        let env_config = EnvConfig { horizon: 50, ..EnvConfig::default() };
        let spec = MlpSpec::new(12, &[16], 2).with_embedding(3, 4);
        let params = init_policy(&spec, 99);
        let run = |mode| {
            evaluate_policy(
                &spec,
                &params,
                true,
                &env_config,
                CriterionId::SpeedCategory,
                1,
                (-5000.0, -100.0),
                3,
                5,
                mode,
            )
            .unwrap()
        };
        let a = run(ExecMode::Sequential);
        let b = run(ExecMode::Sequential);
        let c = run(ExecMode::Parallel);
        assert_eq!(a, b);
        assert_eq!(a, c);
        for e in &a.episodes {
            assert!((0.0..=1.0).contains(&e.alignment));
            assert!((0.0..=1.0).contains(&e.normalized_return));
        }
    }

    #[test]
    fn non_promptable_label_is_rejected() {
        let env_config = EnvConfig::default();
        let spec = MlpSpec::new(12, &[8], 2);
        let params = init_policy(&spec, 1);
        let err = evaluate_policy(
            &spec,
            &params,
            false,
            &env_config,
            CriterionId::TurnDirection,
            2,
            (-100.0, -10.0),
            1,
            0,
            ExecMode::Sequential,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("promptable"), "{msg}");
        assert!(msg.contains("[0, 1]"), "should list the promptable set: {msg}");
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        // Two criteria, two labels each, two seeds; numbers chosen so the
        // reference values below can be verified by hand.
        let mk = |criterion, label, seed, a, r| EvalCell {
            criterion,
            label,
            seed,
            alignment: a,
            normalized_return: r,
        };
        let cells = vec![
            mk(CriterionId::TurnDirection, 0, 1, 0.8, 0.4),
            mk(CriterionId::TurnDirection, 0, 2, 0.6, 0.2),
            mk(CriterionId::TurnDirection, 1, 1, 1.0, 0.5),
            mk(CriterionId::TurnDirection, 1, 2, 0.4, 0.3),
            mk(CriterionId::SpeedCategory, 0, 1, 0.5, 0.1),
            mk(CriterionId::SpeedCategory, 0, 2, 0.5, 0.1),
            mk(CriterionId::SpeedCategory, 1, 1, 0.2, 0.6),
            mk(CriterionId::SpeedCategory, 1, 2, 0.4, 0.8),
        ];
        let table = aggregate(&cells);
        // turn: cell means (0.7, 0.7); stds (0.1, 0.3) -> mean 0.7, std 0.2.
        let turn = table.rows.iter().find(|r| r.scope == "turn_direction").unwrap();
        assert!((turn.mean_alignment - 0.7).abs() < 1e-12);
        assert!((turn.std_alignment - 0.2).abs() < 1e-12);
        // speed: cell means (0.5, 0.3); stds (0.0, 0.1) -> mean 0.4, std 0.05.
        let speed = table.rows.iter().find(|r| r.scope == "speed_category").unwrap();
        assert!((speed.mean_alignment - 0.4).abs() < 1e-12);
        assert!((speed.std_alignment - 0.05).abs() < 1e-12);
        // overall alignment: mean of criterion means = 0.55; std: mean of
        // the four cell stds = (0.1 + 0.3 + 0.0 + 0.1) / 4 = 0.125.
        let overall = table.rows.iter().find(|r| r.scope == "overall").unwrap();
        assert!((overall.mean_alignment - 0.55).abs() < 1e-12);
        assert!((overall.std_alignment - 0.125).abs() < 1e-12);
        // speed label 2 was promptable but absent -> reported as a gap.
        assert!(table.gaps.contains(&"speed_category:2".to_string()));
        assert!(!table.gaps.contains(&"turn_direction:0".to_string()));
    }

    #[test]
    fn hypervolume_reference_values() {
        assert_eq!(hypervolume(&[(100.0, 100.0)]), 10000.0);
        assert_eq!(hypervolume(&[(50.0, 50.0)]), 2500.0);
        assert_eq!(hypervolume(&[(80.0, 20.0), (20.0, 80.0)]), 2800.0);
        assert_eq!(hypervolume(&[]), 0.0);
        // Dominated point contributes nothing.
        assert_eq!(hypervolume(&[(80.0, 20.0), (20.0, 80.0), (15.0, 70.0)]), 2800.0);
    }

    proptest! {
        #[test]
        fn hypervolume_is_monotone_in_points(
            xs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..8),
            extra in (0.0f64..100.0, 0.0f64..100.0),
        ) {
            let base = hypervolume(&xs);
            let mut more = xs.clone();
            more.push(extra);
            let bigger = hypervolume(&more);
            prop_assert!(bigger >= base - 1e-9);
            // And the new point's own rectangle is covered.
            prop_assert!(bigger >= extra.0 * extra.1 - 1e-9);
        }

        #[test]
        fn alignment_ignores_non_target_identity(
            labels in proptest::collection::vec(0u8..5, 1..200),
            target in 0u8..5,
        ) {
            let a = alignment(&labels, target);
            prop_assert!((0.0..=1.0).contains(&a));
            // Collapsing every non-target label to one foreign value
            // leaves alignment unchanged: only the indicator matters.
            let relabeled: Vec<u8> =
                labels.iter().map(|&z| if z == target { z } else { 99 }).collect();
            prop_assert_eq!(a, alignment(&relabeled, target));
        }
    }

    #[test]
    fn csv_outputs_are_stable() {
        let report = RolloutReport {
            criterion: CriterionId::SpeedCategory,
            target_label: 1,
            seed: 3,
            episodes: vec![EpisodeEval {
                alignment: 0.5,
                raw_return: -120.0,
                normalized_return: 0.25,
            }],
        };
        let csv = rollout_csv(std::slice::from_ref(&report), (-160.0, 0.0));
        assert!(csv.starts_with("# normalized_return"));
        assert!(csv.contains("speed_category,1,3,0,0.500000,-120.000000,0.250000\n"));
        let again = rollout_csv(std::slice::from_ref(&report), (-160.0, 0.0));
        assert_eq!(csv, again);

        let groups = vec![(
            "demo".to_string(),
            vec![
                ParetoPoint { variant: "a".into(), style: 80.0, task: 20.0 },
                ParetoPoint { variant: "b".into(), style: 20.0, task: 80.0 },
            ],
        )];
        let pcsv = pareto_csv(&groups);
        assert!(pcsv.contains("__hypervolume__,,,2800.000000"));
        let svg = pareto_svg(&groups);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("</svg>"));
        assert!(svg.contains("hv 2800"));
    }

    #[test]
    fn checkpoint_eval_plumbing_works_end_to_end() {
        use crate::data::GenVariant;
        use crate::env::scripted::{generate_dataset, GenConfig};
        use crate::labeling::annotate;
        use std::sync::Arc;
        let env_config = EnvConfig { horizon: 30, ..EnvConfig::default() };
        let config = GenConfig {
            env: env_config,
            variant: GenVariant::Inplace,
            n_episodes: 3,
            seed: 41,
        };
        let ds = Arc::new(generate_dataset(&config, ExecMode::Sequential).unwrap());
        let labeled = annotate(&ds, CriterionId::TurnDirection, ExecMode::Sequential);
        let mut tc = TrainConfig::new(Algo::Cbc);
        tc.hp.hidden = vec![8];
        tc.hp.batch_size = 16;
        tc.hp.steps = 20;
        let out = agents::train_agent(&labeled, &tc, ExecMode::Sequential).unwrap();
        let reports =
            evaluate_head_all_labels(&out.checkpoint, "main", 2, 0, ExecMode::Sequential)
                .unwrap();
        assert_eq!(reports.len(), 2);
        let cells: Vec<EvalCell> = reports.iter().map(EvalCell::from_report).collect();
        let table = aggregate(&cells);
        assert_eq!(table.rows.last().unwrap().scope, "overall");
    }
}
