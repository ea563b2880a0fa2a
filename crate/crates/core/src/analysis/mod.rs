//! Measurements over finished episodes: accuracy@K, conversation length
//! statistics and their correlation with class difficulty, entropy curves
//! and multi-seed stability.

mod report;
mod stats;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::game::{k_for, EpisodeTrace};
use crate::nn::bernoulli_entropy;

pub use report::{
    read_episode_logs, write_ablation_curves, write_episode_logs, write_report, write_stability, write_sweep,
    AblationRow, ReferenceValues, Summary, SweepRow, REFERENCE, SWEEP_COLUMNS,
};
pub use stats::{incomplete_beta, ln_gamma, mean, pearson, sample_variance, student_t_two_sided, Correlation};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("K = {k} is outside 1..={candidates}")]
    KOutOfRange { k: usize, candidates: usize },
    #[error("no difficulty score for class {0}")]
    MissingDifficulty(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("no episodes to analyse")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Serialize(#[from] serde_json::Error),
}

/// Per-episode measurements; every per-step series has `length` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub split: String,
    pub class_id: u32,
    pub view: usize,
    pub length: usize,
    pub forced_stop: bool,
    pub correct: bool,
    /// 1-based rank of the true object under the final belief.
    pub rank: usize,
    pub num_candidates: usize,
    pub prediction_entropy: Vec<f64>,
    pub stop_prob: Vec<f64>,
    /// Entropy of the sender's message at each step, summed over bits.
    pub sender_entropy: Vec<f64>,
    /// Entropy of the receiver message the sender answered at each step.
    pub receiver_entropy: Vec<f64>,
}

pub fn message_entropy(probs: &[f64]) -> f64 {
    probs.iter().map(|&p| bernoulli_entropy(p)).sum()
}

pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

impl EpisodeLog {
    pub fn from_trace(t: &EpisodeTrace) -> Result<Self, AnalysisError> {
        if t.length == 0 || t.steps.len() != t.length || t.target >= t.candidate_ids.len() {
            return Err(AnalysisError::Invalid(format!(
                "episode for class {} view {}: length {} with {} steps",
                t.class_id,
                t.view,
                t.length,
                t.steps.len()
            )));
        }
        let mut receiver_entropy = Vec::with_capacity(t.length);
        receiver_entropy.push(message_entropy(&t.initial_probs));
        for s in &t.steps[..t.length - 1] {
            let probs = s.receiver_probs.as_deref().ok_or_else(|| {
                AnalysisError::Invalid(format!(
                    "episode for class {} view {}: missing receiver message before the last step",
                    t.class_id, t.view
                ))
            })?;
            receiver_entropy.push(message_entropy(probs));
        }
        let rank = t.target_rank();
        Ok(Self {
            split: t.split.clone(),
            class_id: t.class_id,
            view: t.view,
            length: t.length,
            forced_stop: t.forced_stop,
            correct: rank == 1,
            rank,
            num_candidates: t.candidate_ids.len(),
            prediction_entropy: t.steps.iter().map(|s| categorical_entropy(&s.belief)).collect(),
            stop_prob: t.steps.iter().map(|s| s.stop_prob).collect(),
            sender_entropy: t.steps.iter().map(|s| message_entropy(&s.sender_probs)).collect(),
            receiver_entropy,
        })
    }

    pub fn from_traces(traces: &[EpisodeTrace]) -> Result<Vec<Self>, AnalysisError> {
        traces.iter().map(Self::from_trace).collect()
    }
}

/// Fraction of episodes whose true object ranks in the top `k`.
pub fn accuracy_at_k(logs: &[EpisodeLog], k: usize) -> Result<f64, AnalysisError> {
    if logs.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let candidates = logs.iter().map(|l| l.num_candidates).min().unwrap_or(0);
    if k == 0 || k > candidates {
        return Err(AnalysisError::KOutOfRange { k, candidates });
    }
    let hits = logs.iter().filter(|l| l.rank <= k).count();
    Ok(hits as f64 / logs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub split: String,
    pub episodes: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "acc@K")]
    pub acc_at_k: f64,
    #[serde(rename = "acc@1")]
    pub acc_at_1: f64,
    pub mean_length: f64,
}

/// Accuracy per split, with `K = max(1, round(k_fraction * candidates))`.
pub fn split_accuracy(logs: &[EpisodeLog], k_fraction: f64) -> Result<Vec<SplitAccuracy>, AnalysisError> {
    let mut by_split: BTreeMap<&str, Vec<EpisodeLog>> = BTreeMap::new();
    for l in logs {
        by_split.entry(&l.split).or_default().push(l.clone());
    }
    by_split
        .into_iter()
        .map(|(split, ls)| {
            let n = ls.iter().map(|l| l.num_candidates).min().unwrap_or(0);
            let k = k_for(n, k_fraction);
            Ok(SplitAccuracy {
                split: split.to_string(),
                episodes: ls.len(),
                k,
                acc_at_k: accuracy_at_k(&ls, k)?,
                acc_at_1: accuracy_at_k(&ls, 1)?,
                mean_length: ls.iter().map(|l| l.length as f64).sum::<f64>() / ls.len() as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub length: usize,
    pub episodes: usize,
    pub correct: usize,
    /// Accuracy@1 within the bin; 0 for empty bins.
    pub accuracy: f64,
}

/// One bin per conversation length `1..=max_steps`, empty bins included.
pub fn length_bins(logs: &[EpisodeLog], max_steps: usize) -> Result<Vec<LengthBin>, AnalysisError> {
    let mut bins: Vec<LengthBin> = (1..=max_steps)
        .map(|length| LengthBin { length, episodes: 0, correct: 0, accuracy: 0.0 })
        .collect();
    for l in logs {
        let bin = l
            .length
            .checked_sub(1)
            .and_then(|i| bins.get_mut(i))
            .ok_or_else(|| AnalysisError::Invalid(format!("length {} outside 1..={max_steps}", l.length)))?;
        bin.episodes += 1;
        bin.correct += usize::from(l.correct);
    }
    for b in &mut bins {
        if b.episodes > 0 {
            b.accuracy = b.correct as f64 / b.episodes as f64;
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episodes: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurves {
    /// Prediction entropy per step over all episodes still running at that step.
    pub prediction: Vec<CurvePoint>,
    /// Prediction entropy per step, one curve per final conversation length.
    pub prediction_by_length: BTreeMap<usize, Vec<CurvePoint>>,
    pub sender: Vec<CurvePoint>,
    pub receiver: Vec<CurvePoint>,
}

// step t averages only the series that reach t
fn masked_mean<'a>(series: impl Iterator<Item = &'a [f64]> + Clone) -> Vec<CurvePoint> {
    let len = series.clone().map(<[f64]>::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = series.clone().filter_map(|s| s.get(t).copied()).collect();
            CurvePoint { step: t + 1, episodes: vals.len(), mean: mean(&vals) }
        })
        .collect()
}

pub fn entropy_curves(logs: &[EpisodeLog]) -> EntropyCurves {
    let mut lengths: BTreeMap<usize, Vec<&EpisodeLog>> = BTreeMap::new();
    for l in logs {
        lengths.entry(l.length).or_default().push(l);
    }
    EntropyCurves {
        prediction: masked_mean(logs.iter().map(|l| l.prediction_entropy.as_slice())),
        prediction_by_length: lengths
            .into_iter()
            .map(|(t, ls)| (t, masked_mean(ls.iter().map(|l| l.prediction_entropy.as_slice()))))
            .collect(),
        sender: masked_mean(logs.iter().map(|l| l.sender_entropy.as_slice())),
        receiver: masked_mean(logs.iter().map(|l| l.receiver_entropy.as_slice())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLength {
    pub class_id: u32,
    pub episodes: usize,
    pub mean_length: f64,
    pub difficulty: Option<f64>,
}

pub fn class_lengths(logs: &[EpisodeLog]) -> Vec<ClassLength> {
    let mut by_class: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for l in logs {
        let e = by_class.entry(l.class_id).or_default();
        e.0 += 1;
        e.1 += l.length;
    }
    by_class
        .into_iter()
        .map(|(class_id, (n, total))| ClassLength {
            class_id,
            episodes: n,
            mean_length: total as f64 / n as f64,
            difficulty: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDifficulty {
    pub classes: Vec<ClassLength>,
    pub correlation: Correlation,
}

/// Pairs each class's mean conversation length with its difficulty score
/// and correlates the two across classes.
pub fn length_difficulty_report(
    logs: &[EpisodeLog],
    difficulty: &BTreeMap<u32, f64>,
) -> Result<LengthDifficulty, AnalysisError> {
    let mut classes = class_lengths(logs);
    for c in &mut classes {
        c.difficulty = Some(*difficulty.get(&c.class_id).ok_or(AnalysisError::MissingDifficulty(c.class_id))?);
    }
    let x: Vec<f64> = classes.iter().filter_map(|c| c.difficulty).collect();
    let y: Vec<f64> = classes.iter().map(|c| c.mean_length).collect();
    let correlation = pearson(&x, &y)?;
    Ok(LengthDifficulty { classes, correlation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    #[serde(rename = "acc@K")]
    pub acc_at_k: f64,
    #[serde(rename = "acc@1")]
    pub acc_at_1: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub variance: f64,
}

impl MetricStats {
    fn of(x: &[f64]) -> Self {
        Self { mean: mean(x), variance: sample_variance(x) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: Vec<RunMetrics>,
    #[serde(rename = "acc@K")]
    pub acc_at_k: MetricStats,
    #[serde(rename = "acc@1")]
    pub acc_at_1: MetricStats,
    pub loss: MetricStats,
}

/// Sample mean and variance of each metric across seeds.
pub fn stability_report(runs: &[RunMetrics]) -> Result<StabilityReport, AnalysisError> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewPoints { needed: 2, got: runs.len() });
    }
    let col = |f: fn(&RunMetrics) -> f64| MetricStats::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(StabilityReport {
        runs: runs.to_vec(),
        acc_at_k: col(|r| r.acc_at_k),
        acc_at_1: col(|r| r.acc_at_1),
        loss: col(|r| r.loss),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub accuracy: Vec<SplitAccuracy>,
    pub classes: Vec<ClassLength>,
    pub length_difficulty: Option<Correlation>,
    pub length_bins: Vec<LengthBin>,
    pub curves: EntropyCurves,
}

/// Everything derivable from one set of episode logs. `difficulty`, when
/// given, must cover every logged class.
pub fn aggregate(
    logs: &[EpisodeLog],
    max_steps: usize,
    k_fraction: f64,
    difficulty: Option<&BTreeMap<u32, f64>>,
) -> Result<AggregateReport, AnalysisError> {
    if logs.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let (classes, length_difficulty) = match difficulty {
        Some(d) => {
            let r = length_difficulty_report(logs, d)?;
            (r.classes, Some(r.correlation))
        }
        None => (class_lengths(logs), None),
    };
    Ok(AggregateReport {
        accuracy: split_accuracy(logs, k_fraction)?,
        classes,
        length_difficulty,
        length_bins: length_bins(logs, max_steps)?,
        curves: entropy_curves(logs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{oracle_dataset, oracle_model};
    use crate::game::{GameConfig, GameSplit, PlayMode};
    use crate::training::evaluate_split;

    fn log(class_id: u32, length: usize, rank: usize) -> EpisodeLog {
        EpisodeLog {
            split: "test".into(),
            class_id,
            view: 0,
            length,
            forced_stop: false,
            correct: rank == 1,
            rank,
            num_candidates: 10,
            prediction_entropy: vec![1.0; length],
            stop_prob: vec![0.5; length],
            sender_entropy: vec![0.5; length],
            receiver_entropy: vec![0.5; length],
        }
    }

    #[test]
    fn accuracy_counts_ranks_within_k() {
        let logs = vec![log(0, 1, 1), log(1, 1, 3), log(2, 1, 7)];
        assert!((accuracy_at_k(&logs, 6).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy_at_k(&logs, 10).unwrap(), 1.0);
        assert!((accuracy_at_k(&logs, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(accuracy_at_k(&logs, 11), Err(AnalysisError::KOutOfRange { k: 11, candidates: 10 })));
        assert!(matches!(accuracy_at_k(&logs, 0), Err(AnalysisError::KOutOfRange { .. })));
        let mut prev = 0.0;
        for k in 1..=10 {
            let a = accuracy_at_k(&logs, k).unwrap();
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn masked_mean_uses_only_long_enough_episodes() {
        let mut a = log(0, 2, 1);
        a.prediction_entropy = vec![2.0, 1.0];
        let mut b = log(1, 4, 1);
        b.prediction_entropy = vec![1.0, 0.5, 0.25, 0.125];
        let c = entropy_curves(&[a, b]);
        let means: Vec<f64> = c.prediction.iter().map(|p| p.mean).collect();
        assert_eq!(means, vec![1.5, 0.75, 0.25, 0.125]);
        assert_eq!(c.prediction[2].episodes, 1);
        assert_eq!(c.prediction_by_length[&2].len(), 2);
        assert_eq!(c.prediction_by_length[&4][3].mean, 0.125);
    }

    #[test]
    fn single_episode_curves_equal_its_series() {
        let mut a = log(0, 3, 1);
        a.sender_entropy = vec![3.0, 2.0, 1.0];
        let c = entropy_curves(std::slice::from_ref(&a));
        assert_eq!(c.sender.iter().map(|p| p.mean).collect::<Vec<_>>(), a.sender_entropy);
    }

    #[test]
    fn length_bins_recombine_to_overall_accuracy() {
        let logs = vec![log(0, 1, 1), log(0, 3, 2), log(1, 3, 1), log(1, 4, 1), log(2, 1, 5)];
        let bins = length_bins(&logs, 5).unwrap();
        assert_eq!(bins.len(), 5);
        assert_eq!(bins[1].episodes, 0);
        assert_eq!(bins[4].episodes, 0);
        assert_eq!(bins.iter().map(|b| b.episodes).sum::<usize>(), logs.len());
        let weighted: f64 = bins.iter().map(|b| b.accuracy * b.episodes as f64).sum::<f64>() / logs.len() as f64;
        assert!((weighted - accuracy_at_k(&logs, 1).unwrap()).abs() < 1e-15);
        assert!(length_bins(&logs, 3).is_err());
    }

    #[test]
    fn length_difficulty_needs_scores_and_spread() {
        let logs = vec![log(0, 1, 1), log(0, 2, 1), log(1, 3, 1), log(2, 4, 1)];
        let d: BTreeMap<u32, f64> = [(0, 0.9), (1, 0.5), (2, 0.1)].into();
        let r = length_difficulty_report(&logs, &d).unwrap();
        assert_eq!(r.classes[0].mean_length, 1.5);
        assert!(r.correlation.r < -0.9);
        let partial: BTreeMap<u32, f64> = [(0, 0.9), (1, 0.5)].into();
        assert!(matches!(length_difficulty_report(&logs, &partial), Err(AnalysisError::MissingDifficulty(2))));
        let flat: BTreeMap<u32, f64> = [(0, 0.5), (1, 0.5), (2, 0.5)].into();
        assert!(matches!(length_difficulty_report(&logs, &flat), Err(AnalysisError::UndefinedCorrelation(_))));
    }

    #[test]
    fn stability_of_runs() {
        let run = |seed, a| RunMetrics { seed, acc_at_k: a, acc_at_1: a, loss: 0.6 };
        let r = stability_report(&[run(0, 0.9), run(1, 1.0)]).unwrap();
        assert!((r.acc_at_1.mean - 0.95).abs() < 1e-15);
        assert!((r.acc_at_1.variance - 0.005).abs() < 1e-15);
        assert_eq!(r.loss.variance, 0.0);
        assert!(stability_report(&[run(0, 0.9)]).is_err());
    }

    #[test]
    fn logs_from_oracle_episodes() {
        let data = oracle_dataset();
        let model = oracle_model();
        let split = GameSplit::new(&data, "test").unwrap();
        let game = GameConfig { message_dim: 1, max_steps: 10, mode: PlayMode::TestGreedy, k: 1 };
        let traces = evaluate_split(&model, &split, &game).unwrap();
        let logs = EpisodeLog::from_traces(&traces).unwrap();
        assert_eq!(accuracy_at_k(&logs, 1).unwrap(), 1.0);
        for l in &logs {
            assert_eq!(l.length, 1);
            assert_eq!(l.receiver_entropy.len(), 1);
            assert!((l.receiver_entropy[0] - std::f64::consts::LN_2).abs() < 1e-12);
            assert!(l.prediction_entropy[0] >= 0.0 && l.prediction_entropy[0] <= 2f64.ln());
            assert!(l.sender_entropy[0] <= std::f64::consts::LN_2);
        }
        let report = aggregate(&logs, 10, 0.1, None).unwrap();
        assert_eq!(report.accuracy[0].k, 1);
        assert_eq!(report.length_bins[0].episodes, 2);
    }

    #[test]
    fn uniform_beliefs_give_flat_log_n_curve() {
        let h = categorical_entropy(&[0.25; 4]);
        let logs: Vec<EpisodeLog> = (1..=3)
            .map(|t| EpisodeLog { prediction_entropy: vec![h; t], ..log(0, t, 1) })
            .collect();
        for p in entropy_curves(&logs).prediction {
            assert!((p.mean - 4f64.ln()).abs() < 1e-15);
        }
    }
}
