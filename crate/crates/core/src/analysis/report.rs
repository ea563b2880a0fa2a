use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AggregateReport, AnalysisError, Correlation, SplitAccuracy, StabilityReport};
use crate::game::EpisodeTrace;
use crate::CODE_VERSION;

/// Full-scale reference numbers carried in every summary for comparison.
/// They are not expected to be reproduced by desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub length_difficulty_r: f64,
    pub length_difficulty_p: f64,
    pub acc_at_6_mean_percent: f64,
    pub acc_at_6_variance: f64,
    pub acc_at_1_mean_percent: f64,
    pub acc_at_1_variance: f64,
    pub loss_mean: f64,
    pub loss_variance: f64,
    pub out_of_domain_acc_at_7_percent: f64,
}

pub const REFERENCE: ReferenceValues = ReferenceValues {
    length_difficulty_r: -0.81,
    length_difficulty_p: 4e-15,
    acc_at_6_mean_percent: 96.6,
    acc_at_6_variance: 1.98e-1,
    acc_at_1_mean_percent: 86.0,
    acc_at_1_variance: 7.59e-1,
    loss_mean: 0.611,
    loss_variance: 2.72e-3,
    out_of_domain_acc_at_7_percent: 45.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub code_version: String,
    pub episodes: usize,
    pub max_steps: usize,
    pub k_fraction: f64,
    /// How episodes are grouped for per-length statistics.
    pub length_buckets: String,
    pub accuracy: Vec<SplitAccuracy>,
    pub length_difficulty: Option<Correlation>,
    pub reference: ReferenceValues,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io { path: path.to_path_buf(), source }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct ClassRow {
    class_id: u32,
    difficulty: Option<f64>,
    episodes: usize,
    mean_length: f64,
}

#[derive(Serialize)]
struct PredictionEntropyRow {
    final_length: Option<usize>,
    step: usize,
    episodes: usize,
    mean_entropy: f64,
}

#[derive(Serialize)]
struct MessageEntropyRow {
    step: usize,
    episodes: usize,
    sender_entropy: f64,
    receiver_entropy: f64,
}

#[derive(Serialize)]
struct BeliefRow<'a> {
    episode: usize,
    split: &'a str,
    class_id: u32,
    view: usize,
    step: usize,
    candidate: usize,
    candidate_class: u32,
    probability: f64,
}

/// Writes the report tables and `summary.json` into `dir`.
pub fn write_report(
    dir: &Path,
    report: &AggregateReport,
    traces: &[EpisodeTrace],
    max_steps: usize,
    k_fraction: f64,
) -> Result<Summary, AnalysisError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(
        &dir.join("accuracy.csv"),
        &["split", "episodes", "K", "acc@K", "acc@1", "mean_length"],
        &report.accuracy,
    )?;
    let classes: Vec<ClassRow> = report
        .classes
        .iter()
        .map(|c| ClassRow {
            class_id: c.class_id,
            difficulty: c.difficulty,
            episodes: c.episodes,
            mean_length: c.mean_length,
        })
        .collect();
    write_csv(
        &dir.join("length_by_class.csv"),
        &["class_id", "difficulty", "episodes", "mean_length"],
        &classes,
    )?;
    write_csv(
        &dir.join("accuracy_by_length.csv"),
        &["length", "episodes", "correct", "accuracy"],
        &report.length_bins,
    )?;
    let curves = &report.curves;
    let mut pred: Vec<PredictionEntropyRow> = curves
        .prediction
        .iter()
        .map(|p| PredictionEntropyRow { final_length: None, step: p.step, episodes: p.episodes, mean_entropy: p.mean })
        .collect();
    for (&t, curve) in &curves.prediction_by_length {
        pred.extend(curve.iter().map(|p| PredictionEntropyRow {
            final_length: Some(t),
            step: p.step,
            episodes: p.episodes,
            mean_entropy: p.mean,
        }));
    }
    write_csv(
        &dir.join("prediction_entropy.csv"),
        &["final_length", "step", "episodes", "mean_entropy"],
        &pred,
    )?;
    let msg: Vec<MessageEntropyRow> = curves
        .sender
        .iter()
        .zip(&curves.receiver)
        .map(|(s, r)| MessageEntropyRow {
            step: s.step,
            episodes: s.episodes,
            sender_entropy: s.mean,
            receiver_entropy: r.mean,
        })
        .collect();
    write_csv(
        &dir.join("message_entropy.csv"),
        &["step", "episodes", "sender_entropy", "receiver_entropy"],
        &msg,
    )?;
    let mut beliefs = Vec::new();
    for (episode, t) in traces.iter().enumerate() {
        for (s, step) in t.steps.iter().enumerate() {
            for (candidate, (&p, &cls)) in step.belief.iter().zip(&t.candidate_ids).enumerate() {
                beliefs.push(BeliefRow {
                    episode,
                    split: &t.split,
                    class_id: t.class_id,
                    view: t.view,
                    step: s + 1,
                    candidate,
                    candidate_class: cls,
                    probability: p,
                });
            }
        }
    }
    write_csv(
        &dir.join("belief_evolution.csv"),
        &["episode", "split", "class_id", "view", "step", "candidate", "candidate_class", "probability"],
        &beliefs,
    )?;
    let summary = Summary {
        code_version: CODE_VERSION.to_string(),
        episodes: report.length_bins.iter().map(|b| b.episodes).sum(),
        max_steps,
        k_fraction,
        length_buckets: "exact".into(),
        accuracy: report.accuracy.clone(),
        length_difficulty: report.length_difficulty,
        reference: REFERENCE,
    };
    let path = dir.join("summary.json");
    let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f).and_then(|_| f.flush()).map_err(io_err(&path))?;
    Ok(summary)
}

#[derive(Serialize)]
struct StabilityRow {
    row: String,
    #[serde(rename = "acc@K")]
    acc_at_k: f64,
    #[serde(rename = "acc@1")]
    acc_at_1: f64,
    loss: f64,
}

/// One row per seed, then `mean` and `variance` rows.
pub fn write_stability(path: &Path, report: &StabilityReport) -> Result<(), AnalysisError> {
    let mut rows: Vec<StabilityRow> = report
        .runs
        .iter()
        .map(|r| StabilityRow { row: format!("seed {}", r.seed), acc_at_k: r.acc_at_k, acc_at_1: r.acc_at_1, loss: r.loss })
        .collect();
    rows.push(StabilityRow {
        row: "mean".into(),
        acc_at_k: report.acc_at_k.mean,
        acc_at_1: report.acc_at_1.mean,
        loss: report.loss.mean,
    });
    rows.push(StabilityRow {
        row: "variance".into(),
        acc_at_k: report.acc_at_k.variance,
        acc_at_1: report.acc_at_1.variance,
        loss: report.loss.variance,
    });
    write_csv(path, &["row", "acc@K", "acc@1", "loss"], &rows)
}

/// One trained model of a message-size sweep; metric fields are empty when
/// the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub message_dim: usize,
    pub seed: u64,
    pub status: String,
    pub best_epoch: Option<u64>,
    pub in_domain_k: Option<usize>,
    pub in_domain_acc_k: Option<f64>,
    pub in_domain_acc_1: Option<f64>,
    pub held_out_k: Option<usize>,
    pub held_out_acc_k: Option<f64>,
    pub held_out_acc_1: Option<f64>,
    pub error: String,
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "message_dim",
    "seed",
    "status",
    "best_epoch",
    "in_domain_k",
    "in_domain_acc_k",
    "in_domain_acc_1",
    "held_out_k",
    "held_out_acc_k",
    "held_out_acc_1",
    "error",
];

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), AnalysisError> {
    write_csv(path, &SWEEP_COLUMNS, rows)
}

/// Learning curve row for the both-agents vs receiver-only comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub epoch: u64,
    pub train_loss: f64,
    #[serde(rename = "val_acc@K")]
    pub val_acc_k: f64,
    #[serde(rename = "val_acc@1")]
    pub val_acc_1: f64,
}

pub fn write_ablation_curves(path: &Path, rows: &[AblationRow]) -> Result<(), AnalysisError> {
    write_csv(path, &["condition", "epoch", "train_loss", "val_acc@K", "val_acc@1"], rows)
}

/// One JSON object per line.
pub fn write_episode_logs(path: &Path, traces: &[EpisodeTrace]) -> Result<(), AnalysisError> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for t in traces {
        serde_json::to_writer(&mut f, t)?;
        writeln!(f).map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_episode_logs(path: &Path) -> Result<Vec<EpisodeTrace>, AnalysisError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|source| AnalysisError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{aggregate, EpisodeLog};
    use crate::fixtures::{oracle_dataset, oracle_model};
    use crate::game::{GameConfig, GameSplit, PlayMode};
    use crate::training::evaluate_split;

    fn oracle_traces() -> Vec<EpisodeTrace> {
        let data = oracle_dataset();
        let split = GameSplit::new(&data, "train").unwrap();
        let game = GameConfig { message_dim: 1, max_steps: 3, mode: PlayMode::TestGreedy, k: 1 };
        evaluate_split(&oracle_model(), &split, &game).unwrap()
    }

    #[test]
    fn episode_logs_round_trip() {
        let traces = oracle_traces();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.jsonl");
        write_episode_logs(&path, &traces).unwrap();
        assert_eq!(read_episode_logs(&path).unwrap(), traces);
        std::fs::write(&path, "{\"split\": 3}\n").unwrap();
        let err = read_episode_logs(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }

    #[test]
    fn report_is_a_pure_function_of_the_logs() {
        let traces = oracle_traces();
        let logs = EpisodeLog::from_traces(&traces).unwrap();
        let report = aggregate(&logs, 3, 0.1, None).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_report(a.path(), &report, &traces, 3, 0.1).unwrap();
        write_report(b.path(), &report, &traces, 3, 0.1).unwrap();
        for name in [
            "accuracy.csv",
            "length_by_class.csv",
            "accuracy_by_length.csv",
            "prediction_entropy.csv",
            "message_entropy.csv",
            "belief_evolution.csv",
            "summary.json",
        ] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            assert!(!x.is_empty(), "{name}");
            assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        let bins = std::fs::read_to_string(a.path().join("accuracy_by_length.csv")).unwrap();
        assert_eq!(bins.lines().count(), 4);
        let summary: Summary = serde_json::from_slice(&std::fs::read(a.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.reference.length_difficulty_r, -0.81);
        assert_eq!(summary.episodes, 8);
    }

    #[test]
    fn empty_tables_keep_their_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), SWEEP_COLUMNS.join(","));
    }
}
