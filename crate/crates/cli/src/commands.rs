use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use refgame_core::analysis::{
    self, aggregate, read_episode_logs, stability_report, write_ablation_curves, write_episode_logs, write_report,
    write_stability, write_sweep, AblationRow, EpisodeLog, RunMetrics, SweepRow,
};
use refgame_core::dataset::{
    import_corpus, load_dataset, make_splits, save_dataset, synthetic_with_splits, Dataset, ImportPaths,
    SplitCounts, SyntheticSpec, MANIFEST_FILE,
};
use refgame_core::game::{k_for, EpisodeTrace, GameConfig, GameSplit, PlayMode};
use refgame_core::model::{load_checkpoint, save_checkpoint, CHECKPOINT_FILE};
use refgame_core::training::{
    evaluate_split, read_train_log, sample_split, train_model, write_train_log, TrainConfig, TrainError,
};
use refgame_core::{Model, CODE_VERSION};

use crate::config::{usage, RawConfig};
use crate::{AnalyzeArgs, EvalArgs, GenDataArgs, ImportArgs, SweepArgs, TrainArgs};

const RESOLVED_CONFIG: &str = "resolved_config.json";
const METRICS: &str = "metrics.json";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_resolved(dir: &Path, command: &str, config: &impl Serialize) -> Result<()> {
    write_json(
        &dir.join(RESOLVED_CONFIG),
        &json!({ "command": command, "code_version": CODE_VERSION, "config": config }),
    )
}

fn open_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(usage(format!("{} is not a dataset directory (no {MANIFEST_FILE})", dir.display())));
    }
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut raw = RawConfig::load(a.spec.as_deref())?;
    raw.set_opt("seed", a.seed);
    raw.apply_overrides(&a.overrides)?;
    let spec: SyntheticSpec = raw.parse("synthetic spec")?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    create_out(&a.out)?;
    let data = synthetic_with_splits(&spec)?;
    save_dataset(&data, &a.out)?;
    write_resolved(&a.out, "gen-data", &spec)?;
    println!("{:>4}  {:<12} {:>10}  views", "id", "class", "difficulty");
    for (i, c) in data.classes.iter().enumerate() {
        let d = c.difficulty.map_or("-".into(), |d| format!("{d:.4}"));
        println!("{:>4}  {:<12} {:>10}  {}", c.id, c.name, d, data.num_views(i));
    }
    info!("wrote {} classes to {}", data.classes.len(), a.out.display());
    Ok(())
}

fn read_difficulty(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once('\t')
            .and_then(|(name, v)| v.trim().parse::<f64>().ok().map(|v| (name.trim().to_string(), v)));
        let (name, v) =
            parsed.ok_or_else(|| usage(format!("{}:{}: expected `class_name<TAB>score`", path.display(), i + 1)))?;
        out.insert(name, v);
    }
    Ok(out)
}

pub fn import_data(a: ImportArgs) -> Result<()> {
    let paths = ImportPaths {
        descriptions: a.descriptions.clone(),
        embeddings: a.embeddings.clone(),
        features: a.features.clone(),
    };
    for p in [&paths.descriptions, &paths.embeddings, &paths.features] {
        if !p.is_file() {
            return Err(usage(format!("{} does not exist", p.display())));
        }
    }
    let mut data = import_corpus(&paths)?;
    if let Some(p) = &a.difficulty {
        let scores = read_difficulty(p)?;
        for c in &mut data.classes {
            c.difficulty = scores.get(&c.name).copied();
        }
    }
    let index = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                data.classes
                    .iter()
                    .position(|c| &c.name == n)
                    .ok_or_else(|| usage(format!("unknown class `{n}`")))
            })
            .collect()
    };
    let held = index(&a.held_out)?;
    let transfer = index(&a.transfer)?;
    let in_domain: Vec<usize> =
        (0..data.classes.len()).filter(|c| !held.contains(c) && !transfer.contains(c)).collect();
    let counts = SplitCounts {
        train: a.train_views,
        val: a.val_views,
        test: a.test_views,
        out_of_domain: a.held_out_views,
        transfer: a.held_out_views,
    };
    let data = make_splits(&data, &in_domain, &held, &transfer, &counts)?;
    create_out(&a.out)?;
    save_dataset(&data, &a.out)?;
    write_resolved(
        &a.out,
        "import-data",
        &json!({
            "descriptions": a.descriptions, "embeddings": a.embeddings, "features": a.features,
            "difficulty": a.difficulty, "held_out": a.held_out, "transfer": a.transfer, "counts": counts,
        }),
    )?;
    info!("imported {} classes into {}", data.classes.len(), a.out.display());
    Ok(())
}

struct TrainSetup {
    cfg: TrainConfig,
    data_dir: PathBuf,
    out: PathBuf,
}

fn resolve_train(
    config: Option<&Path>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    fill: impl FnOnce(&mut RawConfig),
    overrides: &[String],
) -> Result<TrainSetup> {
    let mut raw = RawConfig::load(config)?;
    fill(&mut raw);
    raw.apply_overrides(overrides)?;
    let data_dir = data.or(raw.take_path("data")?).ok_or_else(|| usage("no dataset: pass --data or set `data`"))?;
    let out = out.or(raw.take_path("out")?).ok_or_else(|| usage("no output directory: pass --out or set `out`"))?;
    let cfg: TrainConfig = raw.parse("training")?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(TrainSetup { cfg, data_dir, out })
}

#[derive(Serialize)]
struct EvalMetrics {
    split: String,
    episodes: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "acc@K")]
    acc_at_k: f64,
    #[serde(rename = "acc@1")]
    acc_at_1: f64,
    mean_length: f64,
}

fn eval_metrics(split: &str, traces: &[EpisodeTrace], k: usize) -> Result<EvalMetrics> {
    let logs = EpisodeLog::from_traces(traces)?;
    Ok(EvalMetrics {
        split: split.to_string(),
        episodes: logs.len(),
        k,
        acc_at_k: analysis::accuracy_at_k(&logs, k)?,
        acc_at_1: analysis::accuracy_at_k(&logs, 1)?,
        mean_length: logs.iter().map(|l| l.length as f64).sum::<f64>() / logs.len() as f64,
    })
}

fn greedy_eval(model: &Model, data: &Dataset, split: &str, max_steps: usize, k_fraction: f64) -> Result<(Vec<EpisodeTrace>, EvalMetrics)> {
    let s = GameSplit::new(data, split)?;
    let k = k_for(s.num_candidates(), k_fraction);
    let game = GameConfig {
        message_dim: model.config.message_dim,
        max_steps,
        mode: PlayMode::TestGreedy,
        k,
    };
    let traces = evaluate_split(model, &s, &game)?;
    let m = eval_metrics(split, &traces, k)?;
    Ok((traces, m))
}

/// Trains into `out`; returns the best model and its validation metrics.
fn run_training(cfg: &TrainConfig, data: &Dataset, out: &Path) -> Result<(Model, EvalMetrics, f64)> {
    let mut cfg = cfg.clone();
    if cfg.diagnostics_dir.is_none() {
        cfg.diagnostics_dir = Some(out.to_path_buf());
    }
    let model = Model::new(cfg.model_config(data), cfg.seed).map_err(|e| usage(e.to_string()))?;
    let sender_ids = model.sender_ids();
    let initial_sender = model.checksum(&sender_ids);
    let outcome = match train_model(model, &cfg, data) {
        Ok(o) => o,
        Err(e @ TrainError::Config(_)) => return Err(usage(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    write_train_log(&out.join("train_log.csv"), &outcome.log)?;
    let extra = json!({ "train_config": cfg, "best_epoch": outcome.best_epoch, "best_val_acc": outcome.best_val_acc });
    save_checkpoint(&out.join("checkpoint"), &outcome.best, &outcome.optimizer, outcome.rng, extra.clone())?;
    save_checkpoint(&out.join("last"), &outcome.last, &outcome.optimizer, outcome.rng, extra)?;
    let (traces, val) = greedy_eval(&outcome.best, data, &cfg.val_split, cfg.max_steps, cfg.k_fraction)?;
    write_episode_logs(&out.join("val_episodes.jsonl"), &traces)?;
    let final_loss = outcome.log.last().map_or(f64::NAN, |r| r.train_loss);
    write_json(
        &out.join(METRICS),
        &json!({
            "code_version": CODE_VERSION,
            "best_epoch": outcome.best_epoch,
            "epochs": outcome.log.len(),
            "updates": outcome.updates,
            "K": outcome.k,
            "best_val_acc@K": outcome.best_val_acc,
            "val": val,
            "final_train_loss": final_loss,
            "sender_checksum_initial": format!("{initial_sender:016x}"),
            "sender_checksum_final": format!("{:016x}", outcome.last.checksum(&outcome.last.sender_ids())),
        }),
    )?;
    Ok((outcome.best, val, final_loss))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let setup = resolve_train(
        a.config.as_deref(),
        a.data,
        a.out,
        |raw| {
            raw.set_opt("seed", a.seed);
            raw.set_opt("message_dim", a.message_dim);
            raw.set_opt("max_steps", a.max_steps);
            raw.set_opt("ablation", a.ablation);
            raw.set_opt("lr", a.lr);
            raw.set_opt("max_updates", a.max_updates);
            raw.set_opt("max_epochs", a.max_epochs);
            raw.set_opt("threads", a.threads);
        },
        &a.overrides,
    )?;
    let data = open_dataset(&setup.data_dir)?;
    create_out(&setup.out)?;
    write_resolved(&setup.out, "train", &json!({ "data": setup.data_dir, "train": setup.cfg }))?;
    let (_, val, _) = run_training(&setup.cfg, &data, &setup.out)?;
    println!(
        "{}: acc@{} {:.4}, acc@1 {:.4}, mean length {:.3}",
        val.split, val.k, val.acc_at_k, val.acc_at_1, val.mean_length
    );
    Ok(())
}

fn check_dims(model: &Model, data: &Dataset) -> Result<()> {
    let c = &model.config;
    let pairs = [
        ("sender_dim", c.sender_dim, data.sender_dim),
        ("sender_set_size", c.sender_set_size, data.sender_set_size),
        ("receiver_dim", c.receiver_dim, data.receiver_dim),
    ];
    for (name, ckpt, ds) in pairs {
        if ckpt != ds {
            return Err(usage(format!("dimension mismatch: checkpoint {name} = {ckpt}, dataset {name} = {ds}")));
        }
    }
    Ok(())
}

fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(usage("--threads must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    init_threads(a.threads)?;
    if !a.checkpoint.join(CHECKPOINT_FILE).is_file() {
        return Err(usage(format!("{} is not a checkpoint directory", a.checkpoint.display())));
    }
    let data = open_dataset(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    check_dims(&ckpt.model, &data)?;
    let trained_steps = ckpt.extra.pointer("/train_config/max_steps").and_then(|v| v.as_u64());
    let max_steps = a.max_steps.or(trained_steps.map(|v| v as usize)).unwrap_or(10);
    let split = GameSplit::new(&data, &a.split).map_err(|e| usage(e.to_string()))?;
    let n = split.num_candidates();
    let k = a.k.unwrap_or_else(|| k_for(n, a.k_fraction));
    if k == 0 || k > n {
        return Err(usage(format!("K = {k} but split `{}` has {n} candidates", a.split)));
    }
    let game = GameConfig {
        message_dim: ckpt.model.config.message_dim,
        max_steps,
        mode: if a.samples.is_some() { PlayMode::TrainSample } else { PlayMode::TestGreedy },
        k,
    };
    game.validate(n).map_err(|e| usage(e.to_string()))?;
    let traces = match a.samples {
        Some(r) => sample_split(&ckpt.model, &split, &game, a.seed, r)?,
        None => evaluate_split(&ckpt.model, &split, &game)?,
    };
    create_out(&a.out)?;
    write_resolved(
        &a.out,
        "eval",
        &json!({
            "checkpoint": a.checkpoint, "data": a.data, "split": a.split, "K": k, "max_steps": max_steps,
            "mode": game.mode, "samples": a.samples, "seed": a.seed,
        }),
    )?;
    write_episode_logs(&a.out.join("episodes.jsonl"), &traces)?;
    let m = eval_metrics(&a.split, &traces, k)?;
    write_json(&a.out.join(METRICS), &m)?;
    println!(
        "{}: {} episodes, acc@{} {:.4}, acc@1 {:.4}, mean length {:.3}",
        m.split, m.episodes, m.k, m.acc_at_k, m.acc_at_1, m.mean_length
    );
    Ok(())
}

fn run_metrics(dir: &Path, seed_hint: u64) -> Result<RunMetrics> {
    let path = dir.join(METRICS);
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| path.display().to_string())?;
    let get = |p: &str| {
        v.pointer(p)
            .and_then(|x| x.as_f64())
            .ok_or_else(|| anyhow!("{}: missing `{p}`", path.display()))
    };
    let resolved = fs::read_to_string(dir.join(RESOLVED_CONFIG)).ok();
    let seed = resolved
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|r| r.pointer("/config/train/seed").and_then(|s| s.as_u64()))
        .unwrap_or(seed_hint);
    Ok(RunMetrics {
        seed,
        acc_at_k: get("/val/acc@K")?,
        acc_at_1: get("/val/acc@1")?,
        loss: get("/final_train_loss")?,
    })
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let mut traces = Vec::new();
    for p in &a.episodes {
        if !p.is_file() {
            return Err(usage(format!("{} does not exist", p.display())));
        }
        traces.extend(read_episode_logs(p)?);
    }
    let logs = EpisodeLog::from_traces(&traces)?;
    let max_steps = a
        .max_steps
        .or_else(|| traces.iter().map(|t| t.max_steps).max())
        .ok_or_else(|| usage("the episode logs are empty"))?;
    let difficulty = match &a.data {
        Some(dir) => {
            let data = open_dataset(dir)?;
            let scores: BTreeMap<u32, f64> =
                data.classes.iter().filter_map(|c| c.difficulty.map(|d| (c.id, d))).collect();
            if scores.is_empty() {
                warn!("{} has no difficulty scores; skipping the length correlation", dir.display());
                None
            } else {
                Some(scores)
            }
        }
        None => None,
    };
    let report = aggregate(&logs, max_steps, a.k_fraction, difficulty.as_ref())?;
    create_out(&a.out)?;
    write_resolved(
        &a.out,
        "analyze",
        &json!({
            "episodes": a.episodes, "data": a.data, "max_steps": max_steps, "k_fraction": a.k_fraction,
            "runs": a.runs, "curves": a.curves,
        }),
    )?;
    let summary = write_report(&a.out, &report, &traces, max_steps, a.k_fraction)?;
    for s in &summary.accuracy {
        println!("{}: acc@{} {:.4}, acc@1 {:.4}, mean length {:.3}", s.split, s.k, s.acc_at_k, s.acc_at_1, s.mean_length);
    }
    if let Some(c) = summary.length_difficulty {
        println!("difficulty vs mean length: r = {:.4}, p = {:.3e} over {} classes", c.r, c.p, c.n);
    }
    if !a.runs.is_empty() {
        let runs: Vec<RunMetrics> =
            a.runs.iter().enumerate().map(|(i, d)| run_metrics(d, i as u64)).collect::<Result<_>>()?;
        let s = stability_report(&runs).map_err(|e| usage(e.to_string()))?;
        write_stability(&a.out.join("stability.csv"), &s)?;
        write_json(&a.out.join("stability.json"), &s)?;
        println!(
            "stability over {} runs: acc@K {:.4} (var {:.3e}), acc@1 {:.4} (var {:.3e})",
            runs.len(),
            s.acc_at_k.mean,
            s.acc_at_k.variance,
            s.acc_at_1.mean,
            s.acc_at_1.variance
        );
    }
    if !a.curves.is_empty() {
        let mut rows = Vec::new();
        for c in &a.curves {
            let (name, path) = c.split_once('=').ok_or_else(|| usage(format!("--curve `{c}` is not name=path")))?;
            let log = read_train_log(Path::new(path)).with_context(|| path.to_string())?;
            rows.extend(log.into_iter().map(|r| AblationRow {
                condition: name.to_string(),
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_acc_k: r.val_acc_k,
                val_acc_1: r.val_acc_1,
            }));
        }
        write_ablation_curves(&a.out.join("learning_curves.csv"), &rows)?;
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let dims: BTreeSet<usize> = a.dims.iter().copied().collect();
    if dims.len() != a.dims.len() {
        return Err(usage(format!("duplicate message sizes in {:?}", a.dims)));
    }
    if dims.contains(&0) {
        return Err(usage("message sizes must be positive"));
    }
    let setup = resolve_train(a.config.as_deref(), a.data, a.out, |_| {}, &a.overrides)?;
    let seeds = if a.seeds.is_empty() { vec![setup.cfg.seed] } else { a.seeds.clone() };
    let data = open_dataset(&setup.data_dir)?;
    for split in [&a.in_domain_split, &a.held_out_split] {
        data.split(split).map_err(|e| usage(e.to_string()))?;
    }
    create_out(&setup.out)?;
    write_resolved(
        &setup.out,
        "sweep",
        &json!({
            "data": setup.data_dir, "train": setup.cfg, "dims": a.dims, "seeds": seeds,
            "in_domain_split": a.in_domain_split, "held_out_split": a.held_out_split,
        }),
    )?;
    let mut rows = Vec::new();
    for &seed in &seeds {
        for &d in &a.dims {
            let cfg = TrainConfig { message_dim: d, seed, ..setup.cfg.clone() };
            let dir = setup.out.join(format!("d{d}-s{seed}"));
            info!("training d = {d}, seed = {seed}");
            let run = || -> Result<SweepRow> {
                fs::create_dir_all(&dir)?;
                write_resolved(&dir, "train", &json!({ "data": setup.data_dir, "train": cfg }))?;
                let (best, _, _) = run_training(&cfg, &data, &dir)?;
                let (_, inside) = greedy_eval(&best, &data, &a.in_domain_split, cfg.max_steps, cfg.k_fraction)?;
                let (traces, held) = greedy_eval(&best, &data, &a.held_out_split, cfg.max_steps, cfg.k_fraction)?;
                write_episode_logs(&dir.join("held_out_episodes.jsonl"), &traces)?;
                let best_epoch = load_checkpoint(&dir.join("checkpoint"))?
                    .extra
                    .get("best_epoch")
                    .and_then(|v| v.as_u64());
                Ok(SweepRow {
                    message_dim: d,
                    seed,
                    status: "ok".into(),
                    best_epoch,
                    in_domain_k: Some(inside.k),
                    in_domain_acc_k: Some(inside.acc_at_k),
                    in_domain_acc_1: Some(inside.acc_at_1),
                    held_out_k: Some(held.k),
                    held_out_acc_k: Some(held.acc_at_k),
                    held_out_acc_1: Some(held.acc_at_1),
                    error: String::new(),
                })
            };
            let row = run().unwrap_or_else(|e| {
                warn!("d = {d}, seed = {seed} failed: {e:#}");
                SweepRow {
                    message_dim: d,
                    seed,
                    status: "failed".into(),
                    best_epoch: None,
                    in_domain_k: None,
                    in_domain_acc_k: None,
                    in_domain_acc_1: None,
                    held_out_k: None,
                    held_out_acc_k: None,
                    held_out_acc_1: None,
                    error: format!("{e:#}"),
                }
            });
            rows.push(row);
        }
    }
    write_sweep(&setup.out.join("sweep.csv"), &rows)?;
    for r in &rows {
        match (r.held_out_k, r.held_out_acc_k) {
            (Some(k), Some(acc)) => println!("d = {:>3}, seed {}: held-out acc@{k} {acc:.4}", r.message_dim, r.seed),
            _ => println!("d = {:>3}, seed {}: failed ({})", r.message_dim, r.seed, r.error),
        }
    }
    if rows.iter().all(|r| r.status != "ok") {
        return Err(anyhow!("every sweep run failed"));
    }
    Ok(())
}
