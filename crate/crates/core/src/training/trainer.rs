use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::ModelConfig;
use crate::dataset::{DataError, Dataset, SPLIT_TRAIN, SPLIT_VAL};
use crate::game::{
    k_for, play_on_tape, EpisodeTrace, GameConfig, GameError, GameInstance, GameSplit, Greedy,
    PlayMode, Sampler,
};
use crate::model::{Model, RngState};
use crate::nn::{Gradients, NnError, RmsProp, Tape};

use super::loss::{episode_loss, LossBreakdown, LossWeights};

/// Episodes whose gradients are summed sequentially before groups are combined;
/// fixing it keeps the floating-point reduction order independent of threads.
const GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[serde(alias = "bau")]
    BothAgentsUpdate,
    #[serde(alias = "oru")]
    OnlyReceiverUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub lambda_stop: f64,
    pub lambda_msg: f64,
    pub max_steps: usize,
    pub message_dim: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub max_updates: Option<usize>,
    pub seed: u64,
    pub ablation: Ablation,
    pub threads: usize,
    /// `K` is this fraction of the candidate count, rounded, at least 1.
    pub k_fraction: f64,
    pub train_split: String,
    pub val_split: String,
    pub embed_dim: usize,
    pub sender_hidden: usize,
    pub sender_attention: bool,
    pub sender_attention_hidden: usize,
    pub memory_size: usize,
    pub receiver_message_hidden: usize,
    pub receiver_attention: bool,
    pub receiver_attention_hidden: usize,
    pub baseline_hidden: usize,
    /// Where a non-finite minibatch is dumped.
    pub diagnostics_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::new(32, 1, 1);
        Self {
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
            batch_size: 64,
            lambda_stop: 0.08,
            lambda_msg: 0.01,
            max_steps: 10,
            message_dim: m.message_dim,
            max_epochs: 500,
            patience: 50,
            max_updates: None,
            seed: 0,
            ablation: Ablation::BothAgentsUpdate,
            threads: 1,
            k_fraction: 0.1,
            train_split: SPLIT_TRAIN.into(),
            val_split: SPLIT_VAL.into(),
            embed_dim: m.embed_dim,
            sender_hidden: m.sender_hidden,
            sender_attention: m.sender_attention,
            sender_attention_hidden: m.sender_attention_hidden,
            memory_size: m.memory_size,
            receiver_message_hidden: m.receiver_message_hidden,
            receiver_attention: m.receiver_attention,
            receiver_attention_hidden: m.receiver_attention_hidden,
            baseline_hidden: m.baseline_hidden,
            diagnostics_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            message_dim: self.message_dim,
            sender_dim: dataset.sender_dim,
            sender_set_size: dataset.sender_set_size,
            receiver_dim: dataset.receiver_dim,
            embed_dim: self.embed_dim,
            sender_hidden: self.sender_hidden,
            sender_attention: self.sender_attention,
            sender_attention_hidden: self.sender_attention_hidden,
            memory_size: self.memory_size,
            receiver_message_hidden: self.receiver_message_hidden,
            receiver_attention: self.receiver_attention,
            receiver_attention_hidden: self.receiver_attention_hidden,
            baseline_hidden: self.baseline_hidden,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_stop: self.lambda_stop,
            lambda_msg: self.lambda_msg,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda_stop >= 0.0 && self.lambda_msg >= 0.0) {
            return bad("entropy coefficients must be non-negative".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.threads == 0 {
            return bad("batch_size, max_epochs and threads must be positive".into());
        }
        if self.max_steps == 0 || self.message_dim == 0 {
            return bad("max_steps and message_dim must be positive".into());
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return bad(format!("k_fraction must lie in (0, 1], got {}", self.k_fraction));
        }
        RmsProp::new(self.lr, self.rho, self.eps)?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss at update {update}; minibatch dumped to {}", dump.as_ref().map_or("<not written>".into(), |p| p.display().to_string()))]
    NonFinite { update: u64, dump: Option<PathBuf> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training log: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One row per epoch of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: u64,
    pub train_loss: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_r")]
    pub l_r: f64,
    #[serde(rename = "L_B")]
    pub l_b: f64,
    #[serde(rename = "H_stop")]
    pub h_stop: f64,
    #[serde(rename = "H_msg")]
    pub h_msg: f64,
    #[serde(rename = "val_acc@K")]
    pub val_acc_k: f64,
    #[serde(rename = "val_acc@1")]
    pub val_acc_1: f64,
    pub mean_length: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation accuracy@K.
    pub best: Model,
    pub last: Model,
    pub best_epoch: u64,
    pub best_val_acc: f64,
    pub k: usize,
    pub updates: u64,
    pub rng: RngState,
    pub optimizer: RmsProp,
    pub log: Vec<TrainLogRow>,
}

/// Seed of an independent stream identified by `(seed, a, b)` (splitmix64 mixing).
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(mix(mix(seed) ^ a) ^ b)
}

/// Plays one sampled episode and returns the gradient of its objective.
pub fn episode_gradients(
    model: &Model,
    inst: &GameInstance,
    game: &GameConfig,
    weights: &LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(Gradients, LossBreakdown, EpisodeTrace), TrainError> {
    let mut tape = Tape::new(&model.store);
    let graph = play_on_tape(&mut tape, &model.sender, &model.receiver, inst, game, &mut Sampler(rng))?;
    let bvars = model.baselines.evaluate(&mut tape, &graph)?;
    let loss = episode_loss(&mut tape, &graph, &bvars, weights)?;
    let mut grads = model.store.new_gradients();
    tape.backward(loss.objective, &mut grads)?;
    Ok((grads, loss.breakdown, graph.trace))
}

/// Greedy episodes over every view of a split, in split order.
pub fn evaluate_split(
    model: &Model,
    split: &GameSplit,
    game: &GameConfig,
) -> Result<Vec<EpisodeTrace>, TrainError> {
    let cfg = GameConfig {
        mode: PlayMode::TestGreedy,
        ..*game
    };
    split
        .pairs()
        .par_iter()
        .map(|&(o, v)| {
            let inst = split.instance(o, v);
            let mut tape = Tape::new(&model.store);
            let g = play_on_tape(&mut tape, &model.sender, &model.receiver, &inst, &cfg, &mut Greedy)?;
            Ok(g.trace)
        })
        .collect()
}

/// Plays every pair of the split `repeats` times with sampled actions. Each
/// episode draws from its own seeded stream, so results do not depend on
/// the thread count.
pub fn sample_split(
    model: &Model,
    split: &GameSplit,
    game: &GameConfig,
    seed: u64,
    repeats: usize,
) -> Result<Vec<EpisodeTrace>, TrainError> {
    let cfg = GameConfig {
        mode: PlayMode::TrainSample,
        ..*game
    };
    let pairs = split.pairs();
    let jobs: Vec<(u64, usize, (usize, usize))> = (0..repeats as u64)
        .flat_map(|r| pairs.iter().enumerate().map(move |(i, &p)| (r, i, p)))
        .collect();
    jobs.par_iter()
        .map(|&(r, i, (o, v))| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, EVAL_STREAM | r, i as u64));
            let inst = split.instance(o, v);
            let mut tape = Tape::new(&model.store);
            let g = play_on_tape(&mut tape, &model.sender, &model.receiver, &inst, &cfg, &mut Sampler(&mut rng))?;
            Ok(g.trace)
        })
        .collect()
}

// keeps evaluation streams apart from the per-update training streams
const EVAL_STREAM: u64 = 1 << 63;

struct BatchResult {
    grads: Gradients,
    loss: LossBreakdown,
    traces: Vec<EpisodeTrace>,
}

fn run_batch(
    model: &Model,
    split: &GameSplit,
    batch: &[(usize, usize)],
    game: &GameConfig,
    weights: &LossWeights,
    seed: u64,
    update: u64,
) -> Result<BatchResult, TrainError> {
    let groups: Vec<Result<BatchResult, TrainError>> = batch
        .par_chunks(GROUP)
        .enumerate()
        .map(|(g, chunk)| {
            let mut acc = BatchResult {
                grads: model.store.new_gradients(),
                loss: LossBreakdown::default(),
                traces: Vec::with_capacity(chunk.len()),
            };
            for (j, &(o, v)) in chunk.iter().enumerate() {
                let idx = (g * GROUP + j) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, update, idx));
                let inst = split.instance(o, v);
                let (grads, loss, trace) = episode_gradients(model, &inst, game, weights, &mut rng)?;
                acc.grads.add_assign(&grads);
                acc.loss.add(&loss);
                acc.traces.push(trace);
            }
            Ok(acc)
        })
        .collect();
    let mut total: Option<BatchResult> = None;
    for g in groups {
        let g = g?;
        match &mut total {
            None => total = Some(g),
            Some(t) => {
                t.grads.add_assign(&g.grads);
                t.loss.add(&g.loss);
                t.traces.extend(g.traces);
            }
        }
    }
    total.ok_or_else(|| TrainError::Config("empty minibatch".into()))
}

fn dump_batch(dir: &Path, update: u64, traces: &[EpisodeTrace]) -> Result<PathBuf, TrainError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(format!("nonfinite_update_{update}.jsonl"));
    let mut text = String::new();
    for t in traces {
        text.push_str(&serde_json::to_string(t).map_err(|e| TrainError::Config(e.to_string()))?);
        text.push('\n');
    }
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}

/// Trains freshly initialized agents (seeded by `cfg.seed`).
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config(dataset), cfg.seed)?;
    train_model(model, cfg, dataset)
}

/// Trains the given agents on the train split with early stopping on validation accuracy@K.
pub fn train_model(mut model: Model, cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_split = GameSplit::new(dataset, &cfg.train_split)?;
    let val_split = GameSplit::new(dataset, &cfg.val_split)?;
    if train_split.num_views() == 0 {
        return Err(DataError::EmptySplit(cfg.train_split.clone()).into());
    }
    if val_split.num_views() == 0 {
        return Err(DataError::EmptySplit(cfg.val_split.clone()).into());
    }
    let k = k_for(val_split.num_candidates(), cfg.k_fraction);
    let game = GameConfig {
        message_dim: cfg.message_dim,
        max_steps: cfg.max_steps,
        mode: PlayMode::TrainSample,
        k,
    };
    let weights = cfg.weights();
    let optimizer = RmsProp::new(cfg.lr, cfg.rho, cfg.eps)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| TrainError::Pool(e.to_string()))?;
    if cfg.ablation == Ablation::OnlyReceiverUpdate {
        let ids = model.sender_ids();
        model.store.set_frozen(&ids, true);
    }

    let mut pairs = train_split.pairs();
    let mut log = Vec::new();
    let mut best: Option<(Model, u64, f64)> = None;
    let mut stale = 0usize;
    let mut update = 0u64;
    let mut epoch = 0u64;
    let cap = cfg.max_updates.map(|u| u as u64);
    while epoch < cfg.max_epochs as u64 && cap.is_none_or(|c| update < c) {
        epoch += 1;
        let mut shuffle = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, u64::MAX, epoch));
        pairs.shuffle(&mut shuffle);
        let mut epoch_loss = LossBreakdown::default();
        let mut episodes = 0usize;
        for batch in pairs.chunks(cfg.batch_size) {
            if cap.is_some_and(|c| update >= c) {
                break;
            }
            update += 1;
            let res = pool.install(|| run_batch(&model, &train_split, batch, &game, &weights, cfg.seed, update))?;
            if !res.loss.objective().is_finite() || !res.grads.max_abs().is_finite() {
                let dump = match &cfg.diagnostics_dir {
                    Some(dir) => Some(dump_batch(dir, update, &res.traces)?),
                    None => None,
                };
                log::error!("non-finite loss at update {update}");
                return Err(TrainError::NonFinite { update, dump });
            }
            model.store.accumulate(&res.grads, 1.0 / batch.len() as f64);
            optimizer.step(&mut model.store);
            epoch_loss.add(&res.loss);
            episodes += batch.len();
        }
        let val = pool.install(|| evaluate_split(&model, &val_split, &game))?;
        let n = val.len() as f64;
        let mean = epoch_loss.scaled(1.0 / episodes.max(1) as f64);
        let row = TrainLogRow {
            epoch,
            train_loss: mean.total,
            l_c: mean.classification,
            l_r: mean.reinforce,
            l_b: mean.baseline,
            h_stop: mean.entropy_stop,
            h_msg: mean.entropy_msg,
            val_acc_k: val.iter().filter(|t| t.target_rank() <= k).count() as f64 / n,
            val_acc_1: val.iter().filter(|t| t.reward > 0.0).count() as f64 / n,
            mean_length: val.iter().map(|t| t.length as f64).sum::<f64>() / n,
        };
        log::info!(
            "epoch {epoch} update {update}: loss {:.4} val acc@{k} {:.3} acc@1 {:.3} length {:.2}",
            row.train_loss,
            row.val_acc_k,
            row.val_acc_1,
            row.mean_length
        );
        if best.as_ref().is_none_or(|b| row.val_acc_k > b.2) {
            best = Some((model.clone(), epoch, row.val_acc_k));
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(row);
        if stale >= cfg.patience {
            log::info!("no validation improvement for {stale} epochs; stopping");
            break;
        }
    }
    let (mut best_model, best_epoch, best_val_acc) = best.ok_or_else(|| TrainError::Config("no epoch was run".into()))?;
    let all: Vec<_> = model.store.ids().collect();
    model.store.set_frozen(&all, false);
    best_model.store.set_frozen(&all, false);
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_epoch,
        best_val_acc,
        k,
        updates: update,
        rng: RngState {
            seed: cfg.seed,
            epoch,
            update,
        },
        optimizer,
        log,
    })
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainLogRow>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
