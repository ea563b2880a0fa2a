//! Episode loop: instance sampling, the alternating message exchange,
//! termination and scoring.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Candidates, ReceiverAgent, SenderAgent};
use crate::dataset::{DataError, Dataset};
use crate::nn::{kernels, NnError, ParamStore, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid game configuration: {0}")]
    Config(String),
    #[error("prediction {index} out of range for {candidates} candidates")]
    Prediction { index: usize, candidates: usize },
    #[error("replayed trace has no recorded action for {0:?}")]
    Replay(Decision),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlayMode {
    TrainSample,
    TestGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub message_dim: usize,
    pub max_steps: usize,
    pub mode: PlayMode,
    pub k: usize,
}

impl GameConfig {
    pub fn validate(&self, candidates: usize) -> Result<(), GameError> {
        if self.message_dim == 0 {
            return Err(GameError::Config("message_dim must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(GameError::Config("max_steps must be at least 1".into()));
        }
        if self.k == 0 || self.k > candidates {
            return Err(GameError::Config(format!(
                "K = {} must lie in 1..={candidates}",
                self.k
            )));
        }
        Ok(())
    }
}

/// `K = max(1, round(fraction * candidates))`.
pub fn k_for(candidates: usize, fraction: f64) -> usize {
    ((fraction * candidates as f64).round() as usize).clamp(1, candidates.max(1))
}

/// A vector in `{0,1}^d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct BinaryMessage(Vec<u8>);

impl BinaryMessage {
    pub fn new(bits: Vec<u8>) -> Result<Self, GameError> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(GameError::Config(format!("message bit {b} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0; d])
    }

    /// Per-coordinate greedy decode; `p = 0.5` maps to 1.
    pub fn greedy(probs: &[f64]) -> Self {
        Self(probs.iter().map(|&p| u8::from(p >= 0.5)).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }
}

impl TryFrom<Vec<u8>> for BinaryMessage {
    type Error = GameError;
    fn try_from(bits: Vec<u8>) -> Result<Self, GameError> {
        Self::new(bits)
    }
}

impl From<BinaryMessage> for Vec<u8> {
    fn from(m: BinaryMessage) -> Self {
        m.0
    }
}

/// One split prepared for play: candidate vectors and per-class view ranges.
#[derive(Debug, Clone)]
pub struct GameSplit<'a> {
    pub dataset: &'a Dataset,
    pub name: String,
    pub candidates: Candidates,
    pub candidate_ids: Vec<u32>,
    /// Played classes (dataset indices) with their view ranges and the
    /// position of the class in the candidate list.
    objects: Vec<(usize, Vec<Range<usize>>, usize)>,
}

impl<'a> GameSplit<'a> {
    pub fn new(dataset: &'a Dataset, name: &str) -> Result<Self, GameError> {
        let split = dataset.split(name)?;
        let words = split
            .candidates
            .iter()
            .map(|&c| {
                dataset
                    .receiver_words(c)
                    .map(|w| w.iter().map(|&x| f64::from(x)).collect())
                    .collect()
            })
            .collect();
        let mut objects: Vec<(usize, Vec<Range<usize>>, usize)> = Vec::new();
        for r in split.ranges.iter().filter(|r| !r.is_empty()) {
            match objects.iter_mut().find(|o| o.0 == r.class) {
                Some(o) => o.1.push(r.views()),
                None => {
                    let target = split
                        .candidates
                        .iter()
                        .position(|&c| c == r.class)
                        .ok_or_else(|| DataError::Split {
                            split: name.to_string(),
                            detail: format!("class {} is not a candidate", dataset.classes[r.class].name),
                        })?;
                    objects.push((r.class, vec![r.views()], target));
                }
            }
        }
        Ok(Self {
            dataset,
            name: name.to_string(),
            candidates: Candidates::from_words(words),
            candidate_ids: split.candidates.iter().map(|&c| dataset.classes[c].id).collect(),
            objects,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_views(&self) -> usize {
        self.objects
            .iter()
            .map(|o| o.1.iter().map(|r| r.len()).sum::<usize>())
            .sum()
    }

    /// Every (object, view) pair of the split in range order; `object`
    /// indexes the split's played classes.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.objects
            .iter()
            .enumerate()
            .flat_map(|(o, (_, ranges, _))| ranges.iter().flat_map(|r| r.clone()).map(move |v| (o, v)))
            .collect()
    }

    pub fn instance(&self, object: usize, view: usize) -> GameInstance<'_> {
        self.make(object, view)
    }

    fn make(&self, object: usize, view: usize) -> GameInstance<'_> {
        let (class, _, target) = self.objects[object];
        GameInstance {
            split: &self.name,
            class,
            class_id: self.dataset.classes[class].id,
            view,
            target,
            sender_view: self
                .dataset
                .sender_view(class, view)
                .iter()
                .map(|&x| f64::from(x))
                .collect(),
            candidates: &self.candidates,
            candidate_ids: &self.candidate_ids,
        }
    }

    /// Uniform object, then a uniform view of that object within the split.
    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GameInstance<'_>, GameError> {
        if self.objects.is_empty() {
            return Err(DataError::EmptySplit(self.name.clone()).into());
        }
        let object = rng.random_range(0..self.objects.len());
        let ranges = &self.objects[object].1;
        let total: usize = ranges.iter().map(|r| r.len()).sum();
        let mut k = rng.random_range(0..total);
        for r in ranges {
            if k < r.len() {
                return Ok(self.make(object, r.start + k));
            }
            k -= r.len();
        }
        unreachable!("view index within total")
    }

    /// Every (object, view) of the split in range order.
    pub fn instances(&self) -> impl Iterator<Item = GameInstance<'_>> + '_ {
        self.objects.iter().enumerate().flat_map(move |(o, (_, ranges, _))| {
            ranges
                .iter()
                .flat_map(|r| r.clone())
                .map(move |v| self.make(o, v))
        })
    }
}

/// Samples an instance from the named split of a dataset.
pub fn sample_instance<'a, R: Rng + ?Sized>(
    split: &'a GameSplit<'a>,
    rng: &mut R,
) -> Result<GameInstance<'a>, GameError> {
    split.sample_instance(rng)
}

#[derive(Debug, Clone)]
pub struct GameInstance<'a> {
    pub split: &'a str,
    /// Dataset index of the object.
    pub class: usize,
    pub class_id: u32,
    pub view: usize,
    /// Position of the true object in the candidate list.
    pub target: usize,
    pub sender_view: Vec<f64>,
    pub candidates: &'a Candidates,
    pub candidate_ids: &'a [u32],
}

/// 1 iff the predicted candidate is the sender's object.
pub fn score(inst: &GameInstance, prediction: usize) -> Result<u8, GameError> {
    if prediction >= inst.candidates.len() {
        return Err(GameError::Prediction {
            index: prediction,
            candidates: inst.candidates.len(),
        });
    }
    Ok(u8::from(prediction == inst.target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub sender_message: BinaryMessage,
    pub sender_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender_attention: Option<Vec<f64>>,
    pub stop_prob: f64,
    pub stop: u8,
    pub belief: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_message: Option<BinaryMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_probs: Option<Vec<f64>>,
    pub memory: Vec<f64>,
}

/// Full record of one episode; one JSON line per episode in log files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub split: String,
    pub class_id: u32,
    pub view: usize,
    pub target: usize,
    pub candidate_ids: Vec<u32>,
    pub initial_message: BinaryMessage,
    pub initial_probs: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub max_steps: usize,
    pub length: usize,
    pub prediction: usize,
    pub predicted_class: u32,
    pub reward: f64,
    pub forced_stop: bool,
}

impl EpisodeTrace {
    pub fn final_belief(&self) -> &[f64] {
        &self.steps[self.length - 1].belief
    }

    /// Rank (1-based) of the true object under the final belief; ties are
    /// ordered toward the lower candidate index.
    pub fn target_rank(&self) -> usize {
        rank_of(self.final_belief(), self.target)
    }

    /// Checks the structural invariants of a finished episode.
    pub fn check(&self, max_steps: usize) -> Result<(), GameError> {
        let bad = |m: String| Err(GameError::Config(format!("malformed trace: {m}")));
        let t = self.length;
        if t == 0 || t > max_steps || self.steps.len() != t {
            return bad(format!("length {t} with {} steps", self.steps.len()));
        }
        for (i, s) in self.steps.iter().enumerate() {
            let last = i + 1 == t;
            if !last && s.stop != 0 {
                return bad(format!("stop bit set at non-terminal step {}", i + 1));
            }
            if last != s.receiver_message.is_none() {
                return bad(format!("receiver message presence wrong at step {}", i + 1));
            }
            let sum: f64 = s.belief.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("belief at step {} sums to {sum}", i + 1));
            }
        }
        if self.steps[t - 1].stop == 0 && !self.forced_stop {
            return bad("last step neither stopped nor forced".into());
        }
        Ok(())
    }
}

/// 1-based rank of `index` in `scores`, ties broken toward lower indices.
pub fn rank_of(scores: &[f64], index: usize) -> usize {
    let s = scores[index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < index))
        .count()
}

/// Identifies one stochastic choice within an episode; steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    InitialMessage,
    SenderMessage(usize),
    Stop(usize),
    ReceiverMessage(usize),
}

/// Supplies the binary actions taken during play.
pub trait ActionSource {
    fn choose(&mut self, decision: Decision, probs: &[f64]) -> Result<Vec<u8>, GameError>;
}

/// Per-coordinate argmax.
#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl ActionSource for Greedy {
    fn choose(&mut self, _: Decision, probs: &[f64]) -> Result<Vec<u8>, GameError> {
        Ok(BinaryMessage::greedy(probs).0)
    }
}

/// Independent Bernoulli draws.
#[derive(Debug)]
pub struct Sampler<'r, R: Rng + ?Sized>(pub &'r mut R);

impl<R: Rng + ?Sized> ActionSource for Sampler<'_, R> {
    fn choose(&mut self, _: Decision, probs: &[f64]) -> Result<Vec<u8>, GameError> {
        Ok(probs
            .iter()
            .map(|&p| u8::from(self.0.random::<f64>() < p))
            .collect())
    }
}

/// Re-issues the actions recorded in a trace.
#[derive(Debug, Clone, Copy)]
pub struct Replay<'t>(pub &'t EpisodeTrace);

impl ActionSource for Replay<'_> {
    fn choose(&mut self, decision: Decision, _: &[f64]) -> Result<Vec<u8>, GameError> {
        let step = |t: usize| self.0.steps.get(t.wrapping_sub(1)).ok_or(GameError::Replay(decision));
        Ok(match decision {
            Decision::InitialMessage => self.0.initial_message.bits().to_vec(),
            Decision::SenderMessage(t) => step(t)?.sender_message.bits().to_vec(),
            Decision::Stop(t) => vec![step(t)?.stop],
            Decision::ReceiverMessage(t) => step(t)?
                .receiver_message
                .as_ref()
                .ok_or(GameError::Replay(decision))?
                .bits()
                .to_vec(),
        })
    }
}

/// Tape handles of one step's distributions.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub sender_probs: Var,
    pub stop_prob: Var,
    pub belief: Var,
    pub receiver_probs: Option<Var>,
}

/// An episode played on a tape: the trace plus what the losses differentiate.
#[derive(Debug, Clone)]
pub struct EpisodeGraph {
    pub trace: EpisodeTrace,
    pub initial_probs: Var,
    pub steps: Vec<StepVars>,
    /// `h_r^0` followed by the memory after every step.
    pub memories: Vec<Vec<f64>>,
    /// Mean of the sender view vectors.
    pub view_summary: Vec<f64>,
}

/// Plays one episode, recording every distribution on `tape`.
pub fn play_on_tape(
    tape: &mut Tape,
    sender: &SenderAgent,
    receiver: &ReceiverAgent,
    inst: &GameInstance,
    cfg: &GameConfig,
    actions: &mut dyn ActionSource,
) -> Result<EpisodeGraph, GameError> {
    cfg.validate(inst.candidates.len())?;
    let store = tape.store();
    for (who, d) in [
        ("sender", sender.message_dim(store)),
        ("receiver", receiver.message_dim(store)),
    ] {
        if d != cfg.message_dim {
            return Err(GameError::Config(format!(
                "{who} emits {d}-bit messages but the game uses d = {}",
                cfg.message_dim
            )));
        }
    }
    let view = sender.prepare(tape, &inst.sender_view)?;
    let cands = receiver.prepare(tape, inst.candidates)?;
    let (h0, m0_probs) = receiver.initial(tape);
    let initial_probs = tape.value(m0_probs).to_vec();
    let initial_message = BinaryMessage::new(actions.choose(Decision::InitialMessage, &initial_probs)?)?;

    let mut m_r = tape.input(initial_message.to_f64());
    let mut h = h0;
    let mut memories = vec![tape.value(h0).to_vec()];
    let mut steps = Vec::new();
    let mut vars = Vec::new();
    let mut forced_stop = false;
    for t in 1..=cfg.max_steps {
        let out = sender.forward(tape, &view, m_r)?;
        let sender_probs = tape.value(out.probs).to_vec();
        let m_s = BinaryMessage::new(actions.choose(Decision::SenderMessage(t), &sender_probs)?)?;
        let m_s_var = tape.input(m_s.to_f64());
        let state = receiver.update(tape, m_s_var, h, &cands)?;
        let stop_prob = tape.scalar(state.stop_prob);
        let stop = BinaryMessage::new(actions.choose(Decision::Stop(t), &[stop_prob])?)?.bits()[0];
        let terminal = stop == 1 || t == cfg.max_steps;
        let (receiver_message, receiver_probs, receiver_var) = if terminal {
            forced_stop = stop == 0;
            (None, None, None)
        } else {
            let p = receiver.message(tape, &state)?;
            let probs = tape.value(p).to_vec();
            let m = BinaryMessage::new(actions.choose(Decision::ReceiverMessage(t), &probs)?)?;
            m_r = tape.input(m.to_f64());
            (Some(m), Some(probs), Some(p))
        };
        memories.push(tape.value(state.memory).to_vec());
        steps.push(StepRecord {
            sender_message: m_s,
            sender_probs,
            sender_attention: out.attention.map(|a| tape.value(a).to_vec()),
            stop_prob,
            stop,
            belief: tape.value(state.belief).to_vec(),
            receiver_message,
            receiver_probs,
            memory: tape.value(state.memory).to_vec(),
        });
        vars.push(StepVars {
            sender_probs: out.probs,
            stop_prob: state.stop_prob,
            belief: state.belief,
            receiver_probs: receiver_var,
        });
        h = state.memory;
        if terminal {
            break;
        }
    }
    let length = steps.len();
    let prediction = kernels::argmax(&steps[length - 1].belief);
    let reward = f64::from(score(inst, prediction)?);
    let dim = sender.set_size.max(1);
    let chunk = inst.sender_view.len() / dim;
    let view_vectors: Vec<Vec<f64>> = inst.sender_view.chunks(chunk).map(<[f64]>::to_vec).collect();
    Ok(EpisodeGraph {
        trace: EpisodeTrace {
            split: inst.split.to_string(),
            class_id: inst.class_id,
            view: inst.view,
            target: inst.target,
            candidate_ids: inst.candidate_ids.to_vec(),
            initial_message,
            initial_probs,
            steps,
            max_steps: cfg.max_steps,
            length,
            prediction,
            predicted_class: inst.candidate_ids[prediction],
            reward,
            forced_stop,
        },
        initial_probs: m0_probs,
        steps: vars,
        memories,
        view_summary: kernels::mean_of(&view_vectors),
    })
}

/// Plays one episode with actions drawn according to `cfg.mode`.
pub fn play_episode<R: Rng + ?Sized>(
    store: &ParamStore,
    sender: &SenderAgent,
    receiver: &ReceiverAgent,
    inst: &GameInstance,
    cfg: &GameConfig,
    rng: &mut R,
) -> Result<EpisodeTrace, GameError> {
    let mut tape = Tape::new(store);
    let graph = match cfg.mode {
        PlayMode::TestGreedy => play_on_tape(&mut tape, sender, receiver, inst, cfg, &mut Greedy)?,
        PlayMode::TrainSample => {
            play_on_tape(&mut tape, sender, receiver, inst, cfg, &mut Sampler(rng))?
        }
    };
    Ok(graph.trace)
}
