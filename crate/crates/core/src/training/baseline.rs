use rand::Rng;

use crate::agents::ModelConfig;
use crate::game::EpisodeGraph;
use crate::nn::{NnError, ParamId, ParamStore, Tape, Var};

/// One-hidden-layer relu regressor with a scalar output.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            w1: store.add_weight(&format!("{prefix}.w1"), hidden, input, rng)?,
            b1: store.add_zeros(&format!("{prefix}.b1"), vec![hidden])?,
            w2: store.add_weight(&format!("{prefix}.w2"), 1, hidden, rng)?,
            b2: store.add_zeros(&format!("{prefix}.b2"), vec![1])?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        let pre = tape.affine(x, self.w1, Some(self.b1))?;
        let h = tape.relu(pre);
        tape.affine(h, self.w2, Some(self.b2))
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Reward predictors `B_s(o_s, m_r^{t-1})` and `B_r(m_s^t, h_r^{t-1})`.
///
/// Inputs enter the tape as constants, so baseline errors never reach the agents.
#[derive(Debug, Clone, Copy)]
pub struct BaselineNet {
    pub sender: Mlp,
    pub receiver: Mlp,
}

/// Baseline outputs for one episode. `initial` scores the receiver's
/// initial message as `B_r(0, h_r^0)`.
#[derive(Debug, Clone)]
pub struct BaselineVars {
    pub sender: Vec<Var>,
    pub receiver: Vec<Var>,
    pub initial: Var,
}

impl BaselineVars {
    pub fn values(&self, tape: &Tape) -> BaselineValues {
        BaselineValues {
            sender: self.sender.iter().map(|&v| tape.scalar(v)).collect(),
            receiver: self.receiver.iter().map(|&v| tape.scalar(v)).collect(),
            initial: tape.scalar(self.initial),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineValues {
    pub sender: Vec<f64>,
    pub receiver: Vec<f64>,
    pub initial: f64,
}

impl BaselineValues {
    /// Baselines that predict `r` at every decision.
    pub fn constant(length: usize, r: f64) -> Self {
        Self {
            sender: vec![r; length],
            receiver: vec![r; length],
            initial: r,
        }
    }
}

impl BaselineNet {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let h = cfg.baseline_hidden;
        Ok(Self {
            sender: Mlp::register(store, "baseline.sender", cfg.sender_dim + cfg.message_dim, h, rng)?,
            receiver: Mlp::register(store, "baseline.receiver", cfg.message_dim + cfg.memory_size, h, rng)?,
        })
    }

    pub fn sender_value(&self, tape: &mut Tape, view: &[f64], m_r: &[f64]) -> Result<Var, NnError> {
        let x = tape.input([view, m_r].concat());
        self.sender.forward(tape, x)
    }

    pub fn receiver_value(&self, tape: &mut Tape, m_s: &[f64], h_prev: &[f64]) -> Result<Var, NnError> {
        let x = tape.input([m_s, h_prev].concat());
        self.receiver.forward(tape, x)
    }

    /// Baseline predictions at every decision of a played episode.
    pub fn evaluate(&self, tape: &mut Tape, graph: &EpisodeGraph) -> Result<BaselineVars, NnError> {
        let tr = &graph.trace;
        let mut sender = Vec::with_capacity(tr.length);
        let mut receiver = Vec::with_capacity(tr.length);
        let mut m_r = tr.initial_message.to_f64();
        for (t, step) in tr.steps.iter().enumerate() {
            sender.push(self.sender_value(tape, &graph.view_summary, &m_r)?);
            receiver.push(self.receiver_value(tape, &step.sender_message.to_f64(), &graph.memories[t])?);
            if let Some(m) = &step.receiver_message {
                m_r = m.to_f64();
            }
        }
        let zeros = vec![0.0; tr.initial_message.len()];
        let initial = self.receiver_value(tape, &zeros, &graph.memories[0])?;
        Ok(BaselineVars {
            sender,
            receiver,
            initial,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.sender.ids().into_iter().chain(self.receiver.ids()).collect()
    }
}
