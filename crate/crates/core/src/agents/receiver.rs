use rand::Rng;

use crate::nn::{gru_step, GruParams, NnError, ParamId, ParamStore, Tape, Var};

use super::ModelConfig;

/// Scorer `v . relu(A w + B h + c)` over the word vectors of a description.
#[derive(Debug, Clone, Copy)]
pub struct ReceiverAttention {
    pub word_w: ParamId,
    pub mem_w: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
}

/// Recurrent receiver: GRU memory, stop head, candidate scorer and message head.
#[derive(Debug, Clone)]
pub struct ReceiverAgent {
    pub gru: GruParams,
    pub h0: ParamId,
    pub m0_logits: ParamId,
    pub stop_w: ParamId,
    pub stop_b: ParamId,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub msg_wr: ParamId,
    pub msg_ur: ParamId,
    pub msg_c: ParamId,
    pub msg_out_w: ParamId,
    pub msg_out_b: ParamId,
    pub attention: Option<ReceiverAttention>,
}

/// A candidate set of receiver views as plain vectors.
///
/// `pooled[i]` is the mean word vector of candidate `i`; `words[i]` holds the
/// individual word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub pooled: Vec<Vec<f64>>,
    pub words: Vec<Vec<Vec<f64>>>,
}

impl Candidates {
    pub fn from_words(words: Vec<Vec<Vec<f64>>>) -> Self {
        let pooled = words
            .iter()
            .map(|ws| crate::nn::kernels::mean_of(ws))
            .collect();
        Self { pooled, words }
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }
}

/// Candidates placed on a tape.
#[derive(Debug, Clone)]
pub enum PreparedCandidates {
    /// Embeddings `g_r(o_i)` computed once per episode.
    Pooled(Vec<Var>),
    /// Word vectors, pooled each step against the current memory.
    Words(Vec<Vec<Var>>),
}

impl PreparedCandidates {
    pub fn len(&self) -> usize {
        match self {
            Self::Pooled(v) => v.len(),
            Self::Words(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Receiver quantities after reading one sender message.
#[derive(Debug, Clone)]
pub struct ReceiverState {
    pub memory: Var,
    pub stop_prob: Var,
    pub belief: Var,
    pub embeddings: Vec<Var>,
}

impl ReceiverAgent {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let q = cfg.memory_size;
        let d = cfg.message_dim;
        let k = cfg.receiver_message_hidden;
        let attention = if cfg.receiver_attention {
            let a = cfg.receiver_attention_hidden;
            Some(ReceiverAttention {
                word_w: store.add_weight("receiver.att.word_w", a, cfg.receiver_dim, rng)?,
                mem_w: store.add_weight("receiver.att.mem_w", a, q, rng)?,
                bias: store.add_zeros("receiver.att.bias", vec![a])?,
                score: store.add_weight("receiver.att.score", 1, a, rng)?,
            })
        } else {
            None
        };
        Ok(Self {
            gru: GruParams::register(store, "receiver.gru", d, q, rng)?,
            h0: store.add_zeros("receiver.h0", vec![q])?,
            m0_logits: store.add_zeros("receiver.m0_logits", vec![d])?,
            stop_w: store.add_weight("receiver.stop.w", 1, q, rng)?,
            stop_b: store.add_zeros("receiver.stop.b", vec![1])?,
            embed_w: store.add_weight("receiver.embed.w", q, cfg.receiver_dim, rng)?,
            embed_b: store.add_zeros("receiver.embed.b", vec![q])?,
            msg_wr: store.add_weight("receiver.msg.w_r", k, q, rng)?,
            msg_ur: store.add_weight("receiver.msg.u_r", k, q, rng)?,
            msg_c: store.add_zeros("receiver.msg.c", vec![k])?,
            msg_out_w: store.add_weight("receiver.msg.out_w", d, k, rng)?,
            msg_out_b: store.add_zeros("receiver.msg.out_b", vec![d])?,
            attention,
        })
    }

    pub fn memory_size(&self, store: &ParamStore) -> usize {
        store.get(self.h0).len()
    }

    pub fn message_dim(&self, store: &ParamStore) -> usize {
        store.get(self.m0_logits).len()
    }

    /// Learned initial memory and initial-message probabilities.
    pub fn initial(&self, tape: &mut Tape) -> (Var, Var) {
        let h0 = tape.param(self.h0);
        let logits = tape.param(self.m0_logits);
        (h0, tape.sigmoid(logits))
    }

    pub fn prepare(
        &self,
        tape: &mut Tape,
        candidates: &Candidates,
    ) -> Result<PreparedCandidates, NnError> {
        if candidates.is_empty() {
            return Err(NnError::Empty("receiver candidates"));
        }
        match self.attention {
            None => candidates
                .pooled
                .iter()
                .map(|v| {
                    let x = tape.input(v.clone());
                    tape.affine(x, self.embed_w, Some(self.embed_b))
                })
                .collect::<Result<_, _>>()
                .map(PreparedCandidates::Pooled),
            Some(_) => Ok(PreparedCandidates::Words(
                candidates
                    .words
                    .iter()
                    .map(|ws| ws.iter().map(|w| tape.input(w.clone())).collect())
                    .collect(),
            )),
        }
    }

    /// Attention-pooled embedding of one description: softmax-weighted word
    /// vectors (scored against `h`) mapped through the embedding layer.
    pub fn attend(&self, tape: &mut Tape, words: &[Var], h: Var) -> Result<(Var, Var), NnError> {
        let att = self.attention.ok_or(NnError::Config(
            "receiver has no attention scorer".into(),
        ))?;
        let from_mem = tape.affine(h, att.mem_w, Some(att.bias))?;
        self.attend_with(tape, &att, words, from_mem)
    }

    fn attend_with(
        &self,
        tape: &mut Tape,
        att: &ReceiverAttention,
        words: &[Var],
        from_mem: Var,
    ) -> Result<(Var, Var), NnError> {
        if words.is_empty() {
            return Err(NnError::Empty("receiver_attend"));
        }
        let mut scores = Vec::with_capacity(words.len());
        for &w in words {
            let from_word = tape.affine(w, att.word_w, None)?;
            let pre = tape.add(from_word, from_mem)?;
            let hid = tape.relu(pre);
            scores.push(tape.affine(hid, att.score, None)?);
        }
        let scores = tape.concat(&scores)?;
        let weights = tape.softmax(scores)?;
        let pooled = tape.weighted_sum(weights, words)?;
        Ok((tape.affine(pooled, self.embed_w, Some(self.embed_b))?, weights))
    }

    /// `g_r(o_i)` for every candidate given the current memory.
    pub fn embed(
        &self,
        tape: &mut Tape,
        candidates: &PreparedCandidates,
        h: Var,
    ) -> Result<Vec<Var>, NnError> {
        match (candidates, self.attention) {
            (PreparedCandidates::Pooled(g), _) => Ok(g.clone()),
            (PreparedCandidates::Words(words), Some(att)) => {
                let from_mem = tape.affine(h, att.mem_w, Some(att.bias))?;
                words
                    .iter()
                    .map(|ws| Ok(self.attend_with(tape, &att, ws, from_mem)?.0))
                    .collect()
            }
            (PreparedCandidates::Words(_), None) => Err(NnError::Config(
                "word-level candidates need a receiver attention scorer".into(),
            )),
        }
    }

    /// Belief `softmax_i(g_r(o_i) . h)` over the candidates.
    pub fn predict(&self, tape: &mut Tape, h: Var, embeddings: &[Var]) -> Result<Var, NnError> {
        if embeddings.is_empty() {
            return Err(NnError::Empty("receiver_predict"));
        }
        let scores = embeddings
            .iter()
            .map(|&g| tape.dot(g, h))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = tape.concat(&scores)?;
        tape.softmax(scores)
    }

    /// Reads a sender message: memory update, stop probability and belief.
    pub fn update(
        &self,
        tape: &mut Tape,
        m_s: Var,
        h_prev: Var,
        candidates: &PreparedCandidates,
    ) -> Result<ReceiverState, NnError> {
        let memory = gru_step(tape, m_s, h_prev, &self.gru)?;
        let logit = tape.affine(memory, self.stop_w, Some(self.stop_b))?;
        let stop_prob = tape.sigmoid(logit);
        let embeddings = self.embed(tape, candidates, memory)?;
        let belief = self.predict(tape, memory, &embeddings)?;
        Ok(ReceiverState {
            memory,
            stop_prob,
            belief,
            embeddings,
        })
    }

    /// Probabilities of the receiver's next message.
    pub fn message(&self, tape: &mut Tape, state: &ReceiverState) -> Result<Var, NnError> {
        let expected = tape.weighted_sum(state.belief, &state.embeddings)?;
        let a = tape.affine(state.memory, self.msg_wr, Some(self.msg_c))?;
        let b = tape.affine(expected, self.msg_ur, None)?;
        let pre = tape.add(a, b)?;
        let hidden = tape.tanh(pre);
        let logits = tape.affine(hidden, self.msg_out_w, Some(self.msg_out_b))?;
        Ok(tape.sigmoid(logits))
    }

    /// Full step: memory, stop probability, belief and next-message probabilities.
    pub fn step(
        &self,
        tape: &mut Tape,
        m_s: Var,
        h_prev: Var,
        candidates: &PreparedCandidates,
    ) -> Result<(ReceiverState, Var), NnError> {
        let state = self.update(tape, m_s, h_prev, candidates)?;
        let msg = self.message(tape, &state)?;
        Ok((state, msg))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.gru.ids().to_vec();
        ids.extend([
            self.h0,
            self.m0_logits,
            self.stop_w,
            self.stop_b,
            self.embed_w,
            self.embed_b,
            self.msg_wr,
            self.msg_ur,
            self.msg_c,
            self.msg_out_w,
            self.msg_out_b,
        ]);
        if let Some(a) = self.attention {
            ids.extend([a.word_w, a.mem_w, a.bias, a.score]);
        }
        ids
    }
}
