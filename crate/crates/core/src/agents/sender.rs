use rand::Rng;

use crate::nn::{NnError, ParamId, ParamStore, Tape, Var};

use super::ModelConfig;

/// Attention scorer over the vectors of a sender view.
#[derive(Debug, Clone, Copy)]
pub struct SenderAttention {
    pub view_w: ParamId,
    pub view_b: ParamId,
    pub msg_w: ParamId,
    pub score: ParamId,
}

/// Memory-less sender: maps (view, receiver message) to `d` Bernoulli probabilities.
#[derive(Debug, Clone)]
pub struct SenderAgent {
    pub img_w: ParamId,
    pub img_b: ParamId,
    pub msg_w: ParamId,
    pub msg_b: ParamId,
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub attention: Option<SenderAttention>,
    pub set_size: usize,
}

/// Sender view placed on a tape.
#[derive(Debug, Clone)]
pub enum PreparedView {
    /// Single feature vector with its (step-independent) embedding.
    Pooled { raw: Var, embedded: Var },
    /// Region vectors, pooled per step by attention.
    Regions(Vec<Var>),
}

#[derive(Debug, Clone, Copy)]
pub struct SenderOutput {
    pub probs: Var,
    pub attention: Option<Var>,
}

impl SenderAgent {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let e = cfg.embed_dim;
        let attention = if cfg.sender_attention {
            let a = cfg.sender_attention_hidden;
            Some(SenderAttention {
                view_w: store.add_weight("sender.att.view_w", a, cfg.sender_dim, rng)?,
                view_b: store.add_zeros("sender.att.view_b", vec![a])?,
                msg_w: store.add_weight("sender.att.msg_w", a, cfg.message_dim, rng)?,
                score: store.add_weight("sender.att.score", 1, a, rng)?,
            })
        } else {
            None
        };
        Ok(Self {
            img_w: store.add_weight("sender.img_embed.w", e, cfg.sender_dim, rng)?,
            img_b: store.add_zeros("sender.img_embed.b", vec![e])?,
            msg_w: store.add_weight("sender.msg_embed.w", e, cfg.message_dim, rng)?,
            msg_b: store.add_zeros("sender.msg_embed.b", vec![e])?,
            hidden_w: store.add_weight("sender.hidden.w", cfg.sender_hidden, 4 * e, rng)?,
            hidden_b: store.add_zeros("sender.hidden.b", vec![cfg.sender_hidden])?,
            out_w: store.add_weight("sender.out.w", cfg.message_dim, cfg.sender_hidden, rng)?,
            out_b: store.add_zeros("sender.out.b", vec![cfg.message_dim])?,
            attention,
            set_size: cfg.sender_set_size,
        })
    }

    pub fn message_dim(&self, store: &ParamStore) -> usize {
        store.get(self.out_b).len()
    }

    fn view_dim(&self, store: &ParamStore) -> usize {
        store.get(self.img_w).shape[1]
    }

    /// Places a raw view (`set_size * dim` values) on the tape.
    pub fn prepare(&self, tape: &mut Tape, view: &[f64]) -> Result<PreparedView, NnError> {
        let dim = self.view_dim(tape.store());
        if view.is_empty() || !view.len().is_multiple_of(dim) {
            return Err(NnError::Dimension {
                op: "sender_prepare",
                detail: format!("view of {} values is not a multiple of {dim}", view.len()),
            });
        }
        match self.attention {
            None => {
                if view.len() != dim {
                    return Err(NnError::Dimension {
                        op: "sender_prepare",
                        detail: format!(
                            "pooled sender needs one {dim}-vector, got {} values",
                            view.len()
                        ),
                    });
                }
                let raw = tape.input(view.to_vec());
                let embedded = tape.affine(raw, self.img_w, Some(self.img_b))?;
                Ok(PreparedView::Pooled { raw, embedded })
            }
            Some(_) => Ok(PreparedView::Regions(
                view.chunks(dim).map(|c| tape.input(c.to_vec())).collect(),
            )),
        }
    }

    /// Softmax-weighted sum of the view vectors, scored against `m_r`.
    /// Returns the pooled vector and the attention weights.
    pub fn attend(&self, tape: &mut Tape, regions: &[Var], m_r: Var) -> Result<(Var, Var), NnError> {
        let att = self.attention.ok_or(NnError::Config(
            "sender has no attention scorer".into(),
        ))?;
        if regions.is_empty() {
            return Err(NnError::Empty("sender_attend"));
        }
        let from_msg = tape.affine(m_r, att.msg_w, Some(att.view_b))?;
        let mut scores = Vec::with_capacity(regions.len());
        for &r in regions {
            let from_view = tape.affine(r, att.view_w, None)?;
            let pre = tape.add(from_view, from_msg)?;
            let hid = tape.tanh(pre);
            scores.push(tape.affine(hid, att.score, None)?);
        }
        let scores = tape.concat(&scores)?;
        let weights = tape.softmax(scores)?;
        let pooled = tape.weighted_sum(weights, regions)?;
        Ok((pooled, weights))
    }

    /// Message probabilities `p(m_s,j = 1)` for a view and the receiver's last message.
    pub fn forward(
        &self,
        tape: &mut Tape,
        view: &PreparedView,
        m_r: Var,
    ) -> Result<SenderOutput, NnError> {
        let d = self.message_dim(tape.store());
        if tape.dim(m_r) != d {
            return Err(NnError::Dimension {
                op: "sender_forward",
                detail: format!("message has {} bits, sender expects {d}", tape.dim(m_r)),
            });
        }
        let (img, attention) = match view {
            PreparedView::Pooled { embedded, .. } => (*embedded, None),
            PreparedView::Regions(regions) => {
                let (pooled, w) = self.attend(tape, regions, m_r)?;
                (tape.affine(pooled, self.img_w, Some(self.img_b))?, Some(w))
            }
        };
        let msg = tape.affine(m_r, self.msg_w, Some(self.msg_b))?;
        let diff = tape.sub(img, msg)?;
        let prod = tape.mul(img, msg)?;
        let joint = tape.concat(&[img, msg, diff, prod])?;
        let pre = tape.affine(joint, self.hidden_w, Some(self.hidden_b))?;
        let hidden = tape.tanh(pre);
        let logits = tape.affine(hidden, self.out_w, Some(self.out_b))?;
        Ok(SenderOutput {
            probs: tape.sigmoid(logits),
            attention,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.img_w,
            self.img_b,
            self.msg_w,
            self.msg_b,
            self.hidden_w,
            self.hidden_b,
            self.out_w,
            self.out_b,
        ];
        if let Some(a) = self.attention {
            ids.extend([a.view_w, a.view_b, a.msg_w, a.score]);
        }
        ids
    }
}
