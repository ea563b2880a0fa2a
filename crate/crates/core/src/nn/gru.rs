use rand::Rng;

use super::{NnError, ParamId, ParamStore, Tape, Var};

/// The nine tensors of a gated recurrent unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut gate = |g: &str| -> Result<(ParamId, ParamId, ParamId), NnError> {
            Ok((
                store.add_weight(&format!("{prefix}.w_{g}"), hidden, input, rng)?,
                store.add_weight(&format!("{prefix}.u_{g}"), hidden, hidden, rng)?,
                store.add_zeros(&format!("{prefix}.b_{g}"), vec![hidden])?,
            ))
        };
        let (w_z, u_z, b_z) = gate("z")?;
        let (w_r, u_r, b_r) = gate("r")?;
        let (w_h, u_h, b_h) = gate("h")?;
        Ok(Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        })
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }

    pub fn hidden_size(&self, store: &ParamStore) -> usize {
        store.get(self.b_z).len()
    }
}

/// One GRU update: `h' = (1 - z) * h + z * h~`.
///
/// `z = sigmoid(W_z x + U_z h + b_z)`, `r = sigmoid(W_r x + U_r h + b_r)`,
/// `h~ = tanh(W_h x + U_h (r * h) + b_h)`.
pub fn gru_step(tape: &mut Tape, x: Var, h: Var, p: &GruParams) -> Result<Var, NnError> {
    let q = p.hidden_size(tape.store());
    if tape.dim(h) != q {
        return Err(NnError::Dimension {
            op: "gru_step",
            detail: format!("memory has length {} but the cell has {q} units", tape.dim(h)),
        });
    }
    let zx = tape.affine(x, p.w_z, Some(p.b_z))?;
    let zh = tape.affine(h, p.u_z, None)?;
    let z_pre = tape.add(zx, zh)?;
    let z = tape.sigmoid(z_pre);

    let rx = tape.affine(x, p.w_r, Some(p.b_r))?;
    let rh = tape.affine(h, p.u_r, None)?;
    let r_pre = tape.add(rx, rh)?;
    let r = tape.sigmoid(r_pre);

    let rh = tape.mul(r, h)?;
    let cx = tape.affine(x, p.w_h, Some(p.b_h))?;
    let ch = tape.affine(rh, p.u_h, None)?;
    let c_pre = tape.add(cx, ch)?;
    let cand = tape.tanh(c_pre);

    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}
