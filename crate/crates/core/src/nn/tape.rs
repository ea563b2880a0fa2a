//! Vector-valued reverse-mode tape.
//!
//! Every node holds a dense `f64` vector. Parameters are read straight from the
//! borrowed [`ParamStore`]; their gradients land in a caller-supplied
//! [`Gradients`] buffer so that several tapes can run against one snapshot.

use super::param::{Gradients, ParamId, ParamStore};
use super::{kernels, NnError, PROB_CLAMP};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn inside_clamp(p: f64) -> bool {
    p > PROB_CLAMP && p < 1.0 - PROB_CLAMP
}

/// Entropy in nats of a Bernoulli(p), with `p` clamped away from 0 and 1.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let p = clamp_prob(p);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Log-probability of `bit` under Bernoulli(p), with `p` clamped.
pub fn bernoulli_log_prob(p: f64, bit: u8) -> f64 {
    let p = clamp_prob(p);
    if bit == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Concat(Vec<Var>),
    Activate(Activation, Var),
    Softmax(Var),
    Dot(Var, Var),
    Sum(Var),
    Scale(Var, f64),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    StopGrad,
    BernoulliLogProb {
        p: Var,
        bits: Vec<u8>,
    },
    BernoulliEntropy(Var),
    NegLogPick {
        p: Var,
        index: usize,
    },
    SquaredError {
        x: Var,
        target: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Record of one forward pass. Single use: `backward` consumes it.
#[derive(Debug)]
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
    visited: Vec<usize>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            consumed: false,
            visited: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Node indices visited by the last `backward`, in visiting order.
    pub fn backward_order(&self) -> &[usize] {
        &self.visited
    }

    fn push(&mut self, op: Op, value: Vec<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_dim(&self, op: &'static str, a: Var, b: Var) -> Result<usize, NnError> {
        let (da, db) = (self.dim(a), self.dim(b));
        if da != db {
            return Err(NnError::Dimension {
                op,
                detail: format!("operands have lengths {da} and {db}"),
            });
        }
        Ok(da)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        self.push(Op::Input, values, false)
    }

    /// Leaf holding a copy of a parameter tensor's values.
    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.store.get(id);
        let needs = !t.frozen;
        self.push(Op::Param(id), t.values.clone(), needs)
    }

    /// `W x + b` with `W` of shape `[out, in]`.
    pub fn affine(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var, NnError> {
        let wt = self.store.get(w);
        let (out, inp) = wt.matrix_dims();
        let xv = &self.nodes[x.0].value;
        if wt.shape.len() != 2 || xv.len() != inp {
            return Err(NnError::Dimension {
                op: "affine",
                detail: format!(
                    "weight {} has shape {:?} but input has length {}",
                    wt.name,
                    wt.shape,
                    xv.len()
                ),
            });
        }
        let mut y = match b {
            Some(bid) => {
                let bt = self.store.get(bid);
                if bt.len() != out {
                    return Err(NnError::Dimension {
                        op: "affine",
                        detail: format!(
                            "bias {} has {} entries but weight {} has {out} rows",
                            bt.name,
                            bt.len(),
                            wt.name
                        ),
                    });
                }
                bt.values.clone()
            }
            None => vec![0.0; out],
        };
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += kernels::dot(&wt.values[i * inp..(i + 1) * inp], xv);
        }
        let needs = self.needs(x) || !wt.frozen || b.is_some_and(|b| !self.store.get(b).frozen);
        Ok(self.push(Op::Affine { x, w, b }, y, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_dim("add", a, b)?;
        let v = kernels::zip_map(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), v, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_dim("sub", a, b)?;
        let v = kernels::zip_map(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), v, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_dim("mul", a, b)?;
        let v = kernels::zip_map(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), v, needs))
    }

    /// Elementwise sum of equally sized vectors.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var, NnError> {
        let first = *vars.first().ok_or(NnError::Empty("add_n"))?;
        let mut v = self.value(first).to_vec();
        for &x in &vars[1..] {
            self.same_dim("add_n", first, x)?;
            for (a, b) in v.iter_mut().zip(self.value(x)) {
                *a += b;
            }
        }
        let needs = vars.iter().any(|&x| self.needs(x));
        Ok(self.push(Op::AddN(vars.to_vec()), v, needs))
    }

    pub fn concat(&mut self, vars: &[Var]) -> Result<Var, NnError> {
        if vars.is_empty() {
            return Err(NnError::Empty("concat"));
        }
        let mut v = Vec::with_capacity(vars.iter().map(|&x| self.dim(x)).sum());
        for &x in vars {
            v.extend_from_slice(self.value(x));
        }
        let needs = vars.iter().any(|&x| self.needs(x));
        Ok(self.push(Op::Concat(vars.to_vec()), v, needs))
    }

    pub fn activate(&mut self, kind: Activation, x: Var) -> Var {
        let v = self.value(x).iter().map(|&e| kind.apply(e)).collect();
        let needs = self.needs(x);
        self.push(Op::Activate(kind, x), v, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activate(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activate(Activation::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(Activation::Relu, x)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, NnError> {
        let v = kernels::softmax(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(Op::Softmax(x), v, needs))
    }

    /// Inner product, as a length-1 node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_dim("dot", a, b)?;
        let v = kernels::dot(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Dot(a, b), vec![v], needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum(x), vec![v], needs)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).iter().map(|e| e * c).collect();
        let needs = self.needs(x);
        self.push(Op::Scale(x, c), v, needs)
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var, NnError> {
        let first = *items.first().ok_or(NnError::Empty("weighted_sum"))?;
        if self.dim(weights) != items.len() {
            return Err(NnError::Dimension {
                op: "weighted_sum",
                detail: format!("{} weights for {} items", self.dim(weights), items.len()),
            });
        }
        let mut v = vec![0.0; self.dim(first)];
        for (k, &item) in items.iter().enumerate() {
            self.same_dim("weighted_sum", first, item)?;
            let w = self.nodes[weights.0].value[k];
            for (a, b) in v.iter_mut().zip(self.value(item)) {
                *a += w * b;
            }
        }
        let needs = self.needs(weights) || items.iter().any(|&x| self.needs(x));
        Ok(self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            v,
            needs,
        ))
    }

    /// Copies the value and blocks any gradient flowing back through it.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let v = self.value(x).to_vec();
        self.push(Op::StopGrad, v, false)
    }

    /// `sum_j log p(bit_j)` under independent Bernoulli probabilities `p`.
    pub fn bernoulli_log_prob(&mut self, p: Var, bits: &[u8]) -> Result<Var, NnError> {
        if self.dim(p) != bits.len() {
            return Err(NnError::Dimension {
                op: "bernoulli_log_prob",
                detail: format!("{} probabilities for {} bits", self.dim(p), bits.len()),
            });
        }
        let v = self
            .value(p)
            .iter()
            .zip(bits)
            .map(|(&pj, &b)| bernoulli_log_prob(pj, b))
            .sum();
        let needs = self.needs(p);
        Ok(self.push(
            Op::BernoulliLogProb {
                p,
                bits: bits.to_vec(),
            },
            vec![v],
            needs,
        ))
    }

    /// Sum of Bernoulli entropies (nats) over the coordinates of `p`.
    pub fn bernoulli_entropy(&mut self, p: Var) -> Var {
        let v = self.value(p).iter().map(|&pj| bernoulli_entropy(pj)).sum();
        let needs = self.needs(p);
        self.push(Op::BernoulliEntropy(p), vec![v], needs)
    }

    /// `-log p[index]` with `p` clamped.
    pub fn neg_log_pick(&mut self, p: Var, index: usize) -> Result<Var, NnError> {
        if index >= self.dim(p) {
            return Err(NnError::Dimension {
                op: "neg_log_pick",
                detail: format!("index {index} out of range for length {}", self.dim(p)),
            });
        }
        let v = -clamp_prob(self.value(p)[index]).ln();
        let needs = self.needs(p);
        Ok(self.push(Op::NegLogPick { p, index }, vec![v], needs))
    }

    /// `(target - x)^2` for a scalar node `x`.
    pub fn squared_error(&mut self, x: Var, target: f64) -> Result<Var, NnError> {
        if self.dim(x) != 1 {
            return Err(NnError::Dimension {
                op: "squared_error",
                detail: format!("expected a scalar, got length {}", self.dim(x)),
            });
        }
        let d = target - self.scalar(x);
        let needs = self.needs(x);
        Ok(self.push(Op::SquaredError { x, target }, vec![d * d], needs))
    }

    /// Reverse sweep from the scalar `root`, seeding its gradient with 1.0.
    ///
    /// Parameter gradients are added (`+=`) into `grads`. The tape is consumed.
    pub fn backward(&mut self, root: Var, grads: &mut Gradients) -> Result<(), NnError> {
        if self.consumed {
            return Err(NnError::TapeConsumed);
        }
        if self.dim(root) != 1 {
            return Err(NnError::Dimension {
                op: "backward",
                detail: format!("root must be scalar, has length {}", self.dim(root)),
            });
        }
        self.consumed = true;
        self.visited.clear();
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        adj[root.0] = vec![1.0];
        for i in (0..=root.0).rev() {
            if adj[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            self.visited.push(i);
            let g = std::mem::take(&mut adj[i]);
            self.propagate(i, &g, &mut adj, grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Vec<f64>], grads: &mut Gradients) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        // Accumulate `f(k)` into the adjoint of `v` if it participates in the gradient.
        let mut acc = |v: Var, f: &dyn Fn(usize) -> f64| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let n = nodes[v.0].value.len();
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = (0..n).map(f).collect();
            } else {
                for (k, s) in slot.iter_mut().enumerate() {
                    *s += f(k);
                }
            }
        };
        match &node.op {
            Op::Input | Op::StopGrad => {}
            Op::Param(id) => {
                for (d, s) in grads.get_mut(*id).iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Affine { x, w, b } => {
                let wt = self.store.get(*w);
                let (out, inp) = wt.matrix_dims();
                let xv = &nodes[x.0].value;
                if !wt.frozen {
                    let gw = grads.get_mut(*w);
                    for (r, &gr) in g.iter().enumerate().take(out) {
                        if gr != 0.0 {
                            kernels::axpy(gr, xv, &mut gw[r * inp..(r + 1) * inp]);
                        }
                    }
                }
                if let Some(b) = b {
                    if !self.store.get(*b).frozen {
                        for (d, s) in grads.get_mut(*b).iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
                if nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; inp];
                    for (r, &gr) in g.iter().enumerate().take(out) {
                        if gr != 0.0 {
                            kernels::axpy(gr, &wt.values[r * inp..(r + 1) * inp], &mut dx);
                        }
                    }
                    acc(*x, &|k| dx[k]);
                }
            }
            Op::Add(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &|k| g[k] * bv[k]);
                acc(*b, &|k| g[k] * av[k]);
            }
            Op::AddN(vars) => {
                for &v in vars {
                    acc(v, &|k| g[k]);
                }
            }
            Op::Concat(vars) => {
                let mut off = 0;
                for &v in vars {
                    let n = nodes[v.0].value.len();
                    acc(v, &|k| g[off + k]);
                    off += n;
                }
            }
            Op::Activate(kind, x) => {
                let y = &node.value;
                let xv = &nodes[x.0].value;
                match kind {
                    Activation::Sigmoid => acc(*x, &|k| g[k] * y[k] * (1.0 - y[k])),
                    Activation::Tanh => acc(*x, &|k| g[k] * (1.0 - y[k] * y[k])),
                    Activation::Relu => acc(*x, &|k| if xv[k] > 0.0 { g[k] } else { 0.0 }),
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let gy = kernels::dot(g, y);
                acc(*x, &|k| y[k] * (g[k] - gy));
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &|k| g[0] * bv[k]);
                acc(*b, &|k| g[0] * av[k]);
            }
            Op::Sum(x) => acc(*x, &|_| g[0]),
            Op::Scale(x, c) => acc(*x, &|k| g[k] * c),
            Op::WeightedSum { weights, items } => {
                let wv = &nodes[weights.0].value;
                let dw: Vec<f64> = items
                    .iter()
                    .map(|it| kernels::dot(g, &nodes[it.0].value))
                    .collect();
                acc(*weights, &|k| dw[k]);
                for (j, &it) in items.iter().enumerate() {
                    let w = wv[j];
                    acc(it, &|k| w * g[k]);
                }
            }
            Op::BernoulliLogProb { p, bits } => {
                let pv = &nodes[p.0].value;
                acc(*p, &|k| {
                    let pk = pv[k];
                    if !inside_clamp(pk) {
                        0.0
                    } else if bits[k] == 1 {
                        g[0] / pk
                    } else {
                        -g[0] / (1.0 - pk)
                    }
                });
            }
            Op::BernoulliEntropy(p) => {
                let pv = &nodes[p.0].value;
                acc(*p, &|k| {
                    let pk = pv[k];
                    if inside_clamp(pk) {
                        g[0] * ((1.0 - pk) / pk).ln()
                    } else {
                        0.0
                    }
                });
            }
            Op::NegLogPick { p, index } => {
                let pk = nodes[p.0].value[*index];
                let d = if inside_clamp(pk) { -g[0] / pk } else { 0.0 };
                let idx = *index;
                acc(*p, &|k| if k == idx { d } else { 0.0 });
            }
            Op::SquaredError { x, target } => {
                let d = -2.0 * (target - nodes[x.0].value[0]);
                acc(*x, &|_| g[0] * d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::ParamTensor;

    fn store_with(ts: Vec<ParamTensor>) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = ts.into_iter().map(|t| s.insert(t).unwrap()).collect();
        (s, ids)
    }

    #[test]
    fn affine_zero_weights() {
        let (s, ids) = store_with(vec![
            ParamTensor::zeros("w", vec![2, 2]),
            ParamTensor::zeros("b", vec![2]),
        ]);
        let mut t = Tape::new(&s);
        let x = t.input(vec![1.0, 1.0]);
        let y = t.affine(x, ids[0], Some(ids[1])).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn affine_identity() {
        let (s, ids) = store_with(vec![
            ParamTensor::from_values("w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            ParamTensor::from_values("b", vec![2], vec![0.5, -0.5]).unwrap(),
        ]);
        let mut t = Tape::new(&s);
        let x = t.input(vec![1.0, 0.0]);
        let y = t.affine(x, ids[0], Some(ids[1])).unwrap();
        assert_eq!(t.value(y), &[1.5, -0.5]);
    }

    #[test]
    fn affine_shape_mismatch_names_tensor() {
        let (s, ids) = store_with(vec![ParamTensor::zeros("enc.w", vec![2, 3])]);
        let mut t = Tape::new(&s);
        let x = t.input(vec![1.0, 0.0]);
        let err = t.affine(x, ids[0], None).unwrap_err();
        assert!(err.to_string().contains("enc.w"), "{err}");
    }

    #[test]
    fn activations_at_known_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        // 1 / (1 + e^-2) evaluated to 20 digits: 0.88079707797788244406
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn sum_of_param_gives_ones() {
        let (s, ids) = store_with(vec![
            ParamTensor::from_values("a", vec![3], vec![1.0, 2.0, 3.0]).unwrap(),
            ParamTensor::from_values("unused", vec![2], vec![4.0, 5.0]).unwrap(),
        ]);
        let mut grads = s.new_gradients();
        grads.get_mut(ids[1]).copy_from_slice(&[0.25, -0.5]);
        let mut t = Tape::new(&s);
        let a = t.param(ids[0]);
        let l = t.sum(a);
        t.backward(l, &mut grads).unwrap();
        assert_eq!(grads.get(ids[0]), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get(ids[1]), &[0.25, -0.5]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let (s, ids) = store_with(vec![ParamTensor::zeros("a", vec![1])]);
        let mut grads = s.new_gradients();
        let mut t = Tape::new(&s);
        let a = t.param(ids[0]);
        let l = t.sum(a);
        t.backward(l, &mut grads).unwrap();
        assert!(matches!(
            t.backward(l, &mut grads),
            Err(NnError::TapeConsumed)
        ));
    }

    #[test]
    fn backward_visits_in_reverse_creation_order() {
        let (s, ids) = store_with(vec![
            ParamTensor::from_values("a", vec![2], vec![0.3, -0.2]).unwrap(),
        ]);
        let mut grads = s.new_gradients();
        let mut t = Tape::new(&s);
        let a = t.param(ids[0]);
        let b = t.tanh(a);
        let c = t.mul(a, b).unwrap();
        let d = t.sum(c);
        t.backward(d, &mut grads).unwrap();
        assert_eq!(t.backward_order(), &[3, 2, 1, 0]);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let (s, ids) = store_with(vec![
            ParamTensor::from_values("a", vec![2], vec![0.3, -0.2]).unwrap(),
        ]);
        let mut grads = s.new_gradients();
        let mut t = Tape::new(&s);
        let a = t.param(ids[0]);
        let b = t.stop_grad(a);
        let l = t.sum(b);
        t.backward(l, &mut grads).unwrap();
        assert_eq!(grads.get(ids[0]), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = kernels::softmax(&[0.0, 3.0_f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!(kernels::softmax(&[]).is_err());
    }

    #[test]
    fn bernoulli_log_prob_factorizes() {
        let probs = [0.9, 0.2, 0.55];
        let bits = [1u8, 0, 1];
        let total: f64 = probs
            .iter()
            .zip(&bits)
            .map(|(&p, &b)| bernoulli_log_prob(p, b))
            .sum();
        let direct = (0.9_f64 * 0.8 * 0.55).ln();
        assert!((total - direct).abs() < 1e-12);
    }

    #[test]
    fn entropy_values() {
        assert!((bernoulli_entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bernoulli_entropy(0.0) < 2e-6);
        assert!(bernoulli_entropy(1.0) < 2e-6);
        assert!(bernoulli_entropy(0.0) >= 0.0);
    }
}
