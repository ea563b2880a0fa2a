use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{NnError, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so entries with both
    /// gradients near zero are judged on absolute error.
    pub floor: f64,
    /// Check at most this many entries per tensor (chosen at random).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn tensor(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error.is_nan() || t.max_rel_error > tol)
            .collect()
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// finite differences on every non-frozen parameter tensor.
///
/// `f` must be deterministic: any sampled actions have to be replayed, not redrawn.
pub fn grad_check<F>(
    store: &mut ParamStore,
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape) -> Result<Var, NnError>,
{
    let mut grads = store.new_gradients();
    {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        tape.backward(root, &mut grads)?;
    }
    let eval = |store: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        Ok(tape.scalar(root))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = store.ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        if store.get(id).frozen {
            continue;
        }
        let n = store.get(id).len();
        let entries: Vec<usize> = match cfg.max_entries {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        let mut check = TensorCheck {
            name: store.get(id).name.clone(),
            checked: entries.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for k in entries {
            let orig = store.get(id).values[k];
            store.get_mut(id).values[k] = orig + cfg.step;
            let plus = eval(store)?;
            store.get_mut(id).values[k] = orig - cfg.step;
            let minus = eval(store)?;
            store.get_mut(id).values[k] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let analytic = grads.get(id)[k];
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(cfg.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = rel;
                check.worst_index = k;
                check.analytic_at_worst = analytic;
                check.numeric_at_worst = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamTensor;
    use rand::Rng;

    fn random_store(seed: u64, shapes: &[(&str, Vec<usize>)]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let vals = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.insert(ParamTensor::from_values(*name, shape.clone(), vals).unwrap())
                .unwrap();
        }
        s
    }

    #[test]
    fn linear_model_is_exact() {
        let mut s = random_store(3, &[("w", vec![3, 4]), ("b", vec![3])]);
        let (w, b) = (s.id("w").unwrap(), s.id("b").unwrap());
        let report = grad_check(
            &mut s,
            |t| {
                let x = t.input(vec![0.3, -1.0, 2.0, 0.5]);
                let y = t.affine(x, w, Some(b))?;
                Ok(t.sum(y))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-10, "{report:?}");
    }

    #[test]
    fn affine_gradient_wrt_input_weights_and_bias() {
        // the input is a parameter here so dx is checked as well
        let mut s = random_store(11, &[("w", vec![3, 4]), ("b", vec![3]), ("x", vec![4])]);
        let (w, b, x) = (s.id("w").unwrap(), s.id("b").unwrap(), s.id("x").unwrap());
        let report = grad_check(
            &mut s,
            |t| {
                let xv = t.param(x);
                let y = t.affine(xv, w, Some(b))?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-6, "{report:?}");
    }

    #[test]
    fn sigmoid_bernoulli_log_likelihood() {
        let mut s = random_store(5, &[("w", vec![4, 6]), ("b", vec![4])]);
        let (w, b) = (s.id("w").unwrap(), s.id("b").unwrap());
        let report = grad_check(
            &mut s,
            |t| {
                let x = t.input(vec![0.1, -0.4, 0.9, 0.0, 1.3, -0.7]);
                let logits = t.affine(x, w, Some(b))?;
                let p = t.sigmoid(logits);
                t.bernoulli_log_prob(p, &[1, 0, 0, 1])
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-6, "{report:?}");
    }

    #[test]
    fn composite_ops() {
        let mut s = random_store(
            9,
            &[("a", vec![3]), ("b", vec![3]), ("c", vec![2]), ("w", vec![2, 6])],
        );
        let ids: Vec<_> = ["a", "b", "c", "w"].iter().map(|n| s.id(n).unwrap()).collect();
        let report = grad_check(
            &mut s,
            |t| {
                let a = t.param(ids[0]);
                let b = t.param(ids[1]);
                let c = t.param(ids[2]);
                let ab = t.concat(&[a, b])?;
                let h = t.affine(ab, ids[3], None)?;
                let h = t.tanh(h);
                let sm = t.softmax(c)?;
                let ws = t.weighted_sum(sm, &[a, b])?;
                let ps = t.sigmoid(ws);
                let e = t.bernoulli_entropy(ps);
                let d = t.dot(h, c)?;
                let nl = t.neg_log_pick(sm, 1)?;
                let sq = t.squared_error(d, 0.7)?;
                let r = t.relu(ab);
                let rs = t.sum(r);
                let rs = t.scale(rs, 0.3);
                t.add_n(&[e, nl, sq, rs])
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-6, "{report:?}");
    }

    #[test]
    fn subsampling_limits_entries() {
        let mut s = random_store(1, &[("w", vec![10, 10])]);
        let w = s.id("w").unwrap();
        let cfg = GradCheckConfig {
            max_entries: Some(7),
            ..Default::default()
        };
        let report = grad_check(
            &mut s,
            |t| {
                let x = t.input(vec![1.0; 10]);
                let y = t.affine(x, w, None)?;
                Ok(t.sum(y))
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(report.tensors[0].checked, 7);
    }
}
