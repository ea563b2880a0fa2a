use serde::{Deserialize, Serialize};

use crate::game::{EpisodeGraph, EpisodeTrace};
use crate::nn::{bernoulli_entropy, bernoulli_log_prob, NnError, Tape, Var, PROB_CLAMP};

use super::baseline::{BaselineValues, BaselineVars};

/// Per-instance loss components.
///
/// `total = classification + reinforce - (lambda_stop * entropy_stop + lambda_msg * entropy_msg)`.
/// The optimizer minimizes `total + baseline`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub reinforce: f64,
    pub baseline: f64,
    pub entropy_stop: f64,
    pub entropy_msg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn objective(&self) -> f64 {
        self.total + self.baseline
    }

    pub fn add(&mut self, o: &Self) {
        self.classification += o.classification;
        self.reinforce += o.reinforce;
        self.baseline += o.baseline;
        self.entropy_stop += o.entropy_stop;
        self.entropy_msg += o.entropy_msg;
        self.total += o.total;
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            classification: self.classification * c,
            reinforce: self.reinforce * c,
            baseline: self.baseline * c,
            entropy_stop: self.entropy_stop * c,
            entropy_msg: self.entropy_msg * c,
            total: self.total * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_stop: f64,
    pub lambda_msg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_stop: 0.08,
            lambda_msg: 0.01,
        }
    }
}

/// `-log p(true object)` under the final belief.
pub fn classification_loss(trace: &EpisodeTrace) -> f64 {
    -trace.final_belief()[trace.target]
        .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        .ln()
}

/// `(H_stop, H_msg)` in nats. The initial receiver message is not counted.
pub fn entropy_terms(trace: &EpisodeTrace) -> (f64, f64) {
    let sum = |p: &[f64]| p.iter().map(|&x| bernoulli_entropy(x)).sum::<f64>();
    let mut h_stop = 0.0;
    let mut h_msg = 0.0;
    for s in &trace.steps {
        h_stop += bernoulli_entropy(s.stop_prob);
        h_msg += sum(&s.sender_probs);
        if let Some(p) = &s.receiver_probs {
            h_msg += sum(p);
        }
    }
    (h_stop, h_msg)
}

fn log_prob(p: &[f64], bits: &[u8]) -> f64 {
    p.iter().zip(bits).map(|(&x, &b)| bernoulli_log_prob(x, b)).sum()
}

/// Value of the negated REINFORCE surrogate with the baselines held fixed.
///
/// The stop decision at the step cap is excluded, since the episode ends there
/// whatever was sampled. The initial receiver message is scored against
/// `baselines.initial`.
pub fn reinforce_loss(trace: &EpisodeTrace, baselines: &BaselineValues) -> f64 {
    let r = trace.reward;
    let mut loss = -(r - baselines.initial) * log_prob(&trace.initial_probs, trace.initial_message.bits());
    for (i, s) in trace.steps.iter().enumerate() {
        let t = i + 1;
        loss -= (r - baselines.sender[i]) * log_prob(&s.sender_probs, s.sender_message.bits());
        let mut receiver_lp = 0.0;
        if t < trace.max_steps {
            receiver_lp += bernoulli_log_prob(s.stop_prob, s.stop);
        }
        if let (Some(p), Some(m)) = (&s.receiver_probs, &s.receiver_message) {
            receiver_lp += log_prob(p, m.bits());
        }
        loss -= (r - baselines.receiver[i]) * receiver_lp;
    }
    loss
}

/// `sum_t (R - B_s)^2 + (R - B_r)^2`.
pub fn baseline_loss(trace: &EpisodeTrace, baselines: &BaselineValues) -> f64 {
    let r = trace.reward;
    (0..trace.length)
        .map(|i| (r - baselines.sender[i]).powi(2) + (r - baselines.receiver[i]).powi(2))
        .sum()
}

pub fn loss_breakdown(trace: &EpisodeTrace, baselines: &BaselineValues, w: &LossWeights) -> LossBreakdown {
    let classification = classification_loss(trace);
    let reinforce = reinforce_loss(trace, baselines);
    let (entropy_stop, entropy_msg) = entropy_terms(trace);
    LossBreakdown {
        classification,
        reinforce,
        baseline: baseline_loss(trace, baselines),
        entropy_stop,
        entropy_msg,
        total: classification + reinforce - (w.lambda_stop * entropy_stop + w.lambda_msg * entropy_msg),
    }
}

/// The optimizer objective of one episode on its tape.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeLoss {
    pub objective: Var,
    pub breakdown: LossBreakdown,
}

/// `-log p(true object)` on the tape.
pub fn classification_term(tape: &mut Tape, graph: &EpisodeGraph) -> Result<Var, NnError> {
    let last = graph.steps.last().ok_or(NnError::Empty("classification_term"))?;
    tape.neg_log_pick(last.belief, graph.trace.target)
}

/// Negated REINFORCE surrogate; `advantage_baselines` enter as constants.
pub fn reinforce_term(
    tape: &mut Tape,
    graph: &EpisodeGraph,
    advantage_baselines: &BaselineValues,
) -> Result<Var, NnError> {
    let tr = &graph.trace;
    let b = advantage_baselines;
    let r = tr.reward;
    let lp0 = tape.bernoulli_log_prob(graph.initial_probs, tr.initial_message.bits())?;
    let mut terms = vec![tape.scale(lp0, -(r - b.initial))];
    for (i, (sv, s)) in graph.steps.iter().zip(&tr.steps).enumerate() {
        let lp = tape.bernoulli_log_prob(sv.sender_probs, s.sender_message.bits())?;
        terms.push(tape.scale(lp, -(r - b.sender[i])));
        let adv_r = -(r - b.receiver[i]);
        if i + 1 < tr.max_steps {
            let lp = tape.bernoulli_log_prob(sv.stop_prob, &[s.stop])?;
            terms.push(tape.scale(lp, adv_r));
        }
        if let (Some(p), Some(m)) = (sv.receiver_probs, &s.receiver_message) {
            let lp = tape.bernoulli_log_prob(p, m.bits())?;
            terms.push(tape.scale(lp, adv_r));
        }
    }
    tape.add_n(&terms)
}

/// `(H_stop, H_msg)` on the tape.
pub fn entropy_vars(tape: &mut Tape, graph: &EpisodeGraph) -> Result<(Var, Var), NnError> {
    let mut stop = Vec::new();
    let mut msg = Vec::new();
    for sv in &graph.steps {
        stop.push(tape.bernoulli_entropy(sv.stop_prob));
        msg.push(tape.bernoulli_entropy(sv.sender_probs));
        if let Some(p) = sv.receiver_probs {
            msg.push(tape.bernoulli_entropy(p));
        }
    }
    Ok((tape.add_n(&stop)?, tape.add_n(&msg)?))
}

/// `L_B` on the tape.
pub fn baseline_term(tape: &mut Tape, graph: &EpisodeGraph, baselines: &BaselineVars) -> Result<Var, NnError> {
    let r = graph.trace.reward;
    let mut terms = Vec::new();
    for (&bs, &br) in baselines.sender.iter().zip(&baselines.receiver) {
        terms.push(tape.squared_error(bs, r)?);
        terms.push(tape.squared_error(br, r)?);
    }
    tape.add_n(&terms)
}

/// Builds `total + L_B` on the tape the episode was played on.
pub fn episode_loss(
    tape: &mut Tape,
    graph: &EpisodeGraph,
    baselines: &BaselineVars,
    w: &LossWeights,
) -> Result<EpisodeLoss, NnError> {
    let b = baselines.values(tape);
    episode_loss_with(tape, graph, baselines, &b, w)
}

/// As [`episode_loss`], with the advantages computed from given baseline values.
pub fn episode_loss_with(
    tape: &mut Tape,
    graph: &EpisodeGraph,
    baselines: &BaselineVars,
    advantage_baselines: &BaselineValues,
    w: &LossWeights,
) -> Result<EpisodeLoss, NnError> {
    let lc = classification_term(tape, graph)?;
    let lr = reinforce_term(tape, graph, advantage_baselines)?;
    let (hs, hm) = entropy_vars(tape, graph)?;
    let hs = tape.scale(hs, -w.lambda_stop);
    let hm = tape.scale(hm, -w.lambda_msg);
    let lb = baseline_term(tape, graph, baselines)?;
    let objective = tape.add_n(&[lc, lr, hs, hm, lb])?;
    let mut breakdown = loss_breakdown(&graph.trace, advantage_baselines, w);
    breakdown.baseline = baseline_loss(&graph.trace, &baselines.values(tape));
    Ok(EpisodeLoss { objective, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ModelConfig;
    use crate::game::{play_on_tape, BinaryMessage, GameConfig, GameError, GameSplit, PlayMode, Replay, Sampler, StepRecord};
    use crate::model::Model;
    use crate::nn::{grad_check, GradCheckConfig, RmsProp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(sender: &[f64], bits: &[u8], stop_prob: f64, stop: u8, belief: &[f64], recv: Option<(&[f64], &[u8])>) -> StepRecord {
        StepRecord {
            sender_message: BinaryMessage::new(bits.to_vec()).unwrap(),
            sender_probs: sender.to_vec(),
            sender_attention: None,
            stop_prob,
            stop,
            belief: belief.to_vec(),
            receiver_message: recv.map(|r| BinaryMessage::new(r.1.to_vec()).unwrap()),
            receiver_probs: recv.map(|r| r.0.to_vec()),
            memory: vec![0.0],
        }
    }

    fn trace(steps: Vec<StepRecord>, target: usize, reward: f64, max_steps: usize) -> EpisodeTrace {
        let d = steps[0].sender_probs.len();
        EpisodeTrace {
            split: "test".into(),
            class_id: 0,
            view: 0,
            target,
            candidate_ids: (0..steps[0].belief.len() as u32).collect(),
            initial_message: BinaryMessage::new(vec![1; d]).unwrap(),
            initial_probs: vec![0.6; d],
            length: steps.len(),
            steps,
            max_steps,
            prediction: 0,
            predicted_class: 0,
            reward,
            forced_stop: false,
        }
    }

    #[test]
    fn classification_examples() {
        let t = trace(vec![step(&[0.5], &[1], 0.9, 1, &[1.0, 0.0], None)], 0, 1.0, 10);
        assert!(classification_loss(&t) < 1e-6);
        let t = trace(vec![step(&[0.5], &[1], 0.9, 1, &[0.2; 5], None)], 3, 0.0, 10);
        assert!((classification_loss(&t) - 5f64.ln()).abs() < 1e-12);
        let t = trace(vec![step(&[0.5], &[1], 0.9, 1, &[0.7, 0.2, 0.1], None)], 0, 1.0, 10);
        assert!((classification_loss(&t) - 0.356_674_943_938_732_4).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let t = trace(vec![step(&[0.5; 32], &[0; 32], 0.5, 1, &[1.0], None)], 0, 1.0, 10);
        let (hs, hm) = entropy_terms(&t);
        assert!((hm - 32.0 * 2f64.ln()).abs() < 1e-12);
        assert!((hm - 22.18).abs() < 5e-3);
        assert!((hs - 2f64.ln()).abs() < 1e-12);
        let t = trace(vec![step(&[0.0, 1.0], &[0, 1], 1.0, 1, &[1.0], None)], 0, 1.0, 10);
        let (hs, hm) = entropy_terms(&t);
        assert!((0.0..1e-5).contains(&hs) && (0.0..1e-5).contains(&hm));
    }

    #[test]
    fn baseline_loss_examples() {
        let s = |stop| step(&[0.5], &[1], 0.5, stop, &[1.0], if stop == 0 { Some((&[0.5][..], &[0u8][..])) } else { None });
        let t = trace(vec![s(0), s(0), s(1)], 0, 1.0, 10);
        assert_eq!(baseline_loss(&t, &BaselineValues::constant(3, 0.0)), 6.0);
        assert_eq!(baseline_loss(&t, &BaselineValues::constant(3, 1.0)), 0.0);
        assert_eq!(reinforce_loss(&t, &BaselineValues::constant(3, 1.0)), 0.0);
    }

    #[test]
    fn single_step_surrogate_structure() {
        let t = trace(vec![step(&[0.8, 0.3], &[1, 1], 0.7, 1, &[0.6, 0.4], None)], 0, 1.0, 10);
        let b = BaselineValues {
            sender: vec![0.25],
            receiver: vec![0.5],
            initial: 0.125,
        };
        let want = -(1.0 - 0.125) * 2.0 * 0.6f64.ln()
            - (1.0 - 0.25) * (0.8f64.ln() + 0.3f64.ln())
            - (1.0 - 0.5) * 0.7f64.ln();
        assert!((reinforce_loss(&t, &b) - want).abs() < 1e-12);
    }

    #[test]
    fn stop_term_dropped_at_the_cap() {
        let r = Some((&[0.9][..], &[1u8][..]));
        let mut t = trace(
            vec![step(&[0.8], &[1], 0.3, 0, &[0.5, 0.5], r), step(&[0.4], &[0], 0.2, 0, &[0.5, 0.5], None)],
            1,
            0.0,
            2,
        );
        t.forced_stop = true;
        t.initial_message = BinaryMessage::new(vec![0]).unwrap();
        let b = BaselineValues {
            sender: vec![0.5, 0.25],
            receiver: vec![0.75, 0.125],
            initial: 0.0,
        };
        let want = -(-0.5) * 0.8f64.ln()
            - (-0.75) * (0.7f64.ln() + 0.9f64.ln())
            - (-0.25) * 0.6f64.ln();
        assert!((reinforce_loss(&t, &b) - want).abs() < 1e-12);
    }

    fn small_model(seed: u64) -> (crate::dataset::Dataset, Model) {
        let spec = crate::dataset::SyntheticSpec {
            n_classes: 3,
            n_attributes: 2,
            sender_dim: 4,
            receiver_dim: 3,
            views_per_class: 4,
            train_views: 2,
            val_views: 1,
            test_views: 1,
            hard_pairs: 1,
            ..Default::default()
        };
        let d = crate::dataset::synthetic_with_splits(&spec).unwrap();
        let cfg = ModelConfig {
            embed_dim: 4,
            sender_hidden: 4,
            memory_size: 4,
            receiver_message_hidden: 3,
            baseline_hidden: 6,
            ..ModelConfig::new(3, 4, 3)
        };
        let mut m = Model::new(cfg, seed).unwrap();
        let id = m.receiver.stop_b;
        m.store.get_mut(id).values = vec![-1.5];
        (d, m)
    }

    fn game() -> GameConfig {
        GameConfig {
            message_dim: 3,
            max_steps: 4,
            mode: PlayMode::TrainSample,
            k: 1,
        }
    }

    fn nn(e: GameError) -> NnError {
        match e {
            GameError::Nn(e) => e,
            other => NnError::Config(other.to_string()),
        }
    }

    #[test]
    fn tape_values_match_trace_arithmetic() {
        let (d, m) = small_model(4);
        let split = GameSplit::new(&d, "train").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = LossWeights::default();
        for _ in 0..10 {
            let inst = split.sample_instance(&mut rng).unwrap();
            let mut tape = crate::nn::Tape::new(&m.store);
            let g = play_on_tape(&mut tape, &m.sender, &m.receiver, &inst, &game(), &mut Sampler(&mut rng)).unwrap();
            let bv = m.baselines.evaluate(&mut tape, &g).unwrap();
            let b = bv.values(&tape);
            let loss = episode_loss(&mut tape, &g, &bv, &w).unwrap();
            let want = loss_breakdown(&g.trace, &b, &w);
            assert_eq!(loss.breakdown, want);
            assert!((tape.scalar(loss.objective) - want.objective()).abs() < 1e-10);
            assert!(want.total <= want.classification + want.reinforce);
        }
    }

    #[test]
    fn zero_advantage_gives_zero_policy_gradient() {
        let (d, m) = small_model(5);
        let split = GameSplit::new(&d, "train").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let inst = split.sample_instance(&mut rng).unwrap();
            let mut tape = crate::nn::Tape::new(&m.store);
            let g = play_on_tape(&mut tape, &m.sender, &m.receiver, &inst, &game(), &mut Sampler(&mut rng)).unwrap();
            let b = BaselineValues::constant(g.trace.length, g.trace.reward);
            let lr = reinforce_term(&mut tape, &g, &b).unwrap();
            assert_eq!(tape.scalar(lr), 0.0);
            let mut grads = m.store.new_gradients();
            tape.backward(lr, &mut grads).unwrap();
            assert!(grads.max_abs() <= 1e-10);
        }
    }

    #[test]
    fn full_objective_matches_finite_differences() {
        let (d, m) = small_model(6);
        let split = GameSplit::new(&d, "train").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LossWeights::default();
        let Model {
            mut store,
            sender,
            receiver,
            baselines,
            ..
        } = m;
        for _ in 0..3 {
            let inst = split.sample_instance(&mut rng).unwrap();
            // stop-gradient inputs are constants: hold them at their unperturbed values
            let (trace, adv, memories) = {
                let mut tape = crate::nn::Tape::new(&store);
                let g = play_on_tape(&mut tape, &sender, &receiver, &inst, &game(), &mut Sampler(&mut rng)).unwrap();
                let b = baselines.evaluate(&mut tape, &g).unwrap();
                (g.trace.clone(), b.values(&tape), g.memories.clone())
            };
            let report = grad_check(
                &mut store,
                |t| {
                    let mut g = play_on_tape(t, &sender, &receiver, &inst, &game(), &mut Replay(&trace)).map_err(nn)?;
                    g.memories.clone_from(&memories);
                    let b = baselines.evaluate(t, &g)?;
                    Ok(episode_loss_with(t, &g, &b, &adv, &w)?.objective)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            let bad = report.failures(1e-4);
            assert!(bad.is_empty(), "{bad:#?}");
        }
    }

    #[test]
    fn baseline_regression_converges() {
        let (_, mut m) = small_model(7);
        let opt = RmsProp::new(1e-3, 0.9, 1e-8).unwrap();
        let view = [0.3, -0.2, 0.5, 0.1];
        let msg = [1.0, 0.0, 1.0];
        let mut prev = f64::INFINITY;
        let mut first = None;
        for _ in 0..100 {
            let mut tape = crate::nn::Tape::new(&m.store);
            let b = m.baselines.sender_value(&mut tape, &view, &msg).unwrap();
            let loss = tape.squared_error(b, 1.0).unwrap();
            let value = tape.scalar(loss);
            assert!(value < prev, "{value} >= {prev}");
            prev = value;
            first.get_or_insert(value);
            let mut grads = m.store.new_gradients();
            tape.backward(loss, &mut grads).unwrap();
            m.store.accumulate(&grads, 1.0);
            opt.step(&mut m.store);
        }
        assert!(prev < 0.1 * first.unwrap(), "{prev} vs {first:?}");
    }
}
