//! End-to-end acceptance checks at desk scale. Each check prints one
//! `[PASS]` / `[FAIL]` line before asserting.

use std::io::Write;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use refgame_core::agents::ModelConfig;
use refgame_core::analysis::{self, EpisodeLog, RunMetrics};
use refgame_core::dataset::{synthetic_with_splits, Dataset, SyntheticSpec};
use refgame_core::fixtures;
use refgame_core::game::{
    k_for, play_on_tape, ActionSource, Decision, GameConfig, GameError, GameSplit, PlayMode, Replay, Sampler,
};
use refgame_core::model::Model;
use refgame_core::nn::{grad_check, GradCheckConfig, NnError, Tape};
use refgame_core::training::{
    episode_loss_with, evaluate_split, reinforce_term, sample_split, train, write_train_log, Ablation,
    BaselineValues, LossWeights, TrainConfig, TrainOutcome,
};

/// Written straight to stdout so the line survives the test harness's capture.
fn verdict(name: &str, pass: bool, details: &str) {
    let line = format!("[{}] {name}: {details}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "{name}: {details}");
}

/// Small agents that learn the synthetic task within a few thousand updates.
fn desk_config(seed: u64) -> TrainConfig {
    let h = 32;
    TrainConfig {
        lr: 1e-3,
        message_dim: 8,
        max_steps: 4,
        batch_size: 64,
        embed_dim: h,
        sender_hidden: h,
        memory_size: h,
        receiver_message_hidden: h,
        baseline_hidden: h,
        max_updates: Some(2000),
        seed,
        ..Default::default()
    }
}

fn greedy(cfg: &TrainConfig, k: usize) -> GameConfig {
    GameConfig {
        message_dim: cfg.message_dim,
        max_steps: cfg.max_steps,
        mode: PlayMode::TestGreedy,
        k,
    }
}

fn split_accuracy(model: &Model, data: &Dataset, split: &str, cfg: &TrainConfig, k: Option<usize>) -> (usize, f64) {
    let s = GameSplit::new(data, split).unwrap();
    let k = k.unwrap_or_else(|| k_for(s.num_candidates(), cfg.k_fraction));
    let traces = evaluate_split(model, &s, &greedy(cfg, k)).unwrap();
    let logs = EpisodeLog::from_traces(&traces).unwrap();
    (k, analysis::accuracy_at_k(&logs, k).unwrap())
}

fn to_nn(e: GameError) -> NnError {
    match e {
        GameError::Nn(e) => e,
        other => NnError::Config(other.to_string()),
    }
}

#[test]
fn gradient_correctness() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (sender_attention, receiver_attention) in [(false, false), (false, true), (true, false), (true, true)] {
        let spec = SyntheticSpec {
            n_classes: 3,
            n_attributes: 2,
            sender_dim: 4,
            receiver_dim: 3,
            views_per_class: 4,
            train_views: 2,
            val_views: 1,
            test_views: 1,
            hard_pairs: 1,
            sender_set_size: if sender_attention { 3 } else { 1 },
            ..Default::default()
        };
        let data = synthetic_with_splits(&spec).unwrap();
        let cfg = ModelConfig {
            sender_set_size: spec.sender_set_size,
            embed_dim: 4,
            sender_hidden: 4,
            sender_attention,
            sender_attention_hidden: 3,
            memory_size: 4,
            receiver_message_hidden: 3,
            receiver_attention,
            receiver_attention_hidden: 3,
            baseline_hidden: 5,
            ..ModelConfig::new(3, 4, 3)
        };
        let Model {
            mut store,
            sender,
            receiver,
            baselines,
            ..
        } = Model::new(cfg, 17).unwrap();
        let stop_b = store.id("receiver.stop.b").unwrap();
        store.get_mut(stop_b).values = vec![-1.5];
        let game = GameConfig {
            message_dim: 3,
            max_steps: 4,
            mode: PlayMode::TrainSample,
            k: 1,
        };
        let split = GameSplit::new(&data, "train").unwrap();
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let inst = split.sample_instance(&mut rng).unwrap();
            let (trace, adv, memories) = {
                let mut tape = Tape::new(&store);
                let g = play_on_tape(&mut tape, &sender, &receiver, &inst, &game, &mut Sampler(&mut rng)).unwrap();
                let b = baselines.evaluate(&mut tape, &g).unwrap();
                (g.trace.clone(), b.values(&tape), g.memories.clone())
            };
            let report = grad_check(
                &mut store,
                |t| {
                    let mut g = play_on_tape(t, &sender, &receiver, &inst, &game, &mut Replay(&trace)).map_err(to_nn)?;
                    g.memories.clone_from(&memories);
                    let b = baselines.evaluate(t, &g)?;
                    Ok(episode_loss_with(t, &g, &b, &adv, &w)?.objective)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            worst = worst.max(report.max_rel_error());
            for f in report.failures(1e-4) {
                failures.push(format!("{}/{}: {}", sender_attention, receiver_attention, f.name));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "gradient correctness",
        failures.is_empty() && elapsed < 60.0,
        &format!("4 variants x 3 episodes, max relative error {worst:.2e} (tol 1e-4), {elapsed:.1}s, failures {failures:?}"),
    );
}

/// Plays one fixed pair of messages.
struct Fixed(u8, u8);

impl ActionSource for Fixed {
    fn choose(&mut self, decision: Decision, _: &[f64]) -> Result<Vec<u8>, GameError> {
        Ok(vec![match decision {
            Decision::InitialMessage => self.0,
            Decision::SenderMessage(_) => self.1,
            Decision::Stop(_) | Decision::ReceiverMessage(_) => 1,
        }])
    }
}

fn flatten(model: &Model, grads: &refgame_core::nn::Gradients) -> Vec<f64> {
    model.store.ids().flat_map(|id| grads.get(id).to_vec()).collect()
}

#[test]
fn reinforce_is_unbiased() {
    let start = std::time::Instant::now();
    let data = fixtures::oracle_dataset();
    let mut model = fixtures::oracle_model();
    for (name, v) in [
        ("sender.msg_embed.w", vec![0.8]),
        ("sender.msg_embed.b", vec![0.1]),
        ("sender.hidden.w", vec![1.0, 0.5, -0.3, 0.2]),
        ("sender.hidden.b", vec![0.4]),
        ("sender.out.w", vec![1.5]),
        ("sender.out.b", vec![0.2]),
        ("receiver.m0_logits", vec![0.3]),
    ] {
        let id = model.store.id(name).unwrap();
        model.store.get_mut(id).values = v;
    }
    let game = GameConfig {
        message_dim: 1,
        max_steps: 1,
        mode: PlayMode::TrainSample,
        k: 1,
    };
    let split = GameSplit::new(&data, "train").unwrap();
    let objects = [split.instance(0, 0), split.instance(1, 0)];

    let n_coords = model.store.num_scalars();
    let mut exact = vec![0.0; n_coords];
    for inst in &objects {
        for m0 in 0..2 {
            for m1 in 0..2 {
                let mut tape = Tape::new(&model.store);
                let g = play_on_tape(&mut tape, &model.sender, &model.receiver, inst, &game, &mut Fixed(m0, m1)).unwrap();
                let p0 = g.trace.initial_probs[0];
                let p1 = g.trace.steps[0].sender_probs[0];
                let prob = if m0 == 1 { p0 } else { 1.0 - p0 } * if m1 == 1 { p1 } else { 1.0 - p1 };
                let term = reinforce_term(&mut tape, &g, &BaselineValues::constant(1, 0.0)).unwrap();
                let mut grads = model.store.new_gradients();
                tape.backward(term, &mut grads).unwrap();
                for (e, v) in exact.iter_mut().zip(flatten(&model, &grads)) {
                    *e += 0.5 * prob * v;
                }
            }
        }
    }

    let n = 100_000usize;
    let mut sum = vec![0.0; n_coords];
    let mut sum_sq = vec![0.0; n_coords];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..n {
        let mut tape = Tape::new(&model.store);
        let inst = &objects[i % 2];
        let g = play_on_tape(&mut tape, &model.sender, &model.receiver, inst, &game, &mut Sampler(&mut rng)).unwrap();
        let b = model.baselines.evaluate(&mut tape, &g).unwrap().values(&tape);
        let term = reinforce_term(&mut tape, &g, &b).unwrap();
        let mut grads = model.store.new_gradients();
        tape.backward(term, &mut grads).unwrap();
        for (j, v) in flatten(&model, &grads).into_iter().enumerate() {
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let mut worst_z: f64 = 0.0;
    let mut active = 0;
    let mut bad = Vec::new();
    for j in 0..n_coords {
        let mean = sum[j] / n as f64;
        let var = (sum_sq[j] / n as f64 - mean * mean).max(0.0) * n as f64 / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let diff = (mean - exact[j]).abs();
        if exact[j] != 0.0 || se > 0.0 {
            active += 1;
        }
        if se > 0.0 {
            worst_z = worst_z.max(diff / se);
        }
        if diff > 3.0 * se + 1e-12 {
            bad.push((j, mean, exact[j], se));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "REINFORCE unbiasedness",
        bad.is_empty() && active > 0 && elapsed < 120.0,
        &format!("{n} episodes, {active} active coordinates, max |mean - exact| / SE = {worst_z:.2} (tol 3), {elapsed:.1}s, off {bad:?}"),
    );
}

fn bau_and_oru() -> &'static (TrainOutcome, TrainOutcome, Dataset) {
    static RUNS: OnceLock<(TrainOutcome, TrainOutcome, Dataset)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let data = synthetic_with_splits(&SyntheticSpec::default()).unwrap();
        let cfg = TrainConfig {
            patience: usize::MAX,
            ..desk_config(0)
        };
        let bau = train(&cfg, &data).unwrap();
        let oru = train(
            &TrainConfig {
                ablation: Ablation::OnlyReceiverUpdate,
                ..cfg
            },
            &data,
        )
        .unwrap();
        (bau, oru, data)
    })
}

#[test]
fn learnability() {
    let start = std::time::Instant::now();
    let (bau, _, _) = bau_and_oru();
    let best = bau.log.iter().map(|r| r.val_acc_1).fold(0.0, f64::max);
    let first = bau.log.iter().find(|r| r.val_acc_1 >= 0.95).map(|r| r.epoch);
    verdict(
        "learnability",
        best >= 0.95 && bau.updates <= 2000,
        &format!(
            "8 classes, d=8, T_max=4, batch 64: best val acc@1 {best:.3} (need 0.95) in {} updates, first reached at epoch {first:?}; both conditions {:.0}s",
            bau.updates,
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn only_receiver_update_ablation() {
    let (bau, oru, data) = bau_and_oru();
    let cfg = desk_config(0);
    let (_, acc_bau) = split_accuracy(&bau.last, data, "test", &cfg, Some(1));
    let (_, acc_oru) = split_accuracy(&oru.last, data, "test", &cfg, Some(1));
    let gap = acc_bau - acc_oru;
    verdict(
        "ORU ablation",
        gap >= 0.10,
        &format!("final test acc@1 BAU {acc_bau:.3}, ORU {acc_oru:.3}, gap {:.1} points (need 10)", 100.0 * gap),
    );
}

#[test]
fn adaptive_length() {
    let spec = SyntheticSpec {
        n_attributes: 16,
        noise: 1.0,
        views_per_class: 120,
        train_views: 48,
        val_views: 8,
        test_views: 64,
        hard_pairs: 2,
        ..Default::default()
    };
    let data = synthetic_with_splits(&spec).unwrap();
    let cfg = TrainConfig {
        lambda_stop: 0.2,
        patience: usize::MAX,
        ..desk_config(0)
    };
    let out = train(&cfg, &data).unwrap();
    let split = GameSplit::new(&data, "test").unwrap();
    let traces = sample_split(&out.last, &split, &greedy(&cfg, 1), 7, 16).unwrap();
    let logs = EpisodeLog::from_traces(&traces).unwrap();
    let difficulty = data
        .classes
        .iter()
        .map(|c| (c.id, c.difficulty.unwrap()))
        .collect();
    let report = analysis::length_difficulty_report(&logs, &difficulty).unwrap();
    let hard_pairs_classes = 2 * spec.hard_pairs;
    let mean = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        report.classes[range].iter().map(|c| c.mean_length).sum::<f64>() / n
    };
    let hard = mean(0..hard_pairs_classes);
    let easy = mean(hard_pairs_classes..spec.n_classes);
    let r = report.correlation.r;
    verdict(
        "adaptive length",
        r < -0.3 && hard > easy,
        &format!(
            "Pearson(difficulty score, mean length) r = {r:.3} (need < -0.3, p = {:.3}), mean length hard {hard:.3} > easy {easy:.3}",
            report.correlation.p
        ),
    );
}

#[test]
fn entropy_mechanics() {
    let data = synthetic_with_splits(&SyntheticSpec::default()).unwrap();
    let val = GameSplit::new(&data, "val").unwrap();
    let mut means = Vec::new();
    let mut out_of_range = 0;
    let mut bound = 0.0;
    for lambda_msg in [0.0, 0.01, 0.1] {
        let cfg = TrainConfig {
            lambda_msg,
            max_updates: Some(200),
            patience: usize::MAX,
            ..desk_config(0)
        };
        bound = cfg.message_dim as f64 * std::f64::consts::LN_2;
        let out = train(&cfg, &data).unwrap();
        let traces = sample_split(&out.last, &val, &greedy(&cfg, 1), 3, 4).unwrap();
        let logs = EpisodeLog::from_traces(&traces).unwrap();
        let values: Vec<f64> = logs
            .iter()
            .flat_map(|l| l.sender_entropy.iter().chain(&l.receiver_entropy).copied())
            .collect();
        out_of_range += values.iter().filter(|&&h| !(0.0..=bound).contains(&h)).count();
        means.push(values.iter().sum::<f64>() / values.len() as f64);
    }
    let increasing = means.windows(2).all(|w| w[1] > w[0]);
    verdict(
        "entropy mechanics",
        increasing && out_of_range == 0,
        &format!(
            "mean message entropy at lambda_m 0 / 0.01 / 0.1 = {:.4} / {:.4} / {:.4} nats, {out_of_range} values outside [0, {bound:.3}]",
            means[0], means[1], means[2]
        ),
    );
}

#[test]
fn bandwidth_sweep() {
    let dims = [2, 8, 32];
    let seeds = [0u64, 1, 2];
    let mut satisfied = 0;
    let mut rows = Vec::new();
    for &seed in &seeds {
        let spec = SyntheticSpec {
            n_classes: 20,
            held_out: 4,
            views_per_class: 40,
            train_views: 24,
            val_views: 8,
            test_views: 8,
            seed,
            ..Default::default()
        };
        let data = synthetic_with_splits(&spec).unwrap();
        let mut accs = Vec::new();
        for &d in &dims {
            let cfg = TrainConfig {
                message_dim: d,
                max_updates: Some(800),
                ..desk_config(seed)
            };
            let out = train(&cfg, &data).unwrap();
            let (k, acc) = split_accuracy(&out.best, &data, "ood", &cfg, None);
            accs.push((k, acc));
        }
        if accs[2].1 >= accs[0].1 {
            satisfied += 1;
        }
        rows.push(format!(
            "seed {seed}: {}",
            dims.iter()
                .zip(&accs)
                .map(|(d, (k, a))| format!("d={d} acc@{k} {a:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    verdict(
        "bandwidth sweep",
        2 * satisfied > seeds.len(),
        &format!("held-out acc@K at d=32 >= d=2 in {satisfied}/{} seeds; {}", seeds.len(), rows.join("; ")),
    );
}

#[test]
fn stability_across_seeds() {
    let mut runs = Vec::new();
    for seed in 0..6u64 {
        let data = synthetic_with_splits(&SyntheticSpec { seed, ..Default::default() }).unwrap();
        let cfg = desk_config(seed);
        let out = train(&cfg, &data).unwrap();
        let (k, acc_k) = split_accuracy(&out.best, &data, "test", &cfg, None);
        let (_, acc_1) = split_accuracy(&out.best, &data, "test", &cfg, Some(1));
        assert_eq!(k, 1);
        runs.push(RunMetrics {
            seed,
            acc_at_k: acc_k,
            acc_at_1: acc_1,
            loss: out.log.last().unwrap().train_loss,
        });
    }
    let report = analysis::stability_report(&runs).unwrap();
    let min = runs.iter().map(|r| r.acc_at_1).fold(1.0, f64::min);
    verdict(
        "stability",
        min >= 0.90,
        &format!(
            "6 seeds, test acc@1 {:?}; min {min:.3} (need 0.90), mean {:.4}, variance {:.2e}; loss mean {:.4}, variance {:.2e}",
            runs.iter().map(|r| (r.acc_at_1 * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            report.acc_at_1.mean,
            report.acc_at_1.variance,
            report.loss.mean,
            report.loss.variance
        ),
    );
}

#[test]
fn determinism_across_thread_counts() {
    let data = synthetic_with_splits(&SyntheticSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for (run, threads) in [1usize, 2, 2, 1].into_iter().enumerate() {
        let cfg = TrainConfig {
            threads,
            max_updates: Some(60),
            ..desk_config(3)
        };
        let out = train(&cfg, &data).unwrap();
        let path = dir.path().join(format!("train_log_{run}.csv"));
        write_train_log(&path, &out.log).unwrap();
        logs.push(std::fs::read(&path).unwrap());
    }
    let identical = logs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        "determinism",
        identical && !logs[0].is_empty(),
        &format!("training log CSV of {} bytes byte-identical across threads 1, 2, 2, 1", logs[0].len()),
    );
}
