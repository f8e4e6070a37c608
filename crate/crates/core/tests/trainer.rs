use std::collections::BTreeMap;

use nar_autodiff::{ParameterSet, Tensor};
use nar_core::model::{Mode, ModelConfig};
use nar_core::taskgen::{defining_scalars, ranks};
use nar_core::trainer::{
    adam_step, batch_gradients, clip_global_norm, global_norm, initial_parameters, make_batch, train, JsonlSink,
    MetricRecord, OptimizerState, TrainConfig,
};
use nar_core::{Error, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_param(values: Vec<f32>) -> ParameterSet {
    let mut p = ParameterSet::new("t");
    p.insert("w", Tensor::new(vec![values.len()], values).unwrap()).unwrap();
    p
}

fn grads(values: Vec<f32>) -> BTreeMap<String, Tensor<f32>> {
    BTreeMap::from([("w".to_string(), Tensor::new(vec![values.len()], values).unwrap())])
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = one_param(vec![0.5, -2.0, 3.0]);
    let mut s = OptimizerState::new(&p);
    adam_step(&mut p, &grads(vec![1.0; 3]), &mut s, 1e-3).unwrap();
    for (got, start) in p.get("w").unwrap().data().iter().zip([0.5f32, -2.0, 3.0]) {
        assert!(((start - got) as f64 - 1e-3).abs() < 1e-6, "{got}");
    }
    assert_eq!(s.step, 1);
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut p = one_param(vec![0.5, -2.0]);
    let mut s = OptimizerState::new(&p);
    for _ in 0..3 {
        adam_step(&mut p, &grads(vec![0.0; 2]), &mut s, 1e-3).unwrap();
    }
    assert_eq!(p.get("w").unwrap().data(), &[0.5, -2.0]);
}

#[test]
fn clipping_scales_to_bound() {
    let mut g = grads(vec![6.0, 8.0]);
    let before = clip_global_norm(&mut g, 1.0);
    assert!((before - 10.0).abs() < 1e-9);
    assert!((global_norm(&g) - 1.0).abs() < 1e-6);
    let mut small = grads(vec![0.3, 0.4]);
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small["w"].data(), &[0.3, 0.4]);
}

#[test]
fn optimizer_state_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = one_param(vec![0.5, -2.0]);
    let mut s = OptimizerState::new(&p);
    adam_step(&mut p, &grads(vec![0.1, 0.7]), &mut s, 1e-2).unwrap();
    s.save(dir.path()).unwrap();
    let back = OptimizerState::load(dir.path()).unwrap();
    assert_eq!(back.step, 1);
    assert_eq!(back.m.get("w").unwrap().data(), s.m.get("w").unwrap().data());
    assert_eq!(back.v.get("w").unwrap().data(), s.v.get("w").unwrap().data());
}

#[test]
fn batches_have_one_size_and_paired_augmentations() {
    let cfg = TrainConfig { batch_size: 6, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let b = make_batch(Task::Sorting, &cfg, &mut rng).unwrap();
        assert!(cfg.train_sizes.contains(&b.n));
        assert!(b.base.iter().all(|i| i.n == b.n));
        let aug = b.augmented.as_ref().unwrap();
        assert_eq!(aug.len(), 6);
        for (x, y) in b.base.iter().zip(aug) {
            assert_eq!(x.output, y.output);
            assert_eq!(ranks(&defining_scalars(x).unwrap()), ranks(&defining_scalars(y).unwrap()));
        }
    }
    let plain = TrainConfig { contrastive_weight: Some(0.0), ..cfg.clone() };
    assert!(make_batch(Task::Sorting, &plain, &mut rng).unwrap().augmented.is_none());
    assert!(make_batch(Task::Bfs, &cfg, &mut rng).unwrap().augmented.is_none());
}

#[test]
fn batches_are_deterministic() {
    let cfg = TrainConfig { batch_size: 4, ..Default::default() };
    let a = make_batch(Task::MstKruskal, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let b = make_batch(Task::MstKruskal, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_validation() {
    let cfg = TrainConfig::default();
    assert!(cfg.validate(Task::Sorting).unwrap().is_empty());
    assert_eq!(cfg.weight(Task::Sorting), 1.0);
    assert_eq!(cfg.weight(Task::Bfs), 0.0);
    let odd = TrainConfig { patience_steps: 120, ..Default::default() };
    assert_eq!(odd.validate(Task::Sorting).unwrap().len(), 1);
    let forced = TrainConfig { contrastive_weight: Some(1.0), ..Default::default() };
    assert!(forced.validate(Task::BellmanFord).is_err());
    let tiny = TrainConfig { train_sizes: vec![1], ..Default::default() };
    assert!(tiny.validate(Task::Bfs).is_err());
    assert!(TrainConfig { learning_rate: f64::NAN, ..Default::default() }.validate(Task::Sorting).is_err());
}

fn small_model(mode: Mode) -> ModelConfig {
    ModelConfig { hidden_dim: 16, mode, ..Default::default() }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_steps: 30,
        eval_every: 5,
        patience_steps: 10,
        train_sizes: vec![4, 5],
        val_size: 5,
        val_set_size: 8,
        seed,
        ..Default::default()
    }
}

#[test]
fn frozen_model_stops_after_one_patience_window() {
    let cfg = TrainConfig { learning_rate: 0.0, ..small_train(1) };
    let mut log: Vec<MetricRecord> = Vec::new();
    let out = train(Task::Minimum, &small_model(Mode::NohintLatent), &cfg, &mut log).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.steps_run, 15);
    assert_eq!(out.best_step, 5);
    let evals = log.iter().filter(|r| matches!(r, MetricRecord::Eval { .. })).count();
    assert_eq!(evals, 3);
}

#[test]
fn best_checkpoint_has_highest_logged_score() {
    let mut log: Vec<MetricRecord> = Vec::new();
    let out = train(Task::Sorting, &small_model(Mode::NohintLatent), &small_train(2), &mut log).unwrap();
    let mut steps = 0;
    for r in &log {
        match r {
            MetricRecord::Eval { val_score, .. } => assert!(out.best_score >= val_score - 1e-9),
            MetricRecord::Step { .. } => steps += 1,
        }
    }
    assert_eq!(steps, out.steps_run);
    let rescored = nar_core::eval::score_instances(
        &out.best.params,
        &out.best.config,
        &nar_core::eval::test_instances(Task::Sorting, 5, 8, nar_core::trainer::validation_seed(2)).unwrap(),
    )
    .unwrap()
    .0;
    assert_eq!(rescored, out.best_score);
}

#[test]
fn metrics_stream_is_reproducible() {
    let run = || {
        let mut sink = JsonlSink { metrics: Vec::new(), timing: Some(Vec::new()) };
        train(Task::MstKruskal, &small_model(Mode::NohintLatent), &small_train(4), &mut sink).unwrap();
        (sink.metrics, sink.timing.unwrap())
    };
    let (a, ta) = run();
    let (b, _) = run();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let first: serde_json::Value = serde_json::from_slice(a.split(|&c| c == b'\n').next().unwrap()).unwrap();
    assert_eq!(first["event"], "step");
    assert!(first.get("wall_ms").is_none());
    assert_eq!(ta.iter().filter(|&&c| c == b'\n').count(), a.iter().filter(|&&c| c == b'\n').count());
}

#[test]
fn exploding_learning_rate_aborts_with_step() {
    let cfg = TrainConfig { learning_rate: 1e30, grad_clip_norm: None, ..small_train(0) };
    match train(Task::Minimum, &small_model(Mode::NohintPlain), &cfg, &mut Vec::new()) {
        Err(Error::NonFiniteLoss { step }) => assert!((2..=30).contains(&step), "{step}"),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.steps_run)),
    }
}

/// Fits one fixed batch and returns the loss reports before and after.
fn overfit(task: Task, mode: Mode, steps: usize) -> (f64, f64, f64, f64) {
    let model = small_model(mode);
    let cfg = TrainConfig { batch_size: 4, train_sizes: vec![5], learning_rate: 3e-3, ..Default::default() };
    let batch = make_batch(task, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut params = initial_parameters(task, &model, &cfg).unwrap();
    let mut opt = OptimizerState::new(&params);
    let w = cfg.weight(task);
    let (first, _) = batch_gradients(&params, &model, &batch, w).unwrap();
    for _ in 0..steps {
        let (_, mut g) = batch_gradients(&params, &model, &batch, w).unwrap();
        clip_global_norm(&mut g, 1.0);
        adam_step(&mut params, &g, &mut opt, cfg.learning_rate).unwrap();
    }
    let (last, _) = batch_gradients(&params, &model, &batch, w).unwrap();
    (first.total, last.total, first.hint_loss, last.hint_loss)
}

#[test]
fn fixed_batch_loss_decreases_for_every_task_and_mode() {
    for task in Task::ALL {
        for mode in Mode::ALL {
            if mode == Mode::HintsSupervised && task != Task::Sorting {
                continue;
            }
            let (before, after, _, _) = overfit(task, mode, 50);
            assert!(after < before, "{task} {mode}: {before} -> {after}");
        }
    }
}

#[test]
fn supervised_hint_loss_decreases_on_fixed_batch() {
    let (_, _, before, after) = overfit(Task::Sorting, Mode::HintsSupervised, 200);
    assert!(after < 0.8 * before, "{before} -> {after}");
}
