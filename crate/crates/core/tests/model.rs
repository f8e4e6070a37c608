use nar_autodiff::{ParamVars, ParameterSet, Tape, Tensor};
use nar_core::model::{
    decode_channel, decode_hints, encode_inputs, forward_rollout, forward_rollout_batch, processor_step, BatchInputs,
    Checkpoint, Feedback, Mode, ModelConfig, RolloutOptions,
};
use nar_core::taskgen::{sample_instance, step_count};
use nar_core::{Kind, ProblemInstance, Task};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(mode: Mode) -> ModelConfig {
    ModelConfig { hidden_dim: 16, mode, ..Default::default() }
}

fn modes(task: Task) -> Vec<Mode> {
    Mode::ALL
        .into_iter()
        .filter(|&m| m != Mode::HintsSupervised || task == Task::Sorting)
        .collect()
}

fn instance(task: Task, n: usize, seed: u64) -> ProblemInstance {
    sample_instance(task, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn rollout_logits(params: &ParameterSet, inst: &ProblemInstance, cfg: &ModelConfig) -> Tensor<f64> {
    let tape = Tape::<f64>::inference();
    let p = ParamVars::bind(&tape, params);
    forward_rollout(&p, inst, cfg, &RolloutOptions::default())
        .unwrap()
        .output
        .value()
        .clone()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Logits of the instance relabelled by `perm`, mapped back to the original
/// node order.
fn unpermute(t: &Tensor<f64>, kind: Kind, n: usize, perm: &[usize]) -> Vec<f64> {
    let d = t.data();
    match kind {
        Kind::MaskOne => (0..n).map(|i| d[perm[i]]).collect(),
        _ => (0..n * n).map(|ij| d[perm[ij / n] * n + perm[ij % n]]).collect(),
    }
}

#[test]
fn permutation_equivariance_all_tasks() {
    for task in Task::ALL {
        for mode in modes(task) {
            let cfg = config(mode);
            let params = cfg.init(task, 11).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for k in 0..20 {
                let n = task.min_nodes().max(2) + k % 5;
                let n = n.min(6);
                let inst = instance(task, n, 100 + k as u64);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let permuted = inst.permute_nodes(&perm).unwrap();
                let kind = task.output().kind;
                let base = rollout_logits(&params, &inst, &cfg);
                let moved = unpermute(&rollout_logits(&params, &permuted, &cfg), kind, n, &perm);
                let diff = base.data().iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-9, "{task} {mode} case {k}: logits differ by {diff}");
                let rows = if kind == Kind::MaskOne { 1 } else { n };
                let w = base.numel() / rows;
                for r in 0..rows {
                    assert_eq!(
                        argmax(&base.data()[r * w..(r + 1) * w]),
                        argmax(&moved[r * w..(r + 1) * w]),
                        "{task} {mode} case {k}: decoded prediction differs"
                    );
                }
            }
        }
    }
}

#[test]
fn output_shapes_and_normalization() {
    for task in Task::ALL {
        for mode in modes(task) {
            let cfg = config(mode);
            let params = cfg.init(task, 1).unwrap();
            let n = 5;
            let inst = instance(task, n, 3);
            let tape = Tape::<f32>::inference();
            let p = ParamVars::bind(&tape, &params);
            let r = forward_rollout(&p, &inst, &cfg, &RolloutOptions { trace_outputs: true, steps: None }).unwrap();
            let steps = step_count(cfg.step_policy, n, task.family());
            assert_eq!(r.hs.len(), steps, "{task} {mode}");
            assert_eq!(r.step_outputs.len(), steps);
            assert_eq!(r.encoded.x_enc.shape(), &[1, n, 16]);
            for h in &r.hs {
                assert_eq!(h.shape(), &[1, n, 16]);
            }
            match task.output().kind {
                Kind::Pointer => {
                    assert_eq!(r.output.shape(), &[1, n, n]);
                    let probs = r.output.softmax().unwrap();
                    for row in probs.value().data().chunks(n) {
                        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
                        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                    }
                }
                Kind::MaskOne => {
                    assert_eq!(r.output.shape(), &[1, n]);
                    let probs = r.output.softmax().unwrap();
                    assert!((probs.value().sum_f64() - 1.0).abs() < 1e-5);
                }
                Kind::Mask => {
                    assert_eq!(r.output.shape(), &[1, n, n]);
                    let v = r.output.value();
                    for i in 0..n {
                        for j in 0..n {
                            assert_eq!(v.at(&[0, i, j]), v.at(&[0, j, i]));
                        }
                    }
                }
                Kind::Scalar => unreachable!(),
            }
            match mode {
                Mode::NohintLatent => {
                    assert_eq!(r.channels.len(), steps);
                    for c in &r.channels {
                        assert_eq!(c.shape(), &[1, n, n]);
                        assert!(c.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
                    }
                }
                Mode::HintsSupervised => {
                    assert_eq!(r.hints.len(), steps);
                    let pred = r.hints[0].pred_h.softmax().unwrap();
                    for row in pred.value().data().chunks(n) {
                        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
                    }
                    assert_eq!(r.hints[0].i.shape(), &[1, n]);
                    assert_eq!(r.hints[0].j.shape(), &[1, n]);
                }
                Mode::NohintPlain => assert!(r.channels.is_empty() && r.hints.is_empty()),
            }
        }
    }
}

#[test]
fn sorting_four_nodes_runs_four_steps() {
    let cfg = config(Mode::NohintLatent);
    let params = cfg.init(Task::Sorting, 0).unwrap();
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &params);
    let r = forward_rollout(&p, &instance(Task::Sorting, 4, 0), &cfg, &RolloutOptions::default()).unwrap();
    assert_eq!(r.hs.len(), 4);
}

#[test]
fn single_node_instance() {
    let cfg = config(Mode::NohintLatent);
    let params = cfg.init(Task::Minimum, 0).unwrap();
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &params);
    let r = forward_rollout(&p, &instance(Task::Minimum, 1, 0), &cfg, &RolloutOptions::default()).unwrap();
    assert_eq!(r.hs[0].shape(), &[1, 1, 16]);
    assert_eq!(r.output.shape(), &[1, 1]);
}

#[test]
fn closed_gate_only_normalizes_previous_state() {
    let cfg = config(Mode::NohintPlain);
    let mut params = cfg.init(Task::Sorting, 2).unwrap();
    params.get_mut("proc.gate.b").unwrap().data_mut().fill(-1e4);
    let inputs = BatchInputs::new(&[&instance(Task::Sorting, 4, 1)], false).unwrap();
    let tape = Tape::<f64>::inference();
    let p = ParamVars::bind(&tape, &params);
    let enc = encode_inputs(&p, &inputs, &cfg).unwrap();
    let h_prev: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
    let h_prev = tape.constant(Tensor::new(vec![1, 4, 16], h_prev).unwrap());
    let h = processor_step(&p, &cfg, &enc, &Feedback::none(), &h_prev).unwrap();
    let want = h_prev
        .layer_norm(p.get("proc.ln.gamma").unwrap(), p.get("proc.ln.beta").unwrap(), 1e-5)
        .unwrap();
    assert!(h.value().max_abs_diff(want.value()) < 1e-9);
}

#[test]
fn zero_encoders_give_bias_encodings() {
    let cfg = config(Mode::NohintPlain);
    let mut params = cfg.init(Task::Bfs, 0).unwrap();
    params.get_mut("enc.node.s.w").unwrap().data_mut().fill(0.0);
    let inputs = BatchInputs::new(&[&instance(Task::Bfs, 3, 0)], false).unwrap();
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &params);
    let enc = encode_inputs(&p, &inputs, &cfg).unwrap();
    let bias = params.get("enc.node.s.b").unwrap().data();
    for row in enc.x_enc.value().data().chunks(16) {
        assert_eq!(row, bias);
    }
    assert!(!enc.e_enc.is_empty());
}

#[test]
fn zero_channel_decoder_gives_half() {
    let cfg = config(Mode::NohintLatent);
    let mut params = cfg.init(Task::Sorting, 0).unwrap();
    params.get_mut("dec.channel.l1.w").unwrap().data_mut().fill(0.0);
    params.get_mut("dec.channel.l1.b").unwrap().data_mut().fill(0.0);
    let inputs = BatchInputs::new(&[&instance(Task::Sorting, 5, 0)], false).unwrap();
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &params);
    let enc = encode_inputs(&p, &inputs, &cfg).unwrap();
    let h = tape.constant(Tensor::ones(vec![1, 5, 16]));
    let ch = decode_channel(&p, &cfg, &enc, &h).unwrap();
    assert_eq!(ch.shape(), &[1, 5, 5]);
    assert!(ch.value().data().iter().all(|&v| v == 0.5));
}

#[test]
fn decoders_reject_other_modes() {
    let cfg = config(Mode::NohintPlain);
    let params = cfg.init(Task::Sorting, 0).unwrap();
    let inputs = BatchInputs::new(&[&instance(Task::Sorting, 3, 0)], false).unwrap();
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &params);
    let enc = encode_inputs(&p, &inputs, &cfg).unwrap();
    let h = tape.constant(Tensor::zeros(vec![1, 3, 16]));
    assert!(decode_channel(&p, &cfg, &enc, &h).is_err());
    assert!(decode_hints(&p, &cfg, &enc, &h).is_err());
}

#[test]
fn hints_only_for_sorting() {
    let cfg = config(Mode::HintsSupervised);
    assert!(cfg.init(Task::Sorting, 0).is_ok());
    for task in Task::ALL.into_iter().filter(|&t| t != Task::Sorting) {
        assert!(cfg.init(task, 0).is_err(), "{task}");
    }
}

#[test]
fn latent_mode_only_adds_channel_parameters() {
    for task in Task::ALL {
        let plain: Vec<_> = config(Mode::NohintPlain).param_specs(task).unwrap();
        let latent: Vec<_> = config(Mode::NohintLatent).param_specs(task).unwrap();
        for s in &latent {
            let in_plain = plain.iter().any(|q| q.path == s.path && q.shape == s.shape);
            let channel = s.path.contains("channel") || s.path.starts_with("proc.") && s.path.contains(".edge.")
                || s.path.starts_with("proc.tri.e");
            assert!(in_plain || channel, "{task}: unexpected {}", s.path);
        }
        assert_eq!(plain.iter().filter(|s| !latent.iter().any(|q| q.path == s.path)).count(), 0);
    }
}

#[test]
fn rollout_is_deterministic() {
    let cfg = config(Mode::NohintLatent);
    let params = cfg.init(Task::MstKruskal, 4).unwrap();
    let inst = instance(Task::MstKruskal, 5, 9);
    let a = rollout_logits(&params, &inst, &cfg);
    let b = rollout_logits(&params, &inst, &cfg);
    assert_eq!(a.data(), b.data());
}

#[test]
fn batched_rollout_matches_single() {
    let cfg = config(Mode::HintsSupervised);
    let params = cfg.init(Task::Sorting, 4).unwrap();
    let insts: Vec<_> = (0..3).map(|k| instance(Task::Sorting, 5, k)).collect();
    let refs: Vec<_> = insts.iter().collect();
    let tape = Tape::<f64>::inference();
    let p = ParamVars::bind(&tape, &params);
    let batch = forward_rollout_batch(&p, &BatchInputs::new(&refs, false).unwrap(), &cfg, &RolloutOptions::default())
        .unwrap();
    for (k, inst) in insts.iter().enumerate() {
        let single = rollout_logits(&params, inst, &cfg);
        let part = &batch.output.value().data()[k * 25..(k + 1) * 25];
        let diff = single.data().iter().zip(part).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "instance {k}: {diff}");
    }
}

#[test]
fn channel_decoder_receives_gradient() {
    let cfg = config(Mode::NohintLatent);
    let params = cfg.init(Task::Sorting, 0).unwrap();
    let tape = Tape::<f64>::new();
    let p = ParamVars::bind(&tape, &params);
    let r = forward_rollout(&p, &instance(Task::Sorting, 4, 0), &cfg, &RolloutOptions::default()).unwrap();
    let loss = r.output.log_softmax().unwrap().gather(&[1, 2, 3, 0]).unwrap().sum();
    let grads = p.gradients(&tape.backward(&loss).unwrap());
    for path in ["dec.channel.l1.w", "dec.channel.l0.recv.w", "enc.channel.w"] {
        assert!(grads[path].data().iter().any(|&g| g != 0.0), "{path}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Mode::NohintLatent);
    let ck = Checkpoint { task: Task::Minimum, config: cfg.clone(), params: cfg.init(Task::Minimum, 3).unwrap() };
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.task, Task::Minimum);
    assert_eq!(back.config, cfg);
    for (path, t) in ck.params.iter() {
        assert_eq!(back.params.get(path).unwrap().data(), t.data(), "{path}");
    }
}

#[test]
fn checkpoint_with_missing_parameter_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Mode::NohintPlain);
    let full = cfg.init(Task::Minimum, 3).unwrap();
    let mut params = ParameterSet::new(full.version());
    for (path, t) in full.iter().filter(|(p, _)| *p != "proc.gate.w") {
        params.insert(path, t.clone()).unwrap();
    }
    Checkpoint { task: Task::Minimum, config: cfg, params }.save(dir.path()).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}
