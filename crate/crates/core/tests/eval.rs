use nar_autodiff::Tensor;
use nar_core::eval::{
    evaluate, nearest_same_index, predict, probe_equivalence_similarity, probe_prediction_stability, score,
    test_instances, write_curve, StabilityDecoder, Tally,
};
use nar_core::model::{Checkpoint, Mode, ModelConfig};
use nar_core::taskgen::{sample_augmentation, sample_instance};
use nar_core::{Error, Kind, Output, Task};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn checkpoint(task: Task, mode: Mode, seed: u64) -> Checkpoint {
    let config = ModelConfig { hidden_dim: 16, mode, ..Default::default() };
    Checkpoint { task, params: config.init(task, seed).unwrap(), config }
}

#[test]
fn score_extremes_and_halves() {
    let truth = Output::Pointer(vec![1, 2, 3, 3]);
    assert_eq!(score(std::slice::from_ref(&truth), &[&truth]).unwrap(), 1.0);
    assert_eq!(score(&[Output::Pointer(vec![0, 0, 0, 0])], &[&truth]).unwrap(), 0.0);
    let other = Output::Pointer(vec![0, 1]);
    let preds = [Output::Pointer(vec![1, 2, 0, 0]), Output::Pointer(vec![0, 0])];
    assert_eq!(score(&preds, &[&truth, &other]).unwrap(), 0.5);
}

#[test]
fn score_is_micro_not_macro() {
    let big = Output::Pointer(vec![0; 8]);
    let small = Output::Pointer(vec![0; 2]);
    let preds = [Output::Pointer(vec![0; 8]), Output::Pointer(vec![1, 1])];
    // macro would be (1 + 0) / 2
    assert_eq!(score(&preds, &[&big, &small]).unwrap(), 0.8);
}

#[test]
fn edge_mask_f1_counts_upper_triangle() {
    let mut truth = vec![0u8; 9];
    for (i, j) in [(0, 1), (1, 2)] {
        truth[i * 3 + j] = 1;
        truth[j * 3 + i] = 1;
    }
    let mut pred = vec![0u8; 9];
    for (i, j) in [(0, 1), (0, 2)] {
        pred[i * 3 + j] = 1;
        pred[j * 3 + i] = 1;
    }
    let t = Tally::of(&Output::EdgeMask(pred), &Output::EdgeMask(truth.clone())).unwrap();
    assert_eq!((t.tp, t.fp, t.fn_), (1, 1, 1));
    assert_eq!(t.score(Kind::Mask), 0.5);
    assert_eq!(score(&[Output::EdgeMask(truth.clone())], &[&Output::EdgeMask(truth)]).unwrap(), 1.0);
}

#[test]
fn score_rejects_mismatches() {
    assert!(score(&[Output::MaskOne(0)], &[&Output::Pointer(vec![0])]).is_err());
    assert!(score(&[], &[&Output::MaskOne(0)]).is_err());
    assert!(matches!(score(&[], &[]), Err(Error::EmptyEvaluation)));
}

#[test]
fn predictions_decode_by_kind() {
    let l = Tensor::new(vec![1, 2, 2], vec![0.1, 0.9, 3.0, -1.0]).unwrap();
    assert_eq!(predict(&l, Kind::Pointer).unwrap(), vec![Output::Pointer(vec![1, 0])]);
    let m = Tensor::new(vec![2, 3], vec![0.0, -1.0, 2.0, 5.0, 5.0, 1.0]).unwrap();
    assert_eq!(predict(&m, Kind::MaskOne).unwrap(), vec![Output::MaskOne(2), Output::MaskOne(0)]);
    let e = Tensor::new(vec![1, 2, 2], vec![9.0, 0.5, 0.5, 9.0]).unwrap();
    assert_eq!(predict(&e, Kind::Mask).unwrap(), vec![Output::EdgeMask(vec![0, 1, 1, 0])]);
    assert!(predict(&m, Kind::Pointer).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn score_is_permutation_invariant(n in 1usize..8, pred in prop::collection::vec(0usize..8, 8), truth in prop::collection::vec(0usize..8, 8), seed in 0u64..100) {
        use rand::seq::SliceRandom;
        let p: Vec<usize> = pred[..n].iter().map(|v| v % n).collect();
        let t: Vec<usize> = truth[..n].iter().map(|v| v % n).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let relabel = |v: &[usize]| {
            let mut out = vec![0; n];
            for i in 0..n {
                out[perm[i]] = perm[v[i]];
            }
            Output::Pointer(out)
        };
        let a = score(&[Output::Pointer(p.clone())], &[&Output::Pointer(t.clone())]).unwrap();
        let b = score(&[relabel(&p)], &[&relabel(&t)]).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn evaluate_rejects_empty_request() {
    let ck = checkpoint(Task::Minimum, Mode::NohintLatent, 0);
    assert!(matches!(evaluate(&ck, 16, 0, 0), Err(Error::EmptyEvaluation)));
}

#[test]
fn single_instance_report() {
    let ck = checkpoint(Task::Sorting, Mode::NohintPlain, 0);
    let r = evaluate(&ck, 6, 1, 0).unwrap();
    assert_eq!(r.per_instance.len(), 1);
    assert_eq!(r.instance_count, 1);
    assert_eq!(r.score, r.per_instance[0]);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["task"], "sorting");
    assert_eq!(json["mode"], "nohint_plain");
}

#[test]
fn constant_output_head_scores_at_chance() {
    // with a zero score head every node ties and the prediction is node 0,
    // which holds the minimum with probability 1/16
    let mut ck = checkpoint(Task::Minimum, Mode::NohintLatent, 0);
    for path in ["dec.out.score.w", "dec.out.score.b"] {
        ck.params.get_mut(path).unwrap().data_mut().fill(0.0);
    }
    let r = evaluate(&ck, 16, 512, 7).unwrap();
    // binomial standard error sqrt(p (1 - p) / 512) is about 0.0107
    assert!((r.score - 1.0 / 16.0).abs() < 4.0 * 0.0107, "{}", r.score);
}

#[test]
fn untrained_minimum_prefers_extreme_keys() {
    // the input encoding reaches the score head directly, so untrained
    // logits are close to affine in the key and favour the minimum or the
    // maximum rather than a uniform choice
    let mut hits = 0.0;
    for s in 0..8 {
        hits += evaluate(&checkpoint(Task::Minimum, Mode::NohintLatent, s), 16, 64, s + 100).unwrap().score;
    }
    assert!(hits / 8.0 > 1.0 / 16.0, "{}", hits / 8.0);
}

#[test]
fn evaluation_is_deterministic_and_seeded() {
    let ck = checkpoint(Task::BinarySearch, Mode::NohintLatent, 2);
    assert_eq!(evaluate(&ck, 8, 20, 5).unwrap(), evaluate(&ck, 8, 20, 5).unwrap());
    assert_eq!(test_instances(Task::Bfs, 6, 3, 1).unwrap(), test_instances(Task::Bfs, 6, 3, 1).unwrap());
}

#[test]
fn stability_curve_ends_at_one() {
    let ck = checkpoint(Task::Sorting, Mode::NohintLatent, 0);
    for n in [1, 5, 9] {
        let inst = sample_instance(Task::Sorting, n, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap();
        let c = probe_prediction_stability(&ck, &inst, StabilityDecoder::Output).unwrap();
        assert_eq!(c.len(), n);
        assert_eq!(*c.last().unwrap(), 1.0);
        assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn stability_probe_hint_decoder_needs_hint_mode() {
    let inst = sample_instance(Task::Sorting, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let hints = checkpoint(Task::Sorting, Mode::HintsSupervised, 0);
    let c = probe_prediction_stability(&hints, &inst, StabilityDecoder::Hint).unwrap();
    assert_eq!(c.len(), 5);
    assert_eq!(c[4], 1.0);
    let latent = checkpoint(Task::Sorting, Mode::NohintLatent, 0);
    assert!(probe_prediction_stability(&latent, &inst, StabilityDecoder::Hint).is_err());
}

#[test]
fn stability_probe_needs_pointer_task() {
    let ck = checkpoint(Task::Minimum, Mode::NohintLatent, 0);
    let inst = sample_instance(Task::Minimum, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(probe_prediction_stability(&ck, &inst, StabilityDecoder::Output).is_err());
}

#[test]
fn identical_states_are_their_own_nearest() {
    let h = Tensor::new(vec![1, 3, 2], vec![0.0, 1.0, 2.0, 0.5, -1.0, 4.0]).unwrap();
    assert_eq!(nearest_same_index(&h, &h), 1.0);
    // every row of the other side identical: ties go to index 0
    let flat = Tensor::new(vec![1, 3, 2], vec![1.0; 6]).unwrap();
    assert!((nearest_same_index(&h, &flat) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn equivalence_probe_on_untrained_model() {
    let ck = checkpoint(Task::Sorting, Mode::NohintLatent, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pair = sample_augmentation(&sample_instance(Task::Sorting, 6, &mut rng).unwrap(), &mut rng).unwrap();
    let c = probe_equivalence_similarity(&ck, &pair).unwrap();
    assert_eq!(c.len(), 6);
    assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(c, probe_equivalence_similarity(&ck, &pair).unwrap());
    let same = nar_core::EquivalencePair { base: pair.base.clone(), augmented: pair.base.clone() };
    assert!(probe_equivalence_similarity(&ck, &same).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn equivalence_probe_rejects_graph_search_tasks() {
    let ck = checkpoint(Task::Bfs, Mode::NohintLatent, 0);
    let inst = sample_instance(Task::Bfs, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let pair = nar_core::EquivalencePair { base: inst.clone(), augmented: inst };
    assert!(probe_equivalence_similarity(&ck, &pair).is_err());
}

#[test]
fn curve_csv_format() {
    let mut out = Vec::new();
    write_curve(&mut out, &[0.25, 1.0]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "step,value\n1,0.25\n2,1\n");
}
