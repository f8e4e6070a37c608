//! Micro-F1 scoring, evaluation at a test size, and the two probes:
//! prediction stability across steps and nearest-neighbour agreement of
//! hidden states across an equivalence pair.

use std::io::Write;

use nar_autodiff::{ParamVars, ParameterSet, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_rollout_batch, BatchInputs, Checkpoint, Mode, ModelConfig, RolloutOptions};
use crate::task::{EquivalencePair, Kind, Output, ProblemInstance, Task};
use crate::taskgen::{instance_seed, sample_instance};

/// Instances per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 32;
/// Instances scored by [`evaluate`] unless told otherwise.
pub const DEFAULT_COUNT: usize = 128;
/// Node count of the out-of-distribution test set.
pub const TEST_SIZE: usize = 64;

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row argmax for pointers, argmax for mask_one, `logit > 0` (sigmoid above
/// one half) for edge masks. `logits` is batched as `[B, n, n]` or `[B, n]`.
pub fn predict(logits: &Tensor<f32>, kind: Kind) -> Result<Vec<Output>> {
    let shape = logits.shape();
    let d = logits.data();
    match (kind, shape) {
        (Kind::Pointer, &[b, n, m]) if n == m => Ok((0..b)
            .map(|k| Output::Pointer(d[k * n * n..(k + 1) * n * n].chunks(n).map(argmax).collect()))
            .collect()),
        (Kind::MaskOne, &[b, n]) => Ok((0..b).map(|k| Output::MaskOne(argmax(&d[k * n..(k + 1) * n]))).collect()),
        (Kind::Mask, &[b, n, m]) if n == m => Ok((0..b)
            .map(|k| {
                let x = &d[k * n * n..(k + 1) * n * n];
                let mut mask = vec![0u8; n * n];
                for i in 0..n {
                    for j in i + 1..n {
                        let on = u8::from(x[i * n + j] > 0.0);
                        mask[i * n + j] = on;
                        mask[j * n + i] = on;
                    }
                }
                Output::EdgeMask(mask)
            })
            .collect()),
        _ => Err(Error::input("predict", format!("{kind:?} logits of shape {shape:?}"))),
    }
}

/// Element counts behind micro-F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    /// Pointer and mask_one elements predicted exactly.
    pub correct: usize,
    pub total: usize,
    /// Positive-class counts over upper-triangle pairs of edge masks.
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Tally {
    pub fn of(pred: &Output, truth: &Output) -> Result<Tally> {
        let mut t = Tally::default();
        match (pred, truth) {
            (Output::Pointer(p), Output::Pointer(q)) if p.len() == q.len() => {
                t.total = q.len();
                t.correct = p.iter().zip(q).filter(|(a, b)| a == b).count();
            }
            (Output::MaskOne(p), Output::MaskOne(q)) => {
                t.total = 1;
                t.correct = usize::from(p == q);
            }
            (Output::EdgeMask(p), Output::EdgeMask(q)) if p.len() == q.len() => {
                let n = (q.len() as f64).sqrt().round() as usize;
                if n * n != q.len() {
                    return Err(Error::input("score", format!("edge mask of {} entries", q.len())));
                }
                for i in 0..n {
                    for j in i + 1..n {
                        match (p[i * n + j] != 0, q[i * n + j] != 0) {
                            (true, true) => t.tp += 1,
                            (true, false) => t.fp += 1,
                            (false, true) => t.fn_ += 1,
                            (false, false) => {}
                        }
                    }
                }
            }
            _ => return Err(Error::input("score", format!("prediction {pred:?} against truth {truth:?}"))),
        }
        Ok(t)
    }

    pub fn add(&mut self, o: Tally) {
        self.correct += o.correct;
        self.total += o.total;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    /// Accuracy for categorical outputs, positive-class F1 for edge masks.
    /// An edge mask with no positives predicted or present scores 1.
    pub fn score(&self, kind: Kind) -> f64 {
        match kind {
            Kind::Mask => {
                let denom = 2 * self.tp + self.fp + self.fn_;
                if denom == 0 {
                    1.0
                } else {
                    2.0 * self.tp as f64 / denom as f64
                }
            }
            _ if self.total == 0 => 0.0,
            _ => self.correct as f64 / self.total as f64,
        }
    }
}

/// Micro-F1 of a corpus: element counts are pooled before scoring.
pub fn score(preds: &[Output], truths: &[&Output]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::input("score", format!("{} predictions, {} truths", preds.len(), truths.len())));
    }
    let kind = truths.first().ok_or(Error::EmptyEvaluation)?.kind();
    let mut tally = Tally::default();
    for (p, t) in preds.iter().zip(truths) {
        tally.add(Tally::of(p, t)?);
    }
    Ok(tally.score(kind))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: Task,
    pub mode: Mode,
    pub test_size: usize,
    pub instance_count: usize,
    /// Micro-F1 over all instances.
    pub score: f64,
    pub per_instance: Vec<f64>,
}

impl ScoreReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Predictions of the model for `instances`, `chunk` at a time. Instances
/// within a chunk must share `n`.
pub fn predict_instances(
    params: &ParameterSet,
    cfg: &ModelConfig,
    instances: &[ProblemInstance],
    chunk: usize,
) -> Result<Vec<Output>> {
    let mut out = Vec::with_capacity(instances.len());
    for part in instances.chunks(chunk.max(1)) {
        let refs: Vec<&ProblemInstance> = part.iter().collect();
        let inputs = BatchInputs::new(&refs, cfg.use_positions)?;
        let tape = Tape::<f32>::inference();
        let p = ParamVars::bind(&tape, params);
        let r = forward_rollout_batch(&p, &inputs, cfg, &RolloutOptions::default())?;
        out.extend(predict(r.output.value(), inputs.task.output().kind)?);
    }
    Ok(out)
}

/// Micro-F1 and per-instance scores of the model on `instances`.
pub fn score_instances(
    params: &ParameterSet,
    cfg: &ModelConfig,
    instances: &[ProblemInstance],
) -> Result<(f64, Vec<f64>)> {
    let first = instances.first().ok_or(Error::EmptyEvaluation)?;
    let kind = first.task.output().kind;
    let preds = predict_instances(params, cfg, instances, EVAL_CHUNK)?;
    let mut tally = Tally::default();
    let mut per = Vec::with_capacity(instances.len());
    for (p, inst) in preds.iter().zip(instances) {
        let t = Tally::of(p, &inst.output)?;
        per.push(t.score(kind));
        tally.add(t);
    }
    Ok((tally.score(kind), per))
}

/// `count` instances of size `n`, the `k`-th drawn from its own stream of
/// `seed`.
pub fn test_instances(task: Task, n: usize, count: usize, seed: u64) -> Result<Vec<ProblemInstance>> {
    (0..count)
        .map(|k| sample_instance(task, n, &mut ChaCha8Rng::seed_from_u64(instance_seed(seed, k as u64))))
        .collect()
}

/// Scores the checkpoint on `count` fresh instances of size `size`.
pub fn evaluate(ck: &Checkpoint, size: usize, count: usize, seed: u64) -> Result<ScoreReport> {
    if count == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let instances = test_instances(ck.task, size, count, seed)?;
    let (score, per_instance) = score_instances(&ck.params, &ck.config, &instances)?;
    Ok(ScoreReport {
        task: ck.task,
        mode: ck.config.mode,
        test_size: size,
        instance_count: count,
        score,
        per_instance,
    })
}

/// Which decoder the stability probe reads pointers from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityDecoder {
    /// The output decoder applied to every `h^t`.
    Output,
    /// The `pred_h` hint decoder (hints_supervised checkpoints).
    Hint,
}

/// Fraction of nodes whose pointer at step `t` equals the final pointer,
/// for `t = 1 .. T`.
pub fn probe_prediction_stability(
    ck: &Checkpoint,
    instance: &ProblemInstance,
    decoder: StabilityDecoder,
) -> Result<Vec<f64>> {
    if ck.task.output().kind != Kind::Pointer || instance.task != ck.task {
        return Err(Error::Config(format!("stability probe needs a pointer task, not {}", instance.task)));
    }
    if decoder == StabilityDecoder::Hint && ck.config.mode != Mode::HintsSupervised {
        return Err(Error::Config(format!("no hint decoder in {} mode", ck.config.mode)));
    }
    let inputs = BatchInputs::new(&[instance], ck.config.use_positions)?;
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &ck.params);
    let opts = RolloutOptions { trace_outputs: decoder == StabilityDecoder::Output, steps: None };
    let r = forward_rollout_batch(&p, &inputs, &ck.config, &opts)?;
    let logits: Vec<&Tensor<f32>> = match decoder {
        StabilityDecoder::Output => r.step_outputs.iter().map(|v| v.value()).collect(),
        StabilityDecoder::Hint => r.hints.iter().map(|h| h.pred_h.value()).collect(),
    };
    let pointers = logits
        .iter()
        .map(|l| match predict(l, Kind::Pointer)?.pop() {
            Some(Output::Pointer(p)) => Ok(p),
            _ => Err(Error::input("probe", "no pointer prediction")),
        })
        .collect::<Result<Vec<_>>>()?;
    let last = pointers.last().ok_or_else(|| Error::input("probe", "no steps"))?;
    let n = instance.n as f64;
    Ok(pointers
        .iter()
        .map(|p| p.iter().zip(last).filter(|(a, b)| a == b).count() as f64 / n)
        .collect())
}

/// For every step, the fraction of base nodes whose nearest augmented
/// hidden state (Euclidean, ties to the lower index) belongs to the node of
/// the same rank. Augmentations keep every node's rank, so that node is the
/// one with the same index.
pub fn probe_equivalence_similarity(ck: &Checkpoint, pair: &EquivalencePair) -> Result<Vec<f64>> {
    let (b, a) = (&pair.base, &pair.augmented);
    if !ck.task.supports_contrastive() || b.task != ck.task || a.task != ck.task {
        return Err(Error::Config(format!("equivalence probe is not defined for {}", b.task)));
    }
    if b.n != a.n {
        return Err(Error::input("probe", format!("pair of sizes {} and {}", b.n, a.n)));
    }
    let tape = Tape::<f32>::inference();
    let p = ParamVars::bind(&tape, &ck.params);
    let opts = RolloutOptions::default();
    let rb = forward_rollout_batch(&p, &BatchInputs::new(&[b], ck.config.use_positions)?, &ck.config, &opts)?;
    let ra = forward_rollout_batch(&p, &BatchInputs::new(&[a], ck.config.use_positions)?, &ck.config, &opts)?;
    Ok(rb
        .hs
        .iter()
        .zip(&ra.hs)
        .map(|(hb, ha)| nearest_same_index(hb.value(), ha.value()))
        .collect())
}

/// Fraction of rows `i` of `[1, n, d]` states whose nearest row of `other`
/// is row `i`.
pub fn nearest_same_index(states: &Tensor<f32>, other: &Tensor<f32>) -> f64 {
    let (n, d) = (states.shape()[1], states.shape()[2]);
    let (x, y) = (states.data(), other.data());
    let mut hits = 0;
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let mut best = (f64::INFINITY, 0);
        for j in 0..n {
            let dist: f64 = xi
                .iter()
                .zip(&y[j * d..(j + 1) * d])
                .map(|(u, v)| (*u as f64 - *v as f64).powi(2))
                .sum();
            if dist < best.0 {
                best = (dist, j);
            }
        }
        hits += usize::from(best.1 == i);
    }
    hits as f64 / n as f64
}

/// Writes a probe curve as `step,value` rows with steps counted from 1.
pub fn write_curve<W: Write>(mut out: W, values: &[f64]) -> Result<()> {
    writeln!(out, "step,value")?;
    for (t, v) in values.iter().enumerate() {
        writeln!(out, "{},{}", t + 1, v)?;
    }
    Ok(())
}
