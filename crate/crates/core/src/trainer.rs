//! Adam, batch sampling and the training loop with validation-based early
//! stopping.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nar_autodiff::{init_parameters, ParamVars, ParameterSet, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::score_instances;
use crate::model::{forward_rollout_batch, BatchInputs, Checkpoint, ModelConfig, RolloutOptions, PARAM_VERSION};
use crate::objective::{head_specs, total_loss, LossReport, Side};
use crate::task::{ProblemInstance, Task};
use crate::taskgen::{mix_seed, sample_augmentation, sample_instance};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience_steps: usize,
    pub train_sizes: Vec<usize>,
    pub val_size: usize,
    pub val_set_size: usize,
    pub seed: u64,
    /// Global-norm bound; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    /// Weight `w` of the contrastive term. `None` means 1 for tasks with
    /// equivalence augmentations and 0 otherwise; 0 trains without
    /// augmentations.
    pub contrastive_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_steps: 10_000,
            eval_every: 50,
            patience_steps: 500,
            train_sizes: vec![4, 7, 11, 13, 16],
            val_size: 16,
            val_set_size: 128,
            seed: 0,
            grad_clip_norm: Some(1.0),
            contrastive_weight: None,
        }
    }
}

impl TrainConfig {
    /// Checks the configuration for `task` and returns warnings that do not
    /// prevent training.
    pub fn validate(&self, task: Task) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.eval_every == 0 || self.val_set_size == 0 {
            return bad("batch_size, eval_every and val_set_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} is not a finite non-negative number", self.learning_rate));
        }
        if self.grad_clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip_norm must be positive".into());
        }
        if self.train_sizes.is_empty() {
            return bad("train_sizes is empty".into());
        }
        let min = task.min_nodes();
        if let Some(n) = self.train_sizes.iter().chain([&self.val_size]).find(|&&n| n < min) {
            return bad(format!("{task} needs at least {min} nodes, got size {n}"));
        }
        match self.contrastive_weight {
            Some(w) if !(w >= 0.0 && w.is_finite()) => return bad(format!("contrastive_weight {w} is invalid")),
            Some(w) if w > 0.0 && !task.supports_contrastive() => {
                return bad(format!("{task} has no equivalence augmentations; set contrastive_weight to 0"))
            }
            _ => {}
        }
        let mut warnings = Vec::new();
        if !self.patience_steps.is_multiple_of(self.eval_every) {
            warnings.push(format!(
                "patience_steps {} is not a multiple of eval_every {}",
                self.patience_steps, self.eval_every
            ));
        }
        Ok(warnings)
    }

    /// The contrastive weight in effect for `task`.
    pub fn weight(&self, task: Task) -> f64 {
        self.contrastive_weight
            .unwrap_or(if task.supports_contrastive() { 1.0 } else { 0.0 })
    }

    pub fn uses_augmentations(&self, task: Task) -> bool {
        self.weight(task) > 0.0
    }
}

/// Adam moments, mirroring the parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

const OPTIMIZER_STEP_FILE: &str = "step.json";

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros = || {
            let mut s = ParameterSet::new(params.version());
            for (path, t) in params.iter() {
                s.insert(path, Tensor::zeros(t.shape().to_vec())).expect("fresh set");
            }
            s
        };
        OptimizerState { step: 0, m: zeros(), v: zeros() }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.m.save(&dir.join("m"))?;
        self.v.save(&dir.join("v"))?;
        fs::write(dir.join(OPTIMIZER_STEP_FILE), serde_json::to_vec(&self.step)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(OptimizerState {
            step: serde_json::from_slice(&fs::read(dir.join(OPTIMIZER_STEP_FILE))?)?,
            m: ParameterSet::load(&dir.join("m"))?,
            v: ParameterSet::load(&dir.join("v"))?,
        })
    }
}

/// Euclidean norm of all gradients together.
pub fn global_norm(grads: &BTreeMap<String, Tensor<f32>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales the gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One bias-corrected Adam update. Parameters without a gradient are left
/// unchanged.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (path, g) in grads {
        let p = params.get_mut(path)?;
        if p.shape() != g.shape() {
            return Err(Error::input("adam_step", format!("{path}: gradient shape {:?}", g.shape())));
        }
        let m = state.m.get_mut(path)?.data_mut();
        let v = state.v.get_mut(path)?.data_mut();
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gk = gk as f64;
            let mk = ADAM_BETA1 * m[k] as f64 + (1.0 - ADAM_BETA1) * gk;
            let vk = ADAM_BETA2 * v[k] as f64 + (1.0 - ADAM_BETA2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + ADAM_EPS);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Training instances of one size, with one augmentation each when the
/// contrastive term is on.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub base: Vec<ProblemInstance>,
    pub augmented: Option<Vec<ProblemInstance>>,
}

/// Draws one size uniformly from the training sizes, then `batch_size`
/// independent instances of it.
pub fn make_batch<R: Rng + ?Sized>(task: Task, cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    let n = *cfg
        .train_sizes
        .choose(rng)
        .ok_or_else(|| Error::Config("train_sizes is empty".into()))?;
    let base = (0..cfg.batch_size)
        .map(|_| sample_instance(task, n, rng))
        .collect::<Result<Vec<_>>>()?;
    if !cfg.uses_augmentations(task) {
        return Ok(Batch { n, base, augmented: None });
    }
    let mut augmented = Vec::with_capacity(base.len());
    for b in &base {
        augmented.push(sample_augmentation(b, rng)?.augmented);
    }
    Ok(Batch { n, base, augmented: Some(augmented) })
}

/// Loss and parameter gradients of one batch.
pub fn batch_gradients(
    params: &ParameterSet,
    model: &ModelConfig,
    batch: &Batch,
    w: f64,
) -> Result<(LossReport, BTreeMap<String, Tensor<f32>>)> {
    let tape = Tape::<f32>::new();
    let p = ParamVars::bind(&tape, params);
    let opts = RolloutOptions::default();
    let base: Vec<&ProblemInstance> = batch.base.iter().collect();
    let rb = forward_rollout_batch(&p, &BatchInputs::new(&base, model.use_positions)?, model, &opts)?;
    let aug: Option<Vec<&ProblemInstance>> = batch.augmented.as_ref().map(|a| a.iter().collect());
    let ra = match &aug {
        Some(a) => Some(forward_rollout_batch(&p, &BatchInputs::new(a, model.use_positions)?, model, &opts)?),
        None => None,
    };
    let base_side = Side { rollout: &rb, instances: &base };
    let aug_side = ra.as_ref().zip(aug.as_ref()).map(|(r, a)| Side { rollout: r, instances: a });
    let loss = total_loss(&p, &base_side, aug_side.as_ref(), w)?;
    let grads = tape.backward(&loss.total)?;
    Ok((loss.report, p.gradients(&grads)))
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MetricRecord {
    Step {
        step: usize,
        seed: u64,
        lr: f64,
        n: usize,
        output_loss: f64,
        hint_loss: f64,
        contrastive_loss: f64,
        total: f64,
        grad_norm: f64,
    },
    Eval {
        step: usize,
        seed: u64,
        val_score: f64,
        best_score: f64,
        best_step: usize,
    },
}

/// Receives the metrics stream. `wall_ms` is the time since training
/// started; it is kept apart from the records so that they are
/// reproducible.
pub trait MetricsSink {
    fn record(&mut self, rec: &MetricRecord, wall_ms: f64) -> Result<()>;
}

impl MetricsSink for Vec<MetricRecord> {
    fn record(&mut self, rec: &MetricRecord, _wall_ms: f64) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// JSON lines: one record per line, with timings written to a separate
/// stream as `{"step", "event", "wall_ms"}` lines.
pub struct JsonlSink<M: Write, T: Write> {
    pub metrics: M,
    pub timing: Option<T>,
}

impl<M: Write, T: Write> MetricsSink for JsonlSink<M, T> {
    fn record(&mut self, rec: &MetricRecord, wall_ms: f64) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, rec)?;
        self.metrics.write_all(b"\n")?;
        if let Some(t) = &mut self.timing {
            let (event, step) = match rec {
                MetricRecord::Step { step, .. } => ("step", step),
                MetricRecord::Eval { step, .. } => ("eval", step),
            };
            serde_json::to_writer(&mut *t, &serde_json::json!({ "event": event, "step": step, "wall_ms": wall_ms }))?;
            t.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation score.
    pub best: Checkpoint,
    pub best_score: f64,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    /// Parameters and optimizer state after the last step.
    pub last: ParameterSet,
    pub optimizer: OptimizerState,
}

/// Seeds derived from the training seed.
pub fn init_seed(seed: u64) -> u64 {
    mix_seed(seed ^ 0x1)
}

fn batch_seed(seed: u64) -> u64 {
    mix_seed(seed ^ 0x2)
}

/// Seed of the fixed validation set.
pub fn validation_seed(seed: u64) -> u64 {
    mix_seed(seed ^ 0x3)
}

/// Model parameters plus the projection head when the contrastive term is on.
pub fn initial_parameters(task: Task, model: &ModelConfig, cfg: &TrainConfig) -> Result<ParameterSet> {
    let mut params = model.init(task, init_seed(cfg.seed))?;
    if cfg.uses_augmentations(task) {
        let head = init_parameters(&head_specs(model.hidden_dim), mix_seed(init_seed(cfg.seed)), PARAM_VERSION)?;
        for (path, t) in head.iter() {
            params.insert(path, t.clone())?;
        }
    }
    Ok(params)
}

/// Runs Adam on freshly sampled batches, scores the fixed validation set
/// every `eval_every` steps and after the last step, keeps the best
/// parameters and stops once `patience_steps` pass without improvement.
pub fn train(task: Task, model: &ModelConfig, cfg: &TrainConfig, sink: &mut dyn MetricsSink) -> Result<TrainOutcome> {
    model.validate(task)?;
    cfg.validate(task)?;
    let start = Instant::now();
    let ms = || start.elapsed().as_secs_f64() * 1e3;
    let w = cfg.weight(task);
    let mut params = initial_parameters(task, model, cfg)?;
    let mut opt = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(cfg.seed));
    let val = crate::eval::test_instances(task, cfg.val_size, cfg.val_set_size, validation_seed(cfg.seed))?;

    let mut best: Option<(f64, usize, ParameterSet)> = None;
    let mut steps_run = 0;
    let mut stopped_early = false;
    for step in 1..=cfg.max_steps {
        let batch = make_batch(task, cfg, &mut rng)?;
        let (report, mut grads) = batch_gradients(&params, model, &batch, w)?;
        let norm = global_norm(&grads);
        if !report.total.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if let Some(c) = cfg.grad_clip_norm {
            clip_global_norm(&mut grads, c);
        }
        adam_step(&mut params, &grads, &mut opt, cfg.learning_rate)?;
        steps_run = step;
        let rec = MetricRecord::Step {
            step,
            seed: cfg.seed,
            lr: cfg.learning_rate,
            n: batch.n,
            output_loss: report.output_loss,
            hint_loss: report.hint_loss,
            contrastive_loss: report.contrastive_loss,
            total: report.total,
            grad_norm: norm,
        };
        sink.record(&rec, ms())?;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let (score, _) = score_instances(&params, model, &val)?;
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, step, params.clone()));
            }
            let (best_score, best_step, _) = best.as_ref().expect("set above");
            sink.record(
                &MetricRecord::Eval {
                    step,
                    seed: cfg.seed,
                    val_score: score,
                    best_score: *best_score,
                    best_step: *best_step,
                },
                ms(),
            )?;
            if step - best_step >= cfg.patience_steps && step < cfg.max_steps {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_score, best_step, best_params) = match best {
        Some(b) => b,
        None => {
            let (score, _) = score_instances(&params, model, &val)?;
            (score, 0, params.clone())
        }
    };
    Ok(TrainOutcome {
        best: Checkpoint { task, config: model.clone(), params: best_params },
        best_score,
        best_step,
        steps_run,
        stopped_early,
        last: params,
        optimizer: opt,
    })
}
