//! Output and hint losses and the step-wise contrastive term.

use nar_autodiff::nn::mlp;
use nar_autodiff::params::mlp_specs;
use nar_autodiff::{ParamSpec, ParamVars, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HintLogits, Rollout};
use crate::task::{Kind, Output, ProblemInstance};
use crate::taskgen::{insertion_sort_trajectory, HintTrajectory};

/// Parameter prefix of the projection head `g`.
pub const HEAD: &str = "head.g";

/// The projection head: a two-layer MLP `d -> d -> d`.
pub fn head_specs(d: usize) -> Vec<ParamSpec> {
    mlp_specs(HEAD, &[d, d, d])
}

/// Loss values of one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub output_loss: f64,
    pub hint_loss: f64,
    pub contrastive_loss: f64,
    pub total: f64,
    /// Contrastive term per processor step; empty without augmentations.
    pub per_step: Vec<f64>,
}

/// Batch size and node count of an output logit tensor.
fn dims(logits: &[usize], kind: Kind) -> Result<(usize, usize)> {
    match (kind, logits) {
        (Kind::MaskOne, &[b, n]) => Ok((b, n)),
        (Kind::Pointer | Kind::Mask, &[b, n, m]) if n == m => Ok((b, n)),
        _ => Err(Error::input("output_loss", format!("{kind:?} logits of shape {logits:?}"))),
    }
}

/// Mean categorical cross-entropy for pointers and mask_one outputs, mean
/// binary cross-entropy over the upper triangle for edge masks. `logits` is
/// `[B, n, n]` or `[B, n]`.
pub fn output_loss<'t, T: Scalar>(logits: &Var<'t, T>, truths: &[&Output]) -> Result<Var<'t, T>> {
    let kind = match truths.first() {
        Some(t) => t.kind(),
        None => return Err(Error::input("output_loss", "no targets")),
    };
    let (b, n) = dims(logits.shape(), kind)?;
    if truths.len() != b {
        return Err(Error::input("output_loss", format!("{} targets for a batch of {b}", truths.len())));
    }
    let mut idx = Vec::with_capacity(b * n);
    let mut mask = Vec::new();
    for t in truths {
        match (kind, t) {
            (Kind::Pointer, Output::Pointer(p)) if p.len() == n => idx.extend_from_slice(p),
            (Kind::MaskOne, Output::MaskOne(i)) if *i < n => idx.push(*i),
            (Kind::Mask, Output::EdgeMask(m)) if m.len() == n * n => mask.extend(m.iter().map(|&v| v as f64)),
            _ => return Err(Error::input("output_loss", format!("target {t:?} does not match {kind:?} n = {n}"))),
        }
    }
    match kind {
        Kind::Pointer | Kind::MaskOne => Ok(logits.log_softmax()?.gather(&idx)?.mean().neg()?),
        Kind::Mask => {
            let pairs = n * (n - 1) / 2;
            let mut upper = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    upper[i * n + j] = 1.0 / (pairs * b) as f64;
                }
            }
            let upper: Vec<f64> = (0..b).flat_map(|_| upper.iter().copied()).collect();
            let tape = logits.tape();
            let y = tape.constant(Tensor::from_f64(vec![b, n, n], &mask)?);
            let weight = tape.constant(Tensor::from_f64(vec![b, n, n], &upper)?);
            // softplus(x) - y x is the cross-entropy of sigmoid(x) against y
            Ok(logits.softplus()?.sub(&y.mul(logits)?)?.mul(&weight)?.sum())
        }
        Kind::Scalar => Err(Error::input("output_loss", "scalar outputs are not supported")),
    }
}

/// Mean over steps of the pred_h, i and j cross-entropies, summed.
pub fn hint_loss<'t, T: Scalar>(hints: &[HintLogits<'t, T>], trajectories: &[&HintTrajectory]) -> Result<Var<'t, T>> {
    let first = hints.first().ok_or_else(|| Error::input("hint_loss", "no hint steps"))?;
    let b = first.i.shape()[0];
    if trajectories.len() != b {
        return Err(Error::input("hint_loss", format!("{} trajectories for a batch of {b}", trajectories.len())));
    }
    if let Some(tr) = trajectories.iter().find(|tr| tr.len() != hints.len()) {
        return Err(Error::input(
            "hint_loss",
            format!("trajectory has {} steps, model ran {}", tr.len(), hints.len()),
        ));
    }
    let mut total: Option<Var<'t, T>> = None;
    for (t, h) in hints.iter().enumerate() {
        let steps: Vec<_> = trajectories.iter().map(|tr| &tr.steps[t]).collect();
        let pred: Vec<usize> = steps.iter().flat_map(|s| s.pred_h.iter().copied()).collect();
        let i: Vec<usize> = steps.iter().map(|s| s.i).collect();
        let j: Vec<usize> = steps.iter().map(|s| s.j).collect();
        let ce = |logits: &Var<'t, T>, idx: &[usize]| -> Result<Var<'t, T>> {
            Ok(logits.log_softmax()?.gather(idx)?.mean().neg()?)
        };
        let step = ce(&h.pred_h, &pred)?.add(&ce(&h.i, &i)?)?.add(&ce(&h.j, &j)?)?;
        total = Some(match total {
            Some(acc) => acc.add(&step)?,
            None => step,
        });
    }
    Ok(total.expect("at least one step").scale(1.0 / hints.len() as f64)?)
}

/// Symmetric InfoNCE over a `[B, n, n]` similarity matrix whose diagonal
/// holds the matched pairs: the mean over anchors of `-log softmax` at the
/// diagonal, taken along rows and along columns and averaged.
pub fn contrastive_from_similarity<'t, T: Scalar>(phi: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (b, n) = match phi.shape() {
        &[b, n, m] if n == m => (b, n),
        s => return Err(Error::input("contrastive", format!("similarity of shape {s:?}"))),
    };
    let diag: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
    let rows = phi.log_softmax()?.gather(&diag)?.mean();
    let cols = phi.swap_axes(1, 2)?.log_softmax()?.gather(&diag)?.mean();
    Ok(rows.add(&cols)?.scale(-0.5)?)
}

/// Contrastive term of one step for `[B, n, d]` states of the base and
/// augmented inputs, with `phi(x, y) = <g(x), g(y)>`.
pub fn contrastive_step_loss<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    h_base: &Var<'t, T>,
    h_aug: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    if h_base.shape() != h_aug.shape() || h_base.shape().len() != 3 {
        return Err(Error::input(
            "contrastive_step_loss",
            format!("states of shape {:?} and {:?}", h_base.shape(), h_aug.shape()),
        ));
    }
    let d = h_base.shape()[2];
    let gb = mlp(p, HEAD, h_base, &[d, d, d])?;
    let ga = mlp(p, HEAD, h_aug, &[d, d, d])?;
    contrastive_from_similarity(&gb.matmul_t(&ga)?)
}

/// One side of a batch: a rollout and the instances it was run on.
pub struct Side<'a, 't, T: Scalar> {
    pub rollout: &'a Rollout<'t, T>,
    pub instances: &'a [&'a ProblemInstance],
}

/// The differentiable total together with its reported parts.
pub struct Loss<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub report: LossReport,
}

fn side_losses<'t, T: Scalar>(side: &Side<'_, 't, T>) -> Result<(Var<'t, T>, Option<Var<'t, T>>)> {
    let truths: Vec<&Output> = side.instances.iter().map(|i| &i.output).collect();
    let out = output_loss(&side.rollout.output, &truths)?;
    if side.rollout.hints.is_empty() {
        return Ok((out, None));
    }
    let trajectories = side
        .instances
        .iter()
        .map(|i| insertion_sort_trajectory(i.node("key")?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&HintTrajectory> = trajectories.iter().collect();
    Ok((out, Some(hint_loss(&side.rollout.hints, &refs)?)))
}

fn mean2<'t, T: Scalar>(a: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    match b {
        Some(b) => Ok(a.add(&b)?.scale(0.5)?),
        None => Ok(a),
    }
}

/// `output + hint + w * contrastive`. With an augmented side, output and
/// hint losses are averaged over both sides and the contrastive term is the
/// mean over steps of [`contrastive_step_loss`].
pub fn total_loss<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    base: &Side<'_, 't, T>,
    augmented: Option<&Side<'_, 't, T>>,
    w: f64,
) -> Result<Loss<'t, T>> {
    let (out_b, hint_b) = side_losses(base)?;
    let mut per_step = Vec::new();
    let (output, hint, contrastive) = match augmented {
        None => (out_b, hint_b, None),
        Some(aug) => {
            let task = base.instances.first().map(|i| i.task);
            if let Some(task) = task.filter(|t| !t.supports_contrastive()) {
                return Err(Error::Config(format!("{task} has no equivalence augmentations")));
            }
            let (out_a, hint_a) = side_losses(aug)?;
            let (hb, ha) = (&base.rollout.hs, &aug.rollout.hs);
            if hb.len() != ha.len() || hb.is_empty() {
                return Err(Error::input("total_loss", format!("{} base steps, {} augmented", hb.len(), ha.len())));
            }
            let mut sum: Option<Var<'t, T>> = None;
            for (x, y) in hb.iter().zip(ha) {
                let l = contrastive_step_loss(p, x, y)?;
                per_step.push(l.value().item().f64());
                sum = Some(match sum {
                    Some(s) => s.add(&l)?,
                    None => l,
                });
            }
            let c = sum.expect("nonempty").scale(1.0 / hb.len() as f64)?;
            let hint = match (hint_b, hint_a) {
                (Some(a), b) => Some(mean2(a, b)?),
                (None, _) => None,
            };
            (mean2(out_b, Some(out_a))?, hint, Some(c))
        }
    };
    let mut total = output.clone();
    if let Some(h) = &hint {
        total = total.add(h)?;
    }
    if let Some(c) = &contrastive {
        total = total.add(&c.scale(w)?)?;
    }
    let value = |v: &Option<Var<'t, T>>| v.as_ref().map_or(0.0, |v| v.value().item().f64());
    let report = LossReport {
        output_loss: output.value().item().f64(),
        hint_loss: value(&hint),
        contrastive_loss: value(&contrastive),
        total: total.value().item().f64(),
        per_step,
    };
    Ok(Loss { total, report })
}
