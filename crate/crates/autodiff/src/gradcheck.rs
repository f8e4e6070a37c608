//! Finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamVars, ParameterSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates to sample; every coordinate is checked when the
    /// parameters hold fewer.
    pub coords: usize,
    pub tolerance: f64,
    /// Smallest denominator of the relative error. Gradients below it are
    /// effectively compared in absolute terms; single precision needs a
    /// floor near the loss scale because rounding of the loss dominates
    /// the difference quotient for small gradients.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            coords: 100,
            tolerance: 1e-3,
            floor: 1.0,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    /// Settings for double-precision checks.
    pub fn f64() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            floor: 1e-6,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordError>,
    /// Coordinates above tolerance.
    pub failures: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar `f` with central differences.
pub fn grad_check<T, F>(f: F, params: &ParameterSet, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamVars<'t, T>) -> Result<Var<'t, T>>,
{
    grad_check_typed(f, &params.cast::<T>(), cfg)
}

/// [`grad_check`] on parameters already held at precision `T`.
pub fn grad_check_typed<T, F>(
    f: F,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamVars<'t, T>) -> Result<Var<'t, T>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars = ParamVars::bind_typed(&tape, params);
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(&loss)?;
        vars.gradients(&grads)
    };

    let index: Vec<(&String, usize)> = params
        .iter()
        .flat_map(|(k, v)| (0..v.numel()).map(move |i| (k, i)))
        .collect();
    let picks: Vec<usize> = if index.len() <= cfg.coords {
        (0..index.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..cfg.coords).map(|_| rng.gen_range(0..index.len())).collect()
    };

    let eval = |p: &BTreeMap<String, Tensor<T>>| -> Result<f64> {
        let tape = Tape::inference();
        let vars = ParamVars::bind_typed(&tape, p);
        Ok(f(&tape, &vars)?.value().item().f64())
    };

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for pick in picks {
        let (path, i) = index[pick];
        let orig = params[path].data()[i];
        let set = |w: &mut BTreeMap<String, Tensor<T>>, v: T| {
            w.get_mut(path).unwrap().data_mut()[i] = v;
        };
        set(&mut work, orig + T::of(cfg.eps));
        let plus = eval(&work)?;
        set(&mut work, orig - T::of(cfg.eps));
        let minus = eval(&work)?;
        set(&mut work, orig);
        // divide by the step actually taken after rounding to T
        let step = (orig + T::of(cfg.eps)).f64() - (orig - T::of(cfg.eps)).f64();
        let numeric = (plus - minus) / step;
        let a = analytic[path].data()[i].f64();
        let err = CoordError {
            path: path.clone(),
            index: i,
            analytic: a,
            numeric,
            rel_error: rel_error(a, numeric, cfg.floor),
        };
        report.checked += 1;
        if err.rel_error > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err.rel_error);
            report.worst = Some(err.clone());
        }
        if err.rel_error > cfg.tolerance {
            report.failures.push(err);
        }
    }
    Ok(report)
}
