//! Self-checks: oracles against brute force, gradients against finite
//! differences, and closed-form loss identities.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nar_autodiff::{grad_check, init_parameters, GradCheckConfig, GradCheckReport, Tape, Tensor, TensorError};

use crate::error::{Error, Result};
use crate::model::{forward_rollout_batch, BatchInputs, Mode, ModelConfig, RolloutOptions, PARAM_VERSION};
use crate::objective;
use crate::task::{Output, Task};
use crate::taskgen::{self, reference, HintTrajectory};

/// The oracle implementations under test. Swapping one out lets a test
/// confirm that the suite notices a broken oracle.
#[derive(Clone, Copy)]
pub struct Oracles {
    pub sort_pointers: fn(&[f32]) -> Result<Vec<usize>>,
    pub argmin: fn(&[f32]) -> Result<usize>,
    pub binary_search: fn(&[f32], f32) -> Result<usize>,
    pub bfs: fn(usize, &[bool], usize) -> Result<Vec<usize>>,
    pub bellman_ford: fn(usize, &[bool], &[f32], usize) -> Result<Vec<usize>>,
    pub kruskal: fn(usize, &[bool], &[f32]) -> Result<Vec<u8>>,
    pub insertion_sort: fn(&[f32]) -> Result<HintTrajectory>,
}

impl Default for Oracles {
    fn default() -> Self {
        Oracles {
            sort_pointers: taskgen::sort_pointers,
            argmin: taskgen::argmin_mask,
            binary_search: taskgen::binary_search_node,
            bfs: taskgen::bfs_parents,
            bellman_ford: taskgen::bellman_ford_parents,
            kruskal: taskgen::kruskal_mask,
            insertion_sort: taskgen::insertion_sort_trajectory,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// First failing case.
    pub detail: Option<String>,
    pub millis: u128,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

/// Runs `case` for `cases` seeds; a case returns `Some(description)` on a
/// mismatch.
pub(crate) fn run_check<F>(name: &str, cases: usize, seed: u64, mut case: F) -> Check
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Option<String>>,
{
    let start = Instant::now();
    let mut failures = 0;
    let mut detail = None;
    for k in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(taskgen::instance_seed(seed, k as u64));
        let outcome = case(&mut rng).unwrap_or_else(|e| Some(format!("error: {e}")));
        if let Some(msg) = outcome {
            failures += 1;
            detail.get_or_insert_with(|| format!("case {k}: {msg}"));
        }
    }
    Check {
        name: name.to_string(),
        cases,
        failures,
        detail,
        millis: start.elapsed().as_millis(),
    }
}

fn random_graph(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Result<(usize, Vec<bool>, Vec<f32>)> {
    let n = rng.gen_range(lo..=hi);
    let adj = taskgen::connected_er_graph(rng, n, taskgen::EDGE_PROB, "verify")?;
    let edges = taskgen::edge_list(n, &adj);
    let vals = taskgen::distinct_uniform(rng, edges.len());
    let mut w = vec![0.0; n * n];
    for (&(i, j), &v) in edges.iter().zip(&vals) {
        w[i * n + j] = v;
        w[j * n + i] = v;
    }
    Ok((n, adj, w))
}

/// Every oracle against its brute-force reference on `cases` random inputs
/// (n <= 8, n <= 6 for spanning-tree enumeration).
pub fn oracle_checks(o: &Oracles, cases: usize, seed: u64) -> Vec<Check> {
    vec![
        run_check("oracle.sort_pointers", cases, seed, |rng| {
            let n = rng.gen_range(1..=8);
            let v = taskgen::distinct_uniform(rng, n);
            let p = (o.sort_pointers)(&v)?;
            let want = reference::library_sort(&v);
            Ok((reference::order_from_pointers(&p).as_ref() != Some(&want))
                .then(|| format!("{v:?}: pointers {p:?}, sorted order {want:?}")))
        }),
        run_check("oracle.argmin", cases, seed ^ 1, |rng| {
            let n = rng.gen_range(1..=8);
            let v = taskgen::distinct_uniform(rng, n);
            let (got, want) = ((o.argmin)(&v)?, reference::linear_argmin(&v));
            Ok((got != want).then(|| format!("{v:?}: {got} vs {want}")))
        }),
        run_check("oracle.binary_search", cases, seed ^ 2, |rng| {
            let n = rng.gen_range(1..=8);
            let mut v = taskgen::distinct_uniform(rng, n + 1);
            let target = v.pop().unwrap();
            v.sort_by(f32::total_cmp);
            let (got, want) = ((o.binary_search)(&v, target)?, reference::linear_search(&v, target));
            Ok((got != want).then(|| format!("{v:?} target {target}: {got} vs {want}")))
        }),
        run_check("oracle.bfs", cases, seed ^ 3, |rng| {
            let (n, adj, _) = random_graph(rng, 2, 8)?;
            let s = rng.gen_range(0..n);
            let p = (o.bfs)(n, &adj, s)?;
            let hops = reference::all_pairs_hops(n, &adj);
            for v in 0..n {
                let ok = if v == s {
                    p[v] == s
                } else {
                    p[v] != v && adj[p[v] * n + v] && hops[s * n + v] == hops[s * n + p[v]] + 1
                };
                if !ok {
                    return Ok(Some(format!("n {n} source {s}: parent of {v} is {}", p[v])));
                }
            }
            Ok(None)
        }),
        run_check("oracle.bellman_ford", cases, seed ^ 4, |rng| {
            let (n, adj, w) = random_graph(rng, 2, 8)?;
            let s = rng.gen_range(0..n);
            let p = (o.bellman_ford)(n, &adj, &w, s)?;
            let want = reference::simple_path_distances(n, &adj, &w, s);
            let valid = p.iter().enumerate().all(|(v, &u)| u == v || adj[u * n + v]) && p[s] == s;
            let got = reference::tree_distances(&p, &w).filter(|_| valid);
            Ok(match got {
                Some(d) if d.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9) => None,
                other => Some(format!("n {n} source {s}: tree {other:?} vs shortest {want:?}")),
            })
        }),
        run_check("oracle.kruskal", cases, seed ^ 5, |rng| {
            let (n, adj, w) = random_graph(rng, 2, 6)?;
            let got = (o.kruskal)(n, &adj, &w)?;
            let want = reference::enumerate_mst(n, &adj, &w);
            Ok((Some(&got) != want.as_ref()).then(|| format!("n {n}: mask {got:?} vs enumeration {want:?}")))
        }),
        run_check("oracle.insertion_sort", cases, seed ^ 6, |rng| {
            let n = rng.gen_range(1..=8);
            let v = taskgen::distinct_uniform(rng, n);
            let got = (o.insertion_sort)(&v)?;
            let want = reference::closed_form_hints(&v);
            let same = got.len() == want.len()
                && got.steps.iter().zip(&want).all(|(s, (p, i, j))| &s.pred_h == p && s.i == *i && s.j == *j);
            Ok((!same).then(|| format!("{v:?}")))
        }),
    ]
}

/// Finite-difference checks of the full training loss in every mode on a
/// size-4 sorting instance with one augmentation and the contrastive term
/// on, in double precision over `coords` sampled coordinates.
pub fn gradient_checks(coords: usize, seed: u64) -> Vec<Check> {
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let start = Instant::now();
            let outcome = gradient_check(mode, coords, seed);
            let name = format!("gradient.{mode}");
            match outcome {
                Ok(r) => Check {
                    name,
                    cases: r.checked,
                    failures: r.failures.len(),
                    detail: r.worst.filter(|_| !r.failures.is_empty()).map(|w| {
                        format!(
                            "{}[{}]: analytic {:.6e}, numeric {:.6e}, rel {:.3e}",
                            w.path, w.index, w.analytic, w.numeric, w.rel_error
                        )
                    }),
                    millis: start.elapsed().as_millis(),
                },
                Err(e) => Check {
                    name,
                    cases: 0,
                    failures: 1,
                    detail: Some(format!("error: {e}")),
                    millis: start.elapsed().as_millis(),
                },
            }
        })
        .collect()
}

/// Model configuration used by the gradient checks.
pub fn gradient_check_config(mode: Mode) -> ModelConfig {
    ModelConfig { hidden_dim: 8, mode, triplet_dim: 4, ..ModelConfig::default() }
}

fn gradient_check(mode: Mode, coords: usize, seed: u64) -> Result<GradCheckReport> {
    let task = Task::Sorting;
    let cfg = gradient_check_config(mode);
    let mut params = cfg.init(task, seed)?;
    let head = init_parameters(&objective::head_specs(cfg.hidden_dim), seed ^ 0x5eed, PARAM_VERSION)?;
    for (path, t) in head.iter() {
        params.insert(path, t.clone())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = taskgen::sample_instance(task, 4, &mut rng)?;
    let pair = taskgen::sample_augmentation(&base, &mut rng)?;
    let (b, a) = ([&pair.base], [&pair.augmented]);
    let (bi, ai) = (BatchInputs::new(&b, false)?, BatchInputs::new(&a, false)?);
    let gc = GradCheckConfig { coords, seed, ..GradCheckConfig::f64() };
    let report = grad_check::<f64, _>(
        |_, p| {
            let opts = RolloutOptions::default();
            let rb = forward_rollout_batch(p, &bi, &cfg, &opts).map_err(to_tensor_error)?;
            let ra = forward_rollout_batch(p, &ai, &cfg, &opts).map_err(to_tensor_error)?;
            let base = objective::Side { rollout: &rb, instances: &b };
            let aug = objective::Side { rollout: &ra, instances: &a };
            Ok(objective::total_loss(p, &base, Some(&aug), 1.0).map_err(to_tensor_error)?.total)
        },
        &params,
        &gc,
    )?;
    Ok(report)
}

fn to_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::invalid("loss", other.to_string()),
    }
}

fn identity_check(name: &str, got: f64, want: f64, tol: f64) -> Check {
    let err = (got - want).abs();
    Check {
        name: name.to_string(),
        cases: 1,
        failures: usize::from(!(err < tol)),
        detail: Some(format!("{got:.9} vs {want:.9}")).filter(|_| !(err < tol)),
        millis: 0,
    }
}

/// Closed-form values of the losses, to 1e-6.
pub fn loss_identities() -> Vec<Check> {
    let run = || -> Result<Vec<Check>> {
        let tape = Tape::<f64>::inference();
        let mut out = Vec::new();
        for n in [2usize, 4, 7] {
            let logits = tape.constant(Tensor::zeros(vec![1, n, n]));
            let truth = Output::Pointer((0..n).map(|i| (i + 1) % n).collect());
            let got = objective::output_loss(&logits, &[&truth])?.value().item();
            out.push(identity_check(&format!("identity.uniform_pointer.n{n}"), got, (n as f64).ln(), 1e-6));

            let phi = tape.constant(Tensor::full(vec![1, n, n], 0.37));
            let got = objective::contrastive_from_similarity(&phi)?.value().item();
            out.push(identity_check(&format!("identity.equal_similarity.n{n}"), got, (n as f64).ln(), 1e-6));
        }
        let phi = tape.constant(Tensor::new(vec![1, 2, 2], vec![2.0, 0.0, 0.0, 2.0])?);
        let got = objective::contrastive_from_similarity(&phi)?.value().item();
        out.push(identity_check("identity.diagonal_similarity", got, (1.0 + (-2.0f64).exp()).ln(), 1e-6));
        Ok(out)
    };
    run().unwrap_or_else(|e| {
        vec![Check { name: "identity".into(), cases: 0, failures: 1, detail: Some(e.to_string()), millis: 0 }]
    })
}
