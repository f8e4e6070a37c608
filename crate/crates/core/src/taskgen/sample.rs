//! Instance sampling and equivalence-class augmentation.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use super::oracle::{
    argmin_mask, bellman_ford_parents, bfs_parents, binary_search_node, edge_list, kruskal_mask,
    sort_pointers, sorted_order,
};
use crate::error::{Error, Result};
use crate::task::{EquivalencePair, Output, ProblemInstance, Task};

/// Draws before giving up on a connected graph.
pub const MAX_TRIES: usize = 1000;
/// Edge probability of the Erdős–Rényi generator.
pub const EDGE_PROB: f64 = 0.5;

/// `count` distinct values from Uniform(0, 1), excluding zero.
pub fn distinct_uniform<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f32> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: f32 = rng.gen();
        if v > 0.0 && seen.insert(v.to_bits()) {
            out.push(v);
        }
    }
    out
}

fn connected(n: usize, adj: &[bool]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if adj[u * n + v] && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Symmetric adjacency without self-loops, redrawn until connected.
pub fn connected_er_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64, task: &'static str) -> Result<Vec<bool>> {
    for _ in 0..MAX_TRIES {
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let e = rng.gen_bool(p);
                adj[i * n + j] = e;
                adj[j * n + i] = e;
            }
        }
        if connected(n, &adj) {
            return Ok(adj);
        }
    }
    Err(Error::Resample { task, tries: MAX_TRIES })
}

fn symmetric_weights(n: usize, edges: &[(usize, usize)], values: &[f32]) -> Vec<f32> {
    let mut w = vec![0.0; n * n];
    for (&(i, j), &v) in edges.iter().zip(values) {
        w[i * n + j] = v;
        w[j * n + i] = v;
    }
    w
}

fn one_hot(n: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Ground truth for the inputs of `inst`, ignoring its current output.
pub fn solve(inst: &ProblemInstance) -> Result<Output> {
    let n = inst.n;
    let source = || -> Result<usize> {
        inst.node("s")?
            .iter()
            .position(|&v| v > 0.5)
            .ok_or_else(|| Error::input("solve", "no source node marked"))
    };
    Ok(match inst.task {
        Task::Sorting => Output::Pointer(sort_pointers(inst.node("key")?)?),
        Task::Minimum => Output::MaskOne(argmin_mask(inst.node("key")?)?),
        Task::BinarySearch => Output::MaskOne(binary_search_node(inst.node("key")?, inst.graph("target")?)?),
        Task::Bfs => Output::Pointer(bfs_parents(n, &inst.adjacency()?, source()?)?),
        Task::BellmanFord => Output::Pointer(bellman_ford_parents(
            n,
            &inst.adjacency()?,
            inst.edge("weight")?,
            source()?,
        )?),
        Task::MstKruskal => Output::EdgeMask(kruskal_mask(n, &inst.adjacency()?, inst.edge("weight")?)?),
    })
}

/// Samples one instance of `task` with `n` nodes and its oracle output.
pub fn sample_instance<R: Rng + ?Sized>(task: Task, n: usize, rng: &mut R) -> Result<ProblemInstance> {
    if n < task.min_nodes() {
        return Err(Error::input(
            "sample_instance",
            format!("{task} needs n >= {}, got {n}", task.min_nodes()),
        ));
    }
    let mut node = BTreeMap::new();
    let mut edge = BTreeMap::new();
    let mut graph = BTreeMap::new();
    match task {
        Task::Sorting | Task::Minimum => {
            node.insert("key".to_string(), distinct_uniform(rng, n));
        }
        Task::BinarySearch => {
            let mut values = distinct_uniform(rng, n + 1);
            let target = values.pop().unwrap();
            values.sort_by(f32::total_cmp);
            node.insert("key".to_string(), values);
            graph.insert("target".to_string(), target);
        }
        Task::Bfs | Task::BellmanFord | Task::MstKruskal => {
            let adj = connected_er_graph(rng, n, EDGE_PROB, task.name())?;
            let edges = edge_list(n, &adj);
            let weights = distinct_uniform(rng, edges.len());
            if task != Task::MstKruskal {
                node.insert("s".to_string(), one_hot(n, rng.gen_range(0..n)));
            }
            edge.insert("adj".to_string(), adj.iter().map(|&a| a as u8 as f32).collect());
            if task != Task::Bfs {
                edge.insert("weight".to_string(), symmetric_weights(n, &edges, &weights));
            }
        }
    }
    let mut inst = ProblemInstance {
        task,
        n,
        node_features: node,
        edge_features: edge,
        graph_features: graph,
        output: Output::MaskOne(0),
    };
    inst.output = solve(&inst)?;
    Ok(inst)
}

/// Fresh values with the same rank pattern as `values`.
fn same_order<R: Rng + ?Sized>(values: &[f32], rng: &mut R) -> Vec<f32> {
    let mut fresh = distinct_uniform(rng, values.len());
    fresh.sort_by(f32::total_cmp);
    let mut out = vec![0.0; values.len()];
    for (r, &i) in sorted_order(values).iter().enumerate() {
        out[i] = fresh[r];
    }
    out
}

/// Draws an input from the equivalence class of `base`: the scalars that
/// define the trajectory are resampled with their relative order kept, and
/// the topology is left alone.
pub fn sample_augmentation<R: Rng + ?Sized>(base: &ProblemInstance, rng: &mut R) -> Result<EquivalencePair> {
    let mut aug = base.clone();
    match base.task {
        Task::Sorting | Task::Minimum => {
            aug.node_features.insert("key".into(), same_order(base.node("key")?, rng));
        }
        Task::BinarySearch => {
            let mut joint = base.node("key")?.to_vec();
            joint.push(base.graph("target")?);
            let mut fresh = same_order(&joint, rng);
            aug.graph_features.insert("target".into(), fresh.pop().unwrap());
            aug.node_features.insert("key".into(), fresh);
        }
        Task::MstKruskal => {
            let n = base.n;
            let edges = edge_list(n, &base.adjacency()?);
            let w = base.edge("weight")?;
            let values: Vec<f32> = edges.iter().map(|&(i, j)| w[i * n + j]).collect();
            let fresh = same_order(&values, rng);
            aug.edge_features.insert("weight".into(), symmetric_weights(n, &edges, &fresh));
        }
        Task::Bfs | Task::BellmanFord => {
            return Err(Error::input(
                "sample_augmentation",
                format!("{} has no equivalence-class sampler", base.task),
            ))
        }
    }
    aug.output = solve(&aug)?;
    if aug.output != base.output {
        return Err(Error::Augmentation(base.task.name()));
    }
    Ok(EquivalencePair { base: base.clone(), augmented: aug })
}

/// The scalars whose relative order defines the equivalence class, in a
/// fixed node/edge order. Empty for tasks without augmentation support.
pub fn defining_scalars(inst: &ProblemInstance) -> Result<Vec<f32>> {
    Ok(match inst.task {
        Task::Sorting | Task::Minimum => inst.node("key")?.to_vec(),
        Task::BinarySearch => {
            let mut v = inst.node("key")?.to_vec();
            v.push(inst.graph("target")?);
            v
        }
        Task::MstKruskal => {
            let n = inst.n;
            let w = inst.edge("weight")?;
            edge_list(n, &inst.adjacency()?)
                .into_iter()
                .map(|(i, j)| w[i * n + j])
                .collect()
        }
        Task::Bfs | Task::BellmanFord => Vec::new(),
    })
}

/// Rank of every value within `values` (0 for the smallest).
pub fn ranks(values: &[f32]) -> Vec<usize> {
    let mut r = vec![0; values.len()];
    for (k, &i) in sorted_order(values).iter().enumerate() {
        r[i] = k;
    }
    r
}
