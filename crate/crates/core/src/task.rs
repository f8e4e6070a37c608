//! Task identities, feature schemas and problem instances.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sorting,
    Minimum,
    BinarySearch,
    Bfs,
    BellmanFord,
    MstKruskal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Array,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Node,
    Edge,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Scalar,
    Mask,
    MaskOne,
    Pointer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: &'static str,
    pub location: Location,
    pub kind: Kind,
}

const fn spec(name: &'static str, location: Location, kind: Kind) -> FeatureSpec {
    FeatureSpec { name, location, kind }
}

const KEY: FeatureSpec = spec("key", Location::Node, Kind::Scalar);
const TARGET: FeatureSpec = spec("target", Location::Graph, Kind::Scalar);
const SOURCE: FeatureSpec = spec("s", Location::Node, Kind::MaskOne);
const ADJ: FeatureSpec = spec("adj", Location::Edge, Kind::Mask);
const WEIGHT: FeatureSpec = spec("weight", Location::Edge, Kind::Scalar);

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Sorting,
        Task::Minimum,
        Task::BinarySearch,
        Task::Bfs,
        Task::BellmanFord,
        Task::MstKruskal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Sorting => "sorting",
            Task::Minimum => "minimum",
            Task::BinarySearch => "binary_search",
            Task::Bfs => "bfs",
            Task::BellmanFord => "bellman_ford",
            Task::MstKruskal => "mst_kruskal",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Task::Sorting | Task::Minimum | Task::BinarySearch => Family::Array,
            _ => Family::Graph,
        }
    }

    pub fn min_nodes(self) -> usize {
        match self.family() {
            Family::Array => 1,
            Family::Graph => 2,
        }
    }

    pub fn inputs(self) -> &'static [FeatureSpec] {
        match self {
            Task::Sorting | Task::Minimum => &[KEY],
            Task::BinarySearch => &[KEY, TARGET],
            Task::Bfs => &[SOURCE, ADJ],
            Task::BellmanFord => &[SOURCE, ADJ, WEIGHT],
            Task::MstKruskal => &[ADJ, WEIGHT],
        }
    }

    pub fn output(self) -> FeatureSpec {
        match self {
            Task::Sorting => spec("pred", Location::Node, Kind::Pointer),
            Task::Minimum => spec("min", Location::Node, Kind::MaskOne),
            Task::BinarySearch => spec("return", Location::Node, Kind::MaskOne),
            Task::Bfs | Task::BellmanFord => spec("pi", Location::Node, Kind::Pointer),
            Task::MstKruskal => spec("in_mst", Location::Edge, Kind::Mask),
        }
    }

    /// Tasks whose equivalence classes can be sampled for the contrastive term.
    pub fn supports_contrastive(self) -> bool {
        matches!(
            self,
            Task::Sorting | Task::Minimum | Task::BinarySearch | Task::MstKruskal
        )
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Ground truth in the encoding of the task's output kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    /// One target node per node.
    Pointer(Vec<usize>),
    /// The index of the single marked node.
    MaskOne(usize),
    /// Row-major `n x n` symmetric 0/1 matrix.
    EdgeMask(Vec<u8>),
}

impl Output {
    pub fn kind(&self) -> Kind {
        match self {
            Output::Pointer(_) => Kind::Pointer,
            Output::MaskOne(_) => Kind::MaskOne,
            Output::EdgeMask(_) => Kind::Mask,
        }
    }
}

/// One sampled problem. Edge features are row-major `n x n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub task: Task,
    pub n: usize,
    pub node_features: BTreeMap<String, Vec<f32>>,
    pub edge_features: BTreeMap<String, Vec<f32>>,
    pub graph_features: BTreeMap<String, f32>,
    pub output: Output,
}

impl ProblemInstance {
    pub fn node(&self, name: &str) -> Result<&[f32]> {
        self.node_features
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::input("instance", format!("{}: no node feature `{name}`", self.task)))
    }

    pub fn edge(&self, name: &str) -> Result<&[f32]> {
        self.edge_features
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::input("instance", format!("{}: no edge feature `{name}`", self.task)))
    }

    pub fn graph(&self, name: &str) -> Result<f32> {
        self.graph_features
            .get(name)
            .copied()
            .ok_or_else(|| Error::input("instance", format!("{}: no graph feature `{name}`", self.task)))
    }

    /// Adjacency as booleans, for graph tasks.
    pub fn adjacency(&self) -> Result<Vec<bool>> {
        Ok(self.edge("adj")?.iter().map(|&v| v > 0.5).collect())
    }

    /// Relabels node `i` as `perm[i]` in every feature and in the output.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<ProblemInstance> {
        let n = self.n;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::input("permute_nodes", format!("{perm:?} is not a permutation of {n} nodes")));
        }
        let nodes = |v: &Vec<f32>| {
            let mut out = vec![0.0; n];
            for (i, &x) in v.iter().enumerate() {
                out[perm[i]] = x;
            }
            out
        };
        fn pairs<X: Copy + Default>(v: &[X], perm: &[usize]) -> Vec<X> {
            let n = perm.len();
            let mut out = vec![X::default(); n * n];
            for i in 0..n {
                for j in 0..n {
                    out[perm[i] * n + perm[j]] = v[i * n + j];
                }
            }
            out
        }
        self.validate()?;
        let output = match &self.output {
            Output::Pointer(p) => {
                let mut out = vec![0; n];
                for (i, &j) in p.iter().enumerate() {
                    out[perm[i]] = perm[j];
                }
                Output::Pointer(out)
            }
            Output::MaskOne(i) => Output::MaskOne(perm[*i]),
            Output::EdgeMask(m) => Output::EdgeMask(pairs(m, perm)),
        };
        Ok(ProblemInstance {
            task: self.task,
            n,
            node_features: self.node_features.iter().map(|(k, v)| (k.clone(), nodes(v))).collect(),
            edge_features: self.edge_features.iter().map(|(k, v)| (k.clone(), pairs(v, perm))).collect(),
            graph_features: self.graph_features.clone(),
            output,
        })
    }

    /// Checks that every input of the task schema is present with the right
    /// length and that the output kind matches.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        for f in self.task.inputs() {
            match f.location {
                Location::Node => check_len(self.task, f.name, self.node(f.name)?.len(), n)?,
                Location::Edge => check_len(self.task, f.name, self.edge(f.name)?.len(), n * n)?,
                Location::Graph => {
                    self.graph(f.name)?;
                }
            }
        }
        if self.output.kind() != self.task.output().kind {
            return Err(Error::input("instance", format!("{}: wrong output kind", self.task)));
        }
        let ok = match &self.output {
            Output::Pointer(p) => p.len() == n && p.iter().all(|&j| j < n),
            Output::MaskOne(i) => *i < n,
            Output::EdgeMask(m) => m.len() == n * n,
        };
        if !ok {
            return Err(Error::input("instance", format!("{}: output does not fit n = {n}", self.task)));
        }
        Ok(())
    }
}

fn check_len(task: Task, name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::input(
            "instance",
            format!("{task}: feature `{name}` has {got} values, expected {want}"),
        ));
    }
    Ok(())
}

/// A base instance and one augmentation from its equivalence class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalencePair {
    pub base: ProblemInstance,
    pub augmented: ProblemInstance,
}
