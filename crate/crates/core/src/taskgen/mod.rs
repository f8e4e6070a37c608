//! Instance generation, ground-truth oracles, equivalence-class
//! augmentation and hint trajectories.

mod oracle;
pub mod reference;
mod sample;
mod steps;
mod trajectory;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use oracle::{
    argmin_mask, bellman_ford_parents, bfs_parents, binary_search_node, edge_list, kruskal_mask,
    sort_pointers, sorted_order,
};
pub use sample::{
    connected_er_graph, defining_scalars, distinct_uniform, ranks, sample_augmentation, sample_instance, solve,
    EDGE_PROB, MAX_TRIES,
};
pub use steps::{step_count, StepPolicy};
pub use trajectory::{chain, insertion_sort_trajectory, HintStep, HintTrajectory};

use crate::error::Result;
use crate::task::{ProblemInstance, Task};

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th instance of a dataset drawn with `seed`.
pub fn instance_seed(seed: u64, index: u64) -> u64 {
    mix_seed(mix_seed(seed) ^ index)
}

/// One line of a dataset dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub seed: u64,
    #[serde(flatten)]
    pub instance: ProblemInstance,
}

impl DatasetRecord {
    /// Regenerates the instance from its seed.
    pub fn generate(task: Task, n: usize, seed: u64) -> Result<Self> {
        let instance = sample_instance(task, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(DatasetRecord { seed, instance })
    }
}

/// `count` instances, one JSON object per line.
pub fn write_dataset<W: Write>(out: &mut W, task: Task, n: usize, count: usize, seed: u64) -> Result<()> {
    for i in 0..count {
        let rec = DatasetRecord::generate(task, n, instance_seed(seed, i as u64))?;
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
