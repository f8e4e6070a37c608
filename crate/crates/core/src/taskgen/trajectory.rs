//! Insertion-sort hint trajectories over the predecessor-chain encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hints after one insertion: the order of the elements as a predecessor
/// chain and the two nodes of the last comparison.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintStep {
    pub pred_h: Vec<usize>,
    pub i: usize,
    pub j: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintTrajectory {
    pub steps: Vec<HintStep>,
}

impl HintTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Predecessor chain of an array order: each element points at the one
/// before it, the head at itself.
pub fn chain(order: &[usize]) -> Vec<usize> {
    let mut pred = vec![0; order.len()];
    for (p, &node) in order.iter().enumerate() {
        pred[node] = if p == 0 { node } else { order[p - 1] };
    }
    pred
}

/// Runs insertion sort and records one hint step per inserted element. At
/// step `t` the element `j` (node `t - 1`) has just been placed and `i` is
/// its new predecessor, or `j` itself when it became the head.
pub fn insertion_sort_trajectory(values: &[f32]) -> Result<HintTrajectory> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input("insertion_sort_trajectory", "duplicate values"));
    }
    let mut a: Vec<usize> = (0..values.len()).collect();
    let mut steps = Vec::with_capacity(values.len());
    for t in 0..a.len() {
        let key = a[t];
        let mut k = t;
        while k > 0 && values[a[k - 1]] > values[key] {
            a[k] = a[k - 1];
            k -= 1;
        }
        a[k] = key;
        let i = if k == 0 { key } else { a[k - 1] };
        steps.push(HintStep { pred_h: chain(&a), i, j: key });
    }
    Ok(HintTrajectory { steps })
}
