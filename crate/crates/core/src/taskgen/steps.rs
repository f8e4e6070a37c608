use serde::{Deserialize, Serialize};

use crate::task::Family;

/// How many processor steps a rollout of size `n` takes. `c` falls back to
/// the family default when unset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    Linear {
        #[serde(default)]
        c: Option<f64>,
    },
    Quadratic {
        #[serde(default)]
        c: Option<f64>,
    },
    Linearithmic {
        #[serde(default)]
        c: Option<f64>,
    },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Linear { c: None }
    }
}

impl StepPolicy {
    pub fn constant(self, family: Family) -> f64 {
        match self {
            StepPolicy::Linear { c } => c.unwrap_or(match family {
                Family::Array => 1.0,
                Family::Graph => 5.0,
            }),
            StepPolicy::Quadratic { c } | StepPolicy::Linearithmic { c } => c.unwrap_or(1.0),
        }
    }
}

pub fn step_count(policy: StepPolicy, n: usize, family: Family) -> usize {
    let c = policy.constant(family);
    let n = n as f64;
    let raw = match policy {
        StepPolicy::Linear { .. } => c * n,
        StepPolicy::Quadratic { .. } => c * n * n,
        StepPolicy::Linearithmic { .. } => c * n * n.log2(),
    };
    // tolerate representation error before rounding up
    ((raw - 1e-9).ceil() as usize).max(1)
}
