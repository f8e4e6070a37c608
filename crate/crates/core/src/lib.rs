//! Neural algorithmic reasoners trained from input/output pairs.

pub mod error;
pub mod eval;
pub mod task;
pub mod model;
pub mod objective;
pub mod taskgen;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use task::{EquivalencePair, Family, FeatureSpec, Kind, Location, Output, ProblemInstance, Task};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub struct GuideIntroduction;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tasks.md")]
pub struct GuideTasks;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
pub struct GuideAutodiff;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
pub struct GuideModel;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/objective.md")]
pub struct GuideObjective;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
pub struct GuideTraining;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
pub struct GuideEvaluation;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/verification.md")]
pub struct GuideVerification;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub struct GuideCli;
