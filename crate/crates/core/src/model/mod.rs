//! The encode-process-decode reasoner and its three hint-usage modes.

mod inputs;
mod net;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nar_autodiff::params::{layer_norm_specs, linear_specs, mlp_specs};
use nar_autodiff::{init_parameters, Init, ParamSpec, ParameterSet};
use serde::{Deserialize, Serialize};

pub use inputs::BatchInputs;
pub use net::{
    decode_channel, decode_hints, decode_output, encode_inputs, forward_rollout, forward_rollout_batch,
    processor_step, EdgeTerms, Encoded, Feedback, HintLogits, Rollout, RolloutOptions,
};

use crate::error::{Error, Result};
use crate::task::{Kind, Location, Task};
use crate::taskgen::{step_count, StepPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Output supervision only, no feedback between steps.
    NohintPlain,
    /// Output supervision plus an unsupervised edge-mask channel decoded
    /// every step and fed into the next.
    NohintLatent,
    /// Insertion-sort hints decoded every step, supervised and fed back.
    HintsSupervised,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::NohintPlain, Mode::NohintLatent, Mode::HintsSupervised];

    pub fn name(self) -> &'static str {
        match self {
            Mode::NohintPlain => "nohint_plain",
            Mode::NohintLatent => "nohint_latent",
            Mode::HintsSupervised => "hints_supervised",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub mode: Mode,
    pub triplet_dim: usize,
    pub use_positions: bool,
    pub step_policy: StepPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            mode: Mode::NohintLatent,
            triplet_dim: 8,
            use_positions: false,
            step_policy: StepPolicy::default(),
        }
    }
}

fn xavier(path: String, shape: [usize; 2], fan_in: usize) -> ParamSpec {
    ParamSpec::new(path, shape.to_vec(), Init::Xavier { fan_in, fan_out: shape[1] })
}

/// Specs for a layer applied to a concatenation that is evaluated as a sum
/// of per-part products. Each part gets its own weight, the layer gets one
/// bias, and Xavier bounds use the fan-in of the whole concatenation.
fn split_linear(name: &str, parts: &[(&str, usize, bool)], out: usize) -> Vec<ParamSpec> {
    let fan_in: usize = parts.iter().map(|p| p.1).sum();
    let mut specs: Vec<ParamSpec> = parts
        .iter()
        .filter(|p| p.2)
        .map(|&(part, width, _)| xavier(format!("{name}.{part}.w"), [width, out], fan_in))
        .collect();
    specs.push(ParamSpec::bias(format!("{name}.b"), out));
    specs
}

/// Pairwise MLP over `[h_i, h_j, e_ij]` producing one logit per pair.
fn pair_decoder_specs(name: &str, d: usize, has_edge: bool) -> Vec<ParamSpec> {
    let mut s = split_linear(
        &format!("{name}.l0"),
        &[("recv", d, true), ("send", d, true), ("edge", d, has_edge)],
        d,
    );
    s.extend(linear_specs(&format!("{name}.l1"), d, 1));
    s
}

impl ModelConfig {
    pub fn validate(&self, task: Task) -> Result<()> {
        if self.hidden_dim == 0 || self.triplet_dim == 0 {
            return Err(Error::Config("hidden_dim and triplet_dim must be positive".into()));
        }
        if self.mode == Mode::HintsSupervised && task != Task::Sorting {
            return Err(Error::Config(format!("hints_supervised is only defined for sorting, not {task}")));
        }
        Ok(())
    }

    pub fn steps(&self, task: Task, n: usize) -> usize {
        step_count(self.step_policy, n, task.family())
    }

    /// Whether the processor sees any edge input, either from the task or
    /// from feedback located at edges.
    pub fn has_edge_input(&self, task: Task) -> bool {
        task_has_edges(task) || self.mode != Mode::NohintPlain
    }

    /// Every parameter the model uses for `task`.
    pub fn param_specs(&self, task: Task) -> Result<Vec<ParamSpec>> {
        self.validate(task)?;
        let d = self.hidden_dim;
        let t = self.triplet_dim;
        let edges = self.has_edge_input(task);
        let graph = task.inputs().iter().any(|f| f.location == Location::Graph);
        let mut s = Vec::new();

        for f in task.inputs() {
            let loc = match f.location {
                Location::Node => "node",
                Location::Edge => "edge",
                Location::Graph => "graph",
            };
            s.extend(linear_specs(&format!("enc.{loc}.{}", f.name), 1, d));
        }
        if self.use_positions {
            s.extend(linear_specs("enc.node.pos", 1, d));
        }

        s.extend(split_linear(
            "proc.msg.l0",
            &[
                ("recv", 2 * d, true),
                ("send", 2 * d, true),
                ("edge", d, edges),
                ("graph", d, graph),
            ],
            d,
        ));
        s.extend(linear_specs("proc.msg.l1", d, d));
        s.extend(split_linear(
            "proc.tri",
            &[
                ("z1", 2 * d, true),
                ("z2", 2 * d, true),
                ("z3", 2 * d, true),
                ("e1", d, edges),
                ("e2", d, edges),
                ("e3", d, edges),
                ("graph", d, graph),
            ],
            t,
        ));
        s.extend(linear_specs("proc.tri.out", t, d));
        s.extend(mlp_specs("proc.upd", &[3 * d, d, d]));
        s.push(ParamSpec::weight("proc.gate.w", 3 * d, d));
        s.push(ParamSpec::new("proc.gate.b", vec![d], Init::Constant(GATE_BIAS)));
        s.extend(layer_norm_specs("proc.ln", d));

        match self.mode {
            Mode::NohintPlain => {}
            Mode::NohintLatent => {
                s.extend(linear_specs("enc.channel", 1, d));
                s.extend(pair_decoder_specs("dec.channel", d, task_has_edges(task)));
            }
            Mode::HintsSupervised => {
                for h in ["pred_h", "i", "j"] {
                    s.extend(linear_specs(&format!("enc.hint.{h}"), 1, d));
                }
                s.extend(linear_specs("dec.hint.q", 2 * d, d));
                s.extend(linear_specs("dec.hint.k", 2 * d, d));
                s.extend(linear_specs("dec.hint.i", 2 * d, 1));
                s.extend(linear_specs("dec.hint.j", 2 * d, 1));
            }
        }

        match task.output().kind {
            Kind::Pointer => {
                s.extend(linear_specs("dec.out.q", 2 * d, d));
                s.extend(linear_specs("dec.out.k", 2 * d, d));
            }
            Kind::MaskOne => s.extend(linear_specs("dec.out.score", 2 * d, 1)),
            Kind::Mask => s.extend(pair_decoder_specs("dec.out", d, task_has_edges(task))),
            Kind::Scalar => {
                return Err(Error::Config(format!("{task}: scalar outputs are not supported")));
            }
        }
        Ok(s)
    }

    pub fn init(&self, task: Task, seed: u64) -> Result<ParameterSet> {
        Ok(init_parameters(&self.param_specs(task)?, seed, PARAM_VERSION)?)
    }
}

pub(crate) fn task_has_edges(task: Task) -> bool {
    task.inputs().iter().any(|f| f.location == Location::Edge)
}

/// Version tag written into every parameter manifest.
/// Initial bias of the update gate; sigmoid(-3) keeps most of `h_prev`
/// until training opens the gate.
pub const GATE_BIAS: f32 = -3.0;

pub const PARAM_VERSION: &str = "nar-1";
/// Name of the model snapshot stored next to the parameters.
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointConfig {
    task: Task,
    model: ModelConfig,
}

/// Parameters together with the task and model configuration they belong to.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub task: Task,
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        let cfg = CheckpointConfig { task: self.task, model: self.config.clone() };
        fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&cfg)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: CheckpointConfig = serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?;
        let params = ParameterSet::load(dir)?;
        cfg.model.validate(cfg.task)?;
        let ck = Checkpoint { task: cfg.task, config: cfg.model, params };
        ck.check_params()?;
        Ok(ck)
    }

    /// Every parameter the model needs is present with the expected shape.
    pub fn check_params(&self) -> Result<()> {
        for spec in self.config.param_specs(self.task)? {
            let t = self.params.get(&spec.path)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.path,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}
