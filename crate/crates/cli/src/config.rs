//! Run configuration: JSON file, dotted-path overrides and content hash.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nar_core::model::ModelConfig;
use nar_core::trainer::TrainConfig;
use nar_core::Task;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha1::{Digest, Sha1};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub model: ModelConfig,
    /// `train.seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Run directory; defaults to a directory under `NAR_RUN_DIR`.
    pub out_dir: Option<PathBuf>,
    pub test_size: usize,
    pub test_count: usize,
    pub test_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            out_dir: None,
            test_size: nar_core::eval::TEST_SIZE,
            test_count: nar_core::eval::DEFAULT_COUNT,
            test_seed: 0,
        }
    }
}

impl RunConfig {
    /// Checks the configuration and returns the task with any warnings.
    pub fn validate(&self) -> Result<(Task, Vec<String>)> {
        let task = self.task.ok_or_else(|| anyhow!("no task given (set `task` or pass --task)"))?;
        self.model.validate(task)?;
        let warnings = self.train.validate(task)?;
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        if self.test_count == 0 {
            bail!("test_count must be positive");
        }
        if self.test_size < task.min_nodes() {
            bail!("{task} needs at least {} nodes, test_size is {}", task.min_nodes(), self.test_size);
        }
        Ok((task, warnings))
    }

    /// Git blob hash of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        let body = serde_json::to_vec(&serde_json::to_value(self)?)?;
        let mut h = Sha1::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(&body);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Parses a `--set` value: JSON when it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot-separated object keys) in `root` to `value`, creating
/// intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("invalid override path `{path}`");
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("`{}` is not an object", keys[..i].join(".")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one key")
}

/// Applies `key=value` overrides.
pub fn apply_overrides(root: &mut Value, sets: &[String]) -> Result<()> {
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{s}` is not of the form path=value"))?;
        set_path(root, path.trim(), parse_value(raw.trim()))?;
    }
    Ok(())
}

/// Defaults, then the config file, then the overrides in order.
pub fn load(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut root = serde_json::to_value(RunConfig::default())?;
    if let Some(f) = file {
        let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let from_file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        merge(&mut root, from_file);
    }
    apply_overrides(&mut root, sets)?;
    serde_json::from_value(root).context("invalid run configuration")
}

/// Recursively overlays `top` onto `base`; objects merge, other values
/// replace.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}
