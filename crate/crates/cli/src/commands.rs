use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use nar_core::eval::{
    evaluate, probe_equivalence_similarity, probe_prediction_stability, test_instances, write_curve, ScoreReport,
    StabilityDecoder,
};
use nar_core::model::{Checkpoint, Mode};
use nar_core::taskgen::{instance_seed, sample_augmentation, write_dataset};
use nar_core::trainer::{self, JsonlSink, TrainConfig};
use nar_core::verify::{gradient_checks, loss_identities, oracle_checks, Check, Oracles};
use nar_core::{Error, Kind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{self, RunConfig};
use crate::{CliResult, EvalArgs, Failure, GenArgs, ProbeArgs, ProbeKind, TrainArgs, VerifyArgs, EXIT_ABORT};

pub const RUN_CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

/// Core errors caused by the request rather than by the environment.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::Input { .. } | Error::EmptyEvaluation | Error::Augmentation(_) => {
            Failure::config(e)
        }
        other => Failure::from(other),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub best_score: f64,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub test: ScoreReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Standard error of the mean over seeds.
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub complete: bool,
    pub error: Option<String>,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: Option<Aggregate>,
}

/// Writes through a temporary file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn mean_stderr(xs: &[f64]) -> Aggregate {
    let k = xs.len();
    let mean = xs.iter().sum::<f64>() / k.max(1) as f64;
    let stderr = if k < 2 {
        0.0
    } else {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    };
    Aggregate { mean, stderr, seeds: k }
}

fn flag_overrides(a: &TrainArgs) -> Vec<String> {
    let mut sets = a.sets.clone();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            sets.push(format!("{k}={v}"));
        }
    };
    push("task", a.task.map(|t| format!("\"{t}\"")));
    push("model.mode", a.mode.map(|m| format!("\"{m}\"")));
    push("train.contrastive_weight", a.w.map(|w| w.to_string()));
    push("seeds", a.seeds.map(|k| serde_json::to_string(&(0..k).collect::<Vec<_>>()).unwrap()));
    push("train.max_steps", a.max_steps.map(|v| v.to_string()));
    push("train.batch_size", a.batch_size.map(|v| v.to_string()));
    push("train.learning_rate", a.learning_rate.map(|v| v.to_string()));
    push("model.hidden_dim", a.hidden_dim.map(|v| v.to_string()));
    push("out_dir", a.out.as_ref().map(|p| serde_json::to_string(p).unwrap()));
    sets
}

pub fn train(a: TrainArgs) -> CliResult {
    let cfg = config::load(a.config.as_deref(), &flag_overrides(&a)).map_err(Failure::config)?;
    let (task, warnings) = cfg.validate().map_err(Failure::config)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let hash = cfg.content_hash()?;
    let dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| a.run_root.join(format!("{task}-{}-{}", cfg.model.mode, &hash[..10])));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(RUN_CONFIG_FILE), &cfg)?;

    let mut manifest = RunManifest {
        config: cfg.clone(),
        config_hash: hash,
        complete: false,
        error: None,
        seeds: Vec::new(),
        aggregate: None,
    };
    for &seed in &cfg.seeds {
        eprintln!("training {task} ({}) seed {seed}", cfg.model.mode);
        match train_seed(&cfg, &dir, seed) {
            Ok(rec) => {
                eprintln!(
                    "  seed {seed}: val {:.4} at step {}, test n={} {:.4}",
                    rec.best_score, rec.best_step, rec.test.test_size, rec.test.score
                );
                manifest.seeds.push(rec);
            }
            Err(e) => {
                manifest.error = Some(format!("seed {seed}: {e:#}"));
                write_json(&dir.join(MANIFEST_FILE), &manifest)?;
                return Err(Failure { code: EXIT_ABORT, error: e.context(format!("training seed {seed}")) });
            }
        }
    }
    let scores: Vec<f64> = manifest.seeds.iter().map(|s| s.test.score).collect();
    let agg = mean_stderr(&scores);
    println!(
        "{task} {} test micro-F1 (n={}): {:.4} ± {:.4} over {} seeds",
        cfg.model.mode, cfg.test_size, agg.mean, agg.stderr, agg.seeds
    );
    println!("run directory: {}", dir.display());
    manifest.aggregate = Some(agg);
    manifest.complete = true;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(())
}

fn train_seed(cfg: &RunConfig, dir: &Path, seed: u64) -> anyhow::Result<SeedRecord> {
    let task = cfg.task.ok_or_else(|| anyhow!("no task"))?;
    let seed_dir = dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&seed_dir)?;
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    write_json(&seed_dir.join("train_config.json"), &tc)?;
    let metrics = seed_dir.join(METRICS_FILE);
    let mut sink = JsonlSink {
        metrics: BufWriter::new(File::create(&metrics)?),
        timing: Some(BufWriter::new(File::create(seed_dir.join(TIMING_FILE))?)),
    };
    let result = trainer::train(task, &cfg.model, &tc, &mut sink);
    sink.metrics.flush()?;
    if let Some(t) = &mut sink.timing {
        t.flush()?;
    }
    let out = result?;
    let ck_dir = seed_dir.join(CHECKPOINT_DIR);
    out.best.save(&ck_dir)?;
    out.last.save(&seed_dir.join("last"))?;
    out.optimizer.save(&seed_dir.join("optimizer"))?;
    let test = evaluate(&out.best, cfg.test_size, cfg.test_count, cfg.test_seed)?;
    write_json(&seed_dir.join(format!("eval-{}.json", cfg.test_size)), &test)?;
    Ok(SeedRecord {
        seed,
        checkpoint: ck_dir,
        metrics,
        best_score: out.best_score,
        best_step: out.best_step,
        steps_run: out.steps_run,
        stopped_early: out.stopped_early,
        test,
    })
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(Failure::config)
}

pub fn eval(a: EvalArgs) -> CliResult {
    if is_run_dir(&a.path) {
        return eval_run(&a);
    }
    let ck = load_checkpoint(&a.path)?;
    let size = a.size.unwrap_or(nar_core::eval::TEST_SIZE);
    let report = evaluate(
        &ck,
        size,
        a.count.unwrap_or(nar_core::eval::DEFAULT_COUNT),
        a.seed.unwrap_or(0),
    )
    .map_err(classify)?;
    let out = a.out.clone().unwrap_or_else(|| a.path.join(format!("eval-{size}.json")));
    write_json(&out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Run directories hold per-seed subdirectories; checkpoints do not.
fn is_run_dir(path: &Path) -> bool {
    fs::read_dir(path)
            .map(|d| d.flatten().any(|e| e.file_name().to_string_lossy().starts_with("seed-") && e.path().is_dir()))
            .unwrap_or(false)
}

/// Re-scores every seed of a run directory with the run's test settings
/// unless overridden.
fn eval_run(a: &EvalArgs) -> CliResult {
    let text = fs::read_to_string(a.path.join(RUN_CONFIG_FILE)).map_err(Failure::config)?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(Failure::config)?;
    let size = a.size.unwrap_or(cfg.test_size);
    let mut reports = Vec::new();
    for seed in &cfg.seeds {
        let seed_dir = a.path.join(format!("seed-{seed}"));
        let ck = load_checkpoint(&seed_dir.join(CHECKPOINT_DIR))?;
        let r = evaluate(&ck, size, a.count.unwrap_or(cfg.test_count), a.seed.unwrap_or(cfg.test_seed))
            .map_err(classify)?;
        reports.push(r);
    }
    let out = a.out.clone().unwrap_or_else(|| a.path.join(format!("eval-{size}.json")));
    write_json(&out, &reports)?;
    let scores: Vec<f64> = reports.iter().map(|r| r.score).collect();
    let agg = mean_stderr(&scores);
    println!("{}", serde_json::to_string_pretty(&reports)?);
    eprintln!("micro-F1 {:.4} ± {:.4} over {} seeds", agg.mean, agg.stderr, agg.seeds);
    Ok(())
}

/// Mean curve and per-instance rows of a probe.
fn write_probe(dir: &Path, name: &str, curves: &[Vec<f64>]) -> anyhow::Result<()> {
    let t = curves.first().map_or(0, Vec::len);
    if curves.iter().any(|c| c.len() != t) {
        return Err(anyhow!("probe curves of different lengths"));
    }
    let mean: Vec<f64> = (0..t)
        .map(|s| curves.iter().map(|c| c[s]).sum::<f64>() / curves.len() as f64)
        .collect();
    let mut out = BufWriter::new(File::create(dir.join(format!("{name}.csv")))?);
    write_curve(&mut out, &mean)?;
    out.flush()?;
    let mut all = BufWriter::new(File::create(dir.join(format!("{name}_instances.csv")))?);
    writeln!(all, "instance,step,value")?;
    for (k, c) in curves.iter().enumerate() {
        for (s, v) in c.iter().enumerate() {
            writeln!(all, "{k},{},{v}", s + 1)?;
        }
    }
    all.flush()?;
    println!("{}", dir.join(format!("{name}.csv")).display());
    Ok(())
}

pub fn probe(a: ProbeArgs) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    if a.count == 0 {
        return Err(Failure::config(anyhow!("count must be positive")));
    }
    let task = ck.task;
    let instances = test_instances(task, a.size, a.count, a.seed).map_err(classify)?;
    fs::create_dir_all(&a.out)?;
    match a.probe {
        ProbeKind::Stability => {
            if task.output().kind != Kind::Pointer {
                return Err(Failure::config(anyhow!("stability probe needs a pointer output; {task} has none")));
            }
            let mut decoders = vec![(StabilityDecoder::Output, "stability")];
            if ck.config.mode == Mode::HintsSupervised {
                decoders.push((StabilityDecoder::Hint, "stability_hint"));
            }
            for (decoder, name) in decoders {
                let curves = instances
                    .iter()
                    .map(|inst| probe_prediction_stability(&ck, inst, decoder))
                    .collect::<nar_core::Result<Vec<_>>>()
                    .map_err(classify)?;
                write_probe(&a.out, name, &curves)?;
            }
        }
        ProbeKind::Equivalence => {
            if !task.supports_contrastive() {
                return Err(Failure::config(anyhow!("equivalence probe is not defined for {task}")));
            }
            let mut curves = Vec::with_capacity(instances.len());
            for (k, base) in instances.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(a.seed ^ 0xa5a5, k as u64));
                let pair = sample_augmentation(base, &mut rng).map_err(classify)?;
                curves.push(probe_equivalence_similarity(&ck, &pair).map_err(classify)?);
            }
            write_probe(&a.out, "equivalence", &curves)?;
        }
    }
    Ok(())
}

pub fn verify(a: VerifyArgs) -> CliResult {
    let mut checks: Vec<Check> = oracle_checks(&Oracles::default(), a.cases, a.seed);
    checks.extend(gradient_checks(a.coords, a.seed));
    checks.extend(loss_identities());
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<32} cases {:>4} failures {:>3} {:>6} ms", c.name, c.cases, c.failures, c.millis);
        if let Some(d) = c.detail.as_ref().filter(|_| !c.passed()) {
            println!("     {d}");
        }
        failed += usize::from(!c.passed());
    }
    if let Some(p) = &a.json {
        write_json(p, &checks)?;
    }
    if failed > 0 {
        return Err(anyhow!("{failed} of {} checks failed", checks.len()).into());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

pub fn gen(a: GenArgs) -> CliResult {
    if a.size < a.task.min_nodes() {
        return Err(Failure::config(anyhow!("{} needs at least {} nodes", a.task, a.task.min_nodes())));
    }
    match &a.out {
        Some(p) => {
            let mut out = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            write_dataset(&mut out, a.task, a.size, a.count, a.seed).map_err(classify)?;
            out.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            write_dataset(&mut out, a.task, a.size, a.count, a.seed).map_err(classify)?;
            out.flush()?;
        }
    }
    Ok(())
}
