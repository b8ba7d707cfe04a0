//! Run configuration: a TOML file plus `--set dotted.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mood_core::algos::AlgoConfig;
use mood_core::analysis::{Estimator, DEFAULT_BATCH_SIZES, MIN_TRIALS};
use mood_core::datasets::{EnvId, Task, DEFAULT_NOISE_STD};

use crate::error::{CliError, Result};

/// Environment variable naming the directory that relative output paths are
/// resolved against.
pub const OUT_ROOT_VAR: &str = "MOOD_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; relative paths hang off `$MOOD_OUT` (or the working
    /// directory when unset).
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub algo: AlgoConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("mood-out"),
            seeds: vec![0],
            data: DataConfig::default(),
            algo: AlgoConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub env: EnvId,
    /// Behavior tasks; each gets a scripted controller and is also a target.
    pub tasks: Vec<Task>,
    /// Adds a uniformly random controller to the behavior pool.
    pub random: bool,
    pub episodes: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            env: EnvId::Pointmass2d,
            tasks: vec![Task::ReachEast, Task::ReachWest, Task::ReachNorth],
            random: true,
            episodes: 200,
            noise_std: DEFAULT_NOISE_STD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    /// Steps per metrics row; each row averages over its window.
    pub metrics_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            metrics_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EsMode {
    Off,
    On,
    Both,
}

impl EsMode {
    /// The `es` column values this mode produces.
    pub fn flags(self) -> &'static [bool] {
        match self {
            EsMode::Off => &[false],
            EsMode::On => &[true],
            EsMode::Both => &[false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Score reference and environment; defaults to `train.dataset`.
    pub dataset: Option<PathBuf>,
    /// Directory holding `seed-<s>/checkpoint.ckpt`; defaults to the train output.
    pub run_dir: Option<PathBuf>,
    pub episodes: usize,
    pub es: EsMode,
    /// Overrides the checkpoint's `eval_samples`.
    pub samples: Option<usize>,
    /// Overrides the checkpoint's `lambda_es`.
    pub lambda_es: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            run_dir: None,
            episodes: 10,
            es: EsMode::Both,
            samples: None,
            lambda_es: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    Lognormal,
    Gaussian,
    /// Advantages and log-likelihoods from a trained checkpoint on a dataset.
    Networks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub fixture: FixtureKind,
    /// Rows of a synthetic fixture.
    pub rows: usize,
    pub fixture_seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub beta: f64,
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    pub estimators: Vec<Estimator>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            fixture: FixtureKind::Lognormal,
            rows: 2000,
            fixture_seed: 0,
            dataset: None,
            checkpoint: None,
            beta: 5.0,
            batch_sizes: DEFAULT_BATCH_SIZES.to_vec(),
            trials: MIN_TRIALS,
            estimators: vec![
                Estimator::AwacWis,
                Estimator::AsacFresh,
                Estimator::AsacStale,
            ],
        }
    }
}

fn check(ok: bool, path: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(path, msg))
    }
}

impl RunConfig {
    /// Reads `file` (if any), applies overrides in order, and validates.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(p.display().to_string(), e.message()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
                let path = e.path().to_string();
                CliError::config(path, e.into_inner().to_string())
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks; errors carry the dotted path of the offending field.
    pub fn validate(&self) -> Result<()> {
        check(
            !self.seeds.is_empty(),
            "seeds",
            "at least one seed is required",
        )?;
        self.algo.validate().map_err(|e| match e {
            mood_core::Error::Config { path, msg } => CliError::config(format!("algo.{path}"), msg),
            other => other.into(),
        })?;

        let d = &self.data;
        check(
            !d.tasks.is_empty(),
            "data.tasks",
            "at least one task is required",
        )?;
        for (i, t) in d.tasks.iter().enumerate() {
            let path = format!("data.tasks[{i}]");
            check(
                d.env.supports(*t),
                &path,
                &format!("task `{t}` is not defined for `{}`", d.env),
            )?;
            check(!d.tasks[..i].contains(t), &path, "duplicate task")?;
        }
        check(d.episodes >= 1, "data.episodes", "must be at least 1")?;
        check(
            d.noise_std >= 0.0 && d.noise_std.is_finite(),
            "data.noise_std",
            "must be finite and >= 0",
        )?;

        check(
            self.train.metrics_every >= 1,
            "train.metrics_every",
            "must be at least 1",
        )?;

        let e = &self.eval;
        check(e.episodes >= 1, "eval.episodes", "must be at least 1")?;
        if let Some(m) = e.samples {
            check(m >= 1, "eval.samples", "must be at least 1")?;
        }
        if let Some(l) = e.lambda_es {
            check(l >= 0.0 && l.is_finite(), "eval.lambda_es", "must be >= 0")?;
        }

        let a = &self.analyze;
        check(
            a.beta > 0.0 && a.beta.is_finite(),
            "analyze.beta",
            "must be positive and finite",
        )?;
        check(a.rows >= 1, "analyze.rows", "must be at least 1")?;
        check(
            a.trials >= MIN_TRIALS,
            "analyze.trials",
            &format!("must be at least {MIN_TRIALS}"),
        )?;
        check(
            !a.batch_sizes.is_empty(),
            "analyze.batch_sizes",
            "at least one batch size is required",
        )?;
        check(
            !a.estimators.is_empty(),
            "analyze.estimators",
            "at least one estimator is required",
        )?;
        for (i, &n) in a.batch_sizes.iter().enumerate() {
            let path = format!("analyze.batch_sizes[{i}]");
            check(n >= 1, &path, "must be at least 1")?;
            if a.fixture != FixtureKind::Networks {
                check(n <= a.rows, &path, "must not exceed analyze.rows")?;
            }
        }
        Ok(())
    }

    /// The output directory after applying `$MOOD_OUT`.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(&self.out_dir),
            None => self.out_dir.clone(),
        }
    }

    /// Input paths are relative to the output directory, so a config can
    /// name files that `gen-data` and `train` wrote.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.out_dir().join(p)
    }

    /// `field` as an input path, or a config error naming it when unset.
    pub fn required(&self, value: &Option<PathBuf>, field: &str) -> Result<PathBuf> {
        value
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::config(field, "a path is required for this command"))
    }
}

/// Sets `path.to.key = value` in `table`. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(assignment, "overrides take the form dotted.path=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "empty path segment"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (leaf, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(parts[..=i].join("."), "is not a table"))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}
