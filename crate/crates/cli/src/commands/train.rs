use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mood_core::algos::{write_metrics_csv, StepMetrics, TrainState};
use mood_core::datasets::{load, Dataset};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Averages per-step metrics over a logging window. Optional columns
/// average over the steps that produced them.
#[derive(Default)]
struct Window {
    critic: Vec<f64>,
    actor: Vec<f64>,
    advantage: Vec<f64>,
    tree: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl Window {
    fn push(&mut self, m: &StepMetrics) {
        self.critic.push(m.critic_loss);
        self.actor.extend(m.actor_loss);
        self.advantage.extend(m.mean_advantage);
        if m.tree_log_norm.is_some() {
            self.tree = m.tree_log_norm;
        }
    }

    /// The row for the window ending after `steps` completed steps.
    fn flush(&mut self, steps: u64) -> StepMetrics {
        let w = std::mem::take(self);
        StepMetrics {
            step: steps,
            critic_loss: mean(&w.critic).unwrap_or(f64::NAN),
            actor_loss: mean(&w.actor),
            mean_advantage: mean(&w.advantage),
            tree_log_norm: w.tree,
        }
    }
}

pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("train").join(cfg.algo.algorithm.name())
}

pub fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed-{seed}"))
}

/// Trains one seed; returns the metrics rows written.
pub fn train_seed(
    cfg: &RunConfig,
    ds: &Dataset,
    seed: u64,
    dir: &Path,
) -> Result<Vec<StepMetrics>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut state = TrainState::for_dataset(cfg.algo.clone(), ds, seed)?;
    let every = cfg.train.metrics_every;
    let mut window = Window::default();
    let mut rows = Vec::new();
    for done in 1..=cfg.algo.train_steps {
        window.push(&state.train_step(ds)?);
        if done % every == 0 || done == cfg.algo.train_steps {
            rows.push(window.flush(done));
        }
    }
    let path = dir.join("metrics.csv");
    let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_metrics_csv(std::io::BufWriter::new(f), &rows)?;
    state.to_checkpoint().save(&dir.join("checkpoint.ckpt"))?;
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let path = cfg.required(&cfg.train.dataset, "train.dataset")?;
    let ds = load(&path)?;
    let base = run_dir(cfg);
    std::fs::create_dir_all(&base).map_err(|e| CliError::io(&base, e))?;
    let resolved = toml::to_string(cfg).map_err(|e| CliError::Data(format!("config: {e}")))?;
    let cfg_path = base.join("config.toml");
    std::fs::write(&cfg_path, resolved).map_err(|e| CliError::io(&cfg_path, e))?;

    // one single-threaded pipeline per seed
    let results: Vec<Result<Vec<StepMetrics>>> = cfg
        .seeds
        .par_iter()
        .map(|&s| train_seed(cfg, &ds, s, &seed_dir(&base, s)))
        .collect();
    for (seed, r) in cfg.seeds.iter().zip(results) {
        let rows = r?;
        let last = rows.last().map(|m| m.critic_loss).unwrap_or(f64::NAN);
        eprintln!(
            "{} seed {seed}: {} steps, final critic loss {last:.4}",
            cfg.algo.algorithm, cfg.algo.train_steps
        );
    }
    Ok(())
}
