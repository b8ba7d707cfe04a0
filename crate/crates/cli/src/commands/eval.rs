use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mood_core::algos::{evaluate, ActionMode, Agent, Archs};
use mood_core::datasets::{load, normalize_score, Dataset, ToyEnv};
use mood_core::nets::checkpoint::Checkpoint;
use mood_core::stats::mean_se;

use super::train::{run_dir, seed_dir};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Evaluation rngs start here so they never coincide with training seeds.
const EVAL_SEED_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: usize,
    pub es: u8,
    #[serde(rename = "return")]
    pub ret: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub es: u8,
    pub seeds: usize,
    pub episodes: usize,
    /// Mean over seeds of each seed's mean normalized score.
    pub mean_normalized: f64,
    /// Standard error across seeds; empty for a single seed.
    pub se_normalized: Option<f64>,
    pub mean_return: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Data(format!("{}: {other:?}", path.display())),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn eval_seed(cfg: &RunConfig, ds: &Dataset, ckpt: &Path, seed: u64) -> Result<Vec<EpisodeRow>> {
    let (sd, ad) = (ds.state_dim(), ds.action_dim());
    let expected = Archs::from_config(&cfg.algo, sd, ad);
    let agent = Agent::from_checkpoint(&Checkpoint::load(ckpt)?, sd, ad, Some(&expected))?;
    let env = ToyEnv::new(ds.env(), ds.target_task())?;
    let m = cfg.eval.samples.unwrap_or(agent.config.eval_samples);
    let lambda_es = cfg.eval.lambda_es.unwrap_or(agent.config.lambda_es);
    let flags = cfg.eval.es.flags();
    let returns = flags
        .iter()
        .map(|&es| {
            let mode = if es {
                ActionMode::Sampling { m, lambda_es }
            } else {
                ActionMode::Mean
            };
            // same seed for both modes, so episode k starts from the same state
            evaluate(
                &agent.policy,
                &agent.critics,
                &env,
                cfg.eval.episodes,
                mode,
                EVAL_SEED_BASE.wrapping_add(seed),
            )
        })
        .collect::<mood_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for episode in 0..cfg.eval.episodes {
        for (&es, r) in flags.iter().zip(&returns) {
            rows.push(EpisodeRow {
                seed,
                episode,
                es: es as u8,
                ret: r[episode],
                normalized: normalize_score(r[episode], ds)?,
            });
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[EpisodeRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for es in [0u8, 1] {
        let sel: Vec<&EpisodeRow> = rows.iter().filter(|r| r.es == es).collect();
        if sel.is_empty() {
            continue;
        }
        let mut seeds: Vec<u64> = sel.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let per_seed: Vec<f64> = seeds
            .iter()
            .map(|s| {
                let xs: Vec<f64> = sel
                    .iter()
                    .filter(|r| r.seed == *s)
                    .map(|r| r.normalized)
                    .collect();
                xs.iter().sum::<f64>() / xs.len() as f64
            })
            .collect();
        let (mean, se) = mean_se(&per_seed);
        out.push(SummaryRow {
            es,
            seeds: seeds.len(),
            episodes: sel.len(),
            mean_normalized: mean,
            se_normalized: se.is_finite().then_some(se),
            mean_return: sel.iter().map(|r| r.ret).sum::<f64>() / sel.len() as f64,
        });
    }
    out
}

pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("eval").join(cfg.algo.algorithm.name())
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let ds_path = match &cfg.eval.dataset {
        Some(p) => cfg.resolve(p),
        None => cfg.required(&cfg.train.dataset, "eval.dataset")?,
    };
    let ds = load(&ds_path)?;
    let runs = cfg
        .eval
        .run_dir
        .as_ref()
        .map(|p| cfg.resolve(p))
        .unwrap_or_else(|| run_dir(cfg));
    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let results: Vec<Result<Vec<EpisodeRow>>> = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let rows = eval_seed(cfg, &ds, &seed_dir(&runs, s).join("checkpoint.ckpt"), s)?;
            write_csv(&dir.join(format!("seed-{s}.csv")), &rows)?;
            Ok(rows)
        })
        .collect();
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    write_csv(&dir.join("episodes.csv"), &all)?;
    let summary = summarize(&all);
    write_csv(&dir.join("summary.csv"), &summary)?;
    for row in &summary {
        let se = row
            .se_normalized
            .map(|s| format!(" ± {s:.1}"))
            .unwrap_or_default();
        let label = if row.es == 1 {
            "with evaluation sampling"
        } else {
            "policy mean"
        };
        eprintln!(
            "{} {label}: {:.1}{se} over {} seeds",
            cfg.algo.algorithm, row.mean_normalized, row.seeds
        );
    }
    Ok(())
}
