//! Bias and variance of policy-improvement objective estimators.
//!
//! With policy and critics frozen, every buffer row has a fixed advantage
//! `A_i` and log-likelihood `log π(a_i|s_i)`. The full-buffer objective
//! `Σ_i softmax(A/β)_i · log π_i` is then a number, and minibatch estimators
//! can be compared against it by Monte Carlo.

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algos::losses::{advantage, asac_tree_logit, wis_weights};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::logtree::LogSumExpTree;
use crate::nets::{CriticEnsemble, GaussianPolicy};
use crate::stats::sample_variance;

pub const MIN_TRIALS: usize = 1000;
pub const DEFAULT_BATCH_SIZES: [usize; 4] = [16, 64, 256, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Self-normalized weights over a uniform minibatch.
    AwacWis,
    /// Plain mean log-likelihood over a batch drawn from a fully refreshed tree.
    AsacFresh,
    /// As `AsacFresh`, but the tree only learns advantages of rows drawn in
    /// earlier trials; it starts uniform.
    AsacStale,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [
        Estimator::AwacWis,
        Estimator::AsacFresh,
        Estimator::AsacStale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::AwacWis => "awac_wis",
            Estimator::AsacFresh => "asac_fresh",
            Estimator::AsacStale => "asac_stale",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown estimator `{s}`")))
    }
}

/// Frozen per-row advantages and log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub advantages: Array1<f64>,
    pub log_probs: Array1<f64>,
}

impl Fixture {
    pub fn new(advantages: Array1<f64>, log_probs: Array1<f64>) -> Result<Self> {
        if advantages.is_empty() || advantages.len() != log_probs.len() {
            return Err(Error::invalid(
                "fixture needs equal, non-empty advantage and log-prob columns",
            ));
        }
        if advantages.iter().chain(&log_probs).any(|v| !v.is_finite()) {
            return Err(Error::invalid("fixture values must be finite"));
        }
        Ok(Self {
            advantages,
            log_probs,
        })
    }

    /// Advantages computed once per row (clipped at `adv_max`) with a fixed seed.
    pub fn from_networks(
        ds: &Dataset,
        policy: &GaussianPolicy,
        critics: &CriticEnsemble,
        adv_samples: usize,
        adv_max: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::invalid("objective of an empty dataset is undefined"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adv = advantage(
            critics,
            policy,
            ds.states().view(),
            ds.actions().view(),
            adv_samples,
            adv_max,
            &mut rng,
        )?;
        let logp = policy.log_prob(ds.states().view(), ds.actions().view())?;
        Self::new(adv, logp)
    }

    /// Heavy-tailed advantages `A ~ LogNormal(0, 1)`, log-likelihoods that
    /// decrease with the advantage, `log π = −1 − A/2`.
    pub fn lognormal(rows: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = LogNormal::new(0.0, 1.0).expect("valid log-normal");
        let adv: Array1<f64> = (0..rows).map(|_| dist.sample(&mut rng)).collect();
        let logp = adv.mapv(|a| -1.0 - 0.5 * a);
        Self::new(adv, logp)
    }

    /// Light-tailed advantages `A ~ N(0, 1)` with `log π ~ N(−1, 0.5)` drawn independently.
    pub fn gaussian(rows: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).expect("valid normal");
        let lp = Normal::new(-1.0, 0.5).expect("valid normal");
        let adv: Array1<f64> = (0..rows).map(|_| std.sample(&mut rng)).collect();
        let logp: Array1<f64> = (0..rows).map(|_| lp.sample(&mut rng)).collect();
        Self::new(adv, logp)
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }

    /// Leaf logits `A_i / β` of the target sampling distribution.
    pub fn logits(&self, beta: f64) -> Vec<f64> {
        self.advantages
            .iter()
            .map(|&a| asac_tree_logit(a, beta, None))
            .collect()
    }
}

/// Full-buffer objective `Σ_i softmax(A/β)_i · log π_i`.
pub fn exact_objective(f: &Fixture, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(wis_weights(f.advantages.view(), beta).dot(&f.log_probs))
}

/// [`exact_objective`] for frozen networks on a dataset.
pub fn exact_awac_objective(
    ds: &Dataset,
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    beta: f64,
    adv_max: Option<f64>,
    seed: u64,
) -> Result<f64> {
    let f = Fixture::from_networks(ds, policy, critics, 1, adv_max, seed)?;
    exact_objective(&f, beta)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {beta}"
        )));
    }
    Ok(())
}

fn wis_estimate<R: Rng>(f: &Fixture, beta: f64, n: usize, rng: &mut R) -> f64 {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..f.len())).collect();
    let adv: Array1<f64> = idx.iter().map(|&i| f.advantages[i]).collect();
    let w = wis_weights(adv.view(), beta);
    idx.iter().zip(&w).map(|(&i, &w)| w * f.log_probs[i]).sum()
}

fn tree_estimate<R: Rng>(
    f: &Fixture,
    tree: &LogSumExpTree,
    n: usize,
    rng: &mut R,
) -> Result<(f64, Vec<usize>)> {
    let idx = tree.sample_batch(rng, n)?;
    let mean = idx.iter().map(|&i| f.log_probs[i]).sum::<f64>() / n as f64;
    Ok((mean, idx))
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64))
}

/// Raw per-trial estimates; trial `k` draws from its own rng seeded `seed + k`.
pub fn estimates(
    f: &Fixture,
    est: Estimator,
    beta: f64,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if batch_size == 0 || batch_size > f.len() {
        return Err(Error::invalid(format!(
            "batch size {batch_size} must lie in 1..={} (dataset size)",
            f.len()
        )));
    }
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "at least {MIN_TRIALS} trials are required, got {trials}"
        )));
    }
    match est {
        Estimator::AwacWis => Ok((0..trials)
            .into_par_iter()
            .map(|k| wis_estimate(f, beta, batch_size, &mut trial_rng(seed, k)))
            .collect()),
        Estimator::AsacFresh => {
            let tree = LogSumExpTree::from_logits(&f.logits(beta))?;
            (0..trials)
                .into_par_iter()
                .map(|k| {
                    tree_estimate(f, &tree, batch_size, &mut trial_rng(seed, k)).map(|(m, _)| m)
                })
                .collect()
        }
        Estimator::AsacStale => {
            let mut tree = LogSumExpTree::from_logits(&vec![0.0; f.len()])?;
            let mut out = Vec::with_capacity(trials);
            for k in 0..trials {
                let (m, idx) = tree_estimate(f, &tree, batch_size, &mut trial_rng(seed, k))?;
                out.push(m);
                for i in idx {
                    tree.set_logit(i, asac_tree_logit(f.advantages[i], beta, None))?;
                }
            }
            Ok(out)
        }
    }
}

/// Monte Carlo summary for one estimator and batch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub estimator: Estimator,
    pub batch_size: usize,
    pub bias: f64,
    pub variance: f64,
    pub trials: usize,
    pub exact_value: f64,
    pub seed: u64,
}

impl EstimatorRow {
    /// Standard error of the bias estimate.
    pub fn bias_se(&self) -> f64 {
        (self.variance / self.trials as f64).sqrt()
    }

    /// Whether `|bias|` is below `k_se` standard errors.
    pub fn within(&self, k_se: f64) -> bool {
        self.bias.abs() < k_se * self.bias_se()
    }
}

/// `(mean − exact, sample variance)` of the estimator over `trials` minibatches.
pub fn estimator_bias_variance(
    f: &Fixture,
    est: Estimator,
    beta: f64,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<EstimatorRow> {
    let exact = exact_objective(f, beta)?;
    let xs = estimates(f, est, beta, batch_size, trials, seed)?;
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(EstimatorRow {
        estimator: est,
        batch_size,
        bias: mean - exact,
        variance: sample_variance(&xs),
        trials,
        exact_value: exact,
        seed,
    })
}

/// Every estimator over every batch size.
pub fn estimator_report(
    f: &Fixture,
    estimators: &[Estimator],
    beta: f64,
    batch_sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<EstimatorRow>> {
    let mut rows = Vec::new();
    for &e in estimators {
        for &n in batch_sizes {
            rows.push(estimator_bias_variance(f, e, beta, n, trials, seed)?);
        }
    }
    Ok(rows)
}
