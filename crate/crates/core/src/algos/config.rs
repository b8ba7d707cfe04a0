use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Preset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td3,
    Td3bc,
    Awac,
    Iql,
    Asac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Td3,
        Algorithm::Td3bc,
        Algorithm::Awac,
        Algorithm::Iql,
        Algorithm::Asac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Td3 => "td3",
            Algorithm::Td3bc => "td3bc",
            Algorithm::Awac => "awac",
            Algorithm::Iql => "iql",
            Algorithm::Asac => "asac",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

/// Hyper-parameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub preset: Preset,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Pessimism of the ensemble aggregate used in TD targets.
    pub lambda: f64,
    pub n_critics: usize,
    /// Candidate actions for evaluation sampling.
    pub eval_samples: usize,
    /// Pessimism used to rank evaluation-sampling candidates.
    pub lambda_es: f64,
    /// Advantage clip; `None` means unbounded.
    pub adv_max: Option<f64>,
    /// Policy samples in the advantage baseline.
    pub adv_samples: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub value_lr: f64,
    pub train_steps: u64,
    pub policy_delay: u64,
    pub init_log_std: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Awac,
            preset: Preset::SimpleSmall,
            gamma: 0.99,
            rho: 0.995,
            beta: 0.5,
            alpha: 0.1,
            tau: 0.7,
            lambda: 0.5,
            n_critics: 2,
            eval_samples: 50,
            lambda_es: 0.0,
            adv_max: None,
            adv_samples: 1,
            batch_size: 512,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            value_lr: 3e-4,
            train_steps: 100_000,
            policy_delay: 2,
            init_log_std: -1.0,
        }
    }
}

impl AlgoConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_default();
            Error::config(path, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every range constraint, reporting the first offending field.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        }
        let open01 = |x: f64| x > 0.0 && x < 1.0;
        check(
            (0.0..1.0).contains(&self.gamma),
            "gamma",
            "must lie in [0, 1)",
        )?;
        check(open01(self.rho), "rho", "must lie in (0, 1)")?;
        check(
            self.beta > 0.0 && self.beta.is_finite(),
            "beta",
            "must be positive and finite",
        )?;
        check(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            "alpha",
            "must be >= 0",
        )?;
        check(open01(self.tau), "tau", "must lie in (0, 1)")?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            "must be >= 0",
        )?;
        check(self.n_critics >= 2, "n_critics", "must be at least 2")?;
        check(self.eval_samples >= 1, "eval_samples", "must be at least 1")?;
        check(
            self.lambda_es >= 0.0 && self.lambda_es.is_finite(),
            "lambda_es",
            "must be >= 0",
        )?;
        if let Some(a) = self.adv_max {
            check(
                a > 0.0 && !a.is_nan(),
                "adv_max",
                "must be positive (omit for unbounded)",
            )?;
        }
        check(self.adv_samples >= 1, "adv_samples", "must be at least 1")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        for (lr, name) in [
            (self.actor_lr, "actor_lr"),
            (self.critic_lr, "critic_lr"),
            (self.value_lr, "value_lr"),
        ] {
            check(
                lr > 0.0 && lr.is_finite(),
                name,
                "must be positive and finite",
            )?;
        }
        check(self.policy_delay >= 1, "policy_delay", "must be at least 1")?;
        check(
            self.init_log_std.is_finite(),
            "init_log_std",
            "must be finite",
        )?;
        Ok(())
    }

    /// `min(a, adv_max)`.
    pub fn clip_advantage(&self, a: f64) -> f64 {
        match self.adv_max {
            Some(m) => a.min(m),
            None => a,
        }
    }
}
