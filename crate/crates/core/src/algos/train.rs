use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{AlgoConfig, Algorithm};
use super::losses::{
    advantage, asac_actor_loss, asac_refresh, asac_sample_batch, awac_actor_loss, critic_loss,
    iql_losses, td3bc_actor_loss, td_target, IqlParams,
};
use crate::datasets::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::logtree::LogSumExpTree;
use crate::nets::checkpoint::{Checkpoint, Entry};
use crate::nets::optim::adam_step;
use crate::nets::{AdamState, Arch, CriticEnsemble, GaussianPolicy, Net, PolicyGrad};

/// Per-step training diagnostics. Optional fields are absent on steps (or for
/// algorithms) where the quantity is not computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub mean_advantage: Option<f64>,
    pub tree_log_norm: Option<f64>,
}

/// Writes `rows` as CSV with header
/// `step,critic_loss,actor_loss,mean_advantage,tree_log_norm`; absent values
/// are empty cells.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[StepMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "step",
            "critic_loss",
            "actor_loss",
            "mean_advantage",
            "tree_log_norm",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Network shapes for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Archs {
    pub actor: Arch,
    pub critic: Arch,
    pub value: Arch,
}

impl Archs {
    pub fn from_config(cfg: &AlgoConfig, state_dim: usize, action_dim: usize) -> Self {
        Self {
            actor: cfg.preset.actor(state_dim, action_dim),
            critic: cfg.preset.critic(state_dim, action_dim),
            value: cfg.preset.value(state_dim),
        }
    }
}

#[derive(Debug, Clone)]
struct PolicyOpt {
    mean: AdamState,
    log_std: AdamState,
}

/// Everything mutated by [`TrainState::train_step`].
#[derive(Debug, Clone)]
pub struct TrainState {
    config: AlgoConfig,
    pub policy: GaussianPolicy,
    pub critics: CriticEnsemble,
    /// Present iff the algorithm is IQL.
    pub value_net: Option<Net>,
    /// Sampling tree over dataset rows; present iff the algorithm is ASAC.
    pub tree: Option<LogSumExpTree>,
    policy_opt: PolicyOpt,
    critic_opt: Vec<AdamState>,
    value_opt: Option<AdamState>,
    step: u64,
    rng: ChaCha8Rng,
}

fn rewrap(step: u64, what: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Poisoned { what: w, .. } => Error::Poisoned {
            step,
            what: format!("{what}: {w}"),
        },
        other => other,
    }
}

fn finite(step: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Poisoned {
            step,
            what: format!("{what} is {v}"),
        })
    }
}

impl TrainState {
    /// Networks from the configured preset; `dataset_len` sizes the ASAC tree.
    pub fn new(
        config: AlgoConfig,
        state_dim: usize,
        action_dim: usize,
        dataset_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let archs = Archs::from_config(&config, state_dim, action_dim);
        Self::with_archs(config, &archs, state_dim, dataset_len, seed)
    }

    pub fn for_dataset(config: AlgoConfig, ds: &Dataset, seed: u64) -> Result<Self> {
        Self::new(config, ds.state_dim(), ds.action_dim(), ds.len(), seed)
    }

    pub fn with_archs(
        config: AlgoConfig,
        archs: &Archs,
        state_dim: usize,
        dataset_len: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if archs.actor.input_dim() != state_dim {
            return Err(Error::invalid("actor input must equal the state dimension"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(&archs.actor, config.init_log_std, &mut rng);
        let critics = CriticEnsemble::new(&archs.critic, state_dim, config.n_critics, &mut rng)?;
        if critics.action_dim() != policy.action_dim() {
            return Err(Error::invalid(
                "critic action input must equal the actor output",
            ));
        }
        let value_net =
            (config.algorithm == Algorithm::Iql).then(|| Net::new(&archs.value, &mut rng));
        let tree = if config.algorithm == Algorithm::Asac {
            if dataset_len == 0 {
                return Err(Error::invalid(
                    "advantage sampling needs a non-empty dataset",
                ));
            }
            Some(LogSumExpTree::from_logits(&vec![0.0; dataset_len])?)
        } else {
            None
        };
        let policy_opt = PolicyOpt {
            mean: AdamState::new(policy.mean_net().num_params()),
            log_std: AdamState::new(policy.action_dim()),
        };
        let critic_opt = critics
            .members()
            .iter()
            .map(|m| AdamState::new(m.num_params()))
            .collect();
        let value_opt = value_net.as_ref().map(|v| AdamState::new(v.num_params()));
        Ok(Self {
            config,
            policy,
            critics,
            value_net,
            tree,
            policy_opt,
            critic_opt,
            value_opt,
            step: 0,
            rng,
        })
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn apply_policy(&mut self, g: &PolicyGrad) -> Result<()> {
        let (t, lr) = (self.step, self.config.actor_lr);
        adam_step(
            self.policy.mean_net_mut().params_mut(),
            &g.mean,
            &mut self.policy_opt.mean,
            lr,
        )
        .map_err(rewrap(t, "actor"))?;
        adam_step(
            self.policy.log_std_mut(),
            &g.log_std,
            &mut self.policy_opt.log_std,
            lr,
        )
        .map_err(rewrap(t, "actor log-std"))?;
        self.policy.clamp_log_std();
        Ok(())
    }

    fn apply_critics(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        let (t, lr) = (self.step, self.config.critic_lr);
        for (i, g) in grads.iter().enumerate() {
            adam_step(
                self.critics.member_mut(i).params_mut(),
                g,
                &mut self.critic_opt[i],
                lr,
            )
            .map_err(rewrap(t, "critic"))?;
        }
        Ok(())
    }

    /// One critic update on a uniform minibatch, an actor update every
    /// `policy_delay` steps, target averaging, and (ASAC) a tree refresh of
    /// the rows touched this step.
    pub fn train_step(&mut self, ds: &Dataset) -> Result<StepMetrics> {
        if ds.is_empty() {
            return Err(Error::invalid("training needs a non-empty dataset"));
        }
        if let Some(tree) = &self.tree {
            if tree.size() != ds.len() {
                return Err(Error::invalid(format!(
                    "sampling tree covers {} rows but the dataset has {}",
                    tree.size(),
                    ds.len()
                )));
            }
        }
        let t = self.step;
        let cfg = self.config.clone();
        let actor_turn = t.is_multiple_of(cfg.policy_delay);
        let b_cr = ds.sample_uniform(cfg.batch_size, &mut self.rng)?;
        let mut metrics = StepMetrics {
            step: t,
            critic_loss: f64::NAN,
            actor_loss: None,
            mean_advantage: None,
            tree_log_norm: None,
        };

        if cfg.algorithm == Algorithm::Iql {
            let value = self.value_net.as_ref().expect("IQL keeps a value net");
            let p = IqlParams {
                tau: cfg.tau,
                beta: cfg.beta,
                gamma: cfg.gamma,
                lambda: cfg.lambda,
                adv_max: cfg.adv_max,
            };
            let l = iql_losses(&b_cr, value, &self.critics, &self.policy, p, actor_turn)?;
            finite(t, "value loss", l.value_loss)?;
            finite(t, "critic loss", l.critic.loss)?;
            let vnet = self.value_net.as_mut().expect("IQL keeps a value net");
            adam_step(
                vnet.params_mut(),
                &l.value_grad,
                self.value_opt.as_mut().expect("value optimizer"),
                cfg.value_lr,
            )
            .map_err(rewrap(t, "value"))?;
            self.apply_critics(&l.critic.grads)?;
            metrics.critic_loss = l.critic.loss;
            metrics.mean_advantage = l.advantages.mean();
            if let Some((loss, g)) = l.actor {
                finite(t, "actor loss", loss)?;
                self.apply_policy(&g)?;
                metrics.actor_loss = Some(loss);
            }
        } else {
            let y = td_target(
                &b_cr,
                &self.policy,
                &self.critics,
                cfg.gamma,
                cfg.lambda,
                &mut self.rng,
            )?;
            let cl = critic_loss(
                &self.critics,
                b_cr.states.view(),
                b_cr.actions.view(),
                y.view(),
            )?;
            finite(t, "critic loss", cl.loss)?;
            self.apply_critics(&cl.grads)?;
            metrics.critic_loss = cl.loss;
        }

        let mut b_ac: Option<Batch> = None;
        if actor_turn && cfg.algorithm != Algorithm::Iql {
            let (loss, g) = match cfg.algorithm {
                Algorithm::Td3 | Algorithm::Td3bc => {
                    let alpha = if cfg.algorithm == Algorithm::Td3 {
                        0.0
                    } else {
                        cfg.alpha
                    };
                    let noise = self.policy.standard_noise(b_cr.len(), &mut self.rng);
                    td3bc_actor_loss(
                        &self.policy,
                        &self.critics,
                        b_cr.states.view(),
                        b_cr.actions.view(),
                        alpha,
                        noise.view(),
                    )?
                }
                Algorithm::Awac => {
                    let adv = advantage(
                        &self.critics,
                        &self.policy,
                        b_cr.states.view(),
                        b_cr.actions.view(),
                        cfg.adv_samples,
                        cfg.adv_max,
                        &mut self.rng,
                    )?;
                    metrics.mean_advantage = adv.mean();
                    awac_actor_loss(
                        &self.policy,
                        b_cr.states.view(),
                        b_cr.actions.view(),
                        adv.view(),
                        cfg.beta,
                    )?
                }
                Algorithm::Asac => {
                    let tree = self.tree.as_ref().expect("ASAC keeps a tree");
                    let batch = asac_sample_batch(tree, ds, cfg.batch_size, &mut self.rng)?;
                    let out =
                        asac_actor_loss(&self.policy, batch.states.view(), batch.actions.view())?;
                    b_ac = Some(batch);
                    out
                }
                Algorithm::Iql => unreachable!("handled above"),
            };
            finite(t, "actor loss", loss)?;
            self.apply_policy(&g)?;
            metrics.actor_loss = Some(loss);
        }

        self.critics.polyak_update(cfg.rho);

        if cfg.algorithm == Algorithm::Asac {
            let mut rows: Vec<usize> = b_cr.indices.clone();
            if let Some(b) = &b_ac {
                rows.extend_from_slice(&b.indices);
            }
            rows.sort_unstable();
            rows.dedup();
            let batch = ds.batch(&rows)?;
            let adv = advantage(
                &self.critics,
                &self.policy,
                batch.states.view(),
                batch.actions.view(),
                cfg.adv_samples,
                None,
                &mut self.rng,
            )?;
            for &a in &adv {
                finite(t, "advantage", a)?;
            }
            let tree = self.tree.as_mut().expect("ASAC keeps a tree");
            asac_refresh(tree, &rows, adv.view(), cfg.beta, cfg.adv_max)?;
            metrics.mean_advantage =
                Some(adv.iter().map(|&a| cfg.clip_advantage(a)).sum::<f64>() / adv.len() as f64);
            metrics.tree_log_norm = Some(tree.log_norm());
        }

        self.policy.mean_net_mut().refresh_spectral();
        self.critics.refresh_spectral();
        if let Some(v) = &mut self.value_net {
            v.refresh_spectral();
        }
        self.step += 1;
        Ok(metrics)
    }

    /// Network weights, target critics, spectral buffers and (ASAC) tree
    /// logits. Optimizer moments and the rng are not stored.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta
            .insert("algorithm".into(), self.config.algorithm.to_string());
        ck.meta.insert("step".into(), self.step.to_string());
        ck.meta.insert(
            "config".into(),
            toml::to_string(&self.config).expect("config serializes"),
        );
        ck.entries
            .push(Entry::from_net("actor", self.policy.mean_net()));
        ck.entries
            .push(Entry::vector("log_std", self.policy.log_std()));
        for (i, (m, t)) in self
            .critics
            .members()
            .iter()
            .zip(self.critics.targets())
            .enumerate()
        {
            ck.entries.push(Entry::from_net(format!("critic.{i}"), m));
            ck.entries
                .push(Entry::from_net(format!("critic_target.{i}"), t));
        }
        if let Some(v) = &self.value_net {
            ck.entries.push(Entry::from_net("value", v));
        }
        if let Some(tree) = &self.tree {
            ck.entries.push(Entry::vector("tree", tree.leaf_logits()));
        }
        ck
    }
}

/// Trained networks restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AlgoConfig,
    pub step: u64,
    pub policy: GaussianPolicy,
    pub critics: CriticEnsemble,
    pub value_net: Option<Net>,
}

impl Agent {
    /// Restores networks, checking them against the shapes implied by the
    /// stored config when `expected` is `None`.
    pub fn from_checkpoint(
        ck: &Checkpoint,
        state_dim: usize,
        action_dim: usize,
        expected: Option<&Archs>,
    ) -> Result<Self> {
        let text = ck
            .meta
            .get("config")
            .ok_or_else(|| Error::Checkpoint("missing config".into()))?;
        let config: AlgoConfig = toml::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("stored config: {}", e.message())))?;
        let step = ck
            .meta
            .get("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing step".into()))?;
        let archs = expected
            .cloned()
            .unwrap_or_else(|| Archs::from_config(&config, state_dim, action_dim));
        let mean = ck.entry("actor")?.to_net(Some(&archs.actor))?;
        let log_std = ck.entry("log_std")?.params.clone();
        if log_std.len() != mean.output_dim() {
            return Err(Error::Checkpoint(
                "log_std length differs from the actor output".into(),
            ));
        }
        let policy = GaussianPolicy::from_parts(mean, log_std);
        let mut members = Vec::new();
        let mut targets = Vec::new();
        for i in 0..config.n_critics {
            members.push(
                ck.entry(&format!("critic.{i}"))?
                    .to_net(Some(&archs.critic))?,
            );
            targets.push(
                ck.entry(&format!("critic_target.{i}"))?
                    .to_net(Some(&archs.critic))?,
            );
        }
        let critics = CriticEnsemble::from_parts(members, targets, state_dim)?;
        let value_net = match config.algorithm {
            Algorithm::Iql => Some(ck.entry("value")?.to_net(Some(&archs.value))?),
            _ => None,
        };
        Ok(Self {
            config,
            step,
            policy,
            critics,
            value_net,
        })
    }
}
