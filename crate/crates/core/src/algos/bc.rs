//! Behavior cloning: maximum likelihood of dataset actions under the policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::asac_actor_loss;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nets::optim::adam_step;
use crate::nets::{AdamState, Arch, GaussianPolicy};

#[derive(Debug, Clone)]
pub struct BehaviorCloning {
    pub policy: GaussianPolicy,
    mean_opt: AdamState,
    log_std_opt: AdamState,
    lr: f64,
    batch_size: usize,
    step: u64,
    rng: ChaCha8Rng,
}

impl BehaviorCloning {
    pub fn new(
        arch: &Arch,
        init_log_std: f64,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) || batch_size == 0 {
            return Err(Error::invalid(
                "behavior cloning needs a positive learning rate and batch size",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(arch, init_log_std, &mut rng);
        Ok(Self {
            mean_opt: AdamState::new(policy.mean_net().num_params()),
            log_std_opt: AdamState::new(policy.action_dim()),
            policy,
            lr,
            batch_size,
            step: 0,
            rng,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One Adam step on the mean negative log-likelihood of a uniform batch;
    /// returns the loss before the update.
    pub fn train_step(&mut self, ds: &Dataset) -> Result<f64> {
        let b = ds.sample_uniform(self.batch_size, &mut self.rng)?;
        let (loss, g) = asac_actor_loss(&self.policy, b.states.view(), b.actions.view())?;
        let poisoned = |e: Error| match e {
            Error::Poisoned { what, .. } => Error::Poisoned {
                step: self.step,
                what: format!("behavior cloning: {what}"),
            },
            other => other,
        };
        adam_step(
            self.policy.mean_net_mut().params_mut(),
            &g.mean,
            &mut self.mean_opt,
            self.lr,
        )
        .map_err(poisoned)?;
        adam_step(
            self.policy.log_std_mut(),
            &g.log_std,
            &mut self.log_std_opt,
            self.lr,
        )
        .map_err(poisoned)?;
        self.policy.clamp_log_std();
        self.step += 1;
        Ok(loss)
    }
}
