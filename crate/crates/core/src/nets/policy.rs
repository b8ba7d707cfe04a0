use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Arch, Net, Tape};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over actions with a state-dependent mean and a
/// state-independent learnable log standard deviation. Samples are clipped
/// to the action box `[-1, 1]^d`; there is no squashing.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    mean: Net,
    log_std: Vec<f64>,
}

/// Gradient with respect to a policy's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(policy: &GaussianPolicy) -> Self {
        Self {
            mean: vec![0.0; policy.mean.num_params()],
            log_std: vec![0.0; policy.action_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &PolicyGrad) {
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            *a += b;
        }
        for (a, b) in self.log_std.iter_mut().zip(&other.log_std) {
            *a += b;
        }
    }

    pub fn has_nan(&self) -> bool {
        self.mean.iter().chain(&self.log_std).any(|v| v.is_nan())
    }
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, init_log_std: f64, rng: &mut R) -> Self {
        let mean = Net::new(arch, rng);
        let d = mean.output_dim();
        Self::from_parts(mean, vec![init_log_std; d])
    }

    pub fn from_parts(mean: Net, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.output_dim(), log_std.len());
        let mut p = Self { mean, log_std };
        p.clamp_log_std();
        p
    }

    pub fn state_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn mean_net(&self) -> &Net {
        &self.mean
    }

    pub fn mean_net_mut(&mut self) -> &mut Net {
        &mut self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    /// Mutable access for optimizers; call [`clamp_log_std`](Self::clamp_log_std)
    /// after modifying.
    pub fn log_std_mut(&mut self) -> &mut [f64] {
        &mut self.log_std
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Unclipped mean `μ(s)`, one row per state.
    pub fn raw_mean(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.mean.forward(states)
    }

    pub fn mean_tape(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.mean.forward_tape(states)
    }

    /// Gradient of `Σ ⟨dmu_b, μ(s_b)⟩` w.r.t. the mean network.
    pub fn mean_backward(&self, tape: &Tape, dmu: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.mean.backward(tape, dmu)?.params)
    }

    /// Deterministic action: the mean clipped to the box.
    pub fn act_mean(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.raw_mean(states)?.mapv(clip_unit))
    }

    pub fn standard_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.action_dim()), || rng.sample(StandardNormal))
    }

    /// `clip(μ + σ ⊙ z)` for a given standard-normal draw `z`.
    pub fn act_with_noise(
        &self,
        states: ArrayView2<f64>,
        noise: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let mu = self.raw_mean(states)?;
        Ok(self.actions_from_mean(mu.view(), noise))
    }

    pub fn actions_from_mean(&self, mu: ArrayView2<f64>, noise: ArrayView2<f64>) -> Array2<f64> {
        let std = Array1::from(self.std());
        (&mu + &(&noise * &std)).mapv(clip_unit)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let noise = self.standard_noise(states.nrows(), rng);
        self.act_with_noise(states, noise.view())
    }

    pub fn log_prob(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        self.check_actions(&states, &actions)?;
        let mu = self.raw_mean(states)?;
        Ok(gaussian_log_prob(mu.view(), &self.log_std, actions))
    }

    /// `Σ_i coeffs_i · log π(a_i|s_i)` and its gradient.
    pub fn weighted_log_prob_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        coeffs: ArrayView1<f64>,
    ) -> Result<(f64, PolicyGrad)> {
        self.check_actions(&states, &actions)?;
        let (mu, tape) = self.mean_tape(states)?;
        let logp = gaussian_log_prob(mu.view(), &self.log_std, actions);
        let (dmu, dls) = log_prob_partials(mu.view(), &self.log_std, actions, coeffs);
        let mean = self.mean_backward(&tape, dmu.view())?;
        Ok((logp.dot(&coeffs), PolicyGrad { mean, log_std: dls }))
    }

    fn check_actions(&self, states: &ArrayView2<f64>, actions: &ArrayView2<f64>) -> Result<()> {
        if actions.ncols() != self.action_dim() || actions.nrows() != states.nrows() {
            return Err(Error::invalid(format!(
                "actions have shape {:?}, expected ({}, {})",
                actions.shape(),
                states.nrows(),
                self.action_dim()
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn clip_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Row-wise diagonal Gaussian log-density.
pub fn gaussian_log_prob(
    mu: ArrayView2<f64>,
    log_std: &[f64],
    actions: ArrayView2<f64>,
) -> Array1<f64> {
    let d = log_std.len() as f64;
    let norm: f64 = log_std.iter().sum::<f64>() + d * HALF_LN_2PI;
    let inv_std: Array1<f64> = log_std.iter().map(|l| (-l).exp()).collect();
    let z = (&actions - &mu) * &inv_std;
    z.mapv(|v| -0.5 * v * v).sum_axis(Axis(1)) - norm
}

/// Partial derivatives of `Σ_i c_i log N(a_i; μ_i, σ)` w.r.t. μ and log σ.
pub fn log_prob_partials(
    mu: ArrayView2<f64>,
    log_std: &[f64],
    actions: ArrayView2<f64>,
    coeffs: ArrayView1<f64>,
) -> (Array2<f64>, Vec<f64>) {
    let inv_std: Array1<f64> = log_std.iter().map(|l| (-l).exp()).collect();
    let z = (&actions - &mu) * &inv_std;
    let c = coeffs.insert_axis(Axis(1));
    let dmu = &z * &inv_std * c;
    let dls = (z.mapv(|v| v * v - 1.0) * c).sum_axis(Axis(0)).to_vec();
    (dmu, dls)
}

/// Backpropagates `dL/da` through `a = clip(μ + σ ⊙ z)`.
///
/// Entries whose pre-clip value lies outside `(-1, 1)` get zero gradient.
pub fn reparam_partials(
    mu: ArrayView2<f64>,
    log_std: &[f64],
    noise: ArrayView2<f64>,
    da: ArrayView2<f64>,
) -> (Array2<f64>, Vec<f64>) {
    let std: Array1<f64> = log_std.iter().map(|l| l.exp()).collect();
    let scaled = &noise * &std;
    let pre = &mu + &scaled;
    let mut dmu = da.to_owned();
    dmu.zip_mut_with(&pre, |g, &p| {
        if p <= -1.0 || p >= 1.0 {
            *g = 0.0;
        }
    });
    let dls = (&dmu * &scaled).sum_axis(Axis(0)).to_vec();
    (dmu, dls)
}
