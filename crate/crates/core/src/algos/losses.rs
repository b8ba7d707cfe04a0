//! Loss kernels with hand-derived gradients.
//!
//! Stochastic kernels come in two flavours: a `*_with_noise` form taking the
//! standard-normal draws explicitly (deterministic, finite-difference
//! checkable) and an rng-driven wrapper.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::datasets::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::logtree::LogSumExpTree;
use crate::nets::policy::{gaussian_log_prob, log_prob_partials, reparam_partials};
use crate::nets::{CriticEnsemble, GaussianPolicy, Net, PolicyGrad};

/// `mean(q) − λ/(n²−n) · Σ_{i≠j} |q_i − q_j|`.
pub fn ensemble_aggregate(q: &[f64], lambda: f64) -> Result<f64> {
    let n = q.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "ensemble aggregate needs at least 2 values, got {n}"
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "pessimism must be >= 0, got {lambda}"
        )));
    }
    Ok(aggregate_unchecked(q, lambda))
}

// Uses Σ_{i≠j} |q_i − q_j| = 2 Σ_k (2k − n + 1) q_(k) over the sorted values,
// which makes the n = 2, λ = 1/2 case the exact minimum.
fn aggregate_unchecked(q: &[f64], lambda: f64) -> f64 {
    let n = q.len() as f64;
    if lambda == 0.0 {
        return q.iter().sum::<f64>() / n;
    }
    let mut sorted = q.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scale = 2.0 * lambda / (n * n - n);
    sorted
        .iter()
        .enumerate()
        .map(|(k, v)| (1.0 / n - scale * (2.0 * k as f64 - n + 1.0)) * v)
        .sum()
}

/// Row-wise [`ensemble_aggregate`] of a `(batch, members)` matrix.
pub fn aggregate_rows(q: ArrayView2<f64>, lambda: f64) -> Result<Array1<f64>> {
    if q.ncols() < 2 {
        return Err(Error::invalid(format!(
            "ensemble aggregate needs at least 2 members, got {}",
            q.ncols()
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "pessimism must be >= 0, got {lambda}"
        )));
    }
    Ok(q.rows()
        .into_iter()
        .map(|r| aggregate_unchecked(&r.to_vec(), lambda))
        .collect())
}

/// `r + γ(1 − d) v`.
pub fn bootstrap(
    rewards: ArrayView1<f64>,
    terminals: ArrayView1<f64>,
    gamma: f64,
    next_value: ArrayView1<f64>,
) -> Array1<f64> {
    let mut y = rewards.to_owned();
    for ((y, &d), &v) in y.iter_mut().zip(terminals).zip(next_value) {
        *y += gamma * (1.0 - d) * v;
    }
    y
}

/// TD targets through the target ensemble at `a' = clip(μ(s') + σ z)`.
pub fn td_target_with_noise(
    batch: &Batch,
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    gamma: f64,
    lambda: f64,
    noise: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let next_actions = policy.act_with_noise(batch.next_states.view(), noise)?;
    let q = critics.q_all_target(batch.next_states.view(), next_actions.view())?;
    let v = aggregate_rows(q.view(), lambda)?;
    Ok(bootstrap(
        batch.rewards.view(),
        batch.terminals.view(),
        gamma,
        v.view(),
    ))
}

pub fn td_target<R: Rng + ?Sized>(
    batch: &Batch,
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    gamma: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let noise = policy.standard_noise(batch.len(), rng);
    td_target_with_noise(batch, policy, critics, gamma, lambda, noise.view())
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    /// One parameter gradient per ensemble member.
    pub grads: Vec<Vec<f64>>,
}

/// Mean over batch and members of `(Q_i(s, a) − y)²`.
pub fn critic_loss(
    critics: &CriticEnsemble,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<CriticLoss> {
    let b = states.nrows();
    if b == 0 || y.len() != b {
        return Err(Error::invalid(format!(
            "critic loss needs matching non-empty batch, got {b} rows and {} targets",
            y.len()
        )));
    }
    let scale = 1.0 / (b * critics.len()) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(critics.len());
    for i in 0..critics.len() {
        let (q, tape) = critics.q_tape(i, states, actions)?;
        let err = &q - &y;
        loss += err.mapv(|e| e * e).sum() * scale;
        let up = err.mapv(|e| 2.0 * e * scale);
        grads.push(critics.q_backward(i, &tape, up.view())?.0);
    }
    Ok(CriticLoss { loss, grads })
}

/// `min(Q₁(s,a) − mean_k Q₁(s, a'_k), A_max)` with `a'_k = clip(μ(s) + σ z_k)`.
pub fn advantage_with_noise(
    critics: &CriticEnsemble,
    policy: &GaussianPolicy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    noise: &[Array2<f64>],
    adv_max: Option<f64>,
) -> Result<Array1<f64>> {
    if noise.is_empty() {
        return Err(Error::invalid(
            "advantage baseline needs at least one action sample",
        ));
    }
    let q = critics.q(0, states, actions)?;
    let mu = policy.raw_mean(states)?;
    let mut baseline = Array1::<f64>::zeros(states.nrows());
    for z in noise {
        let a = policy.actions_from_mean(mu.view(), z.view());
        baseline += &critics.q(0, states, a.view())?;
    }
    baseline /= noise.len() as f64;
    let mut adv = q - baseline;
    if let Some(m) = adv_max {
        adv.mapv_inplace(|a| a.min(m));
    }
    Ok(adv)
}

pub fn advantage<R: Rng + ?Sized>(
    critics: &CriticEnsemble,
    policy: &GaussianPolicy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    samples: usize,
    adv_max: Option<f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let noise: Vec<Array2<f64>> = (0..samples)
        .map(|_| policy.standard_noise(states.nrows(), rng))
        .collect();
    advantage_with_noise(critics, policy, states, actions, &noise, adv_max)
}

/// Self-normalized importance weights `softmax(A / β)`, shifted by the max.
pub fn wis_weights(adv: ArrayView1<f64>, beta: f64) -> Array1<f64> {
    let m = adv.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
    let e = adv.mapv(|a| ((a - m) / beta).exp());
    let z = e.sum();
    e / z
}

/// Weighted-importance-sampling actor loss `−Σ_i w_i log π(a_i|s_i)`.
pub fn awac_actor_loss(
    policy: &GaussianPolicy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    adv: ArrayView1<f64>,
    beta: f64,
) -> Result<(f64, PolicyGrad)> {
    if states.nrows() == 0 || adv.len() != states.nrows() {
        return Err(Error::invalid(
            "actor loss needs a non-empty batch with one advantage per row",
        ));
    }
    let w = wis_weights(adv, beta);
    policy.weighted_log_prob_grad(states, actions, (-w).view())
}

/// `−mean_i[Q₁(s_i, ã_i) + α Q̄ log π(a_i|s_i)]` with `ã_i = clip(μ(s_i) + σ z_i)`
/// and `Q̄ = mean_i |Q₁(s_i, ã_i)|` held constant. Gradient is w.r.t. the policy.
pub fn td3bc_actor_loss(
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    alpha: f64,
    noise: ArrayView2<f64>,
) -> Result<(f64, PolicyGrad)> {
    td3bc_actor_loss_scaled(policy, critics, states, actions, alpha, noise, None)
}

/// [`td3bc_actor_loss`] with the behavior-cloning scale `Q̄` supplied by the
/// caller instead of measured on the batch.
pub fn td3bc_actor_loss_scaled(
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    alpha: f64,
    noise: ArrayView2<f64>,
    qbar: Option<f64>,
) -> Result<(f64, PolicyGrad)> {
    let b = states.nrows();
    if b == 0 || actions.nrows() != b || noise.dim() != (b, policy.action_dim()) {
        return Err(Error::invalid(
            "actor loss needs matching non-empty states, actions and noise",
        ));
    }
    let inv_b = 1.0 / b as f64;
    let (mu, tape) = policy.mean_tape(states)?;
    let policy_actions = policy.actions_from_mean(mu.view(), noise);
    let (q, qtape) = critics.q_tape(0, states, policy_actions.view())?;
    let qbar = qbar.unwrap_or_else(|| q.mapv(f64::abs).mean().unwrap_or(0.0));
    let mut loss = -q.sum() * inv_b;
    let up = Array1::from_elem(b, -inv_b);
    let (_, da) = critics.q_backward(0, &qtape, up.view())?;
    let (mut dmu, mut dls) = reparam_partials(mu.view(), policy.log_std(), noise, da.view());
    if alpha != 0.0 {
        let c = -alpha * qbar * inv_b;
        let logp = gaussian_log_prob(mu.view(), policy.log_std(), actions);
        loss += c * logp.sum();
        let coeffs = Array1::from_elem(b, c);
        let (dmu_bc, dls_bc) =
            log_prob_partials(mu.view(), policy.log_std(), actions, coeffs.view());
        dmu += &dmu_bc;
        for (a, g) in dls.iter_mut().zip(dls_bc) {
            *a += g;
        }
    }
    let mean = policy.mean_backward(&tape, dmu.view())?;
    Ok((loss, PolicyGrad { mean, log_std: dls }))
}

/// `|τ − 1(u < 0)| · u²`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

pub fn expectile_grad(u: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(u, tau) * u
}

fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// `mean_i L_τ(target_i − V(s_i))` and its gradient w.r.t. the value net.
pub fn value_loss(
    value: &Net,
    states: ArrayView2<f64>,
    target: ArrayView1<f64>,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let b = states.nrows();
    if b == 0 || target.len() != b {
        return Err(Error::invalid(
            "value loss needs a non-empty batch with one target per row",
        ));
    }
    let (v, tape) = value.forward_tape(states)?;
    let u = &target - &v.column(0);
    let inv_b = 1.0 / b as f64;
    let loss = u.iter().map(|&u| expectile_loss(u, tau)).sum::<f64>() * inv_b;
    let up = u
        .mapv(|u| -expectile_grad(u, tau) * inv_b)
        .insert_axis(Axis(1));
    Ok((loss, value.backward(&tape, up.view())?.params))
}

/// Hyper-parameters consumed by [`iql_losses`].
#[derive(Debug, Clone, Copy)]
pub struct IqlParams {
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub adv_max: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IqlLosses {
    pub value_loss: f64,
    pub value_grad: Vec<f64>,
    pub critic: CriticLoss,
    pub targets: Array1<f64>,
    pub advantages: Array1<f64>,
    /// Present when the actor term was requested.
    pub actor: Option<(f64, PolicyGrad)>,
}

/// Value, critic and (optionally) actor losses of implicit Q-learning.
///
/// Critics are only evaluated at the batch's dataset actions.
pub fn iql_losses(
    batch: &Batch,
    value: &Net,
    critics: &CriticEnsemble,
    policy: &GaussianPolicy,
    p: IqlParams,
    with_actor: bool,
) -> Result<IqlLosses> {
    let s = batch.states.view();
    let a = batch.actions.view();
    let q_target = aggregate_rows(critics.q_all_target(s, a)?.view(), p.lambda)?;
    let (value_loss, value_grad) = value_loss(value, s, q_target.view(), p.tau)?;
    let v_next = value
        .forward(batch.next_states.view())?
        .column(0)
        .to_owned();
    let targets = bootstrap(
        batch.rewards.view(),
        batch.terminals.view(),
        p.gamma,
        v_next.view(),
    );
    let critic = critic_loss(critics, s, a, targets.view())?;
    let v = value.forward(s)?.column(0).to_owned();
    let mut advantages = q_target - v;
    if let Some(m) = p.adv_max {
        advantages.mapv_inplace(|x| x.min(m));
    }
    let actor = if with_actor {
        Some(awac_actor_loss(policy, s, a, advantages.view(), p.beta)?)
    } else {
        None
    };
    Ok(IqlLosses {
        value_loss,
        value_grad,
        critic,
        targets,
        advantages,
        actor,
    })
}

/// Leaf logit of the advantage-sampling distribution, `min(A, A_max) / β`.
pub fn asac_tree_logit(adv: f64, beta: f64, adv_max: Option<f64>) -> f64 {
    let a = match adv_max {
        Some(m) => adv.min(m),
        None => adv,
    };
    a / beta
}

/// Writes fresh logits for `indices`; every other leaf keeps its old value.
pub fn asac_refresh(
    tree: &mut LogSumExpTree,
    indices: &[usize],
    advantages: ArrayView1<f64>,
    beta: f64,
    adv_max: Option<f64>,
) -> Result<()> {
    if indices.len() != advantages.len() {
        return Err(Error::invalid(
            "one advantage per refreshed index is required",
        ));
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {beta}"
        )));
    }
    for (&i, &a) in indices.iter().zip(advantages) {
        tree.set_logit(i, asac_tree_logit(a, beta, adv_max))?;
    }
    Ok(())
}

/// Draws `n` rows from the tree's distribution over dataset indices.
pub fn asac_sample_batch<R: Rng + ?Sized>(
    tree: &LogSumExpTree,
    ds: &Dataset,
    n: usize,
    rng: &mut R,
) -> Result<Batch> {
    let idx = tree.sample_batch(rng, n)?;
    ds.batch(&idx)
}

/// Plain negative log-likelihood `−mean_i log π(a_i|s_i)` on a tree-sampled batch.
pub fn asac_actor_loss(
    policy: &GaussianPolicy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
) -> Result<(f64, PolicyGrad)> {
    let b = states.nrows();
    if b == 0 {
        return Err(Error::invalid("actor loss needs a non-empty batch"));
    }
    let coeffs = Array1::from_elem(b, -1.0 / b as f64);
    policy.weighted_log_prob_grad(states, actions, coeffs.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn aggregate_examples() {
        assert_eq!(ensemble_aggregate(&[1.0, 3.0], 0.5).unwrap(), 1.0);
        assert_eq!(ensemble_aggregate(&[1.0, 3.0, 8.0], 0.0).unwrap(), 4.0);
        assert_eq!(ensemble_aggregate(&[0.0, 0.0, 3.0], 1.0).unwrap(), -1.0);
        assert!(ensemble_aggregate(&[1.0], 0.5).is_err());
        assert!(ensemble_aggregate(&[1.0, 2.0], -0.1).is_err());
        let rows = aggregate_rows(array![[1.0, 3.0], [5.0, 2.0]].view(), 0.5).unwrap();
        assert_eq!(rows, array![1.0, 2.0]);
    }

    #[test]
    fn bootstrap_examples() {
        let y = bootstrap(
            array![1.0, 1.0].view(),
            array![0.0, 1.0].view(),
            0.99,
            array![2.0, 2.0].view(),
        );
        assert_abs_diff_eq!(y[0], 2.98, epsilon = 1e-12);
        assert_eq!(y[1], 1.0);
        let y0 = bootstrap(
            array![0.5].view(),
            array![0.0].view(),
            0.0,
            array![7.0].view(),
        );
        assert_eq!(y0[0], 0.5);
    }

    #[test]
    fn wis_examples() {
        let w = wis_weights(array![0.0, 3f64.ln() * 2.0].view(), 2.0);
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-15);
        let u = wis_weights(array![1.5, 1.5, 1.5, 1.5].view(), 0.3);
        assert!(u.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let big = wis_weights(array![0.0, 10.0].view(), 1e12);
        assert_abs_diff_eq!(big[0], 0.5, epsilon = 1e-9);
        let huge = wis_weights(array![1e6, 0.0].view(), 1.0);
        assert_eq!(huge[0], 1.0);
    }

    #[test]
    fn expectile_examples() {
        assert_abs_diff_eq!(expectile_loss(-1.0, 0.9), 0.1, epsilon = 1e-15);
        for u in [-3.0, -0.5, 0.0, 0.25, 2.0] {
            assert_eq!(expectile_loss(u, 0.5), 0.5 * u * u);
            assert_abs_diff_eq!(
                expectile_loss(u, 0.8) + expectile_loss(-u, 0.8),
                u * u,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn tree_logit_examples() {
        for beta in [0.1, 1.0, 10.0] {
            assert_eq!(asac_tree_logit(0.0, beta, None), 0.0);
        }
        assert_eq!(asac_tree_logit(5.0, 2.0, Some(1.0)), 0.5);
    }
}
