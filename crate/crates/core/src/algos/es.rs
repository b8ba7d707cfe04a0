//! Test-time action selection and policy rollouts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::aggregate_rows;
use crate::datasets::ToyEnv;
use crate::error::{Error, Result};
use crate::nets::{CriticEnsemble, GaussianPolicy};

/// Index of the largest score; the lowest index wins ties.
pub fn es_argmax(scores: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Chooses among `candidates` by the aggregate of the per-member values `q`
/// (`(M, members)`).
pub fn evaluation_sampling_select(q: ArrayView2<f64>, lambda_es: f64) -> Result<usize> {
    if q.nrows() == 0 {
        return Err(Error::invalid(
            "evaluation sampling needs at least one candidate",
        ));
    }
    let agg = aggregate_rows(q, lambda_es)?;
    Ok(es_argmax(agg.view()))
}

/// Samples `m` actions from the policy at `state` and plays the one with the
/// highest aggregate critic value. With `m = 1` this is exactly a policy
/// sample and consumes the rng identically.
pub fn evaluation_sampling_action<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    state: ArrayView1<f64>,
    m: usize,
    lambda_es: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if m < 1 {
        return Err(Error::invalid("evaluation sampling needs M >= 1"));
    }
    let states = tile(state, m);
    let candidates = policy.sample(states.view(), rng)?;
    if m == 1 {
        return Ok(candidates.row(0).to_owned());
    }
    let q = critics.q_all(states.view(), candidates.view())?;
    let k = evaluation_sampling_select(q.view(), lambda_es)?;
    Ok(candidates.row(k).to_owned())
}

/// How a trained agent picks actions during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ActionMode {
    /// The clipped policy mean.
    Mean,
    /// Evaluation sampling over `m` candidates.
    Sampling { m: usize, lambda_es: f64 },
}

fn act<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    state: &[f64],
    mode: ActionMode,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let s = ArrayView1::from(state);
    match mode {
        ActionMode::Mean => Ok(policy.act_mean(s.insert_axis(Axis(0)))?.row(0).to_owned()),
        ActionMode::Sampling { m, lambda_es } => {
            evaluation_sampling_action(policy, critics, s, m, lambda_es, rng)
        }
    }
}

/// Undiscounted returns of `episodes` rollouts; episode `k` uses its own
/// rng seeded from `seed + k`.
pub fn evaluate(
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    env: &ToyEnv,
    episodes: usize,
    mode: ActionMode,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let mut s = env.reset(&mut rng);
            let mut total = 0.0;
            for _ in 0..env.horizon {
                let a = act(policy, critics, &s, mode, &mut rng)?;
                let (next, r, done) = env.step(&s, a.as_slice().expect("contiguous"))?;
                total += r;
                s = next;
                if done {
                    break;
                }
            }
            Ok(total)
        })
        .collect()
}

/// Repeats one state into `rows` rows.
pub fn tile(state: ArrayView1<f64>, rows: usize) -> Array2<f64> {
    state
        .insert_axis(Axis(0))
        .broadcast((rows, state.len()))
        .expect("row broadcast")
        .to_owned()
}
