//! Synthetic multi-task offline datasets.
//!
//! Data is collected on [`ToyEnv`] with scripted or random behavior policies,
//! can be relabeled for any task of the same environment, and merged into
//! mixed-objective collections. Values are stored in `f64` but quantized
//! through `f32` on construction so that the on-disk format round-trips
//! exactly.

mod env;
mod io;

use std::ops::Range;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use env::{reward, Controller, EnvId, Task, ToyEnv, GOAL_DISTANCE};
pub use io::{load, read_from, save, write_to, MAGIC};

use crate::error::{Error, Result};

pub const DEFAULT_NOISE_STD: f64 = 0.2;

#[inline]
fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub env: EnvId,
    /// Names of the behavior sources, e.g. `["reach-east", "random"]`.
    pub source_tasks: Vec<String>,
    pub target_task: Task,
    /// Highest undiscounted return over the contained trajectories.
    pub max_return: f64,
}

/// Column data before validation; every array has one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub terminals: Vec<bool>,
    pub episode_starts: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    cols: Columns,
}

/// A minibatch of transitions gathered by row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 where the transition is terminal.
    pub terminals: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl Dataset {
    /// Validates and quantizes `cols`; the normalization target is recomputed.
    pub fn new(
        env: EnvId,
        source_tasks: Vec<String>,
        target_task: Task,
        mut cols: Columns,
    ) -> Result<Self> {
        env.check_task(target_task)?;
        let n = cols.rewards.len();
        let (sd, ad) = (env.state_dim(), env.action_dim());
        let shapes_ok = cols.states.dim() == (n, sd)
            && cols.next_states.dim() == (n, sd)
            && cols.actions.dim() == (n, ad)
            && cols.terminals.len() == n
            && cols.episode_starts.len() == n;
        if !shapes_ok {
            return Err(Error::invalid(format!(
                "column shapes do not match {n} rows of {env} (state {sd}, action {ad})"
            )));
        }
        if n > 0 && !cols.episode_starts[0] {
            return Err(Error::invalid("first row must start an episode"));
        }
        for a in cols
            .states
            .iter_mut()
            .chain(cols.next_states.iter_mut())
            .chain(cols.rewards.iter_mut())
        {
            if !a.is_finite() {
                return Err(Error::invalid("dataset values must be finite"));
            }
            *a = quantize(*a);
        }
        for a in cols.actions.iter_mut() {
            if !(-1.0..=1.0).contains(a) {
                return Err(Error::invalid(format!("action {a} outside [-1, 1]")));
            }
            *a = quantize(*a);
        }
        let mut ds = Self {
            meta: DatasetMeta {
                env,
                source_tasks,
                target_task,
                max_return: 0.0,
            },
            cols,
        };
        ds.meta.max_return = ds.recompute_max_return();
        Ok(ds)
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn columns(&self) -> &Columns {
        &self.cols
    }

    pub fn env(&self) -> EnvId {
        self.meta.env
    }

    pub fn target_task(&self) -> Task {
        self.meta.target_task
    }

    pub fn max_return(&self) -> f64 {
        self.meta.max_return
    }

    pub fn len(&self) -> usize {
        self.cols.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.cols.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.cols.actions.ncols()
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.cols.states
    }

    pub fn actions(&self) -> &Array2<f64> {
        &self.cols.actions
    }

    pub fn rewards(&self) -> ArrayView1<'_, f64> {
        self.cols.rewards.view()
    }

    pub fn next_states(&self) -> &Array2<f64> {
        &self.cols.next_states
    }

    pub fn terminals(&self) -> &[bool] {
        &self.cols.terminals
    }

    pub fn episode_starts(&self) -> &[bool] {
        &self.cols.episode_starts
    }

    /// Row ranges of the contained trajectories.
    pub fn episodes(&self) -> Vec<Range<usize>> {
        let starts = &self.cols.episode_starts;
        let mut out = Vec::new();
        let mut begin = 0;
        for (i, _) in starts.iter().enumerate().skip(1).filter(|(_, &s)| s) {
            out.push(begin..i);
            begin = i;
        }
        if !starts.is_empty() {
            out.push(begin..starts.len());
        }
        out
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes()
            .into_iter()
            .map(|r| self.cols.rewards.slice(ndarray::s![r]).sum())
            .collect()
    }

    /// Maximum trajectory return (0 for an empty dataset).
    pub fn recompute_max_return(&self) -> f64 {
        self.episode_returns().into_iter().fold(0.0, f64::max)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "row {bad} out of range for {} rows",
                self.len()
            )));
        }
        let c = &self.cols;
        Ok(Batch {
            indices: indices.to_vec(),
            states: c.states.select(Axis(0), indices),
            actions: c.actions.select(Axis(0), indices),
            rewards: c.rewards.select(Axis(0), indices),
            next_states: c.next_states.select(Axis(0), indices),
            terminals: indices
                .iter()
                .map(|&i| if c.terminals[i] { 1.0 } else { 0.0 })
                .collect(),
        })
    }

    /// `n` rows drawn uniformly with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::invalid("cannot sample from an empty dataset"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        self.batch(&idx)
    }
}

/// Rolls out `controller` with additive Gaussian action noise (clipped to the
/// box). Rewards are labeled for `env.task`.
pub fn generate_dataset(
    env: &ToyEnv,
    controller: Controller,
    episodes: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_std must be finite and >= 0, got {noise_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("validated above");
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let rows = episodes * env.horizon;
    let mut states = Vec::with_capacity(rows * sd);
    let mut actions = Vec::with_capacity(rows * ad);
    let mut next_states = Vec::with_capacity(rows * sd);
    let mut rewards = Vec::with_capacity(rows);
    let mut terminals = Vec::with_capacity(rows);
    let mut starts = Vec::with_capacity(rows);

    for _ in 0..episodes {
        let mut s: Vec<f64> = env.reset(&mut rng).into_iter().map(quantize).collect();
        for t in 0..env.horizon {
            let a: Vec<f64> = controller
                .act(env.id, &s, &mut rng)
                .into_iter()
                .map(|a| quantize((a + noise.sample(&mut rng)).clamp(-1.0, 1.0)))
                .collect();
            let (next, _, term) = env.step(&s, &a)?;
            let next: Vec<f64> = next.into_iter().map(quantize).collect();
            // label on the stored (quantized) values so relabeling is idempotent
            let r = reward(env.id, env.task, &s, &a, &next);
            states.extend_from_slice(&s);
            actions.extend_from_slice(&a);
            next_states.extend_from_slice(&next);
            rewards.push(r);
            terminals.push(term);
            starts.push(t == 0);
            s = next;
            if term {
                break;
            }
        }
    }
    let n = rewards.len();
    let cols = Columns {
        states: Array2::from_shape_vec((n, sd), states).expect("row-major states"),
        actions: Array2::from_shape_vec((n, ad), actions).expect("row-major actions"),
        rewards: Array1::from(rewards),
        next_states: Array2::from_shape_vec((n, sd), next_states).expect("row-major next states"),
        terminals,
        episode_starts: starts,
    };
    Dataset::new(env.id, vec![controller.name()], env.task, cols)
}

/// Recomputes every reward for `target`; everything else is kept.
pub fn relabel(ds: &Dataset, target: Task) -> Result<Dataset> {
    let env = ds.env();
    env.check_task(target)?;
    let c = &ds.cols;
    let rewards: Array1<f64> = (0..ds.len())
        .map(|i| {
            reward(
                env,
                target,
                c.states.row(i).as_slice().expect("standard layout"),
                c.actions.row(i).as_slice().expect("standard layout"),
                c.next_states.row(i).as_slice().expect("standard layout"),
            )
        })
        .collect();
    let cols = Columns {
        rewards,
        ..c.clone()
    };
    Dataset::new(env, ds.meta.source_tasks.clone(), target, cols)
}

/// Concatenates datasets that share environment and target task.
pub fn merge(datasets: &[Dataset]) -> Result<Dataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::invalid("merge needs at least one dataset"))?;
    for d in &datasets[1..] {
        if d.env() != first.env() {
            return Err(Error::invalid(format!(
                "cannot merge {} with {} data",
                first.env(),
                d.env()
            )));
        }
        if d.state_dim() != first.state_dim() || d.action_dim() != first.action_dim() {
            return Err(Error::invalid(
                "cannot merge datasets with different dimensions",
            ));
        }
        if d.target_task() != first.target_task() {
            return Err(Error::invalid(format!(
                "cannot merge data labeled for {} with data labeled for {}; relabel first",
                first.target_task(),
                d.target_task()
            )));
        }
    }
    let stack2 = |f: fn(&Columns) -> &Array2<f64>| {
        let views: Vec<_> = datasets.iter().map(|d| f(&d.cols).view()).collect();
        concatenate(Axis(0), &views).expect("matching widths")
    };
    let rewards_views: Vec<_> = datasets.iter().map(|d| d.cols.rewards.view()).collect();
    let mut sources: Vec<String> = Vec::new();
    for d in datasets {
        for s in &d.meta.source_tasks {
            if !sources.contains(s) {
                sources.push(s.clone());
            }
        }
    }
    let cols = Columns {
        states: stack2(|c| &c.states),
        actions: stack2(|c| &c.actions),
        rewards: concatenate(Axis(0), &rewards_views).expect("1-d"),
        next_states: stack2(|c| &c.next_states),
        terminals: datasets
            .iter()
            .flat_map(|d| d.cols.terminals.iter().copied())
            .collect(),
        episode_starts: datasets
            .iter()
            .flat_map(|d| d.cols.episode_starts.iter().copied())
            .collect(),
    };
    Dataset::new(first.env(), sources, first.target_task(), cols)
}

/// `100 · episode_return / max_return`.
pub fn normalize_score(episode_return: f64, ds: &Dataset) -> Result<f64> {
    let m = ds.max_return();
    if m.is_nan() || m <= 0.0 {
        return Err(Error::invalid(format!(
            "normalization target must be positive, got {m}"
        )));
    }
    Ok(100.0 * episode_return / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reach_east(episodes: usize, noise: f64, seed: u64) -> Dataset {
        let env = ToyEnv::new(EnvId::Pointmass2d, Task::ReachEast).unwrap();
        generate_dataset(
            &env,
            Controller::scripted(Task::ReachEast),
            episodes,
            noise,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_reach_east_reaches_the_goal() {
        let ds = reach_east(20, 0.0, 3);
        for ep in ds.episodes() {
            let last = ds.next_states().row(ep.end - 1);
            let d = ((last[0] - GOAL_DISTANCE).powi(2) + last[1].powi(2)).sqrt();
            assert!(d < 0.1, "final distance {d}");
        }
    }

    #[test]
    fn random_behavior_earns_less() {
        let env = ToyEnv::new(EnvId::Pointmass2d, Task::ReachEast).unwrap();
        let scripted = reach_east(20, DEFAULT_NOISE_STD, 4);
        let random = generate_dataset(&env, Controller::Random, 20, DEFAULT_NOISE_STD, 4).unwrap();
        assert!(random.rewards().mean().unwrap() < scripted.rewards().mean().unwrap());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(reach_east(3, 0.2, 9), reach_east(3, 0.2, 9));
        assert_ne!(reach_east(3, 0.2, 9), reach_east(3, 0.2, 10));
    }

    #[test]
    fn relabel_same_task_is_identity() {
        let ds = reach_east(5, 0.2, 1);
        assert_eq!(relabel(&ds, Task::ReachEast).unwrap(), ds);
    }

    #[test]
    fn relabel_to_opposite_goal_lowers_rewards() {
        let ds = reach_east(5, 0.2, 1);
        let west = relabel(&ds, Task::ReachWest).unwrap();
        assert!(west.rewards().mean().unwrap() < ds.rewards().mean().unwrap());
        assert_eq!(west.states(), ds.states());
        assert_eq!(west.actions(), ds.actions());
        assert_eq!(west.next_states(), ds.next_states());
        assert_eq!(west.episode_starts(), ds.episode_starts());
        assert_eq!(west.target_task(), Task::ReachWest);
        assert!(relabel(&ds, Task::Spin).is_ok());
    }

    #[test]
    fn relabel_rejects_foreign_task() {
        let env = ToyEnv::new(EnvId::Line1d, Task::Stand).unwrap();
        let ds = generate_dataset(&env, Controller::Random, 1, 0.0, 0).unwrap();
        assert!(relabel(&ds, Task::ReachNorth).is_err());
    }

    #[test]
    fn merge_properties() {
        let a = reach_east(3, 0.2, 1);
        assert_eq!(merge(std::slice::from_ref(&a)).unwrap(), a);
        let env = ToyEnv::new(EnvId::Pointmass2d, Task::ReachWest).unwrap();
        let b = generate_dataset(&env, Controller::scripted(Task::ReachWest), 4, 0.2, 2).unwrap();
        let b = relabel(&b, Task::ReachEast).unwrap();
        let m = merge(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.len(), a.len() + b.len());
        assert_eq!(m.max_return(), a.max_return().max(b.max_return()));
        assert_eq!(m.episodes().len(), a.episodes().len() + b.episodes().len());
        assert_eq!(
            m.meta().source_tasks,
            vec!["reach-east".to_string(), "reach-west".to_string()]
        );
        let unlabeled = generate_dataset(&env, Controller::Random, 1, 0.2, 2).unwrap();
        assert!(merge(&[a, unlabeled]).is_err());
        assert!(merge(&[]).is_err());
    }

    #[test]
    fn normalize_score_examples() {
        let ds = reach_east(3, 0.2, 1);
        let m = ds.max_return();
        assert_eq!(normalize_score(m, &ds).unwrap(), 100.0);
        assert_eq!(normalize_score(0.0, &ds).unwrap(), 0.0);
        assert_eq!(normalize_score(m / 2.0, &ds).unwrap(), 50.0);
        let empty = reach_east(0, 0.2, 1);
        assert!(normalize_score(1.0, &empty).is_err());
    }

    #[test]
    fn constructor_validates() {
        let ds = reach_east(1, 0.2, 1);
        let mut cols = ds.columns().clone();
        cols.actions[[0, 0]] = 1.5;
        assert!(Dataset::new(EnvId::Pointmass2d, vec![], Task::Stand, cols).is_err());
        let mut cols = ds.columns().clone();
        cols.episode_starts[0] = false;
        assert!(Dataset::new(EnvId::Pointmass2d, vec![], Task::Stand, cols).is_err());
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = reach_east(2, 0.2, 1);
        let b = ds.batch(&[3, 0, 3]).unwrap();
        assert_eq!(b.states.row(0), ds.states().row(3));
        assert_eq!(b.rewards[1], ds.rewards()[0]);
        assert!(ds.batch(&[ds.len()]).is_err());
    }
}
