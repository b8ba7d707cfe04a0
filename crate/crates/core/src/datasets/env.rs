//! Toy continuous-control environments: a damped point mass on a line or in
//! the plane, with several reward functions ("tasks") over the same
//! dynamics so that data collected for one task can be relabeled for another.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    Pointmass2d,
    Line1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ReachEast,
    ReachWest,
    ReachNorth,
    Stand,
    Spin,
}

pub const GOAL_DISTANCE: f64 = 0.8;

impl EnvId {
    pub fn dim(self) -> usize {
        match self {
            EnvId::Pointmass2d => 2,
            EnvId::Line1d => 1,
        }
    }

    pub fn state_dim(self) -> usize {
        2 * self.dim()
    }

    pub fn action_dim(self) -> usize {
        self.dim()
    }

    pub fn tasks(self) -> &'static [Task] {
        match self {
            EnvId::Pointmass2d => &[
                Task::ReachEast,
                Task::ReachWest,
                Task::ReachNorth,
                Task::Stand,
                Task::Spin,
            ],
            EnvId::Line1d => &[Task::ReachEast, Task::ReachWest, Task::Stand],
        }
    }

    pub fn supports(self, task: Task) -> bool {
        self.tasks().contains(&task)
    }

    pub fn check_task(self, task: Task) -> Result<()> {
        if !self.supports(task) {
            return Err(Error::invalid(format!(
                "task `{task}` is not defined for `{self}`"
            )));
        }
        Ok(())
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::Pointmass2d => "pointmass2d",
            EnvId::Line1d => "line1d",
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::ReachEast => "reach-east",
            Task::ReachWest => "reach-west",
            Task::ReachNorth => "reach-north",
            Task::Stand => "stand",
            Task::Spin => "spin",
        }
    }

    /// Goal position for reach/stand tasks, padded to `dim` coordinates.
    pub fn goal(self, dim: usize) -> Option<Vec<f64>> {
        let mut g = vec![0.0; dim];
        match self {
            Task::ReachEast => g[0] = GOAL_DISTANCE,
            Task::ReachWest => g[0] = -GOAL_DISTANCE,
            Task::ReachNorth => *g.get_mut(1)? = GOAL_DISTANCE,
            Task::Stand => {}
            Task::Spin => return None,
        }
        Some(g)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass2d" => Ok(EnvId::Pointmass2d),
            "line1d" => Ok(EnvId::Line1d),
            _ => Err(Error::invalid(format!("unknown environment `{s}`"))),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach-east" => Ok(Task::ReachEast),
            "reach-west" => Ok(Task::ReachWest),
            "reach-north" => Ok(Task::ReachNorth),
            "stand" => Ok(Task::Stand),
            "spin" => Ok(Task::Spin),
            _ => Err(Error::invalid(format!("unknown task `{s}`"))),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-step reward in `[0, 1]`, evaluated on the post-transition state.
pub fn reward(env: EnvId, task: Task, _state: &[f64], _action: &[f64], next_state: &[f64]) -> f64 {
    let d = env.dim();
    let (pos, vel) = next_state.split_at(d);
    match task {
        Task::Spin => {
            if d < 2 {
                return 0.0;
            }
            let l = pos[0] * vel[1] - pos[1] * vel[0];
            l.clamp(0.0, 1.0)
        }
        Task::Stand => (-2.0 * (norm(pos) + norm(vel))).exp(),
        _ => {
            let goal = task.goal(d).expect("reach tasks have goals");
            let dist = pos
                .iter()
                .zip(&goal)
                .map(|(p, g)| (p - g) * (p - g))
                .sum::<f64>()
                .sqrt();
            (-2.0 * dist).exp()
        }
    }
}

/// Damped double integrator. Position and velocity are clipped to
/// `±pos_bound` / `±vel_bound` after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEnv {
    pub id: EnvId,
    pub task: Task,
    pub dt: f64,
    pub damping: f64,
    pub mass: f64,
    pub horizon: usize,
    pub pos_bound: f64,
    pub vel_bound: f64,
    /// Initial positions are uniform in `[-init_spread, init_spread]^d`.
    pub init_spread: f64,
}

impl ToyEnv {
    pub fn new(id: EnvId, task: Task) -> Result<Self> {
        id.check_task(task)?;
        Ok(Self {
            id,
            task,
            dt: 0.1,
            damping: 0.5,
            mass: 1.0,
            horizon: 100,
            pos_bound: 1.0,
            vel_bound: 1.0,
            init_spread: 0.25,
        })
    }

    pub fn with_task(&self, task: Task) -> Result<Self> {
        self.id.check_task(task)?;
        Ok(Self {
            task,
            ..self.clone()
        })
    }

    pub fn state_dim(&self) -> usize {
        self.id.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.id.action_dim()
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.id.dim();
        let mut s = vec![0.0; 2 * d];
        for p in &mut s[..d] {
            *p = rng.random_range(-self.init_spread..=self.init_spread);
        }
        s
    }

    /// Deterministic transition. Returns `(next_state, reward, terminal)`;
    /// the dynamics have no absorbing states, so `terminal` is always false
    /// and episodes end by truncation at `horizon`.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let d = self.id.dim();
        if state.len() != 2 * d || action.len() != d {
            return Err(Error::invalid(format!(
                "{} expects state dim {} and action dim {d}",
                self.id,
                2 * d
            )));
        }
        if state.iter().chain(action).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state and action must be finite"));
        }
        let (pos, vel) = state.split_at(d);
        let mut next = vec![0.0; 2 * d];
        for k in 0..d {
            let a = action[k].clamp(-1.0, 1.0);
            let v = (vel[k] + self.dt * (a / self.mass - self.damping * vel[k]))
                .clamp(-self.vel_bound, self.vel_bound);
            next[d + k] = v;
            next[k] = (pos[k] + self.dt * v).clamp(-self.pos_bound, self.pos_bound);
        }
        let r = reward(self.id, self.task, state, action, &next);
        Ok((next, r, false))
    }
}

/// Behavior policies used to collect data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    /// Proportional-derivative controller solving a task.
    Scripted(Task),
    /// Uniform actions in the box; stands in for exploration-driven data.
    Random,
}

pub const KP: f64 = 4.0;
pub const KD: f64 = 3.5;
const SPIN_RADIUS: f64 = 0.5;

impl Controller {
    pub fn scripted(task: Task) -> Self {
        Controller::Scripted(task)
    }

    pub fn name(&self) -> String {
        match self {
            Controller::Scripted(t) => t.name().to_string(),
            Controller::Random => "random".to_string(),
        }
    }

    /// Noise-free action, clipped to the box.
    pub fn act<R: Rng + ?Sized>(&self, env: EnvId, state: &[f64], rng: &mut R) -> Vec<f64> {
        let d = env.dim();
        let (pos, vel) = state.split_at(d);
        let raw: Vec<f64> = match self {
            Controller::Random => (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            Controller::Scripted(Task::Spin) if d >= 2 => {
                // circle the origin counter-clockwise at SPIN_RADIUS
                let r = norm(pos).max(1e-6);
                let radial = [pos[0] / r, pos[1] / r];
                let tangent = [-radial[1], radial[0]];
                let v_rad = vel[0] * radial[0] + vel[1] * radial[1];
                let v_tan = vel[0] * tangent[0] + vel[1] * tangent[1];
                let a_rad = KP * (SPIN_RADIUS - r) - KD * v_rad;
                let a_tan = 2.0 * (1.0 - v_tan);
                (0..2)
                    .map(|k| a_rad * radial[k] + a_tan * tangent[k])
                    .collect()
            }
            Controller::Scripted(task) => {
                let goal = task.goal(d).unwrap_or_else(|| vec![0.0; d]);
                (0..d)
                    .map(|k| KP * (goal[k] - pos[k]) - KD * vel[k])
                    .collect()
            }
        };
        raw.into_iter().map(|a| a.clamp(-1.0, 1.0)).collect()
    }
}

impl FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(Controller::Random);
        }
        Ok(Controller::Scripted(s.parse()?))
    }
}
