//! Point-mass task families.
//!
//! `PM-Dir` moves a 2-D point mass and rewards velocity along a task
//! direction; `PM-Vel` moves a 1-D point mass and rewards tracking a target
//! speed. All tasks of a family share state and action spaces, `γ` and `H`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "PM-Dir")]
    PmDir,
    #[serde(rename = "PM-Vel")]
    PmVel,
}

impl Family {
    /// Spatial dimension of the point mass.
    pub fn dims(self) -> usize {
        match self {
            Family::PmDir => 2,
            Family::PmVel => 1,
        }
    }

    pub fn state_dim(self) -> usize {
        2 * self.dims()
    }

    pub fn action_dim(self) -> usize {
        self.dims()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::PmDir => "PM-Dir",
            Family::PmVel => "PM-Vel",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PM-Dir" => Ok(Family::PmDir),
            "PM-Vel" => Ok(Family::PmVel),
            _ => Err(Error::UnknownTag {
                kind: "family",
                tag: s.to_string(),
            }),
        }
    }
}

/// One MDP of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub family: Family,
    /// Direction angle (PM-Dir, radians) or target speed (PM-Vel).
    pub param: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub dt: f64,
    pub v_max: f64,
    pub action_bound: f64,
    pub action_cost: f64,
    pub rho0_sigma: f64,
    pub r_max: f64,
}

impl TaskSpec {
    pub fn new(family: Family, param: f64) -> Self {
        Self {
            family,
            param,
            gamma: 0.99,
            horizon: 100,
            dt: 0.05,
            v_max: 2.0,
            action_bound: 1.0,
            action_cost: 0.01,
            rho0_sigma: 0.1,
            r_max: 10.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.family.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.family.action_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("task spec: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if !self.param.is_finite() {
            return bad("task parameter must be finite");
        }
        for (name, v) in [
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("action_bound", self.action_bound),
            ("r_max", self.r_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.action_cost >= 0.0 && self.rho0_sigma >= 0.0) {
            return bad("action_cost and rho0_sigma must be non-negative");
        }
        Ok(())
    }

    /// Unit vector of the task direction (PM-Dir).
    pub fn direction(&self) -> [f64; 2] {
        [self.param.cos(), self.param.sin()]
    }
}

/// Samples `count` tasks of a family. Tasks differ only in `param`.
pub fn sample_tasks(family: &str, count: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let family: Family = family.parse()?;
    if count == 0 {
        return Err(Error::InvalidArgument("task count must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    Ok((0..count)
        .map(|_| {
            let param = match family {
                Family::PmDir => rng.random_range(0.0..TAU),
                Family::PmVel => rng.random_range(0.1..=1.0),
            };
            TaskSpec::new(family, param)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub step: usize,
}

impl EnvState {
    /// Observation vector `[pos | vel]`.
    pub fn observation(&self) -> Vec<f64> {
        let mut o = self.pos.clone();
        o.extend_from_slice(&self.vel);
        o
    }
}

pub fn reset<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> EnvState {
    let d = task.family.dims();
    let pos = if task.rho0_sigma > 0.0 {
        let normal = Normal::new(0.0, task.rho0_sigma).expect("sigma validated");
        (0..d).map(|_| normal.sample(rng)).collect()
    } else {
        vec![0.0; d]
    };
    EnvState {
        pos,
        vel: vec![0.0; d],
        step: 0,
    }
}

/// Reward of landing at velocity `vel` after applying the clipped action.
pub fn reward(task: &TaskSpec, vel: &[f64], action: &[f64]) -> f64 {
    let cost: f64 = task.action_cost * action.iter().map(|a| a * a).sum::<f64>();
    let raw = match task.family {
        Family::PmVel => -(vel[0] - task.param).abs() - cost,
        Family::PmDir => {
            let u = task.direction();
            vel[0] * u[0] + vel[1] * u[1] - cost
        }
    };
    raw.clamp(-task.r_max, task.r_max)
}

/// Advances one step. Returns the next state, reward and terminal flag.
pub fn step(task: &TaskSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64, bool)> {
    let d = task.family.dims();
    if action.len() != d {
        return Err(Error::Shape {
            context: "env action",
            expected: d,
            got: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("env action"));
    }
    if state.step >= task.horizon {
        return Err(Error::InvalidArgument("episode already terminated".into()));
    }
    let b = task.action_bound;
    let a: Vec<f64> = action.iter().map(|x| x.clamp(-b, b)).collect();
    let vel: Vec<f64> = state
        .vel
        .iter()
        .zip(&a)
        .map(|(v, ai)| (v + ai * task.dt).clamp(-task.v_max, task.v_max))
        .collect();
    let pos = state.pos.iter().zip(&vel).map(|(p, v)| p + v * task.dt).collect();
    let r = reward(task, &vel, &a);
    let next = EnvState {
        pos,
        vel,
        step: state.step + 1,
    };
    let done = next.step >= task.horizon;
    Ok((next, r, done))
}

/// Mean undiscounted return of `policy` (observation → action) over
/// `episodes` rollouts.
pub fn evaluate_policy<F>(task: &TaskSpec, mut policy: F, episodes: usize, seed: u64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = reset(task, &mut rng);
        loop {
            let a = policy(&s.observation());
            let (next, r, done) = step(task, &s, &a)?;
            total += r;
            s = next;
            if done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}
