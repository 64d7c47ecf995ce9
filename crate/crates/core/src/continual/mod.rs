//! Continual learners over task sequences: dual behavior cloning with
//! experience replay, and the BC/EWC/SI/GEM/A-GEM baselines.

mod policy;
mod projection;
mod regularize;
mod sequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::Td3BcConfig;
use crate::dynamics::EnsembleConfig;
use crate::error::{Error, Result};
use crate::selection::{SelectionConfig, Selector};

pub use policy::{
    actor_term, bc_gradients, bc_update, dbc_gradients, dbc_update, mse, replay_term, start_task, MultiHeadPolicy,
    PolicyGrads, PolicyOptimizer, UpdateLoss,
};
pub use projection::{project_agem, project_gem};
pub use regularize::{
    ewc_gradient, ewc_penalty, fisher_diagonal, si_gradient, si_penalty, EwcAnchor, EwcConfig, RegularizerState,
    SiConfig, SiState,
};
pub use sequence::{learn_multitask, learn_task_sequence, SequenceOutcome, SequenceRunner, SequenceState};

/// How the continual policy is trained on each task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Clone the per-task solo policy and replay earlier buffers.
    Dbc,
    /// Plain sequential fine-tuning.
    None,
    /// TD3+BC on the new task plus a cloning term on earlier buffers.
    Bc,
    Ewc,
    Si,
    Gem,
    Agem,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dbc,
        Method::None,
        Method::Bc,
        Method::Ewc,
        Method::Si,
        Method::Gem,
        Method::Agem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dbc => "dbc",
            Method::None => "none",
            Method::Bc => "bc",
            Method::Ewc => "ewc",
            Method::Si => "si",
            Method::Gem => "gem",
            Method::Agem => "agem",
        }
    }

    /// Whether earlier buffers feed the updates.
    pub fn uses_buffers(self) -> bool {
        matches!(self, Method::Dbc | Method::Bc | Method::Gem | Method::Agem)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownTag {
                kind: "method",
                tag: s.into(),
            })
    }
}

/// Prefactor of the replay sum at task `n` (one-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayScale {
    /// `λ_r / n`.
    #[default]
    TaskCount,
    /// `λ_r / (n − 1)`, a plain mean over the buffers.
    BufferCount,
}

impl ReplayScale {
    pub fn factor(self, lambda_r: f64, n: usize) -> f64 {
        match self {
            ReplayScale::TaskCount => lambda_r / n as f64,
            ReplayScale::BufferCount => lambda_r / (n.saturating_sub(1)).max(1) as f64,
        }
    }
}

/// Everything a task-sequence run needs besides data and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub lambda_r: f64,
    pub steps: usize,
    pub capacity: usize,
    pub selector: Selector,
    pub method: Method,
    pub eval_episodes: usize,
    pub replay_scale: ReplayScale,
    /// Keep the shared trunk fixed (diagnostic).
    pub freeze_trunk: bool,
    pub td3bc: Td3BcConfig,
    pub ensemble: EnsembleConfig,
    /// Ensemble steps per task; defaults to `steps`.
    pub ensemble_steps: Option<usize>,
    pub selection: SelectionConfig,
    pub ewc: EwcConfig,
    pub si: SiConfig,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            steps: 10_000,
            capacity: 1000,
            selector: Selector::Mbes,
            method: Method::Dbc,
            eval_episodes: 10,
            replay_scale: ReplayScale::TaskCount,
            freeze_trunk: false,
            td3bc: Td3BcConfig::default(),
            ensemble: EnsembleConfig::default(),
            ensemble_steps: None,
            selection: SelectionConfig::default(),
            ewc: EwcConfig::default(),
            si: SiConfig::default(),
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return bad(format!("lambda_r must be a finite value >= 0, got {}", self.lambda_r));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.capacity == 0 {
            return bad("capacity must be >= 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be >= 1".into());
        }
        if !(self.ewc.strength >= 0.0 && self.si.strength >= 0.0 && self.si.damping > 0.0) {
            return bad("regularizer strengths must be >= 0 and SI damping > 0".into());
        }
        if self.ewc.samples == 0 {
            return bad("ewc.samples must be >= 1".into());
        }
        self.td3bc.validate()?;
        self.ensemble.validate()
    }

    pub fn ensemble_steps(&self) -> usize {
        self.ensemble_steps.unwrap_or(self.steps)
    }
}
