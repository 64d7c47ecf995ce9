//! Parameter-anchoring regularizers (EWC, SI).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{MultiHeadPolicy, PolicyGrads};
use crate::agent::TransitionTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EwcConfig {
    pub strength: f64,
    /// Per-sample gradients used for the Fisher diagonal.
    pub samples: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            strength: 100.0,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiConfig {
    pub strength: f64,
    pub damping: f64,
}

impl Default for SiConfig {
    fn default() -> Self {
        Self {
            strength: 1.0,
            damping: 0.1,
        }
    }
}

/// Anchor and Fisher diagonal recorded after one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcAnchor {
    pub params: Vec<f32>,
    pub fisher: Vec<f32>,
}

/// Synaptic-intelligence importances and the running path integral.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SiState {
    pub omega: Vec<f32>,
    pub anchor: Vec<f32>,
    /// `Σ −g·Δθ` over the current task.
    pub path: Vec<f64>,
    /// Parameters at the start of the current task.
    pub start: Vec<f32>,
}

/// Consolidated state of the anchoring regularizers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegularizerState {
    pub ewc: Vec<EwcAnchor>,
    pub si: SiState,
}

impl RegularizerState {
    pub fn ewc_consolidated(&self) -> bool {
        !self.ewc.is_empty()
    }

    pub fn si_consolidated(&self) -> bool {
        !self.si.anchor.is_empty()
    }
}

fn check_prefix(params: &[f32], anchor: &[f32]) -> Result<()> {
    if anchor.len() > params.len() {
        return Err(Error::Shape {
            context: "regularizer anchor",
            expected: params.len(),
            got: anchor.len(),
        });
    }
    Ok(())
}

/// `Σ_tasks Σ_i (c/2)·F_i·(θ_i − θ*_i)²` over each anchor's prefix of `θ`.
pub fn ewc_penalty(params: &[f32], anchors: &[EwcAnchor], strength: f64) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("EWC penalty before any consolidation".into()));
    }
    let mut total = 0.0;
    for a in anchors {
        check_prefix(params, &a.params)?;
        for ((p, s), f) in params.iter().zip(&a.params).zip(&a.fisher) {
            let d = (*p - *s) as f64;
            total += *f as f64 * d * d;
        }
    }
    Ok(0.5 * strength * total)
}

/// `∂/∂θ` of [`ewc_penalty`], sized to the longest anchor.
pub fn ewc_gradient(params: &[f32], anchors: &[EwcAnchor], strength: f64) -> Result<Vec<f32>> {
    let len = anchors.iter().map(|a| a.params.len()).max().unwrap_or(0);
    let mut g = vec![0.0f64; len];
    for a in anchors {
        check_prefix(params, &a.params)?;
        for (i, ((p, s), f)) in params.iter().zip(&a.params).zip(&a.fisher).enumerate() {
            g[i] += strength * *f as f64 * (*p - *s) as f64;
        }
    }
    Ok(g.into_iter().map(|v| v as f32).collect())
}

/// `c·Σ_i ω_i·(θ_i − θ*_i)²`.
pub fn si_penalty(params: &[f32], si: &SiState, strength: f64) -> Result<f64> {
    if si.anchor.is_empty() {
        return Err(Error::InvalidArgument("SI penalty before any consolidation".into()));
    }
    check_prefix(params, &si.anchor)?;
    let total: f64 = params
        .iter()
        .zip(&si.anchor)
        .zip(&si.omega)
        .map(|((p, s), w)| {
            let d = (*p - *s) as f64;
            *w as f64 * d * d
        })
        .sum();
    Ok(strength * total)
}

pub fn si_gradient(params: &[f32], si: &SiState, strength: f64) -> Result<Vec<f32>> {
    check_prefix(params, &si.anchor)?;
    Ok(params
        .iter()
        .zip(&si.anchor)
        .zip(&si.omega)
        .map(|((p, s), w)| (2.0 * strength * *w as f64 * (*p - *s) as f64) as f32)
        .collect())
}

/// Diagonal Fisher of head `j` from per-sample gradients of `‖π_j(s) − a‖²`
/// over `samples` transitions drawn uniformly from `table`.
pub fn fisher_diagonal<R: Rng + ?Sized>(
    policy: &MultiHeadPolicy,
    j: usize,
    table: &TransitionTable,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    if samples == 0 || table.len == 0 {
        return Err(Error::InvalidArgument("Fisher estimate needs samples".into()));
    }
    let mut acc = vec![0.0f64; policy.param_count()];
    for _ in 0..samples {
        let b = table.sample(1, rng);
        let mut g = PolicyGrads::zeros(policy);
        policy.accumulate_mse(j, &b.states, &b.actions, 1, 1.0, &mut g)?;
        for (a, v) in acc.iter_mut().zip(g.flat(policy)) {
            *a += v * v;
        }
    }
    Ok(acc.into_iter().map(|v| (v / samples as f64) as f32).collect())
}

impl SiState {
    /// Starts path tracking for a task at parameters `params`.
    pub fn begin_task(&mut self, params: &[f32]) {
        self.start = params.to_vec();
        self.path = vec![0.0; params.len()];
    }

    /// Accumulates `−g·(θ_new − θ_old)` for one optimizer step, where `g` is
    /// the task-loss gradient taken at `θ_old`.
    pub fn record_step(&mut self, grad: &[f64], before: &[f32], after: &[f32]) -> Result<()> {
        crate::error::check_len("SI path", self.path.len(), grad.len())?;
        for (((p, g), b), a) in self.path.iter_mut().zip(grad).zip(before).zip(after) {
            *p -= g * (*a - *b) as f64;
        }
        Ok(())
    }

    /// Converts the path integral into importances and re-anchors at `params`.
    pub fn consolidate(&mut self, params: &[f32], damping: f64) -> Result<()> {
        crate::error::check_len("SI consolidation", self.start.len(), params.len())?;
        self.omega.resize(params.len(), 0.0);
        for i in 0..params.len() {
            let d = (params[i] - self.start[i]) as f64;
            let w = (self.path[i] / (d * d + damping)).max(0.0);
            self.omega[i] += w as f32;
        }
        self.anchor = params.to_vec();
        self.path.iter_mut().for_each(|p| *p = 0.0);
        Ok(())
    }
}
