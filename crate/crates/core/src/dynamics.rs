//! Ensemble transition models `P̂_n` and the variance rule that decides
//! whether a model prediction is trusted during experience selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dataset_stats, Normalizer, OfflineDataset};
use crate::error::{check_len, Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Gradients, Mlp};
use crate::rng::{self, derive_seed};

/// Mean next state and per-dimension variance across members.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Prediction {
    /// Sum of per-dimension variances.
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}

/// Anything that predicts next states with an uncertainty estimate.
pub trait DynamicsModel {
    fn predict(&self, state: &[f32], action: &[f32]) -> Result<Prediction>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    /// Each member trains on its own bootstrap resample of the dataset.
    pub bootstrap: bool,
    /// All members start from the same initialization and batch stream.
    pub shared_init: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![128, 128],
            lr: 1e-3,
            batch_size: 256,
            bootstrap: true,
            shared_init: false,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::InvalidArgument("ensemble needs at least 2 members".into()));
        }
        if self.hidden.contains(&0) || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(
                "ensemble hidden/batch/lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// K member networks mapping `[normalized s | a]` to scaled `Δs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsEnsemble {
    pub members: Vec<Mlp<f32>>,
    pub normalizer: Normalizer,
    /// Output of member networks is `Δs / delta_scale`.
    pub delta_scale: Vec<f32>,
}

impl DynamicsEnsemble {
    pub fn from_members(members: Vec<Mlp<f32>>, normalizer: Normalizer, delta_scale: Vec<f32>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidArgument("ensemble needs at least 2 members".into()));
        }
        let sd = normalizer.dim();
        check_len("ensemble delta scale", sd, delta_scale.len())?;
        for m in &members {
            if !m.is_congruent(&members[0]) {
                return Err(Error::InvalidArgument("ensemble members must share dims".into()));
            }
            check_len("ensemble member output", sd, m.output_dim())?;
        }
        Ok(Self {
            members,
            normalizer,
            delta_scale,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.members[0].input_dim() - self.state_dim()
    }

    fn input(&self, state: &[f32], action: &[f32]) -> Result<Vec<f32>> {
        check_len("ensemble state", self.state_dim(), state.len())?;
        check_len("ensemble action", self.action_dim(), action.len())?;
        let mut x = self.normalizer.apply(state);
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Absolute next-state prediction of every member.
    pub fn member_predictions(&self, state: &[f32], action: &[f32]) -> Result<Vec<Vec<f64>>> {
        let x = self.input(state, action)?;
        self.members
            .iter()
            .map(|m| {
                let out = m.forward(&x)?;
                Ok(state
                    .iter()
                    .zip(out.iter().zip(&self.delta_scale))
                    .map(|(&s, (&d, &sc))| s as f64 + d as f64 * sc as f64)
                    .collect())
            })
            .collect()
    }
}

impl DynamicsModel for DynamicsEnsemble {
    fn predict(&self, state: &[f32], action: &[f32]) -> Result<Prediction> {
        let preds = self.member_predictions(state, action)?;
        let k = preds.len() as f64;
        let dim = state.len();
        let mut mean = vec![0.0; dim];
        for p in &preds {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        let mut variance = vec![0.0; dim];
        for p in &preds {
            for ((acc, v), m) in variance.iter_mut().zip(p).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        variance.iter_mut().for_each(|v| *v /= k);
        Ok(Prediction { mean, variance })
    }
}

/// Threshold rule for trusting a model prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdRule {
    /// Variance at the policy action must not exceed `factor` times the
    /// variance at the dataset action.
    Relative { factor: f64 },
    /// Variance at the policy action must not exceed a fixed value.
    Absolute { value: f64 },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Relative { factor: 2.0 }
    }
}

/// The inclusive comparison behind [`uncertainty_ok`].
pub fn variance_rule_holds(var_policy: f64, var_data: f64, rule: ThresholdRule) -> bool {
    match rule {
        ThresholdRule::Relative { factor } => var_policy <= factor * var_data,
        ThresholdRule::Absolute { value } => var_policy <= value,
    }
}

/// Whether the model's prediction for the policy action is trusted at `state`.
pub fn uncertainty_ok<M: DynamicsModel + ?Sized>(
    model: &M,
    state: &[f32],
    a_policy: &[f32],
    a_data: &[f32],
    rule: ThresholdRule,
) -> Result<bool> {
    let vp = model.predict(state, a_policy)?.total_variance();
    let vd = match rule {
        ThresholdRule::Relative { .. } => model.predict(state, a_data)?.total_variance(),
        ThresholdRule::Absolute { .. } => 0.0,
    };
    Ok(variance_rule_holds(vp, vd, rule))
}

/// Contiguous training table: model inputs and scaled delta targets.
#[derive(Debug, Clone)]
struct DeltaTable {
    len: usize,
    in_dim: usize,
    out_dim: usize,
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

/// Incremental trainer so the ensemble can be updated alongside other
/// learners.
#[derive(Debug, Clone)]
pub struct EnsembleTrainer {
    pub ensemble: DynamicsEnsemble,
    cfg: EnsembleConfig,
    opts: Vec<AdamState<f32>>,
    samples: Vec<Option<Vec<usize>>>,
    batch_rngs: Vec<rng::Rng>,
    table: DeltaTable,
}

impl EnsembleTrainer {
    pub fn new(dataset: &OfflineDataset, cfg: &EnsembleConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let stats = dataset_stats(dataset)?;
        let normalizer = Normalizer::from_stats(&stats);
        let (sd, ad) = (dataset.state_dim(), dataset.action_dim());

        let n = dataset.transition_count();
        let mut dmean = vec![0.0f64; sd];
        let mut dsq = vec![0.0f64; sd];
        for (_, t) in dataset.iter_indexed() {
            for k in 0..sd {
                let d = (t.s_next[k] - t.s[k]) as f64;
                dmean[k] += d;
                dsq[k] += d * d;
            }
        }
        let delta_scale: Vec<f32> = (0..sd)
            .map(|k| {
                let m = dmean[k] / n as f64;
                ((dsq[k] / n as f64 - m * m).max(0.0).sqrt().max(1e-6)) as f32
            })
            .collect();

        let mut table = DeltaTable {
            len: n,
            in_dim: sd + ad,
            out_dim: sd,
            inputs: Vec::with_capacity(n * (sd + ad)),
            targets: Vec::with_capacity(n * sd),
        };
        for (_, t) in dataset.iter_indexed() {
            normalizer.apply_into(&t.s, &mut table.inputs);
            table.inputs.extend_from_slice(&t.a);
            for k in 0..sd {
                table.targets.push((t.s_next[k] - t.s[k]) / delta_scale[k]);
            }
        }

        let mut dims = vec![sd + ad];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(sd);
        let mut members = Vec::with_capacity(cfg.members);
        let mut samples = Vec::with_capacity(cfg.members);
        let mut batch_rngs = Vec::with_capacity(cfg.members);
        for k in 0..cfg.members {
            let member_seed = derive_seed(seed, "member", if cfg.shared_init { 0 } else { k as u64 });
            let mut init = rng::substream(member_seed, "init", 0);
            members.push(Mlp::random(&dims, Activation::Relu, Activation::Identity, &mut init)?);
            let mut boot = rng::substream(member_seed, "bootstrap", 0);
            samples.push(cfg.bootstrap.then(|| (0..n).map(|_| boot.random_range(0..n)).collect()));
            batch_rngs.push(rng::substream(member_seed, "batch", 0));
        }
        let opts = members.iter().map(AdamState::new).collect();
        Ok(Self {
            ensemble: DynamicsEnsemble::from_members(members, normalizer, delta_scale)?,
            cfg: cfg.clone(),
            opts,
            samples,
            batch_rngs,
            table,
        })
    }

    /// One MSE step per member. Returns the mean member loss.
    pub fn train_step(&mut self) -> Result<f32> {
        let t = &self.table;
        let bsz = self.cfg.batch_size;
        let mut total = 0.0;
        for k in 0..self.ensemble.members.len() {
            let rng = &mut self.batch_rngs[k];
            let mut x = Vec::with_capacity(bsz * t.in_dim);
            let mut y = Vec::with_capacity(bsz * t.out_dim);
            for _ in 0..bsz {
                let j = rng.random_range(0..t.len);
                let i = self.samples[k].as_ref().map_or(j, |s| s[j]);
                x.extend_from_slice(&t.inputs[i * t.in_dim..(i + 1) * t.in_dim]);
                y.extend_from_slice(&t.targets[i * t.out_dim..(i + 1) * t.out_dim]);
            }
            let net = &mut self.ensemble.members[k];
            let cache = net.forward_cached(&x, bsz)?;
            let inv = 1.0 / bsz as f32;
            let mut loss = 0.0f32;
            let grad: Vec<f32> = cache
                .output()
                .iter()
                .zip(&y)
                .map(|(p, y)| {
                    let d = p - y;
                    loss += d * d;
                    2.0 * d * inv
                })
                .collect();
            if !loss.is_finite() {
                return Err(Error::NonFinite("ensemble loss"));
            }
            let mut g = Gradients::zeros_like(net);
            net.backward_into(&cache, &grad, &mut g, false)?;
            adam_step(net, &g, &mut self.opts[k], self.cfg.lr)?;
            total += loss * inv;
        }
        Ok(total / self.ensemble.members.len() as f32)
    }
}

/// Trains a fresh ensemble for `steps` iterations on `dataset`.
pub fn train_ensemble(
    dataset: &OfflineDataset,
    steps: usize,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<DynamicsEnsemble> {
    let mut trainer = EnsembleTrainer::new(dataset, cfg, seed)?;
    for _ in 0..steps {
        trainer.train_step()?;
    }
    Ok(trainer.ensemble)
}
