//! Shared-trunk multi-head policy and the cloning/replay updates on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{actor_objective, policy_net, Batch, Critic, SoloPolicy};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Gradients, Layer, Mlp};

use super::ReplayScale;

/// `π_j = head_j ∘ trunk`, with one state normalizer per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadPolicy {
    pub trunk: Mlp<f32>,
    pub heads: Vec<Mlp<f32>>,
    pub normalizers: Vec<Normalizer>,
    pub action_dim: usize,
    pub action_bound: f64,
}

impl MultiHeadPolicy {
    /// Empty policy: a ReLU trunk `[state, hidden..]` and no heads.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        action_bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("trunk needs at least one hidden layer".into()));
        }
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        Ok(Self {
            trunk: Mlp::random(&dims, Activation::Relu, Activation::Relu, rng)?,
            heads: Vec::new(),
            normalizers: Vec::new(),
            action_dim,
            action_bound,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    /// Appends a randomly initialized head and returns its index.
    pub fn add_head<R: Rng + ?Sized>(&mut self, normalizer: Normalizer, rng: &mut R) -> Result<usize> {
        if normalizer.dim() != self.state_dim() {
            return Err(Error::Shape {
                context: "head normalizer",
                expected: self.state_dim(),
                got: normalizer.dim(),
            });
        }
        let layer = Layer::random(
            self.feature_dim(),
            self.action_dim,
            Activation::Tanh {
                scale: self.action_bound,
            },
            rng,
        )?;
        self.heads.push(Mlp::from_layers(vec![layer])?);
        self.normalizers.push(normalizer);
        Ok(self.heads.len() - 1)
    }

    fn check_head(&self, j: usize) -> Result<()> {
        if j >= self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "head {j} does not exist ({} heads)",
                self.heads.len()
            )));
        }
        Ok(())
    }

    /// `π_j` flattened into one network over normalized states.
    pub fn head_net(&self, j: usize) -> Result<Mlp<f32>> {
        self.check_head(j)?;
        self.trunk.compose(&self.heads[j])
    }

    /// `π_j` on normalized states, row-major batch.
    pub fn act_batch(&self, j: usize, states: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.check_head(j)?;
        let feat = self.trunk.forward_batch(states, batch)?;
        self.heads[j].forward_batch(&feat, batch)
    }

    /// `π_j` on a raw state.
    pub fn act_raw(&self, j: usize, state: &[f32]) -> Result<Vec<f32>> {
        self.check_head(j)?;
        self.act_batch(j, &self.normalizers[j].apply(state), 1)
    }

    pub fn act_raw_f64(&self, j: usize, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_head(j)?;
        let s = self.normalizers[j].apply_f64(obs);
        Ok(self.act_batch(j, &s, 1)?.into_iter().map(f64::from).collect())
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.heads.iter().map(Mlp::param_count).sum::<usize>()
    }

    /// Trunk parameters followed by each head's.
    pub fn params_flat(&self) -> Vec<f32> {
        let mut out = self.trunk.params_flat();
        for h in &self.heads {
            out.extend(h.params_flat());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f32]) -> Result<()> {
        crate::error::check_len("policy parameters", self.param_count(), params.len())?;
        let mut off = self.trunk.param_count();
        self.trunk.set_params_flat(&params[..off])?;
        for h in &mut self.heads {
            let n = h.param_count();
            h.set_params_flat(&params[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    /// Accumulates `weight · ∂L/∂θ` for a loss on head `j`'s outputs.
    ///
    /// `loss` gets the head outputs and returns the loss value and
    /// `∂L/∂outputs`. The unweighted loss is returned.
    pub fn accumulate<F>(
        &self,
        j: usize,
        states: &[f32],
        batch: usize,
        weight: f32,
        grads: &mut PolicyGrads,
        loss: F,
    ) -> Result<f32>
    where
        F: FnOnce(&[f32]) -> Result<(f32, Vec<f32>)>,
    {
        self.check_head(j)?;
        grads.sync(self);
        let tc = self.trunk.forward_cached(states, batch)?;
        let hc = self.heads[j].forward_cached(tc.output(), batch)?;
        let (value, mut dout) = loss(hc.output())?;
        if !value.is_finite() {
            return Err(Error::NonFinite("policy loss"));
        }
        if weight != 1.0 {
            dout.iter_mut().for_each(|d| *d *= weight);
        }
        let hg = grads.heads[j].get_or_insert_with(|| Gradients::zeros_like(&self.heads[j]));
        let dfeat = self.heads[j]
            .backward_into(&hc, &dout, hg, true)?
            .expect("input gradient requested");
        self.trunk.backward_into(&tc, &dfeat, &mut grads.trunk, false)?;
        Ok(value)
    }

    /// Accumulates `weight · mean‖π_j(s) − target‖²`.
    pub fn accumulate_mse(
        &self,
        j: usize,
        states: &[f32],
        targets: &[f32],
        batch: usize,
        weight: f32,
        grads: &mut PolicyGrads,
    ) -> Result<f32> {
        self.accumulate(j, states, batch, weight, grads, |out| mse(out, targets, batch))
    }
}

/// `mean over rows of Σ_k (out − target)²` and its gradient.
pub fn mse(out: &[f32], targets: &[f32], batch: usize) -> Result<(f32, Vec<f32>)> {
    crate::error::check_len("mse targets", out.len(), targets.len())?;
    let inv = 1.0 / batch as f32;
    let mut sum = 0.0f32;
    let grad = out
        .iter()
        .zip(targets)
        .map(|(o, t)| {
            let d = o - t;
            sum += d * d;
            2.0 * d * inv
        })
        .collect();
    Ok((sum * inv, grad))
}

/// Gradients for the trunk and for whichever heads a loss touched.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub trunk: Gradients<f32>,
    pub heads: Vec<Option<Gradients<f32>>>,
}

impl PolicyGrads {
    pub fn zeros(policy: &MultiHeadPolicy) -> Self {
        Self {
            trunk: Gradients::zeros_like(&policy.trunk),
            heads: vec![None; policy.head_count()],
        }
    }

    fn sync(&mut self, policy: &MultiHeadPolicy) {
        self.heads.resize(policy.head_count(), None);
    }

    /// Flat view in [`MultiHeadPolicy::params_flat`] order; untouched heads
    /// contribute zeros.
    pub fn flat(&self, policy: &MultiHeadPolicy) -> Vec<f64> {
        let mut out: Vec<f64> = self.trunk.iter().map(|&v| v as f64).collect();
        for (j, h) in policy.heads.iter().enumerate() {
            match self.heads.get(j).and_then(Option::as_ref) {
                Some(g) => out.extend(g.iter().map(|&v| v as f64)),
                None => out.extend(std::iter::repeat_n(0.0, h.param_count())),
            }
        }
        out
    }

    /// Inverse of [`PolicyGrads::flat`]; every head becomes touched.
    pub fn from_flat(policy: &MultiHeadPolicy, flat: &[f64]) -> Result<Self> {
        crate::error::check_len("flat policy gradient", policy.param_count(), flat.len())?;
        let mut g = Self::zeros(policy);
        let mut it = flat.iter().map(|&v| v as f32);
        for v in g.trunk.iter_mut() {
            *v = it.next().expect("length checked");
        }
        for (j, h) in policy.heads.iter().enumerate() {
            let mut hg = Gradients::zeros_like(h);
            for v in hg.iter_mut() {
                *v = it.next().expect("length checked");
            }
            g.heads[j] = Some(hg);
        }
        Ok(g)
    }

    /// Adds `values` (flat layout, possibly a prefix) into the gradients.
    pub fn add_flat(&mut self, policy: &MultiHeadPolicy, values: &[f32]) -> Result<()> {
        self.sync(policy);
        if values.len() > policy.param_count() {
            return Err(Error::Shape {
                context: "flat gradient prefix",
                expected: policy.param_count(),
                got: values.len(),
            });
        }
        let mut it = values.iter();
        for v in self.trunk.iter_mut() {
            match it.next() {
                Some(x) => *v += x,
                None => return Ok(()),
            }
        }
        for (j, h) in policy.heads.iter().enumerate() {
            if it.len() == 0 {
                break;
            }
            let hg = self.heads[j].get_or_insert_with(|| Gradients::zeros_like(h));
            for v in hg.iter_mut() {
                match it.next() {
                    Some(x) => *v += x,
                    None => return Ok(()),
                }
            }
        }
        Ok(())
    }
}

/// Adam over the trunk and each head separately. Heads without gradients in
/// a step are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptimizer {
    pub trunk: AdamState<f32>,
    pub heads: Vec<AdamState<f32>>,
    pub lr: f64,
    pub freeze_trunk: bool,
}

impl PolicyOptimizer {
    pub fn new(policy: &MultiHeadPolicy, lr: f64, freeze_trunk: bool) -> Self {
        Self {
            trunk: AdamState::new(&policy.trunk),
            heads: policy.heads.iter().map(AdamState::new).collect(),
            lr,
            freeze_trunk,
        }
    }

    pub fn step(&mut self, policy: &mut MultiHeadPolicy, grads: &PolicyGrads) -> Result<()> {
        while self.heads.len() < policy.head_count() {
            self.heads.push(AdamState::new(&policy.heads[self.heads.len()]));
        }
        if !grads.trunk.is_finite() || grads.heads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("policy gradient"));
        }
        if !self.freeze_trunk {
            adam_step(&mut policy.trunk, &grads.trunk, &mut self.trunk, self.lr)?;
        }
        for (j, g) in grads.heads.iter().enumerate() {
            if let Some(g) = g {
                adam_step(&mut policy.heads[j], g, &mut self.heads[j], self.lr)?;
            }
        }
        Ok(())
    }
}

/// Adds a head for task `n` and returns the solo policy `μ_n`.
///
/// `μ_n` is a copy of `π_{n−1}` flattened into one network, or freshly
/// initialized for the first task.
pub fn start_task<R: Rng + ?Sized>(
    policy: &mut MultiHeadPolicy,
    n: usize,
    normalizer: Normalizer,
    hidden: &[usize],
    rng: &mut R,
) -> Result<SoloPolicy> {
    if n != policy.head_count() {
        return Err(Error::TaskOrder {
            expected: policy.head_count(),
            got: n,
        });
    }
    let net = if n == 0 {
        policy_net(policy.state_dim(), policy.action_dim, hidden, policy.action_bound, rng)?
    } else {
        policy.head_net(n - 1)?
    };
    policy.add_head(normalizer, rng)?;
    Ok(SoloPolicy { net, task: n })
}

/// Losses reported by the replay updates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateLoss {
    /// Current-task term: cloning `μ_n` or the TD3+BC actor loss.
    pub current: f32,
    /// `Σ_j E_{B_j}‖π_j(s) − a‖²`, unweighted.
    pub replay: f32,
    /// `current + factor · replay`.
    pub total: f32,
}

/// Accumulates `factor · Σ_j mean‖π_j(s) − a‖²` over one batch per
/// previous buffer. Returns the factor and the unweighted sum.
pub fn replay_term(
    policy: &MultiHeadPolicy,
    buffers: &[Batch],
    lambda_r: f64,
    scale: ReplayScale,
    grads: &mut PolicyGrads,
) -> Result<(f32, f32)> {
    let n = policy.head_count();
    if n == 0 {
        return Err(Error::InvalidArgument("policy has no heads".into()));
    }
    if buffers.len() != n - 1 {
        return Err(Error::InvalidArgument(format!(
            "expected one buffer batch per previous task ({}), got {}",
            n - 1,
            buffers.len()
        )));
    }
    if !(lambda_r >= 0.0) {
        return Err(Error::InvalidArgument("lambda_r must be >= 0".into()));
    }
    let factor = scale.factor(lambda_r, n) as f32;
    let mut sum = 0.0;
    if factor > 0.0 {
        for (j, b) in buffers.iter().enumerate() {
            sum += policy.accumulate_mse(j, &b.states, &b.actions, b.size, factor, grads)?;
        }
    }
    Ok((factor, sum))
}

/// One Adam step on `L = mean‖π_n(s) − μ_n(s)‖² + factor·Σ_j E_{B_j}‖π_j(s) − a‖²`
/// where `n` is the newest head. `μ_n` is only read.
pub fn dbc_update(
    policy: &mut MultiHeadPolicy,
    opt: &mut PolicyOptimizer,
    mu: &Mlp<f32>,
    states: &[f32],
    batch: usize,
    buffers: &[Batch],
    lambda_r: f64,
    scale: ReplayScale,
) -> Result<UpdateLoss> {
    let mut grads = PolicyGrads::zeros(policy);
    let loss = dbc_gradients(policy, mu, states, batch, buffers, lambda_r, scale, &mut grads)?;
    opt.step(policy, &grads)?;
    Ok(loss)
}

/// Gradient half of [`dbc_update`].
#[allow(clippy::too_many_arguments)]
pub fn dbc_gradients(
    policy: &MultiHeadPolicy,
    mu: &Mlp<f32>,
    states: &[f32],
    batch: usize,
    buffers: &[Batch],
    lambda_r: f64,
    scale: ReplayScale,
    grads: &mut PolicyGrads,
) -> Result<UpdateLoss> {
    let n = policy.head_count();
    if n == 0 {
        return Err(Error::InvalidArgument("policy has no heads".into()));
    }
    let targets = mu.forward_batch(states, batch)?;
    let current = policy.accumulate_mse(n - 1, states, &targets, batch, 1.0, grads)?;
    let (factor, replay) = replay_term(policy, buffers, lambda_r, scale, grads)?;
    Ok(UpdateLoss {
        current,
        replay,
        total: current + factor * replay,
    })
}

/// Accumulates the TD3+BC actor loss of head `j` on `batch`.
pub fn actor_term(
    policy: &MultiHeadPolicy,
    j: usize,
    critic: &Critic,
    batch: &Batch,
    alpha: f64,
    grads: &mut PolicyGrads,
) -> Result<f32> {
    policy.accumulate(j, &batch.states, batch.size, 1.0, grads, |out| {
        let obj = actor_objective(critic, &batch.states, out, &batch.actions, batch.size, alpha)?;
        Ok((obj.loss, obj.grad_actions))
    })
}

/// Gradients of the replay-augmented TD3+BC actor loss on the newest head:
/// `actor loss + factor·Σ_j E_{B_j}‖π_j(s) − a‖²`.
pub fn bc_gradients(
    policy: &MultiHeadPolicy,
    critic: &Critic,
    batch: &Batch,
    buffers: &[Batch],
    lambda_r: f64,
    alpha: f64,
    scale: ReplayScale,
    grads: &mut PolicyGrads,
) -> Result<UpdateLoss> {
    let n = policy.head_count();
    if n == 0 {
        return Err(Error::InvalidArgument("policy has no heads".into()));
    }
    let current = actor_term(policy, n - 1, critic, batch, alpha, grads)?;
    let (factor, replay) = replay_term(policy, buffers, lambda_r, scale, grads)?;
    Ok(UpdateLoss {
        current,
        replay,
        total: current + factor * replay,
    })
}

/// One Adam step of [`bc_gradients`].
#[allow(clippy::too_many_arguments)]
pub fn bc_update(
    policy: &mut MultiHeadPolicy,
    opt: &mut PolicyOptimizer,
    critic: &Critic,
    batch: &Batch,
    buffers: &[Batch],
    lambda_r: f64,
    alpha: f64,
    scale: ReplayScale,
) -> Result<UpdateLoss> {
    let mut grads = PolicyGrads::zeros(policy);
    let loss = bc_gradients(policy, critic, batch, buffers, lambda_r, alpha, scale, &mut grads)?;
    opt.step(policy, &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn policy_with_heads(k: usize, seed: u64) -> MultiHeadPolicy {
        let mut r = rng::seeded(seed);
        let mut p = MultiHeadPolicy::new(4, 2, &[8, 8], 1.0, &mut r).unwrap();
        for _ in 0..k {
            p.add_head(Normalizer::identity(4), &mut r).unwrap();
        }
        p
    }

    fn batch_of(states: Vec<f32>, actions: Vec<f32>, sd: usize, ad: usize) -> Batch {
        let size = states.len() / sd;
        Batch {
            size,
            state_dim: sd,
            action_dim: ad,
            next_states: states.clone(),
            states,
            actions,
            rewards: vec![0.0; size],
            dones: vec![0.0; size],
        }
    }

    fn random_states(n: usize, seed: u64) -> Vec<f32> {
        let mut r = rng::seeded(seed);
        (0..n * 4).map(|_| r.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn start_task_copies_previous_head() {
        let mut r = rng::seeded(3);
        let mut p = MultiHeadPolicy::new(4, 2, &[8, 8], 1.0, &mut r).unwrap();
        start_task(&mut p, 0, Normalizer::identity(4), &[8, 8], &mut r).unwrap();
        assert_eq!(p.head_count(), 1);
        let mu = start_task(&mut p, 1, Normalizer::identity(4), &[8, 8], &mut r).unwrap();
        assert_eq!(p.head_count(), 2);
        let s = random_states(100, 4);
        let a = mu.net.forward_batch(&s, 100).unwrap();
        let b = p.act_batch(0, &s, 100).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            start_task(&mut p, 5, Normalizer::identity(4), &[8, 8], &mut r),
            Err(Error::TaskOrder { expected: 2, got: 5 })
        ));
    }

    #[test]
    fn first_task_solo_policy_depends_on_seed() {
        let s = random_states(5, 0);
        let out = |seed| {
            let mut r = rng::seeded(seed);
            let mut p = MultiHeadPolicy::new(4, 2, &[8, 8], 1.0, &mut r).unwrap();
            start_task(&mut p, 0, Normalizer::identity(4), &[8, 8], &mut r)
                .unwrap()
                .net
                .forward_batch(&s, 5)
                .unwrap()
        };
        assert_ne!(out(1), out(2));
    }

    fn scalar_head(bias: f32) -> Mlp<f32> {
        Mlp::from_layers(vec![
            Layer::new(1, 1, Activation::Identity, vec![0.0], vec![bias]).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn dbc_hand_example() {
        // Identity trunk on a 1-dim state, constant heads: π_1 ≡ 0.1, π_2 ≡ 0.3, μ_2 ≡ 0.5.
        let trunk = Mlp::from_layers(vec![
            Layer::new(1, 1, Activation::Identity, vec![1.0], vec![0.0]).unwrap()
        ])
        .unwrap();
        let mut p = MultiHeadPolicy {
            trunk,
            heads: vec![scalar_head(0.1), scalar_head(0.3)],
            normalizers: vec![Normalizer::identity(1); 2],
            action_dim: 1,
            action_bound: 1.0,
        };
        let mu = scalar_head(0.5);
        let buf = batch_of(vec![0.7], vec![0.4], 1, 1);
        let mut opt = PolicyOptimizer::new(&p, 1e-3, false);
        let loss = dbc_update(&mut p, &mut opt, &mu, &[0.2], 1, &[buf], 1.0, ReplayScale::TaskCount).unwrap();
        assert!((loss.total - 0.085).abs() < 1e-6, "{loss:?}");
        assert!((loss.current - 0.04).abs() < 1e-6);
        assert!((loss.replay - 0.09).abs() < 1e-6);
    }

    #[test]
    fn dbc_first_task_is_pure_cloning() {
        let p = policy_with_heads(1, 1);
        let mu = policy_net(4, 2, &[8, 8], 1.0, &mut rng::seeded(2)).unwrap();
        let s = random_states(16, 5);
        let mut g = PolicyGrads::zeros(&p);
        let loss = dbc_gradients(&p, &mu, &s, 16, &[], 7.0, ReplayScale::TaskCount, &mut g).unwrap();
        let expect = mse(&p.act_batch(0, &s, 16).unwrap(), &mu.forward_batch(&s, 16).unwrap(), 16)
            .unwrap()
            .0;
        assert!((loss.total - expect).abs() < 1e-6);
        assert!(matches!(
            dbc_gradients(
                &p,
                &mu,
                &s,
                16,
                &[batch_of(s.clone(), vec![0.0; 32], 4, 2)],
                1.0,
                ReplayScale::TaskCount,
                &mut g
            ),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_replay_weight_matches_pure_cloning_gradient() {
        let p = policy_with_heads(3, 7);
        let mu = policy_net(4, 2, &[8, 8], 1.0, &mut rng::seeded(8)).unwrap();
        let s = random_states(32, 9);
        let bufs: Vec<Batch> = (0..2)
            .map(|k| batch_of(random_states(32, 10 + k), vec![0.3; 64], 4, 2))
            .collect();
        let mut g0 = PolicyGrads::zeros(&p);
        dbc_gradients(&p, &mu, &s, 32, &bufs, 0.0, ReplayScale::TaskCount, &mut g0).unwrap();
        let mut g1 = PolicyGrads::zeros(&p);
        let targets = mu.forward_batch(&s, 32).unwrap();
        p.accumulate_mse(2, &s, &targets, 32, 1.0, &mut g1).unwrap();
        let (a, b) = (g0.flat(&p), g1.flat(&p));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb) - 1.0).abs() < 1e-12);
        assert!(g0.heads[0].is_none() && g0.heads[1].is_none());
    }

    #[test]
    fn frozen_trunk_and_zero_replay_leave_old_heads_unchanged() {
        let mut p = policy_with_heads(3, 11);
        let before = p.clone();
        let mu = policy_net(4, 2, &[8, 8], 1.0, &mut rng::seeded(12)).unwrap();
        let bufs: Vec<Batch> = (0..2)
            .map(|k| batch_of(random_states(8, 20 + k), vec![0.1; 16], 4, 2))
            .collect();
        let mut opt = PolicyOptimizer::new(&p, 1e-2, true);
        for k in 0..20 {
            let s = random_states(8, 30 + k);
            dbc_update(&mut p, &mut opt, &mu, &s, 8, &bufs, 0.0, ReplayScale::TaskCount).unwrap();
        }
        assert_eq!(p.trunk, before.trunk);
        assert_eq!(p.heads[0], before.heads[0]);
        assert_eq!(p.heads[1], before.heads[1]);
        assert_ne!(p.heads[2], before.heads[2]);
    }

    fn two_head_constant_policy(b1: f32, b2: f32) -> MultiHeadPolicy {
        let trunk = Mlp::from_layers(vec![
            Layer::new(1, 1, Activation::Identity, vec![1.0], vec![0.0]).unwrap()
        ])
        .unwrap();
        MultiHeadPolicy {
            trunk,
            heads: vec![scalar_head(b1), scalar_head(b2)],
            normalizers: vec![Normalizer::identity(1); 2],
            action_dim: 1,
            action_bound: 1.0,
        }
    }

    fn linear_critic() -> Critic {
        // Q(s, a) = 2a.
        let q = || {
            Mlp::from_layers(vec![
                Layer::new(2, 1, Activation::Identity, vec![0.0, 2.0], vec![0.0]).unwrap()
            ])
            .unwrap()
        };
        Critic::from_networks(q(), q(), 0.005).unwrap()
    }

    #[test]
    fn bc_first_task_is_the_actor_loss() {
        let p = policy_with_heads(1, 21);
        let critic = Critic::new(4, 2, &[8], 0.005, &mut rng::seeded(22)).unwrap();
        let s = random_states(16, 23);
        let mut r = rng::seeded(24);
        let actions: Vec<f32> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = batch_of(s.clone(), actions.clone(), 4, 2);
        let mut g = PolicyGrads::zeros(&p);
        let loss = bc_gradients(&p, &critic, &b, &[], 3.0, 2.5, ReplayScale::TaskCount, &mut g).unwrap();
        let pred = p.act_batch(0, &s, 16).unwrap();
        let expect = actor_objective(&critic, &s, &pred, &actions, 16, 2.5).unwrap().loss;
        assert_eq!(loss.total, expect);
        assert_eq!(loss.replay, 0.0);
    }

    #[test]
    fn bc_hand_example() {
        // π_1 ≡ 0.125, π_2 ≡ 0.25, Q = 2a, data action 0.5, α = 2.5:
        // λ = 2.5 / 0.5 = 5, actor loss = −5·0.5 + 0.25² = −2.4375,
        // replay = ½·(0.125 − 0.375)² = 0.03125.
        let mut p = two_head_constant_policy(0.125, 0.25);
        let critic = linear_critic();
        let b = batch_of(vec![0.2], vec![0.5], 1, 1);
        let buf = batch_of(vec![0.7], vec![0.375], 1, 1);
        let mut opt = PolicyOptimizer::new(&p, 1e-3, false);
        let loss = bc_update(
            &mut p,
            &mut opt,
            &critic,
            &b,
            std::slice::from_ref(&buf),
            1.0,
            2.5,
            ReplayScale::TaskCount,
        )
        .unwrap();
        assert!((loss.current as f64 + 2.4375).abs() < 1e-9, "{loss:?}");
        assert!((loss.total as f64 + 2.40625).abs() < 1e-9, "{loss:?}");
        let mut p0 = two_head_constant_policy(0.125, 0.25);
        let mut opt0 = PolicyOptimizer::new(&p0, 1e-3, false);
        let l0 = bc_update(
            &mut p0,
            &mut opt0,
            &critic,
            &b,
            &[buf],
            0.0,
            2.5,
            ReplayScale::TaskCount,
        )
        .unwrap();
        assert_eq!(l0.total, l0.current);
        assert_eq!(p0.heads[0], scalar_head(0.125));
    }

    #[test]
    fn flat_round_trip_and_prefix_add() {
        let p = policy_with_heads(2, 13);
        let mut g = PolicyGrads::zeros(&p);
        p.accumulate_mse(1, &random_states(4, 1), &[0.0; 8], 4, 1.0, &mut g)
            .unwrap();
        let flat = g.flat(&p);
        assert_eq!(flat.len(), p.param_count());
        let back = PolicyGrads::from_flat(&p, &flat).unwrap();
        assert_eq!(back.flat(&p), flat);
        let mut z = PolicyGrads::zeros(&p);
        let ones = vec![1.0f32; p.trunk.param_count() + 3];
        z.add_flat(&p, &ones).unwrap();
        let f = z.flat(&p);
        assert!(f[..ones.len()].iter().all(|&v| v == 1.0));
        assert!(f[ones.len()..].iter().all(|&v| v == 0.0));
        assert!(z.heads[1].is_none());
        let mut q = p.clone();
        q.set_params_flat(&p.params_flat()).unwrap();
        assert_eq!(q, p);
    }
}
