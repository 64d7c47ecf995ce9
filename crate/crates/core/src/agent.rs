//! TD3+BC offline backbone: solo policy `μ_n`, twin critic `Q_n` and the
//! per-task trainer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{dataset_stats, Normalizer, OfflineDataset};
use crate::env::{self, TaskSpec};
use crate::error::{Error, Result};
use crate::nn::{adam_step, soft_update, Activation, AdamState, Gradients, Mlp};
use crate::rng;

/// Backbone hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3BcConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha: f64,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub tau: f64,
}

impl Default for Td3BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            batch_size: 256,
            actor_lr: 3e-3,
            critic_lr: 1e-3,
            alpha: 2.5,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            tau: 0.005,
        }
    }
}

impl Td3BcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("td3bc: {m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if self.batch_size == 0 || self.policy_delay == 0 {
            return bad("batch_size and policy_delay must be >= 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha > 0.0) {
            return bad("learning rates and alpha must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.target_noise >= 0.0 && self.noise_clip >= 0.0) {
            return bad("target noise parameters must be >= 0");
        }
        Ok(())
    }
}

/// Bounded-action policy network: `[state, hidden.., action]`, ReLU, tanh·bound.
pub fn policy_net<R: Rng + ?Sized>(
    state_dim: usize,
    action_dim: usize,
    hidden: &[usize],
    bound: f64,
    rng: &mut R,
) -> Result<Mlp<f32>> {
    let mut dims = vec![state_dim];
    dims.extend_from_slice(hidden);
    dims.push(action_dim);
    Mlp::random(&dims, Activation::Relu, Activation::Tanh { scale: bound }, rng)
}

/// Q network: `[state + action, hidden.., 1]`.
pub fn q_net<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp<f32>> {
    let mut dims = vec![state_dim + action_dim];
    dims.extend_from_slice(hidden);
    dims.push(1);
    Mlp::random(&dims, Activation::Relu, Activation::Identity, rng)
}

/// Per-task policy `μ_n`; consumes normalized states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoloPolicy {
    pub net: Mlp<f32>,
    pub task: usize,
}

impl SoloPolicy {
    pub fn act(&self, state: &[f32]) -> Result<Vec<f32>> {
        self.net.forward(state)
    }
}

/// Minibatch with normalized states.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub dones: Vec<f32>,
}

/// Dataset flattened into contiguous, normalized arrays for batch sampling.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    pub len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    states: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_states: Vec<f32>,
    dones: Vec<f32>,
}

impl TransitionTable {
    pub fn from_transitions<'a>(
        transitions: impl IntoIterator<Item = &'a crate::data::Transition>,
        state_dim: usize,
        action_dim: usize,
        norm: &Normalizer,
    ) -> Self {
        let mut t = Self {
            len: 0,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
        };
        for tr in transitions {
            norm.apply_into(&tr.s, &mut t.states);
            t.actions.extend_from_slice(&tr.a);
            t.rewards.push(tr.r);
            norm.apply_into(&tr.s_next, &mut t.next_states);
            t.dones.push(if tr.done { 1.0 } else { 0.0 });
            t.len += 1;
        }
        t
    }

    pub fn from_dataset(ds: &OfflineDataset, norm: &Normalizer) -> Self {
        Self::from_transitions(ds.iter_indexed().map(|(_, t)| t), ds.state_dim(), ds.action_dim(), norm)
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut b = Batch {
            size: indices.len(),
            state_dim: sd,
            action_dim: ad,
            states: Vec::with_capacity(indices.len() * sd),
            actions: Vec::with_capacity(indices.len() * ad),
            rewards: Vec::with_capacity(indices.len()),
            next_states: Vec::with_capacity(indices.len() * sd),
            dones: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            b.states.extend_from_slice(&self.states[i * sd..(i + 1) * sd]);
            b.actions.extend_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            b.rewards.push(self.rewards[i]);
            b.next_states.extend_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
            b.dones.push(self.dones[i]);
        }
        b
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Batch {
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len)).collect();
        self.gather(&idx)
    }
}

fn concat_rows(a: &[f32], ad: usize, b: &[f32], bd: usize, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * (ad + bd));
    for i in 0..n {
        out.extend_from_slice(&a[i * ad..(i + 1) * ad]);
        out.extend_from_slice(&b[i * bd..(i + 1) * bd]);
    }
    out
}

/// Twin Q networks with their target copies and optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub q1: Mlp<f32>,
    pub q2: Mlp<f32>,
    pub q1_target: Mlp<f32>,
    pub q2_target: Mlp<f32>,
    pub tau: f64,
    opt1: AdamState<f32>,
    opt2: AdamState<f32>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let q1 = q_net(state_dim, action_dim, hidden, rng)?;
        let q2 = q_net(state_dim, action_dim, hidden, rng)?;
        Self::from_networks(q1, q2, tau)
    }

    /// Targets start as copies of the online networks.
    pub fn from_networks(q1: Mlp<f32>, q2: Mlp<f32>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
        }
        if !q1.is_congruent(&q2) || q1.output_dim() != 1 {
            return Err(Error::InvalidArgument(
                "twin critics must be congruent scalar nets".into(),
            ));
        }
        Ok(Self {
            opt1: AdamState::new(&q1),
            opt2: AdamState::new(&q2),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            tau,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    /// `Q₁(s, a)` for one normalized state.
    pub fn q1_value(&self, state: &[f32], action: &[f32]) -> Result<f32> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(self.q1.forward(&x)?[0])
    }

    /// Last-hidden-layer activations of `Q₁` at `(s, a)`.
    pub fn q1_feature(&self, state: &[f32], action: &[f32]) -> Result<Vec<f32>> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        self.q1.last_hidden(&x)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        soft_update(&mut self.q1_target, &self.q1, self.tau)?;
        soft_update(&mut self.q2_target, &self.q2, self.tau)
    }
}

/// Target policy smoothing noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNoise {
    pub std: f64,
    pub clip: f64,
    pub action_bound: f64,
}

/// Bellman targets `y = r + γ(1−done)·min(Q′₁, Q′₂)(s′, clip(μ′(s′) + ε))`.
pub fn td_targets<R: Rng + ?Sized>(
    critic: &Critic,
    target_actor: &Mlp<f32>,
    batch: &Batch,
    gamma: f64,
    noise: &TargetNoise,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let n = batch.size;
    let (sd, ad) = (batch.state_dim, batch.action_dim);
    let mut next_a = target_actor.forward_batch(&batch.next_states, n)?;
    let b = noise.action_bound as f32;
    if noise.std > 0.0 {
        let normal =
            Normal::new(0.0, noise.std * noise.action_bound).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let c = (noise.clip * noise.action_bound) as f32;
        for a in next_a.iter_mut() {
            let eps = (normal.sample(rng) as f32).clamp(-c, c);
            *a = (*a + eps).clamp(-b, b);
        }
    }
    let x = concat_rows(&batch.next_states, sd, &next_a, ad, n);
    let q1 = critic.q1_target.forward_batch(&x, n)?;
    let q2 = critic.q2_target.forward_batch(&x, n)?;
    let g = gamma as f32;
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let v = if batch.dones[i] >= 0.5 {
            batch.rewards[i]
        } else {
            batch.rewards[i] + g * q1[i].min(q2[i])
        };
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite Bellman target at batch index {i} (r={}, q1={}, q2={})",
                batch.rewards[i], q1[i], q2[i]
            )));
        }
        y.push(v);
    }
    Ok(y)
}

fn regress(net: &mut Mlp<f32>, opt: &mut AdamState<f32>, x: &[f32], y: &[f32], lr: f64) -> Result<f32> {
    let n = y.len();
    let cache = net.forward_cached(x, n)?;
    let q = cache.output();
    let inv = 1.0 / n as f32;
    let mut loss = 0.0f32;
    let grad: Vec<f32> = q
        .iter()
        .zip(y)
        .map(|(q, y)| {
            let d = q - y;
            loss += d * d;
            2.0 * d * inv
        })
        .collect();
    let mut g = Gradients::zeros_like(net);
    net.backward_into(&cache, &grad, &mut g, false)?;
    adam_step(net, &g, opt, lr)?;
    Ok(loss * inv)
}

/// One MSE step of both online critics toward the shared Bellman targets.
/// Returns the summed loss. Target networks are not blended here.
pub fn critic_update<R: Rng + ?Sized>(
    critic: &mut Critic,
    target_actor: &Mlp<f32>,
    batch: &Batch,
    gamma: f64,
    noise: &TargetNoise,
    lr: f64,
    rng: &mut R,
) -> Result<f32> {
    if batch.size == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let y = td_targets(critic, target_actor, batch, gamma, noise, rng)?;
    let x = concat_rows(
        &batch.states,
        batch.state_dim,
        &batch.actions,
        batch.action_dim,
        batch.size,
    );
    let l1 = regress(&mut critic.q1, &mut critic.opt1, &x, &y, lr)?;
    let l2 = regress(&mut critic.q2, &mut critic.opt2, &x, &y, lr)?;
    Ok(l1 + l2)
}

/// Floor on the mean |Q| denominator of the TD3+BC weight.
pub const Q_SCALE_FLOOR: f32 = 1e-6;

/// Result of [`actor_objective`].
#[derive(Debug, Clone)]
pub struct ActorObjective {
    pub loss: f32,
    pub lambda: f32,
    /// `∂loss/∂predicted_actions`, row-major `(batch, action_dim)`.
    pub grad_actions: Vec<f32>,
}

/// TD3+BC actor loss `−λ·mean Q₁(s, â) + mean ‖â − a‖²` with
/// `λ = α / mean|Q₁|` held constant, and its gradient w.r.t. `â`.
pub fn actor_objective(
    critic: &Critic,
    states: &[f32],
    predicted: &[f32],
    data_actions: &[f32],
    batch: usize,
    alpha: f64,
) -> Result<ActorObjective> {
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    let ad = predicted.len() / batch;
    let sd = states.len() / batch;
    let x = concat_rows(states, sd, predicted, ad, batch);
    let cache = critic.q1.forward_cached(&x, batch)?;
    let q = cache.output();
    let inv = 1.0 / batch as f32;
    let mean_abs = q.iter().map(|v| v.abs()).sum::<f32>() * inv;
    let lambda = alpha as f32 / mean_abs.max(Q_SCALE_FLOOR);
    let mean_q = q.iter().sum::<f32>() * inv;

    let dq = critic.q1.input_gradient(&cache, &vec![-lambda * inv; batch])?;
    let mut grad_actions = Vec::with_capacity(batch * ad);
    let mut bc = 0.0f32;
    for i in 0..batch {
        for k in 0..ad {
            let d = predicted[i * ad + k] - data_actions[i * ad + k];
            bc += d * d;
            grad_actions.push(dq[i * (sd + ad) + sd + k] + 2.0 * d * inv);
        }
    }
    Ok(ActorObjective {
        loss: -lambda * mean_q + bc * inv,
        lambda,
        grad_actions,
    })
}

/// Loss, λ and parameter gradients of the TD3+BC actor objective.
pub fn actor_gradients(
    policy: &SoloPolicy,
    critic: &Critic,
    batch: &Batch,
    alpha: f64,
) -> Result<(ActorObjective, Gradients<f32>)> {
    let cache = policy.net.forward_cached(&batch.states, batch.size)?;
    let obj = actor_objective(critic, &batch.states, cache.output(), &batch.actions, batch.size, alpha)?;
    let mut g = Gradients::zeros_like(&policy.net);
    policy.net.backward_into(&cache, &obj.grad_actions, &mut g, false)?;
    Ok((obj, g))
}

pub fn actor_update(
    policy: &mut SoloPolicy,
    opt: &mut AdamState<f32>,
    critic: &Critic,
    batch: &Batch,
    alpha: f64,
    lr: f64,
) -> Result<f32> {
    let (obj, g) = actor_gradients(policy, critic, batch, alpha)?;
    adam_step(&mut policy.net, &g, opt, lr)?;
    Ok(obj.loss)
}

/// TD3+BC learner for one task.
#[derive(Debug, Clone)]
pub struct Td3Bc {
    pub actor: SoloPolicy,
    pub actor_target: Mlp<f32>,
    pub actor_opt: AdamState<f32>,
    pub critic: Critic,
    pub cfg: Td3BcConfig,
    pub gamma: f64,
    pub noise: TargetNoise,
    steps_done: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepLosses {
    pub critic: f32,
    pub actor: Option<f32>,
}

impl Td3Bc {
    pub fn new(actor: SoloPolicy, critic: Critic, cfg: Td3BcConfig, task: &TaskSpec) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            actor_target: actor.net.clone(),
            actor_opt: AdamState::new(&actor.net),
            actor,
            critic,
            gamma: task.gamma,
            noise: TargetNoise {
                std: cfg.target_noise,
                clip: cfg.noise_clip,
                action_bound: task.action_bound,
            },
            cfg,
            steps_done: 0,
        })
    }

    /// Fresh actor and critic initialized from `rng`.
    pub fn init<R: Rng + ?Sized>(task: &TaskSpec, index: usize, cfg: Td3BcConfig, rng: &mut R) -> Result<Self> {
        let net = policy_net(task.state_dim(), task.action_dim(), &cfg.hidden, task.action_bound, rng)?;
        let critic = Critic::new(task.state_dim(), task.action_dim(), &cfg.hidden, cfg.tau, rng)?;
        Self::new(SoloPolicy { net, task: index }, critic, cfg, task)
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Critic step every call; actor step and target blending every
    /// `policy_delay`-th call.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<StepLosses> {
        let critic = critic_update(
            &mut self.critic,
            &self.actor_target,
            batch,
            self.gamma,
            &self.noise,
            self.cfg.critic_lr,
            rng,
        )?;
        self.steps_done += 1;
        let mut actor = None;
        if self.steps_done.is_multiple_of(self.cfg.policy_delay) {
            actor = Some(actor_update(
                &mut self.actor,
                &mut self.actor_opt,
                &self.critic,
                batch,
                self.cfg.alpha,
                self.cfg.actor_lr,
            )?);
            soft_update(&mut self.actor_target, &self.actor.net, self.cfg.tau)?;
            self.critic.soft_update_targets()?;
        }
        Ok(StepLosses { critic, actor })
    }
}

/// A trained backbone together with the normalization it was trained under.
#[derive(Debug, Clone)]
pub struct OfflineAgent {
    pub actor: SoloPolicy,
    pub critic: Critic,
    pub normalizer: Normalizer,
}

impl OfflineAgent {
    pub fn act_raw(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let s = self.normalizer.apply_f64(obs);
        Ok(self.actor.act(&s)?.into_iter().map(f64::from).collect())
    }

    pub fn evaluate(&self, task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64> {
        env::evaluate_policy(
            task,
            |o| self.act_raw(o).expect("policy dims match task"),
            episodes,
            seed,
        )
    }
}

/// Runs `steps` TD3+BC iterations on `dataset` with states normalized by the
/// dataset statistics.
pub fn train_offline(dataset: &OfflineDataset, steps: usize, cfg: &Td3BcConfig, seed: u64) -> Result<OfflineAgent> {
    let stats = dataset_stats(dataset)?;
    let normalizer = Normalizer::from_stats(&stats);
    let table = TransitionTable::from_dataset(dataset, &normalizer);
    let mut init_rng = rng::substream(seed, "init", 0);
    let mut learner = Td3Bc::init(&dataset.task, 0, cfg.clone(), &mut init_rng)?;
    let mut batch_rng = rng::substream(seed, "batch", 0);
    let mut noise_rng = rng::substream(seed, "noise", 0);
    for _ in 0..steps {
        let batch = table.sample(cfg.batch_size, &mut batch_rng);
        learner.train_step(&batch, &mut noise_rng)?;
    }
    Ok(OfflineAgent {
        actor: learner.actor,
        critic: learner.critic,
        normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Family;
    use crate::nn::Layer;

    fn const_net(input: usize, value: f32) -> Mlp<f32> {
        Mlp::from_layers(vec![Layer::new(
            input,
            1,
            Activation::Identity,
            vec![0.0; input],
            vec![value],
        )
        .unwrap()])
        .unwrap()
    }

    fn one_transition(r: f32, done: bool) -> Batch {
        Batch {
            size: 1,
            state_dim: 2,
            action_dim: 1,
            states: vec![0.1, 0.2],
            actions: vec![0.3],
            rewards: vec![r],
            next_states: vec![5.0, -3.0],
            dones: vec![if done { 1.0 } else { 0.0 }],
        }
    }

    fn const_critic(a: f32, b: f32) -> Critic {
        Critic::from_networks(const_net(3, a), const_net(3, b), 0.005).unwrap()
    }

    fn some_actor() -> Mlp<f32> {
        policy_net(2, 1, &[4], 1.0, &mut rng::seeded(0)).unwrap()
    }

    const NOISE: TargetNoise = TargetNoise {
        std: 0.2,
        clip: 0.5,
        action_bound: 1.0,
    };

    #[test]
    fn terminal_target_is_reward() {
        let y = td_targets(
            &const_critic(3.0, 5.0),
            &some_actor(),
            &one_transition(2.0, true),
            0.99,
            &NOISE,
            &mut rng::seeded(1),
        )
        .unwrap();
        assert_eq!(y, vec![2.0]);
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let y = td_targets(
            &const_critic(3.0, 5.0),
            &some_actor(),
            &one_transition(1.5, false),
            0.0,
            &NOISE,
            &mut rng::seeded(1),
        )
        .unwrap();
        assert_eq!(y, vec![1.5]);
    }

    #[test]
    fn twin_min_target() {
        let y = td_targets(
            &const_critic(3.0, 5.0),
            &some_actor(),
            &one_transition(1.0, false),
            0.99,
            &NOISE,
            &mut rng::seeded(1),
        )
        .unwrap();
        assert!((y[0] - 3.97).abs() < 1e-6);
    }

    #[test]
    fn lambda_is_alpha_over_mean_abs_q() {
        let critic = const_critic(-5.0, 1.0);
        let obj = actor_objective(&critic, &[0.0, 0.0, 1.0, 1.0], &[0.1, 0.2], &[0.1, 0.2], 2, 2.5).unwrap();
        assert!((obj.lambda - 0.5).abs() < 1e-7);
        let critic = const_critic(2.5, 1.0);
        let obj = actor_objective(&critic, &[0.0, 0.0], &[0.1], &[0.1], 1, 2.5).unwrap();
        assert!((obj.lambda - 1.0).abs() < 1e-7);
        // mean|Q| = 0 hits the floor instead of dividing by zero.
        let critic = const_critic(0.0, 0.0);
        let obj = actor_objective(&critic, &[0.0, 0.0], &[0.1], &[0.1], 1, 2.5).unwrap();
        assert!(obj.lambda.is_finite());
    }

    #[test]
    fn vanishing_alpha_recovers_cloning_gradient() {
        let mut r = rng::seeded(12);
        let task = TaskSpec::new(Family::PmDir, 0.4);
        let learner = Td3Bc::init(
            &task,
            0,
            Td3BcConfig {
                hidden: vec![16, 16],
                ..Default::default()
            },
            &mut r,
        )
        .unwrap();
        let ds = crate::data::generate_dataset(&task, crate::data::Quality::MediumRandom, 4, 2).unwrap();
        let table = TransitionTable::from_dataset(&ds, &Normalizer::identity(4));
        let batch = table.sample(32, &mut r);
        let (_, g) = actor_gradients(&learner.actor, &learner.critic, &batch, 1e-8).unwrap();

        let (_, bc) = crate::nn::compute_gradients(&learner.actor.net, &batch.states, batch.size, |i, out, d| {
            let mut l = 0.0;
            for k in 0..out.len() {
                let e = out[k] - batch.actions[i * 2 + k];
                d[k] = 2.0 * e;
                l += e * e;
            }
            l
        })
        .unwrap();
        let a = g.flat();
        let b = bc.flat();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let task = TaskSpec::new(Family::PmVel, 0.5);
        let ds = crate::data::generate_dataset(&task, crate::data::Quality::Medium, 3, 1).unwrap();
        let cfg = Td3BcConfig {
            hidden: vec![8, 8],
            ..Default::default()
        };
        let agent = train_offline(&ds, 0, &cfg, 4).unwrap();
        let fresh = Td3Bc::init(&task, 0, cfg, &mut rng::substream(4, "init", 0)).unwrap();
        assert_eq!(agent.actor, fresh.actor);
        assert_eq!(agent.critic, fresh.critic);
    }

    #[test]
    fn training_is_deterministic() {
        let task = TaskSpec::new(Family::PmVel, 0.5);
        let ds = crate::data::generate_dataset(&task, crate::data::Quality::Medium, 3, 1).unwrap();
        let cfg = Td3BcConfig {
            hidden: vec![8, 8],
            batch_size: 16,
            ..Default::default()
        };
        let a = train_offline(&ds, 20, &cfg, 4).unwrap();
        let b = train_offline(&ds, 20, &cfg, 4).unwrap();
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critic, b.critic);
    }

    #[test]
    fn policy_outputs_stay_in_box() {
        let mut r = rng::seeded(5);
        let net = policy_net(4, 2, &[16, 16], 1.0, &mut r).unwrap();
        let mut x = vec![0f32; 4];
        for _ in 0..2000 {
            for v in x.iter_mut() {
                *v = r.random_range(-100.0..100.0);
            }
            assert!(net.forward(&x).unwrap().iter().all(|a| a.abs() <= 1.0));
        }
    }
}
