//! Per-task training loop and the multi-task reference learner.

use rand::Rng;

use super::policy::{actor_term, dbc_update, replay_term, start_task, MultiHeadPolicy, PolicyGrads, PolicyOptimizer};
use super::projection::{project_agem, project_gem};
use super::regularize::{ewc_gradient, fisher_diagonal, si_gradient, EwcAnchor, RegularizerState};
use super::{Method, SequenceConfig};
use crate::agent::{critic_update, Batch, Critic, TargetNoise, Td3Bc, TransitionTable};
use crate::data::{dataset_stats, Normalizer, OfflineDataset};
use crate::dynamics::{DynamicsModel, EnsembleTrainer};
use crate::env::{self, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::ResultMatrix;
use crate::nn::{soft_update, Mlp};
use crate::rng::{self, derive_seed};
use crate::selection::{select_buffer, CriticView, ReplayBuffer, SelectionConfig, SelectorContext};

/// Everything carried from one task boundary to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState {
    pub policy: MultiHeadPolicy,
    pub regularizer: RegularizerState,
    pub buffers: Vec<ReplayBuffer>,
    pub results: ResultMatrix,
}

impl SequenceState {
    pub fn next_task(&self) -> usize {
        self.results.rows_done()
    }
}

/// Final products of a task-sequence run.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub policy: MultiHeadPolicy,
    pub results: ResultMatrix,
    pub buffers: Vec<ReplayBuffer>,
}

/// Steps through a task sequence one task at a time so callers can
/// checkpoint between tasks. Every random stream is derived from the seed
/// and the task index, so a resumed run matches an uninterrupted one.
pub struct SequenceRunner<'a> {
    cfg: &'a SequenceConfig,
    tasks: &'a [TaskSpec],
    datasets: &'a [OfflineDataset],
    seed: u64,
    state: SequenceState,
}

fn check_inputs(tasks: &[TaskSpec], datasets: &[OfflineDataset], cfg: &SequenceConfig) -> Result<()> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("task sequence is empty".into()));
    }
    if tasks.len() != datasets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tasks but {} datasets",
            tasks.len(),
            datasets.len()
        )));
    }
    for (t, d) in tasks.iter().zip(datasets) {
        t.validate()?;
        if d.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if d.state_dim() != tasks[0].state_dim() || d.action_dim() != tasks[0].action_dim() {
            return Err(Error::InvalidArgument(
                "all tasks must share state and action dims".into(),
            ));
        }
    }
    Ok(())
}

fn sample_buffers<R: Rng + ?Sized>(tables: &[TransitionTable], size: usize, rng: &mut R) -> Vec<Batch> {
    tables.iter().map(|t| t.sample(size, rng)).collect()
}

impl<'a> SequenceRunner<'a> {
    pub fn new(
        tasks: &'a [TaskSpec],
        datasets: &'a [OfflineDataset],
        cfg: &'a SequenceConfig,
        seed: u64,
    ) -> Result<Self> {
        check_inputs(tasks, datasets, cfg)?;
        let t0 = &tasks[0];
        let policy = MultiHeadPolicy::new(
            t0.state_dim(),
            t0.action_dim(),
            &cfg.td3bc.hidden,
            t0.action_bound,
            &mut rng::substream(seed, "policy", 0),
        )?;
        let state = SequenceState {
            policy,
            regularizer: RegularizerState::default(),
            buffers: Vec::new(),
            results: ResultMatrix::new(tasks.len()),
        };
        Ok(Self {
            cfg,
            tasks,
            datasets,
            seed,
            state,
        })
    }

    /// Continues from a state captured at a task boundary.
    pub fn resume(
        tasks: &'a [TaskSpec],
        datasets: &'a [OfflineDataset],
        cfg: &'a SequenceConfig,
        seed: u64,
        state: SequenceState,
    ) -> Result<Self> {
        check_inputs(tasks, datasets, cfg)?;
        let n = state.next_task();
        if state.results.tasks() != tasks.len() {
            return Err(Error::InvalidArgument(format!(
                "state is for {} tasks, sequence has {}",
                state.results.tasks(),
                tasks.len()
            )));
        }
        if state.policy.head_count() != n || state.buffers.len() != n {
            return Err(Error::TaskOrder {
                expected: n,
                got: state.policy.head_count(),
            });
        }
        Ok(Self {
            cfg,
            tasks,
            datasets,
            seed,
            state,
        })
    }

    pub fn state(&self) -> &SequenceState {
        &self.state
    }

    pub fn into_state(self) -> SequenceState {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.next_task() == self.tasks.len()
    }

    pub fn finish(mut self) -> Result<SequenceOutcome> {
        while !self.is_finished() {
            self.run_task()?;
        }
        let s = self.state;
        Ok(SequenceOutcome {
            policy: s.policy,
            results: s.results,
            buffers: s.buffers,
        })
    }

    /// Learns the next task, fills its buffer and appends its result row.
    pub fn run_task(&mut self) -> Result<()> {
        let n = self.state.next_task();
        if n >= self.tasks.len() {
            return Err(Error::InvalidArgument("sequence already finished".into()));
        }
        let (cfg, seed) = (self.cfg, self.seed);
        let task = &self.tasks[n];
        let ds = &self.datasets[n];
        let st = &mut self.state;
        let (sd, ad) = (task.state_dim(), task.action_dim());

        let norm = Normalizer::from_stats(&dataset_stats(ds)?);
        let table = TransitionTable::from_dataset(ds, &norm);
        let mut init = rng::substream(seed, "task-init", n as u64);
        let mu = start_task(&mut st.policy, n, norm.clone(), &cfg.td3bc.hidden, &mut init)?;
        let critic = Critic::new(sd, ad, &cfg.td3bc.hidden, cfg.td3bc.tau, &mut init)?;
        let mut opt = PolicyOptimizer::new(&st.policy, cfg.td3bc.actor_lr, cfg.freeze_trunk);
        let buffer_tables: Vec<TransitionTable> = if cfg.method.uses_buffers() {
            st.buffers
                .iter()
                .enumerate()
                .map(|(j, b)| TransitionTable::from_transitions(&b.transitions, sd, ad, &st.policy.normalizers[j]))
                .collect()
        } else {
            Vec::new()
        };
        let mut ensemble = if cfg.selector.needs_model() {
            Some(EnsembleTrainer::new(
                ds,
                &cfg.ensemble,
                derive_seed(seed, "ensemble", n as u64),
            )?)
        } else {
            None
        };
        let mut batch_rng = rng::substream(seed, "batch", n as u64);
        let mut noise_rng = rng::substream(seed, "noise", n as u64);
        let mut replay_rng = rng::substream(seed, "replay", n as u64);
        let bsz = cfg.td3bc.batch_size;
        let ens_steps = cfg.ensemble_steps();

        let critic = if cfg.method == Method::Dbc {
            let mut learner = Td3Bc::new(mu, critic, cfg.td3bc.clone(), task)?;
            for k in 0..cfg.steps {
                let batch = table.sample(bsz, &mut batch_rng);
                learner.train_step(&batch, &mut noise_rng)?;
                let replay = sample_buffers(&buffer_tables, bsz, &mut replay_rng);
                dbc_update(
                    &mut st.policy,
                    &mut opt,
                    &learner.actor.net,
                    &batch.states,
                    batch.size,
                    &replay,
                    cfg.lambda_r,
                    cfg.replay_scale,
                )?;
                if let Some(e) = ensemble.as_mut().filter(|_| k < ens_steps) {
                    e.train_step()?;
                }
            }
            learner.critic
        } else {
            let mut critic = critic;
            let mut actor_target = st.policy.head_net(n)?;
            let noise = TargetNoise {
                std: cfg.td3bc.target_noise,
                clip: cfg.td3bc.noise_clip,
                action_bound: task.action_bound,
            };
            if cfg.method == Method::Si {
                st.regularizer.si.begin_task(&st.policy.params_flat());
            }
            for k in 0..cfg.steps {
                let batch = table.sample(bsz, &mut batch_rng);
                critic_update(
                    &mut critic,
                    &actor_target,
                    &batch,
                    task.gamma,
                    &noise,
                    cfg.td3bc.critic_lr,
                    &mut noise_rng,
                )?;
                if (k + 1) % cfg.td3bc.policy_delay == 0 {
                    baseline_actor_step(st, &mut opt, &critic, &batch, &buffer_tables, cfg, &mut replay_rng)?;
                    soft_update(&mut actor_target, &st.policy.head_net(n)?, cfg.td3bc.tau)?;
                    critic.soft_update_targets()?;
                }
                if let Some(e) = ensemble.as_mut().filter(|_| k < ens_steps) {
                    e.train_step()?;
                }
            }
            critic
        };

        match cfg.method {
            Method::Ewc => {
                let mut frng = rng::substream(seed, "fisher", n as u64);
                let fisher = fisher_diagonal(&st.policy, n, &table, cfg.ewc.samples, &mut frng)?;
                st.regularizer.ewc.push(EwcAnchor {
                    params: st.policy.params_flat(),
                    fisher,
                });
            }
            Method::Si => st
                .regularizer
                .si
                .consolidate(&st.policy.params_flat(), cfg.si.damping)?,
            _ => {}
        }

        let buffer = {
            let policy = &st.policy;
            let act = |s: &[f32]| policy.act_raw(n, s).expect("state dims match the policy");
            let model = ensemble.as_ref().map(|e| &e.ensemble as &dyn DynamicsModel);
            let ctx = SelectorContext {
                policy: Some(&act),
                critic: Some(CriticView {
                    critic: &critic,
                    normalizer: &norm,
                }),
                model,
                gamma: Some(task.gamma),
            };
            let scfg = SelectionConfig {
                seed: derive_seed(seed, "select", n as u64),
                task_index: n,
                ..cfg.selection.clone()
            };
            let mut rho_rng = rng::substream(seed, "rho0", n as u64);
            let mut rho0 = || {
                env::reset(task, &mut rho_rng)
                    .observation()
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            };
            select_buffer(ds, cfg.selector, cfg.capacity, &ctx, &scfg, &mut rho0)?
        };
        st.buffers.push(buffer);

        let row = (0..=n)
            .map(|j| evaluate_head(&st.policy, j, &self.tasks[j], cfg.eval_episodes, seed))
            .collect::<Result<Vec<_>>>()?;
        st.results.push_row(row)
    }
}

fn evaluate_head(policy: &MultiHeadPolicy, j: usize, task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64> {
    env::evaluate_policy(
        task,
        |o| policy.act_raw_f64(j, o).expect("observation dims match the policy"),
        episodes,
        derive_seed(seed, "eval", j as u64),
    )
}

/// Pooled batch over all buffers: each sample picks a buffer uniformly.
/// Accumulates the mean cloning loss over the pooled samples.
fn pooled_replay<R: Rng + ?Sized>(
    policy: &MultiHeadPolicy,
    tables: &[TransitionTable],
    size: usize,
    rng: &mut R,
    grads: &mut PolicyGrads,
) -> Result<()> {
    let mut counts = vec![0usize; tables.len()];
    for _ in 0..size {
        counts[rng.random_range(0..tables.len())] += 1;
    }
    for (j, (&c, t)) in counts.iter().zip(tables).enumerate() {
        if c > 0 {
            let b = t.sample(c, rng);
            policy.accumulate_mse(j, &b.states, &b.actions, c, c as f32 / size as f32, grads)?;
        }
    }
    Ok(())
}

fn memory_gradient(policy: &MultiHeadPolicy, j: usize, b: &Batch) -> Result<Vec<f64>> {
    let mut g = PolicyGrads::zeros(policy);
    policy.accumulate_mse(j, &b.states, &b.actions, b.size, 1.0, &mut g)?;
    Ok(g.flat(policy))
}

/// Actor step of the baseline methods on the newest head.
fn baseline_actor_step<R: Rng + ?Sized>(
    st: &mut SequenceState,
    opt: &mut PolicyOptimizer,
    critic: &Critic,
    batch: &Batch,
    buffer_tables: &[TransitionTable],
    cfg: &SequenceConfig,
    rng: &mut R,
) -> Result<()> {
    let policy = &st.policy;
    let n = policy.head_count() - 1;
    let mut grads = PolicyGrads::zeros(policy);
    actor_term(policy, n, critic, batch, cfg.td3bc.alpha, &mut grads)?;
    let bsz = batch.size;
    let mut si_record = None;
    match cfg.method {
        Method::None | Method::Dbc => {}
        Method::Bc => {
            let replay = sample_buffers(buffer_tables, bsz, rng);
            replay_term(policy, &replay, cfg.lambda_r, cfg.replay_scale, &mut grads)?;
        }
        Method::Ewc => {
            if st.regularizer.ewc_consolidated() {
                let g = ewc_gradient(&policy.params_flat(), &st.regularizer.ewc, cfg.ewc.strength)?;
                grads.add_flat(policy, &g)?;
            }
        }
        Method::Si => {
            let params = policy.params_flat();
            si_record = Some((grads.flat(policy), params.clone()));
            if st.regularizer.si_consolidated() {
                let g = si_gradient(&params, &st.regularizer.si, cfg.si.strength)?;
                grads.add_flat(policy, &g)?;
            }
        }
        Method::Gem if !buffer_tables.is_empty() => {
            let replay = sample_buffers(buffer_tables, bsz, rng);
            let memories = replay
                .iter()
                .enumerate()
                .map(|(j, b)| memory_gradient(policy, j, b))
                .collect::<Result<Vec<_>>>()?;
            let g = project_gem(&grads.flat(policy), &memories);
            grads = PolicyGrads::from_flat(policy, &g)?;
        }
        Method::Agem if !buffer_tables.is_empty() => {
            let mut r = PolicyGrads::zeros(policy);
            pooled_replay(policy, buffer_tables, bsz, rng, &mut r)?;
            let g = project_agem(&grads.flat(policy), &r.flat(policy));
            grads = PolicyGrads::from_flat(policy, &g)?;
        }
        Method::Gem | Method::Agem => {}
    }
    opt.step(&mut st.policy, &grads)?;
    if let Some((g, before)) = si_record {
        st.regularizer.si.record_step(&g, &before, &st.policy.params_flat())?;
    }
    Ok(())
}

/// Runs the whole sequence in one go.
pub fn learn_task_sequence(
    tasks: &[TaskSpec],
    datasets: &[OfflineDataset],
    cfg: &SequenceConfig,
    seed: u64,
) -> Result<SequenceOutcome> {
    SequenceRunner::new(tasks, datasets, cfg, seed)?.finish()
}

/// Per-task learner state for [`learn_multitask`].
struct HeadLearner {
    table: TransitionTable,
    critic: Critic,
    target: Mlp<f32>,
    noise: TargetNoise,
    gamma: f64,
    updates: usize,
}

/// Joint training on all tasks at once: `steps × N` iterations, each on a
/// uniformly drawn task, updating that task's head and critic with the
/// TD3+BC objective. Returns the final per-task evaluation returns.
pub fn learn_multitask(
    tasks: &[TaskSpec],
    datasets: &[OfflineDataset],
    cfg: &SequenceConfig,
    seed: u64,
) -> Result<(MultiHeadPolicy, Vec<f64>)> {
    check_inputs(tasks, datasets, cfg)?;
    let t0 = &tasks[0];
    let (sd, ad) = (t0.state_dim(), t0.action_dim());
    let mut policy = MultiHeadPolicy::new(
        sd,
        ad,
        &cfg.td3bc.hidden,
        t0.action_bound,
        &mut rng::substream(seed, "policy", 0),
    )?;
    let mut learners = Vec::with_capacity(tasks.len());
    for (n, (task, ds)) in tasks.iter().zip(datasets).enumerate() {
        let norm = Normalizer::from_stats(&dataset_stats(ds)?);
        let table = TransitionTable::from_dataset(ds, &norm);
        let mut init = rng::substream(seed, "task-init", n as u64);
        start_task(&mut policy, n, norm, &cfg.td3bc.hidden, &mut init)?;
        learners.push(HeadLearner {
            table,
            critic: Critic::new(sd, ad, &cfg.td3bc.hidden, cfg.td3bc.tau, &mut init)?,
            target: policy.head_net(n)?,
            noise: TargetNoise {
                std: cfg.td3bc.target_noise,
                clip: cfg.td3bc.noise_clip,
                action_bound: task.action_bound,
            },
            gamma: task.gamma,
            updates: 0,
        });
    }
    let mut opt = PolicyOptimizer::new(&policy, cfg.td3bc.actor_lr, cfg.freeze_trunk);
    let mut pick_rng = rng::substream(seed, "multitask-pick", 0);
    let mut batch_rng = rng::substream(seed, "batch", 0);
    let mut noise_rng = rng::substream(seed, "noise", 0);
    for _ in 0..cfg.steps * tasks.len() {
        let t = pick_rng.random_range(0..tasks.len());
        let l = &mut learners[t];
        let batch = l.table.sample(cfg.td3bc.batch_size, &mut batch_rng);
        critic_update(
            &mut l.critic,
            &l.target,
            &batch,
            l.gamma,
            &l.noise,
            cfg.td3bc.critic_lr,
            &mut noise_rng,
        )?;
        l.updates += 1;
        if l.updates % cfg.td3bc.policy_delay == 0 {
            let mut grads = PolicyGrads::zeros(&policy);
            actor_term(&policy, t, &l.critic, &batch, cfg.td3bc.alpha, &mut grads)?;
            opt.step(&mut policy, &grads)?;
            soft_update(&mut l.target, &policy.head_net(t)?, cfg.td3bc.tau)?;
            l.critic.soft_update_targets()?;
        }
    }
    let returns = (0..tasks.len())
        .map(|j| evaluate_head(&policy, j, &tasks[j], cfg.eval_episodes, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((policy, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Quality};
    use crate::env::Family;
    use crate::selection::Selector;

    fn setup(n: usize) -> (Vec<TaskSpec>, Vec<OfflineDataset>) {
        let tasks: Vec<TaskSpec> = (0..n)
            .map(|i| TaskSpec::new(Family::PmDir, 0.5 + 2.0 * i as f64))
            .collect();
        let ds = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| generate_dataset(t, Quality::MediumRandom, 6, 40 + i as u64).unwrap())
            .collect();
        (tasks, ds)
    }

    fn tiny(method: Method, selector: Selector) -> SequenceConfig {
        let mut c = SequenceConfig {
            steps: 6,
            capacity: 50,
            method,
            selector,
            eval_episodes: 1,
            ..Default::default()
        };
        c.td3bc.hidden = vec![8, 8];
        c.td3bc.batch_size = 16;
        c.ensemble.hidden = vec![8];
        c.ensemble.batch_size = 16;
        c.ewc.samples = 20;
        c.selection.coverage_subsample = 50;
        c
    }

    #[test]
    fn every_method_and_selector_runs() {
        let (tasks, ds) = setup(3);
        for m in Method::ALL {
            let out = learn_task_sequence(&tasks, &ds, &tiny(m, Selector::Random), 1).unwrap();
            assert!(out.results.is_complete(), "{m}");
            assert_eq!(out.policy.head_count(), 3);
            assert!(out.buffers.iter().all(|b| b.len() == 50));
        }
        for s in Selector::ALL {
            let out = learn_task_sequence(&tasks[..2], &ds[..2], &tiny(Method::Dbc, s), 2).unwrap();
            assert!(out.buffers.iter().all(|b| b.len() == 50 && b.selector == s), "{s}");
        }
    }

    #[test]
    fn sequence_is_deterministic_and_resumable() {
        let (tasks, ds) = setup(3);
        let cfg = tiny(Method::Dbc, Selector::Mbes);
        let a = learn_task_sequence(&tasks, &ds, &cfg, 7).unwrap();
        let b = learn_task_sequence(&tasks, &ds, &cfg, 7).unwrap();
        assert_eq!(a, b);

        let mut r = SequenceRunner::new(&tasks, &ds, &cfg, 7).unwrap();
        r.run_task().unwrap();
        r.run_task().unwrap();
        let mid = r.into_state();
        let c = SequenceRunner::resume(&tasks, &ds, &cfg, 7, mid)
            .unwrap()
            .finish()
            .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn ewc_and_si_consolidate() {
        let (tasks, ds) = setup(2);
        let ewc = tiny(Method::Ewc, Selector::Random);
        let mut r = SequenceRunner::new(&tasks, &ds, &ewc, 3).unwrap();
        r.run_task().unwrap();
        r.run_task().unwrap();
        assert_eq!(r.state().regularizer.ewc.len(), 2);
        assert!(r
            .state()
            .regularizer
            .ewc
            .iter()
            .all(|a| a.fisher.iter().all(|&f| f >= 0.0)));

        let si_cfg = tiny(Method::Si, Selector::Random);
        let mut r = SequenceRunner::new(&tasks, &ds, &si_cfg, 3).unwrap();
        r.run_task().unwrap();
        let si = &r.state().regularizer.si;
        assert_eq!(si.omega.len(), r.state().policy.param_count());
        assert!(si.omega.iter().all(|&w| w >= 0.0));
        assert!(si.omega.iter().any(|&w| w > 0.0));
    }

    #[test]
    fn multitask_trains_every_head() {
        let (tasks, ds) = setup(2);
        let cfg = tiny(Method::Bc, Selector::Random);
        let (p, r) = learn_multitask(&tasks, &ds, &cfg, 5).unwrap();
        assert_eq!(p.head_count(), 2);
        assert_eq!(r.len(), 2);
        assert_eq!(learn_multitask(&tasks, &ds, &cfg, 5).unwrap().1, r);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (tasks, ds) = setup(2);
        let cfg = tiny(Method::Dbc, Selector::Random);
        assert!(learn_task_sequence(&tasks, &ds[..1], &cfg, 0).is_err());
        let mut r = SequenceRunner::new(&tasks, &ds, &cfg, 0).unwrap();
        r.run_task().unwrap();
        let mut bad = r.into_state();
        bad.buffers.clear();
        assert!(SequenceRunner::resume(&tasks, &ds, &cfg, 0, bad).is_err());
    }
}
