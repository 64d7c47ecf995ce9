//! Replay-buffer construction from an offline dataset.
//!
//! [`mbes_fill_buffer`] walks the dataset along the learned policy: the
//! dynamics model proposes the next state and the walk snaps to the most
//! similar dataset state, falling back to the dataset's own successor when
//! the model is not trusted. [`baseline_select`] implements the Surprise,
//! Reward, Random, Coverage, Match and Model selectors.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::agent::Critic;
use crate::data::{decode_episodes, encode_episodes, sidecar_path, Normalizer, OfflineDataset, Transition};
use crate::dynamics::{uncertainty_ok, DynamicsModel, ThresholdRule};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Mbes,
    #[serde(alias = "supervise")]
    Surprise,
    Reward,
    Random,
    Coverage,
    Match,
    Model,
}

impl Selector {
    pub const ALL: [Selector; 7] = [
        Selector::Mbes,
        Selector::Surprise,
        Selector::Reward,
        Selector::Random,
        Selector::Coverage,
        Selector::Match,
        Selector::Model,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Selector::Mbes => "mbes",
            Selector::Surprise => "surprise",
            Selector::Reward => "reward",
            Selector::Random => "random",
            Selector::Coverage => "coverage",
            Selector::Match => "match",
            Selector::Model => "model",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(self, Selector::Mbes | Selector::Surprise | Selector::Match)
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Selector::Mbes | Selector::Model)
    }

    pub fn needs_critic(self) -> bool {
        matches!(self, Selector::Surprise)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "supervise" {
            return Ok(Selector::Surprise);
        }
        Selector::ALL
            .into_iter()
            .find(|sel| sel.as_str() == s)
            .ok_or_else(|| Error::UnknownTag {
                kind: "selector",
                tag: s.into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DistanceMetric {
    #[default]
    #[serde(rename = "state-l2")]
    StateL2,
    #[serde(rename = "q-feature")]
    QFeature,
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state-l2" => Ok(Self::StateL2),
            "q-feature" => Ok(Self::QFeature),
            _ => Err(Error::UnknownTag {
                kind: "metric",
                tag: s.into(),
            }),
        }
    }
}

/// A capacity-bounded subset of one task's dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub transitions: Vec<Transition>,
    /// `(episode, step)` of every stored transition in the source dataset.
    pub provenance: Vec<(usize, usize)>,
    pub capacity: usize,
    pub source_task: usize,
    pub selector: Selector,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    fn from_indices(
        ds: &OfflineDataset,
        picks: Vec<(usize, usize)>,
        capacity: usize,
        cfg: &SelectionConfig,
        selector: Selector,
    ) -> Self {
        Self {
            transitions: picks
                .iter()
                .map(|&(e, t)| ds.episodes[e].transitions[t].clone())
                .collect(),
            provenance: picks,
            capacity,
            source_task: cfg.task_index,
            selector,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferMeta {
    selector: Selector,
    capacity: usize,
    source_task: usize,
    provenance: Vec<(usize, usize)>,
}

/// Encodes a buffer as a one-episode `CORLDATA` payload plus a JSON sidecar
/// carrying the selector tag and provenance.
pub fn encode_buffer(buf: &ReplayBuffer, state_dim: usize, action_dim: usize) -> (Vec<u8>, String) {
    let bin = encode_episodes(state_dim, action_dim, std::iter::once(buf.transitions.as_slice()));
    let meta = BufferMeta {
        selector: buf.selector,
        capacity: buf.capacity,
        source_task: buf.source_task,
        provenance: buf.provenance.clone(),
    };
    (bin, serde_json::to_string_pretty(&meta).expect("metadata serializes"))
}

pub fn decode_buffer(bin: &[u8], meta_json: &str) -> Result<ReplayBuffer> {
    let mut raw = decode_episodes(bin)?;
    let meta: BufferMeta = serde_json::from_str(meta_json)?;
    if raw.episodes.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "buffer payload must hold one run, found {}",
            raw.episodes.len()
        )));
    }
    let transitions = raw.episodes.pop().expect("one run");
    if transitions.len() != meta.provenance.len() || transitions.len() > meta.capacity {
        return Err(Error::InvalidArgument("buffer sidecar disagrees with payload".into()));
    }
    Ok(ReplayBuffer {
        transitions,
        provenance: meta.provenance,
        capacity: meta.capacity,
        source_task: meta.source_task,
        selector: meta.selector,
    })
}

pub fn write_buffer(buf: &ReplayBuffer, state_dim: usize, action_dim: usize, path: &Path) -> Result<()> {
    let (bin, meta) = encode_buffer(buf, state_dim, action_dim);
    std::fs::write(path, bin)?;
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

pub fn read_buffer(path: &Path) -> Result<ReplayBuffer> {
    let bin = std::fs::read(path)?;
    let meta = std::fs::read_to_string(sidecar_path(path))?;
    decode_buffer(&bin, &meta)
}

/// Critic evaluated on raw (unnormalized) states.
#[derive(Clone, Copy)]
pub struct CriticView<'a> {
    pub critic: &'a Critic,
    pub normalizer: &'a Normalizer,
}

impl CriticView<'_> {
    pub fn q(&self, state: &[f32], action: &[f32]) -> Result<f32> {
        self.critic.q1_value(&self.normalizer.apply(state), action)
    }

    pub fn feature(&self, state: &[f32], action: &[f32]) -> Result<Vec<f32>> {
        self.critic.q1_feature(&self.normalizer.apply(state), action)
    }
}

/// Raw-state policy `π_n`.
pub type PolicyFn<'a> = &'a dyn Fn(&[f32]) -> Vec<f32>;

/// Optional references a selector may need.
#[derive(Clone, Copy, Default)]
pub struct SelectorContext<'a> {
    pub policy: Option<PolicyFn<'a>>,
    pub critic: Option<CriticView<'a>>,
    pub model: Option<&'a dyn DynamicsModel>,
    pub gamma: Option<f64>,
}

impl<'a> SelectorContext<'a> {
    fn policy(&self) -> Result<PolicyFn<'a>> {
        self.policy.ok_or(Error::MissingReference("policy"))
    }

    fn critic(&self) -> Result<CriticView<'a>> {
        self.critic.ok_or(Error::MissingReference("critic"))
    }

    fn model(&self) -> Result<&'a dyn DynamicsModel> {
        self.model.ok_or(Error::MissingReference("dynamics model"))
    }

    fn gamma(&self) -> Result<f64> {
        self.gamma.ok_or(Error::MissingReference("gamma"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub metric: DistanceMetric,
    pub threshold: ThresholdRule,
    /// Coverage neighborhood radius; `None` uses the median pairwise state
    /// distance of a subsample.
    pub coverage_radius: Option<f64>,
    pub coverage_subsample: usize,
    /// Set per run by the caller.
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub task_index: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            metric: DistanceMetric::StateL2,
            threshold: ThresholdRule::default(),
            coverage_radius: None,
            coverage_subsample: 1000,
            seed: 0,
            task_index: 0,
        }
    }
}

/// Flat search structure over every dataset state in (episode, step) order.
struct StateIndex<'a> {
    keys: Vec<(usize, usize)>,
    dim: usize,
    points: Vec<f32>,
    metric: DistanceMetric,
    ctx: SelectorContext<'a>,
}

impl<'a> StateIndex<'a> {
    fn build(ds: &OfflineDataset, metric: DistanceMetric, ctx: SelectorContext<'a>) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut keys = Vec::with_capacity(ds.transition_count());
        let mut points = Vec::new();
        let mut dim = 0;
        for (key, tr) in ds.iter_indexed() {
            keys.push(key);
            match metric {
                DistanceMetric::StateL2 => {
                    dim = tr.s.len();
                    points.extend_from_slice(&tr.s);
                }
                DistanceMetric::QFeature => {
                    let f = Self::feature_of(&ctx, &tr.s)?;
                    dim = f.len();
                    points.extend(f);
                }
            }
        }
        Ok(Self {
            keys,
            dim,
            points,
            metric,
            ctx,
        })
    }

    fn feature_of(ctx: &SelectorContext<'_>, state: &[f32]) -> Result<Vec<f32>> {
        let critic = ctx.critic()?;
        let policy = ctx.policy()?;
        critic.feature(state, &policy(state))
    }

    fn embed(&self, query: &[f32]) -> Result<Vec<f32>> {
        match self.metric {
            DistanceMetric::StateL2 => Ok(query.to_vec()),
            DistanceMetric::QFeature => Self::feature_of(&self.ctx, query),
        }
    }

    /// Index of the closest point; ties go to the lowest index. Points with
    /// `skip[i]` set are ignored.
    fn nearest(&self, query: &[f32], skip: Option<&[bool]>) -> Result<Option<usize>> {
        let q = self.embed(query)?;
        if q.len() != self.dim {
            return Err(Error::Shape {
                context: "nearest-state query",
                expected: self.dim,
                got: q.len(),
            });
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
            if skip.is_some_and(|s| s[i]) {
                continue;
            }
            let d: f64 = p
                .iter()
                .zip(&q)
                .map(|(a, b)| {
                    let x = *a as f64 - *b as f64;
                    x * x
                })
                .sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        Ok(best.map(|(_, i)| i))
    }
}

/// `(episode, step)` of the dataset state closest to `query` under `metric`.
pub fn nearest_state(
    dataset: &OfflineDataset,
    query: &[f32],
    metric: DistanceMetric,
    ctx: &SelectorContext<'_>,
) -> Result<(usize, usize)> {
    if metric == DistanceMetric::QFeature {
        ctx.critic()?;
        ctx.policy()?;
    }
    let idx = StateIndex::build(dataset, metric, *ctx)?;
    let i = idx.nearest(query, None)?.expect("non-empty dataset");
    Ok(idx.keys[i])
}

/// Fills a buffer by walking the dataset along `π_n` through the model.
///
/// Each segment starts from a `rho0` sample snapped to its nearest
/// not-yet-selected dataset state. Every visited anchor's transition is
/// appended. From an anchor `(s_t, a_t)` the walk takes `a = π_n(s_t)`; if the
/// model variance at `a` passes the threshold rule the next anchor is the
/// dataset state nearest to the predicted mean, otherwise the dataset's own
/// successor. Terminal anchors and revisits end the segment.
pub fn mbes_fill_buffer(
    dataset: &OfflineDataset,
    ctx: &SelectorContext<'_>,
    capacity: usize,
    rho0: &mut dyn FnMut() -> Vec<f32>,
    cfg: &SelectionConfig,
) -> Result<ReplayBuffer> {
    if capacity == 0 {
        return Err(Error::InvalidArgument("capacity must be >= 1".into()));
    }
    let policy = ctx.policy()?;
    let model = ctx.model()?;
    let index = StateIndex::build(dataset, cfg.metric, *ctx)?;
    let total = index.keys.len();
    let target = capacity.min(total);
    // Flat index of (episode, step): episodes are stored back to back.
    let offsets: Vec<usize> = dataset
        .episodes
        .iter()
        .scan(0, |acc, ep| {
            let o = *acc;
            *acc += ep.len();
            Some(o)
        })
        .collect();

    let mut visited = vec![false; total];
    let mut picks = Vec::with_capacity(target);
    let mut anchor: Option<usize> = None;
    while picks.len() < target {
        let cur = match anchor {
            Some(i) => i,
            None => {
                let s0 = rho0();
                index.nearest(&s0, Some(&visited))?.expect("unvisited states remain")
            }
        };
        visited[cur] = true;
        let (e, t) = index.keys[cur];
        picks.push((e, t));
        let tr = &dataset.episodes[e].transitions[t];
        if tr.done || t + 1 >= dataset.episodes[e].len() {
            anchor = None;
            continue;
        }
        let a = policy(&tr.s);
        let next = if uncertainty_ok(model, &tr.s, &a, &tr.a, cfg.threshold)? {
            let pred = model.predict(&tr.s, &a)?;
            let s_next: Vec<f32> = pred.mean.iter().map(|&v| v as f32).collect();
            index.nearest(&s_next, None)?.expect("non-empty dataset")
        } else {
            offsets[e] + t + 1
        };
        anchor = (!visited[next]).then_some(next);
    }
    Ok(ReplayBuffer::from_indices(
        dataset,
        picks,
        capacity,
        cfg,
        Selector::Mbes,
    ))
}

fn mean_over<F>(ds: &OfflineDataset, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&Transition) -> Result<f64>,
{
    ds.episodes
        .iter()
        .map(|ep| {
            let mut sum = 0.0;
            for tr in &ep.transitions {
                sum += f(tr)?;
            }
            Ok(sum / ep.len().max(1) as f64)
        })
        .collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Per-episode mean criterion used by the trajectory-granular selectors.
pub fn episode_scores(dataset: &OfflineDataset, method: Selector, ctx: &SelectorContext<'_>) -> Result<Vec<f64>> {
    match method {
        Selector::Reward => mean_over(dataset, |tr| Ok(tr.r as f64)),
        Selector::Match => {
            let policy = ctx.policy()?;
            mean_over(dataset, |tr| Ok(sq_dist(&tr.a, &policy(&tr.s))))
        }
        Selector::Model => {
            let model = ctx.model()?;
            mean_over(dataset, |tr| {
                let p = model.predict(&tr.s, &tr.a)?;
                Ok(p.mean
                    .iter()
                    .zip(&tr.s_next)
                    .map(|(m, s)| (m - *s as f64).powi(2))
                    .sum())
            })
        }
        Selector::Surprise => {
            let critic = ctx.critic()?;
            let policy = ctx.policy()?;
            let gamma = ctx.gamma()?;
            mean_over(dataset, |tr| {
                let q = critic.q(&tr.s, &tr.a)? as f64;
                let boot = if tr.done {
                    0.0
                } else {
                    critic.q(&tr.s_next, &policy(&tr.s_next))? as f64
                };
                Ok((tr.r as f64 + gamma * boot - q).abs())
            })
        }
        _ => Err(Error::InvalidArgument(format!("{method} is not trajectory-scored"))),
    }
}

fn rank_episodes(scores: &[f64], descending: bool) -> Result<Vec<usize>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("episode score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    Ok(order)
}

/// Median pairwise Euclidean state distance over a seeded subsample.
pub fn median_pairwise_distance(dataset: &OfflineDataset, subsample: usize, seed: u64) -> f64 {
    let states: Vec<&[f32]> = dataset.iter_indexed().map(|(_, t)| t.s.as_slice()).collect();
    let mut rng = rng::substream(seed, "coverage", 0);
    let k = subsample.min(states.len());
    let picked: Vec<&[f32]> = index::sample(&mut rng, states.len(), k)
        .into_iter()
        .map(|i| states[i])
        .collect();
    let mut dists = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            dists.push(sq_dist(picked[i], picked[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    *m
}

/// Greedy sparsity selection: repeatedly take the state with the fewest
/// already-selected neighbors within radius `d`, breaking ties by the
/// neighbor count over the whole dataset and then by index.
fn coverage_select(states: &[&[f32]], capacity: usize, radius: f64) -> Vec<usize> {
    let n = states.len();
    let r2 = radius * radius;
    let mut dataset_count = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if sq_dist(states[i], states[j]) < r2 {
                dataset_count[i] += 1;
                dataset_count[j] += 1;
            }
        }
    }
    let mut selected_count = vec![0usize; n];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(capacity.min(n));
    while out.len() < capacity.min(n) {
        let pick = (0..n)
            .filter(|&i| !taken[i])
            .min_by_key(|&i| (selected_count[i], dataset_count[i], i))
            .expect("unselected states remain");
        taken[pick] = true;
        out.push(pick);
        for j in 0..n {
            if !taken[j] && sq_dist(states[pick], states[j]) < r2 {
                selected_count[j] += 1;
            }
        }
    }
    out
}

/// Baseline selectors. Trajectory-scored methods keep whole episodes in rank
/// order and truncate the last one to fit.
pub fn baseline_select(
    dataset: &OfflineDataset,
    method: Selector,
    capacity: usize,
    ctx: &SelectorContext<'_>,
    cfg: &SelectionConfig,
) -> Result<ReplayBuffer> {
    if capacity == 0 {
        return Err(Error::InvalidArgument("capacity must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let keys: Vec<(usize, usize)> = dataset.iter_indexed().map(|(k, _)| k).collect();
    let picks = match method {
        Selector::Mbes => {
            return Err(Error::InvalidArgument("use mbes_fill_buffer for MBES".into()));
        }
        Selector::Random => {
            let mut rng = rng::substream(cfg.seed, "random-select", cfg.task_index as u64);
            let mut idx = index::sample(&mut rng, keys.len(), capacity.min(keys.len())).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| keys[i]).collect()
        }
        Selector::Coverage => {
            let radius = match cfg.coverage_radius {
                Some(r) => r,
                None => median_pairwise_distance(dataset, cfg.coverage_subsample, cfg.seed),
            };
            let states: Vec<&[f32]> = dataset.iter_indexed().map(|(_, t)| t.s.as_slice()).collect();
            coverage_select(&states, capacity, radius)
                .into_iter()
                .map(|i| keys[i])
                .collect()
        }
        Selector::Surprise | Selector::Reward | Selector::Match | Selector::Model => {
            let scores = episode_scores(dataset, method, ctx)?;
            let descending = matches!(method, Selector::Surprise | Selector::Reward);
            let mut picks = Vec::with_capacity(capacity);
            for e in rank_episodes(&scores, descending)? {
                for t in 0..dataset.episodes[e].len() {
                    if picks.len() == capacity {
                        break;
                    }
                    picks.push((e, t));
                }
            }
            picks
        }
    };
    Ok(ReplayBuffer::from_indices(dataset, picks, capacity, cfg, method))
}

/// Dispatches to MBES or a baseline selector.
pub fn select_buffer(
    dataset: &OfflineDataset,
    selector: Selector,
    capacity: usize,
    ctx: &SelectorContext<'_>,
    cfg: &SelectionConfig,
    rho0: &mut dyn FnMut() -> Vec<f32>,
) -> Result<ReplayBuffer> {
    match selector {
        Selector::Mbes => mbes_fill_buffer(dataset, ctx, capacity, rho0, cfg),
        other => baseline_select(dataset, other, capacity, ctx, cfg),
    }
}
