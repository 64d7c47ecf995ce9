//! Offline datasets: scripted behavior policies, generation at Medium and
//! Medium-Random quality, statistics, and the `CORLDATA` file format.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! "CORLDATA" | version u32 | state_dim u32 | action_dim u32 | episode_count u32
//! per episode: length u32, then per transition f32 [s | a | r | s' | done]
//! ```
//!
//! Metadata (task, quality, behavior descriptor, episode sources) lives in a
//! JSON sidecar at `<path>.meta.json`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{put_f32, put_u32, Reader};
use crate::env::{self, EnvState, Family, TaskSpec};
use crate::error::{Error, Result};
use crate::rng;

pub const DATA_MAGIC: &[u8; 8] = b"CORLDATA";
pub const DATA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
}

/// Which controller produced an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorKind {
    Medium,
    Random,
}

impl FromStr for BehaviorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medium" => Ok(Self::Medium),
            "random" => Ok(Self::Random),
            _ => Err(Error::UnknownTag {
                kind: "behavior",
                tag: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "M-R")]
    MediumRandom,
}

impl FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Self::Medium),
            "M-R" => Ok(Self::MediumRandom),
            _ => Err(Error::UnknownTag {
                kind: "quality",
                tag: s.into(),
            }),
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quality::Medium => "M",
            Quality::MediumRandom => "M-R",
        })
    }
}

/// Proportional controller parameters of the Medium behavior policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorParams {
    pub gain: f64,
    pub noise_std: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            gain: 1.0,
            noise_std: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub source: BehaviorKind,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.r as f64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub task: TaskSpec,
    pub quality: Quality,
    pub behavior: BehaviorParams,
    pub episodes: Vec<Episode>,
}

impl OfflineDataset {
    pub fn state_dim(&self) -> usize {
        self.task.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.task.action_dim()
    }

    pub fn transition_count(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.transition_count() == 0
    }

    /// Transitions in (episode, step) order with their indices.
    pub fn iter_indexed(&self) -> impl Iterator<Item = ((usize, usize), &Transition)> {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| ep.transitions.iter().enumerate().map(move |(t, tr)| ((e, t), tr)))
    }

    pub fn get(&self, episode: usize, step: usize) -> Option<&Transition> {
        self.episodes.get(episode)?.transitions.get(step)
    }
}

/// Action of a scripted behavior controller, clipped to the action box.
pub fn behavior_action<R: Rng + ?Sized>(
    task: &TaskSpec,
    state: &EnvState,
    kind: BehaviorKind,
    params: &BehaviorParams,
    rng: &mut R,
) -> Vec<f64> {
    let b = task.action_bound;
    match kind {
        BehaviorKind::Random => (0..task.action_dim()).map(|_| rng.random_range(-b..=b)).collect(),
        BehaviorKind::Medium => {
            let target: Vec<f64> = match task.family {
                Family::PmVel => vec![task.param],
                Family::PmDir => task.direction().iter().map(|u| task.v_max * u).collect(),
            };
            let noise = (params.noise_std > 0.0).then(|| Normal::new(0.0, params.noise_std).expect("finite std"));
            target
                .iter()
                .zip(&state.vel)
                .map(|(t, v)| {
                    let eps = noise.map_or(0.0, |n| n.sample(rng));
                    (params.gain * (t - v) + eps).clamp(-b, b)
                })
                .collect()
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Rolls out one episode of `kind` behavior.
pub fn rollout_episode<R: Rng + ?Sized>(
    task: &TaskSpec,
    kind: BehaviorKind,
    params: &BehaviorParams,
    rng: &mut R,
) -> Result<Episode> {
    let mut s = env::reset(task, rng);
    let mut transitions = Vec::with_capacity(task.horizon);
    loop {
        let a = behavior_action(task, &s, kind, params, rng);
        let (next, r, done) = env::step(task, &s, &a)?;
        transitions.push(Transition {
            s: to_f32(&s.observation()),
            a: to_f32(&a),
            r: r as f32,
            s_next: to_f32(&next.observation()),
            done,
        });
        s = next;
        if done {
            break;
        }
    }
    Ok(Episode {
        transitions,
        source: kind,
    })
}

pub fn generate_dataset(task: &TaskSpec, quality: Quality, n_episodes: usize, seed: u64) -> Result<OfflineDataset> {
    generate_dataset_with(task, quality, n_episodes, &BehaviorParams::default(), seed)
}

/// Medium: every episode from the P-controller. Medium-Random: `⌈n/2⌉`
/// controller episodes and `⌊n/2⌋` uniform-random ones in seeded order.
pub fn generate_dataset_with(
    task: &TaskSpec,
    quality: Quality,
    n_episodes: usize,
    params: &BehaviorParams,
    seed: u64,
) -> Result<OfflineDataset> {
    task.validate()?;
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be >= 1".into()));
    }
    if quality == Quality::MediumRandom && n_episodes < 2 {
        return Err(Error::InvalidArgument("M-R datasets need at least 2 episodes".into()));
    }
    let mut order_rng = rng::substream(seed, "mix", 0);
    let mut kinds = match quality {
        Quality::Medium => vec![BehaviorKind::Medium; n_episodes],
        Quality::MediumRandom => {
            let medium = n_episodes.div_ceil(2);
            let mut k = vec![BehaviorKind::Medium; medium];
            k.extend(std::iter::repeat_n(BehaviorKind::Random, n_episodes - medium));
            k
        }
    };
    kinds.shuffle(&mut order_rng);
    let mut roll_rng = rng::substream(seed, "rollout", 0);
    let episodes = kinds
        .into_iter()
        .map(|k| rollout_episode(task, k, params, &mut roll_rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(OfflineDataset {
        task: task.clone(),
        quality,
        behavior: *params,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub episodes: usize,
    pub transitions: usize,
    pub mean_return: f64,
    pub state_mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub state_std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-3;

pub fn dataset_stats(ds: &OfflineDataset) -> Result<DatasetStats> {
    if ds.episodes.is_empty() || ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = ds.state_dim();
    // Welford accumulation over all transition states.
    let mut n = 0usize;
    let mut mean = vec![0.0f64; dim];
    let mut m2 = vec![0.0f64; dim];
    for (_, tr) in ds.iter_indexed() {
        n += 1;
        for (k, &x) in tr.s.iter().enumerate() {
            let x = x as f64;
            let d = x - mean[k];
            mean[k] += d / n as f64;
            m2[k] += d * (x - mean[k]);
        }
    }
    let std = m2.iter().map(|&m| (m / n as f64).sqrt().max(STD_FLOOR)).collect();
    let mean_return = ds.episodes.iter().map(Episode::total_reward).sum::<f64>() / ds.episodes.len() as f64;
    Ok(DatasetStats {
        episodes: ds.episodes.len(),
        transitions: n,
        mean_return,
        state_mean: mean,
        state_std: std,
    })
}

/// Per-dimension affine state normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_stats(stats: &DatasetStats) -> Self {
        Self {
            mean: stats.state_mean.iter().map(|&m| m as f32).collect(),
            std: stats.state_std.iter().map(|&s| s as f32).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, s: &[f32]) -> Vec<f32> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    pub fn apply_into(&self, s: &[f32], out: &mut Vec<f32>) {
        out.extend(
            s.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(x, (m, sd))| (x - m) / sd),
        );
    }

    pub fn apply_f64(&self, s: &[f64]) -> Vec<f32> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (m, sd))| (x as f32 - m) / sd)
            .collect()
    }
}

/// Encodes transition runs in the `CORLDATA` layout.
pub fn encode_episodes<'a>(
    state_dim: usize,
    action_dim: usize,
    episodes: impl ExactSizeIterator<Item = &'a [Transition]>,
) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATA_MAGIC);
    put_u32(&mut buf, DATA_VERSION);
    put_u32(&mut buf, state_dim as u32);
    put_u32(&mut buf, action_dim as u32);
    put_u32(&mut buf, episodes.len() as u32);
    for ep in episodes {
        put_u32(&mut buf, ep.len() as u32);
        for t in ep {
            t.s.iter().for_each(|&x| put_f32(&mut buf, x));
            t.a.iter().for_each(|&x| put_f32(&mut buf, x));
            put_f32(&mut buf, t.r);
            t.s_next.iter().for_each(|&x| put_f32(&mut buf, x));
            put_f32(&mut buf, if t.done { 1.0 } else { 0.0 });
        }
    }
    buf
}

/// Decoded `CORLDATA` payload: dims and transition runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpisodes {
    pub state_dim: usize,
    pub action_dim: usize,
    pub episodes: Vec<Vec<Transition>>,
}

pub fn decode_episodes(bytes: &[u8]) -> Result<RawEpisodes> {
    let mut r = Reader::new(bytes);
    let header = || Error::TruncatedSection("dataset header");
    let magic = r.take(8, || Error::BadMagic { expected: "CORLDATA" })?;
    if magic != DATA_MAGIC {
        return Err(Error::BadMagic { expected: "CORLDATA" });
    }
    let version = r.u32(header)?;
    if version != DATA_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: DATA_VERSION,
        });
    }
    let state_dim = r.u32(header)? as usize;
    let action_dim = r.u32(header)? as usize;
    let count = r.u32(header)? as usize;
    let width = 2 * state_dim + action_dim + 2;
    let mut episodes = Vec::with_capacity(count.min(1 << 16));
    for e in 0..count {
        let short = || Error::Truncated { episode: e };
        let len = r.u32(short)? as usize;
        let vals = r.f32s(len * width, short)?;
        let ep = vals
            .chunks_exact(width)
            .map(|c| {
                let (s, rest) = c.split_at(state_dim);
                let (a, rest) = rest.split_at(action_dim);
                let (rew, rest) = rest.split_at(1);
                let (sn, done) = rest.split_at(state_dim);
                Transition {
                    s: s.to_vec(),
                    a: a.to_vec(),
                    r: rew[0],
                    s_next: sn.to_vec(),
                    done: done[0] != 0.0,
                }
            })
            .collect();
        episodes.push(ep);
    }
    if r.remaining() != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after dataset payload",
            r.remaining()
        )));
    }
    Ok(RawEpisodes {
        state_dim,
        action_dim,
        episodes,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    task: TaskSpec,
    quality: Quality,
    behavior: BehaviorParams,
    episode_sources: Vec<BehaviorKind>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn encode_dataset(ds: &OfflineDataset) -> (Vec<u8>, String) {
    let bin = encode_episodes(
        ds.state_dim(),
        ds.action_dim(),
        ds.episodes.iter().map(|e| e.transitions.as_slice()),
    );
    let meta = DatasetMeta {
        task: ds.task.clone(),
        quality: ds.quality,
        behavior: ds.behavior,
        episode_sources: ds.episodes.iter().map(|e| e.source).collect(),
    };
    (bin, serde_json::to_string_pretty(&meta).expect("metadata serializes"))
}

pub fn decode_dataset(bin: &[u8], meta_json: &str) -> Result<OfflineDataset> {
    let raw = decode_episodes(bin)?;
    let meta: DatasetMeta = serde_json::from_str(meta_json)?;
    if raw.state_dim != meta.task.state_dim() || raw.action_dim != meta.task.action_dim() {
        return Err(Error::InvalidArgument("dataset dims disagree with sidecar task".into()));
    }
    if meta.episode_sources.len() != raw.episodes.len() {
        return Err(Error::InvalidArgument("sidecar episode count mismatch".into()));
    }
    Ok(OfflineDataset {
        task: meta.task,
        quality: meta.quality,
        behavior: meta.behavior,
        episodes: raw
            .episodes
            .into_iter()
            .zip(meta.episode_sources)
            .map(|(transitions, source)| Episode { transitions, source })
            .collect(),
    })
}

pub fn write_dataset(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let (bin, meta) = encode_dataset(ds);
    std::fs::write(path, bin)?;
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset> {
    let bin = std::fs::read(path)?;
    // Validate the payload before touching the sidecar.
    decode_episodes(&bin)?;
    let meta = std::fs::read_to_string(sidecar_path(path))?;
    decode_dataset(&bin, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(quality: Quality, n: usize) -> OfflineDataset {
        let task = TaskSpec::new(Family::PmDir, 0.7);
        generate_dataset(&task, quality, n, 3).unwrap()
    }

    #[test]
    fn proportional_error_zero_gives_zero_action() {
        let task = TaskSpec::new(Family::PmVel, 0.4);
        let s = EnvState {
            pos: vec![1.0],
            vel: vec![0.4],
            step: 3,
        };
        let p = BehaviorParams {
            gain: 1.0,
            noise_std: 0.0,
        };
        let a = behavior_action(&task, &s, BehaviorKind::Medium, &p, &mut rng::seeded(0));
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn direction_controller_clips() {
        let task = TaskSpec::new(Family::PmDir, 0.0);
        let s = EnvState {
            pos: vec![0.0, 0.0],
            vel: vec![0.0, 0.0],
            step: 0,
        };
        let p = BehaviorParams {
            gain: 1.0,
            noise_std: 0.0,
        };
        let a = behavior_action(&task, &s, BehaviorKind::Medium, &p, &mut rng::seeded(0));
        assert_eq!(a, vec![1.0, 0.0]);
    }

    #[test]
    fn random_actions_are_centered() {
        let task = TaskSpec::new(Family::PmDir, 0.0);
        let s = EnvState {
            pos: vec![0.0; 2],
            vel: vec![0.0; 2],
            step: 0,
        };
        let mut rng = rng::seeded(17);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let a = behavior_action(&task, &s, BehaviorKind::Random, &BehaviorParams::default(), &mut rng);
            sum[0] += a[0];
            sum[1] += a[1];
        }
        // Uniform on [-1, 1]: σ = 1/√3.
        let tol = 3.0 * (1.0 / 3.0f64).sqrt() / (n as f64).sqrt();
        assert!(sum.iter().all(|s| (s / n as f64).abs() < tol));
    }

    #[test]
    fn unknown_quality_tag_rejected() {
        assert!("X".parse::<Quality>().is_err());
        assert!("expert".parse::<BehaviorKind>().is_err());
    }

    #[test]
    fn mixture_counts_are_exact() {
        let ds = small(Quality::MediumRandom, 10);
        let medium = ds.episodes.iter().filter(|e| e.source == BehaviorKind::Medium).count();
        assert_eq!(medium, 5);
        assert_eq!(ds.episodes.len() - medium, 5);
        let odd = small(Quality::MediumRandom, 7);
        assert_eq!(
            odd.episodes.iter().filter(|e| e.source == BehaviorKind::Medium).count(),
            4
        );
    }

    #[test]
    fn generation_is_deterministic_and_chained() {
        let a = small(Quality::MediumRandom, 6);
        let b = small(Quality::MediumRandom, 6);
        assert_eq!(encode_dataset(&a), encode_dataset(&b));
        for ep in &a.episodes {
            assert_eq!(ep.len(), a.task.horizon);
            for w in ep.transitions.windows(2) {
                assert_eq!(w[0].s_next, w[1].s);
            }
            assert!(ep.transitions.last().unwrap().done);
            assert!(ep.transitions[..ep.len() - 1].iter().all(|t| !t.done));
        }
    }

    #[test]
    fn constant_reward_episode_mean_return() {
        let task = TaskSpec::new(Family::PmVel, 0.5);
        let tr = Transition {
            s: vec![0.0, 0.0],
            a: vec![0.0],
            r: -0.01,
            s_next: vec![0.0, 0.0],
            done: false,
        };
        let ds = OfflineDataset {
            task,
            quality: Quality::Medium,
            behavior: BehaviorParams::default(),
            episodes: vec![Episode {
                transitions: vec![tr; 100],
                source: BehaviorKind::Medium,
            }],
        };
        let st = dataset_stats(&ds).unwrap();
        assert!((st.mean_return + 1.0).abs() < 1e-6);
        assert!(st.state_std.iter().all(|&s| s == STD_FLOOR));
    }

    #[test]
    fn duplicated_episodes_keep_std() {
        let one = small(Quality::Medium, 1);
        let mut two = one.clone();
        two.episodes.push(one.episodes[0].clone());
        let a = dataset_stats(&one).unwrap();
        let b = dataset_stats(&two).unwrap();
        for (x, y) in a.state_std.iter().zip(&b.state_std) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut ds = small(Quality::Medium, 1);
        ds.episodes.clear();
        assert!(matches!(dataset_stats(&ds), Err(Error::EmptyDataset)));
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let ds = small(Quality::Medium, 3);
        let (mut bin, _) = encode_dataset(&ds);
        let full = bin.clone();
        bin[0] = b'X';
        assert!(matches!(decode_episodes(&bin), Err(Error::BadMagic { .. })));

        // Cut inside the second episode.
        let header = 8 + 4 * 4;
        let ep_bytes = 4 + ds.task.horizon * (2 * 4 + 2 + 2) * 4;
        let cut = &full[..header + ep_bytes + 100];
        assert!(matches!(decode_episodes(cut), Err(Error::Truncated { episode: 1 })));

        let mut wrong = full.clone();
        wrong[8] = 9;
        assert!(matches!(
            decode_episodes(&wrong),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = small(Quality::MediumRandom, 4);
        write_dataset(&ds, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }
}
