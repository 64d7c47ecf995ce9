//! Seeded experiment execution and report files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use corl_core::continual::SequenceRunner;
use corl_core::data::{generate_dataset_with, sidecar_path, write_dataset, OfflineDataset};
use corl_core::env::{sample_tasks, TaskSpec};
use corl_core::error::Error;
use corl_core::metrics::{emit_report, parse_raw_csv, ResultMatrix, Summary};
use corl_core::rng::derive_seed;
use corl_core::selection::{read_buffer, write_buffer};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::{load_config, save_config, ExperimentConfig};
use crate::error::BenchError;

pub const THREADS_ENV: &str = "CORL_BENCH_THREADS";

/// Task sequence and datasets of one seed.
pub fn seed_inputs(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<TaskSpec>, Vec<OfflineDataset>), BenchError> {
    let tasks = sample_tasks(cfg.family.as_str(), cfg.n_tasks, derive_seed(seed, "tasks", 0))?;
    let datasets = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            generate_dataset_with(
                t,
                cfg.quality,
                cfg.dataset_episodes,
                &cfg.behavior,
                derive_seed(seed, "data", i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tasks, datasets))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    seed_dir(out, seed).join("checkpoint.corlckpt")
}

pub fn buffer_path(out: &Path, seed: u64, task: usize) -> PathBuf {
    seed_dir(out, seed).join(format!("buffer-{task}.corldata"))
}

/// Runs one seed, checkpointing after every task. With `resume`, an existing
/// checkpoint for the same config and seed is continued.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out: &Path, resume: bool) -> Result<ResultMatrix, BenchError> {
    let seq = cfg.sequence_config();
    let (tasks, datasets) = seed_inputs(cfg, seed)?;
    fs::create_dir_all(seed_dir(out, seed)).map_err(Error::from)?;
    let ckpt = checkpoint_path(out, seed);
    let mut runner = if resume && ckpt.exists() {
        let ck = read_checkpoint(&ckpt)?;
        if ck.seed != seed || ck.config != seq || ck.tasks != tasks {
            return Err(Error::InvalidArgument(format!(
                "{} was written by a different config or seed",
                ckpt.display()
            ))
            .into());
        }
        SequenceRunner::resume(&tasks, &datasets, &seq, seed, ck.state)?
    } else {
        SequenceRunner::new(&tasks, &datasets, &seq, seed)?
    };
    while !runner.is_finished() {
        runner.run_task()?;
        let ck = Checkpoint {
            seed,
            config: seq.clone(),
            tasks: tasks.clone(),
            state: runner.state().clone(),
        };
        write_checkpoint(&ck, &ckpt)?;
    }
    let state = runner.into_state();
    let (sd, ad) = (tasks[0].state_dim(), tasks[0].action_dim());
    for (n, b) in state.buffers.iter().enumerate() {
        write_buffer(b, sd, ad, &buffer_path(out, seed, n))?;
    }
    Ok(state.results)
}

/// Thread pool capped by `CORL_BENCH_THREADS` when set.
fn pool() -> Result<rayon::ThreadPool, BenchError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| BenchError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| BenchError::Usage(format!("thread pool: {e}")))
}

/// Runs every seed and writes `config.json`, `raw.csv` and `summary.json`
/// into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64], out: &Path, resume: bool) -> Result<Summary, BenchError> {
    fs::create_dir_all(out).map_err(Error::from)?;
    save_config(cfg, &out.join("config.json"))?;
    let runs = pool()?.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(cfg, s, out, resume).map(|m| (s, m)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(emit_report(&runs, cfg.method.as_str(), cfg.selector.as_str(), out)?)
}

/// Runs every grid point into its own subdirectory and writes `sweep.csv`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<Vec<(ExperimentConfig, Summary)>, BenchError> {
    let mut rows = Vec::new();
    for point in cfg.sweep_points() {
        let s = run_experiment(&point, seeds, &out.join(point.point_name()), resume)?;
        rows.push((point, s));
    }
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::from("lambda_r,capacity,per_mean,per_std,bwt_mean,bwt_std,n_seeds\n");
    for (p, s) in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.lambda_r,
            p.capacity,
            s.per_mean,
            s.per_std,
            fmt(s.bwt_mean),
            fmt(s.bwt_std),
            s.n_seeds
        ));
    }
    fs::write(out.join("sweep.csv"), text).map_err(Error::from)?;
    Ok(rows)
}

/// Recomputes `summary.json` from `raw.csv` in `dir`. Method and selector
/// come from `cfg`, or from the `config.json` a run left in `dir`.
pub fn report(dir: &Path, cfg: Option<&ExperimentConfig>) -> Result<Summary, BenchError> {
    let stored;
    let cfg = match cfg {
        Some(c) => c,
        None => {
            stored = load_config(&dir.join("config.json"))?;
            &stored
        }
    };
    let raw = fs::read(dir.join("raw.csv")).map_err(Error::from)?;
    let runs = parse_raw_csv(&raw)?;
    Ok(emit_report(&runs, cfg.method.as_str(), cfg.selector.as_str(), dir)?)
}

/// Writes every seed's task datasets as `seed-<s>/task-<i>.corldata` plus
/// sidecars, and the task list as `seed-<s>/tasks.json`.
pub fn gen_data(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut written = Vec::new();
    for &seed in seeds {
        let (tasks, datasets) = seed_inputs(cfg, seed)?;
        let dir = seed_dir(out, seed);
        fs::create_dir_all(&dir).map_err(Error::from)?;
        for (i, ds) in datasets.iter().enumerate() {
            let p = dir.join(format!("task-{i}.corldata"));
            write_dataset(ds, &p)?;
            written.push(p);
        }
        let json = serde_json::to_string_pretty(&tasks).map_err(Error::from)?;
        fs::write(dir.join("tasks.json"), json + "\n").map_err(Error::from)?;
    }
    Ok(written)
}

/// Human-readable listing of a buffer's provenance.
pub fn inspect_buffer(path: &Path) -> Result<String, BenchError> {
    if !sidecar_path(path).exists() {
        return Err(Error::InvalidArgument(format!("missing sidecar {}", sidecar_path(path).display())).into());
    }
    let b = read_buffer(path)?;
    let mut text = format!(
        "# selector={} source_task={} capacity={} transitions={}\nepisode,step\n",
        b.selector,
        b.source_task,
        b.capacity,
        b.len()
    );
    for (e, t) in &b.provenance {
        text.push_str(&format!("{e},{t}\n"));
    }
    Ok(text)
}
