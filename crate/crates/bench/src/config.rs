//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use corl_core::agent::Td3BcConfig;
use corl_core::continual::{EwcConfig, Method, ReplayScale, SequenceConfig, SiConfig};
use corl_core::data::{BehaviorParams, Quality};
use corl_core::dynamics::EnsembleConfig;
use corl_core::env::Family;
use corl_core::selection::{SelectionConfig, Selector};

use crate::error::BenchError;

fn default_lambda_r() -> f64 {
    1.0
}
fn default_capacity() -> usize {
    1000
}
fn default_n_tasks() -> usize {
    5
}
fn default_steps() -> usize {
    10_000
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_dataset_episodes() -> usize {
    200
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_eval_episodes() -> usize {
    10
}

/// Values swept by `corl-bench sweep`. Empty lists keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda_r: Vec<f64>,
    pub capacity: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub quality: Quality,
    pub selector: Selector,
    pub method: Method,
    #[serde(default = "default_lambda_r")]
    pub lambda_r: f64,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_n_tasks")]
    pub n_tasks: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Episodes per task dataset.
    #[serde(default = "default_dataset_episodes")]
    pub dataset_episodes: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub replay_scale: ReplayScale,
    #[serde(default)]
    pub freeze_trunk: bool,
    #[serde(default)]
    pub behavior: BehaviorParams,
    #[serde(default)]
    pub td3bc: Td3BcConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub ensemble_steps: Option<usize>,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub ewc: EwcConfig,
    #[serde(default)]
    pub si: SiConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(family: Family, quality: Quality, selector: Selector, method: Method) -> Self {
        Self {
            family,
            quality,
            selector,
            method,
            lambda_r: default_lambda_r(),
            capacity: default_capacity(),
            n_tasks: default_n_tasks(),
            steps: default_steps(),
            seeds: default_seeds(),
            dataset_episodes: default_dataset_episodes(),
            output_dir: default_output_dir(),
            eval_episodes: default_eval_episodes(),
            replay_scale: ReplayScale::default(),
            freeze_trunk: false,
            behavior: BehaviorParams::default(),
            td3bc: Td3BcConfig::default(),
            ensemble: EnsembleConfig::default(),
            ensemble_steps: None,
            selection: SelectionConfig::default(),
            ewc: EwcConfig::default(),
            si: SiConfig::default(),
            sweep: SweepGrid::default(),
        }
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            lambda_r: self.lambda_r,
            steps: self.steps,
            capacity: self.capacity,
            selector: self.selector,
            method: self.method,
            eval_episodes: self.eval_episodes,
            replay_scale: self.replay_scale,
            freeze_trunk: self.freeze_trunk,
            td3bc: self.td3bc.clone(),
            ensemble: self.ensemble.clone(),
            ensemble_steps: self.ensemble_steps,
            selection: self.selection.clone(),
            ewc: self.ewc.clone(),
            si: self.si.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |field: &str, msg: &str| {
            Err(BenchError::Invalid {
                field: field.into(),
                message: msg.into(),
            })
        };
        if self.n_tasks == 0 {
            return bad("n_tasks", "must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "must not repeat a seed");
        }
        if self.dataset_episodes == 0 {
            return bad("dataset_episodes", "must be >= 1");
        }
        if !(self.behavior.gain.is_finite() && self.behavior.noise_std >= 0.0) {
            return bad("behavior", "gain must be finite and noise_std >= 0");
        }
        if self.sweep.lambda_r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("sweep.lambda_r", "values must be finite and >= 0");
        }
        if self.sweep.capacity.contains(&0) {
            return bad("sweep.capacity", "values must be >= 1");
        }
        let field = match self.sequence_config().validate() {
            Ok(()) => return Ok(()),
            Err(e) => (e.to_string(), e),
        };
        let msg = field.0;
        let name = [
            "lambda_r",
            "steps",
            "capacity",
            "eval_episodes",
            "ewc",
            "td3bc",
            "ensemble",
        ]
        .into_iter()
        .find(|f| msg.contains(f))
        .unwrap_or("config");
        bad(name, &msg)
    }

    /// The grid points of a sweep, in row-major (λ_r, capacity) order.
    pub fn sweep_points(&self) -> Vec<ExperimentConfig> {
        let lambdas = if self.sweep.lambda_r.is_empty() {
            vec![self.lambda_r]
        } else {
            self.sweep.lambda_r.clone()
        };
        let caps = if self.sweep.capacity.is_empty() {
            vec![self.capacity]
        } else {
            self.sweep.capacity.clone()
        };
        let mut out = Vec::new();
        for &l in &lambdas {
            for &c in &caps {
                let mut cfg = self.clone();
                cfg.lambda_r = l;
                cfg.capacity = c;
                cfg.sweep = SweepGrid::default();
                out.push(cfg);
            }
        }
        out
    }

    /// Directory name of a sweep point.
    pub fn point_name(&self) -> String {
        format!("lambda_r={}_capacity={}", self.lambda_r, self.capacity)
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, BenchError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            BenchError::Malformed(inner.to_string())
        } else {
            BenchError::Invalid {
                field,
                message: inner.to_string(),
            }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::ConfigIo {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), BenchError> {
    let mut json = serde_json::to_string_pretty(cfg).map_err(corl_core::error::Error::from)?;
    json.push('\n');
    fs::write(path, json).map_err(corl_core::error::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbes", "method": "dbc"}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.lambda_r, 1.0);
        assert_eq!(cfg.capacity, 1000);
        assert_eq!(cfg.n_tasks, 5);
        assert_eq!(cfg.steps, 10_000);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(
            cfg,
            ExperimentConfig::new(Family::PmDir, Quality::MediumRandom, Selector::Mbes, Method::Dbc)
        );
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.lambda_r = 0.3;
        cfg.td3bc.tau = 0.1 + 0.2;
        cfg.sweep.capacity = vec![1000, 10_000];
        let p = dir.path().join("c.json");
        save_config(&cfg, &p).unwrap();
        assert_eq!(load_config(&p).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let err =
            parse_config(r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbsx", "method": "dbc"}"#).unwrap_err();
        assert!(
            matches!(&err, BenchError::Invalid { field, .. } if field == "selector"),
            "{err}"
        );
        let err = parse_config(
            r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbes", "method": "dbc", "lambda_r": -1}"#,
        )
        .unwrap_err();
        assert!(
            matches!(&err, BenchError::Invalid { field, .. } if field == "lambda_r"),
            "{err}"
        );
        let err = parse_config(
            r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbes", "method": "dbc", "capcity": 5}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("capcity"), "{err}");
        let err = parse_config(
            r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbes", "method": "dbc", "td3bc": {"tau": 0}}"#,
        )
        .unwrap_err();
        assert!(
            matches!(&err, BenchError::Invalid { field, .. } if field == "td3bc"),
            "{err}"
        );
        assert!(matches!(parse_config("{\"family\": "), Err(BenchError::Malformed(_))));
        let missing = parse_config(r#"{"family": "PM-Dir"}"#).unwrap_err();
        assert!(missing.to_string().contains("quality"), "{missing}");
    }

    #[test]
    fn sweep_grid_points() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.sweep_points().len(), 1);
        cfg.sweep.lambda_r = vec![0.3, 1.0, 3.0];
        let pts = cfg.sweep_points();
        assert_eq!(pts.iter().map(|p| p.lambda_r).collect::<Vec<_>>(), vec![0.3, 1.0, 3.0]);
        assert_eq!(pts[0].point_name(), "lambda_r=0.3_capacity=1000");
    }
}
