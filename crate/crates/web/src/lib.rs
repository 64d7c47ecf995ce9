//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns JSON text; the page parses it with `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use corl_core::continual::{project_agem, project_gem};
use corl_core::data::{dataset_stats, generate_dataset, Quality};
use corl_core::env::{Family, TaskSpec};
use corl_core::metrics::{compute_bwt, compute_per, ResultMatrix};
use corl_core::selection::{select_buffer, SelectionConfig, Selector, SelectorContext};

#[derive(Serialize)]
struct Overlay {
    /// Per episode, the first two state coordinates of every step.
    episodes: Vec<Vec<[f32; 2]>>,
    medium: Vec<bool>,
    selected: Vec<(usize, usize)>,
    mean_return: f64,
    buffer_return: f64,
}

pub fn overlay_json(
    family: &str,
    param: f64,
    quality: &str,
    episodes: usize,
    selector: &str,
    capacity: usize,
    seed: u64,
) -> Result<String, String> {
    let family: Family = family.parse().map_err(|e| format!("{e}"))?;
    let quality: Quality = quality.parse().map_err(|e| format!("{e}"))?;
    let selector: Selector = selector.parse().map_err(|e| format!("{e}"))?;
    if !matches!(selector, Selector::Random | Selector::Reward | Selector::Coverage) {
        return Err(format!(
            "{selector} needs trained networks; pick random, reward or coverage"
        ));
    }
    if episodes == 0 || episodes > 100 {
        return Err("episodes must be between 1 and 100".into());
    }
    let task = TaskSpec::new(family, param);
    let ds = generate_dataset(&task, quality, episodes, seed).map_err(|e| e.to_string())?;
    let cfg = SelectionConfig {
        seed,
        coverage_subsample: 300,
        ..Default::default()
    };
    let mut rho0 = || vec![0.0f32; task.state_dim()];
    let buf = select_buffer(
        &ds,
        selector,
        capacity.max(1),
        &SelectorContext::default(),
        &cfg,
        &mut rho0,
    )
    .map_err(|e| e.to_string())?;
    let steps = ds.episodes.first().map_or(1, |e| e.len()) as f64;
    let buffer_return = buf.transitions.iter().map(|t| t.r as f64).sum::<f64>() / buf.len() as f64 * steps;
    let out = Overlay {
        episodes: ds
            .episodes
            .iter()
            .map(|ep| ep.transitions.iter().map(|t| [t.s[0], t.s[1]]).collect())
            .collect(),
        medium: ds
            .episodes
            .iter()
            .map(|ep| ep.source == corl_core::data::BehaviorKind::Medium)
            .collect(),
        selected: buf.provenance,
        mean_return: dataset_stats(&ds).map_err(|e| e.to_string())?.mean_return,
        buffer_return,
    };
    Ok(serde_json::to_string(&out).expect("overlay serializes"))
}

#[derive(Serialize)]
struct Projection {
    gem: Vec<f64>,
    agem: Vec<f64>,
    /// Mean of the memory gradients, the A-GEM reference.
    reference: Vec<f64>,
}

/// Projects the 2-D gradient `g` against the memory gradients in `memories`
/// (flattened pairs).
pub fn project_json(g: &[f64], memories: &[f64]) -> Result<String, String> {
    if g.len() != 2 || !memories.len().is_multiple_of(2) || memories.is_empty() {
        return Err("expected a 2-D gradient and at least one 2-D memory gradient".into());
    }
    if g.iter().chain(memories).any(|v| !v.is_finite()) {
        return Err("gradients must be finite".into());
    }
    let mem: Vec<Vec<f64>> = memories.chunks(2).map(<[f64]>::to_vec).collect();
    let k = mem.len() as f64;
    let reference = vec![
        mem.iter().map(|m| m[0]).sum::<f64>() / k,
        mem.iter().map(|m| m[1]).sum::<f64>() / k,
    ];
    let out = Projection {
        gem: project_gem(g, &mem),
        agem: project_agem(g, &reference),
        reference,
    };
    Ok(serde_json::to_string(&out).expect("projection serializes"))
}

#[derive(Serialize)]
struct Metrics {
    per: f64,
    bwt: Option<f64>,
}

/// PER and BWT of a lower-triangular matrix given one row per line, with
/// entries separated by commas or whitespace.
pub fn metrics_json(text: &str) -> Result<String, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let m = ResultMatrix::from_rows(rows.len(), rows).map_err(|e| e.to_string())?;
    let per = compute_per(&m).map_err(|e| e.to_string())?;
    let bwt = if m.tasks() >= 2 {
        Some(compute_bwt(&m).map_err(|e| e.to_string())?)
    } else {
        None
    };
    Ok(serde_json::to_string(&Metrics { per, bwt }).expect("metrics serialize"))
}

#[wasm_bindgen]
pub fn overlay(
    family: &str,
    param: f64,
    quality: &str,
    episodes: u32,
    selector: &str,
    capacity: u32,
    seed: u32,
) -> Result<String, JsError> {
    overlay_json(
        family,
        param,
        quality,
        episodes as usize,
        selector,
        capacity as usize,
        seed as u64,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn project(g: &[f64], memories: &[f64]) -> Result<String, JsError> {
    project_json(g, memories).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn metrics(text: &str) -> Result<String, JsError> {
    metrics_json(text).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_from_text() {
        let v: serde_json::Value = serde_json::from_str(&metrics_json("10\n11, 12\n6 9 15\n").unwrap()).unwrap();
        assert_eq!(v["per"], 10.0);
        assert_eq!(v["bwt"], 3.5);
        let one: serde_json::Value = serde_json::from_str(&metrics_json("7").unwrap()).unwrap();
        assert!(one["bwt"].is_null());
        assert!(metrics_json("1 2\n3").is_err());
        assert!(metrics_json("x").is_err());
    }

    #[test]
    fn projection_example() {
        let v: serde_json::Value = serde_json::from_str(&project_json(&[1.0, -1.0], &[0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(v["agem"], serde_json::json!([1.0, 0.0]));
        assert_eq!(v["gem"], serde_json::json!([1.0, 0.0]));
        assert!(project_json(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn overlay_marks_selected_steps() {
        let v: serde_json::Value =
            serde_json::from_str(&overlay_json("PM-Dir", 0.5, "M-R", 6, "reward", 150, 1).unwrap()).unwrap();
        assert_eq!(v["episodes"].as_array().unwrap().len(), 6);
        assert_eq!(v["selected"].as_array().unwrap().len(), 150);
        assert!(overlay_json("PM-Dir", 0.5, "M-R", 6, "mbes", 10, 1).is_err());
    }
}
