//! PER/BWT over lower-triangular result matrices and report emission.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a[i][j]`: evaluation return on task `j` after learning task `i`
/// (zero-based, `j ≤ i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl ResultMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            rows: Vec::with_capacity(tasks),
        }
    }

    /// Builds a matrix from complete lower-triangular rows.
    pub fn from_rows(tasks: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(tasks);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn rows_done(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks
    }

    /// Appends the row for the next task; it must hold one entry per task
    /// learned so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let i = self.rows.len();
        if i >= self.tasks {
            return Err(Error::InvalidArgument(format!(
                "matrix already has {} rows",
                self.tasks
            )));
        }
        if row.len() != i + 1 {
            return Err(Error::Shape {
                context: "result row",
                expected: i + 1,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("result entry"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied()
    }
}

fn final_row(m: &ResultMatrix) -> Result<&[f64]> {
    if m.tasks == 0 || !m.is_complete() {
        return Err(Error::UndefinedMetric("result matrix is incomplete"));
    }
    Ok(&m.rows[m.tasks - 1])
}

/// Mean final return over all tasks.
pub fn compute_per(m: &ResultMatrix) -> Result<f64> {
    let last = final_row(m)?;
    Ok(last.iter().sum::<f64>() / m.tasks as f64)
}

/// Mean drop from each task's just-learned return to its final return.
/// Positive values mean forgetting.
pub fn compute_bwt(m: &ResultMatrix) -> Result<f64> {
    let last = final_row(m)?;
    let n = m.tasks;
    if n < 2 {
        return Err(Error::UndefinedMetric("BWT needs at least two tasks"));
    }
    let drop: f64 = (0..n - 1).map(|j| m.rows[j][j] - last[j]).sum();
    Ok(drop / (n - 1) as f64)
}

/// Seed-aggregated metrics written next to `raw.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub selector: String,
    pub per_mean: f64,
    pub per_std: f64,
    pub bwt_mean: Option<f64>,
    pub bwt_std: Option<f64>,
    pub n_seeds: usize,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates per-seed matrices into a [`Summary`].
pub fn summarize(runs: &[(u64, ResultMatrix)], method: &str, selector: &str) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one seed".into()));
    }
    let pers = runs.iter().map(|(_, m)| compute_per(m)).collect::<Result<Vec<_>>>()?;
    let (per_mean, per_std) = mean_std(&pers);
    let (bwt_mean, bwt_std) = if runs[0].1.tasks() >= 2 {
        let bwts = runs.iter().map(|(_, m)| compute_bwt(m)).collect::<Result<Vec<_>>>()?;
        let (m, s) = mean_std(&bwts);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(Summary {
        method: method.into(),
        selector: selector.into(),
        per_mean,
        per_std,
        bwt_mean,
        bwt_std,
        n_seeds: runs.len(),
    })
}

/// Serializes matrices as `seed,task_i,task_j,return` rows with one-based
/// task indices.
pub fn raw_csv(runs: &[(u64, ResultMatrix)]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["seed", "task_i", "task_j", "return"])
        .map_err(csv_err)?;
    for (seed, m) in runs {
        for (i, row) in m.rows().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record([
                    seed.to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses `raw.csv` back into per-seed matrices of `tasks` tasks, in the
/// order seeds first appear.
pub fn parse_raw_csv(bytes: &[u8]) -> Result<Vec<(u64, ResultMatrix)>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut cells: Vec<(u64, Vec<(usize, usize, f64)>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |k: usize| {
            rec.get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("raw.csv row missing column {k}")))
        };
        let bad = |what: &str| Error::InvalidArgument(format!("raw.csv: bad {what}"));
        let seed: u64 = field(0)?.parse().map_err(|_| bad("seed"))?;
        let i: usize = field(1)?.parse().map_err(|_| bad("task_i"))?;
        let j: usize = field(2)?.parse().map_err(|_| bad("task_j"))?;
        let v: f64 = field(3)?.parse().map_err(|_| bad("return"))?;
        if i == 0 || j == 0 || j > i {
            return Err(bad("task indices"));
        }
        match cells.iter_mut().find(|(s, _)| *s == seed) {
            Some((_, c)) => c.push((i - 1, j - 1, v)),
            None => cells.push((seed, vec![(i - 1, j - 1, v)])),
        }
    }
    cells
        .into_iter()
        .map(|(seed, c)| {
            let n = c.iter().map(|&(i, _, _)| i + 1).max().unwrap_or(0);
            let mut rows: Vec<Vec<Option<f64>>> = (0..n).map(|i| vec![None; i + 1]).collect();
            for (i, j, v) in c {
                rows[i][j] = Some(v);
            }
            let rows = rows
                .into_iter()
                .map(|r| r.into_iter().collect::<Option<Vec<f64>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::InvalidArgument(format!("raw.csv: seed {seed} has missing entries")))?;
            Ok((seed, ResultMatrix::from_rows(n, rows)?))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// Writes `raw.csv` and `summary.json` into `dir`.
pub fn emit_report(runs: &[(u64, ResultMatrix)], method: &str, selector: &str, dir: &Path) -> Result<Summary> {
    let summary = summarize(runs, method, selector)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("raw.csv"), raw_csv(runs)?)?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(summary)
}
