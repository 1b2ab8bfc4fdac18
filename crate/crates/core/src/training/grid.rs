//! Exhaustive sweep over the three regularization strengths.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::data::io::write_json;
use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model_with, EvalSettings};
use crate::losses::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lambda_div: Vec<f64>,
    pub lambda_in: Vec<f64>,
    pub lambda_aux: Vec<f64>,
}

impl Grid {
    /// Logarithmically spaced reference grid: 3 × 5 × 3 cells.
    pub fn reference() -> Self {
        Self {
            lambda_div: vec![1e-2, 1e-1, 1e0],
            lambda_in: vec![1e-7, 1e-8, 1e-9, 1e-10, 1e-11],
            lambda_aux: vec![1e-4, 1e-3, 1e-2],
        }
    }

    /// Every combination, `lambda_div` outermost and `lambda_aux` innermost.
    pub fn cells(&self) -> Vec<LossWeights> {
        let mut out = Vec::new();
        for &lambda_div in &self.lambda_div {
            for &lambda_in in &self.lambda_in {
                for &lambda_aux in &self.lambda_aux {
                    out.push(LossWeights {
                        lambda_div,
                        lambda_in,
                        lambda_aux,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_div", &self.lambda_div),
            ("lambda_in", &self.lambda_in),
            ("lambda_aux", &self.lambda_aux),
        ] {
            if v.is_empty() {
                return Err(Error::InvalidArgument(format!("grid {name} list is empty")));
            }
        }
        self.cells().iter().try_for_each(LossWeights::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub runs_per_cell: usize,
    /// Fraction of groups used for training; the rest is the test split.
    pub split_ratio: f64,
    pub eval: EvalSettings,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            runs_per_cell: 5,
            split_ratio: 0.8,
            eval: EvalSettings::default(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub seed: u64,
    pub mean_ws: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_index: usize,
    pub weights: LossWeights,
    pub runs: Vec<GridRun>,
    /// Mean over runs; absent when any run failed.
    pub mean_ws: Option<f64>,
    pub failed: bool,
    /// 1-based; failed cells rank after every successful one.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResults {
    pub runs_per_cell: usize,
    /// Sorted by rank.
    pub cells: Vec<GridCell>,
}

impl GridResults {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Run `r` of cell `c` trains with seed `base + c·1000 + r`.
pub fn run_seed(base: u64, cell_index: usize, run_index: usize) -> u64 {
    base.wrapping_add(cell_index as u64 * 1000)
        .wrapping_add(run_index as u64)
}

/// Trains `runs_per_cell` models per cell on the training split, evaluates
/// each on the test split, and ranks cells by mean WS. A failing run marks
/// its cell as failed without stopping the sweep.
pub fn grid_search(
    dataset: &Dataset,
    base: &TrainConfig,
    grid: &Grid,
    options: &GridOptions,
) -> Result<GridResults> {
    grid.validate()?;
    base.validate()?;
    if options.runs_per_cell == 0 {
        return Err(Error::InvalidArgument("runs_per_cell must be positive".into()));
    }
    let (train_set, test_set) = split(dataset, options.split_ratio, base.seed)?;
    if test_set.is_empty() || train_set.n_groups() < 2 {
        return Err(Error::Precondition(format!(
            "split ratio {} of {} groups leaves {} training and {} test groups",
            options.split_ratio,
            dataset.n_groups(),
            train_set.n_groups(),
            test_set.n_groups()
        )));
    }
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..options.runs_per_cell).map(move |r| (c, r)))
        .collect();
    let run_one = |&(c, r): &(usize, usize)| -> GridRun {
        let seed = run_seed(base.seed, c, r);
        let config = TrainConfig {
            weights: cells[c],
            seed,
            ..base.clone()
        };
        let eval = EvalSettings {
            seed,
            ..options.eval.clone()
        };
        let outcome = train(&train_set, &config)
            .and_then(|(params, _)| evaluate_model_with(&params, &test_set, &eval));
        match outcome {
            Ok(report) => GridRun {
                seed,
                mean_ws: Some(report.mean_ws),
                error: None,
            },
            Err(e) => GridRun {
                seed,
                mean_ws: None,
                error: Some(e.to_string()),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<GridRun> = pool.install(|| jobs.par_iter().map(run_one).collect());

    let mut out: Vec<GridCell> = cells
        .iter()
        .enumerate()
        .map(|(c, &weights)| {
            let runs = runs[c * options.runs_per_cell..(c + 1) * options.runs_per_cell].to_vec();
            let failed = runs.iter().any(|r| r.mean_ws.is_none());
            let mean_ws = (!failed)
                .then(|| runs.iter().filter_map(|r| r.mean_ws).sum::<f64>() / runs.len() as f64);
            GridCell {
                cell_index: c,
                weights,
                runs,
                mean_ws,
                failed,
                rank: 0,
            }
        })
        .collect();
    out.sort_by(|a, b| match (a.mean_ws, b.mean_ws) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.cell_index.cmp(&b.cell_index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cell_index.cmp(&b.cell_index),
    });
    for (i, c) in out.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(GridResults {
        runs_per_cell: options.runs_per_cell,
        cells: out,
    })
}
