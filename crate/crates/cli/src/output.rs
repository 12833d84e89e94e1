//! CSV tables written by the commands. Floats use the shortest
//! representation that round-trips, so identical runs give identical bytes.

use std::path::Path;

use serde::Serialize;
use tpinn::training::TraceRow;

use crate::commands::CliError;

/// `results.csv`; `adapt_ms` and `train_s` are wall-clock measurements.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub problem: String,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub instance_id: usize,
    pub split: &'static str,
    pub rel_l2: f64,
    pub adapt_ms: f64,
    pub train_s: f64,
}

#[derive(Serialize)]
struct TraceCsv {
    step: usize,
    loss: f64,
    lambda_pde: Option<f64>,
    lambda_pi: Option<f64>,
}

#[derive(Serialize)]
struct GridCsv {
    lambda_pde: f64,
    lambda_pi: f64,
    mean_rel_l2: f64,
}

/// `bench.csv`; `speedup` is the single-PINN wall time over this row's.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub instance_id: usize,
    pub wall_ms: f64,
    pub rel_l2: f64,
    pub reached_target: Option<bool>,
    pub speedup: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), CliError> {
    write_rows(
        path,
        trace.iter().map(|r| TraceCsv {
            step: r.step,
            loss: r.loss,
            lambda_pde: r.lambda_pde,
            lambda_pi: r.lambda_pi,
        }),
    )
}

pub fn write_grid_table(path: &Path, table: &[(f64, f64, f64)]) -> Result<(), CliError> {
    write_rows(
        path,
        table.iter().map(|&(p, q, e)| GridCsv {
            lambda_pde: p,
            lambda_pi: q,
            mean_rel_l2: e,
        }),
    )
}
