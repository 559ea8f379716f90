//! Thread pool setup and the parallel drivers over paths.
//!
//! Every path is fitted and evaluated independently with its own seeded
//! streams, so results do not depend on the worker count.

use rayon::prelude::*;
use rayon::ThreadPool;

use wavelatent_core::linalg::Matrix;
use wavelatent_core::pipeline::{assemble_bundle, assemble_report, fit_path, prepare, EvalReport, PipelineBundle, PipelineConfig};
use wavelatent_core::{DatasetGrid, StateVector};

use crate::error::{Error, Result};

pub const THREADS_VAR: &str = "WAVELATENT_THREADS";

/// Worker cap from `WAVELATENT_THREADS`; `None` leaves rayon's default.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn pool() -> Result<ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

/// Fits every path concurrently; identical to the sequential fit.
pub fn fit(train: &DatasetGrid, config: &PipelineConfig) -> Result<PipelineBundle> {
    let (data, scaling) = prepare(train, config)?;
    let paths = data
        .par_iter()
        .map(|d| fit_path(d, config))
        .collect::<wavelatent_core::Result<Vec<_>>>()?;
    Ok(assemble_bundle(train, config, paths, scaling))
}

/// State estimate per record, `None` for records on paths without a model.
pub fn estimate(bundle: &PipelineBundle, ds: &DatasetGrid) -> Result<Vec<Option<StateVector>>> {
    let per_path = bundle
        .path_ids()
        .into_par_iter()
        .map(|path| {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.records()[i].path_id == path).collect();
            if idx.is_empty() {
                return Ok((idx, Vec::new()));
            }
            let rows: Vec<&[f64]> = idx.iter().map(|&i| ds.records()[i].samples.as_slice()).collect();
            let est = bundle.estimate_states(&Matrix::from_rows(&rows)?, path)?;
            Ok((idx, est))
        })
        .collect::<wavelatent_core::Result<Vec<_>>>()?;
    let mut out = vec![None; ds.len()];
    for (idx, est) in per_path {
        for (i, e) in idx.into_iter().zip(est) {
            out[i] = Some(e);
        }
    }
    Ok(out)
}

/// Evaluation report with the per-path estimation run concurrently.
pub fn evaluate(bundle: &PipelineBundle, test: &DatasetGrid) -> Result<EvalReport> {
    let est: Vec<StateVector> = estimate(bundle, test)?
        .into_iter()
        .map(|e| e.unwrap_or(StateVector::new(0.0, 0.0)))
        .collect();
    Ok(assemble_report(bundle, test, &est)?)
}
