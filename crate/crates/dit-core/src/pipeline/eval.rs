use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::geom::{
    success_curve_over, MetricsReport, PairError, PairSample, RigidTransform,
};
use crate::matching::icp;
use crate::tensor::ModelParams;

use super::config::PipelineConfig;
use super::model::{register_pair, DitModel, PipelineError};

/// Per-pair evaluation record.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub pair_id: usize,
    /// Errors against ground truth; absent when registration failed.
    pub error: Option<PairError>,
    pub wall_time_ms: f64,
    pub failure: Option<String>,
}

impl PairRecord {
    pub fn succeeds(&self, r_thres: f64, t_thres: f64) -> bool {
        self.error.map(|e| e.succeeds(r_thres, t_thres)).unwrap_or(false)
    }
}

/// Aggregated evaluation output: metrics at the configured thresholds, one
/// record per pair, and the threshold-sweep curve.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub records: Vec<PairRecord>,
    pub curve: Vec<(f64, f64, f64)>,
}

/// Evaluates an arbitrary registration function over the dataset,
/// parallel across pairs when `workers > 1`. Records are ordered by pair id
/// regardless of scheduling; failed registrations count against the success
/// ratio and are excluded from RMSE/MAE.
pub fn evaluate_with<F>(
    pairs: &[PairSample],
    register: F,
    r_thres: f64,
    t_thres: f64,
    workers: usize,
) -> Result<EvalOutput, PipelineError>
where
    F: Fn(&PairSample) -> Result<(Option<RigidTransform>, Option<String>), PipelineError> + Sync,
{
    let run_one = |(i, pair): (usize, &PairSample)| -> Result<PairRecord, PipelineError> {
        let started = std::time::Instant::now();
        let (transform, failure) = register(pair)?;
        let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(PairRecord {
            pair_id: i,
            error: transform.map(|t| PairError::between(&t, &pair.ground_truth)),
            wall_time_ms,
            failure,
        })
    };
    let mut records: Vec<PairRecord> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            pairs
                .par_iter()
                .enumerate()
                .map(run_one)
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        pairs
            .iter()
            .enumerate()
            .map(run_one)
            .collect::<Result<Vec<_>, _>>()?
    };
    records.sort_by_key(|r| r.pair_id);

    let errors: Vec<PairError> = records.iter().filter_map(|r| r.error).collect();
    let successes = records.iter().filter(|r| r.succeeds(r_thres, t_thres)).count();
    let mut report = MetricsReport::aggregate(&errors, r_thres, t_thres).unwrap_or(MetricsReport {
        r_rmse: f64::NAN,
        r_mae: f64::NAN,
        t_rmse: f64::NAN,
        t_mae: f64::NAN,
        success_ratio: 0.0,
    });
    report.success_ratio = successes as f64 / records.len().max(1) as f64;
    let curve = success_curve_over(&errors, records.len());
    Ok(EvalOutput {
        report,
        records,
        curve,
    })
}

/// Evaluates the learned pipeline from a parameter store.
pub fn evaluate_model(
    cfg: &PipelineConfig,
    params: &ModelParams,
    pairs: &[PairSample],
    workers: usize,
) -> Result<EvalOutput, PipelineError> {
    evaluate_with(
        pairs,
        |pair| {
            // parameters are plain data; each evaluation binds its own
            // constant tensors so pairs can run on any thread
            let mut local = params.clone();
            let model = DitModel::bind(cfg, &mut local, None, None)?;
            let result = register_pair(&model, &pair.src, &pair.tgt)?;
            Ok((result.transform, result.failure))
        },
        cfg.r_thres,
        cfg.t_thres,
        workers,
    )
}

/// Evaluates the ICP baseline over the dataset.
pub fn evaluate_icp(
    pairs: &[PairSample],
    max_iters: usize,
    tol: f64,
    r_thres: f64,
    t_thres: f64,
    workers: usize,
) -> Result<EvalOutput, PipelineError> {
    evaluate_with(
        pairs,
        |pair| match icp(&pair.src, &pair.tgt, max_iters, tol) {
            Ok(res) => Ok((Some(res.transform), None)),
            Err(e @ crate::matching::MatchError::Degenerate) => Ok((None, Some(e.to_string()))),
            Err(e) => Err(e.into()),
        },
        r_thres,
        t_thres,
        workers,
    )
}

/// Renders the per-pair CSV:
/// `pair_id,r_err_x,r_err_y,r_err_z,t_err,time_ms,success_1_001`.
///
/// Wall times are inherently non-reproducible, so the time_ms column is 0
/// unless `timing` is set; every other column is a pure function of
/// (seed, config, dataset).
pub fn render_csv(records: &[PairRecord], timing: bool) -> String {
    let mut out = String::from("pair_id,r_err_x,r_err_y,r_err_z,t_err,time_ms,success_1_001\n");
    for r in records {
        let time = if timing {
            format!("{:.3}", r.wall_time_ms)
        } else {
            "0".to_string()
        };
        match &r.error {
            Some(e) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.pair_id,
                    e.rot_deg.x,
                    e.rot_deg.y,
                    e.rot_deg.z,
                    e.trans_norm(),
                    time,
                    u8::from(e.succeeds(1.0, 0.01)),
                );
            }
            None => {
                let _ = writeln!(out, "{},nan,nan,nan,nan,{},0", r.pair_id, time);
            }
        }
    }
    out
}

pub fn write_csv(path: &Path, records: &[PairRecord], timing: bool) -> std::io::Result<()> {
    std::fs::write(path, render_csv(records, timing))
}

/// Renders the success-ratio sweep: `threshold_r,threshold_t,ratio` per line.
pub fn render_curve(curve: &[(f64, f64, f64)]) -> String {
    let mut out = String::new();
    for (r, t, ratio) in curve {
        let _ = writeln!(out, "{r},{t},{ratio}");
    }
    out
}

pub fn write_curve(path: &Path, curve: &[(f64, f64, f64)]) -> std::io::Result<()> {
    std::fs::write(path, render_curve(curve))
}
