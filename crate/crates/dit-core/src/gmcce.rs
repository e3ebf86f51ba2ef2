//! Geometric correspondence confidence from triangulated side-length
//! consistency.
//!
//! For every source point, triangles are formed with each 2-combination of
//! its k_s nearest neighbors. Side lengths are rigid invariants, so
//! comparing each source triangle against its correspondence-mapped target
//! triangle measures how compatible the correspondence is with a single
//! rigid motion. The per-point error sums the k_m smallest triangle errors;
//! a scaled sigmoid turns it into a confidence in [0, 1].

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::PointCloud;
use crate::knn::{knn_indices, KnnError};

#[derive(Debug, Error)]
pub enum GmcceError {
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error("correspondence set has {got} entries for {want} source points")]
    CorrespondenceLength { got: usize, want: usize },
    #[error("target index {index} out of range for {size} target points")]
    TargetIndex { index: usize, size: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct GmcceConfig {
    /// Neighborhood size; every point contributes k_s(k_s−1)/2 triangles.
    pub k_s: usize,
    /// How many smallest triangle errors are summed per point.
    pub k_m: usize,
    /// Sharpness of the confidence sigmoid.
    pub lambda: f64,
    /// Confidences below this are filtered (weight zeroed).
    pub tau: f64,
}

impl Default for GmcceConfig {
    fn default() -> Self {
        GmcceConfig {
            k_s: 10,
            k_m: 10,
            lambda: 30.0,
            tau: 0.5,
        }
    }
}

impl GmcceConfig {
    /// Number of triangles evaluated per point.
    pub fn triangles_per_point(&self) -> usize {
        self.k_s * (self.k_s - 1) / 2
    }
}

/// Per-point confidence plus the filter mask (true = filtered out).
#[derive(Debug, Clone)]
pub struct ConfidenceVector {
    pub confidence: Vec<f64>,
    pub filtered: Vec<bool>,
}

impl ConfidenceVector {
    /// Procrustes weights after filtering: the confidence where it survives,
    /// zero where filtered.
    pub fn weights(&self) -> Vec<f64> {
        self.confidence
            .iter()
            .zip(&self.filtered)
            .map(|(&c, &f)| if f { 0.0 } else { c })
            .collect()
    }
}

/// The three side lengths of the triangle (center, a, b), in the order
/// center–a, center–b, a–b.
pub fn triangle_side_lengths(
    center: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
) -> [f64; 3] {
    [(center - a).norm(), (center - b).norm(), (a - b).norm()]
}

/// Relative side-length error between a source triangle and its mapped
/// target triangle: sqrt(Σ(l_src−l_tgt)² / Σ(l_src+l_tgt)²). Triangles that
/// are fully coincident on both sides carry no geometric evidence and score 0.
pub fn group_error(l_src: &[f64; 3], l_tgt: &[f64; 3]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..3 {
        let d = l_src[i] - l_tgt[i];
        let s = l_src[i] + l_tgt[i];
        num += d * d;
        den += s * s;
    }
    if den == 0.0 {
        return 0.0;
    }
    (num / den).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Summed per-point triangle errors (the k_m smallest of each point's
/// triangle set). Exposed separately so the confidence mapping can be
/// tested against it.
pub fn correspondence_errors(
    src: &PointCloud,
    tgt: &PointCloud,
    target_index: &[usize],
    cfg: &GmcceConfig,
) -> Result<Vec<f64>, GmcceError> {
    let n = src.len();
    if target_index.len() != n {
        return Err(GmcceError::CorrespondenceLength {
            got: target_index.len(),
            want: n,
        });
    }
    for &j in target_index {
        if j >= tgt.len() {
            return Err(GmcceError::TargetIndex {
                index: j,
                size: tgt.len(),
            });
        }
    }
    let neighbors = knn_indices(src, cfg.k_s)?;
    let k_m = cfg.k_m.min(cfg.triangles_per_point()).max(1);
    let mut errors = Vec::with_capacity(n);
    let mut triangle_errors = Vec::with_capacity(cfg.triangles_per_point());
    for i in 0..n {
        let center_src = src.point(i);
        let center_tgt = tgt.point(target_index[i]);
        let ring = neighbors.row(i);
        triangle_errors.clear();
        for a in 0..ring.len() {
            for b in (a + 1)..ring.len() {
                let (na, nb) = (ring[a], ring[b]);
                let l_src = triangle_side_lengths(center_src, src.point(na), src.point(nb));
                let l_tgt = triangle_side_lengths(
                    center_tgt,
                    tgt.point(target_index[na]),
                    tgt.point(target_index[nb]),
                );
                triangle_errors.push(group_error(&l_src, &l_tgt));
            }
        }
        // partial selection of the k_m smallest
        let cmp = |a: &f64, b: &f64| a.partial_cmp(b).unwrap();
        if k_m < triangle_errors.len() {
            triangle_errors.select_nth_unstable_by(k_m - 1, cmp);
        }
        errors.push(triangle_errors[..k_m].iter().sum());
    }
    Ok(errors)
}

/// Confidence of every correspondence: C = 2·sigmoid(−λ·E_r), filtered
/// below τ.
pub fn evaluate_confidence(
    src: &PointCloud,
    tgt: &PointCloud,
    target_index: &[usize],
    cfg: &GmcceConfig,
) -> Result<ConfidenceVector, GmcceError> {
    let errors = correspondence_errors(src, tgt, target_index, cfg)?;
    let confidence: Vec<f64> = errors
        .iter()
        .map(|e| 2.0 * sigmoid(-cfg.lambda * e))
        .collect();
    let filtered = confidence.iter().map(|&c| c < cfg.tau).collect();
    Ok(ConfidenceVector {
        confidence,
        filtered,
    })
}
