//! Feature matching and rigid-transform estimation: similarity matrix,
//! argmax correspondences, weighted Procrustes (closed form, with a
//! differentiable variant for training), and an ICP baseline.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geom::{PointCloud, RigidTransform};
use crate::svd3::{svd3, Svd3};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("degenerate correspondence configuration (cross-covariance rank < 2)")]
    Degenerate,
    #[error("correspondence weights are all zero")]
    ZeroWeights,
    #[error("correspondence set has {got} entries for {want} source points")]
    CorrespondenceLength { got: usize, want: usize },
    #[error("target index {index} out of range for {size} target points")]
    TargetIndex { index: usize, size: usize },
    #[error("similarity temperature must be positive, got {0}")]
    Temperature(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-source-point correspondence into the target cloud, with weights.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub target_index: Vec<usize>,
    pub weight: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn uniform(target_index: Vec<usize>) -> CorrespondenceSet {
        let weight = vec![1.0; target_index.len()];
        CorrespondenceSet {
            target_index,
            weight,
        }
    }

    pub fn len(&self) -> usize {
        self.target_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_index.is_empty()
    }
}

/// Row-stochastic similarity matrix: softmax over rows of
/// Φ_X·Φ_Yᵀ / temperature. Returned as an N×M tensor that participates in
/// the gradient graph of its inputs.
pub fn similarity(
    phi_x: &Tensor,
    phi_y: &Tensor,
    temperature: f64,
) -> Result<Tensor, MatchError> {
    if !(temperature > 0.0) {
        return Err(MatchError::Temperature(temperature));
    }
    let logits = phi_x
        .matmul(&phi_y.transpose()?)?
        .scale(1.0 / temperature)?;
    Ok(logits.softmax(1)?)
}

/// Argmax correspondence per row (exact ties resolve to the lowest column),
/// weighted by the winning similarity value.
pub fn correspondences(similarity: &Tensor) -> CorrespondenceSet {
    assert_eq!(similarity.rank(), 2, "similarity must be a matrix");
    let (n, m) = (similarity.shape()[0], similarity.shape()[1]);
    let vals = similarity.values();
    let mut target_index = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for i in 0..n {
        let row = &vals[i * m..(i + 1) * m];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        target_index.push(best);
        weight.push(row[best]);
    }
    CorrespondenceSet {
        target_index,
        weight,
    }
}

struct ProcrustesCore {
    svd: Svd3,
    det_sign: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    centroid_src: Vector3<f64>,
    centroid_tgt: Vector3<f64>,
    total_weight: f64,
}

/// Rank tolerance: the second singular value must carry at least this
/// fraction of the first for the alignment to be well-posed.
const RANK_TOL: f64 = 1e-12;

fn procrustes_core(
    src: &PointCloud,
    tgt: &PointCloud,
    target_index: &[usize],
    weight: &[f64],
) -> Result<ProcrustesCore, MatchError> {
    let n = src.len();
    if target_index.len() != n || weight.len() != n {
        return Err(MatchError::CorrespondenceLength {
            got: target_index.len().min(weight.len()),
            want: n,
        });
    }
    for &j in target_index {
        if j >= tgt.len() {
            return Err(MatchError::TargetIndex {
                index: j,
                size: tgt.len(),
            });
        }
    }
    let total_weight: f64 = weight.iter().sum();
    if !(total_weight > 0.0) {
        return Err(MatchError::ZeroWeights);
    }
    let mut centroid_src = Vector3::zeros();
    let mut centroid_tgt = Vector3::zeros();
    for i in 0..n {
        centroid_src += weight[i] * src.point(i);
        centroid_tgt += weight[i] * tgt.point(target_index[i]);
    }
    centroid_src /= total_weight;
    centroid_tgt /= total_weight;

    let mut h = Matrix3::zeros();
    for i in 0..n {
        let xs = src.point(i) - centroid_src;
        let ys = tgt.point(target_index[i]) - centroid_tgt;
        h += weight[i] * xs * ys.transpose();
    }
    let svd = svd3(&h);
    if svd.sigma[1] <= RANK_TOL * svd.sigma[0].max(f64::MIN_POSITIVE) {
        return Err(MatchError::Degenerate);
    }
    let det_sign = (svd.v * svd.u.transpose()).determinant().signum();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det_sign));
    let rotation = svd.v * d * svd.u.transpose();
    let translation = centroid_tgt - rotation * centroid_src;
    Ok(ProcrustesCore {
        svd,
        det_sign,
        rotation,
        translation,
        centroid_src,
        centroid_tgt,
        total_weight,
    })
}

/// Closed-form weighted rigid alignment: minimizes
/// Σ wᵢ‖R·srcᵢ + t − tgt[M(i)]‖² over rotations and translations.
pub fn weighted_procrustes(
    src: &PointCloud,
    tgt: &PointCloud,
    corr: &CorrespondenceSet,
) -> Result<RigidTransform, MatchError> {
    let core = procrustes_core(src, tgt, &corr.target_index, &corr.weight)?;
    Ok(RigidTransform {
        rotation: core.rotation,
        translation: core.translation,
    })
}

/// Differentiable weighted Procrustes. The result is a 4×3 tensor holding
/// the rotation rows followed by the translation row; gradients flow into
/// `weights` through the closed-form solution's differential (point
/// coordinates are constants).
///
/// The pullback solves the SVD perturbation system per weight: with
/// H = UΣVᵀ and P = Uᵀ(dH/dwᵢ)V, the antisymmetric factors obey
/// `P_ij = σⱼa − σᵢb, P_ji = −σᵢa + σⱼb`, giving dR and, through the
/// weighted centroids, dt.
pub fn weighted_procrustes_op(
    src: &PointCloud,
    tgt: &PointCloud,
    target_index: &[usize],
    weights: &Tensor,
) -> Result<Tensor, MatchError> {
    let n = src.len();
    if weights.shape() != [n] {
        return Err(MatchError::CorrespondenceLength {
            got: weights.len(),
            want: n,
        });
    }
    let core = procrustes_core(src, tgt, target_index, weights.values())?;

    let mut values = Vec::with_capacity(12);
    for r in 0..3 {
        for c in 0..3 {
            values.push(core.rotation[(r, c)]);
        }
    }
    values.extend_from_slice(core.translation.as_slice());

    // saved context for the pullback
    let sigma = core.svd.sigma;
    let u = core.svd.u;
    let v = core.svd.v;
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, core.det_sign));
    let rot = core.rotation;
    let cx = core.centroid_src;
    let cy = core.centroid_tgt;
    let w_total = core.total_weight;
    let src_pts: Vec<Vector3<f64>> = src.points().to_vec();
    let tgt_pts: Vec<Vector3<f64>> = target_index.iter().map(|&j| *tgt.point(j)).collect();

    let out = crate::tensor::custom_op(
        &[weights],
        vec![4, 3],
        values,
        move |g, inputs| {
            if !inputs[0].has_graph() {
                return vec![None];
            }
            let g_rot = Matrix3::from_fn(|r, c| g[r * 3 + c]);
            let g_t = Vector3::new(g[9], g[10], g[11]);
            let mut grad = vec![0.0; src_pts.len()];
            for i in 0..src_pts.len() {
                let xs = src_pts[i] - cx;
                let ys = tgt_pts[i] - cy;
                // dH/dwᵢ = x̃ᵢ·ỹᵢᵀ (centroid terms cancel by the weighted
                // mean identity Σwⱼx̃ⱼ = 0)
                let dh = xs * ys.transpose();
                let p = u.transpose() * dh * v;
                let mut omega_u = Matrix3::zeros();
                let mut omega_v = Matrix3::zeros();
                for a in 0..2 {
                    for b in (a + 1)..3 {
                        let sa = sigma[a];
                        let sb = sigma[b];
                        let mut denom = sb * sb - sa * sa;
                        let floor = 1e-12 * (sa * sa + sb * sb).max(1e-300);
                        if denom.abs() < floor {
                            denom = if denom < 0.0 { -floor } else { floor };
                        }
                        let ou = (sb * p[(a, b)] + sa * p[(b, a)]) / denom;
                        let ov = (sa * p[(a, b)] + sb * p[(b, a)]) / denom;
                        omega_u[(a, b)] = ou;
                        omega_u[(b, a)] = -ou;
                        omega_v[(a, b)] = ov;
                        omega_v[(b, a)] = -ov;
                    }
                }
                let dr = v * (omega_v * d - d * omega_u) * u.transpose();
                let dt = ys / w_total - dr * cx - rot * (xs / w_total);
                grad[i] = g_rot.component_mul(&dr).sum() + g_t.dot(&dt);
            }
            vec![Some(grad)]
        },
    )?;
    Ok(out)
}

/// Reads a rigid transform out of the 4×3 tensor produced by
/// [`weighted_procrustes_op`].
pub fn transform_from_tensor(rt: &Tensor) -> RigidTransform {
    assert_eq!(rt.shape(), &[4, 3]);
    let v = rt.values();
    RigidTransform {
        rotation: Matrix3::from_fn(|r, c| v[r * 3 + c]),
        translation: Vector3::new(v[9], v[10], v[11]),
    }
}

/// Result of an ICP run.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub mean_residual: f64,
    pub converged: bool,
}

/// Point-to-point ICP: alternates nearest-neighbor correspondence with
/// unweighted Procrustes until the mean residual stops changing by more
/// than `tol` or `max_iters` is reached.
pub fn icp(
    src: &PointCloud,
    tgt: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult, MatchError> {
    let mut transform = RigidTransform::identity();
    let mut prev_residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..max_iters {
        iterations = it + 1;
        let moved = src.apply_transform(&transform);
        let mut target_index = Vec::with_capacity(src.len());
        let mut residual = 0.0;
        for p in moved.points() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, q) in tgt.points().iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            target_index.push(best);
            residual += best_d;
        }
        residual = (residual / src.len() as f64).sqrt();
        transform = weighted_procrustes(src, tgt, &CorrespondenceSet::uniform(target_index))?;
        if (prev_residual - residual).abs() < tol {
            converged = true;
            prev_residual = residual;
            break;
        }
        prev_residual = residual;
    }
    Ok(IcpResult {
        transform,
        iterations,
        mean_residual: prev_residual,
        converged,
    })
}
