//! Training objective: transformation loss, cycle-consistency loss, and
//! discrimination loss, combined as L = L_t + α·L_c + β·L_d.
//!
//! The default transformation and cycle forms use the geometrically
//! consistent expressions (rotation deviation from identity in Frobenius
//! norm, translations compared after composing through the rotations). The
//! literal variants — a dot-product translation penalty and a raw
//! translation difference — are preserved behind `literal: true` for
//! fidelity experiments.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geom::{PairSample, RigidTransform};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("loss input is not finite ({0})")]
    NonFinite(&'static str),
    #[error("discrimination loss requires at least one correspondence")]
    EmptyCorrespondence,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Clamp bound for similarities inside the discrimination log terms.
pub const DISCRIMINATION_EPS: f64 = 1e-7;

/// Loss term weights (α for cycle consistency, β for discrimination).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 1.0,
        }
    }
}

fn rotation_rows(rt: &Tensor) -> Result<Tensor, TensorError> {
    rt.gather_rows(&[0, 1, 2])
}

fn translation_row(rt: &Tensor) -> Result<Tensor, TensorError> {
    rt.gather_rows(&[3])
}

fn frobenius_sq(m: &Tensor) -> Result<Tensor, TensorError> {
    m.mul(m)?.sum()
}

fn identity3() -> Tensor {
    Tensor::constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
}

fn rotation_const(r: &Matrix3<f64>) -> Tensor {
    let mut v = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            v.push(r[(i, j)]);
        }
    }
    Tensor::constant(&[3, 3], v)
}

/// Error between a predicted motion (as the 4×3 tensor of
/// [`crate::matching::weighted_procrustes_op`]) and the ground truth.
///
/// Default: ‖R_predᵀ·R* − I‖²_F + ‖t_pred − t*‖². Literal variant replaces
/// the translation term by (t_predᵀ·t* − 1)².
pub fn transformation_loss(
    pred: &Tensor,
    gt: &RigidTransform,
    literal: bool,
) -> Result<Tensor, LossError> {
    let r_pred = rotation_rows(pred)?;
    let t_pred = translation_row(pred)?;
    let r_gt = rotation_const(&gt.rotation);
    let t_gt = Tensor::constant(&[1, 3], gt.translation.as_slice().to_vec());

    let rot_term = frobenius_sq(&r_pred.transpose()?.matmul(&r_gt)?.sub(&identity3())?)?;
    let trans_term = if literal {
        let dot = t_pred.mul(&t_gt)?.sum()?;
        let shifted = dot.sub(&Tensor::scalar(1.0))?;
        shifted.mul(&shifted)?
    } else {
        frobenius_sq(&t_pred.sub(&t_gt)?)?
    };
    Ok(rot_term.add(&trans_term)?)
}

/// Consistency between the X→Y and Y→X predictions.
///
/// Default: ‖R_XY·R_YX − I‖²_F + ‖R_YX·t_XY + t_YX‖², which is exactly zero
/// when the two predictions are mutual inverses. Literal variant:
/// ‖R_XYᵀ·R_YX − I‖²_F + ‖t_XY − t_YX‖².
pub fn cycle_loss(fwd: &Tensor, bwd: &Tensor, literal: bool) -> Result<Tensor, LossError> {
    let r_fwd = rotation_rows(fwd)?;
    let r_bwd = rotation_rows(bwd)?;
    let t_fwd = translation_row(fwd)?;
    let t_bwd = translation_row(bwd)?;
    let loss = if literal {
        let rot = frobenius_sq(&r_fwd.transpose()?.matmul(&r_bwd)?.sub(&identity3())?)?;
        let trans = frobenius_sq(&t_fwd.sub(&t_bwd)?)?;
        rot.add(&trans)?
    } else {
        let rot = frobenius_sq(&r_fwd.matmul(&r_bwd)?.sub(&identity3())?)?;
        // R_YX·t_XY + t_YX, with t stored as row vectors
        let carried = t_fwd.matmul(&r_bwd.transpose()?)?;
        let trans = frobenius_sq(&carried.add(&t_bwd)?)?;
        rot.add(&trans)?
    };
    Ok(loss)
}

/// Binary cross-entropy between per-correspondence similarities and
/// inlier labels: −(1/N)·Σ [c·ln S + (1−c)·ln(1−S)], with S clamped to
/// [ε, 1−ε].
pub fn discrimination_loss(
    similarity: &Tensor,
    target_index: &[usize],
    labels: &[bool],
) -> Result<Tensor, LossError> {
    let n = target_index.len();
    if n == 0 {
        return Err(LossError::EmptyCorrespondence);
    }
    assert_eq!(labels.len(), n, "one label per correspondence");
    let picked = similarity
        .row_select(target_index)?
        .clamp(DISCRIMINATION_EPS, 1.0 - DISCRIMINATION_EPS)?;
    let ones = Tensor::constant(&[n], vec![1.0; n]);
    let label_vec =
        Tensor::constant(&[n], labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    let inv_labels = ones.sub(&label_vec)?;
    let pos = picked.log()?.mul(&label_vec)?;
    let neg = ones.sub(&picked)?.log()?.mul(&inv_labels)?;
    Ok(pos.add(&neg)?.sum()?.scale(-1.0 / n as f64)?)
}

/// Inlier labels against noise-free geometry: label i is true when the
/// ground-truth-mapped (pre-noise) source point lands within `r_inlier` of
/// its chosen target.
pub fn inlier_labels(pair: &PairSample, target_index: &[usize], r_inlier: f64) -> Vec<bool> {
    let clean = pair.clean_src();
    target_index
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let mapped = pair.ground_truth.apply_point(clean.point(i));
            (mapped - pair.tgt.point(j)).norm() < r_inlier
        })
        .collect()
}

/// L = L_t + α·L_c + β·L_d. Non-finite parts abort with a diagnostic.
pub fn total_loss(
    l_t: &Tensor,
    l_c: &Tensor,
    l_d: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor, LossError> {
    for (part, name) in [(l_t, "transformation"), (l_c, "cycle"), (l_d, "discrimination")] {
        if !part.item().is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    Ok(l_t
        .add(&l_c.scale(weights.alpha)?)?
        .add(&l_d.scale(weights.beta)?)?)
}
