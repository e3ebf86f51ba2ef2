use nalgebra::Vector3;

use super::{GeomError, RigidTransform};

/// Per-axis absolute rotation error in degrees between two transforms,
/// using intrinsic XYZ Euler decomposition of each rotation.
pub fn rotation_error_deg(pred: &RigidTransform, gt: &RigidTransform) -> Vector3<f64> {
    let (pa, pb, pc) = RigidTransform::euler_xyz(&pred.rotation);
    let (ga, gb, gc) = RigidTransform::euler_xyz(&gt.rotation);
    Vector3::new(
        (pa - ga).to_degrees().abs(),
        (pb - gb).to_degrees().abs(),
        (pc - gc).to_degrees().abs(),
    )
}

/// Errors of one registered pair.
#[derive(Debug, Clone, Copy)]
pub struct PairError {
    /// Per-axis absolute Euler angle error, degrees.
    pub rot_deg: Vector3<f64>,
    /// Per-component absolute translation error.
    pub trans: Vector3<f64>,
}

impl PairError {
    pub fn between(pred: &RigidTransform, gt: &RigidTransform) -> PairError {
        PairError {
            rot_deg: rotation_error_deg(pred, gt),
            trans: (pred.translation - gt.translation).abs(),
        }
    }

    /// Largest per-axis rotation error, degrees.
    pub fn rot_max(&self) -> f64 {
        self.rot_deg.amax()
    }

    /// Euclidean norm of the translation error.
    pub fn trans_norm(&self) -> f64 {
        self.trans.norm()
    }

    /// Success under the (rotation, translation) thresholds: the largest
    /// per-axis rotation error and the translation norm error must both be
    /// below their thresholds.
    pub fn succeeds(&self, r_thres: f64, t_thres: f64) -> bool {
        self.rot_max() < r_thres && self.trans_norm() < t_thres
    }
}

pub fn rmse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn mae(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

/// Aggregated registration metrics over a set of pairs.
#[derive(Debug, Clone, Copy)]
pub struct MetricsReport {
    /// RMSE over all per-axis rotation errors, degrees.
    pub r_rmse: f64,
    /// MAE over all per-axis rotation errors, degrees.
    pub r_mae: f64,
    /// RMSE over all translation error components.
    pub t_rmse: f64,
    /// MAE over all translation error components.
    pub t_mae: f64,
    /// Fraction of pairs within the thresholds.
    pub success_ratio: f64,
}

impl MetricsReport {
    pub fn aggregate(
        errors: &[PairError],
        r_thres: f64,
        t_thres: f64,
    ) -> Result<MetricsReport, GeomError> {
        if errors.is_empty() {
            return Err(GeomError::EmptyErrorList);
        }
        let rot: Vec<f64> = errors.iter().flat_map(|e| e.rot_deg.iter().copied()).collect();
        let trans: Vec<f64> = errors.iter().flat_map(|e| e.trans.iter().copied()).collect();
        let successes = errors.iter().filter(|e| e.succeeds(r_thres, t_thres)).count();
        Ok(MetricsReport {
            r_rmse: rmse(&rot),
            r_mae: mae(&rot),
            t_rmse: rmse(&trans),
            t_mae: mae(&trans),
            success_ratio: successes as f64 / errors.len() as f64,
        })
    }
}

/// Number of points in a success-ratio threshold sweep.
pub const CURVE_POINTS: usize = 64;

/// Success-ratio sweep over 64 log-spaced (rotation, translation) threshold
/// pairs; rotation thresholds span [0.01°, 45°] and translation thresholds
/// span [1e-4, 0.5].
pub fn success_curve(errors: &[PairError]) -> Vec<(f64, f64, f64)> {
    success_curve_over(errors, errors.len())
}

/// [`success_curve`] with an explicit denominator, so pairs that failed to
/// register (and therefore have no error entry) still count against the
/// ratio.
pub fn success_curve_over(errors: &[PairError], total: usize) -> Vec<(f64, f64, f64)> {
    let (r_lo, r_hi) = (1e-2_f64, 45.0_f64);
    let (t_lo, t_hi) = (1e-4_f64, 0.5_f64);
    (0..CURVE_POINTS)
        .map(|i| {
            let f = i as f64 / (CURVE_POINTS - 1) as f64;
            let r = r_lo * (r_hi / r_lo).powf(f);
            let t = t_lo * (t_hi / t_lo).powf(f);
            let ratio = if total == 0 {
                0.0
            } else {
                errors.iter().filter(|e| e.succeeds(r, t)).count() as f64 / total as f64
            };
            (r, t, ratio)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_error_for_equal_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = RigidTransform::random(45.0, 0.5, &mut rng);
        let e = rotation_error_deg(&t, &t);
        assert_eq!(e, Vector3::zeros());
    }

    #[test]
    fn five_degree_z_rotation_shows_on_z_axis() {
        let gt = RigidTransform::identity();
        let pred = RigidTransform {
            rotation: RigidTransform::rot_z(5.0_f64.to_radians()),
            translation: nalgebra::Vector3::zeros(),
        };
        let e = rotation_error_deg(&pred, &gt);
        assert!(e.x.abs() < 1e-6 && e.y.abs() < 1e-6);
        assert!((e.z - 5.0).abs() < 1e-6);
    }

    /// Independent Euler decomposition via quaternion extraction, used as a
    /// second route to validate the closed-form matrix decomposition.
    fn euler_via_quaternion(r: &Matrix3<f64>) -> (f64, f64, f64) {
        // Shepperd-style quaternion from rotation matrix.
        let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let (w, x, y, z);
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (r[(2, 1)] - r[(1, 2)]) / s;
            y = (r[(0, 2)] - r[(2, 0)]) / s;
            z = (r[(1, 0)] - r[(0, 1)]) / s;
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            w = (r[(2, 1)] - r[(1, 2)]) / s;
            x = 0.25 * s;
            y = (r[(0, 1)] + r[(1, 0)]) / s;
            z = (r[(0, 2)] + r[(2, 0)]) / s;
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            w = (r[(0, 2)] - r[(2, 0)]) / s;
            x = (r[(0, 1)] + r[(1, 0)]) / s;
            y = 0.25 * s;
            z = (r[(1, 2)] + r[(2, 1)]) / s;
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            w = (r[(1, 0)] - r[(0, 1)]) / s;
            x = (r[(0, 2)] + r[(2, 0)]) / s;
            y = (r[(1, 2)] + r[(2, 1)]) / s;
            z = 0.25 * s;
        }
        // Intrinsic XYZ angles from the quaternion components.
        let b = (2.0 * (w * y + x * z)).clamp(-1.0, 1.0).asin();
        let a = (2.0 * (w * x - y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let c = (2.0 * (w * z - x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        (a, b, c)
    }

    #[test]
    fn matches_quaternion_decomposition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let pred = RigidTransform::random(45.0, 0.5, &mut rng);
            let gt = RigidTransform::random(45.0, 0.5, &mut rng);
            let e = rotation_error_deg(&pred, &gt);
            let (pa, pb, pc) = euler_via_quaternion(&pred.rotation);
            let (ga, gb, gc) = euler_via_quaternion(&gt.rotation);
            let oracle = Vector3::new(
                (pa - ga).to_degrees().abs(),
                (pb - gb).to_degrees().abs(),
                (pc - gc).to_degrees().abs(),
            );
            assert!((e - oracle).amax() < 1e-6, "e={e:?} oracle={oracle:?}");
        }
    }

    #[test]
    fn single_zero_error_pair_reports_zero_and_success() {
        let errors = [PairError {
            rot_deg: Vector3::zeros(),
            trans: Vector3::zeros(),
        }];
        let m = MetricsReport::aggregate(&errors, 1.0, 0.01).unwrap();
        assert_eq!(m.r_rmse, 0.0);
        assert_eq!(m.r_mae, 0.0);
        assert_eq!(m.t_rmse, 0.0);
        assert_eq!(m.t_mae, 0.0);
        assert_eq!(m.success_ratio, 1.0);
    }

    #[test]
    fn rmse_and_mae_hand_values() {
        let vals = [3.0, 4.0];
        assert!((rmse(&vals) - 3.536).abs() < 1e-3);
        assert!((mae(&vals) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let errors: Vec<PairError> = (0..20)
            .map(|_| {
                let pred = RigidTransform::random(45.0, 0.5, &mut rng);
                let gt = RigidTransform::random(45.0, 0.5, &mut rng);
                PairError::between(&pred, &gt)
            })
            .collect();
        let m = MetricsReport::aggregate(&errors, 5.0, 0.05).unwrap();

        // naive re-implementation
        let mut sq = 0.0;
        let mut ab = 0.0;
        let mut tsq = 0.0;
        let mut tab = 0.0;
        let mut n_success = 0;
        for e in &errors {
            for k in 0..3 {
                sq += e.rot_deg[k] * e.rot_deg[k];
                ab += e.rot_deg[k].abs();
                tsq += e.trans[k] * e.trans[k];
                tab += e.trans[k].abs();
            }
            let maxrot = e.rot_deg[0].max(e.rot_deg[1]).max(e.rot_deg[2]);
            let tnorm = (e.trans[0] * e.trans[0] + e.trans[1] * e.trans[1] + e.trans[2] * e.trans[2])
                .sqrt();
            if maxrot < 5.0 && tnorm < 0.05 {
                n_success += 1;
            }
        }
        let n = (errors.len() * 3) as f64;
        assert!((m.r_rmse - (sq / n).sqrt()).abs() < 1e-12);
        assert!((m.r_mae - ab / n).abs() < 1e-12);
        assert!((m.t_rmse - (tsq / n).sqrt()).abs() < 1e-12);
        assert!((m.t_mae - tab / n).abs() < 1e-12);
        assert!((m.success_ratio - n_success as f64 / errors.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn empty_error_list_is_rejected() {
        assert!(MetricsReport::aggregate(&[], 1.0, 0.01).is_err());
    }

    #[test]
    fn success_ratio_is_monotone_in_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let errors: Vec<PairError> = (0..30)
            .map(|_| {
                let pred = RigidTransform::random(45.0, 0.5, &mut rng);
                let gt = RigidTransform::random(45.0, 0.5, &mut rng);
                PairError::between(&pred, &gt)
            })
            .collect();
        let curve = success_curve(&errors);
        assert_eq!(curve.len(), CURVE_POINTS);
        for w in curve.windows(2) {
            assert!(w[1].2 >= w[0].2, "curve not monotone: {w:?}");
        }
    }
}
