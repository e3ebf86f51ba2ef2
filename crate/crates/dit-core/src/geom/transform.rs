use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::GeomError;

/// A proper rigid motion: rotation in SO(3) plus translation in R^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Orthogonality / determinant tolerance for validating rotations.
const ROT_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    /// Checks R^T R = I and det(R) = +1 within 1e-9.
    pub fn validate(&self) -> Result<(), GeomError> {
        let rtr = self.rotation.transpose() * self.rotation;
        let ortho_err = (rtr - Matrix3::identity()).norm();
        let det_err = (self.rotation.determinant() - 1.0).abs();
        if ortho_err > ROT_TOL || det_err > ROT_TOL || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(GeomError::InvalidRotation);
        }
        Ok(())
    }

    /// Maps a single point: R·p + t.
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// T2 ∘ T1: applies `self` first, then `other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }

    /// The inverse motion: (R^T, −R^T t).
    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation about the x axis by `a` radians.
    pub fn rot_x(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    /// Rotation about the y axis by `a` radians.
    pub fn rot_y(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    /// Rotation about the z axis by `a` radians.
    pub fn rot_z(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// Builds R = Rx(a)·Ry(b)·Rz(c) from intrinsic XYZ Euler angles in radians.
    pub fn from_euler_xyz(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        Self::rot_x(a) * Self::rot_y(b) * Self::rot_z(c)
    }

    /// Decomposes a rotation into intrinsic XYZ Euler angles (radians) such
    /// that R = Rx(a)·Ry(b)·Rz(c).
    ///
    /// At gimbal lock (|b| within ~1e-6 rad of ±90°) the split between the x
    /// and z rotations is not unique; the full residual is assigned to the x
    /// angle and c is reported as 0.
    pub fn euler_xyz(rotation: &Matrix3<f64>) -> (f64, f64, f64) {
        let r = rotation;
        let sb = r[(0, 2)].clamp(-1.0, 1.0);
        let b = sb.asin();
        if 1.0 - sb.abs() < 1e-12 {
            // R = Rx(a)·Ry(±90°)·Rz(0): row 1 becomes [sa·sb, ca, 0].
            let a = (sb * r[(1, 0)]).atan2(r[(1, 1)]);
            (a, b, 0.0)
        } else {
            let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
            let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
            (a, b, c)
        }
    }

    /// Draws a random transform: intrinsic XYZ Euler angles each uniform in
    /// [0, rot_max_deg] degrees, translation components uniform in
    /// [−trans_max, trans_max].
    pub fn random<R: Rng>(rot_max_deg: f64, trans_max: f64, rng: &mut R) -> RigidTransform {
        assert!(rot_max_deg >= 0.0, "rot_max_deg must be non-negative");
        let mut angle = || {
            if rot_max_deg == 0.0 {
                0.0
            } else {
                rng.gen_range(0.0..=rot_max_deg).to_radians()
            }
        };
        let (a, b, c) = (angle(), angle(), angle());
        let mut shift = || {
            if trans_max == 0.0 {
                0.0
            } else {
                rng.gen_range(-trans_max..=trans_max)
            }
        };
        let translation = Vector3::new(shift(), shift(), shift());
        RigidTransform {
            rotation: Self::from_euler_xyz(a, b, c),
            translation,
        }
    }

    /// Renders the 4×4 row-major homogeneous matrix with 17 significant digits.
    pub fn to_homogeneous_text(&self) -> String {
        let mut out = String::new();
        for i in 0..3 {
            for j in 0..3 {
                write!(out, "{:.16e} ", self.rotation[(i, j)]).unwrap();
            }
            writeln!(out, "{:.16e}", self.translation[i]).unwrap();
        }
        writeln!(out, "{:.16e} {:.16e} {:.16e} {:.16e}", 0.0, 0.0, 0.0, 1.0).unwrap();
        out
    }

    /// Parses the 4-line homogeneous matrix format written by
    /// [`to_homogeneous_text`].
    pub fn from_homogeneous_text(text: &str, path: &str) -> Result<Self, GeomError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let vals = vals.map_err(|e| GeomError::Parse {
                path: path.to_string(),
                line: lineno + 1,
                msg: format!("{e}"),
            })?;
            if vals.len() != 4 {
                return Err(GeomError::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("expected 4 columns, got {}", vals.len()),
                });
            }
            rows.push(vals);
        }
        if rows.len() != 4 {
            return Err(GeomError::Parse {
                path: path.to_string(),
                line: 0,
                msg: format!("expected 4 rows, got {}", rows.len()),
            });
        }
        let rotation = Matrix3::from_fn(|i, j| rows[i][j]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        RigidTransform::new(rotation, translation)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeomError> {
        std::fs::write(path, self.to_homogeneous_text()).map_err(|source| GeomError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GeomError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeomError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_homogeneous_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_inverts_to_identity() {
        let t = RigidTransform::identity();
        let inv = t.invert();
        assert_eq!(inv.rotation, Matrix3::identity());
        assert_eq!(inv.translation, Vector3::zeros());
    }

    #[test]
    fn pure_translation_inverts_to_negation() {
        let t = RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::new(1.0, -2.0, 3.0),
        };
        let inv = t.invert();
        assert_eq!(inv.rotation, Matrix3::identity());
        assert_eq!(inv.translation, Vector3::new(-1.0, 2.0, -3.0));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = RigidTransform::random(45.0, 0.5, &mut rng);
            let id = t.compose(&t.invert());
            assert!((id.rotation - Matrix3::identity()).norm() < 1e-9);
            assert!(id.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn zero_ranges_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = RigidTransform::random(0.0, 0.0, &mut rng);
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());
    }

    #[test]
    fn random_transform_respects_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = RigidTransform::random(45.0, 0.5, &mut rng);
            t.validate().unwrap();
            let (a, b, c) = RigidTransform::euler_xyz(&t.rotation);
            for ang in [a, b, c] {
                let deg = ang.to_degrees();
                assert!((-1e-9..=45.0 + 1e-9).contains(&deg), "angle {deg} out of range");
            }
            assert!(t.translation.amax() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn euler_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let t = RigidTransform::random(45.0, 0.0, &mut rng);
            let (a, b, c) = RigidTransform::euler_xyz(&t.rotation);
            let rebuilt = RigidTransform::from_euler_xyz(a, b, c);
            assert!((rebuilt - t.rotation).norm() < 1e-12);
        }
    }

    #[test]
    fn euler_gimbal_lock_assigns_residual_to_x() {
        let r = RigidTransform::from_euler_xyz(0.3, std::f64::consts::FRAC_PI_2, 0.0);
        let (a, b, c) = RigidTransform::euler_xyz(&r);
        assert!((a - 0.3).abs() < 1e-9);
        assert!((b - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn angle_histogram_uniform_by_chi_squared() {
        // 10^4 draws per axis, 10 bins; χ² critical value at p = 0.01 with
        // 9 degrees of freedom is 21.67.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let bins = 10;
        let mut counts = [[0usize; 10]; 3];
        for _ in 0..n {
            let t = RigidTransform::random(45.0, 0.5, &mut rng);
            let (a, b, c) = RigidTransform::euler_xyz(&t.rotation);
            for (axis, ang) in [a, b, c].into_iter().enumerate() {
                let deg = ang.to_degrees().clamp(0.0, 45.0 - 1e-12);
                let bin = ((deg / 45.0) * bins as f64) as usize;
                counts[axis][bin] += 1;
            }
        }
        let expected = n as f64 / bins as f64;
        for axis in 0..3 {
            let chi2: f64 = counts[axis]
                .iter()
                .map(|&c| {
                    let d = c as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(chi2 < 21.67, "axis {axis} χ² = {chi2}");
        }
    }

    #[test]
    fn homogeneous_text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = RigidTransform::random(45.0, 0.5, &mut rng);
        let text = t.to_homogeneous_text();
        let back = RigidTransform::from_homogeneous_text(&text, "mem").unwrap();
        assert!((back.rotation - t.rotation).norm() < 1e-15);
        assert!((back.translation - t.translation).norm() < 1e-15);
    }
}
