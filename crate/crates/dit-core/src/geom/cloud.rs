use std::path::Path;

use nalgebra::Vector3;

use super::{GeomError, RigidTransform};

/// An ordered list of 3D points at unit-sphere scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    /// Wraps a list of points, requiring at least 3 finite points.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        if points.len() < 3 {
            return Err(GeomError::TooFewPoints {
                min: 3,
                got: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Largest pairwise-reachable extent, measured as twice the max norm
    /// around the centroid.
    pub fn diameter(&self) -> f64 {
        let c = self.centroid();
        2.0 * self
            .points
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }

    /// Applies a rigid transform to every point, preserving order.
    pub fn apply_transform(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
        }
    }

    /// Rescales in place so the farthest point from the origin has norm 1.
    pub fn rescale_to_unit_sphere(&mut self) {
        let max = self.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        if max > 0.0 {
            for p in &mut self.points {
                *p /= max;
            }
        }
    }

    /// Flattens to row-major N×3 values.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
        out
    }

    /// Renders the text format: one point per line, three whitespace-separated
    /// decimals.
    pub fn to_xyz_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p.x, p.y, p.z));
        }
        out
    }

    /// Parses the xyz text format; lines beginning with '#' are ignored.
    pub fn from_xyz_text(text: &str, path: &str) -> Result<Self, GeomError> {
        let mut points = Vec::new();
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
            if vals.len() != 3 {
                return Err(GeomError::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("expected 3 coordinates, got {}", vals.len()),
                });
            }
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
        }
        PointCloud::new(points)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeomError> {
        std::fs::write(path, self.to_xyz_text()).map_err(|source| GeomError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GeomError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeomError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_xyz_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_tiny_and_non_finite_clouds() {
        assert!(PointCloud::new(vec![Vector3::zeros(); 2]).is_err());
        let mut pts = vec![Vector3::zeros(); 3];
        pts[1].x = f64::NAN;
        assert!(matches!(PointCloud::new(pts), Err(GeomError::NonFinite(1))));
    }

    #[test]
    fn identity_transform_is_bitwise_noop() {
        let cloud = random_cloud(16, 1);
        let moved = cloud.apply_transform(&RigidTransform::identity());
        assert_eq!(cloud, moved);
    }

    #[test]
    fn quarter_turn_about_z() {
        let cloud = PointCloud::new(vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ])
        .unwrap();
        let t = RigidTransform {
            rotation: RigidTransform::rot_z(std::f64::consts::FRAC_PI_2),
            translation: Vector3::zeros(),
        };
        let moved = cloud.apply_transform(&t);
        assert!((moved.point(0) - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_roundtrip_through_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let cloud = random_cloud(32, trial);
            let t = RigidTransform::random(45.0, 0.5, &mut rng);
            let back = cloud.apply_transform(&t).apply_transform(&t.invert());
            for (a, b) in cloud.points().iter().zip(back.points()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn transform_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = random_cloud(24, 4);
        let t = RigidTransform::random(45.0, 0.5, &mut rng);
        let moved = cloud.apply_transform(&t);
        for i in 0..cloud.len() {
            for j in 0..cloud.len() {
                let d0 = (cloud.point(i) - cloud.point(j)).norm();
                let d1 = (moved.point(i) - moved.point(j)).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn xyz_text_roundtrip_and_comments() {
        let cloud = random_cloud(8, 2);
        let mut text = String::from("# a comment line\n");
        text.push_str(&cloud.to_xyz_text());
        let back = PointCloud::from_xyz_text(&text, "mem").unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.points().iter().zip(back.points()) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(PointCloud::from_xyz_text("1 2\n3 4 5\n6 7 8\n", "mem").is_err());
    }
}
