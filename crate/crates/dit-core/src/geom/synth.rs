use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{GeomError, PointCloud, RigidTransform};

/// Procedural surface families used by the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    PlaneCross,
}

impl FromStr for Shape {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self, GeomError> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "cube" => Ok(Shape::Cube),
            "cylinder" => Ok(Shape::Cylinder),
            "torus" => Ok(Shape::Torus),
            "plane-cross" => Ok(Shape::PlaneCross),
            other => Err(GeomError::UnknownShape(other.to_string())),
        }
    }
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Sphere,
        Shape::Cube,
        Shape::Cylinder,
        Shape::Torus,
        Shape::PlaneCross,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
            Shape::PlaneCross => "plane-cross",
        }
    }
}

/// Samples `n` points on the named surface and rescales so the farthest
/// point from the origin has norm 1.
pub fn sample_shape<R: Rng>(shape: Shape, n: usize, rng: &mut R) -> Result<PointCloud, GeomError> {
    if n < 3 {
        return Err(GeomError::TooFewPoints { min: 3, got: n });
    }
    let points: Vec<Vector3<f64>> = match shape {
        Shape::Sphere => (0..n).map(|_| unit_sphere_point(rng)).collect(),
        Shape::Cube => (0..n)
            .map(|_| {
                let u = rng.gen_range(-1.0..=1.0);
                let v = rng.gen_range(-1.0..=1.0);
                match rng.gen_range(0..6u8) {
                    0 => Vector3::new(1.0, u, v),
                    1 => Vector3::new(-1.0, u, v),
                    2 => Vector3::new(u, 1.0, v),
                    3 => Vector3::new(u, -1.0, v),
                    4 => Vector3::new(u, v, 1.0),
                    _ => Vector3::new(u, v, -1.0),
                }
            })
            .collect(),
        Shape::Cylinder => {
            let r = 0.6;
            let h = 1.0;
            let side_area = 2.0 * std::f64::consts::PI * r * 2.0 * h;
            let cap_area = 2.0 * std::f64::consts::PI * r * r;
            let p_side = side_area / (side_area + cap_area);
            (0..n)
                .map(|_| {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    if rng.gen::<f64>() < p_side {
                        Vector3::new(r * theta.cos(), r * theta.sin(), rng.gen_range(-h..=h))
                    } else {
                        // disk caps, area-uniform in radius
                        let rr = r * rng.gen::<f64>().sqrt();
                        let z = if rng.gen::<bool>() { h } else { -h };
                        Vector3::new(rr * theta.cos(), rr * theta.sin(), z)
                    }
                })
                .collect()
        }
        Shape::Torus => {
            let major = 0.7;
            let minor = 0.3;
            (0..n)
                .map(|_| {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    // rejection step gives area-uniform sampling in the tube angle
                    let phi = loop {
                        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                        let accept = (major + minor * phi.cos()) / (major + minor);
                        if rng.gen::<f64>() < accept {
                            break phi;
                        }
                    };
                    let ring = major + minor * phi.cos();
                    Vector3::new(ring * theta.cos(), ring * theta.sin(), minor * phi.sin())
                })
                .collect()
        }
        Shape::PlaneCross => (0..n)
            .map(|_| {
                let u = rng.gen_range(-1.0..=1.0);
                let v = rng.gen_range(-1.0..=1.0);
                if rng.gen::<bool>() {
                    Vector3::new(u, 0.0, v)
                } else {
                    Vector3::new(0.0, u, v)
                }
            })
            .collect(),
    };
    let mut cloud = PointCloud::new(points)?;
    cloud.rescale_to_unit_sphere();
    Ok(cloud)
}

fn unit_sphere_point<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Degradation applied when deriving a registration pair from a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Target is the exactly-transformed source.
    Clean,
    /// Crescent removal on both sides plus low noise
    /// (variance 0.001, per-coordinate clip ±0.001).
    PartialLow,
    /// Crescent removal on both sides plus high noise
    /// (variance 0.01, per-coordinate clip ±0.05).
    PartialHigh,
}

impl FromStr for PairMode {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self, GeomError> {
        match s {
            "clean" => Ok(PairMode::Clean),
            "partial_low" => Ok(PairMode::PartialLow),
            "partial_high" => Ok(PairMode::PartialHigh),
            other => Err(GeomError::UnknownShape(format!("pair mode {other}"))),
        }
    }
}

impl PairMode {
    pub fn name(&self) -> &'static str {
        match self {
            PairMode::Clean => "clean",
            PairMode::PartialLow => "partial_low",
            PairMode::PartialHigh => "partial_high",
        }
    }
}

/// Fraction of points removed per side in partial modes (200 of 1024).
const REMOVAL_RATIO: f64 = 200.0 / 1024.0;

/// A source/target pair with its generating transform.
///
/// `gt_correspondence[i]` is the index in `tgt` of the point that source
/// point `i` maps onto under `ground_truth`, or `None` when that point was
/// removed from the target side.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub src: PointCloud,
    pub tgt: PointCloud,
    pub ground_truth: RigidTransform,
    pub gt_correspondence: Vec<Option<usize>>,
    /// Pre-noise source positions, kept so inlier labels can be computed
    /// against noise-free geometry. `None` when `src` itself is noise-free.
    pub src_clean: Option<PointCloud>,
}

impl PairSample {
    /// Noise-free source positions (falls back to `src` in clean mode).
    pub fn clean_src(&self) -> &PointCloud {
        self.src_clean.as_ref().unwrap_or(&self.src)
    }
}

/// Builds a registration pair with the paper-protocol transform ranges
/// (rotation per axis in [0°, 45°], translation per axis in [−0.5, 0.5]).
pub fn make_pair<R: Rng>(
    cloud: &PointCloud,
    mode: PairMode,
    rng: &mut R,
) -> Result<PairSample, GeomError> {
    make_pair_with_ranges(cloud, mode, 45.0, 0.5, rng)
}

/// Builds a registration pair with explicit transform sampling ranges.
///
/// Partial modes remove ⌈0.195·N⌉ points from each side by dropping the
/// points with the largest projection onto a per-side random direction,
/// which carves a contiguous crescent and leaves roughly 60% overlap. Noise
/// is then added to the source cloud; the target stays exactly rigid up to
/// removal, so clipped per-coordinate noise of bound c keeps every true
/// correspondence within c·√3 per coordinate.
pub fn make_pair_with_ranges<R: Rng>(
    cloud: &PointCloud,
    mode: PairMode,
    rot_max_deg: f64,
    trans_max: f64,
    rng: &mut R,
) -> Result<PairSample, GeomError> {
    let n = cloud.len();
    let transform = RigidTransform::random(rot_max_deg, trans_max, rng);
    let full_tgt = cloud.apply_transform(&transform);

    match mode {
        PairMode::Clean => Ok(PairSample {
            src: cloud.clone(),
            tgt: full_tgt,
            ground_truth: transform,
            gt_correspondence: (0..n).map(Some).collect(),
            src_clean: None,
        }),
        PairMode::PartialLow | PairMode::PartialHigh => {
            let n_remove = (REMOVAL_RATIO * n as f64).ceil() as usize;
            // both sides must keep a usable cloud after removal
            let min = (3 * n_remove).max(n_remove + 3);
            if n < min {
                return Err(GeomError::CloudTooSmallForPartial { n, min });
            }
            let src_keep = crescent_keep(cloud, n_remove, rng);
            let tgt_keep = crescent_keep(&full_tgt, n_remove, rng);

            let mut tgt_new_index = vec![None; n];
            for (new_i, &orig) in tgt_keep.iter().enumerate() {
                tgt_new_index[orig] = Some(new_i);
            }

            let src_points: Vec<Vector3<f64>> =
                src_keep.iter().map(|&i| *cloud.point(i)).collect();
            let tgt_points: Vec<Vector3<f64>> =
                tgt_keep.iter().map(|&i| *full_tgt.point(i)).collect();
            let gt_correspondence = src_keep.iter().map(|&i| tgt_new_index[i]).collect();

            let clean_src = PointCloud::new(src_points.clone())?;
            let (variance, clip): (f64, f64) = match mode {
                PairMode::PartialLow => (0.001, 0.001),
                _ => (0.01, 0.05),
            };
            let normal = Normal::new(0.0, variance.sqrt()).unwrap();
            let noisy: Vec<Vector3<f64>> = src_points
                .into_iter()
                .map(|p| {
                    p + Vector3::new(
                        normal.sample(rng).clamp(-clip, clip),
                        normal.sample(rng).clamp(-clip, clip),
                        normal.sample(rng).clamp(-clip, clip),
                    )
                })
                .collect();

            Ok(PairSample {
                src: PointCloud::new(noisy)?,
                tgt: PointCloud::new(tgt_points)?,
                ground_truth: transform,
                gt_correspondence,
                src_clean: Some(clean_src),
            })
        }
    }
}

/// Indices kept after dropping the `n_remove` points with the largest
/// projection onto a random direction. The result preserves input order.
fn crescent_keep<R: Rng>(cloud: &PointCloud, n_remove: usize, rng: &mut R) -> Vec<usize> {
    let dir = unit_sphere_point(rng);
    let mut by_proj: Vec<usize> = (0..cloud.len()).collect();
    by_proj.sort_by(|&a, &b| {
        let pa = cloud.point(a).dot(&dir);
        let pb = cloud.point(b).dot(&dir);
        pb.partial_cmp(&pa).unwrap().then(a.cmp(&b))
    });
    let removed: std::collections::HashSet<usize> = by_proj[..n_remove].iter().copied().collect();
    (0..cloud.len()).filter(|i| !removed.contains(i)).collect()
}
