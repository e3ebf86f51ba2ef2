//! Exact k-nearest-neighbor queries in 3D geometric space.
//!
//! Brute force O(N²) with partial selection is the default; at the point
//! counts this pipeline targets (N ≤ 2048) it beats tree structures and is
//! trivially exact.

use thiserror::Error;

use crate::geom::PointCloud;

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("k = {k} must be smaller than the cloud size {n}")]
    KTooLarge { k: usize, n: usize },
}

/// Result of a k-nearest-neighbor query over one cloud.
///
/// Row `i` holds the indices of the `k` points nearest to point `i`
/// (self excluded), sorted by ascending distance; exact distance ties break
/// toward the lower index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    n: usize,
    k: usize,
}

impl NeighborIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor indices of point `i`, nearest first.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// Exact k nearest neighbors by Euclidean distance, self excluded.
pub fn knn_indices(cloud: &PointCloud, k: usize) -> Result<NeighborIndex, KnnError> {
    let n = cloud.len();
    if k >= n {
        return Err(KnnError::KTooLarge { k, n });
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let p = cloud.point(i);
        candidates.clear();
        for j in 0..n {
            if j != i {
                candidates.push(((cloud.point(j) - p).norm_squared(), j));
            }
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates[..k].sort_unstable_by(cmp);
        indices.extend(candidates[..k].iter().map(|&(_, j)| j));
    }
    Ok(NeighborIndex { indices, n, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud_from(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    /// Full-sort oracle, deliberately simpler than the partial-selection path.
    fn brute_force(cloud: &PointCloud, k: usize) -> Vec<Vec<usize>> {
        (0..cloud.len())
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..cloud.len())
                    .filter(|&j| j != i)
                    .map(|j| ((cloud.point(j) - cloud.point(i)).norm_squared(), j))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                all[..k].iter().map(|&(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_points_pick_adjacent_neighbors() {
        let cloud = cloud_from(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let idx = knn_indices(&cloud, 1).unwrap();
        assert_eq!(idx.row(0), &[1]);
        // ties at distance 1 break toward the lower index
        assert_eq!(idx.row(1), &[0]);
        assert_eq!(idx.row(2), &[1]);
        assert_eq!(idx.row(3), &[2]);
    }

    #[test]
    fn unit_square_corners_pick_edge_adjacent() {
        let cloud = cloud_from(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ]);
        let idx = knn_indices(&cloud, 2).unwrap();
        let mut r0 = idx.row(0).to_vec();
        r0.sort_unstable();
        assert_eq!(r0, vec![1, 3]);
        let mut r2 = idx.row(2).to_vec();
        r2.sort_unstable();
        assert_eq!(r2, vec![1, 3]);
    }

    #[test]
    fn matches_full_sort_oracle() {
        let cloud = random_cloud(200, 7);
        let idx = knn_indices(&cloud, 20).unwrap();
        let oracle = brute_force(&cloud, 20);
        for i in 0..cloud.len() {
            assert_eq!(idx.row(i), &oracle[i][..], "row {i}");
        }
    }

    #[test]
    fn k_must_be_less_than_n() {
        let cloud = random_cloud(5, 1);
        assert!(matches!(
            knn_indices(&cloud, 5),
            Err(KnnError::KTooLarge { k: 5, n: 5 })
        ));
        assert!(knn_indices(&cloud, 4).is_ok());
    }

    #[test]
    fn rows_sorted_by_distance_and_exclude_self() {
        let cloud = random_cloud(64, 3);
        let idx = knn_indices(&cloud, 10).unwrap();
        for i in 0..cloud.len() {
            let row = idx.row(i);
            assert!(!row.contains(&i));
            let mut uniq = row.to_vec();
            uniq.sort_unstable();
            uniq.dedup();
            assert_eq!(uniq.len(), row.len());
            for w in row.windows(2) {
                let d0 = (cloud.point(w[0]) - cloud.point(i)).norm();
                let d1 = (cloud.point(w[1]) - cloud.point(i)).norm();
                assert!(d0 <= d1);
            }
        }
    }

    #[test]
    fn invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(120, 9);
        let idx = knn_indices(&cloud, 8).unwrap();
        for _ in 0..5 {
            let t = RigidTransform::random(45.0, 0.5, &mut rng);
            let moved = cloud.apply_transform(&t);
            let idx2 = knn_indices(&moved, 8).unwrap();
            for i in 0..cloud.len() {
                assert_eq!(idx.row(i), idx2.row(i));
            }
        }
    }
}
