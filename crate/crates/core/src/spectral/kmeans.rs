//! k-means with k-means++ seeding, Lloyd iterations, and empty-cluster
//! repair.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Cluster index per point; indices lie in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    assignment: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("cluster count must be at least 1"));
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= k) {
            return Err(Error::contract(format!(
                "assignment {bad} out of range for {k} clusters"
            )));
        }
        Ok(Self { assignment, k })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.assignment
    }

    /// Point indices of cluster `j`, ascending.
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == j)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// First-seed rule for k-means++ style seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstPick {
    /// Uniform random draw (classic k-means++).
    Random,
    /// The point with the largest Euclidean norm, ties toward the smaller
    /// index. Deterministic given the data.
    MaxNorm,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: returns `k` distinct point indices. After the first
/// pick, each next seed is drawn with probability proportional to the
/// squared distance to the nearest already-chosen seed. When all remaining
/// weights vanish (duplicate points), the smallest unchosen index is taken.
pub(crate) fn kmeans_pp_indices(
    points: ArrayView2<'_, f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
    first: FirstPick,
) -> Vec<usize> {
    let n = points.nrows();
    debug_assert!(k >= 1 && k <= n);
    let mut chosen = Vec::with_capacity(k);
    let first_idx = match first {
        FirstPick::Random => rng.random_range(0..n),
        FirstPick::MaxNorm => {
            let mut best = 0;
            let mut best_norm = f64::NEG_INFINITY;
            for (i, row) in points.outer_iter().enumerate() {
                let norm: f64 = row.iter().map(|v| v * v).sum();
                if norm > best_norm {
                    best = i;
                    best_norm = norm;
                }
            }
            best
        }
    };
    chosen.push(first_idx);
    let mut min_sq: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first_idx)))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_sq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in min_sq.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                target -= w;
                if target <= 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Floating-point slack: fall back to the last positive weight.
            pick.unwrap_or_else(|| {
                min_sq
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            (0..n)
                .find(|i| !chosen.contains(i))
                .expect("k <= n leaves an unchosen index")
        };
        chosen.push(next);
        for i in 0..n {
            let d = sq_dist(points.row(i), points.row(next));
            if d < min_sq[i] {
                min_sq[i] = d;
            }
        }
    }
    chosen
}

const MAX_LLOYD_ITERATIONS: usize = 300;

/// Seeded k-means. Runs k-means++ seeding and Lloyd iterations until the
/// assignment reaches a fixpoint or 300 iterations; empty clusters are
/// repaired by reseeding on the point farthest from its current centroid.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_detailed(points, k, seed).map(|(a, _)| a)
}

/// Like [`kmeans`] but also returns the within-cluster sum of squares
/// recorded after every assignment step.
pub fn kmeans_detailed(
    points: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let n = points.nrows();
    let dim = points.ncols();
    if k == 0 || k > n {
        return Err(Error::contract(format!(
            "k = {k} outside [1, {n}] for k-means"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let seeds = kmeans_pp_indices(points, k, &mut rng, FirstPick::Random);
    let mut centroids = Array2::zeros((k, dim));
    for (c, &i) in seeds.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }

    let mut assignment = vec![usize::MAX; n];
    let mut objective_trace = Vec::new();
    let point_norms: Vec<f64> = points
        .outer_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    let mut point_dist = vec![0.0f64; n];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        // Assignment step via the Gram expansion; ties toward the smaller
        // cluster index.
        let centroid_norms: Vec<f64> = centroids
            .outer_iter()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        let gram = points.dot(&centroids.t());
        let mut changed = false;
        let mut wcss = 0.0;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = (point_norms[i] + centroid_norms[c] - 2.0 * gram[[i, c]]).max(0.0);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            wcss += best_d;
            point_dist[i] = best_d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        // Empty-cluster repair: move the point farthest from its centroid
        // (among clusters of size >= 2) into the empty cluster.
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far_i = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if sizes[assignment[i]] < 2 {
                    continue;
                }
                if point_dist[i] > far_d {
                    far_d = point_dist[i];
                    far_i = Some(i);
                }
            }
            if let Some(i) = far_i {
                sizes[assignment[i]] -= 1;
                assignment[i] = empty;
                sizes[empty] += 1;
                centroids.row_mut(empty).assign(&points.row(i));
                changed = true;
                // The moved point now sits on its own centroid, so the
                // repair never increases the objective.
                wcss -= far_d;
                point_dist[i] = 0.0;
            }
        }
        objective_trace.push(wcss);

        if !changed {
            break;
        }

        // Update step.
        centroids.fill(0.0);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            let mut row = centroids.row_mut(c);
            row += &points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids.row_mut(c).mapv_inplace(|v| v * inv);
            }
        }
    }

    let assignment = ClusterAssignment::new(assignment, k)?;
    Ok((assignment, objective_trace))
}
