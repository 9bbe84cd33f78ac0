//! kNN graph construction and the normalized Laplacian, in CSR form.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Sparse symmetric matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// (column, value) pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.vals[lo..hi].iter().copied())
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[[i, j]] = v;
            }
        }
        a
    }

    /// Build from per-row sorted (col, val) lists.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }
}

/// Undirected sample-similarity graph with nonnegative edge weights and a
/// zero diagonal. The default kNN construction produces binary weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    adjacency: Csr,
}

impl SparseGraph {
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).map(|(_, v)| v).sum()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(i).map(|(j, _)| j)
    }

    /// Build an undirected graph from an edge list (weights 1.0, both
    /// directions inserted, duplicates merged by max).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::contract("edge endpoint out of range"));
            }
            if a == b {
                return Err(Error::contract("self-loops are not allowed"));
            }
            rows[a].push(b);
            rows[b].push(a);
        }
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r.into_iter().map(|j| (j, 1.0)).collect()
            })
            .collect();
        Ok(SparseGraph {
            adjacency: Csr::from_rows(rows),
        })
    }

    /// Number of connected components (union-find).
    pub fn num_components(&self) -> usize {
        let n = self.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..n {
            for j in self.neighbors(i) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
        (0..n)
            .filter(|&i| find(&mut parent, i) == i)
            .count()
    }
}

/// Symmetrized k-nearest-neighbor graph over the rows of `features`.
///
/// Each node gets directed edges to its `min(k, n-1)` nearest Euclidean
/// neighbors (self excluded, distance ties broken toward the smaller
/// index); the result is symmetrized by elementwise max, i.e. edge union.
pub fn knn_graph(features: ArrayView2<'_, f64>, k: usize) -> Result<SparseGraph> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::contract(format!(
            "kNN graph needs at least 2 samples, got {n}"
        )));
    }
    if k == 0 {
        return Err(Error::contract("neighbor count k must be at least 1"));
    }
    let k = k.min(n - 1);

    // Squared distances via the Gram expansion, in row blocks.
    let sq_norms: Vec<f64> = features
        .outer_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    let block = 256;
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for start in (0..n).step_by(block) {
        let stop = (start + block).min(n);
        let gram = features
            .slice(ndarray::s![start..stop, ..])
            .dot(&features.t());
        for i in start..stop {
            cand.clear();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d2 = (sq_norms[i] + sq_norms[j] - 2.0 * gram[[i - start, j]]).max(0.0);
                cand.push((d2, j));
            }
            cand.select_nth_unstable_by(k - 1, |a, b| {
                a.partial_cmp(b).expect("finite distances")
            });
            let mut chosen: Vec<(f64, usize)> = cand[..k].to_vec();
            chosen.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            for &(_, j) in &chosen {
                rows[i].push(j);
            }
        }
    }

    // Symmetrize: max(A, A^T) on binary weights is the edge union.
    let mut sym: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, nbrs) in rows.iter().enumerate() {
        for &j in nbrs {
            sym[i].push(j);
            sym[j].push(i);
        }
    }
    let sym_rows = sym
        .into_iter()
        .map(|mut r| {
            r.sort_unstable();
            r.dedup();
            r.into_iter().map(|j| (j, 1.0)).collect()
        })
        .collect();
    Ok(SparseGraph {
        adjacency: Csr::from_rows(sym_rows),
    })
}

/// Symmetric normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}`.
///
/// Isolated nodes (degree 0) get `L_ii = 1` since their `D^{-1/2}` entry is
/// defined as 0.
pub fn normalized_laplacian(graph: &SparseGraph) -> Csr {
    let n = graph.n();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d = graph.degree(i);
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut diag_placed = false;
        for (j, w) in graph.adjacency.row(i) {
            let off = -w * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            if !diag_placed && j > i {
                row.push((i, 1.0));
                diag_placed = true;
            }
            row.push((j, off));
        }
        if !diag_placed {
            row.push((i, 1.0));
        }
        rows.push(row);
    }
    Csr::from_rows(rows)
}
