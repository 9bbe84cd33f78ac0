//! Symmetric eigensolvers: a dense Householder+QL path for small systems
//! and a Lanczos path with full reorthogonalization for sparse ones.

use ndarray::Array2;
use rand::Rng;

use super::graph::Csr;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Householder reduction of a symmetric matrix to tridiagonal form with
/// accumulated transformations (EISPACK tred2 lineage).
fn tred2(a: &Array2<f64>) -> (Vec<f64>, Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[[j, i]] = f;
                let mut g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[[k, j]] -= f * e[k] + g * d[k];
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;
    (d, e, v)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix, transforming the
/// accumulated `v` alongside and sorting the output ascending (EISPACK
/// tql2 lineage).
fn tql2(d: &mut [f64], e: &mut [f64], v: &mut Array2<f64>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    if n > 0 {
        e[n - 1] = 0.0;
    }

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = 2.0_f64.powi(-52);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 100 {
                    return Err(Error::Numeric {
                        message: "tridiagonal QL did not converge".into(),
                        iterations: iter,
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..v.nrows() {
                        h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // Selection-sort ascending, swapping eigenvector columns alongside.
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..v.nrows() {
                v.swap([j, i], [j, k]);
            }
        }
    }
    Ok(())
}

/// Full eigendecomposition of a dense symmetric matrix.
///
/// Returns eigenvalues ascending and eigenvectors as the corresponding
/// columns.
pub fn dense_symmetric_eig(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::contract("matrix must be square and non-empty"));
    }
    let (mut d, mut e, mut v) = tred2(a);
    tql2(&mut d, &mut e, &mut v)?;
    Ok((d, v))
}

/// Eigensolver backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenBackend {
    /// Dense for n <= 256, Lanczos otherwise.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub backend: EigenBackend,
    /// Residual tolerance `||Av - lambda v||` per accepted pair.
    pub tol: f64,
    /// Cap on Lanczos basis size.
    pub max_iterations: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            backend: EigenBackend::Auto,
            tol: 1e-8,
            max_iterations: 5000,
        }
    }
}

const DENSE_FALLBACK_LIMIT: usize = 256;

/// Smallest `k` eigenpairs of a sparse symmetric matrix.
///
/// Directions come from a Lanczos-style recurrence with full
/// reorthogonalization; extraction is a Rayleigh-Ritz solve of the full
/// projected matrix `T = V^T A V`, which stays exact across restarts.
/// Breakdown (an invariant subspace, e.g. a disconnected graph) restarts
/// with a fresh random direction. Residual checks alone cannot see a
/// missed copy of a repeated eigenvalue, so acceptance additionally
/// requires the `k` smallest Ritz values to remain unchanged after a probe
/// block of fresh random directions has been appended to the basis.
pub fn lanczos_smallest(
    a: &Csr,
    k: usize,
    tol: f64,
    max_basis: usize,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.n();
    if k == 0 || k > n {
        return Err(Error::contract(format!(
            "requested {k} eigenpairs of an {n}-dimensional operator"
        )));
    }
    let max_basis = max_basis.clamp(k, n);
    let mut rng = stream_rng(LANCZOS_SEED, 0);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    // Upper triangle of T = V^T A V, one column per basis vector.
    let mut t_cols: Vec<Vec<f64>> = Vec::new();
    let probe_len = (k + 5).max(10);

    let mut v = random_orthonormal(n, &basis, &mut rng)?;
    let mut force_restart = false;
    let mut next_check = max_basis.min((2 * k + 10).max(30));
    // Ritz values awaiting confirmation by a probe block.
    let mut pending: Option<Vec<f64>> = None;
    let mut z = vec![0.0; n];

    loop {
        basis.push(v);
        let m = basis.len();
        a.matvec(&basis[m - 1], &mut z);
        t_cols.push(basis.iter().map(|b| dot(b, &z)).collect());

        // Next direction: orthogonalize A v against the whole basis.
        let mut w = z.clone();
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(&w, b);
                for i in 0..n {
                    w[i] -= proj * b[i];
                }
            }
        }

        if m >= next_check || m == max_basis || m == n {
            match try_extract(a, &basis, &t_cols, k, tol)? {
                Some((vals, vecs)) => {
                    if m == n {
                        // The basis spans the whole space; nothing is left
                        // to miss.
                        return Ok((vals, vecs));
                    }
                    if let Some(prev) = &pending {
                        let stable = prev
                            .iter()
                            .zip(&vals)
                            .all(|(p, v)| (v - p).abs() <= tol);
                        if stable {
                            return Ok((vals, vecs));
                        }
                    }
                    // Converged by residual; confirm against a fresh probe
                    // block before accepting (guards repeated eigenvalues).
                    pending = Some(vals);
                    force_restart = true;
                    next_check = max_basis.min(m + probe_len);
                }
                None => {
                    pending = None;
                    next_check = max_basis.min(m + (m / 2).max(10));
                }
            }
            if m == max_basis {
                return Err(Error::Numeric {
                    message: format!(
                        "eigensolver could not verify {k} eigenpairs at tolerance {tol}"
                    ),
                    iterations: m,
                });
            }
        }

        let beta = dot(&w, &w).sqrt();
        let scale = t_cols
            .iter()
            .flat_map(|c| c.iter())
            .fold(1.0_f64, |acc, x| acc.max(x.abs()));
        if force_restart || beta <= 1e-12 * scale {
            v = random_orthonormal(n, &basis, &mut rng)?;
            force_restart = false;
        } else {
            for x in &mut w {
                *x /= beta;
            }
            v = w;
        }
    }
}

/// Fixed seed for the Lanczos start vectors; the solver takes no seed
/// parameter so results are reproducible across runs.
const LANCZOS_SEED: u64 = 0x5ec7_0a15;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_orthonormal(
    n: usize,
    basis: &[Vec<f64>],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<f64>> {
    for _ in 0..20 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&v, b);
                for i in 0..n {
                    v[i] -= proj * b[i];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            for x in &mut v {
                *x /= norm;
            }
            return Ok(v);
        }
    }
    Err(Error::Numeric {
        message: "could not draw a vector outside the basis span".into(),
        iterations: 0,
    })
}

/// Rayleigh-Ritz extraction from the projected matrix; accepts only if
/// every one of the k smallest pairs meets the residual tolerance.
fn try_extract(
    a: &Csr,
    basis: &[Vec<f64>],
    t_cols: &[Vec<f64>],
    k: usize,
    tol: f64,
) -> Result<Option<(Vec<f64>, Array2<f64>)>> {
    let m = basis.len();
    if m < k {
        return Ok(None);
    }
    let n = basis[0].len();
    let mut t = Array2::zeros((m, m));
    for (j, col) in t_cols.iter().enumerate() {
        for (i, &val) in col.iter().enumerate() {
            t[[i, j]] = val;
            t[[j, i]] = val;
        }
    }
    let (theta, y) = dense_symmetric_eig(&t)?;
    let mut values = Vec::with_capacity(k);
    let mut vectors = Array2::zeros((n, k));
    let mut scratch = vec![0.0; n];
    for col in 0..k {
        let mut x = vec![0.0; n];
        for (j, b) in basis.iter().enumerate() {
            let c = y[[j, col]];
            if c != 0.0 {
                for i in 0..n {
                    x[i] += c * b[i];
                }
            }
        }
        let norm = dot(&x, &x).sqrt();
        if norm < 1e-12 {
            return Ok(None);
        }
        for xi in &mut x {
            *xi /= norm;
        }
        a.matvec(&x, &mut scratch);
        let lambda = theta[col];
        let mut resid_sq = 0.0;
        for i in 0..n {
            let r = scratch[i] - lambda * x[i];
            resid_sq += r * r;
        }
        if resid_sq.sqrt() > tol {
            return Ok(None);
        }
        values.push(lambda);
        for i in 0..n {
            vectors[[i, col]] = x[i];
        }
    }
    Ok(Some((values, vectors)))
}

/// Spectral embedding: eigenvectors of the `k_b` smallest Laplacian
/// eigenvalues as columns.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// N_b × K_b eigenvector matrix.
    pub matrix: Array2<f64>,
    /// Ascending eigenvalues, one per column.
    pub eigenvalues: Vec<f64>,
}

impl SpectralEmbedding {
    /// Rows scaled to unit Euclidean norm; rows of exact zeros are left
    /// unchanged.
    pub fn row_normalized(&self) -> Array2<f64> {
        let mut out = self.matrix.clone();
        for mut row in out.outer_iter_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        out
    }
}

/// Solve for the `k_b` smallest eigenpairs of a Laplacian with default
/// options.
pub fn spectral_embed(laplacian: &Csr, k_b: usize) -> Result<SpectralEmbedding> {
    spectral_embed_with(laplacian, k_b, &EigenOptions::default())
}

pub fn spectral_embed_with(
    laplacian: &Csr,
    k_b: usize,
    opts: &EigenOptions,
) -> Result<SpectralEmbedding> {
    let n = laplacian.n();
    if k_b == 0 || k_b > n.saturating_sub(1) {
        return Err(Error::contract(format!(
            "k_b = {k_b} outside [1, {}] for a batch of {n}",
            n.saturating_sub(1)
        )));
    }
    let dense = match opts.backend {
        EigenBackend::Dense => true,
        EigenBackend::Lanczos => false,
        EigenBackend::Auto => n <= DENSE_FALLBACK_LIMIT,
    };
    let (eigenvalues, matrix) = if dense {
        let (vals, vecs) = dense_symmetric_eig(&laplacian.to_dense())?;
        let mut m = Array2::zeros((n, k_b));
        for c in 0..k_b {
            for r in 0..n {
                m[[r, c]] = vecs[[r, c]];
            }
        }
        (vals[..k_b].to_vec(), m)
    } else {
        lanczos_smallest(laplacian, k_b, opts.tol, opts.max_iterations)?
    };
    Ok(SpectralEmbedding {
        matrix,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::graph::{normalized_laplacian, SparseGraph};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn dense_eig_two_node_laplacian() {
        let a = array![[1.0, -1.0], [-1.0, 1.0]];
        let (vals, vecs) = dense_symmetric_eig(&a).unwrap();
        assert_abs_diff_eq!(vals[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-12);
        // Residual check.
        for c in 0..2 {
            let v = vecs.column(c);
            let av = a.dot(&v);
            for i in 0..2 {
                assert_abs_diff_eq!(av[i], vals[c] * v[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dense_eig_matches_known_diagonal() {
        let a = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, _) = dense_symmetric_eig(&a).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[2], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn dense_eig_random_residuals() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(9, 0);
        for _ in 0..10 {
            let n = rng.random_range(2..30);
            let raw = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
            let sym = (&raw + &raw.t()) * 0.5;
            let (vals, vecs) = dense_symmetric_eig(&sym).unwrap();
            // Ascending.
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
            for c in 0..n {
                let v = vecs.column(c);
                let av = sym.dot(&v);
                let mut resid = 0.0;
                for i in 0..n {
                    let r = av[i] - vals[c] * v[i];
                    resid += r * r;
                }
                assert!(resid.sqrt() < 1e-10, "residual {}", resid.sqrt());
            }
        }
    }

    #[test]
    fn path_graph_p3_eigenvalues() {
        let g = SparseGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let lap = normalized_laplacian(&g);
        let emb = spectral_embed(&lap, 2).unwrap();
        assert_abs_diff_eq!(emb.eigenvalues[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(emb.eigenvalues[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn disconnected_pairs_have_double_zero() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let lap = normalized_laplacian(&g);
        let emb = spectral_embed(&lap, 2).unwrap();
        assert!(emb.eigenvalues[0].abs() < 1e-10);
        assert!(emb.eigenvalues[1].abs() < 1e-10);
        // Rows of the same component are identical.
        let m = emb.matrix;
        for c in 0..2 {
            assert_abs_diff_eq!(m[[0, c]], m[[1, c]], epsilon = 1e-8);
            assert_abs_diff_eq!(m[[2, c]], m[[3, c]], epsilon = 1e-8);
        }
    }

    #[test]
    fn lanczos_matches_dense_on_random_graphs() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(21, 0);
        for trial in 0..15 {
            let n = rng.random_range(8..64);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random::<f64>() < 0.15 {
                        edges.push((a, b));
                    }
                }
            }
            let g = SparseGraph::from_edges(n, &edges).unwrap();
            let lap = normalized_laplacian(&g);
            let k = 1 + trial % 5;
            let (dense_vals, _) = dense_symmetric_eig(&lap.to_dense()).unwrap();
            let (lan_vals, lan_vecs) = lanczos_smallest(&lap, k, 1e-8, 5000).unwrap();
            for i in 0..k {
                assert_abs_diff_eq!(lan_vals[i], dense_vals[i], epsilon = 1e-8);
            }
            // Residuals within tolerance.
            let mut y = vec![0.0; n];
            for c in 0..k {
                let x: Vec<f64> = (0..n).map(|i| lan_vecs[[i, c]]).collect();
                lap.matvec(&x, &mut y);
                let resid: f64 = (0..n)
                    .map(|i| (y[i] - lan_vals[c] * x[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(resid <= 1e-6, "residual {resid}");
            }
        }
    }

    #[test]
    fn lanczos_recovers_zero_multiplicity() {
        // Three components: zero eigenvalue with multiplicity three.
        let g = SparseGraph::from_edges(9, &[(0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8)])
            .unwrap();
        let lap = normalized_laplacian(&g);
        let (vals, _) = lanczos_smallest(&lap, 4, 1e-8, 5000).unwrap();
        assert!(vals[0].abs() < 1e-8);
        assert!(vals[1].abs() < 1e-8);
        assert!(vals[2].abs() < 1e-8);
        assert!(vals[3] > 1e-6);
    }

    #[test]
    fn spectrum_within_normalized_bound() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(33, 0);
        for _ in 0..10 {
            let n = rng.random_range(4..40);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random::<f64>() < 0.3 {
                        edges.push((a, b));
                    }
                }
            }
            let g = SparseGraph::from_edges(n, &edges).unwrap();
            let lap = normalized_laplacian(&g);
            let (vals, _) = dense_symmetric_eig(&lap.to_dense()).unwrap();
            for &v in &vals {
                assert!(v >= -1e-8 && v <= 2.0 + 1e-8, "eigenvalue {v} out of [0,2]");
            }
        }
    }

    #[test]
    fn embed_rejects_bad_k() {
        let g = SparseGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let lap = normalized_laplacian(&g);
        assert!(spectral_embed(&lap, 0).is_err());
        assert!(spectral_embed(&lap, 3).is_err());
    }

    #[test]
    fn row_normalization_produces_unit_rows() {
        let g = SparseGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        let lap = normalized_laplacian(&g);
        let emb = spectral_embed(&lap, 2).unwrap();
        let normed = emb.row_normalized();
        for row in normed.outer_iter() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-10);
        }
    }
}
