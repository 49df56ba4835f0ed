//! Dense linear-algebra facade.
//!
//! Every factorization used by the rest of the crate goes through this
//! module, so callers state numerical contracts (minimum-norm least squares,
//! economy QR, eigenpairs with unit-norm vectors) rather than vendor calls.
//! Backed by `faer`; all scalars are complex double precision.

use faer::linalg::solvers::Solve;
use faer::{c64, Side};

use crate::{ensure_finite, CMat, CVec, Error, Result};

/// Machine epsilon for the repo-wide `f64` scalar type.
pub const EPS: f64 = f64::EPSILON;

/// Economy SVD `A = U diag(sigma) V^*` with nonincreasing singular values.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: CMat,
    pub singular_values: Vec<f64>,
    pub v: CMat,
}

impl SvdResult {
    /// Numerical rank at truncation threshold `sigma_1 * tau`.
    pub fn rank(&self, tau: f64) -> usize {
        match self.singular_values.first() {
            None | Some(0.0) => 0,
            Some(&s1) => self
                .singular_values
                .iter()
                .take_while(|&&s| s > s1 * tau)
                .count(),
        }
    }
}

/// Economy QR `A P = Q R` (permutation optional) with orthonormal `Q`.
#[derive(Debug, Clone)]
pub struct QrResult {
    pub q: CMat,
    pub r: CMat,
    /// Column permutation: column `j` of `Q R` factors column `perm[j]` of `A`.
    pub permutation: Option<Vec<usize>>,
}

/// Eigendecomposition with unit-norm right eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub eigenvalues: CVec,
    pub right_vectors: CMat,
}

/// Solution of a Vandermonde system together with conditioning metadata.
#[derive(Debug, Clone)]
pub struct VandermondeSolution {
    pub weights: CVec,
    /// 2-norm condition estimate of the Vandermonde matrix (dense path only).
    pub condition: Option<f64>,
    /// Set when the nodes were recognized as roots of unity and the system
    /// was solved by an inverse discrete Fourier transform.
    pub used_dft: bool,
    /// `||V w - rhs|| / ||rhs||`, recorded so callers can surface warnings.
    pub relative_residual: f64,
}

/// Economy SVD of a general complex matrix.
pub fn svd(a: &CMat) -> Result<SvdResult> {
    ensure_finite(a.as_ref(), "svd input")?;
    let f = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let singular_values: Vec<f64> = f.S().column_vector().iter().map(|z| z.re).collect();
    Ok(SvdResult {
        u: f.U().to_owned(),
        singular_values,
        v: f.V().to_owned(),
    })
}

/// Economy QR with column pivoting, `A(:, perm) = Q R`, `|R_11| >= |R_22| >= ...`.
pub fn pivoted_qr(a: &CMat) -> Result<QrResult> {
    ensure_finite(a.as_ref(), "pivoted_qr input")?;
    let f = a.col_piv_qr();
    Ok(QrResult {
        q: f.compute_thin_Q(),
        r: f.thin_R().to_owned(),
        permutation: Some(f.P().arrays().0.to_vec()),
    })
}

/// Economy QR without pivoting, `A = Q R`.
pub fn qr(a: &CMat) -> Result<QrResult> {
    ensure_finite(a.as_ref(), "qr input")?;
    let f = a.qr();
    Ok(QrResult {
        q: f.compute_thin_Q(),
        r: f.thin_R().to_owned(),
        permutation: None,
    })
}

/// Eigendecomposition of a general square complex matrix.
///
/// Columns are normalized to unit Euclidean norm and the phase is fixed by
/// making the largest-modulus component real and positive, so results are
/// deterministic up to the underlying factorization.
pub fn eig(a: &CMat) -> Result<EigResult> {
    if a.nrows() != a.ncols() {
        return Err(Error::Contract(format!(
            "eig requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a.as_ref(), "eig input")?;
    let f = a
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigensolver did not converge: {e:?}")))?;
    let mut vectors = f.U().to_owned();
    normalize_columns(&mut vectors);
    let eigenvalues: CVec = f.S().column_vector().iter().copied().collect();
    Ok(EigResult {
        eigenvalues,
        right_vectors: vectors,
    })
}

/// Eigendecomposition of a unitary matrix with an orthonormal eigenbasis.
///
/// Requires `||U^* U - I||_F <= 1e-8`. A unitary matrix is normal, so its
/// Schur form is diagonal; this routine computes that diagonalization from
/// two self-adjoint eigenproblems (the Hermitian part splits the spectrum by
/// `cos(theta)`, the skew part separates conjugate angles inside each
/// cluster), which keeps the eigenvector matrix unitary to machine precision.
pub fn schur_unitary_eig(u: &CMat) -> Result<EigResult> {
    let n = u.nrows();
    if n != u.ncols() {
        return Err(Error::Contract("schur_unitary_eig requires a square matrix".into()));
    }
    let defect = (u.adjoint() * u - CMat::identity(n, n)).norm_l2();
    if defect > 1e-8 {
        return Err(Error::Contract(format!(
            "schur_unitary_eig input is not unitary: ||U^*U - I||_F = {defect:.3e}"
        )));
    }

    let herm = faer::Scale(c64::new(0.5, 0.0)) * (u + u.adjoint());
    let hf = herm
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("self-adjoint eigensolver failed: {e:?}")))?;
    let w = hf.U().to_owned();
    let cosines: Vec<f64> = hf.S().column_vector().iter().map(|z| z.re).collect();

    // cluster indices with (numerically) equal cos(theta); conjugate pairs
    // e^{+-i theta} land in the same cluster
    let cluster_tol = 1e-10_f64.max(16.0 * EPS);
    let mut vectors = CMat::zeros(n, n);
    let mut eigenvalues = vec![c64::new(0.0, 0.0); n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (cosines[end] - cosines[end - 1]).abs() <= cluster_tol {
            end += 1;
        }
        let q = end - start;
        let wc = w.as_ref().submatrix(0, start, n, q);
        if q == 1 {
            let col = wc.col(0);
            let lambda = dot(col, (u * col).as_ref());
            for i in 0..n {
                vectors[(i, start)] = col[i];
            }
            eigenvalues[start] = lambda;
        } else {
            // restriction of U to the cluster subspace: B = c I + i S with S Hermitian
            let b = wc.adjoint() * u * wc;
            let skew = faer::Scale(c64::new(0.0, -0.5)) * (&b - b.adjoint());
            let sf = skew
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::Numerical(format!("cluster eigensolver failed: {e:?}")))?;
            let basis = wc * sf.U();
            for k in 0..q {
                let col = basis.as_ref().col(k);
                let lambda = dot(col, (u * col).as_ref());
                for i in 0..n {
                    vectors[(i, start + k)] = col[i];
                }
                eigenvalues[start + k] = lambda;
            }
        }
        start = end;
    }
    normalize_columns(&mut vectors);
    Ok(EigResult {
        eigenvalues,
        right_vectors: vectors,
    })
}

/// Minimum-Frobenius-norm minimizer of `||A X - B||_F` (pseudoinverse solution).
///
/// Rank deficiency is handled by truncating singular values at
/// `sigma_1 * max(rows, cols) * eps`, overridable via [`solve_least_squares_tol`].
pub fn solve_least_squares(a: &CMat, b: &CMat) -> Result<CMat> {
    let tau = a.nrows().max(a.ncols()) as f64 * EPS;
    solve_least_squares_tol(a, b, tau)
}

/// As [`solve_least_squares`] with an explicit relative truncation threshold.
pub fn solve_least_squares_tol(a: &CMat, b: &CMat, tau: f64) -> Result<CMat> {
    if a.nrows() != b.nrows() {
        return Err(Error::Contract(format!(
            "least-squares shape mismatch: A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let f = svd(a)?;
    let rank = f.rank(tau);
    let utb = f.u.as_ref().submatrix(0, 0, a.nrows(), rank).adjoint() * b;
    let mut scaled = utb;
    for k in 0..rank {
        let inv = c64::new(1.0 / f.singular_values[k], 0.0);
        for j in 0..scaled.ncols() {
            scaled[(k, j)] *= inv;
        }
    }
    Ok(f.v.as_ref().submatrix(0, 0, a.ncols(), rank) * scaled)
}

/// Solve a square linear system `A X = B` by LU with partial pivoting.
pub fn solve_linear(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Contract("solve_linear shape mismatch".into()));
    }
    Ok(a.partial_piv_lu().solve(b))
}

/// Smallest eigenvalue of a Hermitian matrix (symmetrized before the solve).
pub fn hermitian_min_eigenvalue(a: &CMat) -> Result<f64> {
    let sym = faer::Scale(c64::new(0.5, 0.0)) * (a + a.adjoint());
    let vals = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("self-adjoint eigensolver failed: {e:?}")))?;
    vals.into_iter()
        .reduce(f64::min)
        .ok_or_else(|| Error::Contract("empty matrix".into()))
}

/// Smallest eigenvalue and its eigenvector for a Hermitian matrix.
pub fn hermitian_min_eigenpair(a: &CMat) -> Result<(f64, CVec)> {
    let sym = faer::Scale(c64::new(0.5, 0.0)) * (a + a.adjoint());
    let f = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("self-adjoint eigensolver failed: {e:?}")))?;
    // ascending order: the first pair is the smallest
    let val = f.S().column_vector()[0].re;
    let vec: CVec = (0..a.nrows()).map(|i| f.U()[(i, 0)]).collect();
    Ok((val, vec))
}

/// Solve the Vandermonde system `sum_j nodes_j^p w_j = rhs_p`, `p = 0..n-1`.
///
/// When the nodes are the `n`-th roots of unity (in any order) the system is
/// a permuted DFT and is solved exactly by the inverse transform; otherwise a
/// dense LU solve is used and a condition estimate is attached, since these
/// systems become severely ill-conditioned for clustered nodes.
pub fn solve_vandermonde(nodes: &[c64], rhs: &[c64]) -> Result<VandermondeSolution> {
    let n = nodes.len();
    if n == 0 || rhs.len() != n {
        return Err(Error::Contract(format!(
            "vandermonde needs matching nonempty nodes/rhs, got {} and {}",
            n,
            rhs.len()
        )));
    }
    let scale = nodes.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    for i in 0..n {
        for j in (i + 1)..n {
            if (nodes[i] - nodes[j]).norm() <= 1e-14 * scale {
                return Err(Error::Contract(format!(
                    "vandermonde nodes {i} and {j} coincide"
                )));
            }
        }
    }

    let rhs_norm = rhs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if let Some(ks) = roots_of_unity_labels(nodes) {
        let weights: CVec = (0..n)
            .map(|j| {
                let base = c64::from_polar(1.0, -2.0 * std::f64::consts::PI * ks[j] as f64 / n as f64);
                let mut pw = c64::new(1.0, 0.0);
                let mut acc = c64::new(0.0, 0.0);
                for &r in rhs {
                    acc += r * pw;
                    pw *= base;
                }
                acc / n as f64
            })
            .collect();
        let rel = vandermonde_residual(nodes, &weights, rhs) / rhs_norm.max(EPS);
        return Ok(VandermondeSolution {
            weights,
            condition: None,
            used_dft: true,
            relative_residual: rel,
        });
    }

    let mut v = CMat::zeros(n, n);
    for j in 0..n {
        let mut pw = c64::new(1.0, 0.0);
        for p in 0..n {
            v[(p, j)] = pw;
            pw *= nodes[j];
        }
    }
    let b = CMat::from_fn(n, 1, |i, _| rhs[i]);
    let x = solve_linear(&v, &b)?;
    let weights: CVec = (0..n).map(|i| x[(i, 0)]).collect();
    let sv = svd(&v)?;
    let condition = match (sv.singular_values.first(), sv.singular_values.last()) {
        (Some(&s1), Some(&sn)) if sn > 0.0 => Some(s1 / sn),
        _ => Some(f64::INFINITY),
    };
    let rel = vandermonde_residual(nodes, &weights, rhs) / rhs_norm.max(EPS);
    Ok(VandermondeSolution {
        weights,
        condition,
        used_dft: false,
        relative_residual: rel,
    })
}

fn vandermonde_residual(nodes: &[c64], w: &[c64], rhs: &[c64]) -> f64 {
    let n = nodes.len();
    let mut pw: CVec = vec![c64::new(1.0, 0.0); n];
    let mut acc = 0.0;
    for p in 0..n {
        let mut s = c64::new(0.0, 0.0);
        for j in 0..n {
            s += pw[j] * w[j];
            pw[j] *= nodes[j];
        }
        acc += (s - rhs[p]).norm_sqr();
    }
    acc.sqrt()
}

/// If `nodes` are exactly the n-th roots of unity up to 1e-12 (in any order),
/// return the integer label of each node.
fn roots_of_unity_labels(nodes: &[c64]) -> Option<Vec<usize>> {
    let n = nodes.len();
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    let mut seen = vec![false; n];
    let mut labels = Vec::with_capacity(n);
    for z in nodes {
        if (z.norm() - 1.0).abs() > 1e-12 {
            return None;
        }
        let k = (z.arg().rem_euclid(2.0 * std::f64::consts::PI) / tau).round() as usize % n;
        if (z - c64::from_polar(1.0, k as f64 * tau)).norm() > 1e-12 || seen[k] {
            return None;
        }
        seen[k] = true;
        labels.push(k);
    }
    Some(labels)
}

/// Normalize matrix columns to unit Euclidean norm and fix the phase so the
/// largest-modulus component is real and positive. Zero columns are left as is.
pub fn normalize_columns(m: &mut CMat) {
    for j in 0..m.ncols() {
        let mut norm2 = 0.0;
        let mut best = (0usize, 0.0f64);
        for i in 0..m.nrows() {
            let a = m[(i, j)].norm_sqr();
            norm2 += a;
            if a > best.1 {
                best = (i, a);
            }
        }
        if norm2 == 0.0 {
            continue;
        }
        let pivot = m[(best.0, j)];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            c64::new(1.0, 0.0)
        };
        let scale = phase / norm2.sqrt();
        for i in 0..m.nrows() {
            m[(i, j)] *= scale;
        }
    }
}

fn dot(x: faer::ColRef<'_, c64>, y: faer::ColRef<'_, c64>) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..x.nrows() {
        acc += x[i].conj() * y[i];
    }
    acc
}
