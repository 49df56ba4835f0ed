//! EDMD matrices, DMD with finite-dimensional residuals, and
//! spatio-temporal reconstruction.

use faer::c64;

use crate::dictionary::{DataMatrices, Dictionary};
use crate::numerics::{self, EPS};
use crate::{CMat, CVec, Error, Result};

/// Weighted data matrices retained by a fit for high-precision residuals.
///
/// The Gram-form residual squares the conditioning: its cancellation noise
/// floors at `sqrt(eps) ~ 1e-8`. Keeping `W^{1/2} Psi_X` and `W^{1/2} Psi_Y`
/// lets residuals and defect norms be evaluated as vector norms, which
/// cancel pointwise and reach the `1e-15` regime.
#[derive(Debug, Clone)]
pub struct FitData {
    pub wx: CMat,
    pub wy: CMat,
}

/// Gram-type matrices and the EDMD matrix of a dictionary fit.
#[derive(Debug, Clone)]
pub struct KoopmanFit {
    /// `Psi_X^* W Psi_X`, Hermitian positive semidefinite.
    pub g: CMat,
    /// `Psi_X^* W Psi_Y`.
    pub a: CMat,
    /// `Psi_Y^* W Psi_Y`, Hermitian positive semidefinite.
    pub l: CMat,
    /// EDMD matrix `K = (W^{1/2} Psi_X)^dagger (W^{1/2} Psi_Y)`.
    pub k: CMat,
    /// Dictionary the fit was assembled with, when one exists.
    pub dict: Option<Dictionary>,
    /// Weighted data matrices (present unless explicitly dropped).
    pub data: Option<FitData>,
}

impl KoopmanFit {
    /// Release the `M x N` data matrices; residuals fall back to the
    /// Gram-form evaluation afterwards.
    pub fn drop_data(&mut self) {
        self.data = None;
    }
}

/// Output of the DMD algorithm.
#[derive(Debug, Clone)]
pub struct DmdResult {
    /// Numerical rank after singular value truncation.
    pub rank: usize,
    pub eigenvalues: CVec,
    /// Ritz vectors in state space, one column per eigenvalue.
    pub ritz_vectors: CMat,
    /// Residuals `||A z_i - lambda_i z_i||` with respect to the implicit
    /// linear operator fitted to the data.
    pub residuals: Vec<f64>,
    /// Exact-DMD vectors `C_k B_k` (unscaled).
    pub exact_vectors: CMat,
    /// The data-driven image `C_k` of the reduced basis, kept for residual
    /// and forecasting work downstream.
    pub c_k: CMat,
}

/// Mode selection plus reconstruction coefficients and errors.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Indices into the DMD eigenpairs, in the order used for the fit.
    pub selection: Vec<usize>,
    pub coefficients: CVec,
    /// Per-snapshot relative reconstruction errors.
    pub errors: Vec<f64>,
}

/// Weighted EDMD fit from data matrices.
///
/// When `N > M` (or under rank deficiency) the minimum-norm minimizer is
/// returned, matching the pseudoinverse definition.
pub fn edmd_fit(data: &DataMatrices) -> Result<KoopmanFit> {
    edmd_fit_with_dict(data, None)
}

/// As [`edmd_fit`], recording the dictionary in the result.
pub fn edmd_fit_with_dict(data: &DataMatrices, dict: Option<Dictionary>) -> Result<KoopmanFit> {
    let m = data.psi_x.nrows();
    let n = data.psi_x.ncols();
    if m == 0 || n == 0 {
        return Err(Error::Contract("empty data matrices".into()));
    }
    if data.psi_y.nrows() != m || data.psi_y.ncols() != n || data.weights.len() != m {
        return Err(Error::Contract("data matrix shapes are inconsistent".into()));
    }
    if data.psi_x.norm_l2() == 0.0 {
        return Err(Error::Degenerate("Psi_X is identically zero".into()));
    }
    let wx = weight_rows(&data.psi_x, &data.weights);
    let wy = weight_rows(&data.psi_y, &data.weights);
    let k = numerics::solve_least_squares(&wx, &wy)?;
    Ok(KoopmanFit {
        g: wx.adjoint() * &wx,
        a: wx.adjoint() * &wy,
        l: wy.adjoint() * &wy,
        k,
        dict,
        data: Some(FitData { wx, wy }),
    })
}

/// Multiply row `m` by `sqrt(w_m)`.
pub(crate) fn weight_rows(psi: &CMat, weights: &[f64]) -> CMat {
    CMat::from_fn(psi.nrows(), psi.ncols(), |i, j| {
        psi[(i, j)] * weights[i].sqrt()
    })
}

/// DMD of snapshot matrices whose *columns* are states, `Y approx A X`.
///
/// Preprocesses by normalizing the columns of `X` (the same diagonal is
/// applied to `Y`; zero columns are dropped through the pseudoinverse of the
/// scaling), truncates the SVD at relative threshold `tol` (defaulting to
/// `nrows * eps`), forms the Rayleigh quotient of the implicit operator on
/// the retained left singular basis, and returns each Ritz pair with its
/// residual.
pub fn dmd(x: &CMat, y: &CMat, tol: Option<f64>) -> Result<DmdResult> {
    if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
        return Err(Error::Contract("X and Y must have the same shape".into()));
    }
    let (n, m) = (x.nrows(), x.ncols());
    if n == 0 || m == 0 {
        return Err(Error::Contract("empty snapshot matrices".into()));
    }
    let tau = tol.unwrap_or(n as f64 * EPS);

    // column-norm scaling; zero columns get a zero inverse scale
    let mut inv_scale = vec![0.0f64; m];
    for j in 0..m {
        let norm = (0..n).map(|i| x[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        inv_scale[j] = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    }
    let xc = scale_cols(x, &inv_scale);
    let yc = scale_cols(y, &inv_scale);

    let svd = numerics::svd(&xc)?;
    let k = svd.rank(tau);
    if k == 0 {
        return Err(Error::Degenerate("X has numerical rank zero".into()));
    }
    let u_k = svd.u.as_ref().submatrix(0, 0, n, k);
    let v_k = svd.v.as_ref().submatrix(0, 0, m, k);

    // C_k = Y_c (V_k Sigma_k^{-1})
    let mut v_scaled = v_k.to_owned();
    for j in 0..k {
        let inv = c64::new(1.0 / svd.singular_values[j], 0.0);
        for i in 0..m {
            v_scaled[(i, j)] *= inv;
        }
    }
    let c_k = &yc * &v_scaled;
    let a_k = u_k.adjoint() * &c_k;

    let eig = numerics::eig(&a_k)?;
    let ritz = u_k * &eig.right_vectors;
    let exact = &c_k * &eig.right_vectors;

    let mut residuals = Vec::with_capacity(k);
    for i in 0..k {
        let mut acc = 0.0;
        for r in 0..n {
            acc += (exact[(r, i)] - eig.eigenvalues[i] * ritz[(r, i)]).norm_sqr();
        }
        residuals.push(acc.sqrt());
    }

    Ok(DmdResult {
        rank: k,
        eigenvalues: eig.eigenvalues,
        ritz_vectors: ritz,
        residuals,
        exact_vectors: exact,
        c_k,
    })
}

fn scale_cols(m: &CMat, scale: &[f64]) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * scale[j])
}

/// Indices of eigenpairs with residual at or below `threshold`, sorted by
/// ascending residual; ties are broken by the distance of `|lambda|` from 1.
pub fn select_modes_by_residual(result: &DmdResult, threshold: f64) -> Result<Vec<usize>> {
    if threshold <= 0.0 {
        return Err(Error::Contract("threshold must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..result.rank)
        .filter(|&i| result.residuals[i] <= threshold)
        .collect();
    idx.sort_by(|&a, &b| {
        let ra = result.residuals[a];
        let rb = result.residuals[b];
        ra.partial_cmp(&rb)
            .unwrap()
            .then_with(|| {
                let da = (1.0 - result.eigenvalues[a].norm()).abs();
                let db = (1.0 - result.eigenvalues[b].norm()).abs();
                da.partial_cmp(&db).unwrap()
            })
    });
    Ok(idx)
}

/// Reconstruction coefficients by the quick projection `alpha = Z_k^dagger x1`.
pub fn project_coefficients(result: &DmdResult, x_first: &CMat) -> Result<CVec> {
    let alpha = numerics::solve_least_squares(&result.ritz_vectors, x_first)?;
    Ok((0..alpha.nrows()).map(|i| alpha[(i, 0)]).collect())
}

/// Solve the weighted spatio-temporal reconstruction problem
/// `min_alpha sum_m w_m^2 || x^(m) - sum_j z_j alpha_j lambda_j^{m-1} ||^2`
/// over the selected modes, and report per-snapshot relative errors.
pub fn reconstruct(
    result: &DmdResult,
    x: &CMat,
    selection: &[usize],
    weights: &[f64],
) -> Result<Reconstruction> {
    if selection.is_empty() {
        return Err(Error::Contract("mode selection is empty".into()));
    }
    if selection.iter().any(|&j| j >= result.rank) {
        return Err(Error::Contract("mode index out of range".into()));
    }
    let (n, m) = (x.nrows(), x.ncols());
    if weights.len() != m {
        return Err(Error::Contract("one weight per snapshot is required".into()));
    }
    let l = selection.len();

    // dense Khatri-Rao structured system: block row m holds
    // w_m * lambda_j^{m-1} * z_j in column j
    let mut design = CMat::zeros(n * m, l);
    let mut rhs = CMat::zeros(n * m, 1);
    let mut powers: CVec = vec![c64::new(1.0, 0.0); l];
    for mm in 0..m {
        let w = c64::new(weights[mm], 0.0);
        for (jj, &mode) in selection.iter().enumerate() {
            let factor = w * powers[jj];
            for i in 0..n {
                design[(mm * n + i, jj)] = factor * result.ritz_vectors[(i, mode)];
            }
            powers[jj] *= result.eigenvalues[mode];
        }
        for i in 0..n {
            rhs[(mm * n + i, 0)] = w * x[(i, mm)];
        }
    }
    let alpha = numerics::solve_least_squares(&design, &rhs)?;
    let coefficients: CVec = (0..l).map(|i| alpha[(i, 0)]).collect();

    let errors = reconstruction_errors(result, x, selection, &coefficients);
    Ok(Reconstruction {
        selection: selection.to_vec(),
        coefficients,
        errors,
    })
}

/// Per-snapshot relative errors of a modal expansion.
pub fn reconstruction_errors(
    result: &DmdResult,
    x: &CMat,
    selection: &[usize],
    coefficients: &[c64],
) -> Vec<f64> {
    let (n, m) = (x.nrows(), x.ncols());
    let mut powers: CVec = vec![c64::new(1.0, 0.0); selection.len()];
    let mut errors = Vec::with_capacity(m);
    for mm in 0..m {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let mut approx = c64::new(0.0, 0.0);
            for (jj, &mode) in selection.iter().enumerate() {
                approx += result.ritz_vectors[(i, mode)] * coefficients[jj] * powers[jj];
            }
            num += (x[(i, mm)] - approx).norm_sqr();
            den += x[(i, mm)].norm_sqr();
        }
        for (jj, &mode) in selection.iter().enumerate() {
            powers[jj] *= result.eigenvalues[mode];
        }
        errors.push(if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        });
    }
    errors
}
