//! Measure-preserving EDMD: the best G-unitary approximation of the Koopman
//! operator, its discrete spectral measures, and the circular Wasserstein
//! metric used to assess them.

use faer::c64;

use crate::dictionary::DataMatrices;
use crate::dmd::weight_rows;
use crate::numerics::{self, EPS};
use crate::{CMat, CVec, Error, Result};

/// Output of the measure-preserving fit.
#[derive(Debug, Clone)]
pub struct MpResult {
    /// `N x N` matrix, unitary with respect to the Gram inner product:
    /// `K_mp^* G K_mp = G`.
    pub k_mp: CMat,
    /// Eigenvalues, all on the unit circle.
    pub eigenvalues: CVec,
    /// Eigenvector coefficients, G-orthonormal columns (`V^* G V = I`).
    pub eigenvectors: CMat,
    /// Gram matrix of the dictionary on the data.
    pub gram: CMat,
}

/// Discrete (atomic) spectral measure on the periodic interval `[-pi, pi)`.
#[derive(Debug, Clone)]
pub struct AtomicSpectralMeasure {
    /// Atom angles in `[-pi, pi)`, strictly increasing.
    pub thetas: Vec<f64>,
    /// Atom masses (nonnegative for spectral measures; interpolatory
    /// quadrature rules may carry signed weights).
    pub masses: Vec<f64>,
}

impl AtomicSpectralMeasure {
    /// Atoms sorted by angle, angles wrapped to `[-pi, pi)`; atoms closer
    /// than `merge_tol` are combined.
    pub fn new(mut atoms: Vec<(f64, f64)>, merge_tol: f64) -> Self {
        let pi = std::f64::consts::PI;
        for a in &mut atoms {
            a.0 = wrap_angle(a.0);
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut thetas: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (theta, mass) in atoms {
            if let (Some(last_t), Some(last_m)) = (thetas.last().copied(), masses.last_mut()) {
                if theta - last_t <= merge_tol {
                    *last_m += mass;
                    continue;
                }
            }
            thetas.push(theta);
            masses.push(mass);
        }
        // wrap-around merge at the +-pi seam
        if thetas.len() > 1 {
            let first = thetas[0];
            let last = *thetas.last().unwrap();
            if (first + pi) + (pi - last) <= merge_tol {
                masses[0] += masses.pop().unwrap();
                thetas.pop();
            }
        }
        Self { thetas, masses }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let t = (theta + pi).rem_euclid(2.0 * pi) - pi;
    if t >= pi {
        -pi
    } else {
        t
    }
}

/// A measure on the circle that the Wasserstein metric can compare against.
#[derive(Debug, Clone)]
pub enum CircularMeasure {
    Atoms(AtomicSpectralMeasure),
    /// The uniform measure with the given total mass.
    Uniform { total: f64 },
}

impl CircularMeasure {
    fn total_mass(&self) -> f64 {
        match self {
            CircularMeasure::Atoms(a) => a.total_mass(),
            CircularMeasure::Uniform { total } => *total,
        }
    }

    /// CDF from `-pi`; with `strict` atoms at exactly `theta` are excluded,
    /// giving the left limit.
    fn cdf(&self, theta: f64, strict: bool) -> f64 {
        match self {
            CircularMeasure::Atoms(a) => a
                .thetas
                .iter()
                .zip(&a.masses)
                .take_while(|(t, _)| if strict { **t < theta } else { **t <= theta })
                .map(|(_, m)| m)
                .sum(),
            CircularMeasure::Uniform { total } => {
                total * (theta + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            CircularMeasure::Atoms(a) => a.thetas.clone(),
            CircularMeasure::Uniform { .. } => Vec::new(),
        }
    }
}

/// Measure-preserving EDMD (the G-unitary polar factor of the EDMD fit).
///
/// Factors `W^{1/2} Psi_X P = Q R` by pivoted QR, takes the SVD
/// `(P R^{-1})^* Psi_Y^* W^{1/2} Q = U_1 Sigma U_2^*`, diagonalizes the
/// unitary `U_2 U_1^*`, and maps back:
/// `K_mp = P R^{-1} U_2 U_1^* R P^T`, `V = P R^{-1} V_hat`.
pub fn mpedmd_fit(data: &DataMatrices) -> Result<MpResult> {
    let n = data.psi_x.ncols();
    let wx = weight_rows(&data.psi_x, &data.weights);
    let wy = weight_rows(&data.psi_y, &data.weights);
    let gram = wx.adjoint() * &wx;

    let qr = numerics::pivoted_qr(&wx)?;
    let perm = qr.permutation.as_ref().expect("pivoted QR returns a permutation");
    let rdiag: Vec<f64> = (0..n).map(|i| qr.r[(i, i)].norm()).collect();
    let rmax = rdiag.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = data.psi_x.nrows().max(n) as f64 * EPS * rmax;
    let rank = rdiag.iter().take_while(|&&d| d > tol).count();
    if rank < n {
        return Err(Error::Degenerate(format!(
            "W^(1/2) Psi_X has numerical rank {rank} < {n} (pivoted |R_ii| range {:.3e}..{:.3e}); \
             reduce the dictionary before the measure-preserving fit",
            rdiag.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
            rmax
        )));
    }

    // T = (P R^{-1})^* Psi_Y^* W^{1/2} Q = R^{-*} P^T (W^{1/2} Psi_Y)^* Q
    let s1 = wy.adjoint() * &qr.q;
    let s2 = apply_perm_rows_transpose(&s1, perm);
    let t = numerics::solve_linear(&qr.r.adjoint().to_owned(), &s2)?;

    let svd = numerics::svd(&t)?;
    let rotation = &svd.v * svd.u.adjoint(); // U_2 U_1^*
    let eig = numerics::schur_unitary_eig(&rotation)?;

    // K_mp = P R^{-1} (U_2 U_1^*) R P^T
    let c = numerics::solve_linear(&qr.r, &rotation)?;
    let k_inner = apply_perm_rows(&(c * &qr.r), perm);
    let k_mp = apply_perm_cols_transpose(&k_inner, perm);

    let v_inner = numerics::solve_linear(&qr.r, &eig.right_vectors)?;
    let eigenvectors = apply_perm_rows(&v_inner, perm);

    Ok(MpResult {
        k_mp,
        eigenvalues: eig.eigenvalues,
        eigenvectors,
        gram,
    })
}

/// `(P m)[perm[i], :] = m[i, :]`.
fn apply_perm_rows(m: &CMat, perm: &[usize]) -> CMat {
    let mut out = CMat::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(perm[i], j)] = m[(i, j)];
        }
    }
    out
}

/// `(P^T m)[i, :] = m[perm[i], :]`.
fn apply_perm_rows_transpose(m: &CMat, perm: &[usize]) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

/// `(m P^T)[:, perm[j]] = m[:, j]`.
fn apply_perm_cols_transpose(m: &CMat, perm: &[usize]) -> CMat {
    let mut out = CMat::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[(i, perm[j])] = m[(i, j)];
        }
    }
    out
}

/// Scalar spectral measure of an observable in dictionary coordinates:
/// atoms at `arg(lambda_j)` with masses `|v_j^* G g|^2`.
///
/// With `normalize` the masses are divided by `g^* G g`, making the result a
/// probability measure. Eigenvalues closer than 1e-10 are merged.
pub fn scalar_measure(
    result: &MpResult,
    g_coeffs: &[c64],
    normalize: bool,
) -> Result<AtomicSpectralMeasure> {
    let n = result.gram.nrows();
    if g_coeffs.len() != n {
        return Err(Error::Contract("coefficient vector has wrong length".into()));
    }
    let g = CMat::from_fn(n, 1, |i, _| g_coeffs[i]);
    let gg = (g.adjoint() * &result.gram * &g)[(0, 0)].re;
    if gg <= 0.0 || !gg.is_finite() {
        return Err(Error::Degenerate(
            "observable has nonpositive norm in the data metric".into(),
        ));
    }
    let vg = result.eigenvectors.adjoint() * &result.gram * &g;
    let scale = if normalize { gg } else { 1.0 };
    let atoms: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            (
                result.eigenvalues[j].arg(),
                vg[(j, 0)].norm_sqr() / scale,
            )
        })
        .collect();
    // angular tolerance matching the eigenvalue clustering tolerance
    Ok(AtomicSpectralMeasure::new(atoms, 1e-10))
}

/// Wasserstein-1 distance between measures on the periodic interval, through
/// the circular CDF formula `min_t int |F_mu - F_nu - t| d theta`.
///
/// Total masses must agree to 1e-8.
pub fn wasserstein1_circular(mu: &CircularMeasure, nu: &CircularMeasure) -> Result<f64> {
    let total_mu = mu.total_mass();
    let total_nu = nu.total_mass();
    if (total_mu - total_nu).abs() > 1e-8 * total_mu.abs().max(1.0) {
        return Err(Error::Contract(format!(
            "total masses differ: {total_mu} vs {total_nu}"
        )));
    }
    let pi = std::f64::consts::PI;
    let mut cuts: Vec<f64> = vec![-pi, pi];
    cuts.extend(mu.breakpoints());
    cuts.extend(nu.breakpoints());
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    // D = F_mu - F_nu is linear on each segment (constant when both atomic);
    // phi(t) = int |D - t| is convex, minimized by ternary search
    let mut segments: Vec<(f64, f64, f64)> = Vec::new(); // (length, D_left, D_right)
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        // D is right-continuous: atoms at the left cut are part of the
        // segment, atoms at the right cut are not
        let da = mu.cdf(a, false) - nu.cdf(a, false);
        let db = mu.cdf(b, true) - nu.cdf(b, true);
        segments.push((b - a, da, db));
        lo = lo.min(da.min(db));
        hi = hi.max(da.max(db));
    }
    if segments.is_empty() {
        return Ok(0.0);
    }
    let phi = |t: f64| -> f64 {
        segments
            .iter()
            .map(|&(len, da, db)| integral_abs_linear(len, da - t, db - t))
            .sum()
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if phi(m1) <= phi(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    Ok(phi(0.5 * (a + b)))
}

/// Exact `int_0^len |f|` for the linear function with endpoint values `fa`, `fb`.
fn integral_abs_linear(len: f64, fa: f64, fb: f64) -> f64 {
    if fa * fb >= 0.0 {
        0.5 * (fa.abs() + fb.abs()) * len
    } else {
        // sign change at x = len * fa / (fa - fb)
        let x = len * fa / (fa - fb);
        0.5 * (fa.abs() * x + fb.abs() * (len - x))
    }
}

/// Wasserstein distance between the mpEDMD scalar measure of `g` and a
/// reference measure; for delay dictionaries of depth `L + 1` the theory
/// bounds this by `pi / (L + 1)` in the large-data limit.
pub fn delay_measure_bound_check(
    result: &MpResult,
    g_coeffs: &[c64],
    reference: &CircularMeasure,
) -> Result<f64> {
    let measure = scalar_measure(result, g_coeffs, true)?;
    wasserstein1_circular(&CircularMeasure::Atoms(measure), reference)
}
