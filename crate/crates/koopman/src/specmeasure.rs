//! Spectral measures of unitary Koopman operators from moments:
//! interpolatory quadrature, truncated and filtered Fourier series, and
//! high-order rational smoothing kernels evaluated through resolvents.

use std::sync::Arc;

use faer::c64;

use crate::mpedmd::{wrap_angle, AtomicSpectralMeasure};
use crate::numerics;
use crate::{CMat, CVec, Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Where a moment sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    TrajectoryAutocorrelation,
    GramMatrices,
    AnalyticOracle,
}

/// Moments `c_n` of a scalar spectral measure for `n = -N ..= N`.
///
/// Only `n >= 0` is stored; Hermitian symmetry `c_{-n} = conj(c_n)` is
/// enforced structurally.
#[derive(Debug, Clone)]
pub struct MomentSequence {
    c_nonneg: CVec,
    pub source: MomentSource,
}

impl MomentSequence {
    /// Build from `c_0 ..= c_N`.
    pub fn new(c_nonneg: CVec, source: MomentSource) -> Result<Self> {
        if c_nonneg.is_empty() {
            return Err(Error::Contract("need at least the zeroth moment".into()));
        }
        if c_nonneg
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Contract("moments must be finite".into()));
        }
        Ok(Self { c_nonneg, source })
    }

    /// Truncation order `N`.
    pub fn order(&self) -> usize {
        self.c_nonneg.len() - 1
    }

    /// `c_k` for any `|k| <= N`.
    pub fn get(&self, k: i64) -> c64 {
        if k >= 0 {
            self.c_nonneg[k as usize]
        } else {
            self.c_nonneg[(-k) as usize].conj()
        }
    }

    /// A copy truncated to order `n <= N` (used for convergence sweeps).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.order() {
            return Err(Error::Contract(format!(
                "cannot extend order {} to {n}",
                self.order()
            )));
        }
        Ok(Self {
            c_nonneg: self.c_nonneg[..=n].to_vec(),
            source: self.source,
        })
    }

    /// Consistency warnings: `|c_n|` must not exceed `c_0` for a genuine
    /// spectral measure (finite-sample estimates may violate this slightly).
    pub fn validate(&self) -> Vec<String> {
        let c0 = self.c_nonneg[0].norm();
        let mut warnings = Vec::new();
        if self.c_nonneg[0].im.abs() > 1e-10 * c0.max(1.0) {
            warnings.push(format!(
                "zeroth moment has imaginary part {:.3e}",
                self.c_nonneg[0].im
            ));
        }
        for (n, c) in self.c_nonneg.iter().enumerate().skip(1) {
            if c.norm() > c0 + 1e-10 {
                warnings.push(format!(
                    "|c_{n}| = {:.6} exceeds c_0 = {c0:.6}; the sequence is not positive definite",
                    c.norm()
                ));
                break;
            }
        }
        warnings
    }
}

/// Unbiased autocorrelation moments of a scalar observable series:
/// `c_n = (1/(M - n)) sum_k g(x_{k+n}) conj(g(x_k))`.
pub fn moments_from_trajectory(series: &[c64], order: usize) -> Result<MomentSequence> {
    let m = series.len();
    if m < 2 * order + 2 {
        return Err(Error::Contract(format!(
            "series length {m} is too short for order {order} (need >= {})",
            2 * order + 2
        )));
    }
    let mut c = CVec::with_capacity(order + 1);
    for n in 0..=order {
        let mut acc = c64::new(0.0, 0.0);
        for k in 0..m - n {
            acc += series[k + n] * series[k].conj();
        }
        c.push(acc / (m - n) as f64);
    }
    MomentSequence::new(c, MomentSource::TrajectoryAutocorrelation)
}

/// Moments of an atomic measure: `c_n = sum_j p_j e^{i n theta_j}`.
pub fn moments_from_atoms(measure: &AtomicSpectralMeasure, order: usize) -> Result<MomentSequence> {
    let mut c = CVec::with_capacity(order + 1);
    for n in 0..=order {
        let mut acc = c64::new(0.0, 0.0);
        for (theta, mass) in measure.thetas.iter().zip(&measure.masses) {
            acc += c64::from_polar(*mass, n as f64 * theta);
        }
        c.push(acc);
    }
    MomentSequence::new(c, MomentSource::GramMatrices)
}

/// Method metadata attached to every measure approximation.
#[derive(Debug, Clone, Default)]
pub struct MeasureMetadata {
    pub method: String,
    pub order: Option<usize>,
    pub epsilon: Option<f64>,
    pub filter: Option<String>,
    /// `sum_j |w_j|`, the uniform-summability statistic of quadrature rules.
    pub abs_weight_sum: Option<f64>,
    /// Largest imaginary residue discarded when realifying.
    pub imag_residue: Option<f64>,
    /// Condition estimate of the node system (general-node quadrature only).
    pub condition: Option<f64>,
    pub warnings: Vec<String>,
}

/// Density samples with an optional callable evaluator.
#[derive(Clone)]
pub struct DensityApprox {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-point failure flags (resolvent evaluation may fail pointwise).
    pub failed: Vec<bool>,
    evaluator: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for DensityApprox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityApprox")
            .field("points", &self.thetas.len())
            .field("callable", &self.evaluator.is_some())
            .finish()
    }
}

impl DensityApprox {
    /// Evaluate the density at an arbitrary angle when a callable is attached.
    pub fn eval(&self, theta: f64) -> Option<f64> {
        self.evaluator.as_ref().map(|f| f(theta))
    }
}

/// The representation produced by a spectral-measure method.
#[derive(Debug, Clone)]
pub enum MeasureRepr {
    Atoms(AtomicSpectralMeasure),
    Density(DensityApprox),
}

/// A spectral measure approximation plus convergence metadata.
#[derive(Debug, Clone)]
pub struct SpectralMeasureApprox {
    pub repr: MeasureRepr,
    pub metadata: MeasureMetadata,
}

/// The default evaluation grid: 2048 equispaced angles in `[-pi, pi)`.
pub fn default_theta_grid() -> Vec<f64> {
    uniform_theta_grid(2048)
}

/// `n` equispaced angles in `[-pi, pi)`.
pub fn uniform_theta_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| -std::f64::consts::PI + TWO_PI * j as f64 / n as f64)
        .collect()
}

/// Interpolatory quadrature: atoms matching all moments up to order `N`.
///
/// With the default nodes (the `(2N+1)`-th roots of unity) the Vandermonde
/// system is a scaled DFT and the weights are computed by the inverse
/// transform; custom distinct nodes go through a dense solve with a
/// condition estimate surfaced in the metadata.
pub fn interpolatory_quadrature(
    moments: &MomentSequence,
    nodes: Option<&[f64]>,
) -> Result<SpectralMeasureApprox> {
    let order = moments.order();
    let n_nodes = 2 * order + 1;
    let mut metadata = MeasureMetadata {
        method: "interpolatory_quadrature".into(),
        order: Some(order),
        ..Default::default()
    };
    metadata.warnings.extend(moments.validate());

    let (thetas, weights): (Vec<f64>, Vec<c64>) = match nodes {
        None => {
            // theta_j = 2 pi j / (2N+1), j = -N..N; w_j = (1/(2N+1)) sum_k c_k e^{-i k theta_j}
            let mut thetas = Vec::with_capacity(n_nodes);
            let mut weights = Vec::with_capacity(n_nodes);
            for j in -(order as i64)..=(order as i64) {
                let theta = TWO_PI * j as f64 / n_nodes as f64;
                let mut acc = c64::new(0.0, 0.0);
                for k in -(order as i64)..=(order as i64) {
                    acc += moments.get(k) * c64::from_polar(1.0, -(k as f64) * theta);
                }
                thetas.push(theta);
                weights.push(acc / n_nodes as f64);
            }
            (thetas, weights)
        }
        Some(angles) => {
            if angles.len() != n_nodes {
                return Err(Error::Contract(format!(
                    "need {n_nodes} nodes for order {order}, got {}",
                    angles.len()
                )));
            }
            let z: CVec = angles.iter().map(|&t| c64::from_polar(1.0, t)).collect();
            // shift to canonical powers 0..2N: rhs_p = c_{p-N}, then w_j = z_j^N w'_j
            let rhs: CVec = (0..n_nodes)
                .map(|p| moments.get(p as i64 - order as i64))
                .collect();
            let sol = numerics::solve_vandermonde(&z, &rhs)?;
            metadata.condition = sol.condition;
            if let Some(cond) = sol.condition {
                if cond > 1e10 {
                    metadata.warnings.push(format!(
                        "node Vandermonde condition estimate {cond:.3e}; weights may be inaccurate"
                    ));
                }
            }
            if sol.relative_residual > 1e-8 {
                metadata.warnings.push(format!(
                    "moment-matching residual {:.3e} exceeds 1e-8",
                    sol.relative_residual
                ));
            }
            let weights: CVec = sol
                .weights
                .iter()
                .zip(&z)
                .map(|(w, zj)| w * zj.powu(order as u32))
                .collect();
            (angles.to_vec(), weights)
        }
    };

    let imag_residue = weights.iter().map(|w| w.im.abs()).fold(0.0, f64::max);
    metadata.imag_residue = Some(imag_residue);
    metadata.abs_weight_sum = Some(weights.iter().map(|w| w.norm()).sum());
    if imag_residue > 1e-8 {
        metadata
            .warnings
            .push(format!("imaginary weight residue {imag_residue:.3e}"));
    }
    let atoms: Vec<(f64, f64)> = thetas
        .iter()
        .zip(&weights)
        .map(|(t, w)| (*t, w.re))
        .collect();
    Ok(SpectralMeasureApprox {
        repr: MeasureRepr::Atoms(AtomicSpectralMeasure::new(atoms, 0.0)),
        metadata,
    })
}

/// Integrate a periodic test function against a measure approximation.
///
/// Atoms integrate exactly as weighted sums; densities use the periodic
/// trapezoidal rule with `max(2N + 1, quad_degree)` nodes (falling back to
/// the stored samples when no callable is attached).
pub fn integrate_against(
    measure: &SpectralMeasureApprox,
    testfn: &dyn Fn(f64) -> c64,
    quad_degree: usize,
) -> c64 {
    match &measure.repr {
        MeasureRepr::Atoms(atoms) => {
            let mut acc = c64::new(0.0, 0.0);
            for (t, m) in atoms.thetas.iter().zip(&atoms.masses) {
                acc += testfn(*t) * *m;
            }
            acc
        }
        MeasureRepr::Density(density) => {
            let n_default = measure.metadata.order.map(|n| 2 * n + 1).unwrap_or(0);
            let n_nodes = n_default.max(quad_degree).max(2);
            match density.eval(0.0) {
                Some(_) => {
                    let mut acc = c64::new(0.0, 0.0);
                    for theta in uniform_theta_grid(n_nodes) {
                        acc += testfn(theta) * density.eval(theta).unwrap();
                    }
                    acc * (TWO_PI / n_nodes as f64)
                }
                None => {
                    let mut acc = c64::new(0.0, 0.0);
                    for (theta, value) in density.thetas.iter().zip(&density.values) {
                        if value.is_finite() {
                            acc += testfn(*theta) * *value;
                        }
                    }
                    acc * (TWO_PI / density.thetas.len() as f64)
                }
            }
        }
    }
}

/// Truncated Fourier series density
/// `rho(theta) = (1/2pi) sum_{|k| <= N} c_k e^{-i k theta}`.
pub fn fourier_density(moments: &MomentSequence) -> SpectralMeasureApprox {
    filtered_density_impl(moments, None)
}

/// Spectral filters `nu : [-1, 1] -> R` applied as `c_k nu(k / N)`.
#[derive(Clone)]
pub enum Filter {
    /// First order, `nu(x) = 1 - |x|` (the Fejer kernel).
    Hat,
    /// Second order, `nu(x) = (1 + cos(pi x)) / 2`.
    Cosine,
    /// Fourth order, `nu(x) = 1 - 35 x^4 + 84 |x|^5 - 70 x^6 + 20 |x|^7`.
    Vandeven4,
    /// Infinite order bump filter.
    Bump,
    Custom {
        name: String,
        order: usize,
        eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for Filter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Filter::{}", self.name())
    }
}

/// Normalization constant of the bump filter, chosen so `nu(1/2) = 1/2`.
pub const BUMP_C: f64 = 0.109550455106347;

impl Filter {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "hat" => Ok(Filter::Hat),
            "cosine" => Ok(Filter::Cosine),
            "vandeven4" => Ok(Filter::Vandeven4),
            "bump" => Ok(Filter::Bump),
            other => Err(Error::Contract(format!("unknown filter '{other}'"))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Filter::Hat => "hat",
            Filter::Cosine => "cosine",
            Filter::Vandeven4 => "vandeven4",
            Filter::Bump => "bump",
            Filter::Custom { name, .. } => name,
        }
    }

    /// Pointwise convergence order; `None` means faster than any polynomial.
    pub fn order(&self) -> Option<usize> {
        match self {
            Filter::Hat => Some(1),
            Filter::Cosine => Some(2),
            Filter::Vandeven4 => Some(4),
            Filter::Bump => None,
            Filter::Custom { order, .. } => Some(*order),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax >= 1.0 {
            return 0.0;
        }
        match self {
            Filter::Hat => 1.0 - ax,
            Filter::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * x).cos()),
            Filter::Vandeven4 => {
                1.0 - 35.0 * ax.powi(4) + 84.0 * ax.powi(5) - 70.0 * ax.powi(6) + 20.0 * ax.powi(7)
            }
            Filter::Bump => {
                if ax == 0.0 {
                    1.0
                } else {
                    (-(2.0 / (1.0 - ax)) * (-BUMP_C / ax.powi(4)).exp()).exp()
                }
            }
            Filter::Custom { eval, .. } => eval(x),
        }
    }
}

/// Filtered Fourier density `(1/2pi) sum c_k nu(k/N) e^{-i k theta}`.
pub fn filtered_density(moments: &MomentSequence, filter: &Filter) -> SpectralMeasureApprox {
    filtered_density_impl(moments, Some(filter))
}

fn filtered_density_impl(moments: &MomentSequence, filter: Option<&Filter>) -> SpectralMeasureApprox {
    let order = moments.order();
    // real form: rho = (1/2pi) [c_0 + 2 sum_{k>=1} Re(c_k nu(k/N) e^{-ik theta})]
    let tapered: CVec = (0..=order)
        .map(|k| {
            let nu = filter
                .map(|f| f.eval(k as f64 / order.max(1) as f64))
                .unwrap_or(1.0);
            moments.get(k as i64) * nu
        })
        .collect();
    let c0_im = tapered[0].im.abs();
    let coeffs = Arc::new(tapered);
    let eval_coeffs = Arc::clone(&coeffs);
    let evaluator = Arc::new(move |theta: f64| -> f64 {
        let mut acc = eval_coeffs[0].re;
        // e^{-ik theta} recurrence
        let step = c64::from_polar(1.0, -theta);
        let mut phase = c64::new(1.0, 0.0);
        for c in eval_coeffs.iter().skip(1) {
            phase *= step;
            acc += 2.0 * (c * phase).re;
        }
        acc / TWO_PI
    });

    let thetas = default_theta_grid();
    let values: Vec<f64> = thetas.iter().map(|&t| evaluator(t)).collect();
    let metadata = MeasureMetadata {
        method: if filter.is_some() {
            "filtered_fourier_density".into()
        } else {
            "fourier_density".into()
        },
        order: Some(order),
        filter: filter.map(|f| f.name().to_string()),
        // Hermitian symmetry makes the series real up to the stored c_0
        imag_residue: Some(c0_im / TWO_PI),
        warnings: moments.validate(),
        ..Default::default()
    };
    SpectralMeasureApprox {
        repr: MeasureRepr::Density(DensityApprox {
            failed: vec![false; thetas.len()],
            values,
            thetas,
            evaluator: Some(evaluator),
        }),
        metadata,
    }
}

/// A periodized rational smoothing kernel of order `m`.
///
/// On the real line `K(x) = (1/2pi i) sum_j [alpha_j/(x - a_j) - conj(alpha_j)/(x - conj(a_j))]`
/// with equally spaced poles `a_j = 2j/(m+1) - 1 + i`; the residues solve the
/// Vandermonde conditions that match the moments of the Dirac delta up to
/// order `m - 1`. Periodization uses the cotangent identity
/// `sum_n 1/(x + 2 pi n) = cot(x/2)/2` rather than a truncated lattice sum.
#[derive(Debug, Clone)]
pub struct RationalKernel {
    pub order: usize,
    pub epsilon: f64,
    /// Upper-half-plane poles `a_j`.
    pub poles: CVec,
    /// Residues `alpha_j` (the conjugate family is implicit).
    pub residues: CVec,
    /// Power sums `sum_j alpha_j a_j^k` for `k < m`, as actually realized by
    /// the computed residues (ideally `(1, 0, ..., 0)`).
    pub power_sums: CVec,
    /// Condition estimate of the residue system, if it was solved densely.
    pub condition: Option<f64>,
}

impl RationalKernel {
    /// Kernel on the real line.
    ///
    /// For large `|x|` the partial fractions cancel to `O(x^{-m-1})`, far
    /// below what direct summation can resolve; there the geometric-series
    /// remainder form is used, with the realized power sums kept explicitly
    /// so any defect in the residues still shows up.
    pub fn eval_line(&self, x: f64) -> f64 {
        let z = c64::new(x, 0.0);
        if x.abs() <= 8.0 {
            let mut acc = c64::new(0.0, 0.0);
            for (a, alpha) in self.poles.iter().zip(&self.residues) {
                acc += alpha / (z - a);
            }
            return acc.im / std::f64::consts::PI;
        }
        // 1/(x-a) = sum_{k<m} a^k / x^{k+1} + a^m / (x^m (x-a))
        let inv = 1.0 / x;
        let mut acc = c64::new(0.0, 0.0);
        let mut xpow = 1.0;
        for c in &self.power_sums {
            xpow *= inv;
            acc += c * xpow;
        }
        let x_neg_m = inv.powi(self.order as i32);
        for (a, alpha) in self.poles.iter().zip(&self.residues) {
            acc += alpha * a.powu(self.order as u32) * x_neg_m / (z - a);
        }
        acc.im / std::f64::consts::PI
    }

    /// Periodized and `epsilon`-rescaled kernel on `[-pi, pi]`.
    pub fn eval_periodic(&self, theta: f64) -> f64 {
        let mut acc = c64::new(0.0, 0.0);
        for (a, alpha) in self.poles.iter().zip(&self.residues) {
            let w = (c64::new(theta, 0.0) - self.epsilon * a) * 0.5;
            acc += alpha * 0.5 * (w.cos() / w.sin());
        }
        acc.im / std::f64::consts::PI
    }

    /// The resolvent sample points `e^{i theta - i eps a_j}` for all poles.
    pub fn resolvent_points(&self, theta: f64) -> CVec {
        self.poles
            .iter()
            .map(|a| (c64::new(0.0, theta) - c64::new(0.0, self.epsilon) * a).exp())
            .collect()
    }
}

/// Build the order-`m` rational kernel at smoothing scale `epsilon`.
pub fn rational_kernel_build(m: usize, epsilon: f64) -> Result<RationalKernel> {
    if m < 1 {
        return Err(Error::Contract("kernel order must be >= 1".into()));
    }
    if epsilon <= 0.0 {
        return Err(Error::Contract("epsilon must be positive".into()));
    }
    let poles: CVec = (1..=m)
        .map(|j| c64::new(2.0 * j as f64 / (m as f64 + 1.0) - 1.0, 1.0))
        .collect();
    let mut rhs = vec![c64::new(0.0, 0.0); m];
    rhs[0] = c64::new(1.0, 0.0);
    let sol = numerics::solve_vandermonde(&poles, &rhs)?;
    let mut power_sums = vec![c64::new(0.0, 0.0); m];
    let mut powers: CVec = vec![c64::new(1.0, 0.0); m];
    for k in 0..m {
        for j in 0..m {
            power_sums[k] += sol.weights[j] * powers[j];
            powers[j] *= poles[j];
        }
    }
    Ok(RationalKernel {
        order: m,
        epsilon,
        poles,
        residues: sol.weights,
        power_sums,
        condition: sol.condition,
    })
}

/// The Poisson kernel for the unit disk at radius `r`.
///
/// The order-1 rational kernel coincides with it under the parameter match
/// `r = e^{-epsilon}` (approximately `1/(1 + epsilon)` for small `epsilon`).
pub fn poisson_kernel(r: f64, theta: f64) -> f64 {
    (1.0 - r * r) / (TWO_PI * (1.0 - 2.0 * r * theta.cos() + r * r))
}

/// Inputs a smoothed density can be computed from.
pub enum SmoothingSource<'a> {
    /// A discrete measure (for example an mpEDMD scalar measure).
    Atoms(&'a AtomicSpectralMeasure),
    /// An operator handle: resolvent evaluations of `K` against `g` in the
    /// `G` inner product.
    Resolvent {
        k: &'a CMat,
        gram: &'a CMat,
        coeffs: &'a [c64],
    },
}

/// Convolve a spectral measure with the rational kernel on a grid.
///
/// The atom path evaluates `sum_j p_j K_eps(theta - theta_j)` directly; the
/// resolvent path evaluates
/// `-(1/2pi) sum_j Re(alpha_j <(K - w_j)^-1 g, (K + w_j)* g>_G)` with
/// `w_j = e^{i theta - i eps a_j}` through linear solves. Points where a
/// solve is unreliable are flagged, not fatal.
pub fn smoothed_density(
    source: &SmoothingSource<'_>,
    kernel: &RationalKernel,
    thetas: &[f64],
) -> Result<SpectralMeasureApprox> {
    if thetas.is_empty() {
        return Err(Error::Contract("theta grid must be nonempty".into()));
    }
    let mut metadata = MeasureMetadata {
        method: "smoothed_density".into(),
        order: Some(kernel.order),
        epsilon: Some(kernel.epsilon),
        ..Default::default()
    };
    match source {
        SmoothingSource::Atoms(atoms) => {
            let atoms = (*atoms).clone();
            let kernel = kernel.clone();
            let eval_atoms = atoms.clone();
            let eval_kernel = kernel.clone();
            let evaluator = Arc::new(move |theta: f64| -> f64 {
                eval_atoms
                    .thetas
                    .iter()
                    .zip(&eval_atoms.masses)
                    .map(|(t, p)| p * eval_kernel.eval_periodic(wrap_angle(theta - t)))
                    .sum()
            });
            let values: Vec<f64> = thetas.iter().map(|&t| evaluator(t)).collect();
            metadata.method = "smoothed_density_atoms".into();
            Ok(SpectralMeasureApprox {
                repr: MeasureRepr::Density(DensityApprox {
                    thetas: thetas.to_vec(),
                    failed: vec![false; values.len()],
                    values,
                    evaluator: Some(evaluator),
                }),
                metadata,
            })
        }
        SmoothingSource::Resolvent { k, gram, coeffs } => {
            let n = k.nrows();
            if k.ncols() != n || gram.nrows() != n || gram.ncols() != n || coeffs.len() != n {
                return Err(Error::Contract("operator handle shapes mismatch".into()));
            }
            let g = CMat::from_fn(n, 1, |i, _| coeffs[i]);
            let g_norm = g.norm_l2();
            let gg = (*gram * &g).to_owned(); // G g
            let mut values = Vec::with_capacity(thetas.len());
            let mut failed = Vec::with_capacity(thetas.len());
            let mut n_failed = 0usize;
            for &theta in thetas {
                let ws = kernel.resolvent_points(theta);
                let mut acc = 0.0;
                let mut ok = true;
                for (alpha, w) in kernel.residues.iter().zip(&ws) {
                    let mut shifted = (*k).clone();
                    for i in 0..n {
                        shifted[(i, i)] -= w;
                    }
                    let u = match numerics::solve_linear(&shifted, &g) {
                        Ok(u) => u,
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    };
                    let residual_norm = (&shifted * &u - &g).norm_l2();
                    let u_norm = u.norm_l2();
                    if !u_norm.is_finite()
                        || u_norm > 1e14 * g_norm
                        || residual_norm > 1e-6 * g_norm
                    {
                        ok = false;
                        break;
                    }
                    // <u, (K + w)^sharp g>_G = g^* G (K + w) u
                    let ku = *k * &u;
                    let mut inner = c64::new(0.0, 0.0);
                    for i in 0..n {
                        inner += gg[(i, 0)].conj() * (ku[(i, 0)] + w * u[(i, 0)]);
                    }
                    acc += (alpha * inner).re;
                }
                if ok {
                    values.push(-acc / TWO_PI);
                    failed.push(false);
                } else {
                    values.push(f64::NAN);
                    failed.push(true);
                    n_failed += 1;
                }
            }
            if n_failed > 0 {
                metadata
                    .warnings
                    .push(format!("{n_failed} grid points failed the resolvent solve"));
            }
            metadata.method = "smoothed_density_resolvent".into();
            Ok(SpectralMeasureApprox {
                repr: MeasureRepr::Density(DensityApprox {
                    thetas: thetas.to_vec(),
                    values,
                    failed,
                    evaluator: None,
                }),
                metadata,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn point_mass_moments(theta0: f64, order: usize) -> MomentSequence {
        let c: CVec = (0..=order)
            .map(|n| c64::from_polar(1.0, n as f64 * theta0))
            .collect();
        MomentSequence::new(c, MomentSource::AnalyticOracle).unwrap()
    }

    fn uniform_moments(order: usize) -> MomentSequence {
        let mut c = vec![c64::new(0.0, 0.0); order + 1];
        c[0] = c64::new(1.0, 0.0);
        MomentSequence::new(c, MomentSource::AnalyticOracle).unwrap()
    }

    #[test]
    fn trajectory_moments_pure_exponential() {
        let theta0 = 0.9;
        let m = 300;
        let series: CVec = (0..m).map(|k| c64::from_polar(1.0, theta0 * k as f64)).collect();
        let moments = moments_from_trajectory(&series, 5).unwrap();
        for n in 0..=5i64 {
            let want = c64::from_polar(1.0, theta0 * n as f64);
            assert!((moments.get(n) - want).norm() < 1e-12);
            assert!((moments.get(-n) - want.conj()).norm() < 1e-12);
        }
        assert!(moments.validate().is_empty());
    }

    #[test]
    fn trajectory_moments_constant_series() {
        let series = vec![c64::new(1.0, 0.0); 40];
        let moments = moments_from_trajectory(&series, 10).unwrap();
        for n in 0..=10 {
            assert!((moments.get(n) - c64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn trajectory_moments_two_signal_mixture() {
        let (p1, p2) = (0.7_f64, 0.3_f64);
        let (t1, t2) = (0.7, 2.1);
        let m = 50_000;
        let series: CVec = (0..m)
            .map(|k| {
                c64::from_polar(p1.sqrt(), 0.2 + t1 * k as f64)
                    + c64::from_polar(p2.sqrt(), 1.5 + t2 * k as f64)
            })
            .collect();
        let moments = moments_from_trajectory(&series, 8).unwrap();
        for n in 0..=8i64 {
            let want = c64::from_polar(p1, t1 * n as f64) + c64::from_polar(p2, t2 * n as f64);
            assert!(
                (moments.get(n) - want).norm() < 20.0 / m as f64 * 100.0,
                "n={n}: err {:.2e}",
                (moments.get(n) - want).norm()
            );
        }
    }

    #[test]
    fn trajectory_moments_length_check() {
        let series = vec![c64::new(1.0, 0.0); 9];
        assert!(moments_from_trajectory(&series, 4).is_err());
    }

    #[test]
    fn quadrature_uniform_measure_weights() {
        let q = interpolatory_quadrature(&uniform_moments(4), None).unwrap();
        let MeasureRepr::Atoms(atoms) = &q.repr else { panic!() };
        assert_eq!(atoms.thetas.len(), 9);
        for w in &atoms.masses {
            assert!((w - 1.0 / 9.0).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_point_mass_at_node() {
        let order = 6;
        let n_nodes = 2 * order + 1;
        let j0 = 3i64;
        let theta0 = TWO_PI * j0 as f64 / n_nodes as f64;
        let q = interpolatory_quadrature(&point_mass_moments(theta0, order), None).unwrap();
        let MeasureRepr::Atoms(atoms) = &q.repr else { panic!() };
        for (t, w) in atoms.thetas.iter().zip(&atoms.masses) {
            if (t - theta0).abs() < 1e-12 {
                assert!((w - 1.0).abs() < 1e-10);
            } else {
                assert!(w.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quadrature_matches_moments() {
        // generic Hermitian moment sequence from a three-atom measure
        let atoms = AtomicSpectralMeasure::new(
            vec![(0.3, 0.5), (-1.2, 0.3), (2.5, 0.2)],
            0.0,
        );
        let moments = moments_from_atoms(&atoms, 5).unwrap();
        let q = interpolatory_quadrature(&moments, None).unwrap();
        for k in -5i64..=5 {
            let phi = move |t: f64| c64::from_polar(1.0, k as f64 * t);
            let got = integrate_against(&q, &phi, 0);
            assert!(
                (got - moments.get(k)).norm() < 1e-10,
                "k={k}: {:.3e}",
                (got - moments.get(k)).norm()
            );
        }
        // custom nodes path agrees with the roots-of-unity path
        let nodes: Vec<f64> = (0..11).map(|j| -3.0 + 6.0 * j as f64 / 11.0).collect();
        let q2 = interpolatory_quadrature(&moments, Some(&nodes)).unwrap();
        for k in -5i64..=5 {
            let phi = move |t: f64| c64::from_polar(1.0, k as f64 * t);
            let got = integrate_against(&q2, &phi, 0);
            assert!((got - moments.get(k)).norm() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn integrate_total_mass_and_moment_match() {
        let q = interpolatory_quadrature(&uniform_moments(3), None).unwrap();
        let one = integrate_against(&q, &|_| c64::new(1.0, 0.0), 0);
        assert!((one - c64::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn fourier_density_uniform_is_constant() {
        let d = fourier_density(&uniform_moments(8));
        let MeasureRepr::Density(density) = &d.repr else { panic!() };
        for v in &density.values {
            assert!((v - 1.0 / TWO_PI).abs() < 1e-14);
        }
    }

    #[test]
    fn fourier_density_point_mass_is_dirichlet() {
        let theta0 = 1.234;
        let order = 16;
        let d = fourier_density(&point_mass_moments(theta0, order));
        let MeasureRepr::Density(density) = &d.repr else { panic!() };
        let at_peak = density.eval(theta0).unwrap();
        assert!((at_peak - (2.0 * order as f64 + 1.0) / TWO_PI).abs() < 1e-10);
        // Dirichlet closed form elsewhere
        let x = 0.4;
        let want = ((order as f64 + 0.5) * x).sin() / (TWO_PI * (0.5 * x).sin());
        assert!((density.eval(theta0 + x).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn hat_filter_gives_nonnegative_fejer_kernel() {
        let d = filtered_density(&point_mass_moments(-0.7, 32), &Filter::Hat);
        let MeasureRepr::Density(density) = &d.repr else { panic!() };
        for v in &density.values {
            assert!(*v >= -1e-12, "Fejer kernel negative: {v}");
        }
    }

    #[test]
    fn hat_filter_nonnegative_for_hermitian_moments() {
        // random positive atomic measures stay nonnegative under the hat filter
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..5 {
            let atoms: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.random_range(-3.1..3.1), rng.random_range(0.05..1.0)))
                .collect();
            let measure = AtomicSpectralMeasure::new(atoms, 0.0);
            let moments = moments_from_atoms(&measure, 24).unwrap();
            let d = filtered_density(&moments, &Filter::Hat);
            let MeasureRepr::Density(density) = &d.repr else { panic!() };
            for v in &density.values {
                assert!(*v >= -1e-10);
            }
        }
    }

    #[test]
    fn bump_constant_normalization() {
        assert!((Filter::Bump.eval(0.5) - 0.5).abs() <= 1e-12);
        assert_eq!(Filter::Bump.eval(0.0), 1.0);
        assert_eq!(Filter::Bump.eval(1.0), 0.0);
    }

    #[test]
    fn filters_satisfy_admissibility_conditions() {
        // conditions at the declared order m: nu(0) = 1 with derivatives
        // 1..m-1 vanishing there (so nu(h) - 1 = O(h^m)), derivatives
        // 0..m-1 vanishing at the endpoints (so nu(1-h) = O(h^m)), evenness.
        // The order of vanishing is verified by log-log slope fits.
        let cases: Vec<(Filter, usize)> = vec![
            (Filter::Hat, 1),
            (Filter::Cosine, 2),
            (Filter::Vandeven4, 4),
            (Filter::Bump, 6),
        ];
        let hs = [1e-1, 3e-2, 1e-2];
        for (filter, m) in cases {
            assert!((filter.eval(0.0) - 1.0).abs() < 1e-12, "{}", filter.name());
            for x in [0.1, 0.4, 0.9] {
                assert!(
                    (filter.eval(x) - filter.eval(-x)).abs() < 1e-14,
                    "{} not even",
                    filter.name()
                );
            }
            let slope_at = |r: &dyn Fn(f64) -> f64| -> Option<f64> {
                let pts: Vec<(f64, f64)> = hs
                    .iter()
                    .filter_map(|&h| {
                        let v = r(h);
                        (v > 1e-250).then(|| (h.ln(), v.ln()))
                    })
                    .collect();
                if pts.len() < 2 {
                    // vanished below representable range: faster than any
                    // polynomial, passes every finite order
                    return None;
                }
                let n = pts.len() as f64;
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
                let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let var: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
                Some(cov / var)
            };
            if let Some(slope0) = slope_at(&|h| (filter.eval(h) - 1.0).abs()) {
                assert!(
                    slope0 >= m as f64 - 0.2,
                    "{}: vanishing order {slope0:.2} at 0, expected >= {m}",
                    filter.name()
                );
            }
            if let Some(slope1) = slope_at(&|h| filter.eval(1.0 - h).abs()) {
                assert!(
                    slope1 >= m as f64 - 0.2,
                    "{}: vanishing order {slope1:.2} at 1, expected >= {m}",
                    filter.name()
                );
            }
        }
    }

    #[test]
    fn kernel_m1_is_poisson_with_exponential_radius() {
        let eps = 0.07;
        let kernel = rational_kernel_build(1, eps).unwrap();
        assert!((kernel.poles[0] - c64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((kernel.residues[0] - c64::new(1.0, 0.0)).norm() < 1e-15);
        let r = (-eps).exp();
        for theta in uniform_theta_grid(257) {
            let got = kernel.eval_periodic(theta);
            let want = poisson_kernel(r, theta);
            assert!((got - want).abs() < 1e-8, "theta={theta}: {got} vs {want}");
        }
    }

    #[test]
    fn kernel_periodization_matches_truncated_lattice_sum() {
        let kernel = rational_kernel_build(4, 0.3).unwrap();
        for theta in [-2.9, -1.0, 0.0, 0.4, 3.0] {
            let mut lattice = 0.0;
            for n in -100_000i64..=100_000 {
                lattice += kernel.eval_line((theta + TWO_PI * n as f64) / kernel.epsilon)
                    / kernel.epsilon;
            }
            let got = kernel.eval_periodic(theta);
            assert!(
                (got - lattice).abs() < 1e-10 * got.abs().max(1.0),
                "theta={theta}: cot {got} vs lattice {lattice}"
            );
        }
    }

    #[test]
    fn kernel_integrates_to_one_on_the_circle() {
        for m in [1usize, 2, 4, 6] {
            let kernel = rational_kernel_build(m, 0.05).unwrap();
            // periodic trapezoid on a smooth periodic function
            let n = 1 << 14;
            let sum: f64 = uniform_theta_grid(n)
                .iter()
                .map(|&t| kernel.eval_periodic(t))
                .sum();
            let integral = sum * TWO_PI / n as f64;
            assert!((integral - 1.0).abs() < 1e-10, "m={m}: integral {integral}");
        }
    }

    #[test]
    fn smoothed_single_atom_is_shifted_kernel() {
        let kernel = rational_kernel_build(3, 0.1).unwrap();
        let theta0 = 0.8;
        let atoms = AtomicSpectralMeasure::new(vec![(theta0, 1.0)], 0.0);
        let grid = uniform_theta_grid(64);
        let d = smoothed_density(&SmoothingSource::Atoms(&atoms), &kernel, &grid).unwrap();
        let MeasureRepr::Density(density) = &d.repr else { panic!() };
        for (t, v) in density.thetas.iter().zip(&density.values) {
            let want = kernel.eval_periodic(wrap_angle(t - theta0));
            assert!((v - want).abs() < 1e-12);
        }
        // peak value at the atom
        let peak = density.eval(theta0).unwrap();
        assert!((peak - kernel.eval_periodic(0.0)).abs() < 1e-12);
    }

    #[test]
    fn atom_and_resolvent_paths_agree() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 10;
        let thetas: Vec<f64> = (0..n).map(|_| rng.random_range(-3.1..3.1)).collect();
        let k = CMat::from_fn(n, n, |i, j| {
            if i == j {
                c64::from_polar(1.0, thetas[i])
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let gram = CMat::identity(n, n);
        let mut g: CVec = (0..n)
            .map(|_| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let norm: f64 = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in &mut g {
            *z /= norm;
        }
        let atoms = AtomicSpectralMeasure::new(
            thetas.iter().zip(&g).map(|(t, z)| (*t, z.norm_sqr())).collect(),
            0.0,
        );
        let kernel = rational_kernel_build(6, 0.05).unwrap();
        let grid = uniform_theta_grid(128);
        let via_atoms = smoothed_density(&SmoothingSource::Atoms(&atoms), &kernel, &grid).unwrap();
        let via_resolvent = smoothed_density(
            &SmoothingSource::Resolvent {
                k: &k,
                gram: &gram,
                coeffs: &g,
            },
            &kernel,
            &grid,
        )
        .unwrap();
        let MeasureRepr::Density(da) = &via_atoms.repr else { panic!() };
        let MeasureRepr::Density(dr) = &via_resolvent.repr else { panic!() };
        assert!(dr.failed.iter().all(|f| !f));
        for (a, b) in da.values.iter().zip(&dr.values) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn resolvent_failure_is_flagged_not_fatal() {
        // an operator with spectral radius e^eps puts resolvent sample points
        // exactly on the spectrum for some angles
        let eps = 0.05;
        let kernel = rational_kernel_build(1, eps).unwrap();
        let n = 3;
        let k = faer::Scale(c64::new(eps.exp(), 0.0)) * CMat::identity(n, n);
        let gram = CMat::identity(n, n);
        let g = vec![c64::new(1.0, 0.0); n];
        // theta = 0 makes w = e^{eps} exactly an eigenvalue
        let grid = vec![0.0, 1.0];
        let d = smoothed_density(
            &SmoothingSource::Resolvent {
                k: &k,
                gram: &gram,
                coeffs: &g,
            },
            &kernel,
            &grid,
        )
        .unwrap();
        let MeasureRepr::Density(density) = &d.repr else { panic!() };
        assert!(density.failed[0]);
        assert!(!density.failed[1]);
        assert!(!d.metadata.warnings.is_empty());
    }

    #[test]
    fn moment_validation_flags_bad_sequences() {
        let c = vec![c64::new(1.0, 0.0), c64::new(2.0, 0.0)];
        let m = MomentSequence::new(c, MomentSource::AnalyticOracle).unwrap();
        assert!(!m.validate().is_empty());
    }

    #[test]
    fn truncation_shortens_order() {
        let m = uniform_moments(10);
        let t = m.truncated(4).unwrap();
        assert_eq!(t.order(), 4);
        assert!(m.truncated(11).is_err());
    }
}
