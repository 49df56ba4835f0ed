//! Generalized Laplace analysis: weighted Cesaro averages along a trajectory
//! extract spectral projections and Koopman modes without a spectral gap.
//!
//! For a vector-valued observable series `g(x_k)` the average
//! `(1/n) sum_{k=1..n} z^{-k} g(x_k)` converges to the Koopman mode at `z`
//! when `|z|` equals the spectral radius of the (scalar-type) operator; the
//! operator acts by shifting along the time sequence, so no matrix is needed.

use faer::c64;

use crate::{CMat, CVec, Error, Result};

/// A Koopman mode extracted by Laplace averaging.
#[derive(Debug, Clone)]
pub struct KoopmanMode {
    pub eigenvalue: c64,
    /// One entry per observable component.
    pub mode: CVec,
    /// Running averages at geometrically spaced horizons, for rate inspection.
    pub trace: Vec<(usize, CVec)>,
    /// Set when the peeling sequence mixes moduli, which is numerically
    /// delicate.
    pub warning: Option<String>,
}

/// Cesaro average `(1/n) sum_{k=1..n} z^{-k} * series_row_k`.
///
/// `series` has one time step per row (row `k` is `g(x_k)`, starting at
/// `k = 0`); the average uses rows `1..=n`. Summation is compensated
/// (Kahan) per component. For `|z| < 1` the terms grow geometrically; the
/// computation hard-errors if an intermediate term leaves the representable
/// range.
pub fn gla_average(series: &CMat, z: c64, n: usize) -> Result<CVec> {
    let (avg, _) = gla_average_traced(series, z, n, false)?;
    Ok(avg)
}

/// As [`gla_average`], optionally recording running averages at horizons
/// `1, 2, 4, ...` up to `n`.
pub fn gla_average_traced(
    series: &CMat,
    z: c64,
    n: usize,
    want_trace: bool,
) -> Result<(CVec, Vec<(usize, CVec)>)> {
    if z.norm() == 0.0 {
        return Err(Error::Contract("z must be nonzero".into()));
    }
    if n == 0 {
        return Err(Error::Contract("averaging horizon must be >= 1".into()));
    }
    if series.nrows() < n + 1 {
        return Err(Error::Contract(format!(
            "series has {} rows but the horizon needs {}",
            series.nrows(),
            n + 1
        )));
    }
    let d = series.ncols();
    let z_inv = c64::new(1.0, 0.0) / z;
    let mut weight = c64::new(1.0, 0.0);
    let mut sum = vec![c64::new(0.0, 0.0); d];
    let mut comp = vec![c64::new(0.0, 0.0); d];
    let mut trace = Vec::new();
    let mut next_checkpoint = 1usize;
    for k in 1..=n {
        weight *= z_inv;
        if !weight.re.is_finite() || !weight.im.is_finite() || weight.norm() >= 1e300 {
            return Err(Error::Overflow {
                step: k,
                context: format!("|z^-k| = {:.3e} at z = {z}", weight.norm()),
            });
        }
        for j in 0..d {
            let term = weight * series[(k, j)];
            if !term.re.is_finite() || !term.im.is_finite() {
                return Err(Error::Overflow {
                    step: k,
                    context: "term z^-k g(x_k) is not representable".into(),
                });
            }
            // Kahan step
            let y = term - comp[j];
            let t = sum[j] + y;
            comp[j] = (t - sum[j]) - y;
            sum[j] = t;
        }
        if want_trace && (k == next_checkpoint || k == n) {
            trace.push((k, sum.iter().map(|s| s / k as f64).collect()));
            while next_checkpoint <= k {
                next_checkpoint *= 2;
            }
        }
    }
    let avg: CVec = sum.into_iter().map(|s| s / n as f64).collect();
    Ok((avg, trace))
}

/// Extract Koopman modes by successive Laplace averaging and peeling.
///
/// Eigenvalues must be ordered by nonincreasing modulus. For each `z_j` the
/// mode is the Cesaro average of the current residual series; the recovered
/// signal `mode_j z_j^k` is then subtracted before the next extraction.
pub fn extract_modes(series: &CMat, eigenvalues: &[c64], n: usize) -> Result<Vec<KoopmanMode>> {
    if eigenvalues.is_empty() {
        return Err(Error::Contract("need at least one eigenvalue".into()));
    }
    for w in eigenvalues.windows(2) {
        if w[1].norm() > w[0].norm() + 1e-12 {
            return Err(Error::Contract(
                "eigenvalues must be ordered by nonincreasing modulus".into(),
            ));
        }
    }
    let mixed_moduli = eigenvalues
        .windows(2)
        .any(|w| (w[0].norm() - w[1].norm()).abs() > 1e-12);

    let mut residual = series.clone();
    let mut out = Vec::with_capacity(eigenvalues.len());
    for (j, &z) in eigenvalues.iter().enumerate() {
        let (mode, trace) = gla_average_traced(&residual, z, n, true)?;
        // peel: residual_k -= mode * z^k
        let mut zk = c64::new(1.0, 0.0);
        for k in 0..residual.nrows() {
            for (c, m) in mode.iter().enumerate() {
                residual[(k, c)] -= m * zk;
            }
            zk *= z;
            if !zk.re.is_finite() || !zk.im.is_finite() {
                return Err(Error::Overflow {
                    step: k,
                    context: "z^k overflowed while peeling".into(),
                });
            }
        }
        let warning = (mixed_moduli && j > 0).then(|| {
            "peeling across different moduli amplifies earlier extraction errors".to_string()
        });
        out.push(KoopmanMode {
            eigenvalue: z,
            mode,
            trace,
            warning,
        });
    }
    Ok(out)
}

/// Cesaro average of the 2x2 Jordan block at `z = 1`: returns the `(1, 2)`
/// entry, which equals `(n + 1) / 2` exactly. A regression guard that the
/// averaging does not silently converge on non-scalar-type operators.
pub fn gla_cesaro_counterexample_check(n: usize) -> f64 {
    assert!(n >= 1);
    let t = CMat::from_fn(2, 2, |i, j| {
        if j >= i {
            c64::new(1.0, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    let mut power = CMat::identity(2, 2);
    let mut sum = CMat::zeros(2, 2);
    for _ in 1..=n {
        power = &power * &t;
        sum += &power;
    }
    sum[(0, 1)].re / n as f64
}
