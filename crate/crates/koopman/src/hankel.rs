//! Hankel-DMD: EDMD with Krylov (delay-embedding) dictionaries built from a
//! single trajectory of scalar observables.

use faer::c64;

use crate::dictionary::DataMatrices;
use crate::numerics;
use crate::{CMat, CVec, Error, Result};

/// Configuration of a Hankel-DMD run.
#[derive(Debug, Clone)]
pub struct HankelConfig {
    /// Delay depth `N` (columns per observable block).
    pub delay: usize,
    /// Number of rows `M`; each series must have length `>= M + N`.
    pub rows: usize,
    /// Singular value truncation threshold.
    pub eps_tol: f64,
    /// Interpret `eps_tol` relative to the largest singular value instead of
    /// as an absolute cutoff.
    pub eps_relative: bool,
}

/// Output of Hankel-DMD.
#[derive(Debug, Clone)]
pub struct HankelResult {
    pub eigenvalues: CVec,
    /// Eigenvector coefficients `U_2 V` in the (scaled) delay dictionary,
    /// `p N x r`.
    pub coefficients: CMat,
    pub rank: usize,
    /// Per-observable norm scalings; the first is always 1.
    pub scalings: Vec<f64>,
}

/// Hankel pair of a scalar series: `X[i, j] = s[i + j]`, `Y[i, j] = s[i + j + 1]`.
pub fn hankel_matrices(series: &[c64], rows: usize, delay: usize) -> Result<(CMat, CMat)> {
    if rows == 0 || delay == 0 {
        return Err(Error::Contract("need rows >= 1 and delay >= 1".into()));
    }
    if series.len() < rows + delay {
        return Err(Error::Contract(format!(
            "series length {} is shorter than rows + delay = {}",
            series.len(),
            rows + delay
        )));
    }
    let x = CMat::from_fn(rows, delay, |i, j| series[i + j]);
    let y = CMat::from_fn(rows, delay, |i, j| series[i + j + 1]);
    Ok((x, y))
}

/// Scaled horizontal concatenation of the per-observable Hankel pairs,
/// exposed so residuals can be computed in the same coordinates as
/// [`hankel_dmd`]. Ergodic weights `1/M` are attached.
pub fn hankel_data_matrices(series: &[CVec], config: &HankelConfig) -> Result<(DataMatrices, Vec<f64>)> {
    let p = series.len();
    if p == 0 {
        return Err(Error::Contract("need at least one observable series".into()));
    }
    let (m, n) = (config.rows, config.delay);
    let norms: Vec<f64> = series
        .iter()
        .map(|s| s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    if norms[0] == 0.0 {
        return Err(Error::Contract(
            "the first observable series has zero norm; scalings are undefined".into(),
        ));
    }
    let scalings: Vec<f64> = norms.iter().map(|&nk| nk / norms[0]).collect();

    let mut x = CMat::zeros(m, p * n);
    let mut y = CMat::zeros(m, p * n);
    for (k, s) in series.iter().enumerate() {
        let (hx, hy) = hankel_matrices(s, m, n)?;
        let alpha = c64::new(scalings[k], 0.0);
        for j in 0..n {
            for i in 0..m {
                x[(i, k * n + j)] = alpha * hx[(i, j)];
                y[(i, k * n + j)] = alpha * hy[(i, j)];
            }
        }
    }
    let w = 1.0 / m as f64;
    Ok((
        DataMatrices {
            psi_x: x,
            psi_y: y,
            weights: vec![w; m],
        },
        scalings,
    ))
}

/// EDMD with a Krylov subspace dictionary from delay embedding.
///
/// Forms the per-observable Hankel pairs, scales block `k` by
/// `||series_k|| / ||series_1||`, concatenates horizontally, truncates the
/// SVD of the concatenation at `eps_tol`, compresses to
/// `K_hat = Sigma^{-1} U_1^* Y U_2`, and lifts the eigenvectors back through
/// `U_2`.
pub fn hankel_dmd(series: &[CVec], config: &HankelConfig) -> Result<HankelResult> {
    let (data, scalings) = hankel_data_matrices(series, config)?;
    let x = data.psi_x;
    let y = data.psi_y;

    let svd = numerics::svd(&x)?;
    let cutoff = if config.eps_relative {
        config.eps_tol * svd.singular_values.first().copied().unwrap_or(0.0)
    } else {
        config.eps_tol
    };
    let r = svd
        .singular_values
        .iter()
        .take_while(|&&s| s >= cutoff)
        .count();
    if r == 0 {
        return Err(Error::Degenerate(format!(
            "all singular values fall below the truncation threshold {cutoff:.3e}"
        )));
    }
    let u1 = svd.u.as_ref().submatrix(0, 0, x.nrows(), r);
    let u2 = svd.v.as_ref().submatrix(0, 0, x.ncols(), r);

    // K_hat = Sigma^{-1} U_1^* Y U_2
    let mut k_hat = u1.adjoint() * &y * u2;
    for i in 0..r {
        let inv = c64::new(1.0 / svd.singular_values[i], 0.0);
        for j in 0..r {
            k_hat[(i, j)] *= inv;
        }
    }
    let eig = numerics::eig(&k_hat)?;
    let coefficients = u2 * &eig.right_vectors;
    Ok(HankelResult {
        eigenvalues: eig.eigenvalues,
        coefficients,
        rank: r,
        scalings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmd::edmd_fit;
    use crate::resdmd;
    use crate::systems::{sample_trajectory, SystemSpec};

    fn real_series(values: &[f64]) -> CVec {
        values.iter().map(|&v| c64::new(v, 0.0)).collect()
    }

    #[test]
    fn hankel_index_bookkeeping() {
        let s = real_series(&[0.0, 1.0, 2.0, 3.0]);
        let (x, y) = hankel_matrices(&s, 2, 2).unwrap();
        assert_eq!(x[(0, 0)].re, 0.0);
        assert_eq!(x[(0, 1)].re, 1.0);
        assert_eq!(x[(1, 0)].re, 1.0);
        assert_eq!(x[(1, 1)].re, 2.0);
        assert_eq!(y[(0, 0)].re, 1.0);
        assert_eq!(y[(0, 1)].re, 2.0);
        assert_eq!(y[(1, 0)].re, 2.0);
        assert_eq!(y[(1, 1)].re, 3.0);
    }

    #[test]
    fn hankel_constant_series() {
        let s = real_series(&[2.5; 10]);
        let (x, y) = hankel_matrices(&s, 4, 3).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(x[(i, j)].re, 2.5);
                assert_eq!(y[(i, j)].re, 2.5);
            }
        }
    }

    #[test]
    fn hankel_geometric_series_shift() {
        let lam = c64::new(0.8, 0.4);
        let s: CVec = (0..12).map(|k| lam.powu(k)).collect();
        let (x, y) = hankel_matrices(&s, 5, 4).unwrap();
        assert!((&y - faer::Scale(lam) * &x).norm_l2() < 1e-12);
    }

    #[test]
    fn hankel_length_shortfall_rejected() {
        let s = real_series(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            hankel_matrices(&s, 2, 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn rotation_two_frequency_invariant_subspace() {
        let alpha = 0.9_f64;
        let m = 2000;
        let n = 4;
        let theta0 = 0.33;
        let series: CVec = (0..m + n + 1)
            .map(|k| {
                let th = theta0 + alpha * k as f64;
                c64::from_polar(1.0, th) + c64::from_polar(1.0, 2.0 * th)
            })
            .collect();
        let config = HankelConfig {
            delay: n,
            rows: m,
            eps_tol: 1e-6,
            eps_relative: false,
        };
        let out = hankel_dmd(&[series], &config).unwrap();
        assert_eq!(out.rank, 2);
        for lam in &out.eigenvalues {
            let d1 = (lam - c64::from_polar(1.0, alpha)).norm();
            let d2 = (lam - c64::from_polar(1.0, 2.0 * alpha)).norm();
            assert!(d1.min(d2) < 1e-8, "eigenvalue {lam:?}");
        }
    }

    #[test]
    fn linear_system_coordinates_recover_spectrum() {
        // x -> A x with known eigenvalues; coordinate observables
        let eigs = [0.95, 0.7, -0.5];
        let d = 3;
        let s = crate::RMat::from_fn(d, d, |i, j| ((i * 7 + j * 3 + 1) as f64 * 0.37).sin() + if i == j { 2.0 } else { 0.0 });
        let s_c = crate::complexify(s.as_ref());
        let s_inv = numerics::solve_linear(&s_c, &CMat::identity(d, d)).unwrap();
        let diag = CMat::from_fn(d, d, |i, j| {
            if i == j {
                c64::new(eigs[i], 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let a = &s_c * &diag * &s_inv;

        let m = 200;
        let n = 5;
        let len = m + n + 1;
        let mut state = CMat::from_fn(d, 1, |i, _| c64::new(1.0 + i as f64, 0.0));
        let mut series = vec![CVec::with_capacity(len); d];
        for _ in 0..len {
            for i in 0..d {
                series[i].push(state[(i, 0)]);
            }
            state = &a * &state;
        }
        let config = HankelConfig {
            delay: n,
            rows: m,
            eps_tol: 1e-9,
            eps_relative: true,
        };
        let out = hankel_dmd(&series, &config).unwrap();
        for want in eigs {
            let best = out
                .eigenvalues
                .iter()
                .map(|l| (l - c64::new(want, 0.0)).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-7, "eigenvalue {want} missing (dist {best:.2e})");
        }
    }

    #[test]
    fn lorenz_constant_observable_certified() {
        let spec = SystemSpec::lorenz(0.01);
        let m = 2000;
        let n = 20;
        let traj = sample_trajectory(&spec, &[1.0, 1.0, 1.0], m + n + 1, 1000).unwrap();
        let mut series: Vec<CVec> = (0..3)
            .map(|j| (0..m + n + 1).map(|i| c64::new(traj[(i, j)], 0.0)).collect())
            .collect();
        series.push(vec![c64::new(1.0, 0.0); m + n + 1]);
        let config = HankelConfig {
            delay: n,
            rows: m,
            eps_tol: 1e-10,
            eps_relative: true,
        };
        let out = hankel_dmd(&series, &config).unwrap();
        let (data, _) = hankel_data_matrices(&series, &config).unwrap();
        let fit = edmd_fit(&data).unwrap();

        // the pair closest to 1 must carry a tiny residual (constant eigenfunction)
        let (best, _) = out
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (*a - c64::new(1.0, 0.0)).norm();
                let db = (*b - c64::new(1.0, 0.0)).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let coeffs: CVec = (0..out.coefficients.nrows())
            .map(|i| out.coefficients[(i, best)])
            .collect();
        let res = resdmd::residual(&fit, out.eigenvalues[best], &coeffs).unwrap();
        assert!((out.eigenvalues[best] - c64::new(1.0, 0.0)).norm() < 1e-6);
        assert!(res <= 1e-6, "residual {res:.3e}");
    }

    #[test]
    fn measure_preserving_eigenvalues_inside_unit_disk() {
        // a triangle wave on the rotation has an infinite Krylov span
        let alpha = 1.0_f64;
        let m = 4000;
        let n = 8;
        let tri = |t: f64| {
            let u = (t / (2.0 * std::f64::consts::PI)).rem_euclid(1.0);
            if u < 0.5 {
                4.0 * u - 1.0
            } else {
                3.0 - 4.0 * u
            }
        };
        let series: CVec = (0..m + n + 1)
            .map(|k| c64::new(tri(0.2 + alpha * k as f64), 0.0))
            .collect();
        let config = HankelConfig {
            delay: n,
            rows: m,
            eps_tol: 1e-8,
            eps_relative: true,
        };
        let out = hankel_dmd(&[series], &config).unwrap();
        for lam in &out.eigenvalues {
            assert!(lam.norm() <= 1.0 + 1e-8, "|lambda| = {}", lam.norm());
        }
    }

    #[test]
    fn observable_permutation_preserves_spectrum() {
        let eigs = [0.9, 0.6];
        let a = CMat::from_fn(2, 2, |i, j| {
            // upper triangular, eigenvalues on the diagonal
            if i == 0 && j == 0 {
                c64::new(eigs[0], 0.0)
            } else if i == 1 && j == 1 {
                c64::new(eigs[1], 0.0)
            } else if i == 0 && j == 1 {
                c64::new(0.3, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let m = 60;
        let n = 4;
        let len = m + n + 1;
        let mut state = CMat::from_fn(2, 1, |i, _| c64::new(1.0 + i as f64, 0.0));
        let mut series = vec![CVec::with_capacity(len); 2];
        for _ in 0..len {
            for i in 0..2 {
                series[i].push(state[(i, 0)]);
            }
            state = &a * &state;
        }
        let config = HankelConfig {
            delay: n,
            rows: m,
            eps_tol: 1e-10,
            eps_relative: true,
        };
        let fwd = hankel_dmd(&series, &config).unwrap();
        series.swap(0, 1);
        let rev = hankel_dmd(&series, &config).unwrap();
        let sort = |v: &CVec| {
            let mut v: Vec<(f64, f64)> = v.iter().map(|z| (z.re, z.im)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let e1 = sort(&fwd.eigenvalues);
        let e2 = sort(&rev.eigenvalues);
        assert_eq!(e1.len(), e2.len());
        for (p, q) in e1.iter().zip(&e2) {
            assert!((p.0 - q.0).abs() < 1e-8 && (p.1 - q.1).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_first_observable_rejected() {
        let config = HankelConfig {
            delay: 2,
            rows: 2,
            eps_tol: 1e-10,
            eps_relative: false,
        };
        let zero = vec![c64::new(0.0, 0.0); 6];
        assert!(matches!(
            hankel_dmd(&[zero], &config),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn scalings_start_at_one() {
        let s1 = real_series(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let s2 = real_series(&[10.0, 20.0, 10.0, 20.0, 10.0, 20.0]);
        let config = HankelConfig {
            delay: 2,
            rows: 3,
            eps_tol: 1e-12,
            eps_relative: true,
        };
        let out = hankel_dmd(&[s1, s2], &config).unwrap();
        assert!((out.scalings[0] - 1.0).abs() < 1e-15);
        assert!((out.scalings[1] - 10.0).abs() < 1e-12);
    }
}
