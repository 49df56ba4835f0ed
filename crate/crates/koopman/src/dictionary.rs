//! Observable dictionaries and assembly of the data matrices.

use std::sync::Arc;

use faer::c64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::systems::SnapshotSet;
use crate::{CMat, Error, RMat, Result};

/// A finite dictionary of observables, evaluable at any state in its domain.
#[derive(Clone)]
pub enum Dictionary {
    /// Radial basis functions `psi_j(s) = exp(-gamma * ||s - c_j||)`.
    ///
    /// Note the plain (not squared) norm in the exponent.
    RbfKmeans { centers: RMat, gamma: f64 },
    /// Complex exponentials `e^{i k theta}` for `k = -max_freq ..= max_freq`
    /// on the circle (one-dimensional states).
    Fourier { max_freq: usize },
    /// All monomials of total degree `<= max_degree` in graded
    /// lexicographic order.
    Monomial { dim: usize, max_degree: usize },
    /// Coordinate observables `psi_j(s) = s_j`.
    LinearState { dim: usize },
    /// Coordinates of a delay-embedded state in `R^{observables * depth}`.
    /// Rows of a delay snapshot set are windows of a scalar time series per
    /// observable, concatenated; the dictionary functions are the window
    /// entries themselves.
    Delay { depth: usize, observables: usize },
    /// User-supplied observables.
    Custom {
        dim: usize,
        functions: Vec<Arc<dyn Fn(&[f64]) -> c64 + Send + Sync>>,
    },
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dictionary::RbfKmeans { centers, gamma } => f
                .debug_struct("RbfKmeans")
                .field("n", &centers.nrows())
                .field("gamma", gamma)
                .finish(),
            Dictionary::Fourier { max_freq } => {
                f.debug_struct("Fourier").field("max_freq", max_freq).finish()
            }
            Dictionary::Monomial { dim, max_degree } => f
                .debug_struct("Monomial")
                .field("dim", dim)
                .field("max_degree", max_degree)
                .finish(),
            Dictionary::LinearState { dim } => {
                f.debug_struct("LinearState").field("dim", dim).finish()
            }
            Dictionary::Delay { depth, observables } => f
                .debug_struct("Delay")
                .field("depth", depth)
                .field("observables", observables)
                .finish(),
            Dictionary::Custom { dim, functions } => f
                .debug_struct("Custom")
                .field("dim", dim)
                .field("n", &functions.len())
                .finish(),
        }
    }
}

/// Data matrices of dictionary evaluations along the snapshots.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    /// `M x N` evaluations at the states.
    pub psi_x: CMat,
    /// `M x N` evaluations at the images.
    pub psi_y: CMat,
    /// `M` quadrature weights.
    pub weights: Vec<f64>,
}

impl Dictionary {
    /// Number of dictionary functions.
    pub fn size(&self) -> usize {
        match self {
            Dictionary::RbfKmeans { centers, .. } => centers.nrows(),
            Dictionary::Fourier { max_freq } => 2 * max_freq + 1,
            Dictionary::Monomial { dim, max_degree } => monomial_exponents(*dim, *max_degree).len(),
            Dictionary::LinearState { dim } => *dim,
            Dictionary::Delay { depth, observables } => depth * observables,
            Dictionary::Custom { functions, .. } => functions.len(),
        }
    }

    /// Dimension of the states the dictionary evaluates on.
    pub fn domain_dim(&self) -> usize {
        match self {
            Dictionary::RbfKmeans { centers, .. } => centers.ncols(),
            Dictionary::Fourier { .. } => 1,
            Dictionary::Monomial { dim, .. } => *dim,
            Dictionary::LinearState { dim } => *dim,
            Dictionary::Delay { depth, observables } => depth * observables,
            Dictionary::Custom { dim, .. } => *dim,
        }
    }
}

/// Evaluate the dictionary at every row of `states`; row `m` of the result
/// holds `psi_1 .. psi_N` at state `m`.
pub fn evaluate(dict: &Dictionary, states: &RMat) -> Result<CMat> {
    let d = dict.domain_dim();
    if states.ncols() != d {
        return Err(Error::Contract(format!(
            "states have dimension {} but the dictionary domain is {d}",
            states.ncols()
        )));
    }
    let m = states.nrows();
    let n = dict.size();
    let mut out = CMat::zeros(m, n);
    match dict {
        Dictionary::RbfKmeans { centers, gamma } => {
            for i in 0..m {
                for j in 0..n {
                    let mut dist2 = 0.0;
                    for k in 0..d {
                        let diff = states[(i, k)] - centers[(j, k)];
                        dist2 += diff * diff;
                    }
                    out[(i, j)] = c64::new((-gamma * dist2.sqrt()).exp(), 0.0);
                }
            }
        }
        Dictionary::Fourier { max_freq } => {
            let kmax = *max_freq as i64;
            for i in 0..m {
                let theta = states[(i, 0)];
                for (j, k) in (-kmax..=kmax).enumerate() {
                    out[(i, j)] = c64::from_polar(1.0, k as f64 * theta);
                }
            }
        }
        Dictionary::Monomial { dim, max_degree } => {
            let exps = monomial_exponents(*dim, *max_degree);
            for i in 0..m {
                for (j, e) in exps.iter().enumerate() {
                    let mut v = 1.0;
                    for (k, &p) in e.iter().enumerate() {
                        v *= states[(i, k)].powi(p as i32);
                    }
                    out[(i, j)] = c64::new(v, 0.0);
                }
            }
        }
        Dictionary::LinearState { .. } | Dictionary::Delay { .. } => {
            for i in 0..m {
                for j in 0..n {
                    out[(i, j)] = c64::new(states[(i, j)], 0.0);
                }
            }
        }
        Dictionary::Custom { functions, .. } => {
            let mut row = vec![0.0; d];
            for i in 0..m {
                for k in 0..d {
                    row[k] = states[(i, k)];
                }
                for (j, f) in functions.iter().enumerate() {
                    out[(i, j)] = f(&row);
                }
            }
        }
    }
    Ok(out)
}

/// Assemble the weighted data matrices for a snapshot set.
pub fn assemble(dict: &Dictionary, snapshots: &SnapshotSet) -> Result<DataMatrices> {
    Ok(DataMatrices {
        psi_x: evaluate(dict, &snapshots.x)?,
        psi_y: evaluate(dict, &snapshots.y)?,
        weights: snapshots.weights.clone(),
    })
}

/// Build an RBF dictionary by seeded k-means over the pooled snapshot states.
///
/// Centers come from k-means++ initialization followed by Lloyd iterations
/// (at most 100, relative center-shift tolerance 1e-8); an emptied cluster is
/// re-seeded at the point farthest from its assigned center. The shape
/// parameter is `gamma = 1 / rbar^2` with `rbar` the average Euclidean norm
/// of the pooled data after shifting it to mean zero.
pub fn build_rbf_dictionary(snapshots: &SnapshotSet, n: usize, seed: u64) -> Result<Dictionary> {
    let pooled = snapshots.pooled_states();
    let m = pooled.nrows();
    if n == 0 {
        return Err(Error::Contract("dictionary size must be >= 1".into()));
    }
    if m < n {
        return Err(Error::Contract(format!(
            "k-means needs at least as many points ({m}) as clusters ({n})"
        )));
    }
    let centers = kmeans(&pooled, n, seed)?;
    let gamma = rbf_gamma(&pooled);
    Ok(Dictionary::RbfKmeans { centers, gamma })
}

/// `1 / rbar^2` with `rbar` the mean norm of the mean-centered rows.
pub fn rbf_gamma(points: &RMat) -> f64 {
    let (m, d) = (points.nrows(), points.ncols());
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for j in 0..d {
            mean[j] += points[(i, j)];
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut avg_norm = 0.0;
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..d {
            let diff = points[(i, j)] - mean[j];
            s += diff * diff;
        }
        avg_norm += s.sqrt();
    }
    avg_norm /= m as f64;
    1.0 / (avg_norm * avg_norm)
}

fn kmeans(points: &RMat, k: usize, seed: u64) -> Result<RMat> {
    let (m, d) = (points.nrows(), points.ncols());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // k-means++ initialization
    let mut centers = RMat::zeros(k, d);
    let first = rng.random_range(0..m);
    for j in 0..d {
        centers[(0, j)] = points[(first, j)];
    }
    let mut min_d2 = vec![0.0f64; m];
    for i in 0..m {
        min_d2[i] = row_dist2(points, i, &centers, 0);
    }
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..m)
        } else {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        for j in 0..d {
            centers[(c, j)] = points[(pick, j)];
        }
        for i in 0..m {
            min_d2[i] = min_d2[i].min(row_dist2(points, i, &centers, c));
        }
    }

    // Lloyd iterations
    let mut assign = vec![0usize; m];
    for _ in 0..100 {
        for i in 0..m {
            let mut best = (0usize, f64::INFINITY);
            for c in 0..k {
                let d2 = row_dist2(points, i, &centers, c);
                if d2 < best.1 {
                    best = (c, d2);
                }
            }
            assign[i] = best.0;
        }
        let mut sums = RMat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..m {
            let c = assign[i];
            counts[c] += 1;
            for j in 0..d {
                sums[(c, j)] += points[(i, j)];
            }
        }
        // re-seed empty clusters at the currently worst-represented point
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .max_by(|&a, &b| {
                        let da = row_dist2(points, a, &centers, assign[a]);
                        let db = row_dist2(points, b, &centers, assign[b]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                counts[c] = 1;
                assign[far] = c;
                for j in 0..d {
                    sums[(c, j)] = points[(far, j)];
                }
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            let mut shift2 = 0.0;
            let mut scale2 = 0.0;
            for j in 0..d {
                let new = sums[(c, j)] / counts[c] as f64;
                let diff = new - centers[(c, j)];
                shift2 += diff * diff;
                scale2 += new * new;
                centers[(c, j)] = new;
            }
            max_shift = max_shift.max((shift2 / scale2.max(1.0)).sqrt());
        }
        if max_shift <= 1e-8 {
            break;
        }
    }
    Ok(centers)
}

fn row_dist2(points: &RMat, i: usize, centers: &RMat, c: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..points.ncols() {
        let diff = points[(i, j)] - centers[(c, j)];
        s += diff * diff;
    }
    s
}

/// Multi-indices of total degree `<= max_degree`, graded lexicographic.
fn monomial_exponents(dim: usize, max_degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=max_degree as u32 {
        let mut cur = vec![0u32; dim];
        fill_exponents(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill_exponents(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for take in (0..=remaining).rev() {
        cur[pos] = take;
        fill_exponents(out, cur, pos + 1, remaining - take);
    }
    cur[pos] = 0;
}

/// Serializable description of a dictionary, for reuse across CLI runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionaryConfig {
    pub kind: String,
    pub n: usize,
    #[serde(default)]
    pub parameters: serde_json::Map<String, serde_json::Value>,
}

/// Serialize a dictionary to its JSON document form.
pub fn to_config(dict: &Dictionary) -> Result<DictionaryConfig> {
    let mut parameters = serde_json::Map::new();
    let kind = match dict {
        Dictionary::RbfKmeans { centers, gamma } => {
            let rows: Vec<Vec<f64>> = (0..centers.nrows())
                .map(|i| (0..centers.ncols()).map(|j| centers[(i, j)]).collect())
                .collect();
            parameters.insert("centers".into(), serde_json::json!(rows));
            parameters.insert("gamma".into(), serde_json::json!(gamma));
            "rbf_kmeans"
        }
        Dictionary::Fourier { max_freq } => {
            parameters.insert("max_freq".into(), serde_json::json!(max_freq));
            "fourier"
        }
        Dictionary::Monomial { dim, max_degree } => {
            parameters.insert("dim".into(), serde_json::json!(dim));
            parameters.insert("max_degree".into(), serde_json::json!(max_degree));
            "monomial"
        }
        Dictionary::LinearState { dim } => {
            parameters.insert("dim".into(), serde_json::json!(dim));
            "linear_state"
        }
        Dictionary::Delay { depth, observables } => {
            parameters.insert("depth".into(), serde_json::json!(depth));
            parameters.insert("observables".into(), serde_json::json!(observables));
            "delay"
        }
        Dictionary::Custom { .. } => {
            return Err(Error::Contract(
                "custom dictionaries have no serialized form".into(),
            ));
        }
    };
    Ok(DictionaryConfig {
        kind: kind.into(),
        n: dict.size(),
        parameters,
    })
}

/// Rebuild a dictionary from its JSON document form.
pub fn from_config(config: &DictionaryConfig) -> Result<Dictionary> {
    let get = |key: &str| -> Result<&serde_json::Value> {
        config
            .parameters
            .get(key)
            .ok_or_else(|| Error::Parse(format!("dictionary config missing '{key}'")))
    };
    let as_usize = |v: &serde_json::Value, key: &str| -> Result<usize> {
        v.as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::Parse(format!("'{key}' must be a nonnegative integer")))
    };
    let dict = match config.kind.as_str() {
        "rbf_kmeans" => {
            let rows: Vec<Vec<f64>> = serde_json::from_value(get("centers")?.clone())
                .map_err(|e| Error::Parse(format!("bad centers: {e}")))?;
            let gamma = get("gamma")?
                .as_f64()
                .ok_or_else(|| Error::Parse("'gamma' must be a number".into()))?;
            if rows.is_empty() {
                return Err(Error::Parse("centers must be nonempty".into()));
            }
            let d = rows[0].len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::Parse("ragged centers".into()));
            }
            let centers = RMat::from_fn(rows.len(), d, |i, j| rows[i][j]);
            Dictionary::RbfKmeans { centers, gamma }
        }
        "fourier" => Dictionary::Fourier {
            max_freq: as_usize(get("max_freq")?, "max_freq")?,
        },
        "monomial" => Dictionary::Monomial {
            dim: as_usize(get("dim")?, "dim")?,
            max_degree: as_usize(get("max_degree")?, "max_degree")?,
        },
        "linear_state" => Dictionary::LinearState {
            dim: as_usize(get("dim")?, "dim")?,
        },
        "delay" => Dictionary::Delay {
            depth: as_usize(get("depth")?, "depth")?,
            observables: as_usize(get("observables")?, "observables")?,
        },
        other => return Err(Error::Parse(format!("unknown dictionary kind '{other}'"))),
    };
    Ok(dict)
}
