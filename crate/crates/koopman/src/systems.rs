//! Benchmark dynamical systems and snapshot samplers.
//!
//! Continuous-time systems are discretized by the fixed-step classical
//! Runge-Kutta flow map over one sampling interval; discrete maps apply
//! directly. All sampling is driven by a seeded ChaCha generator so runs
//! are reproducible byte for byte.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::{ensure_finite_real, Error, RMat, Result};

/// Default RK4 substep ceiling for the stiff chaotic systems.
pub const H_MAX_CHAOTIC: f64 = 1e-3;
/// Default RK4 substep ceiling for the Duffing oscillator.
pub const H_MAX_DUFFING: f64 = 5e-3;

/// Paired snapshot data `y = F(x)` with quadrature weights.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub dim: usize,
    /// `M x d` states.
    pub x: RMat,
    /// `M x d` images under the dynamics.
    pub y: RMat,
    /// `M` nonnegative quadrature weights.
    pub weights: Vec<f64>,
}

impl SnapshotSet {
    pub fn new(x: RMat, y: RMat, weights: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(Error::Contract("snapshot X and Y shapes differ".into()));
        }
        if x.nrows() == 0 {
            return Err(Error::Contract("snapshot set is empty".into()));
        }
        if weights.len() != x.nrows() {
            return Err(Error::Contract("weight count does not match snapshot count".into()));
        }
        ensure_finite_real(x.as_ref(), "snapshot X")?;
        ensure_finite_real(y.as_ref(), "snapshot Y")?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            dim: x.ncols(),
            x,
            y,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pool X and Y rows into a single `(2M) x d` matrix.
    pub fn pooled_states(&self) -> RMat {
        let m = self.len();
        RMat::from_fn(2 * m, self.dim, |i, j| {
            if i < m {
                self.x[(i, j)]
            } else {
                self.y[(i - m, j)]
            }
        })
    }
}

/// Right-hand side of a continuous-time system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeKind {
    Duffing,
    Lorenz,
    /// Parameters `(a, b, c)`.
    Rossler(f64, f64, f64),
}

impl OdeKind {
    fn dim(&self) -> usize {
        match self {
            OdeKind::Duffing => 2,
            OdeKind::Lorenz | OdeKind::Rossler(..) => 3,
        }
    }

    fn rhs(&self, s: &[f64], out: &mut [f64]) {
        match self {
            OdeKind::Duffing => {
                out[0] = s[1];
                out[1] = s[0] - s[0] * s[0] * s[0];
            }
            OdeKind::Lorenz => {
                out[0] = 10.0 * (s[1] - s[0]);
                out[1] = s[0] * (28.0 - s[2]) - s[1];
                out[2] = s[0] * s[1] - 8.0 * s[2] / 3.0;
            }
            OdeKind::Rossler(a, b, c) => {
                out[0] = -(s[1] + s[2]);
                out[1] = s[0] + a * s[1];
                out[2] = b + s[2] * (s[0] - c);
            }
        }
    }
}

/// The map defining a dynamical system.
#[derive(Clone)]
pub enum Dynamics {
    /// Sampled continuous-time flow, advanced by RK4 substeps.
    Ode { kind: OdeKind, sample_time: f64, h_max: f64 },
    /// Rigid rotation of the circle by `alpha`; states are angles in `[0, 2pi)`.
    Rotation { alpha: f64 },
    /// Linear map `x -> A x`.
    LinearMap { matrix: RMat },
    /// User-supplied map.
    CustomMap {
        dim: usize,
        map: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    },
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::Ode { kind, sample_time, h_max } => f
                .debug_struct("Ode")
                .field("kind", kind)
                .field("sample_time", sample_time)
                .field("h_max", h_max)
                .finish(),
            Dynamics::Rotation { alpha } => f.debug_struct("Rotation").field("alpha", alpha).finish(),
            Dynamics::LinearMap { matrix } => f
                .debug_struct("LinearMap")
                .field("dim", &matrix.nrows())
                .finish(),
            Dynamics::CustomMap { dim, .. } => f.debug_struct("CustomMap").field("dim", dim).finish(),
        }
    }
}

/// A benchmark system ready to generate data.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub dynamics: Dynamics,
}

impl SystemSpec {
    pub fn duffing(sample_time: f64) -> Self {
        Self {
            dynamics: Dynamics::Ode {
                kind: OdeKind::Duffing,
                sample_time,
                h_max: H_MAX_DUFFING,
            },
        }
    }

    pub fn lorenz(sample_time: f64) -> Self {
        Self {
            dynamics: Dynamics::Ode {
                kind: OdeKind::Lorenz,
                sample_time,
                h_max: H_MAX_CHAOTIC,
            },
        }
    }

    pub fn rossler(a: f64, b: f64, c: f64, sample_time: f64) -> Self {
        Self {
            dynamics: Dynamics::Ode {
                kind: OdeKind::Rossler(a, b, c),
                sample_time,
                h_max: H_MAX_CHAOTIC,
            },
        }
    }

    pub fn rotation(alpha: f64) -> Self {
        Self {
            dynamics: Dynamics::Rotation { alpha },
        }
    }

    pub fn linear_map(matrix: RMat) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Contract("linear_map matrix must be square".into()));
        }
        Ok(Self {
            dynamics: Dynamics::LinearMap { matrix },
        })
    }

    pub fn custom_map(dim: usize, map: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>) -> Self {
        Self {
            dynamics: Dynamics::CustomMap { dim, map },
        }
    }

    /// Build a named system from a `name -> value` parameter map, the form
    /// used by configuration files.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str, default: Option<f64>| -> Result<f64> {
            params.get(key).copied().or(default).ok_or_else(|| {
                Error::Contract(format!("system '{name}' requires parameter '{key}'"))
            })
        };
        let mut spec = match name {
            "duffing" => Self::duffing(get("sample_time", Some(0.3))?),
            "lorenz" => Self::lorenz(get("sample_time", Some(0.01))?),
            "rossler" => Self::rossler(
                get("a", Some(0.15))?,
                get("b", Some(0.4))?,
                get("c", Some(8.5))?,
                get("sample_time", Some(0.25))?,
            ),
            "rotation" => Self::rotation(get("alpha", None)?),
            "linear_map" => {
                let dim = get("dim", Some(1.0))? as usize;
                let scale = get("scale", None)?;
                let m = RMat::from_fn(dim, dim, |i, j| if i == j { scale } else { 0.0 });
                Self::linear_map(m)?
            }
            other => {
                return Err(Error::Contract(format!("unknown system name '{other}'")));
            }
        };
        if let (Dynamics::Ode { h_max, .. }, Some(h)) = (&mut spec.dynamics, params.get("h_max")) {
            if *h <= 0.0 {
                return Err(Error::Contract("h_max must be positive".into()));
            }
            *h_max = *h;
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Ode { kind, .. } => kind.dim(),
            Dynamics::Rotation { .. } => 1,
            Dynamics::LinearMap { matrix } => matrix.nrows(),
            Dynamics::CustomMap { dim, .. } => *dim,
        }
    }
}

/// One application of the system map `F`.
pub fn flow_step(spec: &SystemSpec, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != spec.dim() {
        return Err(Error::Contract(format!(
            "state dimension {} does not match system dimension {}",
            state.len(),
            spec.dim()
        )));
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("state has non-finite entries".into()));
    }
    let next = match &spec.dynamics {
        Dynamics::Ode { kind, sample_time, h_max } => {
            if *sample_time <= 0.0 {
                return Err(Error::Contract("sample_time must be positive".into()));
            }
            rk4_flow(*kind, state, *sample_time, *h_max)
        }
        Dynamics::Rotation { alpha } => {
            vec![(state[0] + alpha).rem_euclid(2.0 * std::f64::consts::PI)]
        }
        Dynamics::LinearMap { matrix } => {
            let n = matrix.nrows();
            (0..n)
                .map(|i| (0..n).map(|j| matrix[(i, j)] * state[j]).sum())
                .collect()
        }
        Dynamics::CustomMap { map, .. } => map(state),
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 1 });
    }
    Ok(next)
}

/// Classical 4-stage Runge-Kutta over `dt` with substep `h <= min(dt, h_max)`.
fn rk4_flow(kind: OdeKind, state: &[f64], dt: f64, h_max: f64) -> Vec<f64> {
    let n_sub = (dt / h_max.min(dt)).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;
    let d = state.len();
    let mut s = state.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for _ in 0..n_sub {
        kind.rhs(&s, &mut k1);
        for i in 0..d {
            tmp[i] = s[i] + 0.5 * h * k1[i];
        }
        kind.rhs(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = s[i] + 0.5 * h * k2[i];
        }
        kind.rhs(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = s[i] + h * k3[i];
        }
        kind.rhs(&tmp, &mut k4);
        for i in 0..d {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

/// Draw `m` initial points uniformly from `box_bounds` and record all
/// consecutive pairs along `steps` steps of the dynamics.
///
/// Produces `m * steps` snapshot pairs with uniform Monte Carlo weights
/// `1 / (m * steps)`.
pub fn sample_random(
    spec: &SystemSpec,
    m: usize,
    box_bounds: &[(f64, f64)],
    steps: usize,
    seed: u64,
) -> Result<SnapshotSet> {
    if m == 0 || steps == 0 {
        return Err(Error::Contract("need m >= 1 and steps >= 1".into()));
    }
    let d = spec.dim();
    if box_bounds.len() != d {
        return Err(Error::Contract(format!(
            "box has {} intervals but the system dimension is {d}",
            box_bounds.len()
        )));
    }
    if box_bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::Contract("sampling box is empty".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let total = m * steps;
    let mut x = RMat::zeros(total, d);
    let mut y = RMat::zeros(total, d);
    let mut row = 0;
    for _ in 0..m {
        let mut cur: Vec<f64> = box_bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        if let Dynamics::Rotation { .. } = spec.dynamics {
            cur[0] = cur[0].rem_euclid(2.0 * std::f64::consts::PI);
        }
        for _ in 0..steps {
            let next = flow_step(spec, &cur)?;
            for j in 0..d {
                x[(row, j)] = cur[j];
                y[(row, j)] = next[j];
            }
            cur = next;
            row += 1;
        }
    }
    let w = 1.0 / total as f64;
    SnapshotSet::new(x, y, vec![w; total])
}

/// Integrate a single trajectory, discarding `burn_in` steps, and return the
/// following `length` states as rows.
pub fn sample_trajectory(
    spec: &SystemSpec,
    x0: &[f64],
    length: usize,
    burn_in: usize,
) -> Result<RMat> {
    if length < 1 {
        return Err(Error::Contract("trajectory length must be >= 1".into()));
    }
    let d = spec.dim();
    let mut cur = x0.to_vec();
    for step in 0..burn_in {
        cur = flow_step(spec, &cur).map_err(|e| divergence_at(e, step))?;
    }
    let mut out = RMat::zeros(length, d);
    for j in 0..d {
        out[(0, j)] = cur[j];
    }
    for i in 1..length {
        cur = flow_step(spec, &cur).map_err(|e| divergence_at(e, burn_in + i - 1))?;
        for j in 0..d {
            out[(i, j)] = cur[j];
        }
    }
    Ok(out)
}

fn divergence_at(e: Error, step: usize) -> Error {
    match e {
        Error::Divergence { .. } => Error::Divergence { step },
        other => other,
    }
}

/// First integral of the undamped Duffing oscillator, used as an integrator
/// accuracy oracle: `E = y^2/2 - x^2/2 + x^4/4` is constant along exact flows.
pub fn duffing_energy(state: &[f64]) -> f64 {
    let (x, y) = (state[0], state[1]);
    0.5 * y * y - 0.5 * x * x + 0.25 * x.powi(4)
}
