//! Run configuration: JSON documents with flat flag overrides.
//!
//! The serde layout is the schema; unknown fields are rejected and the
//! tagged enums make "exactly one data source" structural. A machine-usable
//! copy of the schema ships in `docs/config.schema.json`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionarySpec>,
    pub algorithm: AlgorithmSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    /// Generate data from a built-in system.
    System {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        sample: SampleSpec,
    },
    /// Load a snapshot pair (and optional weights) from CSV files.
    Snapshots {
        x: PathBuf,
        y: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<PathBuf>,
    },
    /// Load a single trajectory CSV; consecutive rows form snapshot pairs.
    Trajectory { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SampleSpec {
    /// Uniform initial points in a box, `steps` consecutive pairs each.
    Random {
        m: usize,
        box_bounds: Vec<[f64; 2]>,
        steps: usize,
    },
    /// A single trajectory from `x0` after a burn-in.
    Trajectory {
        x0: Vec<f64>,
        length: usize,
        #[serde(default)]
        burn_in: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DictionarySpec {
    RbfKmeans { n: usize },
    Fourier { max_freq: usize },
    Monomial { max_degree: usize },
    LinearState,
    /// Reuse a dictionary serialized by an earlier run.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
}

impl GridSpec {
    /// Parse the `r_min:r_max:n_r,theta_n` flag form.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("bad grid spec '{text}', expected r_min:r_max:n_r,theta_n"));
        let (radial, angular) = text.split_once(',').ok_or_else(bad)?;
        let parts: Vec<&str> = radial.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(GridSpec {
            r_min: parts[0].parse().map_err(|_| bad())?,
            r_max: parts[1].parse().map_err(|_| bad())?,
            n_r: parts[2].parse().map_err(|_| bad())?,
            n_theta: angular.parse().map_err(|_| bad())?,
        })
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            r_min: 0.05,
            r_max: 1.5,
            n_r: 30,
            n_theta: 60,
        }
    }
}

/// One observable of a delay-embedding run: a state column or the constant 1.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ObservableSpec {
    Column(usize),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "name")]
pub enum AlgorithmSpec {
    /// DMD of the transposed snapshot matrices with residuals.
    Dmd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode_threshold: Option<f64>,
    },
    /// EDMD eigenpairs with infinite-dimensional residuals.
    Resdmd {},
    /// Pseudospectrum on a polar grid.
    Pseudospec {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        grid: GridSpec,
        #[serde(default)]
        direct: bool,
    },
    /// Hankel-DMD from a single trajectory.
    Hankel {
        delay: usize,
        #[serde(default = "default_eps_tol")]
        eps_tol: f64,
        #[serde(default)]
        eps_relative: bool,
        observables: Vec<ObservableSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<usize>,
    },
    /// Measure-preserving EDMD and the scalar measure of one dictionary
    /// coefficient direction.
    Mpedmd {
        #[serde(default)]
        observable: usize,
    },
    /// Generalized Laplace analysis along a trajectory.
    Gla {
        z: Vec<[f64; 2]>,
        n: usize,
    },
    /// Spectral-measure estimation from moments.
    Specmeasure(SpecmeasureSpec),
}

fn default_epsilon() -> f64 {
    0.25
}

fn default_eps_tol() -> f64 {
    1e-10
}

fn default_kernel_eps() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "sub")]
pub enum SpecmeasureSpec {
    /// Autocorrelation moments of one observable column.
    Moments { column: usize, order: usize },
    /// Interpolatory quadrature atoms.
    Quad { column: usize, order: usize },
    /// Truncated Fourier density.
    Fourier { column: usize, order: usize },
    /// Filtered Fourier density.
    Filter {
        column: usize,
        order: usize,
        kind: String,
    },
    /// mpEDMD + rational-kernel smoothed density of a delay-embedded
    /// observable.
    Kernel {
        column: usize,
        delay: usize,
        m: usize,
        #[serde(default = "default_kernel_eps")]
        eps: f64,
        #[serde(default)]
        center: bool,
    },
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural checks beyond the serde schema: referenced files must
    /// exist, shapes must be sane.
    pub fn validate(&self) -> Result<(), CliError> {
        let check_file = |p: &PathBuf| -> Result<(), CliError> {
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!("referenced file not found: {}", p.display())))
            }
        };
        match &self.data {
            DataSource::Snapshots { x, y, weights } => {
                check_file(x)?;
                check_file(y)?;
                if let Some(w) = weights {
                    check_file(w)?;
                }
            }
            DataSource::Trajectory { path } => check_file(path)?,
            DataSource::System { name, sample, .. } => {
                if name.is_empty() {
                    return Err(CliError::Config("system name is empty".into()));
                }
                match sample {
                    SampleSpec::Random { m, steps, box_bounds } => {
                        if *m == 0 || *steps == 0 || box_bounds.is_empty() {
                            return Err(CliError::Config(
                                "random sampling needs m >= 1, steps >= 1 and a box".into(),
                            ));
                        }
                    }
                    SampleSpec::Trajectory { length, .. } => {
                        if *length < 2 {
                            return Err(CliError::Config("trajectory length must be >= 2".into()));
                        }
                    }
                }
            }
        }
        if let Some(DictionarySpec::File { path }) = &self.dictionary {
            check_file(path)?;
        }
        if let AlgorithmSpec::Gla { z, n } = &self.algorithm {
            if z.is_empty() || *n == 0 {
                return Err(CliError::Config("gla needs at least one z and n >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Built-in demonstration pipelines.
pub fn demo_config(name: &str, out: PathBuf, seed: u64) -> Result<RunConfig, CliError> {
    let config = match name {
        "duffing" => RunConfig {
            seed,
            output_dir: out,
            data: DataSource::System {
                name: "duffing".into(),
                params: BTreeMap::new(),
                sample: SampleSpec::Random {
                    m: 10_000,
                    box_bounds: vec![[-2.0, 2.0], [-2.0, 2.0]],
                    steps: 2,
                },
            },
            dictionary: Some(DictionarySpec::RbfKmeans { n: 50 }),
            algorithm: AlgorithmSpec::Pseudospec {
                epsilon: 0.25,
                grid: GridSpec::default(),
                direct: false,
            },
        },
        "rotation" => RunConfig {
            seed,
            output_dir: out,
            data: DataSource::System {
                name: "rotation".into(),
                params: [("alpha".to_string(), std::f64::consts::SQRT_2)].into(),
                sample: SampleSpec::Random {
                    m: 512,
                    box_bounds: vec![[0.0, 2.0 * std::f64::consts::PI]],
                    steps: 1,
                },
            },
            dictionary: Some(DictionarySpec::Fourier { max_freq: 10 }),
            algorithm: AlgorithmSpec::Resdmd {},
        },
        "lorenz" => RunConfig {
            seed,
            output_dir: out,
            data: DataSource::System {
                name: "lorenz".into(),
                params: BTreeMap::new(),
                sample: SampleSpec::Trajectory {
                    x0: vec![1.0, 1.0, 1.0],
                    length: 2_021,
                    burn_in: 1_000,
                },
            },
            dictionary: None,
            algorithm: AlgorithmSpec::Hankel {
                delay: 20,
                eps_tol: 1e-10,
                eps_relative: true,
                observables: vec![
                    ObservableSpec::Column(0),
                    ObservableSpec::Column(1),
                    ObservableSpec::Column(2),
                    ObservableSpec::Named("const".into()),
                ],
                rows: None,
            },
        },
        "rossler" => RunConfig {
            seed,
            output_dir: out,
            data: DataSource::System {
                name: "rossler".into(),
                params: BTreeMap::new(),
                sample: SampleSpec::Trajectory {
                    x0: vec![1.0, 1.0, 1.0],
                    length: 5_151,
                    burn_in: 4_000,
                },
            },
            dictionary: None,
            algorithm: AlgorithmSpec::Specmeasure(SpecmeasureSpec::Kernel {
                column: 2,
                delay: 50,
                m: 6,
                eps: 0.05,
                center: true,
            }),
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown demo '{other}' (expected duffing, lorenz, rossler, or rotation)"
            )));
        }
    };
    Ok(config)
}
