//! `koop`: configuration-driven Koopman spectral analysis pipelines.

mod config;
mod error;
mod runner;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{
    AlgorithmSpec, DataSource, DictionarySpec, GridSpec, ObservableSpec, RunConfig, SpecmeasureSpec,
};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "koop",
    version,
    about = "Data-driven Koopman spectral analysis: fitting, residual validation, pseudospectra, and spectral measures",
    after_help = "Exit codes: 2 configuration/schema violation, 3 numerical failure, 4 I/O failure.\n\
                  KOOP_THREADS caps the number of threads used by dense linear algebra."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// JSON configuration file; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "koop-out")]
    out: PathBuf,
    /// Seed for all random generation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Snapshot state file (X.csv)
    #[arg(long)]
    x: Option<PathBuf>,
    /// Snapshot image file (Y.csv)
    #[arg(long)]
    y: Option<PathBuf>,
    /// Quadrature weights file (weights.csv)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Single-trajectory file (rows are consecutive states)
    #[arg(long)]
    traj: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bundled demonstration pipeline
    Demo {
        /// One of: duffing, lorenz, rossler, rotation
        name: String,
        #[arg(long, default_value = "koop-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the configuration a demo would run
    DemoConfig { name: String },
    /// DMD of state snapshots with per-pair residuals
    Dmd {
        #[command(flatten)]
        common: CommonArgs,
        /// SVD truncation tolerance (relative)
        #[arg(long)]
        tol: Option<f64>,
        /// Residual threshold for mode selection and reconstruction
        #[arg(long)]
        mode_threshold: Option<f64>,
    },
    /// EDMD eigenpairs with infinite-dimensional residuals
    Resdmd {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dict: DictArgs,
    },
    /// Pseudospectrum on a polar grid
    Pseudospec {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dict: DictArgs,
        #[arg(long, default_value_t = 0.25)]
        epsilon: f64,
        /// Grid as r_min:r_max:n_r,theta_n
        #[arg(long, value_name = "SPEC")]
        grid_spec: Option<String>,
        /// Use the direct (slower, more accurate) singular value path
        #[arg(long)]
        direct: bool,
    },
    /// Hankel-DMD from a single trajectory
    Hankel {
        #[command(flatten)]
        common: CommonArgs,
        /// Delay depth N
        #[arg(long, default_value_t = 20)]
        delay: usize,
        /// Singular value truncation threshold
        #[arg(long, default_value_t = 1e-10)]
        eps_tol: f64,
        /// Interpret eps_tol relative to the largest singular value
        #[arg(long)]
        eps_relative: bool,
        /// Observables: column indices and/or "const"
        #[arg(long, value_delimiter = ',', default_value = "0")]
        observables: Vec<String>,
        /// Number of Hankel rows (default: everything available)
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Measure-preserving EDMD and its scalar spectral measure
    Mpedmd {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dict: DictArgs,
        /// Dictionary coefficient index of the measured observable
        #[arg(long, default_value_t = 0)]
        observable: usize,
    },
    /// Generalized Laplace analysis: Koopman modes along a trajectory
    Gla {
        #[command(flatten)]
        common: CommonArgs,
        /// Series file (alias for --traj)
        #[arg(long)]
        series: Option<PathBuf>,
        /// Eigenvalues as re,im (repeatable)
        #[arg(long, value_name = "RE,IM")]
        z: Vec<String>,
        /// Averaging horizon
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
    /// Spectral measures of measure-preserving systems from moments
    Specmeasure {
        #[command(subcommand)]
        sub: SpecmeasureCommand,
    },
}

#[derive(clap::Args, Clone)]
struct DictArgs {
    /// Dictionary kind: rbf_kmeans, fourier, monomial, linear_state
    #[arg(long)]
    dictionary: Option<String>,
    /// Dictionary size (rbf_kmeans clusters)
    #[arg(long)]
    n: Option<usize>,
    /// Maximum frequency (fourier) or degree (monomial)
    #[arg(long)]
    degree: Option<usize>,
    /// Load a dictionary serialized by a previous run
    #[arg(long)]
    dictionary_file: Option<PathBuf>,
}

impl DictArgs {
    fn to_spec(&self) -> Result<Option<DictionarySpec>, CliError> {
        if let Some(path) = &self.dictionary_file {
            return Ok(Some(DictionarySpec::File { path: path.clone() }));
        }
        let Some(kind) = &self.dictionary else {
            return Ok(None);
        };
        let spec = match kind.as_str() {
            "rbf_kmeans" => DictionarySpec::RbfKmeans {
                n: self.n.ok_or_else(|| CliError::Config("rbf_kmeans needs --n".into()))?,
            },
            "fourier" => DictionarySpec::Fourier {
                max_freq: self
                    .degree
                    .ok_or_else(|| CliError::Config("fourier needs --degree".into()))?,
            },
            "monomial" => DictionarySpec::Monomial {
                max_degree: self
                    .degree
                    .ok_or_else(|| CliError::Config("monomial needs --degree".into()))?,
            },
            "linear_state" => DictionarySpec::LinearState,
            other => {
                return Err(CliError::Config(format!("unknown dictionary kind '{other}'")));
            }
        };
        Ok(Some(spec))
    }
}

#[derive(Subcommand)]
enum SpecmeasureCommand {
    /// Autocorrelation moments of an observable column
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 0)]
        column: usize,
        #[arg(long, default_value_t = 64)]
        order: usize,
    },
    /// Interpolatory quadrature atoms
    Quad {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 0)]
        column: usize,
        #[arg(long, default_value_t = 64)]
        order: usize,
    },
    /// Truncated Fourier density
    Fourier {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 0)]
        column: usize,
        #[arg(long, default_value_t = 64)]
        order: usize,
    },
    /// Filtered Fourier density
    Filter {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 0)]
        column: usize,
        #[arg(long, default_value_t = 64)]
        order: usize,
        /// Filter kind: hat, cosine, vandeven4, bump
        #[arg(long, default_value = "bump")]
        kind: String,
    },
    /// Smoothed density via mpEDMD on a delay embedding and a rational kernel
    Kernel {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 0)]
        column: usize,
        #[arg(long, default_value_t = 50)]
        delay: usize,
        /// Kernel order
        #[arg(long, default_value_t = 6)]
        m: usize,
        /// Smoothing scale
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Mean-center the observable first
        #[arg(long)]
        center: bool,
    },
}

fn main() {
    configure_threads();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(report) => {
            if let Some(report) = report {
                let total: f64 = report.timings.iter().map(|t| t.seconds).sum();
                println!(
                    "done in {total:.2}s; wrote {} file(s) to the output directory",
                    report.outputs.len()
                );
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("KOOP_THREADS") {
        match value.parse::<usize>() {
            Ok(0) | Err(_) => eprintln!("warning: ignoring invalid KOOP_THREADS={value}"),
            Ok(1) => faer::set_global_parallelism(faer::Par::Seq),
            Ok(n) => faer::set_global_parallelism(faer::Par::rayon(n)),
        }
    }
}

fn dispatch(cli: Cli) -> Result<Option<runner::RunReport>, CliError> {
    match cli.command {
        Command::Demo { name, out, seed } => {
            let config = config::demo_config(&name, out, seed)?;
            Ok(Some(runner::run(&config)?))
        }
        Command::DemoConfig { name } => {
            let config = config::demo_config(&name, PathBuf::from("koop-out"), 0)?;
            println!("{}", serde_json::to_string_pretty(&config).unwrap());
            Ok(None)
        }
        Command::Dmd {
            common,
            tol,
            mode_threshold,
        } => {
            let config = merge_config(&common, None, AlgorithmSpec::Dmd { tol, mode_threshold })?;
            Ok(Some(runner::run(&config)?))
        }
        Command::Resdmd { common, dict } => {
            let config = merge_config(&common, dict.to_spec()?, AlgorithmSpec::Resdmd {})?;
            Ok(Some(runner::run(&config)?))
        }
        Command::Pseudospec {
            common,
            dict,
            epsilon,
            grid_spec,
            direct,
        } => {
            let grid = match grid_spec {
                Some(text) => GridSpec::parse(&text)?,
                None => GridSpec::default(),
            };
            let config = merge_config(
                &common,
                dict.to_spec()?,
                AlgorithmSpec::Pseudospec { epsilon, grid, direct },
            )?;
            Ok(Some(runner::run(&config)?))
        }
        Command::Hankel {
            common,
            delay,
            eps_tol,
            eps_relative,
            observables,
            rows,
        } => {
            let observables = observables
                .iter()
                .map(|o| {
                    if o == "const" {
                        Ok(ObservableSpec::Named("const".into()))
                    } else {
                        o.parse::<usize>()
                            .map(ObservableSpec::Column)
                            .map_err(|_| {
                                CliError::Config(format!(
                                    "bad observable '{o}' (use a column index or \"const\")"
                                ))
                            })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let config = merge_config(
                &common,
                None,
                AlgorithmSpec::Hankel {
                    delay,
                    eps_tol,
                    eps_relative,
                    observables,
                    rows,
                },
            )?;
            Ok(Some(runner::run(&config)?))
        }
        Command::Mpedmd {
            common,
            dict,
            observable,
        } => {
            let config = merge_config(&common, dict.to_spec()?, AlgorithmSpec::Mpedmd { observable })?;
            Ok(Some(runner::run(&config)?))
        }
        Command::Gla {
            mut common,
            series,
            z,
            n,
        } => {
            if common.traj.is_none() {
                common.traj = series;
            }
            let zs = z
                .iter()
                .map(|pair| {
                    let (re, im) = pair
                        .split_once(',')
                        .ok_or_else(|| CliError::Config(format!("bad --z '{pair}', expected re,im")))?;
                    Ok([
                        re.trim()
                            .parse()
                            .map_err(|_| CliError::Config(format!("bad --z '{pair}'")))?,
                        im.trim()
                            .parse()
                            .map_err(|_| CliError::Config(format!("bad --z '{pair}'")))?,
                    ])
                })
                .collect::<Result<Vec<[f64; 2]>, CliError>>()?;
            let config = merge_config(&common, None, AlgorithmSpec::Gla { z: zs, n })?;
            Ok(Some(runner::run(&config)?))
        }
        Command::Specmeasure { sub } => {
            let (common, spec) = match sub {
                SpecmeasureCommand::Moments { common, column, order } => {
                    (common, SpecmeasureSpec::Moments { column, order })
                }
                SpecmeasureCommand::Quad { common, column, order } => {
                    (common, SpecmeasureSpec::Quad { column, order })
                }
                SpecmeasureCommand::Fourier { common, column, order } => {
                    (common, SpecmeasureSpec::Fourier { column, order })
                }
                SpecmeasureCommand::Filter {
                    common,
                    column,
                    order,
                    kind,
                } => (common, SpecmeasureSpec::Filter { column, order, kind }),
                SpecmeasureCommand::Kernel {
                    common,
                    column,
                    delay,
                    m,
                    eps,
                    center,
                } => (
                    common,
                    SpecmeasureSpec::Kernel {
                        column,
                        delay,
                        m,
                        eps,
                        center,
                    },
                ),
            };
            let config = merge_config(&common, None, AlgorithmSpec::Specmeasure(spec))?;
            Ok(Some(runner::run(&config)?))
        }
    }
}

/// Build the effective configuration: start from `--config` when given, then
/// apply flat flag overrides.
fn merge_config(
    common: &CommonArgs,
    dictionary: Option<DictionarySpec>,
    algorithm: AlgorithmSpec,
) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => {
            let data = data_from_flags(common)?;
            RunConfig {
                seed: common.seed,
                output_dir: common.out.clone(),
                data,
                dictionary: None,
                algorithm: algorithm.clone(),
            }
        }
    };
    if common.config.is_some() {
        // flat overrides on top of the file
        config.output_dir = common.out.clone();
        if common.seed != 0 {
            config.seed = common.seed;
        }
        if let Ok(Some(data)) = data_from_flags(common).map(Some) {
            if common.x.is_some() || common.traj.is_some() {
                config.data = data;
            }
        }
    }
    if dictionary.is_some() {
        config.dictionary = dictionary;
    }
    config.algorithm = algorithm;
    config.validate()?;
    Ok(config)
}

fn data_from_flags(common: &CommonArgs) -> Result<DataSource, CliError> {
    match (&common.x, &common.y, &common.traj) {
        (Some(x), Some(y), None) => Ok(DataSource::Snapshots {
            x: x.clone(),
            y: y.clone(),
            weights: common.weights.clone(),
        }),
        (None, None, Some(path)) => Ok(DataSource::Trajectory { path: path.clone() }),
        (None, None, None) => Err(CliError::Config(
            "no data source: pass --config, --x/--y, or --traj".into(),
        )),
        _ => Err(CliError::Config(
            "conflicting data sources: use either --x/--y or --traj".into(),
        )),
    }
}
