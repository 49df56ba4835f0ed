//! Pipeline execution: ingest/generate -> dictionary -> fit -> analyze -> emit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use koopman::c64;
use koopman::dictionary::{self, Dictionary};
use koopman::dmd;
use koopman::gla;
use koopman::hankel::{self, HankelConfig};
use koopman::io;
use koopman::mpedmd;
use koopman::resdmd;
use koopman::specmeasure as sm;
use koopman::systems::{self, SnapshotSet, SystemSpec};
use koopman::{CMat, CVec, RMat};
use serde::Serialize;

use crate::config::{
    AlgorithmSpec, DataSource, DictionarySpec, ObservableSpec, RunConfig, SampleSpec,
    SpecmeasureSpec,
};
use crate::error::CliError;
use crate::svg;

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub versions: Versions,
    /// Wall time per pipeline stage, in seconds.
    pub timings: Vec<StageTime>,
    pub warnings: Vec<String>,
    /// Every file written by the run.
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub koop: &'static str,
    pub koopman: &'static str,
}

#[derive(Debug, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

struct Emitter {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Emitter {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }
}

struct Stages {
    timings: Vec<StageTime>,
    current: Option<(String, Instant)>,
}

impl Stages {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            current: None,
        }
    }

    fn begin(&mut self, name: &str) {
        self.end();
        self.current = Some((name.to_string(), Instant::now()));
    }

    fn end(&mut self) {
        if let Some((name, start)) = self.current.take() {
            self.timings.push(StageTime {
                stage: name,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
}

enum Ingested {
    Pairs(SnapshotSet),
    Trajectory { traj: RMat, pairs: SnapshotSet },
}

impl Ingested {
    fn pairs(&self) -> &SnapshotSet {
        match self {
            Ingested::Pairs(p) => p,
            Ingested::Trajectory { pairs, .. } => pairs,
        }
    }

    fn trajectory(&self) -> Result<&RMat, CliError> {
        match self {
            Ingested::Trajectory { traj, .. } => Ok(traj),
            Ingested::Pairs(_) => Err(CliError::Config(
                "this algorithm needs single-trajectory data (a trajectory file or a \
                 system with a trajectory sample)"
                    .into(),
            )),
        }
    }
}

/// Execute a validated configuration.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", config.output_dir.display())))?;

    let mut stages = Stages::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut emitter = Emitter {
        dir: config.output_dir.clone(),
        outputs: Vec::new(),
    };

    stages.begin("ingest");
    let data = ingest(config)?;
    stages.end();

    match &config.algorithm {
        AlgorithmSpec::Dmd { tol, mode_threshold } => {
            run_dmd(config, &data, *tol, *mode_threshold, &mut stages, &mut emitter, &mut warnings)?
        }
        AlgorithmSpec::Resdmd {} => {
            run_resdmd(config, &data, &mut stages, &mut emitter, &mut warnings)?
        }
        AlgorithmSpec::Pseudospec { epsilon, grid, direct } => run_pseudospec(
            config, &data, *epsilon, grid, *direct, &mut stages, &mut emitter, &mut warnings,
        )?,
        AlgorithmSpec::Hankel {
            delay,
            eps_tol,
            eps_relative,
            observables,
            rows,
        } => run_hankel(
            &data,
            *delay,
            *eps_tol,
            *eps_relative,
            observables,
            *rows,
            &mut stages,
            &mut emitter,
            &mut warnings,
        )?,
        AlgorithmSpec::Mpedmd { observable } => {
            run_mpedmd(config, &data, *observable, &mut stages, &mut emitter, &mut warnings)?
        }
        AlgorithmSpec::Gla { z, n } => run_gla(&data, z, *n, &mut stages, &mut emitter, &mut warnings)?,
        AlgorithmSpec::Specmeasure(spec) => {
            run_specmeasure(&data, spec, &mut stages, &mut emitter, &mut warnings)?
        }
    }
    stages.end();

    let report = RunReport {
        config: serde_json::to_value(config).expect("config serializes"),
        versions: Versions {
            koop: env!("CARGO_PKG_VERSION"),
            koopman: env!("CARGO_PKG_VERSION"),
        },
        timings: stages.timings,
        warnings,
        outputs: emitter.outputs,
    };
    let report_path = config.output_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, text)
        .map_err(|e| CliError::Io(format!("{}: {e}", report_path.display())))?;
    Ok(report)
}

fn ingest(config: &RunConfig) -> Result<Ingested, CliError> {
    let stage = "ingest";
    match &config.data {
        DataSource::System { name, params, sample } => {
            let spec = SystemSpec::from_name(name, params).map_err(|e| CliError::from_stage(stage, e))?;
            match sample {
                SampleSpec::Random { m, box_bounds, steps } => {
                    let bounds: Vec<(f64, f64)> =
                        box_bounds.iter().map(|b| (b[0], b[1])).collect();
                    let snaps = systems::sample_random(&spec, *m, &bounds, *steps, config.seed)
                        .map_err(|e| CliError::from_stage(stage, e))?;
                    Ok(Ingested::Pairs(snaps))
                }
                SampleSpec::Trajectory { x0, length, burn_in } => {
                    let traj = systems::sample_trajectory(&spec, x0, *length, *burn_in)
                        .map_err(|e| CliError::from_stage(stage, e))?;
                    let pairs = trajectory_pairs(&traj).map_err(|e| CliError::from_stage(stage, e))?;
                    Ok(Ingested::Trajectory { traj, pairs })
                }
            }
        }
        DataSource::Snapshots { x, y, weights } => {
            let snaps = io::read_snapshots(x, y, weights.as_deref())
                .map_err(|e| CliError::from_stage(stage, e))?;
            Ok(Ingested::Pairs(snaps))
        }
        DataSource::Trajectory { path } => {
            let traj = io::read_matrix_csv(path).map_err(|e| CliError::from_stage(stage, e))?;
            let pairs = trajectory_pairs(&traj).map_err(|e| CliError::from_stage(stage, e))?;
            Ok(Ingested::Trajectory { traj, pairs })
        }
    }
}

fn trajectory_pairs(traj: &RMat) -> koopman::Result<SnapshotSet> {
    let m = traj.nrows() - 1;
    let d = traj.ncols();
    let x = RMat::from_fn(m, d, |i, j| traj[(i, j)]);
    let y = RMat::from_fn(m, d, |i, j| traj[(i + 1, j)]);
    SnapshotSet::new(x, y, vec![1.0 / m as f64; m])
}

fn build_dictionary(
    config: &RunConfig,
    snaps: &SnapshotSet,
    emitter: &mut Emitter,
) -> Result<Dictionary, CliError> {
    let stage = "dictionary";
    let spec = config.dictionary.as_ref().ok_or_else(|| {
        CliError::Config("this algorithm requires a dictionary specification".into())
    })?;
    let dict = match spec {
        DictionarySpec::RbfKmeans { n } => {
            dictionary::build_rbf_dictionary(snaps, *n, config.seed)
                .map_err(|e| CliError::from_stage(stage, e))?
        }
        DictionarySpec::Fourier { max_freq } => Dictionary::Fourier { max_freq: *max_freq },
        DictionarySpec::Monomial { max_degree } => Dictionary::Monomial {
            dim: snaps.dim,
            max_degree: *max_degree,
        },
        DictionarySpec::LinearState => Dictionary::LinearState { dim: snaps.dim },
        DictionarySpec::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let parsed: dictionary::DictionaryConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            dictionary::from_config(&parsed).map_err(|e| CliError::from_stage(stage, e))?
        }
    };
    // persist for reuse across runs
    if let Ok(cfg) = dictionary::to_config(&dict) {
        let path = emitter.path("dictionary.json");
        let text = serde_json::to_string_pretty(&cfg).expect("dictionary serializes");
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(dict)
}

#[allow(clippy::too_many_arguments)]
fn run_dmd(
    _config: &RunConfig,
    data: &Ingested,
    tol: Option<f64>,
    mode_threshold: Option<f64>,
    stages: &mut Stages,
    emitter: &mut Emitter,
    _warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let pairs = data.pairs();
    stages.begin("fit");
    // states as columns
    let x = CMat::from_fn(pairs.dim, pairs.len(), |i, j| c64::new(pairs.x[(j, i)], 0.0));
    let y = CMat::from_fn(pairs.dim, pairs.len(), |i, j| c64::new(pairs.y[(j, i)], 0.0));
    let result = dmd::dmd(&x, &y, tol).map_err(|e| CliError::from_stage("fit", e))?;
    stages.end();

    stages.begin("emit");
    let modes_path = emitter.path("modes.csv");
    write_complex_matrix_csv(&modes_path, &result.ritz_vectors)?;
    let eig_path = emitter.path("eigenvalues.csv");
    io::write_eigenvalues_csv(&eig_path, &result.eigenvalues, &result.residuals)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let json_path = emitter.path("result.json");
    let json = io::eigenvalues_json(&result.eigenvalues, &result.residuals, result.rank, Some("modes.csv"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap())
        .map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    let svg_path = emitter.path("eigenvalues.svg");
    svg::eigenvalue_scatter(
        &svg_path,
        "DMD eigenvalues (color: residual)",
        &result.eigenvalues.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>(),
        Some(&result.residuals),
        true,
    )?;

    if let Some(threshold) = mode_threshold {
        let selection = dmd::select_modes_by_residual(&result, threshold)
            .map_err(|e| CliError::from_stage("emit", e))?;
        if !selection.is_empty() {
            let rec = dmd::reconstruct(&result, &x, &selection, &vec![1.0; pairs.len()])
                .map_err(|e| CliError::from_stage("emit", e))?;
            let rec_path = emitter.path("reconstruction.csv");
            write_reconstruction_csv(&rec_path, &rec)?;
        }
    }
    stages.end();
    Ok(())
}

fn run_resdmd(
    config: &RunConfig,
    data: &Ingested,
    stages: &mut Stages,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let pairs = data.pairs();
    stages.begin("dictionary");
    let dict = build_dictionary(config, pairs, emitter)?;
    stages.end();
    stages.begin("fit");
    let matrices = dictionary::assemble(&dict, pairs).map_err(|e| CliError::from_stage("fit", e))?;
    let fit = dmd::edmd_fit_with_dict(&matrices, Some(dict)).map_err(|e| CliError::from_stage("fit", e))?;
    stages.end();
    stages.begin("analyze");
    let pairs_out = resdmd::validate_eigenpairs(&fit).map_err(|e| CliError::from_stage("analyze", e))?;
    stages.end();

    stages.begin("emit");
    let eigenvalues: CVec = pairs_out.iter().map(|p| p.lambda).collect();
    let residuals: Vec<f64> = pairs_out.iter().map(|p| p.res).collect();
    let small = residuals.iter().filter(|r| **r < 0.05).count();
    if small * 2 < residuals.len() {
        warnings.push(format!(
            "{}/{} eigenpairs have residual >= 0.05; most of the computed spectrum is unreliable (spectral pollution)",
            residuals.len() - small,
            residuals.len()
        ));
    }
    let eig_path = emitter.path("eigenvalues.csv");
    io::write_eigenvalues_csv(&eig_path, &eigenvalues, &residuals)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let coeff_path = emitter.path("eigenfunction_coefficients.csv");
    let n = fit.k.nrows();
    let coeff_matrix = CMat::from_fn(n, pairs_out.len(), |i, j| pairs_out[j].coeffs[i]);
    write_complex_matrix_csv(&coeff_path, &coeff_matrix)?;
    let json_path = emitter.path("result.json");
    let json = io::eigenvalues_json(&eigenvalues, &residuals, n, None);
    std::fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap())
        .map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    let svg_path = emitter.path("eigenvalues.svg");
    svg::eigenvalue_scatter(
        &svg_path,
        "EDMD eigenvalues with residuals",
        &eigenvalues.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>(),
        Some(&residuals),
        true,
    )?;
    stages.end();
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_pseudospec(
    config: &RunConfig,
    data: &Ingested,
    epsilon: f64,
    grid_spec: &crate::config::GridSpec,
    direct: bool,
    stages: &mut Stages,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let pairs = data.pairs();
    stages.begin("dictionary");
    let dict = build_dictionary(config, pairs, emitter)?;
    stages.end();
    stages.begin("fit");
    let matrices = dictionary::assemble(&dict, pairs).map_err(|e| CliError::from_stage("fit", e))?;
    let fit = dmd::edmd_fit_with_dict(&matrices, Some(dict)).map_err(|e| CliError::from_stage("fit", e))?;
    let validated = resdmd::validate_eigenpairs(&fit).map_err(|e| CliError::from_stage("fit", e))?;
    stages.end();

    stages.begin("analyze");
    let grid = resdmd::polar_grid(grid_spec.r_min, grid_spec.r_max, grid_spec.n_r, grid_spec.n_theta);
    let options = resdmd::PseudospectrumOptions {
        direct_svd: direct,
        want_coeffs: false,
    };
    let ps = resdmd::pseudospectrum_with(&matrices, &grid, epsilon, &options)
        .map_err(|e| CliError::from_stage("analyze", e))?;
    stages.end();

    stages.begin("emit");
    let accepted = ps.accepted.iter().filter(|a| **a).count();
    if accepted == 0 {
        warnings.push(format!("no grid point fell inside the epsilon = {epsilon} pseudospectrum"));
    }
    let eigenvalues: CVec = validated.iter().map(|p| p.lambda).collect();
    let residuals: Vec<f64> = validated.iter().map(|p| p.res).collect();
    let eig_path = emitter.path("eigenvalues.csv");
    io::write_eigenvalues_csv(&eig_path, &eigenvalues, &residuals)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let ps_path = emitter.path("pseudospectrum.csv");
    io::write_pseudospectrum_csv(&ps_path, &ps.points, &ps.tau, &ps.accepted)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let svg_path = emitter.path("pseudospectrum.svg");
    svg::pseudospectrum_plot(
        &svg_path,
        &format!("Pseudospectrum estimate (epsilon = {epsilon})"),
        &ps.points.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>(),
        &ps.tau,
        epsilon,
        Some((grid_spec.n_r, grid_spec.n_theta)),
    )?;
    let json_path = emitter.path("result.json");
    let json = serde_json::json!({
        "epsilon": epsilon,
        "grid_points": ps.points.len(),
        "accepted": accepted,
        "eigenvalues": eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "residuals": residuals,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap())
        .map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    stages.end();
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_hankel(
    data: &Ingested,
    delay: usize,
    eps_tol: f64,
    eps_relative: bool,
    observables: &[ObservableSpec],
    rows: Option<usize>,
    stages: &mut Stages,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let traj = data.trajectory()?;
    stages.begin("fit");
    let len = traj.nrows();
    if len <= delay + 1 {
        return Err(CliError::Config(format!(
            "trajectory has {len} states, too short for delay depth {delay}"
        )));
    }
    let m = rows.unwrap_or(len - delay - 1).min(len - delay - 1);
    let series = observable_series(traj, observables)?;
    let config = HankelConfig {
        delay,
        rows: m,
        eps_tol,
        eps_relative,
    };
    let result = hankel::hankel_dmd(&series, &config).map_err(|e| CliError::from_stage("fit", e))?;
    stages.end();

    stages.begin("analyze");
    let (matrices, _) = hankel::hankel_data_matrices(&series, &config)
        .map_err(|e| CliError::from_stage("analyze", e))?;
    let fit = dmd::edmd_fit(&matrices).map_err(|e| CliError::from_stage("analyze", e))?;
    let mut residuals = Vec::with_capacity(result.rank);
    for j in 0..result.rank {
        let coeffs: CVec = (0..result.coefficients.nrows())
            .map(|i| result.coefficients[(i, j)])
            .collect();
        let res = resdmd::residual(&fit, result.eigenvalues[j], &coeffs)
            .map_err(|e| CliError::from_stage("analyze", e))?;
        residuals.push(res);
    }
    stages.end();

    stages.begin("emit");
    if result.rank * 2 > delay * observables.len() {
        warnings.push(format!(
            "truncation kept {}/{} delay directions; consider a smaller eps_tol only with more data",
            result.rank,
            delay * observables.len()
        ));
    }
    let eig_path = emitter.path("eigenvalues.csv");
    io::write_eigenvalues_csv(&eig_path, &result.eigenvalues, &residuals)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let coeff_path = emitter.path("eigenfunction_coefficients.csv");
    write_complex_matrix_csv(&coeff_path, &result.coefficients)?;
    let json_path = emitter.path("result.json");
    let json = io::eigenvalues_json(&result.eigenvalues, &residuals, result.rank, None);
    std::fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap())
        .map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    let svg_path = emitter.path("eigenvalues.svg");
    svg::eigenvalue_scatter(
        &svg_path,
        "Hankel-DMD eigenvalues with residuals",
        &result.eigenvalues.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>(),
        Some(&residuals),
        true,
    )?;
    stages.end();
    Ok(())
}

fn observable_series(traj: &RMat, observables: &[ObservableSpec]) -> Result<Vec<CVec>, CliError> {
    let len = traj.nrows();
    observables
        .iter()
        .map(|o| match o {
            ObservableSpec::Column(j) => {
                if *j >= traj.ncols() {
                    Err(CliError::Config(format!(
                        "observable column {j} out of range (trajectory has {} columns)",
                        traj.ncols()
                    )))
                } else {
                    Ok((0..len).map(|i| c64::new(traj[(i, *j)], 0.0)).collect())
                }
            }
            ObservableSpec::Named(name) if name == "const" => {
                Ok(vec![c64::new(1.0, 0.0); len])
            }
            ObservableSpec::Named(other) => Err(CliError::Config(format!(
                "unknown observable '{other}' (use a column index or \"const\")"
            ))),
        })
        .collect()
}

fn run_mpedmd(
    config: &RunConfig,
    data: &Ingested,
    observable: usize,
    stages: &mut Stages,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let pairs = data.pairs();
    stages.begin("dictionary");
    let dict = build_dictionary(config, pairs, emitter)?;
    let n = dict.size();
    stages.end();
    stages.begin("fit");
    let matrices = dictionary::assemble(&dict, pairs).map_err(|e| CliError::from_stage("fit", e))?;
    let mp = mpedmd::mpedmd_fit(&matrices).map_err(|e| CliError::from_stage("fit", e))?;
    stages.end();

    stages.begin("analyze");
    if observable >= n {
        return Err(CliError::Config(format!(
            "observable index {observable} out of range for dictionary size {n}"
        )));
    }
    let mut g = vec![c64::new(0.0, 0.0); n];
    g[observable] = c64::new(1.0, 0.0);
    let measure = mpedmd::scalar_measure(&mp, &g, true).map_err(|e| CliError::from_stage("analyze", e))?;
    stages.end();

    stages.begin("emit");
    let unitarity = (mp.k_mp.adjoint() * &mp.gram * &mp.k_mp - &mp.gram).norm_l2() / mp.gram.norm_l2();
    if unitarity > 1e-8 {
        warnings.push(format!("G-unitarity defect {unitarity:.3e} exceeds 1e-8"));
    }
    let zero_res = vec![0.0; mp.eigenvalues.len()];
    let eig_path = emitter.path("eigenvalues.csv");
    io::write_eigenvalues_csv(&eig_path, &mp.eigenvalues, &zero_res)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let vec_path = emitter.path("eigenvectors.csv");
    write_complex_matrix_csv(&vec_path, &mp.eigenvectors)?;
    let measure_path = emitter.path("measure.csv");
    io::write_atoms_csv(&measure_path, &measure.thetas, &measure.masses)
        .map_err(|e| CliError::from_stage("emit", e))?;
    let svg_path = emitter.path("measure.svg");
    svg::line_plot(
        &svg_path,
        "Scalar spectral measure (atom masses)",
        &measure.thetas,
        &measure.masses,
        ("theta", "mass"),
    )?;
    let json_path = emitter.path("result.json");
    let json = serde_json::json!({
        "eigenvalues": mp.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "g_unitarity_defect": unitarity,
        "atoms": measure.thetas.len(),
        "observable": observable,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap())
        .map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    stages.end();
    Ok(())
}

fn run_gla(
    data: &Ingested,
    zs: &[[f64; 2]],
    n: usize,
    stages: &mut Stages,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let traj = data.trajectory()?;
    stages.begin("analyze");
    let series = CMat::from_fn(traj.nrows(), traj.ncols(), |i, j| c64::new(traj[(i, j)], 0.0));
    let mut eigenvalues: CVec = zs.iter().map(|z| c64::new(z[0], z[1])).collect();
    eigenvalues.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    let modes = gla::extract_modes(&series, &eigenvalues, n).map_err(|e| CliError::from_stage("analyze", e))?;
    stages.end();

    stages.begin("emit");
    for mode in &modes {
        if let Some(w) = &mode.warning {
            warnings.push(format!("z = {}: {w}", mode.eigenvalue));
        }
    }
    // one row per eigenvalue: re(z), im(z), then re/im of each component
    let modes_path = emitter.path("modes.csv");
    {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&modes_path)
                .map_err(|e| CliError::Io(format!("{}: {e}", modes_path.display())))?,
        );
        for mode in &modes {
            let mut row = format!("{:.17e},{:.17e}", mode.eigenvalue.re, mode.eigenvalue.im);
            for v in &mode.mode {
                row.push_str(&format!(",{:.17e},{:.17e}", v.re, v.im));
            }
            writeln!(out, "{row}").map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    // convergence trace: mode index, horizon, error proxy (distance of the
    // running average from the final one)
    let trace_path = emitter.path("trace.csv");
    let mut trace_rows: Vec<(usize, usize, f64)> = Vec::new();
    for (idx, mode) in modes.iter().enumerate() {
        for (horizon, avg) in &mode.trace {
            let proxy: f64 = avg
                .iter()
                .zip(&mode.mode)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            trace_rows.push((idx, *horizon, proxy));
        }
    }
    {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&trace_path)
                .map_err(|e| CliError::Io(format!("{}: {e}", trace_path.display())))?,
        );
        for (idx, horizon, proxy) in &trace_rows {
            writeln!(out, "{idx},{horizon},{proxy:.17e}").map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    let svg_path = emitter.path("trace.svg");
    let first: Vec<(f64, f64)> = trace_rows
        .iter()
        .filter(|(idx, _, _)| *idx == 0)
        .map(|(_, h, p)| ((*h as f64).ln(), p.max(1e-300).ln()))
        .collect();
    svg::line_plot(
        &svg_path,
        "Laplace average convergence (first mode, log-log)",
        &first.iter().map(|p| p.0).collect::<Vec<_>>(),
        &first.iter().map(|p| p.1).collect::<Vec<_>>(),
        ("ln n", "ln error proxy"),
    )?;
    stages.end();
    Ok(())
}

fn run_specmeasure(
    data: &Ingested,
    spec: &SpecmeasureSpec,
    stages: &mut Stages,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let traj = data.trajectory()?;
    let column_series = |column: usize, center: bool| -> Result<CVec, CliError> {
        if column >= traj.ncols() {
            return Err(CliError::Config(format!(
                "column {column} out of range (trajectory has {} columns)",
                traj.ncols()
            )));
        }
        let len = traj.nrows();
        let mean = if center {
            (0..len).map(|i| traj[(i, column)]).sum::<f64>() / len as f64
        } else {
            0.0
        };
        Ok((0..len)
            .map(|i| c64::new(traj[(i, column)] - mean, 0.0))
            .collect())
    };

    match spec {
        SpecmeasureSpec::Moments { column, order } => {
            stages.begin("analyze");
            let series = column_series(*column, false)?;
            let moments = sm::moments_from_trajectory(&series, *order)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            warnings.extend(moments.validate());
            stages.end();
            stages.begin("emit");
            let path = emitter.path("moments.csv");
            use std::io::Write;
            let mut out = std::io::BufWriter::new(
                std::fs::File::create(&path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
            );
            for k in 0..=(*order as i64) {
                let ck = moments.get(k);
                writeln!(out, "{k},{:.17e},{:.17e}", ck.re, ck.im)
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            stages.end();
        }
        SpecmeasureSpec::Quad { column, order } => {
            stages.begin("analyze");
            let series = column_series(*column, false)?;
            let moments = sm::moments_from_trajectory(&series, *order)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            let measure = sm::interpolatory_quadrature(&moments, None)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            warnings.extend(measure.metadata.warnings.clone());
            stages.end();
            stages.begin("emit");
            emit_measure(&measure, emitter, "Interpolatory quadrature atoms")?;
            stages.end();
        }
        SpecmeasureSpec::Fourier { column, order } => {
            stages.begin("analyze");
            let series = column_series(*column, false)?;
            let moments = sm::moments_from_trajectory(&series, *order)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            let measure = sm::fourier_density(&moments);
            warnings.extend(measure.metadata.warnings.clone());
            stages.end();
            stages.begin("emit");
            emit_measure(&measure, emitter, "Truncated Fourier density")?;
            stages.end();
        }
        SpecmeasureSpec::Filter { column, order, kind } => {
            stages.begin("analyze");
            let filter = sm::Filter::from_name(kind).map_err(|e| CliError::from_stage("analyze", e))?;
            let series = column_series(*column, false)?;
            let moments = sm::moments_from_trajectory(&series, *order)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            let measure = sm::filtered_density(&moments, &filter);
            warnings.extend(measure.metadata.warnings.clone());
            stages.end();
            stages.begin("emit");
            emit_measure(&measure, emitter, &format!("Filtered Fourier density ({kind})"))?;
            stages.end();
        }
        SpecmeasureSpec::Kernel {
            column,
            delay,
            m,
            eps,
            center,
        } => {
            stages.begin("fit");
            let series = column_series(*column, *center)?;
            let len = series.len();
            if len <= delay + 1 {
                return Err(CliError::Config(format!(
                    "trajectory has {len} states, too short for delay depth {delay}"
                )));
            }
            let config = HankelConfig {
                delay: *delay,
                rows: len - delay - 1,
                eps_tol: 1e-8,
                eps_relative: true,
            };
            let (matrices, _) = hankel::hankel_data_matrices(&[series], &config)
                .map_err(|e| CliError::from_stage("fit", e))?;
            let mp = mpedmd::mpedmd_fit(&matrices).map_err(|e| CliError::from_stage("fit", e))?;
            stages.end();
            stages.begin("analyze");
            let mut g = vec![c64::new(0.0, 0.0); *delay];
            g[0] = c64::new(1.0, 0.0);
            let atoms = mpedmd::scalar_measure(&mp, &g, true)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            let kernel = sm::rational_kernel_build(*m, *eps)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            let grid = sm::default_theta_grid();
            let density = sm::smoothed_density(&sm::SmoothingSource::Atoms(&atoms), &kernel, &grid)
                .map_err(|e| CliError::from_stage("analyze", e))?;
            warnings.extend(density.metadata.warnings.clone());
            stages.end();
            stages.begin("emit");
            let atoms_path = emitter.path("atoms.csv");
            io::write_atoms_csv(&atoms_path, &atoms.thetas, &atoms.masses)
                .map_err(|e| CliError::from_stage("emit", e))?;
            emit_measure(&density, emitter, &format!("Smoothed spectral density (m = {m}, eps = {eps})"))?;
            stages.end();
        }
    }
    Ok(())
}

fn emit_measure(
    measure: &sm::SpectralMeasureApprox,
    emitter: &mut Emitter,
    title: &str,
) -> Result<(), CliError> {
    match &measure.repr {
        sm::MeasureRepr::Atoms(atoms) => {
            let path = emitter.path("atoms.csv");
            io::write_atoms_csv(&path, &atoms.thetas, &atoms.masses)
                .map_err(|e| CliError::from_stage("emit", e))?;
            let svg_path = emitter.path("atoms.svg");
            svg::line_plot(&svg_path, title, &atoms.thetas, &atoms.masses, ("theta", "weight"))?;
        }
        sm::MeasureRepr::Density(density) => {
            let path = emitter.path("density.csv");
            io::write_density_csv(&path, &density.thetas, &density.values)
                .map_err(|e| CliError::from_stage("emit", e))?;
            let svg_path = emitter.path("density.svg");
            svg::line_plot(&svg_path, title, &density.thetas, &density.values, ("theta", "density"))?;
        }
    }
    Ok(())
}

fn write_reconstruction_csv(path: &Path, rec: &dmd::Reconstruction) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
    );
    // selected mode index with coefficient, then one error row per snapshot
    for (mode, coeff) in rec.selection.iter().zip(&rec.coefficients) {
        writeln!(out, "mode,{mode},{:.17e},{:.17e}", coeff.re, coeff.im)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    for (m_idx, err) in rec.errors.iter().enumerate() {
        writeln!(out, "error,{m_idx},{err:.17e}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn write_complex_matrix_csv(path: &Path, m: &CMat) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
    );
    for i in 0..m.nrows() {
        let mut row = String::new();
        for j in 0..m.ncols() {
            if j > 0 {
                row.push(',');
            }
            row.push_str(&format!("{:.17e},{:.17e}", m[(i, j)].re, m[(i, j)].im));
        }
        writeln!(out, "{row}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}
