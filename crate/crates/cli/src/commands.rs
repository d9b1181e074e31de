use std::path::{Path, PathBuf};

use gsfica::asymptotics::{local_contrast_signs, moment_functionals, predict, Prediction};
use gsfica::fastica::{
    contrast_hessian, contrast_surface, deflation, eigenvalues_2x2, fixed_point_residual,
    generalized_symmetric, random_orthogonal, symmetry_defect, IterationConfig, SeparationResult,
};
use gsfica::montecarlo::{
    run_experiment_with_threads, run_sweep, Aggregate, ExperimentConfig, TrialCentering,
};
use gsfica::{standardize, Centering, Nonlinearity, SourceBatch, SourceSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::io::{fmt_float, read_json, read_matrix, Outputs};

/// Splits on commas outside parentheses and brackets, so `bimod(3,-0.3)`
/// stays one item.
pub fn split_list(text: &str) -> Vec<String> {
    let (mut items, mut current, mut depth) = (Vec::new(), String::new(), 0i32);
    for ch in text.chars() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                items.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(ch);
    }
    items.push(current);
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_nonlinearities(text: &str, d: usize) -> CliResult<Vec<Nonlinearity>> {
    let nls = split_list(text)
        .iter()
        .map(|s| s.parse::<Nonlinearity>())
        .collect::<Result<Vec<_>, _>>()?;
    match nls.len() {
        1 => Ok(vec![nls[0]; d]),
        k if k == d => Ok(nls),
        k => Err(CliError::Input(format!(
            "{k} nonlinearities given for {d} channels"
        ))),
    }
}

fn parse_floats(text: &str, what: &str) -> CliResult<Vec<f64>> {
    split_list(text)
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Input(format!("{what}: cannot parse {s:?} as a number")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CenteringArg {
    Empirical,
    Exact,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmArg {
    GeneralizedSymmetric,
    Symmetric,
    OneUnit,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SeparateArgs {
    /// CSV file, one sample per row and one channel per column.
    pub data: PathBuf,
    /// Comma-separated nonlinearity per channel, or one for all
    /// (kurtosis, gauss, tanh, score[<source>], scaled_score[<source>]).
    #[arg(long, short = 'g', default_value = "tanh")]
    pub nonlinearities: String,
    #[arg(long, value_enum, default_value_t = CenteringArg::Empirical)]
    pub centering: CenteringArg,
    /// Known channel means, required with `--centering exact`.
    #[arg(long)]
    pub mean: Option<String>,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::GeneralizedSymmetric)]
    pub algorithm: AlgorithmArg,
    #[arg(long, default_value_t = gsfica::fastica::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = gsfica::fastica::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Start from a random orthogonal matrix drawn with this seed instead of the identity.
    #[arg(long)]
    pub seed: Option<u64>,
    /// The first CSV line is a header.
    #[arg(long)]
    pub header: bool,
    /// Also write the recovered sources to sources.csv.
    #[arg(long)]
    pub write_sources: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SeparationReport<'a> {
    dim: usize,
    n_samples: usize,
    nonlinearities: Vec<String>,
    algorithm: AlgorithmArg,
    centering: CenteringArg,
    mean_used: Vec<f64>,
    #[serde(with = "gsfica::rows")]
    w0: DMatrix<f64>,
    #[serde(flatten)]
    result: &'a SeparationResult,
    fixed_point_residual: f64,
    symmetry_defect: f64,
}

pub fn separate(args: &SeparateArgs) -> CliResult<()> {
    let y = read_matrix(&args.data, args.header)?;
    let d = y.nrows();
    let nls = parse_nonlinearities(&args.nonlinearities, d)?;
    let mode = match (args.centering, &args.mean) {
        (CenteringArg::Exact, Some(m)) => Centering::Exact(parse_floats(m, "--mean")?),
        (CenteringArg::Exact, None) => {
            return Err(CliError::Input("--centering exact requires --mean".into()))
        }
        (_, Some(_)) => {
            return Err(CliError::Input(
                "--mean is only used with --centering exact".into(),
            ))
        }
        (CenteringArg::Empirical, None) => Centering::Empirical,
        (CenteringArg::None, None) => Centering::None,
    };
    if args.algorithm == AlgorithmArg::Symmetric && nls.iter().any(|g| *g != nls[0]) {
        return Err(CliError::Input(
            "--algorithm symmetric takes a single nonlinearity".into(),
        ));
    }
    let data = standardize(&y, &mode)?;
    let w0 = args
        .seed
        .map_or_else(|| DMatrix::identity(d, d), |s| random_orthogonal(d, s));
    let cfg = IterationConfig {
        tol: args.tol,
        max_iter: args.max_iter,
        nonlinearities: nls.clone(),
        w0: Some(w0.clone()),
    };
    let result = match args.algorithm {
        AlgorithmArg::OneUnit => deflation(&data, &cfg)?,
        _ => generalized_symmetric(&data, &cfg)?,
    };
    if let Some(diag) = &result.diagnostic {
        eprintln!("warning: {diag}");
    }
    if !result.converged {
        eprintln!(
            "warning: not converged after {} iterations (last step {:e})",
            result.iterations, result.final_delta
        );
    }
    let report = SeparationReport {
        dim: d,
        n_samples: data.n_samples(),
        nonlinearities: nls.iter().map(Nonlinearity::name).collect(),
        algorithm: args.algorithm,
        centering: args.centering,
        mean_used: data.mean_used.iter().copied().collect(),
        w0,
        result: &result,
        fixed_point_residual: fixed_point_residual(&result.w, &data, &nls)?,
        symmetry_defect: symmetry_defect(&result.w, &data, &nls, &result.sign_vector)?,
    };
    let mut out = Outputs::create(&args.out)?;
    out.json("separation.json", &report)?;
    if args.write_sources {
        let s = &result.w * &data.x;
        let header: Vec<String> = (1..=d).map(|i| format!("s{i}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv(
            "sources.csv",
            &header,
            s.column_iter()
                .map(|c| c.iter().map(|&v| fmt_float(v)).collect()),
        )?;
    }
    let config = json!({
        "data": args.data,
        "header": args.header,
        "nonlinearities": report.nonlinearities,
        "centering": args.centering,
        "mean": args.mean,
        "algorithm": args.algorithm,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "seed": args.seed,
        "write_sources": args.write_sources,
    });
    out.finish("separate", config, args.seed.into_iter().collect(), None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub specs: Vec<SourceSpec>,
    pub nonlinearities: Vec<Nonlinearity>,
    /// Assignment `σ` (row `i` extracts source `sigma[i]`); identity when absent.
    #[serde(default)]
    pub sigma: Option<Vec<usize>>,
    /// Predict every assignment instead of a single one.
    #[serde(default)]
    pub all_assignments: bool,
    /// Sources for a pairwise Cramér–Rao bound table.
    #[serde(default)]
    pub crb_grid: Vec<SourceSpec>,
}

#[derive(Serialize)]
struct AssignmentReport {
    sigma: Vec<usize>,
    /// Signs of the local contrast terms, e.g. `+ - +`.
    sign_pattern: String,
    prediction: Prediction,
}

#[derive(Serialize)]
struct CrbEntry {
    source_i: String,
    source_j: String,
    kappa_i: Option<f64>,
    kappa_j: Option<f64>,
    bound: Option<f64>,
    note: Option<String>,
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(d - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, d - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

pub const MAX_ASSIGNMENT_DIM: usize = 7;

pub fn predict_cmd(config_path: &Path, out_dir: &Path) -> CliResult<()> {
    let cfg: PredictConfig = read_json(config_path)?;
    let d = cfg.specs.len();
    let assignments = if cfg.all_assignments {
        if cfg.sigma.is_some() {
            return Err(CliError::Input(
                "give either sigma or all_assignments, not both".into(),
            ));
        }
        if d > MAX_ASSIGNMENT_DIM {
            return Err(CliError::Input(format!(
                "all_assignments is limited to d <= {MAX_ASSIGNMENT_DIM}"
            )));
        }
        permutations(d)
    } else {
        vec![cfg.sigma.clone().unwrap_or_else(|| (0..d).collect())]
    };
    let reports = assignments
        .into_iter()
        .map(|sigma| {
            let prediction = predict(&cfg.specs, &cfg.nonlinearities, &sigma)?;
            let sign_pattern = prediction
                .signs
                .iter()
                .map(|&s| if s > 0.0 { "+" } else { "-" })
                .collect::<Vec<_>>()
                .join(" ");
            Ok(AssignmentReport {
                sigma,
                sign_pattern,
                prediction,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let kappas: Vec<Result<f64, String>> = cfg
        .crb_grid
        .iter()
        .map(|s| s.fisher_kappa().map_err(|e| e.to_string()))
        .collect();
    let mut crb_table = Vec::new();
    for (a, sa) in cfg.crb_grid.iter().enumerate() {
        for (b, sb) in cfg.crb_grid.iter().enumerate() {
            if a == b {
                continue;
            }
            let (ki, kj) = (
                kappas[a].as_ref().ok().copied(),
                kappas[b].as_ref().ok().copied(),
            );
            let (bound, note) = match (&kappas[a], &kappas[b]) {
                (Ok(ki), Ok(kj)) => match gsfica::asymptotics::crb_gain(*ki, *kj) {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                (Err(e), _) | (_, Err(e)) => (None, Some(e.clone())),
            };
            crb_table.push(CrbEntry {
                source_i: sa.to_string(),
                source_j: sb.to_string(),
                kappa_i: ki,
                kappa_j: kj,
                bound,
                note,
            });
        }
    }
    let mut out = Outputs::create(out_dir)?;
    out.json(
        "predict.json",
        &json!({ "assignments": reports, "crb_table": crb_table }),
    )?;
    for r in &reports {
        println!(
            "sigma {:?}: {}  off-sum {}",
            r.sigma,
            r.sign_pattern,
            fmt_float(r.prediction.off_sum)
        );
    }
    out.finish(
        "predict",
        serde_json::to_value(&cfg).expect("config serializes"),
        Vec::new(),
        None,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub experiment: ExperimentConfig,
    /// Sample sizes for an `N` sweep; `experiment.n` is ignored when present.
    #[serde(default)]
    pub sweep: Option<Vec<usize>>,
}

fn histogram_rows(agg: &Aggregate, i: usize, j: usize) -> Vec<Vec<String>> {
    agg.histogram_curve(i, j)
        .into_iter()
        .map(|(x, e, t)| {
            vec![
                fmt_float(x),
                fmt_float(e),
                t.map(fmt_float).unwrap_or_default(),
            ]
        })
        .collect()
}

fn write_histograms(out: &mut Outputs, agg: &Aggregate, prefix: &str) -> CliResult<()> {
    let d = agg.config.dim();
    for i in 0..d {
        for j in 0..d {
            out.csv(
                &format!("{prefix}hist_{i}_{j}.csv"),
                &["x", "empirical", "theoretical"],
                histogram_rows(agg, i, j),
            )?;
        }
    }
    Ok(())
}

pub fn simulate(config_path: &Path, out_dir: &Path, threads: Option<usize>) -> CliResult<()> {
    let cfg: SimulateConfig = read_json(config_path)?;
    let exp = &cfg.experiment;
    let mut out = Outputs::create(out_dir)?;
    let seeds = match &cfg.sweep {
        None => {
            let agg = run_experiment_with_threads(exp, threads)?;
            out.json("aggregate.json", &agg)?;
            write_histograms(&mut out, &agg, "")?;
            println!(
                "{} trials, {} failures, {} mismatches; N*off = {} +/- {} (theory {})",
                agg.trials,
                agg.failures,
                agg.mismatches,
                fmt_float(agg.n_off.mean),
                fmt_float(agg.n_off.stderr),
                agg.predicted_off_sum.map_or("n/a".into(), fmt_float)
            );
            vec![exp.base_seed]
        }
        Some(sizes) => {
            let sweep = run_sweep(exp, sizes, threads)?;
            out.json("sweep.json", &sweep)?;
            let rows = sweep.curve().into_iter().map(|(n, e, t)| {
                vec![
                    n.to_string(),
                    fmt_float(e),
                    t.map(fmt_float).unwrap_or_default(),
                ]
            });
            out.csv("sweep.csv", &["x", "empirical", "theoretical"], rows)?;
            for agg in &sweep.aggregates {
                write_histograms(&mut out, agg, &format!("n{}_", agg.config.n))?;
            }
            for (n, e, t) in sweep.curve() {
                println!(
                    "N = {n}: N*off = {} (theory {})",
                    fmt_float(e),
                    t.map_or("n/a".into(), fmt_float)
                );
            }
            std::iter::once(exp.base_seed)
                .chain(sweep.aggregates.iter().map(|a| a.config.base_seed))
                .collect()
        }
    };
    out.finish(
        "simulate",
        serde_json::to_value(&cfg).expect("config serializes"),
        seeds,
        threads,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Grid {
    pub fn points(&self) -> CliResult<Vec<f64>> {
        if self.steps == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(CliError::Input(format!("invalid grid {self:?}")));
        }
        if self.steps == 1 {
            return Ok(vec![self.start]);
        }
        let h = (self.stop - self.start) / (self.steps - 1) as f64;
        Ok((0..self.steps).map(|k| self.start + k as f64 * h).collect())
    }
}

fn default_grid() -> Grid {
    Grid {
        start: -std::f64::consts::PI,
        stop: std::f64::consts::PI,
        steps: 41,
    }
}

fn default_step() -> f64 {
    1e-3
}

fn default_centering() -> TrialCentering {
    TrialCentering::Empirical
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub specs: Vec<SourceSpec>,
    #[serde(default, with = "gsfica::rows::option")]
    pub mixing: Option<DMatrix<f64>>,
    pub nonlinearities: Vec<Nonlinearity>,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_centering")]
    pub centering: TrialCentering,
    #[serde(default = "default_grid")]
    pub phi: Grid,
    #[serde(default = "default_grid")]
    pub chi: Grid,
    #[serde(default = "default_step")]
    pub hessian_step: f64,
    /// Signs for `J₂`; derived from the theory at `W* = I` when absent.
    #[serde(default)]
    pub signs: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct CriticalPoint {
    signs: Vec<f64>,
    value: f64,
    hessian: [[f64; 2]; 2],
    eigenvalues: [f64; 2],
    classification: &'static str,
}

fn classify(ev: [f64; 2]) -> &'static str {
    match (ev[0] > 0.0, ev[1] > 0.0, ev[0] < 0.0, ev[1] < 0.0) {
        (true, true, _, _) => "minimum",
        (_, _, true, true) => "maximum",
        (_, _, true, false) if ev[1] > 0.0 => "saddle",
        _ => "degenerate",
    }
}

pub fn surface(config_path: &Path, out_dir: &Path) -> CliResult<()> {
    let cfg: SurfaceConfig = read_json(config_path)?;
    let d = cfg.specs.len();
    if d != 3 {
        return Err(gsfica::Error::UnsupportedDimension(format!(
            "the contrast surface is defined for d = 3, got d = {d}"
        ))
        .into());
    }
    if cfg.nonlinearities.len() != d {
        return Err(CliError::Input(format!(
            "{} nonlinearities for {d} sources",
            cfg.nonlinearities.len()
        )));
    }
    let h = cfg
        .mixing
        .clone()
        .unwrap_or_else(|| DMatrix::identity(d, d));
    if h.shape() != (d, d) {
        return Err(CliError::Input(format!(
            "mixing matrix is {}x{}, expected {d}x{d}",
            h.nrows(),
            h.ncols()
        )));
    }
    let j2_signs = match &cfg.signs {
        Some(s) if s.len() == d && s.iter().all(|v| *v == 1.0 || *v == -1.0) => s.clone(),
        Some(s) => {
            return Err(CliError::Input(format!(
                "signs must be {d} entries of +1 or -1, got {s:?}"
            )))
        }
        None => local_contrast_signs(&moment_functionals(
            &cfg.specs,
            &cfg.nonlinearities,
            &[0, 1, 2],
        )?)?,
    };
    let j1_signs = vec![1.0; d];
    let y = &h * SourceBatch::generate(&cfg.specs, cfg.n, cfg.seed)?.data;
    let mode = match cfg.centering {
        TrialCentering::Empirical => Centering::Empirical,
        TrialCentering::Exact => Centering::Exact(vec![0.0; d]),
        TrialCentering::None => Centering::None,
    };
    let data = standardize(&y, &mode)?;
    let (phis, chis) = (cfg.phi.points()?, cfg.chi.points()?);
    let j1 = contrast_surface(&phis, &chis, &data, &cfg.nonlinearities, &j1_signs)?;
    let j2 = contrast_surface(&phis, &chis, &data, &cfg.nonlinearities, &j2_signs)?;
    let point = |signs: Vec<f64>| -> CliResult<CriticalPoint> {
        let hessian = contrast_hessian(
            0.0,
            0.0,
            cfg.hessian_step,
            &data,
            &cfg.nonlinearities,
            &signs,
        )?;
        let eigenvalues = eigenvalues_2x2(hessian);
        Ok(CriticalPoint {
            value: gsfica::fastica::local_contrast(
                &DMatrix::identity(d, d),
                &data,
                &cfg.nonlinearities,
                &signs,
            )?,
            signs,
            hessian,
            eigenvalues,
            classification: classify(eigenvalues),
        })
    };
    let (origin_j1, origin_j2) = (point(j1_signs)?, point(j2_signs)?);
    let mut out = Outputs::create(out_dir)?;
    let mut rows = Vec::with_capacity(phis.len() * chis.len());
    for (r, phi) in phis.iter().enumerate() {
        for (c, chi) in chis.iter().enumerate() {
            rows.push(vec![
                fmt_float(*phi),
                fmt_float(*chi),
                fmt_float(j1[(r, c)]),
                fmt_float(j2[(r, c)]),
            ]);
        }
    }
    out.csv("surface.csv", &["phi", "chi", "j1", "j2"], rows)?;
    out.json("surface.json", &json!({ "j1": origin_j1, "j2": origin_j2 }))?;
    println!(
        "J1 at origin: {}; J2 at origin: {}",
        origin_j1.classification, origin_j2.classification
    );
    out.finish(
        "surface",
        serde_json::to_value(&cfg).expect("config serializes"),
        vec![cfg.seed],
        None,
    )
}

/// Worker count from `GSFICA_THREADS`, if set.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var("GSFICA_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(CliError::Input(format!(
                "GSFICA_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}
