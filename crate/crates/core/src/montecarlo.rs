use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    cov_exact_centering, cov_generalized, cov_oneunit_deflation, estimating_residual,
    estimating_residual_known_mean, predict, Prediction, Variant,
};
use crate::fastica::{
    deflation, fixed_point_residual, generalized_symmetric, orthogonality_error, symmetry_defect,
    IterationConfig, Population, SeparationResult, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::metrics::{align, gain_matrix, GainReport};
use crate::preprocess::{standardize, Centering, StandardizedData};
use crate::rng::derive_seed;
use crate::sources::{SourceBatch, SourceSpec};
use crate::{Error, Nonlinearity, Result};

pub const HISTOGRAM_BINS: usize = 50;
/// Half-width of the histogram range in predicted standard deviations.
pub const HISTOGRAM_SPAN: f64 = 4.0;
const MAX_REPORTED_DIAGNOSTICS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Deflationary one-unit FastICA.
    OneUnit,
    /// Symmetric FastICA with one shared nonlinearity.
    Symmetric,
    GeneralizedSymmetric,
}

/// Centering applied in each trial. `Exact` subtracts the true mean of the
/// mixtures, which is zero because every source is generated zero-mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialCentering {
    Empirical,
    Exact,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub specs: Vec<SourceSpec>,
    /// Mixing matrix `H`; identity when absent.
    #[serde(default, with = "crate::rows::option")]
    pub mixing: Option<DMatrix<f64>>,
    pub nonlinearities: Vec<Nonlinearity>,
    /// Orthogonal starting point; identity when absent.
    #[serde(default, with = "crate::rows::option")]
    pub w0: Option<DMatrix<f64>>,
    pub n: usize,
    pub trials: usize,
    pub centering: TrialCentering,
    pub base_seed: u64,
    pub algorithm: Algorithm,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl ExperimentConfig {
    pub fn new(
        specs: Vec<SourceSpec>,
        nonlinearities: Vec<Nonlinearity>,
        n: usize,
        trials: usize,
    ) -> Self {
        Self {
            specs,
            mixing: None,
            nonlinearities,
            w0: None,
            n,
            trials,
            centering: TrialCentering::Empirical,
            base_seed: 0,
            algorithm: Algorithm::GeneralizedSymmetric,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }

    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.mixing
            .clone()
            .unwrap_or_else(|| DMatrix::identity(d, d))
    }

    fn iteration(&self) -> IterationConfig {
        IterationConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            nonlinearities: self.nonlinearities.clone(),
            w0: self.w0.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("at least one source is required".into()));
        }
        for s in &self.specs {
            s.validate()?;
        }
        if self.nonlinearities.len() != d {
            return Err(Error::Dimension(format!(
                "{} nonlinearities for {d} sources",
                self.nonlinearities.len()
            )));
        }
        if self.algorithm == Algorithm::Symmetric
            && self
                .nonlinearities
                .iter()
                .any(|g| *g != self.nonlinearities[0])
        {
            return Err(Error::Config(
                "the symmetric algorithm uses a single nonlinearity for every row".into(),
            ));
        }
        if self.n <= d {
            return Err(Error::InsufficientSamples { n: self.n, d });
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let h = self.mixing_matrix();
        if h.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "mixing matrix is {}x{}, expected {d}x{d}",
                h.nrows(),
                h.ncols()
            )));
        }
        let sv = h.singular_values();
        if !(sv.min() > 1e-12 * sv.max()) {
            return Err(Error::Config("mixing matrix is singular".into()));
        }
        self.iteration().initial(d)?;
        Ok(())
    }

    fn centering_mode(&self) -> Centering {
        match self.centering {
            TrialCentering::Empirical => Centering::Empirical,
            TrialCentering::Exact => Centering::Exact(vec![0.0; self.dim()]),
            TrialCentering::None => Centering::None,
        }
    }

    /// The variance formula the experiment should reproduce.
    pub fn variant(&self) -> Variant {
        match (self.algorithm, self.centering) {
            (Algorithm::OneUnit, _) => Variant::OneUnit,
            (_, TrialCentering::Empirical) => Variant::GeneralizedEmpiricalCentering,
            _ => Variant::ExactCentering,
        }
    }
}

/// Fixed-point and estimating-equation checks for a converged trial. The
/// symmetric-only quantities are absent for deflation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialProperties {
    pub orthogonality: f64,
    pub fixed_point_residual: Option<f64>,
    pub symmetry_defect: Option<f64>,
    /// `‖Ê[ψ]‖₂` of the stacked estimating function.
    pub estimating_residual: Option<f64>,
    pub estimating_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub final_delta: f64,
    pub error: Option<String>,
    pub diagnostic: Option<String>,
    pub gain: Option<GainReport>,
    pub properties: Option<TrialProperties>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.converged
    }
}

pub fn trial_seed(base_seed: u64, t: usize) -> u64 {
    derive_seed(base_seed, t as u64)
}

fn separate(cfg: &ExperimentConfig, data: &StandardizedData) -> Result<SeparationResult> {
    match cfg.algorithm {
        Algorithm::OneUnit => deflation(data, &cfg.iteration()),
        Algorithm::Symmetric | Algorithm::GeneralizedSymmetric => {
            generalized_symmetric(data, &cfg.iteration())
        }
    }
}

fn properties(
    cfg: &ExperimentConfig,
    data: &StandardizedData,
    y: &DMatrix<f64>,
    r: &SeparationResult,
) -> Result<TrialProperties> {
    let nls = &cfg.nonlinearities;
    let orthogonality = orthogonality_error(&r.w);
    if cfg.algorithm == Algorithm::OneUnit {
        return Ok(TrialProperties {
            orthogonality,
            fixed_point_residual: None,
            symmetry_defect: None,
            estimating_residual: None,
            estimating_len: 0,
        });
    }
    let signs = &r.sign_vector;
    let residual = match cfg.centering {
        TrialCentering::Empirical => estimating_residual(&r.b, &data.mean_used, y, nls, signs)?,
        _ => estimating_residual_known_mean(&r.b, &data.mean_used, y, nls, signs)?,
    };
    Ok(TrialProperties {
        orthogonality,
        fixed_point_residual: Some(fixed_point_residual(&r.w, data, nls)?),
        symmetry_defect: Some(symmetry_defect(&r.w, data, nls, signs)?),
        estimating_residual: Some(residual.norm()),
        estimating_len: residual.len(),
    })
}

/// One seeded trial: draw sources, mix, standardize, separate and score.
/// Engine failures are recorded in the returned record.
pub fn run_trial(cfg: &ExperimentConfig, t: usize) -> Result<TrialRecord> {
    let seed = trial_seed(cfg.base_seed, t);
    let h = cfg.mixing_matrix();
    let s = SourceBatch::generate(&cfg.specs, cfg.n, seed)?.data;
    let y = &h * s;
    let mut record = TrialRecord {
        trial: t,
        seed,
        converged: false,
        iterations: 0,
        final_delta: f64::INFINITY,
        error: None,
        diagnostic: None,
        gain: None,
        properties: None,
    };
    let outcome = standardize(&y, &cfg.centering_mode()).and_then(|data| {
        let r = separate(cfg, &data)?;
        let props = if r.converged {
            Some(properties(cfg, &data, &y, &r)?)
        } else {
            None
        };
        Ok((r, props))
    });
    match outcome {
        Ok((r, props)) => {
            record.converged = r.converged;
            record.iterations = r.iterations;
            record.final_delta = r.final_delta;
            record.diagnostic = r.diagnostic;
            record.gain = Some(GainReport::new(&r.b, &h));
            record.properties = props;
        }
        Err(e) if e.is_input_error() => return Err(e),
        Err(e) => record.error = Some(e.to_string()),
    }
    Ok(record)
}

/// The assignment the population iteration converges to from `W0`, or the
/// alignment of `W0` itself when the population run is unavailable.
pub fn predicted_assignment(cfg: &ExperimentConfig) -> (Vec<usize>, String) {
    let h = cfg.mixing_matrix();
    let population = Population::new(&cfg.specs, &h).and_then(|p| {
        let mut it = cfg.iteration();
        it.tol = it.tol.min(1e-10);
        let r = match cfg.algorithm {
            Algorithm::OneUnit => deflation(&p, &it)?,
            _ => generalized_symmetric(&p, &it)?,
        };
        if !r.converged || r.diagnostic.is_some() {
            return Err(Error::DegenerateUpdate(
                r.diagnostic
                    .unwrap_or_else(|| "population iteration did not converge".into()),
            ));
        }
        Ok(gain_matrix(&r.b, &h))
    });
    match population {
        Ok(g) => (align(&g).sigma, "population fixed point".into()),
        Err(e) => {
            let d = cfg.dim();
            let w0 = cfg.w0.clone().unwrap_or_else(|| DMatrix::identity(d, d));
            let whitening = crate::preprocess::inv_sqrt_sym(&(&h * h.transpose()))
                .unwrap_or_else(|_| DMatrix::identity(d, d));
            (
                align(&(w0 * whitening * &h)).sigma,
                format!("initial alignment ({e})"),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    fn new(lo: f64, hi: f64, values: impl Iterator<Item = f64>) -> Self {
        let mut h = Self {
            lo,
            hi,
            counts: vec![0; HISTOGRAM_BINS],
            underflow: 0,
            overflow: 0,
        };
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        for v in values {
            if v < lo {
                h.underflow += 1;
            } else if v >= hi {
                h.overflow += 1;
            } else {
                let k = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                h.counts[k] += 1;
            }
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.bin_width();
        (0..self.counts.len()).map(move |k| self.lo + (k as f64 + 0.5) * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

/// Largest property violation over converged trials.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PropertyMaxima {
    pub orthogonality: f64,
    pub fixed_point_residual: Option<f64>,
    pub symmetry_defect: Option<f64>,
    pub estimating_residual: Option<f64>,
    pub estimating_len: usize,
}

/// Statistics of `√N(signs_i·Ĝ_{i,σ(j)} - δ_ij)` over the trials that converged
/// to the predicted assignment, with the matching theory alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config: ExperimentConfig,
    pub predicted_sigma: Vec<usize>,
    pub sigma_source: String,
    pub variant: Variant,
    pub prediction: Option<Prediction>,
    pub prediction_error: Option<String>,
    pub trials: usize,
    /// Trials that errored or hit `max_iter`.
    pub failures: usize,
    /// Converged trials whose aligned assignment differs from the prediction.
    pub mismatches: usize,
    /// Trials entering the statistics: converged with the predicted assignment.
    pub used: usize,
    pub diagnostic_trials: usize,
    pub diagnostics: Vec<String>,
    pub iterations: Option<IterationStats>,
    #[serde(with = "crate::rows")]
    pub mean: DMatrix<f64>,
    #[serde(with = "crate::rows")]
    pub variance: DMatrix<f64>,
    #[serde(with = "crate::rows")]
    pub skewness: DMatrix<f64>,
    #[serde(with = "crate::rows")]
    pub excess_kurtosis: DMatrix<f64>,
    #[serde(with = "crate::rows::option")]
    pub predicted_variance: Option<DMatrix<f64>>,
    /// Per row `i`, the covariance of the deviation row over columns `j`.
    #[serde(with = "crate::rows::vec")]
    pub row_covariances: Vec<DMatrix<f64>>,
    #[serde(with = "crate::rows::option_vec")]
    pub predicted_row_covariances: Option<Vec<DMatrix<f64>>>,
    /// `N·‖off(Ĝ)‖²_F` across used trials.
    pub n_off: MeanStderr,
    pub predicted_off_sum: Option<f64>,
    pub histograms: Vec<Vec<Histogram>>,
    pub properties: PropertyMaxima,
}

impl Aggregate {
    /// Rows `(x, empirical density, theoretical normal density)` for entry `(i, j)`.
    pub fn histogram_curve(&self, i: usize, j: usize) -> Vec<(f64, f64, Option<f64>)> {
        let h = &self.histograms[i][j];
        let scale = (self.used.max(1) as f64) * h.bin_width();
        let var = self.predicted_variance.as_ref().map(|v| v[(i, j)]);
        h.centers()
            .zip(&h.counts)
            .map(|(x, &c)| {
                let theory = var
                    .filter(|v| *v > 0.0)
                    .map(|v| (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt());
                (x, c as f64 / scale, theory)
            })
            .collect()
    }
}

fn predicted_row_covariances(p: &Prediction, variant: Variant) -> Result<Vec<DMatrix<f64>>> {
    let f = &p.functionals;
    let d = f.dim();
    let b = DMatrix::identity(d, d);
    (0..d)
        .map(|i| match variant {
            Variant::GeneralizedEmpiricalCentering => cov_generalized(f, &b, i),
            Variant::OneUnit => cov_oneunit_deflation(f, &b, i),
            _ => cov_exact_centering(f, &b, i, &f.third_moment),
        })
        .collect()
}

fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let c = v - mean;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let variance = if values.len() > 1 {
        m2 * n / (n - 1.0)
    } else {
        0.0
    };
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    (mean, variance, skew, kurt)
}

fn max_opt(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Combine trial records in trial order. Deterministic for a given record list.
pub fn aggregate(cfg: &ExperimentConfig, records: &[TrialRecord]) -> Result<Aggregate> {
    let d = cfg.dim();
    let n = cfg.n as f64;
    let (predicted_sigma, sigma_source) = predicted_assignment(cfg);
    let variant = cfg.variant();
    let (prediction, prediction_error) =
        match predict(&cfg.specs, &cfg.nonlinearities, &predicted_sigma) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let predicted_row_covariances = prediction
        .as_ref()
        .and_then(|p| predicted_row_covariances(p, variant).ok());
    let predicted_variance = predicted_row_covariances
        .as_ref()
        .map(|rows| DMatrix::from_fn(d, d, |i, j| rows[i][(j, j)]));
    let predicted_off_sum = predicted_variance.as_ref().map(|v| {
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|ij| v[ij])
            .sum()
    });

    let failures = records.iter().filter(|r| r.failed()).count();
    // A degenerate pairing is invisible per trial (sample α̂ is O(N^(-1/2)),
    // not zero) so the population-level message leads the list.
    let mut diagnostics: Vec<String> = prediction_error.iter().cloned().collect();
    let mut diagnostic_trials = 0;
    for r in records {
        if let Some(msg) = r.diagnostic.as_ref().or(r.error.as_ref()) {
            diagnostic_trials += 1;
            if diagnostics.len() < MAX_REPORTED_DIAGNOSTICS && !diagnostics.contains(msg) {
                diagnostics.push(msg.clone());
            }
        }
    }
    if 2 * failures > records.len() {
        let detail = if diagnostics.is_empty() {
            String::new()
        } else {
            format!(": {}", diagnostics.join(" | "))
        };
        return Err(Error::ExperimentInvalid {
            failures,
            trials: records.len(),
            detail,
        });
    }

    let converged: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed()).collect();
    let used: Vec<&GainReport> = converged
        .iter()
        .filter_map(|r| r.gain.as_ref())
        .filter(|g| g.sigma == predicted_sigma)
        .collect();
    let mismatches = converged.len() - used.len();

    let root_n = n.sqrt();
    let deviations: Vec<DMatrix<f64>> = used
        .iter()
        .map(|g| (g.oriented() - DMatrix::identity(d, d)) * root_n)
        .collect();
    let mut mean = DMatrix::zeros(d, d);
    let mut variance = DMatrix::zeros(d, d);
    let mut skewness = DMatrix::zeros(d, d);
    let mut excess_kurtosis = DMatrix::zeros(d, d);
    let mut histograms = Vec::with_capacity(d);
    for i in 0..d {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let values: Vec<f64> = deviations.iter().map(|m| m[(i, j)]).collect();
            let (m, v, s, k) = if values.is_empty() {
                (0.0, 0.0, 0.0, 0.0)
            } else {
                moments(&values)
            };
            mean[(i, j)] = m;
            variance[(i, j)] = v;
            skewness[(i, j)] = s;
            excess_kurtosis[(i, j)] = k;
            let spread = predicted_variance
                .as_ref()
                .map(|pv| pv[(i, j)])
                .filter(|pv| *pv > 0.0)
                .unwrap_or(v)
                .sqrt();
            let half = if spread > 0.0 {
                HISTOGRAM_SPAN * spread
            } else {
                1.0
            };
            row.push(Histogram::new(-half, half, values.into_iter()));
        }
        histograms.push(row);
    }
    let row_covariances = (0..d)
        .map(|i| {
            let count = deviations.len();
            let mut c = DMatrix::zeros(d, d);
            if count > 1 {
                let mu = mean.row(i).transpose();
                for m in &deviations {
                    let x: DVector<f64> = m.row(i).transpose() - &mu;
                    c += &x * x.transpose();
                }
                c /= (count - 1) as f64;
            }
            c
        })
        .collect();

    let n_off_values: Vec<f64> = used.iter().map(|g| n * g.off_index).collect();
    let n_off = if n_off_values.is_empty() {
        MeanStderr {
            mean: 0.0,
            stderr: 0.0,
        }
    } else {
        let (m, v, _, _) = moments(&n_off_values);
        MeanStderr {
            mean: m,
            stderr: (v / n_off_values.len() as f64).sqrt(),
        }
    };

    let iterations = (!converged.is_empty()).then(|| IterationStats {
        mean: converged.iter().map(|r| r.iterations as f64).sum::<f64>() / converged.len() as f64,
        min: converged.iter().map(|r| r.iterations).min().unwrap_or(0),
        max: converged.iter().map(|r| r.iterations).max().unwrap_or(0),
    });

    let mut properties = PropertyMaxima::default();
    for p in converged.iter().filter_map(|r| r.properties.as_ref()) {
        properties.orthogonality = properties.orthogonality.max(p.orthogonality);
        properties.fixed_point_residual =
            max_opt(properties.fixed_point_residual, p.fixed_point_residual);
        properties.symmetry_defect = max_opt(properties.symmetry_defect, p.symmetry_defect);
        properties.estimating_residual =
            max_opt(properties.estimating_residual, p.estimating_residual);
        properties.estimating_len = properties.estimating_len.max(p.estimating_len);
    }

    Ok(Aggregate {
        config: cfg.clone(),
        predicted_sigma,
        sigma_source,
        variant,
        prediction,
        prediction_error,
        trials: records.len(),
        failures,
        mismatches,
        used: used.len(),
        diagnostic_trials,
        diagnostics,
        iterations,
        mean,
        variance,
        skewness,
        excess_kurtosis,
        predicted_variance,
        row_covariances,
        predicted_row_covariances,
        n_off,
        predicted_off_sum,
        histograms,
        properties,
    })
}

/// Run every trial on the current rayon pool and aggregate in trial order.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Aggregate> {
    aggregate(cfg, &run_trials(cfg)?)
}

/// `run_experiment` on a dedicated pool of `threads` workers (all cores when
/// `None`). The result does not depend on the thread count.
pub fn run_experiment_with_threads(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Aggregate> {
    match threads {
        None => run_experiment(cfg),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build a pool of {k} threads: {e}")))?
            .install(|| run_experiment(cfg)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub sample_sizes: Vec<usize>,
    pub aggregates: Vec<Aggregate>,
}

impl Sweep {
    /// Rows `(N, N·mean off, Σ_{i≠j} V)`.
    pub fn curve(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.sample_sizes
            .iter()
            .zip(&self.aggregates)
            .map(|(&n, a)| (n, a.n_off.mean, a.predicted_off_sum))
            .collect()
    }
}

/// One experiment per sample size. Each point draws from its own seed
/// stream derived from `cfg.base_seed` and `N`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    sample_sizes: &[usize],
    threads: Option<usize>,
) -> Result<Sweep> {
    if sample_sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one sample size".into()));
    }
    let aggregates = sample_sizes
        .iter()
        .map(|&n| {
            let point = ExperimentConfig {
                n,
                base_seed: derive_seed(cfg.base_seed, n as u64),
                ..cfg.clone()
            };
            run_experiment_with_threads(&point, threads)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        sample_sizes: sample_sizes.to_vec(),
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            vec![SourceSpec::Uniform, SourceSpec::Laplace],
            vec![Nonlinearity::kurtosis(); 2],
            5_000,
            40,
        );
        cfg.base_seed = 11;
        cfg
    }

    #[test]
    fn validation() {
        let mut cfg = example_one();
        assert!(cfg.validate().is_ok());
        cfg.n = 2;
        assert!(matches!(
            cfg.validate(),
            Err(Error::InsufficientSamples { .. })
        ));
        let mut cfg = example_one();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = example_one();
        cfg.mixing = Some(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert!(cfg.validate().is_err());
        let mut cfg = example_one();
        cfg.nonlinearities = vec![Nonlinearity::kurtosis(), Nonlinearity::tanh()];
        cfg.algorithm = Algorithm::Symmetric;
        assert!(cfg.validate().is_err());
        cfg.algorithm = Algorithm::GeneralizedSymmetric;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn trials_are_reproducible() {
        let cfg = example_one();
        let a = run_trial(&cfg, 3).unwrap();
        let b = run_trial(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.seed, run_trial(&cfg, 4).unwrap().seed);
        assert!(a.converged);
        let p = a.properties.unwrap();
        assert!(p.orthogonality < 1e-10);
        assert_eq!(p.estimating_len, 6);
    }

    #[test]
    fn aggregate_is_consistent() {
        let cfg = example_one();
        let agg = run_experiment(&cfg).unwrap();
        assert_eq!(agg.predicted_sigma, vec![0, 1]);
        assert_eq!(agg.sigma_source, "population fixed point");
        assert_eq!(agg.failures, 0);
        assert_eq!(agg.used + agg.mismatches + agg.failures, agg.trials);
        for row in &agg.histograms {
            for h in row {
                assert_eq!(h.total(), agg.used as u64);
                assert_eq!(h.counts.len(), HISTOGRAM_BINS);
            }
        }
        assert!(agg.variance.iter().all(|v| *v >= 0.0));
        assert!(agg.predicted_off_sum.unwrap() > 0.0);
        let curve = agg.histogram_curve(0, 1);
        assert_eq!(curve.len(), HISTOGRAM_BINS);
        let mass: f64 =
            curve.iter().map(|(_, e, _)| e).sum::<f64>() * agg.histograms[0][1].bin_width();
        assert!(mass <= 1.0 + 1e-12 && mass > 0.9);
        let text = serde_json::to_string(&agg).unwrap();
        let back: Aggregate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, agg);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let mut cfg = example_one();
        cfg.trials = 12;
        let one = run_experiment_with_threads(&cfg, Some(1)).unwrap();
        let four = run_experiment_with_threads(&cfg, Some(4)).unwrap();
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&four).unwrap()
        );
    }

    #[test]
    fn gaussian_with_kurtosis_flagged() {
        let mut cfg = ExperimentConfig::new(
            vec![SourceSpec::Gaussian, SourceSpec::Gaussian],
            vec![Nonlinearity::kurtosis(); 2],
            2_000,
            20,
        );
        cfg.max_iter = 200;
        let agg = run_experiment(&cfg).unwrap();
        assert!(agg.prediction.is_none() && agg.predicted_variance.is_none());
        assert!(agg.diagnostics[0].contains("degenerate pairing"));
        assert!(agg.sigma_source.starts_with("initial alignment"));
        assert!(agg.failures > 0);
    }

    #[test]
    fn sweep_curve() {
        let mut cfg = example_one();
        cfg.trials = 8;
        let sweep = run_sweep(&cfg, &[500, 1000], None).unwrap();
        let curve = sweep.curve();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].0, 500);
        assert_eq!(curve[0].2, curve[1].2);
        assert_ne!(
            sweep.aggregates[0].config.base_seed,
            sweep.aggregates[1].config.base_seed
        );
    }

    #[test]
    fn config_json_round_trip() {
        let mut cfg = example_one();
        cfg.w0 = Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        cfg.centering = TrialCentering::Exact;
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"w0\":[[0.0,1.0],[1.0,0.0]]"));
        assert_eq!(
            serde_json::from_str::<ExperimentConfig>(&text).unwrap(),
            cfg
        );
        let minimal = r#"{"specs":[{"kind":"uniform"},{"kind":"laplace"}],"nonlinearities":["kurtosis","tanh"],
            "n":100,"trials":2,"centering":"empirical","base_seed":1,"algorithm":"generalized_symmetric"}"#;
        let cfg: ExperimentConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(cfg.tol, DEFAULT_TOL);
        assert!(cfg.mixing.is_none());
    }
}
