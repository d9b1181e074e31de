//! Closed-form asymptotic statistics of the separating matrix estimate.
//!
//! Row `i` of the demixing matrix carries nonlinearity `g_i` and converges to
//! source `σ(i)`. Everything here is expressed through the per-row functionals
//! of `g_i` against the zero-mean, unit-variance source `z = s_σ(i)`:
//!
//! ```text
//! α = E[g'(z) - g(z)z]   β = E[g(z)²]   γ = E[g(z)z]   η = E[g(z)]   τ = (E[z⁴] - 1)/4
//! ```

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::rng::derive_seed;
use crate::sources::SourceSpec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `|α|` at or below this is a degenerate pairing.
pub const ALPHA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFunctionals {
    /// `sigma[i]` is the source paired with row `i`.
    pub sigma: Vec<usize>,
    pub nonlinearity_names: Vec<String>,
    /// Name of the source paired with each row.
    pub source_names: Vec<String>,
    pub expected_dg: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub tau: Vec<f64>,
    /// Fisher information of the paired source; `None` where it is infinite.
    pub kappa: Vec<Option<f64>>,
    /// `E[z³]` of the paired source.
    pub third_moment: Vec<f64>,
    /// `λ_ij = sign(α_i)E[g_i'] - sign(α_j)γ_j`, so that `λ_ij + λ_ji = |α_i| + |α_j|`.
    #[serde(with = "crate::rows")]
    pub lambda: DMatrix<f64>,
}

fn check_sigma(sigma: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if sigma.len() != d {
        return Err(Error::Dimension(format!(
            "assignment has {} entries for {d} sources",
            sigma.len()
        )));
    }
    for &s in sigma {
        if s >= d || seen[s] {
            return Err(Error::Config(format!(
                "assignment {sigma:?} is not a permutation of 0..{d}"
            )));
        }
        seen[s] = true;
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl MomentFunctionals {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn degenerate(&self, i: usize) -> Error {
        Error::DegeneratePairing {
            row: i,
            nonlinearity: self.nonlinearity_names[i].clone(),
            source_name: self.source_names[i].clone(),
            alpha: self.alpha[i],
        }
    }

    /// `sign(α_i)η_i`.
    fn eta_signed(&self, i: usize) -> f64 {
        sign(self.alpha[i]) * self.eta[i]
    }

    /// `|α_i| + |α_j|`, or a degenerate-pairing error naming the weaker row.
    fn pair_denominator(&self, i: usize, j: usize) -> Result<f64> {
        let den = self.alpha[i].abs() + self.alpha[j].abs();
        if den <= ALPHA_FLOOR {
            let worst = if self.alpha[i].abs() <= self.alpha[j].abs() {
                i
            } else {
                j
            };
            return Err(self.degenerate(worst));
        }
        Ok(den)
    }
}

/// Quadrature evaluation of all functionals for rows `i` paired with
/// sources `sigma[i]`.
pub fn moment_functionals(
    specs: &[SourceSpec],
    nls: &[Nonlinearity],
    sigma: &[usize],
) -> Result<MomentFunctionals> {
    let d = specs.len();
    if nls.len() != d {
        return Err(Error::Dimension(format!(
            "{} nonlinearities for {d} sources",
            nls.len()
        )));
    }
    check_sigma(sigma, d)?;
    let mut f = MomentFunctionals {
        sigma: sigma.to_vec(),
        nonlinearity_names: Vec::with_capacity(d),
        source_names: Vec::with_capacity(d),
        expected_dg: Vec::with_capacity(d),
        alpha: Vec::with_capacity(d),
        beta: Vec::with_capacity(d),
        gamma: Vec::with_capacity(d),
        eta: Vec::with_capacity(d),
        tau: Vec::with_capacity(d),
        kappa: Vec::with_capacity(d),
        third_moment: Vec::with_capacity(d),
        lambda: DMatrix::zeros(d, d),
    };
    for (nl, &k) in nls.iter().zip(sigma) {
        let spec = &specs[k];
        spec.validate()?;
        let kinks = nl.kinks();
        let mut edg = spec.expect_with_breaks(|z| nl.dg(z), &kinks)?;
        for (x0, jump) in nl.jumps() {
            edg += jump * spec.pdf(x0);
        }
        let gamma = spec.expect_with_breaks(|z| nl.g(z) * z, &kinks)?;
        let beta = spec.expect_with_breaks(|z| nl.g(z).powi(2), &kinks)?;
        let eta = spec.expect_with_breaks(|z| nl.g(z), &kinks)?;
        f.nonlinearity_names.push(nl.name());
        f.source_names.push(spec.to_string());
        f.expected_dg.push(edg);
        f.alpha.push(edg - gamma);
        f.beta.push(beta);
        f.gamma.push(gamma);
        f.eta.push(eta);
        f.tau.push((spec.moment(4)? - 1.0) / 4.0);
        f.kappa.push(spec.fisher_kappa().ok());
        f.third_moment.push(spec.moment(3)?);
    }
    for i in 0..d {
        for j in 0..d {
            f.lambda[(i, j)] = sign(f.alpha[i]) * f.expected_dg[i] - sign(f.alpha[j]) * f.gamma[j];
        }
    }
    Ok(f)
}

/// Sample means and standard errors of `(α, β, γ, η, τ)` per row, from
/// `n` draws of each paired source. Independent of the quadrature path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunctionals {
    pub alpha: Vec<(f64, f64)>,
    pub beta: Vec<(f64, f64)>,
    pub gamma: Vec<(f64, f64)>,
    pub eta: Vec<(f64, f64)>,
    pub tau: Vec<(f64, f64)>,
}

fn mean_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    // Welford.
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

pub fn sampled_functionals(
    specs: &[SourceSpec],
    nls: &[Nonlinearity],
    sigma: &[usize],
    n: usize,
    seed: u64,
) -> Result<SampledFunctionals> {
    let d = specs.len();
    if nls.len() != d {
        return Err(Error::Dimension(format!(
            "{} nonlinearities for {d} sources",
            nls.len()
        )));
    }
    check_sigma(sigma, d)?;
    if n < 2 {
        return Err(Error::Config("at least two samples are needed".into()));
    }
    let mut out = SampledFunctionals {
        alpha: Vec::new(),
        beta: Vec::new(),
        gamma: Vec::new(),
        eta: Vec::new(),
        tau: Vec::new(),
    };
    for (i, (nl, &k)) in nls.iter().zip(sigma).enumerate() {
        let z = specs[k].sample(n, derive_seed(seed, i as u64))?;
        out.alpha
            .push(mean_stderr(z.iter().map(|&v| nl.dg(v) - nl.g(v) * v)));
        out.beta
            .push(mean_stderr(z.iter().map(|&v| nl.g(v).powi(2))));
        out.gamma.push(mean_stderr(z.iter().map(|&v| nl.g(v) * v)));
        out.eta.push(mean_stderr(z.iter().map(|&v| nl.g(v))));
        out.tau
            .push(mean_stderr(z.iter().map(|&v| (v.powi(4) - 1.0) / 4.0)));
    }
    Ok(out)
}

/// `sign(α_i)` per row.
pub fn local_contrast_signs(f: &MomentFunctionals) -> Result<Vec<f64>> {
    (0..f.dim())
        .map(|i| {
            if f.alpha[i].abs() <= ALPHA_FLOOR {
                Err(f.degenerate(i))
            } else {
                Ok(sign(f.alpha[i]))
            }
        })
        .collect()
}

/// Asymptotic variance flavor of the gain-matrix entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Generalized symmetric FastICA on data centered with the sample mean.
    GeneralizedEmpiricalCentering,
    /// Generalized symmetric FastICA on data centered with the true mean.
    ExactCentering,
    /// The earlier symmetric-FastICA formula, exact only for symmetric sources.
    SymmetricLegacy,
    /// One-unit FastICA.
    OneUnit,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::GeneralizedEmpiricalCentering,
        Variant::ExactCentering,
        Variant::SymmetricLegacy,
        Variant::OneUnit,
    ];
}

/// Variance of `√N(Ĝ_{i,σ(j)} - G_{i,σ(j)})`. The diagonal (`i == j`) is `τ_i`
/// for every variant.
pub fn gain_variance(f: &MomentFunctionals, variant: Variant, i: usize, j: usize) -> Result<f64> {
    let d = f.dim();
    if i >= d || j >= d {
        return Err(Error::Dimension(format!(
            "index ({i}, {j}) out of range for d = {d}"
        )));
    }
    if i == j {
        return Ok(f.tau[i]);
    }
    let spread = |k: usize| f.beta[k] - f.gamma[k].powi(2);
    match variant {
        Variant::GeneralizedEmpiricalCentering => {
            let den = f.pair_denominator(i, j)?;
            Ok(
                (spread(i) + spread(j) + f.alpha[j].powi(2) - f.eta[i].powi(2) - f.eta[j].powi(2))
                    / den.powi(2),
            )
        }
        Variant::ExactCentering | Variant::SymmetricLegacy => {
            let den = f.pair_denominator(i, j)?;
            Ok((spread(i) + spread(j) + f.alpha[j].powi(2)) / den.powi(2))
        }
        Variant::OneUnit => {
            if f.alpha[i].abs() <= ALPHA_FLOOR {
                return Err(f.degenerate(i));
            }
            Ok(spread(i) / f.alpha[i].powi(2))
        }
    }
}

/// All `V_{i,σ(j)}` with rows `i` and columns `j` in row-index coordinates
/// (column `j` refers to source `σ(j)`).
pub fn gain_variance_matrix(f: &MomentFunctionals, variant: Variant) -> Result<DMatrix<f64>> {
    let d = f.dim();
    let mut v = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            v[(i, j)] = gain_variance(f, variant, i, j)?;
        }
    }
    Ok(v)
}

fn check_b(f: &MomentFunctionals, b: &DMatrix<f64>, i: usize) -> Result<()> {
    let d = f.dim();
    if b.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "B is {}x{}, expected {d}x{d}",
            b.nrows(),
            b.ncols()
        )));
    }
    if i >= d {
        return Err(Error::Dimension(format!(
            "row {i} out of range for d = {d}"
        )));
    }
    Ok(())
}

fn outer(u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    u * v.transpose()
}

/// Asymptotic covariance of `√N(b̂_i - b_i)` under empirical centering;
/// `b` holds the true demixing rows.
pub fn cov_generalized(f: &MomentFunctionals, b: &DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
    check_b(f, b, i)?;
    let d = f.dim();
    let bi = b.row(i).transpose();
    let mut r = outer(&bi, &bi) * f.tau[i];
    for j in (0..d).filter(|&j| j != i) {
        let bj = b.row(j).transpose();
        r += outer(&bj, &bj) * gain_variance(f, Variant::GeneralizedEmpiricalCentering, i, j)?;
    }
    Ok(r)
}

/// Asymptotic covariance of `√N(b̃_i - b_i)` when the true mean is used for
/// centering. `third_moment[k]` is `E[z³]` of the source paired with row `k`.
///
/// The rows of `b` must be oriented so that `b_k·h_σ(k) = +1`; the
/// cross terms depend on that orientation.
pub fn cov_exact_centering(
    f: &MomentFunctionals,
    b: &DMatrix<f64>,
    i: usize,
    third_moment: &[f64],
) -> Result<DMatrix<f64>> {
    check_b(f, b, i)?;
    let d = f.dim();
    if third_moment.len() != d {
        return Err(Error::Dimension(format!(
            "{} third moments for d = {d}",
            third_moment.len()
        )));
    }
    let spread = |k: usize| f.beta[k] - f.gamma[k].powi(2);
    let bi = b.row(i).transpose();
    let mut r = outer(&bi, &bi) * f.tau[i];
    let mut v = DVector::zeros(d);
    for j in (0..d).filter(|&j| j != i) {
        let den = f.pair_denominator(i, j)?;
        let bj = b.row(j).transpose();
        let coef = (spread(i) + spread(j) + f.alpha[j].powi(2) - f.eta[j].powi(2)) / den.powi(2);
        r += outer(&bj, &bj) * coef;
        v += &bj * (f.eta_signed(j) / den);
        let cross = third_moment[i] * f.eta_signed(j) / (2.0 * den);
        r -= (outer(&bj, &bi) + outer(&bi, &bj)) * cross;
    }
    r += outer(&v, &v);
    Ok(r)
}

/// Asymptotic covariance of the `i`-th vector extracted by deflationary
/// one-unit FastICA, rows extracted in index order.
pub fn cov_oneunit_deflation(
    f: &MomentFunctionals,
    b: &DMatrix<f64>,
    i: usize,
) -> Result<DMatrix<f64>> {
    check_b(f, b, i)?;
    let d = f.dim();
    for j in 0..=i {
        if f.alpha[j].abs() <= ALPHA_FLOOR {
            return Err(f.degenerate(j));
        }
    }
    let spread = |k: usize| f.beta[k] - f.gamma[k].powi(2) - f.eta[k].powi(2);
    let bi = b.row(i).transpose();
    let mut r = outer(&bi, &bi) * f.tau[i];
    for j in 0..i {
        let bj = b.row(j).transpose();
        r += outer(&bj, &bj) * ((spread(j) + f.alpha[j].powi(2)) / f.alpha[j].powi(2));
    }
    let later = spread(i) / f.alpha[i].powi(2);
    for j in (i + 1)..d {
        let bj = b.row(j).transpose();
        r += outer(&bj, &bj) * later;
    }
    Ok(r)
}

/// `(β_i - γ_i²)/α_i²`: the one-unit covariance trace up to a factor that
/// depends only on the mixing matrix.
pub fn trace_oneunit(f: &MomentFunctionals, i: usize) -> Result<f64> {
    if i >= f.dim() {
        return Err(Error::Dimension(format!(
            "row {i} out of range for d = {}",
            f.dim()
        )));
    }
    if f.alpha[i].abs() <= ALPHA_FLOOR {
        return Err(f.degenerate(i));
    }
    Ok((f.beta[i] - f.gamma[i].powi(2)) / f.alpha[i].powi(2))
}

/// Cramér–Rao bound `κ_j/(κ_iκ_j - 1)` for the gain entry of row `i`
/// leaking source `j`.
pub fn crb_gain(kappa_i: f64, kappa_j: f64) -> Result<f64> {
    let det = kappa_i * kappa_j - 1.0;
    if !(det > 1e-12) || !det.is_finite() {
        return Err(Error::NonIdentifiable(format!(
            "κ_i·κ_j = {} (κ_i = {kappa_i}, κ_j = {kappa_j}); at most one Gaussian source is identifiable",
            kappa_i * kappa_j
        )));
    }
    Ok(kappa_j / det)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbCheck {
    pub target: usize,
    pub kappa: Vec<f64>,
    /// `V_ij` for `j ≠ target`, in index order.
    pub variances: Vec<f64>,
    pub bounds: Vec<f64>,
    pub max_relative_gap: f64,
    /// Functionals under the optimal assignment, in the literal score convention.
    pub functionals: MomentFunctionals,
    /// Largest deviation of the sign-normalized functionals from
    /// `β_i = κ_i, γ_i = 1, α_i = κ_i - 1, η_i = 0` and
    /// `β_j = γ_j = 1/κ_j, α_j = 1 - 1/κ_j, η_j = 0`.
    pub max_identity_gap: f64,
}

/// Evaluates the optimal assignment for `target` (score for the target row,
/// score scaled by `1/κ_j` for the others) and compares the resulting gain
/// variances with the Cramér–Rao bound.
///
/// Scores follow `ψ = f'/f`, so `E[ψ(s)s] = -1` and `E[ψ'] = -κ`; the
/// identities are checked on `-γ` and `-α`.
pub fn crb_attainment_check(specs: &[SourceSpec], target: usize) -> Result<CrbCheck> {
    let d = specs.len();
    if target >= d {
        return Err(Error::Dimension(format!(
            "target {target} out of range for d = {d}"
        )));
    }
    let kappa = specs
        .iter()
        .map(SourceSpec::fisher_kappa)
        .collect::<Result<Vec<_>>>()?;
    for (spec, &k) in specs.iter().zip(&kappa) {
        if k <= 1.0 + 1e-9 {
            return Err(Error::NonIdentifiable(format!(
                "source {spec} has Fisher information {k}; the bound needs non-Gaussian sources"
            )));
        }
    }
    let nls = specs
        .iter()
        .enumerate()
        .map(|(j, s)| {
            if j == target {
                Nonlinearity::score(*s)
            } else {
                Nonlinearity::scaled_score(*s)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma: Vec<usize> = (0..d).collect();
    let f = moment_functionals(specs, &nls, &sigma)?;
    let (mut variances, mut bounds, mut max_gap) = (Vec::new(), Vec::new(), 0.0_f64);
    for j in (0..d).filter(|&j| j != target) {
        let v = gain_variance(&f, Variant::GeneralizedEmpiricalCentering, target, j)?;
        let crb = crb_gain(kappa[target], kappa[j])?;
        max_gap = max_gap.max((v - crb).abs() / crb);
        variances.push(v);
        bounds.push(crb);
    }
    let mut identity_gap = 0.0_f64;
    for (j, &k) in kappa.iter().enumerate() {
        let (beta, gamma, alpha) = if j == target {
            (k, 1.0, k - 1.0)
        } else {
            (1.0 / k, 1.0 / k, 1.0 - 1.0 / k)
        };
        for gap in [
            f.beta[j] - beta,
            -f.gamma[j] - gamma,
            -f.alpha[j] - alpha,
            f.eta[j],
        ] {
            identity_gap = identity_gap.max(gap.abs());
        }
    }
    Ok(CrbCheck {
        target,
        kappa,
        variances,
        bounds,
        max_relative_gap: max_gap,
        functionals: f,
        max_identity_gap: identity_gap,
    })
}

/// Full prediction for an assignment: functionals, contrast signs, gain
/// variances for every variant and the Cramér–Rao bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub functionals: MomentFunctionals,
    pub signs: Vec<f64>,
    pub variances: Vec<VariantVariance>,
    /// `CRB(V_{i,σ(j)})`; `None` on the diagonal or when not identifiable.
    pub crb: Vec<Vec<Option<f64>>>,
    /// `Σ_{i≠j} V_{i,σ(j)}` under empirical centering.
    pub off_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantVariance {
    pub variant: Variant,
    #[serde(with = "crate::rows")]
    pub matrix: DMatrix<f64>,
}

impl Prediction {
    pub fn variance(&self, variant: Variant) -> &DMatrix<f64> {
        &self
            .variances
            .iter()
            .find(|v| v.variant == variant)
            .expect("every variant is predicted")
            .matrix
    }
}

pub fn predict(specs: &[SourceSpec], nls: &[Nonlinearity], sigma: &[usize]) -> Result<Prediction> {
    let f = moment_functionals(specs, nls, sigma)?;
    let signs = local_contrast_signs(&f)?;
    let variances = Variant::ALL
        .iter()
        .map(|&variant| {
            gain_variance_matrix(&f, variant).map(|matrix| VariantVariance { variant, matrix })
        })
        .collect::<Result<Vec<_>>>()?;
    let d = f.dim();
    let crb = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| match (i != j, f.kappa[i], f.kappa[j]) {
                    (true, Some(ki), Some(kj)) => crb_gain(ki, kj).ok(),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let v = &variances[0].matrix;
    let off_sum = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| v[(i, j)])
        .sum();
    Ok(Prediction {
        functionals: f,
        signs,
        variances,
        crb,
        off_sum,
    })
}

/// Sample mean of the estimating function at `(B̂, μ̂)`, stacked as: the `d`
/// mean residuals `ȳ - μ̂`; the `d(d+1)/2` whitening residuals
/// `b_iᵀ(y-μ̂)(y-μ̂)ᵀb_j - δ_ij` for `i ≤ j`; then the `d(d-1)/2`
/// antisymmetry residuals `g̃_i(u_i)u_j - g̃_j(u_j)u_i` for `i < j`, where
/// `u = B̂(y-μ̂)` and `g̃_i = signs_i·g_i`.
pub fn estimating_residual(
    b_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    y: &DMatrix<f64>,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<DVector<f64>> {
    let parts = estimating_parts(b_hat, mu_hat, y, nls, signs)?;
    let mean = y.column_mean() - mu_hat;
    Ok(DVector::from_iterator(
        mean.len() + parts.len(),
        mean.iter().chain(parts.iter()).copied(),
    ))
}

/// The same residual without the mean block, for data centered with a known
/// mean (`d²` entries).
pub fn estimating_residual_known_mean(
    b_hat: &DMatrix<f64>,
    mu: &DVector<f64>,
    y: &DMatrix<f64>,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<DVector<f64>> {
    estimating_parts(b_hat, mu, y, nls, signs)
}

fn estimating_parts(
    b_hat: &DMatrix<f64>,
    mu: &DVector<f64>,
    y: &DMatrix<f64>,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<DVector<f64>> {
    let (d, n) = y.shape();
    if b_hat.shape() != (d, d) || mu.len() != d || nls.len() != d || signs.len() != d {
        return Err(Error::Dimension(format!(
            "estimating residual: data has {d} channels, B is {}x{}, mu has {}, {} nonlinearities, {} signs",
            b_hat.nrows(),
            b_hat.ncols(),
            mu.len(),
            nls.len(),
            signs.len()
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples { n, d });
    }
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= mu;
    }
    let u = b_hat * centered;
    let nf = n as f64;
    let cov = &u * u.transpose() / nf;
    let g = DMatrix::from_fn(d, n, |i, t| signs[i] * nls[i].g(u[(i, t)]));
    let cross = &g * u.transpose() / nf;
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in i..d {
            out.push(cov[(i, j)] - if i == j { 1.0 } else { 0.0 });
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            out.push(cross[(i, j)] - cross[(j, i)]);
        }
    }
    Ok(DVector::from_vec(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastica::random_orthogonal;

    fn gg(a: f64) -> SourceSpec {
        SourceSpec::gg(a).unwrap()
    }

    fn bimod() -> SourceSpec {
        SourceSpec::bimod(3.0, -0.3).unwrap()
    }

    fn single(spec: SourceSpec, nl: Nonlinearity) -> MomentFunctionals {
        moment_functionals(&[spec], &[nl], &[0]).unwrap()
    }

    fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
        nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.min() >= -tol
    }

    // Sources and nonlinearities of the three-source local-contrast example.
    fn contrast_example() -> ([SourceSpec; 3], [Nonlinearity; 3]) {
        (
            [SourceSpec::Laplace, gg(4.0), SourceSpec::Uniform],
            [
                Nonlinearity::gauss(),
                Nonlinearity::tanh(),
                Nonlinearity::kurtosis(),
            ],
        )
    }

    #[test]
    fn alpha_reference_values() {
        // Independent scipy quadrature values.
        let cases = [
            (SourceSpec::Laplace, Nonlinearity::gauss(), 0.210_640),
            (gg(4.0), Nonlinearity::tanh(), -0.077_110),
            (SourceSpec::Uniform, Nonlinearity::kurtosis(), 1.2),
            (SourceSpec::Uniform, Nonlinearity::gauss(), -0.217_090),
            (SourceSpec::Laplace, Nonlinearity::kurtosis(), -3.0),
        ];
        for (spec, nl, expected) in cases {
            let a = single(spec, nl).alpha[0];
            assert!((a - expected).abs() < 1e-5, "{}/{spec}: {a}", nl.name());
        }
    }

    #[test]
    fn kurtosis_on_gaussian_is_degenerate() {
        let f = single(SourceSpec::Gaussian, Nonlinearity::kurtosis());
        assert!(f.alpha[0].abs() < 1e-9);
        assert!((f.tau[0] - 0.5).abs() < 1e-12);
        assert!(matches!(
            local_contrast_signs(&f),
            Err(Error::DegeneratePairing { row: 0, .. })
        ));
    }

    #[test]
    fn eta_vanishes_for_symmetric_sources_and_tau_bounded() {
        for spec in [
            SourceSpec::Laplace,
            SourceSpec::Uniform,
            gg(3.0),
            gg(8.0),
            SourceSpec::bimod(0.5, -0.5).unwrap(),
        ] {
            for nl in [
                Nonlinearity::gauss(),
                Nonlinearity::tanh(),
                Nonlinearity::kurtosis(),
            ] {
                let f = single(spec, nl);
                assert!(f.eta[0].abs() <= 1e-8, "{spec}");
                assert!(f.tau[0] >= -0.25);
            }
        }
        let f = single(bimod(), Nonlinearity::gauss());
        assert!(f.eta[0].abs() > 0.1);
    }

    #[test]
    fn lambda_pairs_sum_to_absolute_alphas() {
        let specs = [bimod(), gg(4.0), SourceSpec::Laplace];
        let nls = [
            Nonlinearity::kurtosis(),
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
        ];
        let f = moment_functionals(&specs, &nls, &[1, 2, 0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let lhs = f.lambda[(i, j)] + f.lambda[(j, i)];
                assert!((lhs - f.alpha[i].abs() - f.alpha[j].abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadrature_matches_sampling() {
        let specs = [bimod(), gg(4.0), SourceSpec::Laplace];
        let nls = [
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
            Nonlinearity::kurtosis(),
        ];
        let sigma = [0, 1, 2];
        let f = moment_functionals(&specs, &nls, &sigma).unwrap();
        let s = sampled_functionals(&specs, &nls, &sigma, 10_000_000, 77).unwrap();
        for i in 0..3 {
            let pairs = [
                (f.alpha[i], s.alpha[i]),
                (f.beta[i], s.beta[i]),
                (f.gamma[i], s.gamma[i]),
                (f.eta[i], s.eta[i]),
                (f.tau[i], s.tau[i]),
            ];
            for (exact, (mean, se)) in pairs {
                assert!(
                    (exact - mean).abs() <= 3.0 * se,
                    "row {i}: {exact} vs {mean} ± {se}"
                );
            }
        }
    }

    #[test]
    fn sign_patterns_of_all_assignments() {
        let (specs, nls) = contrast_example();
        let table = [
            ([0, 1, 2], [1.0, -1.0, 1.0]),
            ([0, 2, 1], [1.0, -1.0, 1.0]),
            ([1, 0, 2], [-1.0, 1.0, 1.0]),
            ([1, 2, 0], [-1.0, -1.0, -1.0]),
            ([2, 0, 1], [-1.0, 1.0, 1.0]),
            ([2, 1, 0], [-1.0, -1.0, -1.0]),
        ];
        for (sigma, expected) in table {
            let f = moment_functionals(&specs, &nls, &sigma).unwrap();
            assert_eq!(
                local_contrast_signs(&f).unwrap(),
                expected.to_vec(),
                "{sigma:?}"
            );
        }
    }

    #[test]
    fn invalid_assignment_rejected() {
        let (specs, nls) = contrast_example();
        assert!(moment_functionals(&specs, &nls, &[0, 0, 1]).is_err());
        assert!(moment_functionals(&specs, &nls, &[0, 1]).is_err());
    }

    #[test]
    fn two_uniform_kurtosis_covariance() {
        let f = moment_functionals(
            &[SourceSpec::Uniform; 2],
            &[Nonlinearity::kurtosis(); 2],
            &[0, 1],
        )
        .unwrap();
        assert!((f.beta[0] - 27.0 / 7.0).abs() < 1e-9);
        assert!((f.gamma[0] - 1.8).abs() < 1e-9);
        let r = cov_generalized(&f, &DMatrix::identity(2, 2), 0).unwrap();
        let off = (2.0 * (27.0 / 7.0 - 1.8 * 1.8) + 1.44) / 5.76;
        assert!((r[(1, 1)] - off).abs() < 1e-9);
        assert!((r[(1, 1)] - 0.46429).abs() < 1e-5);
        assert!((r[(0, 0)] - 0.2).abs() < 1e-12);
        assert_eq!(r[(0, 1)], 0.0);
    }

    #[test]
    fn covariance_structure_under_signed_permutations() {
        let specs = [bimod(), gg(4.0), SourceSpec::Laplace];
        let nls = [
            Nonlinearity::kurtosis(),
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
        ];
        let f = moment_functionals(&specs, &nls, &[0, 1, 2]).unwrap();
        let b = random_orthogonal(3, 4) * 1.7;
        let q = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let flips = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, -1.0]));
        for i in 0..3 {
            let r = cov_generalized(&f, &b, i).unwrap();
            let rq = cov_generalized(&f, &(&b * &q), i).unwrap();
            assert!((rq - q.transpose() * &r * &q).amax() < 1e-12);
            let rf = cov_generalized(&f, &(&flips * &b), i).unwrap();
            assert!((rf - &r).amax() < 1e-12);
            assert!((&r - r.transpose()).amax() <= 1e-12);
            assert!(is_psd(&r, 1e-10));
        }
    }

    #[test]
    fn symmetric_sources_make_variants_coincide() {
        let specs = [SourceSpec::Laplace, gg(4.0), SourceSpec::Uniform, gg(3.0)];
        let nls = [
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
            Nonlinearity::kurtosis(),
            Nonlinearity::tanh(),
        ];
        let f = moment_functionals(&specs, &nls, &[0, 1, 2, 3]).unwrap();
        let gen = gain_variance_matrix(&f, Variant::GeneralizedEmpiricalCentering).unwrap();
        let exact = gain_variance_matrix(&f, Variant::ExactCentering).unwrap();
        let legacy = gain_variance_matrix(&f, Variant::SymmetricLegacy).unwrap();
        assert!((&gen - &exact).amax() <= 1e-9);
        assert_eq!(exact, legacy);
        let b = random_orthogonal(4, 8);
        for i in 0..4 {
            let r = cov_generalized(&f, &b, i).unwrap();
            let rt = cov_exact_centering(&f, &b, i, &f.third_moment).unwrap();
            assert!((r - rt).amax() <= 1e-9);
        }
    }

    #[test]
    fn diagonal_variance_is_tau_for_every_variant() {
        let (specs, nls) = contrast_example();
        let f = moment_functionals(&specs, &nls, &[0, 1, 2]).unwrap();
        for v in Variant::ALL {
            for i in 0..3 {
                assert_eq!(gain_variance(&f, v, i, i).unwrap(), f.tau[i]);
            }
        }
    }

    #[test]
    fn bimodal_rows_match_frozen_values() {
        // Independent scipy evaluation for three Bimod(3, -0.3) sources with
        // Gauss, Tanh and kurtosis rows (row 0).
        let nls = [
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
            Nonlinearity::kurtosis(),
        ];
        let f = moment_functionals(&[bimod(); 3], &nls, &[0, 1, 2]).unwrap();
        let gen = [1.73525, 0.23620, 1.10784];
        let exact = [1.73525, 0.32836, 1.30630];
        for j in 0..3 {
            let v = gain_variance(&f, Variant::GeneralizedEmpiricalCentering, 0, j).unwrap();
            let vt = gain_variance(&f, Variant::ExactCentering, 0, j).unwrap();
            assert!((v - gen[j]).abs() < 1e-4, "{j}: {v}");
            assert!((vt - exact[j]).abs() < 1e-4, "{j}: {vt}");
            if j != 0 {
                assert!(vt > v + 1e-3);
            }
        }
    }

    #[test]
    fn exact_centering_quadratic_form_and_ordering() {
        let nls = [
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
            Nonlinearity::kurtosis(),
        ];
        let specs = [bimod(), SourceSpec::bimod(1.0, -0.5).unwrap(), gg(4.0)];
        let f = moment_functionals(&specs, &nls, &[0, 1, 2]).unwrap();
        let b = DMatrix::identity(3, 3);
        for i in 0..3 {
            let rt = cov_exact_centering(&f, &b, i, &f.third_moment).unwrap();
            let r = cov_generalized(&f, &b, i).unwrap();
            for j in 0..3 {
                let vt = gain_variance(&f, Variant::ExactCentering, i, j).unwrap();
                assert!((rt[(j, j)] - vt).abs() < 1e-12);
            }
            assert!((&rt - rt.transpose()).amax() <= 1e-12);
            assert!(is_psd(&rt, 1e-10));
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let diff = (&rt - &r).select_rows(&others).select_columns(&others);
            assert!(is_psd(&diff, 1e-10), "{diff}");
        }
    }

    #[test]
    fn separation_sweep_limits() {
        // Independent scipy values of Σ_{i≠j} V_{i,σ(j)}.
        let specs = [bimod(), gg(4.0), SourceSpec::Laplace];
        let nls = [
            Nonlinearity::kurtosis(),
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
        ];
        let p1 = predict(&specs, &nls, &[0, 1, 2]).unwrap();
        let p2 = predict(&specs, &nls, &[1, 2, 0]).unwrap();
        assert!((p1.off_sum - 6.2546).abs() < 1e-3, "{}", p1.off_sum);
        assert!((p2.off_sum - 8.6092).abs() < 1e-3, "{}", p2.off_sum);
        let a = &p1.functionals.alpha;
        assert!(
            (a[0] + 4.941).abs() < 1e-3
                && (a[1] + 0.1278).abs() < 1e-4
                && (a[2] - 0.1478).abs() < 1e-4
        );
    }

    #[test]
    fn oneunit_covariance() {
        let (specs, nls) = contrast_example();
        let f = moment_functionals(&specs, &nls, &[0, 1, 2]).unwrap();
        let b = random_orthogonal(3, 2);
        let r0 = cov_oneunit_deflation(&f, &b, 0).unwrap();
        let c0 = (f.beta[0] - f.gamma[0].powi(2) - f.eta[0].powi(2)) / f.alpha[0].powi(2);
        let mut expected = b.row(0).transpose() * b.row(0) * f.tau[0];
        for j in 1..3 {
            expected += b.row(j).transpose() * b.row(j) * c0;
        }
        assert!((r0 - expected).amax() < 1e-12);
        let r2 = cov_oneunit_deflation(&f, &b, 2).unwrap();
        assert!(is_psd(&r2, 1e-10));

        let one =
            moment_functionals(&[SourceSpec::Laplace], &[Nonlinearity::tanh()], &[0]).unwrap();
        let b1 = DMatrix::from_element(1, 1, 2.0);
        let r = cov_oneunit_deflation(&one, &b1, 0).unwrap();
        assert!((r[(0, 0)] - 4.0 * one.tau[0]).abs() < 1e-12);

        let ta = trace_oneunit(
            &moment_functionals(&[SourceSpec::Laplace], &[Nonlinearity::tanh()], &[0]).unwrap(),
            0,
        )
        .unwrap();
        let fb =
            moment_functionals(&[SourceSpec::Laplace], &[Nonlinearity::gauss()], &[0]).unwrap();
        let tb = trace_oneunit(&fb, 0).unwrap();
        let ratio = ((one.beta[0] - one.gamma[0].powi(2)) / one.alpha[0].powi(2))
            / ((fb.beta[0] - fb.gamma[0].powi(2)) / fb.alpha[0].powi(2));
        assert!((ta / tb - ratio).abs() < 1e-9);
    }

    #[test]
    fn crb_values() {
        assert!((crb_gain(2.0, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(crb_gain(1.0, 1.0), Err(Error::NonIdentifiable(_))));
        assert!((crb_gain(1e8, 3.0).unwrap() * 1e8 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn crb_attained_by_score_nonlinearities() {
        let c = crb_attainment_check(&[gg(4.0), SourceSpec::Laplace], 0).unwrap();
        assert!(c.max_relative_gap <= 1e-5, "{c:?}");
        assert!(c.max_identity_gap <= 1e-6, "{c:?}");
        let k = c.kappa[1];
        assert!((-c.functionals.alpha[1] - (1.0 - 1.0 / k)).abs() < 1e-6);
        assert!(matches!(
            crb_attainment_check(&[SourceSpec::Gaussian, SourceSpec::Laplace], 0),
            Err(Error::NonIdentifiable(_))
        ));
    }

    #[test]
    fn crb_lower_bounds_every_variant() {
        let specs: Vec<SourceSpec> = [1.0, 3.0, 4.0, 8.0].into_iter().map(gg).collect();
        let kappa: Vec<f64> = specs.iter().map(|s| s.fisher_kappa().unwrap()).collect();
        let choices = [
            Nonlinearity::gauss(),
            Nonlinearity::tanh(),
            Nonlinearity::kurtosis(),
        ];
        for a in 0..4 {
            for b in 0..4 {
                if a == b {
                    continue;
                }
                for nl_a in choices {
                    for nl_b in choices {
                        let f = moment_functionals(&[specs[a], specs[b]], &[nl_a, nl_b], &[0, 1])
                            .unwrap();
                        let crb = crb_gain(kappa[a], kappa[b]).unwrap();
                        for v in Variant::ALL {
                            let var = gain_variance(&f, v, 0, 1).unwrap();
                            assert!(
                                var >= crb - 1e-9,
                                "{v:?} {}/{} vs {}/{}: {var} < {crb}",
                                nl_a.name(),
                                specs[a],
                                nl_b.name(),
                                specs[b]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_pairs_reported() {
        let f = moment_functionals(
            &[SourceSpec::Gaussian, SourceSpec::Gaussian],
            &[Nonlinearity::kurtosis(); 2],
            &[0, 1],
        )
        .unwrap();
        assert!(matches!(
            gain_variance(&f, Variant::GeneralizedEmpiricalCentering, 0, 1),
            Err(Error::DegeneratePairing { .. })
        ));
        assert!(cov_generalized(&f, &DMatrix::identity(2, 2), 0).is_err());
        assert!(predict(
            &[SourceSpec::Gaussian, SourceSpec::Laplace],
            &[Nonlinearity::kurtosis(); 2],
            &[0, 1]
        )
        .is_err());
    }

    #[test]
    fn residual_mean_block_and_random_point() {
        let y = crate::sources::SourceBatch::generate(
            &[SourceSpec::Laplace, SourceSpec::Uniform],
            2_000,
            3,
        )
        .unwrap()
        .data;
        let mu = DVector::from_vec(vec![0.3, -0.2]);
        let nls = [Nonlinearity::tanh(); 2];
        let r = estimating_residual(&DMatrix::identity(2, 2), &mu, &y, &nls, &[1.0, 1.0]).unwrap();
        assert_eq!(r.len(), 6);
        let ybar = y.column_mean();
        assert_eq!(r[0], ybar[0] - mu[0]);
        assert_eq!(r[1], ybar[1] - mu[1]);
        let b = random_orthogonal(2, 1) * 2.5;
        let r = estimating_residual(&b, &mu, &y, &nls, &[1.0, -1.0]).unwrap();
        assert!(r.norm() > 0.1);
        let known = estimating_residual_known_mean(&b, &mu, &y, &nls, &[1.0, -1.0]).unwrap();
        assert_eq!(known.len(), 4);
    }

    #[test]
    fn prediction_serializes() {
        let (specs, nls) = contrast_example();
        let p = predict(&specs, &nls, &[0, 1, 2]).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: Prediction = serde_json::from_str(&text).unwrap();
        assert_eq!(back.signs, p.signs);
        assert!(p.crb[0][0].is_none() && p.crb[0][1].is_some() && p.crb[0][2].is_none());
        assert!(text.contains("generalized_empirical_centering"));
    }
}
