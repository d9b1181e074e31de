//! Source distributions: sampling, densities, score functions and exact moments.
//!
//! Every distribution is parameterized to zero mean and unit variance.
//!
//! The score follows the convention `ψ(x) = f'(x)/f(x)` (no leading minus), so
//! for the standard normal `ψ(x) = -x`. Quantities built from `ψ²` (the Fisher
//! information `κ`) are insensitive to the convention; first-order quantities
//! such as `E[ψ(s)s] = -1` carry the sign.

use crate::error::{Error, Result};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Highest moment order served by [`SourceSpec::moment`].
pub const MAX_MOMENT_ORDER: u32 = 8;

/// A zero-mean, unit-variance source distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub enum SourceSpec {
    /// Generalized Gaussian `GG(α)`: density `∝ exp(-(β_α|x|)^α)`.
    GeneralizedGaussian {
        alpha: f64,
    },
    Laplace,
    Uniform,
    Gaussian,
    /// Two-component Gaussian mixture with modes at `mu1` and `mu2`.
    BimodalGaussian {
        mu1: f64,
        mu2: f64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SpecRepr {
    Gg { alpha: f64 },
    Laplace,
    Uniform,
    Gaussian,
    Bimod { mu1: f64, mu2: f64 },
}

impl TryFrom<SpecRepr> for SourceSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let spec = match r {
            SpecRepr::Gg { alpha } => SourceSpec::GeneralizedGaussian { alpha },
            SpecRepr::Laplace => SourceSpec::Laplace,
            SpecRepr::Uniform => SourceSpec::Uniform,
            SpecRepr::Gaussian => SourceSpec::Gaussian,
            SpecRepr::Bimod { mu1, mu2 } => SourceSpec::BimodalGaussian { mu1, mu2 },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<SourceSpec> for SpecRepr {
    fn from(s: SourceSpec) -> Self {
        match s {
            SourceSpec::GeneralizedGaussian { alpha } => SpecRepr::Gg { alpha },
            SourceSpec::Laplace => SpecRepr::Laplace,
            SourceSpec::Uniform => SpecRepr::Uniform,
            SourceSpec::Gaussian => SpecRepr::Gaussian,
            SourceSpec::BimodalGaussian { mu1, mu2 } => SpecRepr::Bimod { mu1, mu2 },
        }
    }
}

impl std::fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceSpec::GeneralizedGaussian { alpha } => write!(f, "gg({alpha})"),
            SourceSpec::Laplace => write!(f, "laplace"),
            SourceSpec::Uniform => write!(f, "uniform"),
            SourceSpec::Gaussian => write!(f, "gaussian"),
            SourceSpec::BimodalGaussian { mu1, mu2 } => write!(f, "bimod({mu1},{mu2})"),
        }
    }
}

/// Parses the display form: `laplace`, `uniform`, `gaussian`, `gg(α)`,
/// `bimod(μ1,μ2)`.
impl std::str::FromStr for SourceSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let t = text.trim().to_ascii_lowercase();
        let args = |prefix: &str| -> Option<Result<Vec<f64>>> {
            let inner = t
                .strip_prefix(prefix)?
                .strip_prefix('(')?
                .strip_suffix(')')?;
            Some(
                inner
                    .split(',')
                    .map(|a| {
                        a.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidSpec(format!("bad number {a:?} in {text:?}"))
                        })
                    })
                    .collect(),
            )
        };
        match t.as_str() {
            "laplace" => return Ok(SourceSpec::Laplace),
            "uniform" => return Ok(SourceSpec::Uniform),
            "gaussian" => return Ok(SourceSpec::Gaussian),
            _ => {}
        }
        if let Some(a) = args("gg") {
            if let [alpha] = a?[..] {
                return SourceSpec::gg(alpha);
            }
        } else if let Some(a) = args("bimod") {
            if let [mu1, mu2] = a?[..] {
                return SourceSpec::bimod(mu1, mu2);
            }
        }
        Err(Error::InvalidSpec(format!(
            "unknown source {text:?} (expected laplace, uniform, gaussian, gg(alpha) or bimod(mu1,mu2))"
        )))
    }
}

/// `β_α = sqrt(Γ(3/α)/Γ(1/α))`, the scale making `GG(α)` unit-variance.
pub fn gg_beta(alpha: f64) -> f64 {
    (libm::lgamma(3.0 / alpha) - libm::lgamma(1.0 / alpha))
        .mul_add(0.5, 0.0)
        .exp()
}

/// Mixture weights and shared component variance of `Bimod(μ1, μ2)`.
fn bimod_params(mu1: f64, mu2: f64) -> (f64, f64) {
    let p = mu2.abs() / (mu1.abs() + mu2.abs());
    let var = 1.0 - (mu1 * mu2).abs();
    (p, var)
}

fn laplace_scale() -> f64 {
    1.0 / SQRT_2
}

impl SourceSpec {
    pub fn gg(alpha: f64) -> Result<Self> {
        let s = SourceSpec::GeneralizedGaussian { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn bimod(mu1: f64, mu2: f64) -> Result<Self> {
        let s = SourceSpec::BimodalGaussian { mu1, mu2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SourceSpec::GeneralizedGaussian { alpha } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "generalized Gaussian requires alpha > 0, got {alpha}"
                    )));
                }
            }
            SourceSpec::BimodalGaussian { mu1, mu2 } => {
                let prod = mu1 * mu2;
                if !(mu1.is_finite() && mu2.is_finite()) || prod >= 0.0 || prod.abs() >= 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "bimodal mixture requires mu1*mu2 < 0 and |mu1*mu2| < 1, got mu1 = {mu1}, mu2 = {mu2}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether the density is symmetric about zero.
    pub fn is_symmetric(&self) -> bool {
        match *self {
            SourceSpec::BimodalGaussian { mu1, mu2 } => mu1 == -mu2,
            _ => true,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            SourceSpec::Uniform => {
                if x.abs() <= SQRT_3 {
                    0.5 / SQRT_3
                } else {
                    0.0
                }
            }
            _ => self.ln_pdf(x).exp(),
        }
    }

    /// `ln f(x)`; `-∞` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            SourceSpec::Gaussian => -0.5 * x * x - 0.5 * (2.0 * PI).ln(),
            SourceSpec::Laplace => {
                let b = laplace_scale();
                -x.abs() / b - (2.0 * b).ln()
            }
            SourceSpec::Uniform => {
                if x.abs() <= SQRT_3 {
                    -(2.0 * SQRT_3).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            SourceSpec::GeneralizedGaussian { alpha } => {
                let beta = gg_beta(alpha);
                (alpha * beta / 2.0).ln() - libm::lgamma(1.0 / alpha) - (beta * x.abs()).powf(alpha)
            }
            SourceSpec::BimodalGaussian { mu1, mu2 } => {
                let (p, var) = bimod_params(mu1, mu2);
                let l1 = p.ln() - (x - mu1).powi(2) / (2.0 * var);
                let l2 = (1.0 - p).ln() - (x - mu2).powi(2) / (2.0 * var);
                let m = l1.max(l2);
                m + ((l1 - m).exp() + (l2 - m).exp()).ln() - 0.5 * (2.0 * PI * var).ln()
            }
        }
    }

    /// Posterior component probabilities of the bimodal mixture at `x`.
    fn bimod_responsibilities(mu1: f64, mu2: f64, x: f64) -> (f64, f64) {
        let (p, var) = bimod_params(mu1, mu2);
        let l1 = p.ln() - (x - mu1).powi(2) / (2.0 * var);
        let l2 = (1.0 - p).ln() - (x - mu2).powi(2) / (2.0 * var);
        let m = l1.max(l2);
        let (e1, e2) = ((l1 - m).exp(), (l2 - m).exp());
        (e1 / (e1 + e2), e2 / (e1 + e2))
    }

    /// Score `ψ(x) = f'(x)/f(x)`.
    ///
    /// Kinks of the log-density (Laplace and `GG(α ≤ 1)` at 0) return 0, the
    /// midpoint of the one-sided limits. The uniform log-density is flat on its
    /// support, so its score is 0 there.
    pub fn score(&self, x: f64) -> f64 {
        match *self {
            SourceSpec::Gaussian => -x,
            SourceSpec::Laplace => -x.signum_or_zero() / laplace_scale(),
            SourceSpec::Uniform => 0.0,
            SourceSpec::GeneralizedGaussian { alpha } => {
                if x == 0.0 {
                    return 0.0;
                }
                let beta = gg_beta(alpha);
                -alpha * beta.powf(alpha) * x.abs().powf(alpha - 1.0) * x.signum()
            }
            SourceSpec::BimodalGaussian { mu1, mu2 } => {
                let (_, var) = bimod_params(mu1, mu2);
                let (r1, r2) = Self::bimod_responsibilities(mu1, mu2, x);
                -(r1 * (x - mu1) + r2 * (x - mu2)) / var
            }
        }
    }

    /// Pointwise derivative `ψ'(x)` where it exists. Jump discontinuities of
    /// `ψ` are reported separately by [`SourceSpec::score_jumps`].
    pub fn score_derivative(&self, x: f64) -> f64 {
        match *self {
            SourceSpec::Gaussian => -1.0,
            SourceSpec::Laplace | SourceSpec::Uniform => 0.0,
            SourceSpec::GeneralizedGaussian { alpha } => {
                if alpha == 1.0 {
                    return 0.0;
                }
                let beta = gg_beta(alpha);
                let ax = x.abs();
                if ax == 0.0 {
                    return if alpha > 2.0 {
                        0.0
                    } else if alpha == 2.0 {
                        -2.0 * beta * beta
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                -alpha * (alpha - 1.0) * beta.powf(alpha) * ax.powf(alpha - 2.0)
            }
            SourceSpec::BimodalGaussian { mu1, mu2 } => {
                let (_, var) = bimod_params(mu1, mu2);
                let (r1, r2) = Self::bimod_responsibilities(mu1, mu2, x);
                let d1 = (x - mu1) / var;
                let d2 = (x - mu2) / var;
                let second = r1 * (d1 * d1 - 1.0 / var) + r2 * (d2 * d2 - 1.0 / var);
                let psi = -(r1 * d1 + r2 * d2);
                second - psi * psi
            }
        }
    }

    /// Jumps `(x0, ψ(x0+) - ψ(x0-))` of the score.
    pub fn score_jumps(&self) -> Vec<(f64, f64)> {
        match *self {
            SourceSpec::Laplace => vec![(0.0, -2.0 / laplace_scale())],
            SourceSpec::GeneralizedGaussian { alpha: 1.0 } => {
                vec![(0.0, -2.0 * gg_beta(1.0))]
            }
            _ => Vec::new(),
        }
    }

    /// Points where the density or its derivatives are not smooth, plus
    /// landmarks (modes) that help the adaptive quadrature.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            SourceSpec::Uniform => vec![-SQRT_3, SQRT_3],
            SourceSpec::BimodalGaussian { mu1, mu2 } => vec![mu1.min(mu2), mu1.max(mu2)],
            _ => vec![0.0],
        }
    }

    /// Half-width of the integration range. Outside it the density, even
    /// weighted by `(1 + |x|)^16`, is below `1e-20`.
    pub fn support_bound(&self) -> f64 {
        if let SourceSpec::Uniform = self {
            return SQRT_3;
        }
        let mut l = 8.0_f64;
        while (self.ln_pdf(l) + 16.0 * (1.0 + l).ln()) > (1e-20_f64).ln() && l < 1e6 {
            l *= 2.0;
        }
        if let SourceSpec::BimodalGaussian { mu1, mu2 } = *self {
            l = l.max(mu1.abs().max(mu2.abs()) + 8.0);
        }
        l
    }

    /// `E[f(s)]` by adaptive quadrature, splitting additionally at `extra`.
    pub fn expect_with_breaks<F: Fn(f64) -> f64>(&self, f: F, extra: &[f64]) -> Result<f64> {
        let l = self.support_bound();
        let mut pts: Vec<f64> = vec![-l, l];
        pts.extend(self.breakpoints().into_iter().filter(|p| p.abs() < l));
        pts.extend(extra.iter().copied().filter(|p| p.abs() < l));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let integral =
            integrate_with_breaks(|x| f(x) * self.pdf(x), &pts, &QuadOptions::default())?;
        Ok(integral.value)
    }

    /// `E[f(s)]` by adaptive quadrature against the density.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        self.expect_with_breaks(f, &[])
    }

    /// Fisher information of the location family, `κ = E[ψ(s)²]`.
    pub fn fisher_kappa(&self) -> Result<f64> {
        match *self {
            SourceSpec::Uniform => Err(Error::Numeric(
                "Fisher information of the uniform distribution is infinite (density is discontinuous)".into(),
            )),
            SourceSpec::GeneralizedGaussian { alpha } if alpha <= 0.5 => Err(Error::Numeric(format!(
                "Fisher information of gg({alpha}) diverges: the integral of f'^2/f is infinite for alpha <= 1/2"
            ))),
            SourceSpec::Gaussian => Ok(1.0),
            _ => self
                .expect(|x| {
                    let s = self.score(x);
                    s * s
                })
                .map_err(|e| Error::Numeric(format!("fisher information of {self}: {e}"))),
        }
    }

    /// Exact raw moment `E[s^k]` for `k ≤ 8`.
    pub fn moment(&self, k: u32) -> Result<f64> {
        if k > MAX_MOMENT_ORDER {
            return Err(Error::Numeric(format!(
                "moment order {k} exceeds the supported maximum {MAX_MOMENT_ORDER}"
            )));
        }
        if k == 0 {
            return Ok(1.0);
        }
        let odd = k % 2 == 1;
        let v = match *self {
            SourceSpec::Gaussian => {
                if odd {
                    0.0
                } else {
                    double_factorial(k - 1)
                }
            }
            SourceSpec::Uniform => {
                if odd {
                    0.0
                } else {
                    SQRT_3.powi(k as i32) / f64::from(k + 1)
                }
            }
            SourceSpec::Laplace => {
                if odd {
                    0.0
                } else {
                    factorial(k) * laplace_scale().powi(k as i32)
                }
            }
            SourceSpec::GeneralizedGaussian { alpha } => {
                if odd {
                    0.0
                } else {
                    let kf = f64::from(k);
                    (libm::lgamma((kf + 1.0) / alpha) - libm::lgamma(1.0 / alpha)).exp()
                        / gg_beta(alpha).powi(k as i32)
                }
            }
            SourceSpec::BimodalGaussian { mu1, mu2 } => {
                let (p, var) = bimod_params(mu1, mu2);
                p * normal_raw_moment(mu1, var, k) + (1.0 - p) * normal_raw_moment(mu2, var, k)
            }
        };
        Ok(v)
    }

    /// `E[s^k]` by quadrature; the independent check of [`SourceSpec::moment`].
    pub fn moment_by_quadrature(&self, k: u32) -> Result<f64> {
        if k > MAX_MOMENT_ORDER {
            return Err(Error::Numeric(format!(
                "moment order {k} exceeds the supported maximum {MAX_MOMENT_ORDER}"
            )));
        }
        self.expect(|x| x.powi(k as i32))
    }

    /// One draw.
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            SourceSpec::Gaussian => rng.sample(StandardNormal),
            SourceSpec::Uniform => SQRT_3 * (2.0 * rng.random::<f64>() - 1.0),
            SourceSpec::Laplace => {
                // |X|/b ~ Exp(1); sign independent.
                let u: f64 = rng.random();
                let e = -(1.0 - u).ln();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * e * laplace_scale()
            }
            SourceSpec::GeneralizedGaussian { alpha } => {
                // (β|X|)^α ~ Gamma(1/α, 1); sign independent.
                let gamma = Gamma::new(1.0 / alpha, 1.0).expect("alpha validated positive");
                let g: f64 = gamma.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * g.powf(1.0 / alpha) / gg_beta(alpha)
            }
            SourceSpec::BimodalGaussian { mu1, mu2 } => {
                let (p, var) = bimod_params(mu1, mu2);
                let mu = if rng.random::<f64>() < p { mu1 } else { mu2 };
                let z: f64 = rng.sample(StandardNormal);
                mu + var.sqrt() * z
            }
        }
    }

    /// `n` i.i.d. draws, deterministic in `(self, n, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn double_factorial(k: u32) -> f64 {
    let mut acc = 1.0;
    let mut i = k;
    while i > 1 {
        acc *= f64::from(i);
        i -= 2;
    }
    acc
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `E[(μ + σZ)^k]` for standard normal `Z`.
fn normal_raw_moment(mu: f64, var: f64, k: u32) -> f64 {
    (0..=k)
        .step_by(2)
        .map(|m| {
            let odd_part = if m == 0 { 1.0 } else { double_factorial(m - 1) };
            binomial(k, m) * mu.powi((k - m) as i32) * var.powi((m / 2) as i32) * odd_part
        })
        .sum()
}

/// Independent source rows: `data` is `d × N`, row `k` holds draws of `specs[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBatch {
    pub data: DMatrix<f64>,
    pub specs: Vec<SourceSpec>,
}

impl SourceBatch {
    /// Row `k` is drawn from its own stream seeded by `derive_seed(seed, k)`,
    /// so each row is reproducible on its own.
    pub fn generate(specs: &[SourceSpec], n: usize, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("at least one source is required".into()));
        }
        let rows = specs
            .iter()
            .enumerate()
            .map(|(k, s)| s.sample(n, derive_seed(seed, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let data = DMatrix::from_fn(specs.len(), n, |i, t| rows[i][t]);
        Ok(Self {
            data,
            specs: specs.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_specs() -> Vec<SourceSpec> {
        vec![
            SourceSpec::Gaussian,
            SourceSpec::Laplace,
            SourceSpec::Uniform,
            SourceSpec::gg(0.75).unwrap(),
            SourceSpec::gg(1.5).unwrap(),
            SourceSpec::gg(3.0).unwrap(),
            SourceSpec::gg(4.0).unwrap(),
            SourceSpec::gg(8.0).unwrap(),
            SourceSpec::bimod(3.0, -0.3).unwrap(),
            SourceSpec::bimod(0.5, -0.5).unwrap(),
        ]
    }

    fn sample_moment(xs: &[f64], k: i32) -> f64 {
        xs.iter().map(|x| x.powi(k)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn density_normalization_mean_variance() {
        for s in all_specs() {
            let total = s.expect(|_| 1.0).unwrap();
            let mean = s.expect(|x| x).unwrap();
            let var = s.expect(|x| x * x).unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{s}: total {total}");
            assert!(mean.abs() < 1e-8, "{s}: mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "{s}: var {var}");
        }
    }

    #[test]
    fn pdf_reference_values() {
        assert!((SourceSpec::gg(2.0).unwrap().pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((SourceSpec::Laplace.pdf(0.0) - 0.707_106_781_186_547_5).abs() < 1e-12);
        // Bimod(3, -0.3): p = 1/11, σ² = 0.1.
        let b = SourceSpec::bimod(3.0, -0.3).unwrap();
        let x = 0.4;
        let norm = |m: f64| (-(x - m) * (x - m) / 0.2).exp() / (2.0 * PI * 0.1).sqrt();
        let expected = norm(3.0) / 11.0 + norm(-0.3) * 10.0 / 11.0;
        assert!((b.pdf(x) - expected).abs() < 1e-14);
    }

    #[test]
    fn gg_family_special_cases() {
        let g2 = SourceSpec::gg(2.0).unwrap();
        let g1 = SourceSpec::gg(1.0).unwrap();
        for x in [-2.5, -0.3, 0.0, 0.7, 3.1] {
            assert!((g2.pdf(x) - SourceSpec::Gaussian.pdf(x)).abs() < 1e-14);
            assert!((g1.pdf(x) - SourceSpec::Laplace.pdf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn score_reference_values() {
        for x in [-2.0, -0.5, 0.3, 1.7] {
            assert_eq!(SourceSpec::Gaussian.score(x), -x);
        }
        assert!((SourceSpec::Laplace.score(1.0) + SQRT_2).abs() < 1e-15);
        assert_eq!(SourceSpec::Laplace.score(0.0), 0.0);
        let g4 = SourceSpec::gg(4.0).unwrap();
        let b4 = gg_beta(4.0);
        for x in [-1.3, 0.4, 2.0] {
            assert!((g4.score(x) + 4.0 * b4.powi(4) * x.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn score_matches_finite_difference_of_log_density() {
        let h = 1e-5;
        for s in all_specs() {
            if matches!(s, SourceSpec::Uniform) {
                continue;
            }
            let mut rng = rng_from_seed(11);
            for _ in 0..100 {
                let x = s.draw(&mut rng);
                if x.abs() < 1e-3 {
                    continue;
                }
                let fd = (s.ln_pdf(x + h) - s.ln_pdf(x - h)) / (2.0 * h);
                let tol = 1e-6 * (1.0 + s.score(x).abs());
                assert!(
                    (fd - s.score(x)).abs() < tol,
                    "{s} at {x}: fd {fd} vs {}",
                    s.score(x)
                );
            }
        }
    }

    #[test]
    fn score_derivative_matches_finite_difference() {
        let h = 1e-5;
        for s in all_specs() {
            if matches!(s, SourceSpec::Uniform) {
                continue;
            }
            for x in [-2.2, -0.9, 0.35, 1.1, 2.6] {
                let fd = (s.score(x + h) - s.score(x - h)) / (2.0 * h);
                let d = s.score_derivative(x);
                assert!(
                    (fd - d).abs() < 1e-5 * (1.0 + d.abs()),
                    "{s} at {x}: {fd} vs {d}"
                );
            }
        }
    }

    #[test]
    fn odd_functionals_vanish_for_symmetric_sources() {
        let odd: [fn(f64) -> f64; 3] = [|x| x * x * x, |x| x * (-x * x / 2.0).exp(), f64::tanh];
        for s in all_specs().into_iter().filter(SourceSpec::is_symmetric) {
            for g in odd {
                assert!(s.expect(g).unwrap().abs() < 1e-8, "{s}");
            }
        }
    }

    #[test]
    fn fisher_kappa_reference_values() {
        assert!((SourceSpec::Gaussian.fisher_kappa().unwrap() - 1.0).abs() < 1e-9);
        assert!((SourceSpec::Laplace.fisher_kappa().unwrap() - 2.0).abs() < 1e-6);
        // Closed form for GG(α): α² Γ(2 - 1/α) Γ(3/α) / Γ(1/α)².
        for alpha in [0.75, 1.5, 3.0, 4.0, 8.0] {
            let closed = alpha
                * alpha
                * (libm::lgamma(2.0 - 1.0 / alpha) + libm::lgamma(3.0 / alpha)
                    - 2.0 * libm::lgamma(1.0 / alpha))
                .exp();
            let k = SourceSpec::gg(alpha).unwrap().fisher_kappa().unwrap();
            assert!(
                (k - closed).abs() < 1e-6 * closed,
                "gg({alpha}): {k} vs {closed}"
            );
        }
    }

    #[test]
    fn fisher_kappa_at_least_one() {
        for s in all_specs() {
            if let Ok(k) = s.fisher_kappa() {
                assert!(k >= 1.0 - 1e-9, "{s}: {k}");
                if !matches!(s, SourceSpec::Gaussian) {
                    assert!(k > 1.0 + 1e-6, "{s}: {k}");
                }
            }
        }
    }

    #[test]
    fn fisher_kappa_divergent_cases() {
        assert!(matches!(
            SourceSpec::gg(0.5).unwrap().fisher_kappa(),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            SourceSpec::gg(0.3).unwrap().fisher_kappa(),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            SourceSpec::Uniform.fisher_kappa(),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn fisher_kappa_gg4_matches_monte_carlo() {
        let s = SourceSpec::gg(4.0).unwrap();
        let k = s.fisher_kappa().unwrap();
        let n = 10_000_000;
        let mut rng = rng_from_seed(2024);
        let mean = (0..n)
            .map(|_| {
                let v = s.score(s.draw(&mut rng));
                v * v
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - k).abs() < 1e-3, "MC {mean} vs quadrature {k}");
    }

    #[test]
    fn moments_closed_form_match_quadrature() {
        for s in all_specs() {
            for k in 0..=MAX_MOMENT_ORDER {
                let exact = s.moment(k).unwrap();
                let quad = s.moment_by_quadrature(k).unwrap();
                assert!(
                    (exact - quad).abs() < 1e-8 * (1.0 + exact.abs()),
                    "{s} k={k}: {exact} vs {quad}"
                );
            }
        }
    }

    #[test]
    fn moment_reference_values() {
        assert!((SourceSpec::Uniform.moment(4).unwrap() - 1.8).abs() < 1e-14);
        assert!((SourceSpec::Laplace.moment(4).unwrap() - 6.0).abs() < 1e-13);
        assert_eq!(SourceSpec::Gaussian.moment(0).unwrap(), 1.0);
        assert!(SourceSpec::Gaussian.moment(9).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SourceSpec::gg(0.0).is_err());
        assert!(SourceSpec::gg(-1.0).is_err());
        assert!(SourceSpec::bimod(3.0, 0.3).is_err());
        assert!(SourceSpec::bimod(2.0, -0.6).is_err());
        assert!(SourceSpec::Gaussian.sample(0, 1).is_err());
    }

    #[test]
    fn sample_moments() {
        let g = SourceSpec::Gaussian.sample(1_000_000, 1).unwrap();
        assert!((sample_moment(&g, 4) - 3.0).abs() < 0.05);
        let u = SourceSpec::Uniform.sample(1_000_000, 1).unwrap();
        assert!((sample_moment(&u, 4) - 1.8).abs() < 0.02);
        let b = SourceSpec::bimod(3.0, -0.3)
            .unwrap()
            .sample(1_000_000, 1)
            .unwrap();
        let m = sample_moment(&b, 1);
        let v = sample_moment(&b, 2) - m * m;
        assert!(
            m.abs() < 0.01 && (v - 1.0).abs() < 0.01,
            "mean {m}, var {v}"
        );
    }

    #[test]
    fn sampling_is_reproducible() {
        for s in all_specs() {
            let a = s.sample(257, 99).unwrap();
            let b = s.sample(257, 99).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, s.sample(257, 100).unwrap());
        }
    }

    #[test]
    fn batch_rows_reproducible_individually() {
        let specs = [SourceSpec::Laplace, SourceSpec::Uniform];
        let batch = SourceBatch::generate(&specs, 50, 5).unwrap();
        let row1 = SourceSpec::Uniform.sample(50, derive_seed(5, 1)).unwrap();
        assert_eq!(batch.data.row(1).iter().copied().collect::<Vec<_>>(), row1);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let cases = [
            (
                r#"{"kind":"gg","alpha":4.0}"#,
                SourceSpec::GeneralizedGaussian { alpha: 4.0 },
            ),
            (
                r#"{"kind":"bimod","mu1":3.0,"mu2":-0.3}"#,
                SourceSpec::BimodalGaussian {
                    mu1: 3.0,
                    mu2: -0.3,
                },
            ),
            (r#"{"kind":"laplace"}"#, SourceSpec::Laplace),
            (r#"{"kind":"uniform"}"#, SourceSpec::Uniform),
            (r#"{"kind":"gaussian"}"#, SourceSpec::Gaussian),
        ];
        for (text, spec) in cases {
            let parsed: SourceSpec = serde_json::from_str(text).unwrap();
            assert_eq!(parsed, spec);
            let back: SourceSpec =
                serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
            assert_eq!(back, spec);
        }
        assert!(serde_json::from_str::<SourceSpec>(r#"{"kind":"gg","alpha":-1}"#).is_err());
        assert!(serde_json::from_str::<SourceSpec>(r#"{"kind":"bimod","mu1":1,"mu2":2}"#).is_err());
    }

    #[test]
    fn parse_display_round_trip() {
        for spec in [
            SourceSpec::Laplace,
            SourceSpec::Uniform,
            SourceSpec::Gaussian,
            SourceSpec::gg(4.0).unwrap(),
            SourceSpec::gg(0.75).unwrap(),
            SourceSpec::bimod(3.0, -0.3).unwrap(),
        ] {
            assert_eq!(spec.to_string().parse::<SourceSpec>().unwrap(), spec);
        }
        assert_eq!(
            " GG( 3 ) ".parse::<SourceSpec>().unwrap(),
            SourceSpec::gg(3.0).unwrap()
        );
        for bad in ["cauchy", "gg()", "gg(1,2)", "bimod(3)", "gg(x)", "gg(-1)"] {
            assert!(bad.parse::<SourceSpec>().is_err(), "{bad}");
        }
    }
}
