//! Contrast nonlinearities `G` with their derivatives `g = G'` and `g'`.

use crate::error::{Error, Result};
use crate::sources::SourceSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `G(x) = x⁴/4`.
    Kurtosis,
    /// `G(x) = -exp(-x²/2)`.
    Gauss,
    /// `G(x) = log cosh x`.
    Tanh,
    /// `G = ln f`, so `g = ψ` is the score of the given source.
    Score(SourceSpec),
    /// `G = ln f / κ`, so `g = ψ/κ`.
    ScaledScore(SourceSpec),
}

/// An evaluable nonlinearity. Score kinds cache `1/κ` at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NonlinearityKind", into = "NonlinearityKind")]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    scale: f64,
}

impl TryFrom<NonlinearityKind> for Nonlinearity {
    type Error = Error;
    fn try_from(kind: NonlinearityKind) -> Result<Self> {
        Nonlinearity::new(kind)
    }
}

impl From<Nonlinearity> for NonlinearityKind {
    fn from(n: Nonlinearity) -> Self {
        n.kind
    }
}

/// Parses [`Nonlinearity::name`] output: `kurtosis`, `gauss`, `tanh`,
/// `score[<source>]`, `scaled_score[<source>]`.
impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let t = text.trim().to_ascii_lowercase();
        let inner = |prefix: &str| {
            t.strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('[')?.strip_suffix(']'))
        };
        let kind = match t.as_str() {
            "kurtosis" => NonlinearityKind::Kurtosis,
            "gauss" => NonlinearityKind::Gauss,
            "tanh" => NonlinearityKind::Tanh,
            _ => {
                if let Some(spec) = inner("scaled_score") {
                    NonlinearityKind::ScaledScore(spec.parse()?)
                } else if let Some(spec) = inner("score") {
                    NonlinearityKind::Score(spec.parse()?)
                } else {
                    return Err(Error::UnsupportedNonlinearity(format!(
                        "unknown nonlinearity {text:?} (expected kurtosis, gauss, tanh, score[<source>] or scaled_score[<source>])"
                    )));
                }
            }
        };
        Nonlinearity::new(kind)
    }
}

/// Symmetry of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// `G` even, hence `g` odd and `g'` even.
    Even,
    /// No symmetry.
    None,
}

/// Numerically safe `log cosh x = |x| + log((1 + e^{-2|x|})/2)`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn check_score_source(spec: &SourceSpec) -> Result<()> {
    spec.validate()?;
    match *spec {
        SourceSpec::Uniform => Err(Error::UnsupportedNonlinearity(
            "score of the uniform distribution is undefined at the support edges (its density is discontinuous)".into(),
        )),
        SourceSpec::GeneralizedGaussian { alpha } if alpha < 1.0 => Err(Error::UnsupportedNonlinearity(format!(
            "score derivative of gg({alpha}) is not integrable at 0 for alpha < 1"
        ))),
        _ => Ok(()),
    }
}

impl Nonlinearity {
    pub fn new(kind: NonlinearityKind) -> Result<Self> {
        let scale = match kind {
            NonlinearityKind::Score(spec) => {
                check_score_source(&spec)?;
                1.0
            }
            NonlinearityKind::ScaledScore(spec) => {
                check_score_source(&spec)?;
                1.0 / spec.fisher_kappa()?
            }
            _ => 1.0,
        };
        Ok(Self { kind, scale })
    }

    pub fn kurtosis() -> Self {
        Self {
            kind: NonlinearityKind::Kurtosis,
            scale: 1.0,
        }
    }

    pub fn gauss() -> Self {
        Self {
            kind: NonlinearityKind::Gauss,
            scale: 1.0,
        }
    }

    pub fn tanh() -> Self {
        Self {
            kind: NonlinearityKind::Tanh,
            scale: 1.0,
        }
    }

    pub fn score(spec: SourceSpec) -> Result<Self> {
        Self::new(NonlinearityKind::Score(spec))
    }

    pub fn scaled_score(spec: SourceSpec) -> Result<Self> {
        Self::new(NonlinearityKind::ScaledScore(spec))
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            NonlinearityKind::Kurtosis => "kurtosis".into(),
            NonlinearityKind::Gauss => "gauss".into(),
            NonlinearityKind::Tanh => "tanh".into(),
            NonlinearityKind::Score(s) => format!("score[{s}]"),
            NonlinearityKind::ScaledScore(s) => format!("scaled_score[{s}]"),
        }
    }

    fn spec(&self) -> Option<&SourceSpec> {
        match &self.kind {
            NonlinearityKind::Score(s) | NonlinearityKind::ScaledScore(s) => Some(s),
            _ => None,
        }
    }

    /// `G` (order 0), `g` (order 1) or `g'` (order 2) at `x`.
    pub fn eval(&self, order: u8, x: f64) -> Result<f64> {
        match order {
            0 => Ok(self.contrast(x)),
            1 => Ok(self.g(x)),
            2 => Ok(self.dg(x)),
            _ => Err(Error::Config(format!(
                "derivative order must be 0, 1 or 2, got {order}"
            ))),
        }
    }

    pub fn contrast(&self, x: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Kurtosis => 0.25 * x.powi(4),
            NonlinearityKind::Gauss => -(-0.5 * x * x).exp(),
            NonlinearityKind::Tanh => log_cosh(x),
            NonlinearityKind::Score(s) | NonlinearityKind::ScaledScore(s) => {
                self.scale * s.ln_pdf(x)
            }
        }
    }

    pub fn g(&self, x: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Kurtosis => x * x * x,
            NonlinearityKind::Gauss => x * (-0.5 * x * x).exp(),
            NonlinearityKind::Tanh => x.tanh(),
            NonlinearityKind::Score(s) | NonlinearityKind::ScaledScore(s) => {
                self.scale * s.score(x)
            }
        }
    }

    pub fn dg(&self, x: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Kurtosis => 3.0 * (x * x),
            NonlinearityKind::Gauss => (1.0 - x * x) * (-0.5 * x * x).exp(),
            NonlinearityKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            NonlinearityKind::Score(s) | NonlinearityKind::ScaledScore(s) => {
                self.scale * s.score_derivative(x)
            }
        }
    }

    /// `(g(x), g'(x))` sharing work between the two.
    #[inline]
    pub fn g_dg(&self, x: f64) -> (f64, f64) {
        match &self.kind {
            NonlinearityKind::Kurtosis => {
                let x2 = x * x;
                (x2 * x, 3.0 * x2)
            }
            NonlinearityKind::Gauss => {
                let x2 = x * x;
                let e = (-0.5 * x2).exp();
                (x * e, (1.0 - x2) * e)
            }
            NonlinearityKind::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            _ => (self.g(x), self.dg(x)),
        }
    }

    /// Jump discontinuities `(x0, g(x0+) - g(x0-))` of `g`. Expectations of
    /// `g'` in the distributional sense add `jump · f(x0)` for each entry.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        self.spec()
            .map(|s| {
                s.score_jumps()
                    .into_iter()
                    .map(|(x0, j)| (x0, self.scale * j))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Points where `g` or `g'` are not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self.spec() {
            Some(SourceSpec::BimodalGaussian { .. }) | None => Vec::new(),
            Some(_) => vec![0.0],
        }
    }

    pub fn parity(&self) -> Parity {
        match self.spec() {
            Some(s) if !s.is_symmetric() => Parity::None,
            _ => Parity::Even,
        }
    }
}
