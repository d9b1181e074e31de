//! One-unit, symmetric and generalized symmetric FastICA.
//!
//! The engines only need a handful of expectations of the standardized data,
//! supplied through [`Expectation`]. Two back-ends exist: sample averages over
//! a [`StandardizedData`] set, and [`Population`], which replaces sample
//! averages by quadrature against known source densities.

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::preprocess::{inv_sqrt_sym, StandardizedData};
use crate::rng::rng_from_seed;
use crate::sources::SourceSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1000;
/// `|diag(Ĥ(W)Wᵀ)|` below this flags a degenerate pairing.
pub const DEGENERATE_DIAG: f64 = 1e-6;

/// First-order expectations of the standardized observations `x`.
pub trait Expectation {
    fn dim(&self) -> usize;

    /// Matrix that maps centered observations to `x`.
    fn whitening(&self) -> &DMatrix<f64>;

    /// For each row `w_i` of `w` (`k × d`): `E[g_i'(w_iᵀx)]` and the row
    /// vector `E[g_i(w_iᵀx) xᵀ]`.
    fn moments(
        &self,
        w: &DMatrix<f64>,
        nls: &[Nonlinearity],
    ) -> Result<(DVector<f64>, DMatrix<f64>)>;

    /// `E[G_i(w_iᵀx)]` for each row.
    fn mean_contrast(&self, w: &DMatrix<f64>, nls: &[Nonlinearity]) -> Result<DVector<f64>>;
}

fn check_rows(w: &DMatrix<f64>, nls: &[Nonlinearity], d: usize) -> Result<()> {
    if w.ncols() != d || w.nrows() != nls.len() {
        return Err(Error::Dimension(format!(
            "W is {}x{} with {} nonlinearities, data dimension is {d}",
            w.nrows(),
            w.ncols(),
            nls.len()
        )));
    }
    Ok(())
}

impl Expectation for StandardizedData {
    fn dim(&self) -> usize {
        self.x.nrows()
    }

    fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    fn moments(
        &self,
        w: &DMatrix<f64>,
        nls: &[Nonlinearity],
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_rows(w, nls, self.dim())?;
        let n = self.x.ncols();
        let mut u = w * &self.x;
        let mut mean_dg = DVector::zeros(w.nrows());
        for (i, nl) in nls.iter().enumerate() {
            let mut acc = 0.0;
            for t in 0..n {
                let (g, dg) = nl.g_dg(u[(i, t)]);
                acc += dg;
                u[(i, t)] = g;
            }
            mean_dg[i] = acc / n as f64;
        }
        let egx = u * self.x.transpose() / n as f64;
        Ok((mean_dg, egx))
    }

    fn mean_contrast(&self, w: &DMatrix<f64>, nls: &[Nonlinearity]) -> Result<DVector<f64>> {
        check_rows(w, nls, self.dim())?;
        let n = self.x.ncols() as f64;
        let u = w * &self.x;
        Ok(DVector::from_iterator(
            w.nrows(),
            nls.iter()
                .enumerate()
                .map(|(i, nl)| u.row(i).iter().map(|&v| nl.contrast(v)).sum::<f64>() / n),
        ))
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for k in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let wt = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = wt;
        weights[n - 1 - k] = wt;
    }
    (nodes, weights)
}

/// Discrete rule `Σ w_k h(x_k) ≈ E[h(s)]` used for directions that mix several
/// sources: composite Gauss–Legendre on geometrically growing panels.
fn tensor_rule(spec: &SourceSpec) -> (Vec<f64>, Vec<f64>) {
    const NODES: usize = 20;
    let l = spec.support_bound();
    let mut cuts: Vec<f64> = vec![-l, 0.0, l];
    let mut edge = 0.5;
    while edge < l {
        cuts.push(edge);
        cuts.push(-edge);
        edge *= 2.0;
    }
    cuts.extend(spec.breakpoints().into_iter().filter(|p| p.abs() < l));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (gx, gw) = gauss_legendre(NODES);
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for p in cuts.windows(2) {
        let (c, h) = (0.5 * (p[0] + p[1]), 0.5 * (p[1] - p[0]));
        for (x, w) in gx.iter().zip(&gw) {
            let node = c + h * x;
            xs.push(node);
            ws.push(h * w * spec.pdf(node));
        }
    }
    (xs, ws)
}

/// Infinite-sample back-end: `x = A s` with `A = (HHᵀ)^(-1/2) H` orthogonal and
/// independent sources `s` of the given distributions.
#[derive(Debug, Clone)]
pub struct Population {
    specs: Vec<SourceSpec>,
    a: DMatrix<f64>,
    whitening: DMatrix<f64>,
    rules: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Upper limit on tensor-rule evaluations per expectation.
const MAX_TENSOR_NODES: usize = 40_000_000;

impl Population {
    pub fn new(specs: &[SourceSpec], mixing: &DMatrix<f64>) -> Result<Self> {
        let d = specs.len();
        if d == 0 || mixing.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "{d} sources but mixing matrix is {}x{}",
                mixing.nrows(),
                mixing.ncols()
            )));
        }
        for s in specs {
            s.validate()?;
        }
        let whitening = inv_sqrt_sym(&(mixing * mixing.transpose()))?;
        let a = &whitening * mixing;
        Ok(Self {
            specs: specs.to_vec(),
            a,
            whitening,
            rules: specs.iter().map(tensor_rule).collect(),
        })
    }

    /// The orthogonal standardized mixing `A`.
    pub fn standardized_mixing(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn specs(&self) -> &[SourceSpec] {
        &self.specs
    }

    /// `E[f(cᵀs)·s]` components and `E[f(cᵀs)]` style reductions share this
    /// driver: `h(u, s_involved...)` is accumulated over the tensor rule of
    /// the involved sources.
    fn tensor_expect<F: FnMut(f64, &[usize], &[f64], f64)>(
        &self,
        c: &DVector<f64>,
        involved: &[usize],
        mut f: F,
    ) -> Result<()> {
        let sizes: Vec<usize> = involved.iter().map(|&k| self.rules[k].0.len()).collect();
        let total = sizes
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .unwrap_or(usize::MAX);
        if total > MAX_TENSOR_NODES {
            return Err(Error::UnsupportedDimension(format!(
                "population expectation over {} mixed sources needs {total} nodes",
                involved.len()
            )));
        }
        let mut idx = vec![0usize; involved.len()];
        let mut vals = vec![0.0; involved.len()];
        loop {
            let mut u = 0.0;
            let mut weight = 1.0;
            for (m, &k) in involved.iter().enumerate() {
                let (xs, ws) = &self.rules[k];
                vals[m] = xs[idx[m]];
                u += c[k] * vals[m];
                weight *= ws[idx[m]];
            }
            f(u, involved, &vals, weight);
            let mut m = 0;
            loop {
                if m == idx.len() {
                    return Ok(());
                }
                idx[m] += 1;
                if idx[m] < sizes[m] {
                    break;
                }
                idx[m] = 0;
                m += 1;
            }
        }
    }

    fn involved(c: &DVector<f64>) -> Vec<usize> {
        let scale = c.amax();
        (0..c.len())
            .filter(|&k| c[k].abs() > 1e-12 * scale)
            .collect()
    }

    /// `(E[g'(wᵀx)], E[g(wᵀx) s])` for a single direction.
    fn unit_source_terms(
        &self,
        w: &DVector<f64>,
        nl: &Nonlinearity,
    ) -> Result<(f64, DVector<f64>)> {
        let d = self.specs.len();
        let c = self.a.transpose() * w;
        let involved = Self::involved(&c);
        let mut egs = DVector::zeros(d);
        if involved.is_empty() {
            return Err(Error::DegenerateUpdate("zero projection vector".into()));
        }
        if let [k] = involved[..] {
            let (spec, ck) = (&self.specs[k], c[k]);
            let breaks: Vec<f64> = nl.kinks().iter().map(|x0| x0 / ck).collect();
            let mut edg = spec.expect_with_breaks(|s| nl.dg(ck * s), &breaks)?;
            for (x0, jump) in nl.jumps() {
                edg += jump * spec.pdf(x0 / ck) / ck.abs();
            }
            egs[k] = spec.expect_with_breaks(|s| nl.g(ck * s) * s, &breaks)?;
            return Ok((edg, egs));
        }
        if !nl.jumps().is_empty() {
            return Err(Error::UnsupportedNonlinearity(format!(
                "{} has a discontinuous derivative; population expectations are only available along single-source directions",
                nl.name()
            )));
        }
        let mut edg = 0.0;
        self.tensor_expect(&c, &involved, |u, inv, vals, wt| {
            let (g, dg) = nl.g_dg(u);
            edg += wt * dg;
            for (m, &k) in inv.iter().enumerate() {
                egs[k] += wt * g * vals[m];
            }
        })?;
        Ok((edg, egs))
    }
}

impl Expectation for Population {
    fn dim(&self) -> usize {
        self.specs.len()
    }

    fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    fn moments(
        &self,
        w: &DMatrix<f64>,
        nls: &[Nonlinearity],
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_rows(w, nls, self.dim())?;
        let mut mean_dg = DVector::zeros(w.nrows());
        let mut egx = DMatrix::zeros(w.nrows(), self.dim());
        for (i, nl) in nls.iter().enumerate() {
            let wi = w.row(i).transpose();
            let (edg, egs) = self.unit_source_terms(&wi, nl)?;
            mean_dg[i] = edg;
            egx.set_row(i, &(&self.a * egs).transpose());
        }
        Ok((mean_dg, egx))
    }

    fn mean_contrast(&self, w: &DMatrix<f64>, nls: &[Nonlinearity]) -> Result<DVector<f64>> {
        check_rows(w, nls, self.dim())?;
        let mut out = DVector::zeros(w.nrows());
        for (i, nl) in nls.iter().enumerate() {
            let c = self.a.transpose() * w.row(i).transpose();
            let involved = Self::involved(&c);
            out[i] = match involved[..] {
                [] => nl.contrast(0.0),
                [k] => {
                    let ck = c[k];
                    let breaks: Vec<f64> = nl.kinks().iter().map(|x0| x0 / ck).collect();
                    self.specs[k].expect_with_breaks(|s| nl.contrast(ck * s), &breaks)?
                }
                _ => {
                    let mut acc = 0.0;
                    self.tensor_expect(&c, &involved, |u, _, _, wt| acc += wt * nl.contrast(u))?;
                    acc
                }
            };
        }
        Ok(out)
    }
}

/// `Ĥ(W)`: row `i` is `E[g_i'(w_iᵀx)] w_iᵀ - E[g_i(w_iᵀx) xᵀ]`.
pub fn empirical_h<E: Expectation>(
    w: &DMatrix<f64>,
    data: &E,
    nls: &[Nonlinearity],
) -> Result<DMatrix<f64>> {
    let (mean_dg, egx) = data.moments(w, nls)?;
    Ok(DMatrix::from_diagonal(&mean_dg) * w - egx)
}

/// Orthogonal polar factor `(MMᵀ)^(-1/2) M`.
pub fn symmetric_orthogonalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "polar factor needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateUpdate(
            "update matrix has non-finite entries".into(),
        ));
    }
    let svd = m.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::DegenerateUpdate(format!(
            "update matrix is rank deficient (singular values {smin:e} .. {smax:e}); a nonlinearity may be degenerate for its source"
        )));
    }
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    Ok(u * vt)
}

/// `‖WWᵀ - I‖_F`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    (w * w.transpose() - DMatrix::identity(w.nrows(), w.nrows())).norm()
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub nonlinearities: Vec<Nonlinearity>,
    /// Initial orthogonal matrix; identity when absent.
    #[serde(default, with = "crate::rows::option")]
    pub w0: Option<DMatrix<f64>>,
}

impl IterationConfig {
    pub fn new(nonlinearities: Vec<Nonlinearity>) -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            nonlinearities,
            w0: None,
        }
    }

    pub fn with_w0(mut self, w0: DMatrix<f64>) -> Self {
        self.w0 = Some(w0);
        self
    }

    /// Validated, re-orthonormalized starting point.
    pub fn initial(&self, d: usize) -> Result<DMatrix<f64>> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.nonlinearities.len() != d {
            return Err(Error::Dimension(format!(
                "{} nonlinearities for {d}-dimensional data",
                self.nonlinearities.len()
            )));
        }
        match &self.w0 {
            None => Ok(DMatrix::identity(d, d)),
            Some(w0) => {
                if w0.shape() != (d, d) {
                    return Err(Error::Dimension(format!(
                        "W0 is {}x{}, expected {d}x{d}",
                        w0.nrows(),
                        w0.ncols()
                    )));
                }
                let err = orthogonality_error(w0);
                if err > 1e-8 {
                    return Err(Error::Config(format!(
                        "W0 is not orthogonal (‖W0W0ᵀ - I‖ = {err:e})"
                    )));
                }
                symmetric_orthogonalize(w0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    #[serde(with = "crate::rows")]
    pub w: DMatrix<f64>,
    /// Demixing estimate `W·Ĉ^(-1/2)`.
    #[serde(with = "crate::rows")]
    pub b: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest change of a row between the last two iterates, up to sign.
    pub final_delta: f64,
    /// Signs `Λ` with `F̂(W) ≈ ΛW` at the last step.
    pub sign_vector: Vec<f64>,
    /// Set when the last update had a vanishing `diag(Ĥ(W)Wᵀ)` entry, the
    /// signature of a nonlinearity with `α ≈ 0` for its source.
    pub diagnostic: Option<String>,
}

/// Row-wise distance between consecutive iterates, insensitive to row sign
/// flips: `max_i min(‖w_i' - w_i‖, ‖w_i' + w_i‖)`. For unit rows this equals
/// `sqrt(2(1 - |w_i'ᵀw_i|))`.
fn sign_invariant_delta(new: &DMatrix<f64>, old: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let mut delta = 0.0_f64;
    let mut signs = Vec::with_capacity(new.nrows());
    for i in 0..new.nrows() {
        let minus = (new.row(i) - old.row(i)).norm();
        let plus = (new.row(i) + old.row(i)).norm();
        delta = delta.max(minus.min(plus));
        signs.push(if new.row(i).dot(&old.row(i)) < 0.0 {
            -1.0
        } else {
            1.0
        });
    }
    (delta, signs)
}

fn degenerate_diagnostic(
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    nls: &[Nonlinearity],
) -> Option<String> {
    let diag = (h * w.transpose()).diagonal();
    let rows: Vec<String> = diag
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() < DEGENERATE_DIAG)
        .map(|(i, v)| format!("row {i} ({}): diag(H W^T) = {v:e}", nls[i].name()))
        .collect();
    (!rows.is_empty()).then(|| {
        format!(
            "nonlinearity degenerate for its source (alpha near zero): {}",
            rows.join("; ")
        )
    })
}

/// Generalized symmetric FastICA: `W ← (ĤĤᵀ)^(-1/2) Ĥ` with row-specific
/// nonlinearities, until the sign-invariant row change drops below `tol`.
pub fn generalized_symmetric<E: Expectation>(
    data: &E,
    cfg: &IterationConfig,
) -> Result<SeparationResult> {
    let d = data.dim();
    let nls = &cfg.nonlinearities;
    let mut w = cfg.initial(d)?;
    let mut delta = f64::INFINITY;
    let mut signs = vec![1.0; d];
    let mut iterations = 0;
    let mut converged = false;
    let mut diagnostic = None;
    while iterations < cfg.max_iter {
        let h = empirical_h(&w, data, nls)?;
        diagnostic = degenerate_diagnostic(&h, &w, nls);
        let next = symmetric_orthogonalize(&h)?;
        (delta, signs) = sign_invariant_delta(&next, &w);
        w = next;
        iterations += 1;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(SeparationResult {
        b: &w * data.whitening(),
        w,
        iterations,
        converged,
        final_delta: delta,
        sign_vector: signs,
        diagnostic,
    })
}

/// Classic symmetric FastICA: one nonlinearity shared by every row.
pub fn symmetric<E: Expectation>(
    data: &E,
    nl: Nonlinearity,
    w0: Option<DMatrix<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<SeparationResult> {
    let cfg = IterationConfig {
        tol,
        max_iter,
        nonlinearities: vec![nl; data.dim()],
        w0,
    };
    generalized_symmetric(data, &cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitResult {
    pub w: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
    pub sign: f64,
}

/// One-unit FastICA: `w ← E[g'(wᵀx)]w - E[g(wᵀx)x]`, projected off the
/// previously extracted `basis` (deflation) and renormalized.
pub fn one_unit<E: Expectation>(
    data: &E,
    nl: Nonlinearity,
    w0: &DVector<f64>,
    basis: &[DVector<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<UnitResult> {
    let d = data.dim();
    if w0.len() != d {
        return Err(Error::Dimension(format!(
            "w0 has length {}, data dimension is {d}",
            w0.len()
        )));
    }
    if basis.len() >= d {
        return Err(Error::Dimension(
            "deflation basis already spans the space".into(),
        ));
    }
    let deflate = |v: &mut DVector<f64>| {
        for a in basis {
            let proj = a.dot(v);
            v.axpy(-proj, a, 1.0);
        }
    };
    let normalize = |mut v: DVector<f64>| -> Result<DVector<f64>> {
        deflate(&mut v);
        let norm = v.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::DegenerateUpdate(format!(
                "one-unit update vanished (norm {norm:e}) for {}",
                nl.name()
            )));
        }
        Ok(v / norm)
    };
    let mut w = normalize(w0.clone())?;
    let nls = [nl];
    let (mut iterations, mut delta, mut sign, mut converged) = (0, f64::INFINITY, 1.0, false);
    while iterations < max_iter {
        let row = DMatrix::from_row_slice(1, d, w.as_slice());
        let (mean_dg, egx) = data.moments(&row, &nls)?;
        let next = normalize(&w * mean_dg[0] - egx.row(0).transpose())?;
        let (minus, plus) = ((&next - &w).norm(), (&next + &w).norm());
        delta = minus.min(plus);
        sign = if next.dot(&w) < 0.0 { -1.0 } else { 1.0 };
        w = next;
        iterations += 1;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(UnitResult {
        w,
        iterations,
        converged,
        final_delta: delta,
        sign,
    })
}

/// Deflationary one-unit FastICA: extracts rows one at a time, row `i` with
/// `cfg.nonlinearities[i]` started from row `i` of `W0`.
pub fn deflation<E: Expectation>(data: &E, cfg: &IterationConfig) -> Result<SeparationResult> {
    let d = data.dim();
    let w0 = cfg.initial(d)?;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let (mut iterations, mut converged, mut delta) = (0, true, 0.0_f64);
    let mut signs = Vec::with_capacity(d);
    for (i, nl) in cfg.nonlinearities.iter().enumerate() {
        let unit = one_unit(
            data,
            *nl,
            &w0.row(i).transpose(),
            &basis,
            cfg.tol,
            cfg.max_iter,
        )?;
        iterations += unit.iterations;
        converged &= unit.converged;
        delta = delta.max(unit.final_delta);
        signs.push(unit.sign);
        basis.push(unit.w);
    }
    let w = DMatrix::from_fn(d, d, |i, j| basis[i][j]);
    let diagnostic = empirical_h(&w, data, &cfg.nonlinearities)
        .ok()
        .and_then(|h| degenerate_diagnostic(&h, &w, &cfg.nonlinearities));
    Ok(SeparationResult {
        b: &w * data.whitening(),
        w,
        iterations,
        converged,
        final_delta: delta,
        sign_vector: signs,
        diagnostic,
    })
}

/// `min_Λ ‖F̂(W) - ΛW‖_F` over diagonal sign matrices, attained at
/// `Λ_ii = sign((F̂(W)Wᵀ)_ii)`.
pub fn fixed_point_residual<E: Expectation>(
    w: &DMatrix<f64>,
    data: &E,
    nls: &[Nonlinearity],
) -> Result<f64> {
    let f = symmetric_orthogonalize(&empirical_h(w, data, nls)?)?;
    let diag = (&f * w.transpose()).diagonal();
    let lambda = DMatrix::from_diagonal(&diag.map(|v| if v < 0.0 { -1.0 } else { 1.0 }));
    Ok((f - lambda * w).norm())
}

/// `‖M - Mᵀ‖_F` for `M = E[g̃(Wx) xᵀWᵀ]` with `g̃_i = signs_i · g_i`.
pub fn symmetry_defect<E: Expectation>(
    w: &DMatrix<f64>,
    data: &E,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<f64> {
    if signs.len() != nls.len() {
        return Err(Error::Dimension(format!(
            "{} signs for {} rows",
            signs.len(),
            nls.len()
        )));
    }
    let (_, egx) = data.moments(w, nls)?;
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(signs)) * egx * w.transpose();
    Ok((&m - m.transpose()).norm())
}

/// Sign-corrected contrast `Σ_i signs_i E[G_i(w_iᵀx)]`.
pub fn local_contrast<E: Expectation>(
    w: &DMatrix<f64>,
    data: &E,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<f64> {
    if signs.len() != nls.len() {
        return Err(Error::Dimension(format!(
            "{} signs for {} rows",
            signs.len(),
            nls.len()
        )));
    }
    let values = data.mean_contrast(w, nls)?;
    Ok(values.iter().zip(signs).map(|(v, s)| v * s).sum())
}

/// The two-angle family of 3×3 rotations: a rotation by `phi` in the first
/// two coordinates composed with a rotation by `chi` in the last two.
pub fn surface_point(phi: f64, chi: f64) -> DMatrix<f64> {
    let (sp, cp) = phi.sin_cos();
    let (sc, cc) = chi.sin_cos();
    DMatrix::from_row_slice(
        3,
        3,
        &[cp, -sp * cc, sp * sc, sp, cp * cc, -cp * sc, 0.0, sc, cc],
    )
}

/// Contrast values over a `(phi, chi)` grid; rows follow `phi_grid`.
pub fn contrast_surface<E: Expectation>(
    phi_grid: &[f64],
    chi_grid: &[f64],
    data: &E,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<DMatrix<f64>> {
    if data.dim() != 3 {
        return Err(Error::UnsupportedDimension(format!(
            "the contrast surface is defined for d = 3, got d = {}",
            data.dim()
        )));
    }
    let mut out = DMatrix::zeros(phi_grid.len(), chi_grid.len());
    for (r, &phi) in phi_grid.iter().enumerate() {
        for (c, &chi) in chi_grid.iter().enumerate() {
            out[(r, c)] = local_contrast(&surface_point(phi, chi), data, nls, signs)?;
        }
    }
    Ok(out)
}

/// Central finite-difference Hessian of the contrast in `(phi, chi)`.
pub fn contrast_hessian<E: Expectation>(
    phi: f64,
    chi: f64,
    step: f64,
    data: &E,
    nls: &[Nonlinearity],
    signs: &[f64],
) -> Result<[[f64; 2]; 2]> {
    if data.dim() != 3 {
        return Err(Error::UnsupportedDimension(format!(
            "the contrast surface is defined for d = 3, got d = {}",
            data.dim()
        )));
    }
    let j = |dp: f64, dc: f64| local_contrast(&surface_point(phi + dp, chi + dc), data, nls, signs);
    let h = step;
    let center = j(0.0, 0.0)?;
    let hpp = (j(h, 0.0)? - 2.0 * center + j(-h, 0.0)?) / (h * h);
    let hcc = (j(0.0, h)? - 2.0 * center + j(0.0, -h)?) / (h * h);
    let hpc = (j(h, h)? - j(h, -h)? - j(-h, h)? + j(-h, -h)?) / (4.0 * h * h);
    Ok([[hpp, hpc], [hpc, hcc]])
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn eigenvalues_2x2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let r = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[1][0]).sqrt();
    [mean - r, mean + r]
}
