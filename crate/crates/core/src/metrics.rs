use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// `Ĝ = B̂H`. Entry `(i, j)` is the weight of source `j` in output `i`.
pub fn gain_matrix(b_hat: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    b_hat * h
}

/// Row-to-source assignment recovered from a gain matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// `sigma[i]` is the source extracted by output `i`.
    pub sigma: Vec<usize>,
    pub signs: Vec<i8>,
    /// Some output had an all-zero row, so its assignment is arbitrary.
    pub degenerate: bool,
}

/// Greedy assignment: repeatedly take the largest remaining `|G_ij|` and
/// retire its row and column. Ties go to the first entry in row-major order.
pub fn align(g: &DMatrix<f64>) -> Alignment {
    let d = g.nrows();
    assert_eq!(g.ncols(), d, "gain matrix must be square");
    let mut sigma = vec![usize::MAX; d];
    let mut col_used = vec![false; d];
    for _ in 0..d {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..d).filter(|&i| sigma[i] == usize::MAX) {
            for j in (0..d).filter(|&j| !col_used[j]) {
                let v = g[(i, j)].abs();
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        let (i, j, _) = best.expect("a free row and column remain");
        sigma[i] = j;
        col_used[j] = true;
    }
    let signs = (0..d)
        .map(|i| if g[(i, sigma[i])] < 0.0 { -1 } else { 1 })
        .collect();
    let degenerate = g.row_iter().any(|r| r.iter().all(|&v| v == 0.0));
    Alignment {
        sigma,
        signs,
        degenerate,
    }
}

/// `‖off(Ĝ)‖²_F`: squared Frobenius norm with the entries `G_{i,σ(i)}` zeroed.
pub fn off_index(g: &DMatrix<f64>, sigma: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if j != sigma[i] {
                total += g[(i, j)] * g[(i, j)];
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    #[serde(with = "crate::rows")]
    pub g: DMatrix<f64>,
    pub sigma: Vec<usize>,
    pub signs: Vec<i8>,
    pub off_index: f64,
    pub warning: Option<String>,
}

impl GainReport {
    pub fn new(b_hat: &DMatrix<f64>, h: &DMatrix<f64>) -> Self {
        Self::from_gain(gain_matrix(b_hat, h))
    }

    pub fn from_gain(g: DMatrix<f64>) -> Self {
        let a = align(&g);
        let off_index = off_index(&g, &a.sigma);
        let warning = a
            .degenerate
            .then(|| "alignment degenerate: the gain matrix has a zero row".to_string());
        Self {
            g,
            sigma: a.sigma,
            signs: a.signs,
            off_index,
            warning,
        }
    }

    /// `signs_i · G_{i,σ(j)}`: the gain with columns in extraction order and
    /// rows oriented so the diagonal is positive.
    pub fn oriented(&self) -> DMatrix<f64> {
        let d = self.g.nrows();
        DMatrix::from_fn(d, d, |i, j| {
            f64::from(self.signs[i]) * self.g[(i, self.sigma[j])]
        })
    }
}
