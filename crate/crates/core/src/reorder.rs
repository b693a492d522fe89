//! Token reordering by a learned importance score.
//!
//! Each token gets a score `s_l = ⟨K, S_Δ x_l⟩`. SoftSort turns the scores into
//! a row-stochastic matrix whose row `i` concentrates on the token holding the
//! `i`-th largest score:
//!
//! ```text
//! P_ij = softmax_j( -|s_sorted,i - s_j|^p / τ )
//! ```
//!
//! and the reordered sequence is `x Pᵀ`. As `τ → 0` with distinct scores, `P`
//! becomes the sorting permutation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::s6::{s6_forward_recurrent, S6Params, TokenSequence};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    #[default]
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReorderParams {
    /// Learned direction, one entry per channel.
    pub k: Vec<f64>,
    pub tau: f64,
    pub p: f64,
    #[serde(default)]
    pub order: SortOrder,
}

impl ReorderParams {
    pub fn new(k: Vec<f64>) -> Self {
        ReorderParams {
            k,
            tau: 1.0,
            p: 1.0,
            order: SortOrder::Descending,
        }
    }

    pub fn tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn order(mut self, order: SortOrder) -> Self {
        self.order = order;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Argument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Argument(format!("p must be >= 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// `s_l = K · (S_Δ x_l)`.
pub fn importance_scores(s_delta: &Matrix, k: &[f64], x: &TokenSequence) -> Result<Vec<f64>> {
    if s_delta.rows() != k.len() {
        return Err(Error::Dimension(format!(
            "K has {} entries, S_Delta has {} rows",
            k.len(),
            s_delta.rows()
        )));
    }
    if s_delta.cols() != x.channels() {
        return Err(Error::Dimension(format!(
            "S_Delta has {} columns, tokens have {} channels",
            s_delta.cols(),
            x.channels()
        )));
    }
    // Kᵀ S_Δ x_l = (S_Δᵀ K) · x_l
    let direction = s_delta.transpose().matvec(k)?;
    Ok((0..x.len()).map(|l| dot(&direction, &x.token(l))).collect())
}

/// Sort permutation: `perm[i]` is the index of the `i`-th score in `order`.
/// Ties keep their original relative order.
pub fn sort_permutation(scores: &[f64], order: SortOrder) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    match order {
        SortOrder::Descending => perm.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
        SortOrder::Ascending => perm.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
    }
    perm
}

/// Row-stochastic soft permutation from SoftSort.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation {
    pub matrix: Matrix,
    /// The hard sort permutation the rows are centred on.
    pub sorted_index: Vec<usize>,
}

impl SoftPermutation {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    /// Column of the largest entry in each row.
    pub fn row_argmax(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| {
                self.matrix
                    .row(i)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(j, _)| j)
            })
            .collect()
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Dimension("no scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// SoftSort relaxation of the sort permutation of `scores`.
///
/// The distance is `|s_sorted,i - s_j|^p`; the absolute value keeps the
/// closest score winning for odd `p`.
pub fn softsort(scores: &[f64], params: &ReorderParams) -> Result<SoftPermutation> {
    check_scores(scores)?;
    params.validate()?;
    let n = scores.len();
    let perm = sort_permutation(scores, params.order);
    let mut data = vec![0.0; n * n];
    for (i, row) in data.chunks_mut(n).enumerate() {
        let anchor = scores[perm[i]];
        for (j, v) in row.iter_mut().enumerate() {
            *v = -(anchor - scores[j]).abs().powf(params.p) / params.tau;
        }
        softmax_in_place(row);
    }
    Ok(SoftPermutation {
        matrix: Matrix::from_row_major(n, n, data)?,
        sorted_index: perm,
    })
}

/// `x Pᵀ`: output token `i` is `Σ_j P_ij x_j`.
pub fn reorder_tokens(x: &TokenSequence, perm: &SoftPermutation) -> Result<TokenSequence> {
    let n = perm.len();
    if x.len() != n || perm.matrix.cols() != n {
        return Err(Error::Dimension(format!(
            "{} tokens for a {}x{} permutation",
            x.len(),
            n,
            perm.matrix.cols()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..x.channels())
        .map(|d| {
            let xd = x.channel(d);
            (0..n).map(|i| dot(perm.matrix.row(i), xd)).collect()
        })
        .collect();
    TokenSequence::from_channels(&rows)
}

/// Partial derivatives `dP_ij / ds_k` of [`softsort`], indexed
/// `[i][j][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSortJacobian {
    len: usize,
    data: Vec<f64>,
}

impl SoftSortJacobian {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.len + j) * self.len + k]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Chain rule: gradient of a scalar loss given `dL/dP`.
    pub fn pullback(&self, d_loss_d_p: &Matrix) -> Result<Vec<f64>> {
        let n = self.len;
        if d_loss_d_p.rows() != n || d_loss_d_p.cols() != n {
            return Err(Error::Dimension("dL/dP must match the permutation".into()));
        }
        let mut grad = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let w = d_loss_d_p[(i, j)];
                for (k, g) in grad.iter_mut().enumerate() {
                    *g += w * self.get(i, j, k);
                }
            }
        }
        Ok(grad)
    }
}

/// Analytic Jacobian of [`softsort`], holding the sort permutation fixed.
///
/// With `z_ij = -|u_ij|^p / τ`, `u_ij = s_π(i) - s_j`:
///
/// ```text
/// dz_ij/ds_k = -(p/τ) |u_ij|^{p-1} sign(u_ij) (δ_{π(i),k} - δ_{j,k})
/// dP_ij/ds_k = P_ij (dz_ij/ds_k - Σ_m P_im dz_im/ds_k)
/// ```
///
/// The entry `j = π(i)` has `z ≡ 0` and contributes nothing.
pub fn softsort_jacobian(scores: &[f64], params: &ReorderParams) -> Result<SoftSortJacobian> {
    check_scores(scores)?;
    params.validate()?;
    let n = scores.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if scores[i] == scores[j] {
                return Err(Error::DegeneratePoint(i, j));
            }
        }
    }
    let soft = softsort(scores, params)?;
    let perm = &soft.sorted_index;
    let mut data = vec![0.0; n * n * n];
    // dz[j][k] for the current row
    let mut dz = vec![0.0; n * n];
    for i in 0..n {
        let anchor = perm[i];
        dz.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            if j == anchor {
                continue;
            }
            let u = scores[anchor] - scores[j];
            let g = -(params.p / params.tau) * u.abs().powf(params.p - 1.0) * u.signum();
            dz[j * n + anchor] += g;
            dz[j * n + j] -= g;
        }
        let row = soft.matrix.row(i);
        for k in 0..n {
            let mean: f64 = (0..n).map(|m| row[m] * dz[m * n + k]).sum();
            for j in 0..n {
                data[(i * n + j) * n + k] = row[j] * (dz[j * n + k] - mean);
            }
        }
    }
    Ok(SoftSortJacobian { len: n, data })
}

/// Largest relative discrepancy between an analytic gradient and central
/// differences: `max_k |g_k - fd_k| / (1 + |fd_k|)`.
pub fn fd_gradcheck<F>(f: F, analytic: &[f64], point: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1e-9..=1e-3).contains(&eps) {
        return Err(Error::Argument(format!("eps must lie in [1e-9, 1e-3], got {eps}")));
    }
    if analytic.len() != point.len() {
        return Err(Error::Dimension("gradient and point differ in length".into()));
    }
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..point.len() {
        probe[k] = point[k] + eps;
        let up = f(&probe);
        probe[k] = point[k] - eps;
        let down = f(&probe);
        probe[k] = point[k];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[k] - numeric).abs() / (1.0 + numeric.abs()));
    }
    Ok(worst)
}

/// Scores, soft-sorts, reorders, then runs the recurrent scan.
pub fn reordered_s6_forward(
    params: &S6Params,
    rparams: &ReorderParams,
    x: &TokenSequence,
) -> Result<TokenSequence> {
    let scores = importance_scores(params.s_delta(), &rparams.k, x)?;
    let perm = softsort(&scores, rparams)?;
    let reordered = reorder_tokens(x, &perm)?;
    s6_forward_recurrent(params, &reordered)
}
