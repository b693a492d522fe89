//! The discrete S6 layer.
//!
//! A selective state-space layer maps a `D × L` token sequence to another
//! `D × L` sequence. Each channel `d` runs the scalar-decay recurrence
//!
//! ```text
//! h_dl = exp(-a_d Δ_d(x_l)) h_d(l-1) + Δ_d(x_l) (S_B x_l) x_dl,   h_d0 = 0
//! y_dl = (S_C x_l) · h_dl
//! ```
//!
//! with step size `Δ_d(u) = softplus(S_Δ,d · u)`. Unrolling the recurrence
//! gives the equivalent lower-triangular "hidden attention" form
//! `y_d = P_d x_d`, see [`hidden_attention`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// `ln(1 + e^u)` without overflow.
///
/// Evaluated as `max(u, 0) + ln(1 + e^{-|u|})`; the naive form overflows
/// once `u` passes about 710.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Deserialize)]
struct RawParams {
    a: Vec<f64>,
    s_delta: Matrix,
    s_b: Matrix,
    s_c: Matrix,
}

/// Learnable parameters of one S6 layer with scalar state matrices
/// `A_d = -a_d I_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct S6Params {
    a: Vec<f64>,
    s_delta: Matrix,
    s_b: Matrix,
    s_c: Matrix,
}

impl TryFrom<RawParams> for S6Params {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        S6Params::new(raw.a, raw.s_delta, raw.s_b, raw.s_c)
    }
}

impl S6Params {
    /// `a` has one positive entry per channel, `s_delta` is `D × D` (row `d`
    /// is `S_Δ,d`), and `s_b`, `s_c` are both `N × D`.
    pub fn new(a: Vec<f64>, s_delta: Matrix, s_b: Matrix, s_c: Matrix) -> Result<Self> {
        let d = a.len();
        if d == 0 {
            return Err(Error::Dimension("no channels".into()));
        }
        if let Some(bad) = a.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Argument(format!(
                "decay rates a_d must be positive and finite, got {bad}"
            )));
        }
        if s_delta.rows() != d || s_delta.cols() != d {
            return Err(Error::Dimension(format!(
                "S_Delta is {}x{}, expected {d}x{d}",
                s_delta.rows(),
                s_delta.cols()
            )));
        }
        if s_b.cols() != d || s_c.cols() != d || s_b.rows() != s_c.rows() {
            return Err(Error::Dimension(format!(
                "S_B is {}x{} and S_C is {}x{}, expected N x {d} for both",
                s_b.rows(),
                s_b.cols(),
                s_c.rows(),
                s_c.cols()
            )));
        }
        Ok(S6Params {
            a,
            s_delta,
            s_b,
            s_c,
        })
    }

    /// Single-channel layer with input-output scalar `mu = S_Cᵀ S_B`.
    ///
    /// Uses `N = 1`, `S_C = 1`, `S_B = mu`.
    pub fn scalar(mu: f64, s_delta: f64, a: f64) -> Result<Self> {
        S6Params::new(
            vec![a],
            Matrix::from_row_major(1, 1, vec![s_delta])?,
            Matrix::from_row_major(1, 1, vec![mu])?,
            Matrix::from_row_major(1, 1, vec![1.0])?,
        )
    }

    /// Layer with `N = D` whose input-output matrix `S_Cᵀ S_B` equals
    /// `input_output` (via `S_C = I`, `S_B = input_output`) and with the same
    /// decay `a` on every channel.
    pub fn with_input_output(input_output: Matrix, s_delta: Matrix, a: f64) -> Result<Self> {
        if !input_output.is_square() {
            return Err(Error::Dimension("input-output matrix must be square".into()));
        }
        let d = input_output.rows();
        S6Params::new(vec![a; d], s_delta, input_output, Matrix::identity(d))
    }

    pub fn channels(&self) -> usize {
        self.a.len()
    }

    pub fn state_size(&self) -> usize {
        self.s_b.rows()
    }

    pub fn decay(&self) -> &[f64] {
        &self.a
    }

    pub fn s_delta(&self) -> &Matrix {
        &self.s_delta
    }

    pub fn s_b(&self) -> &Matrix {
        &self.s_b
    }

    pub fn s_c(&self) -> &Matrix {
        &self.s_c
    }

    /// The `D × D` input-output matrix `S_Cᵀ S_B`.
    pub fn input_output(&self) -> Matrix {
        self.s_c
            .transpose()
            .matmul(&self.s_b)
            .expect("S_B and S_C share their row count")
    }

    /// `S_Cᵀ S_B` for a single-channel layer.
    pub fn mu(&self) -> Result<f64> {
        if self.channels() != 1 {
            return Err(Error::UnsupportedDimension(self.channels()));
        }
        Ok(self.input_output()[(0, 0)])
    }

    fn check_tokens(&self, x: &TokenSequence) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Dimension(format!(
                "sequence has {} channels, layer has {}",
                x.channels(),
                self.channels()
            )));
        }
        Ok(())
    }
}

/// A `D × L` block of token values; column `l` is token `x_l`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TokenSequence {
    channels: usize,
    len: usize,
    // channel-major: values[d * len + l]
    values: Vec<f64>,
}

impl TokenSequence {
    /// Builds a sequence from one row per channel.
    pub fn from_channels(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if channels == 0 || len == 0 {
            return Err(Error::Dimension(format!(
                "token sequence must be non-empty, got {channels} channels x {len} tokens"
            )));
        }
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::Dimension("channels have different lengths".into()));
        }
        let values = rows.concat();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token sequence"));
        }
        Ok(TokenSequence {
            channels,
            len,
            values,
        })
    }

    /// Single-channel sequence.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        TokenSequence::from_channels(&[values.to_vec()])
    }

    /// Builds a sequence from one vector per token.
    pub fn from_tokens(tokens: &[Vec<f64>]) -> Result<Self> {
        let len = tokens.len();
        let channels = tokens.first().map_or(0, Vec::len);
        if tokens.iter().any(|t| t.len() != channels) {
            return Err(Error::Dimension("tokens have different widths".into()));
        }
        let rows: Vec<Vec<f64>> = (0..channels)
            .map(|d| (0..len).map(|l| tokens[l][d]).collect())
            .collect();
        TokenSequence::from_channels(&rows)
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        assert!(channels >= 1 && len >= 1, "token sequence must be non-empty");
        TokenSequence {
            channels,
            len,
            values: vec![0.0; channels * len],
        }
    }

    pub(crate) fn from_flat_unchecked(channels: usize, len: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * len);
        TokenSequence {
            channels,
            len,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, d: usize, l: usize) -> f64 {
        self.values[d * self.len + l]
    }

    pub fn set(&mut self, d: usize, l: usize, v: f64) {
        self.values[d * self.len + l] = v;
    }

    /// Row `d` (all tokens of one channel).
    pub fn channel(&self, d: usize) -> &[f64] {
        &self.values[d * self.len..(d + 1) * self.len]
    }

    /// Column `l` as a length-`D` vector.
    pub fn token(&self, l: usize) -> Vec<f64> {
        (0..self.channels).map(|d| self.get(d, l)).collect()
    }

    pub fn tokens(&self) -> Vec<Vec<f64>> {
        (0..self.len).map(|l| self.token(l)).collect()
    }

    pub fn to_channels(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|d| self.channel(d).to_vec()).collect()
    }

    /// Channel-major flat storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Euclidean norm of every token.
    pub fn token_norms(&self) -> Vec<f64> {
        (0..self.len)
            .map(|l| {
                (0..self.channels)
                    .map(|d| self.get(d, l).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl std::fmt::Debug for TokenSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.to_channels()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for TokenSequence {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TokenSequence::from_channels(&rows)
    }
}

impl From<TokenSequence> for Vec<Vec<f64>> {
    fn from(x: TokenSequence) -> Self {
        x.to_channels()
    }
}

/// Per-channel step sizes `Δ_d(x_l) = softplus(S_Δ,d · x_l)` for one token.
pub fn delta(params: &S6Params, token: &[f64]) -> Result<Vec<f64>> {
    if token.len() != params.channels() {
        return Err(Error::Dimension(format!(
            "token has {} entries, layer has {} channels",
            token.len(),
            params.channels()
        )));
    }
    Ok((0..params.channels())
        .map(|d| softplus(dot(params.s_delta.row(d), token)))
        .collect())
}

/// Step sizes for the whole sequence, indexed `[d][l]`.
pub(crate) fn delta_table(params: &S6Params, x: &TokenSequence) -> Vec<Vec<f64>> {
    let per_token: Vec<Vec<f64>> = (0..x.len())
        .map(|l| delta(params, &x.token(l)).expect("channel count checked by caller"))
        .collect();
    (0..params.channels())
        .map(|d| per_token.iter().map(|t| t[d]).collect())
        .collect()
}

/// Input-dependent coefficients `Ā`, `B̄`, `C` of the recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedCoefficients {
    channels: usize,
    len: usize,
    abar: Vec<f64>,
    bbar: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl DiscretizedCoefficients {
    /// `Ā_dl = exp(-a_d Δ_d(x_l))`.
    pub fn abar(&self, d: usize, l: usize) -> f64 {
        self.abar[d * self.len + l]
    }

    /// `B̄_dl = Δ_d(x_l) S_B x_l`, length `N`.
    pub fn bbar(&self, d: usize, l: usize) -> &[f64] {
        &self.bbar[d * self.len + l]
    }

    /// `C_l = S_C x_l`, length `N`.
    pub fn c(&self, l: usize) -> &[f64] {
        &self.c[l]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub fn discretize(params: &S6Params, x: &TokenSequence) -> Result<DiscretizedCoefficients> {
    params.check_tokens(x)?;
    let (dd, len) = (x.channels(), x.len());
    let deltas = delta_table(params, x);
    let tokens = x.tokens();
    let b_x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| params.s_b.matvec(t).expect("checked"))
        .collect();
    let c: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| params.s_c.matvec(t).expect("checked"))
        .collect();

    let mut abar = Vec::with_capacity(dd * len);
    let mut bbar = Vec::with_capacity(dd * len);
    for (d, row) in deltas.iter().enumerate() {
        for (l, &step) in row.iter().enumerate() {
            abar.push((-params.a[d] * step).exp());
            bbar.push(b_x[l].iter().map(|v| step * v).collect());
        }
    }
    Ok(DiscretizedCoefficients {
        channels: dd,
        len,
        abar,
        bbar,
        c,
    })
}

/// Runs the recurrent scan, channels outer and sequence inner.
pub fn s6_forward_recurrent(params: &S6Params, x: &TokenSequence) -> Result<TokenSequence> {
    let coeffs = discretize(params, x)?;
    let n = params.state_size();
    let mut y = TokenSequence::zeros(x.channels(), x.len());
    let mut h = vec![0.0; n];
    for d in 0..x.channels() {
        h.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..x.len() {
            let decay = coeffs.abar(d, l);
            let input = x.get(d, l);
            for (hk, bk) in h.iter_mut().zip(coeffs.bbar(d, l)) {
                *hk = decay * *hk + bk * input;
            }
            y.set(d, l, dot(coeffs.c(l), &h));
        }
    }
    Ok(y)
}

/// Per-channel lower-triangular attention matrices `P_d`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenAttention {
    channels: usize,
    len: usize,
    // [d][l][j] flattened
    scores: Vec<f64>,
}

impl HiddenAttention {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `P_dlj`; zero for `j > l`.
    pub fn get(&self, d: usize, l: usize, j: usize) -> f64 {
        self.scores[(d * self.len + l) * self.len + j]
    }

    /// `P_d` as an `L × L` matrix.
    pub fn matrix(&self, d: usize) -> Matrix {
        let start = d * self.len * self.len;
        Matrix::from_row_major(
            self.len,
            self.len,
            self.scores[start..start + self.len * self.len].to_vec(),
        )
        .expect("attention scores are finite")
    }

    pub fn max_abs(&self) -> f64 {
        self.scores.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Applies `y_d = P_d x_d` to every channel.
    pub fn apply(&self, x: &TokenSequence) -> Result<TokenSequence> {
        if x.channels() != self.channels || x.len() != self.len {
            return Err(Error::Dimension("attention and sequence shapes differ".into()));
        }
        let mut y = TokenSequence::zeros(self.channels, self.len);
        for d in 0..self.channels {
            let xd = x.channel(d);
            for l in 0..self.len {
                let row = &self.scores[(d * self.len + l) * self.len..][..=l];
                y.set(d, l, dot(row, &xd[..=l]));
            }
        }
        Ok(y)
    }
}

impl std::fmt::Debug for HiddenAttention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries((0..self.channels).map(|d| self.matrix(d)))
            .finish()
    }
}

/// The hidden attention tensor obtained by eliminating the hidden states:
///
/// ```text
/// P_dll = x_lᵀ M x_l · Δ_d(x_l)
/// P_dlj = x_lᵀ M x_j · Δ_d(x_j) · exp(-a_d Σ_{k=j+1..l} Δ_d(x_k))   (l > j)
/// ```
///
/// where `M = S_Cᵀ S_B`.
pub fn hidden_attention(params: &S6Params, x: &TokenSequence) -> Result<HiddenAttention> {
    params.check_tokens(x)?;
    let input_output = params.input_output();
    Ok(attention_with(params, &input_output, x))
}

pub(crate) fn attention_with(
    params: &S6Params,
    input_output: &Matrix,
    x: &TokenSequence,
) -> HiddenAttention {
    let (dd, len) = (x.channels(), x.len());
    let tokens = x.tokens();
    let m_x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| input_output.matvec(t).expect("checked"))
        .collect();
    // gram[l][j] = x_lᵀ M x_j for j <= l
    let gram: Vec<Vec<f64>> = (0..len)
        .map(|l| (0..=l).map(|j| dot(&tokens[l], &m_x[j])).collect())
        .collect();
    let deltas = delta_table(params, x);

    let mut scores = vec![0.0; dd * len * len];
    for d in 0..dd {
        let a = params.a[d];
        let steps = &deltas[d];
        for j in 0..len {
            let base = (d * len + j) * len + j;
            scores[base] = gram[j][j] * steps[j];
            let mut decay_sum = 0.0;
            for l in (j + 1)..len {
                decay_sum += steps[l];
                scores[(d * len + l) * len + j] = gram[l][j] * steps[j] * (-a * decay_sum).exp();
            }
        }
    }
    HiddenAttention {
        channels: dd,
        len,
        scores,
    }
}

/// Convolutional form `y_d = P_d x_d`.
pub fn s6_forward_convolutional(params: &S6Params, x: &TokenSequence) -> Result<TokenSequence> {
    hidden_attention(params, x)?.apply(x)
}
