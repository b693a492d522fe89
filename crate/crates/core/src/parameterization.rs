//! Input/output matrices with a prescribed eigenvalue sign pattern.
//!
//! Writing `S_C = Lᵀ` and `S_B = D Lᵀ` with `L` unit lower-triangular and
//! `D = diag(signs ⊙ softplus(d_raw))` gives `S_Cᵀ S_B = L D Lᵀ`. By
//! Sylvester's law of inertia its eigenvalues carry exactly the signs in
//! `signs`, whatever the free entries of `L` and `d_raw` are.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, sym_part, Matrix};
use crate::s6::softplus;

/// Lower bound applied to `d_raw` before the softplus.
pub const D_RAW_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRegime {
    Positive,
    Negative,
    /// `⌈D/2⌉` positive entries followed by `⌊D/2⌋` negative ones.
    Mixed,
}

impl SignRegime {
    pub fn signs(self, dim: usize) -> Vec<i8> {
        match self {
            SignRegime::Positive => vec![1; dim],
            SignRegime::Negative => vec![-1; dim],
            SignRegime::Mixed => (0..dim)
                .map(|i| if i < dim.div_ceil(2) { 1 } else { -1 })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdlFactors {
    /// Unit lower-triangular; only the strictly lower entries are free.
    pub l_unit: Matrix,
    pub d_raw: Vec<f64>,
    pub signs: Vec<i8>,
}

impl LdlFactors {
    /// Builds factors from the strictly lower part of `lower` (the diagonal
    /// is set to 1 and the upper part ignored).
    pub fn from_lower(lower: &Matrix, d_raw: Vec<f64>, signs: Vec<i8>) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::Dimension("L must be square".into()));
        }
        let n = lower.rows();
        let mut l_unit = Matrix::identity(n);
        for i in 0..n {
            for j in 0..i {
                l_unit[(i, j)] = lower[(i, j)];
            }
        }
        let f = LdlFactors {
            l_unit,
            d_raw,
            signs,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.l_unit.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.l_unit.rows();
        if !self.l_unit.is_square() {
            return Err(Error::Dimension("L must be square".into()));
        }
        if self.d_raw.len() != n || self.signs.len() != n {
            return Err(Error::Dimension(format!(
                "L is {n}x{n} but d_raw has {} and signs {} entries",
                self.d_raw.len(),
                self.signs.len()
            )));
        }
        if let Some(s) = self.signs.iter().find(|s| !matches!(s, 1 | -1)) {
            return Err(Error::Argument(format!("sign entries must be +1 or -1, got {s}")));
        }
        if self.d_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("d_raw"));
        }
        for i in 0..n {
            if self.l_unit[(i, i)] != 1.0 {
                return Err(Error::Argument(format!("L[{i}][{i}] must be 1")));
            }
            for j in (i + 1)..n {
                if self.l_unit[(i, j)] != 0.0 {
                    return Err(Error::Argument(format!("L[{i}][{j}] above the diagonal")));
                }
            }
        }
        Ok(())
    }

    /// Signed diagonal `signs ⊙ softplus(max(d_raw, -30))`.
    pub fn diagonal(&self) -> Vec<f64> {
        self.d_raw
            .iter()
            .zip(&self.signs)
            .map(|(&d, &s)| f64::from(s) * softplus(d.max(D_RAW_FLOOR)))
            .collect()
    }
}

/// Returns `(S_B, S_C) = (D Lᵀ, Lᵀ)`, both `D × D`.
pub fn ldl_build(factors: &LdlFactors) -> Result<(Matrix, Matrix)> {
    factors.validate()?;
    let s_c = factors.l_unit.transpose();
    let s_b = Matrix::from_diag(&factors.diagonal())?.matmul(&s_c)?;
    Ok((s_b, s_c))
}

/// Signs of the eigenvalues of `sym_part(S_Cᵀ S_B)`, in descending eigenvalue
/// order. Eigenvalues below `1e-12 · ‖·‖_F` in magnitude are reported as 0.
pub fn spectrum_signs(s_b: &Matrix, s_c: &Matrix) -> Result<Vec<i8>> {
    let m = s_c.transpose().matmul(s_b)?;
    if !m.is_square() {
        return Err(Error::Dimension("S_Cᵀ S_B must be square".into()));
    }
    signs_of(&sym_part(&m)?)
}

/// Eigenvalue signs of an already symmetric matrix.
pub fn signs_of(sym: &Matrix) -> Result<Vec<i8>> {
    let zero = 1e-12 * sym.frobenius_norm();
    Ok(eigh(sym)?
        .eigenvalues
        .iter()
        .map(|&v| {
            if v > zero {
                1
            } else if v < -zero {
                -1
            } else {
                0
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_positive() {
        let f = LdlFactors::from_lower(&Matrix::identity(1), vec![0.0], vec![1]).unwrap();
        let (s_b, s_c) = ldl_build(&f).unwrap();
        let m = s_c.transpose().matmul(&s_b).unwrap();
        assert!((m[(0, 0)] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_by_hand() {
        // softplus(d_raw) = (1, 2)
        let d_raw = vec![(1.0f64.exp() - 1.0).ln(), (2.0f64.exp() - 1.0).ln()];
        let lower = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0]]).unwrap();
        let f = LdlFactors::from_lower(&lower, d_raw, vec![1, 1]).unwrap();
        let (s_b, s_c) = ldl_build(&f).unwrap();
        let m = s_c.transpose().matmul(&s_b).unwrap();
        let expected = [[1.0, 0.5], [0.5, 2.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[(i, j)] - expected[i][j]).abs() < 1e-14);
            }
        }
        assert_eq!(spectrum_signs(&s_b, &s_c).unwrap(), vec![1, 1]);
    }

    #[test]
    fn rejects_bad_signs_and_shapes() {
        let l = Matrix::identity(2);
        assert!(matches!(
            LdlFactors::from_lower(&l, vec![0.0, 0.0], vec![1, 0]),
            Err(Error::Argument(_))
        ));
        assert!(LdlFactors::from_lower(&l, vec![0.0], vec![1, 1]).is_err());
        let bad = LdlFactors {
            l_unit: Matrix::from_rows(&[vec![1.0, 0.3], vec![0.0, 1.0]]).unwrap(),
            d_raw: vec![0.0, 0.0],
            signs: vec![1, 1],
        };
        assert!(ldl_build(&bad).is_err());
    }

    #[test]
    fn regime_patterns() {
        assert_eq!(SignRegime::Mixed.signs(5), vec![1, 1, 1, -1, -1]);
        assert_eq!(SignRegime::Negative.signs(2), vec![-1, -1]);
    }

    #[test]
    fn floor_keeps_diagonal_away_from_zero() {
        let f = LdlFactors::from_lower(&Matrix::identity(2), vec![-500.0, 3.0], vec![1, -1]).unwrap();
        let diag = f.diagonal();
        assert!(diag[0] >= softplus(D_RAW_FLOOR));
        assert!(diag[1] < 0.0);
    }
}
