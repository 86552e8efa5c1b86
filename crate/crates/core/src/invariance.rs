//! Time-axis transforms used to randomize residuals.
//!
//! An invariance is a symmetric involution `P` (`P = Pᵀ`, `P² = I`) acting on
//! the time axis of a panel. The built-in kinds are applied as column
//! operations and never materialize the `T×T` matrix; arbitrary transforms can
//! be supplied as an explicit matrix and are validated on construction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for validating that a custom matrix is a symmetric involution.
const CUSTOM_TOL: f64 = 1e-10;

/// Which transform an [`Invariance`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvarianceKind {
    /// `P = -I`: each cluster of errors is sign-symmetric.
    Symmetry,
    /// Reverse the temporal order of the observations.
    TimeReversal,
    /// Swap each adjacent pair of times `(1,2), (3,4), …`; with an odd number
    /// of times the last one is paired with itself.
    LocalExchangeability,
    /// User-supplied symmetric involution.
    Custom,
}

impl std::fmt::Display for InvarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            InvarianceKind::Symmetry => "symmetry",
            InvarianceKind::TimeReversal => "time-reversal",
            InvarianceKind::LocalExchangeability => "local-exchangeability",
            InvarianceKind::Custom => "custom",
        };
        f.write_str(name)
    }
}

/// A symmetric involution on the time axis.
#[derive(Debug, Clone)]
pub struct Invariance {
    kind: InvarianceKind,
    t: usize,
    /// Present only for `Custom`.
    matrix: Option<DMatrix<f64>>,
}

impl Invariance {
    /// Build a structured invariance (`Symmetry`, `TimeReversal`, or
    /// `LocalExchangeability`) for `t` time periods.
    pub fn new(kind: InvarianceKind, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidInvariance(
                "time dimension must be at least 1".into(),
            ));
        }
        if kind == InvarianceKind::Custom {
            return Err(Error::InvalidInvariance(
                "custom invariances require a matrix; use Invariance::custom".into(),
            ));
        }
        Ok(Self {
            kind,
            t,
            matrix: None,
        })
    }

    pub fn symmetry(t: usize) -> Result<Self> {
        Self::new(InvarianceKind::Symmetry, t)
    }

    pub fn time_reversal(t: usize) -> Result<Self> {
        Self::new(InvarianceKind::TimeReversal, t)
    }

    pub fn local_exchangeability(t: usize) -> Result<Self> {
        Self::new(InvarianceKind::LocalExchangeability, t)
    }

    /// Build a custom invariance from an explicit matrix, verifying that it
    /// is square, symmetric, and an involution to within `1e-10`.
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        let t = matrix.nrows();
        if t == 0 || matrix.ncols() != t {
            return Err(Error::InvalidInvariance(format!(
                "custom matrix must be square and nonempty (got {}x{})",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..t {
            for j in (i + 1)..t {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > CUSTOM_TOL {
                    return Err(Error::InvalidInvariance(format!(
                        "custom matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let square = &matrix * &matrix;
        for i in 0..t {
            for j in 0..t {
                let target = if i == j { 1.0 } else { 0.0 };
                if (square[(i, j)] - target).abs() > CUSTOM_TOL {
                    return Err(Error::InvalidInvariance(format!(
                        "custom matrix is not an involution: (P^2)[{i},{j}] = {}",
                        square[(i, j)]
                    )));
                }
            }
        }
        Ok(Self {
            kind: InvarianceKind::Custom,
            t,
            matrix: Some(matrix),
        })
    }

    pub fn kind(&self) -> InvarianceKind {
        self.kind
    }

    /// Time dimension this invariance acts on.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Apply the transform to the time axis of `a`, returning `a · P`.
    ///
    /// `a` has one column per time period; structured kinds use column
    /// negation or permutation instead of a matrix multiply.
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != self.t {
            return Err(Error::DimensionMismatch(format!(
                "invariance acts on {} time periods but the matrix has {} columns",
                self.t,
                a.ncols()
            )));
        }
        Ok(match self.kind {
            InvarianceKind::Symmetry => -a,
            InvarianceKind::TimeReversal => {
                let mut out = a.clone_owned();
                for j in 0..self.t {
                    out.set_column(j, &a.column(self.t - 1 - j));
                }
                out
            }
            InvarianceKind::LocalExchangeability => {
                let mut out = a.clone_owned();
                let mut j = 0;
                while j + 1 < self.t {
                    out.set_column(j, &a.column(j + 1));
                    out.set_column(j + 1, &a.column(j));
                    j += 2;
                }
                out
            }
            InvarianceKind::Custom => a * self.matrix.as_ref().expect("custom matrix present"),
        })
    }

    /// Materialize the transform as a dense `T×T` matrix.
    pub fn as_dense(&self) -> DMatrix<f64> {
        match self.kind {
            InvarianceKind::Custom => self.matrix.as_ref().expect("custom matrix present").clone(),
            _ => {
                let eye = DMatrix::<f64>::identity(self.t, self.t);
                self.apply(&eye).expect("identity has T columns")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::RowDVector;

    fn row(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_rows(&[RowDVector::from_row_slice(values)])
    }

    #[test]
    fn symmetry_negates_and_is_involutive() {
        let inv = Invariance::symmetry(3).unwrap();
        let a = row(&[1.0, -2.0, 0.5]);
        let once = inv.apply(&a).unwrap();
        assert_eq!(once, -&a);
        let twice = inv.apply(&once).unwrap();
        assert_eq!(twice, a);
    }

    #[test]
    fn time_reversal_reverses() {
        let inv = Invariance::time_reversal(5).unwrap();
        let a = row(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let out = inv.apply(&a).unwrap();
        assert_eq!(out, row(&[5.0, 4.0, 3.0, 2.0, 1.0]));
    }

    #[test]
    fn local_exchangeability_swaps_pairs_even_t() {
        let inv = Invariance::local_exchangeability(6).unwrap();
        let a = row(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = inv.apply(&a).unwrap();
        assert_eq!(out, row(&[2.0, 1.0, 4.0, 3.0, 6.0, 5.0]));
    }

    #[test]
    fn local_exchangeability_fixes_last_odd_t() {
        let inv = Invariance::local_exchangeability(3).unwrap();
        let a = row(&[10.0, 20.0, 30.0]);
        let out = inv.apply(&a).unwrap();
        assert_eq!(out, row(&[20.0, 10.0, 30.0]));
    }

    #[test]
    fn local_exchangeability_t4_row() {
        let inv = Invariance::local_exchangeability(4).unwrap();
        let a = row(&[1.5, -2.0, 7.0, 0.25]);
        let out = inv.apply(&a).unwrap();
        assert_eq!(out, row(&[-2.0, 1.5, 0.25, 7.0]));
    }

    #[test]
    fn structured_matches_dense_multiply() {
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for t in [1usize, 2, 5, 6, 7] {
            let a = DMatrix::from_fn(4, t, |_, _| next());
            for inv in [
                Invariance::symmetry(t).unwrap(),
                Invariance::time_reversal(t).unwrap(),
                Invariance::local_exchangeability(t).unwrap(),
            ] {
                let structured = inv.apply(&a).unwrap();
                let dense = &a * inv.as_dense();
                assert_relative_eq!(structured, dense, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn custom_accepts_valid_and_rejects_invalid() {
        // Swap of two coordinates is a symmetric involution.
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let inv = Invariance::custom(swap).unwrap();
        let a = row(&[3.0, 4.0]);
        assert_eq!(inv.apply(&a).unwrap(), row(&[4.0, 3.0]));

        let not_symmetric = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(matches!(
            Invariance::custom(not_symmetric),
            Err(Error::InvalidInvariance(_))
        ));

        // Symmetric but not an involution.
        let not_involutive = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        assert!(matches!(
            Invariance::custom(not_involutive),
            Err(Error::InvalidInvariance(_))
        ));
    }

    #[test]
    fn apply_rejects_wrong_width() {
        let inv = Invariance::symmetry(4).unwrap();
        let a = row(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            inv.apply(&a),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn bilinear_symmetry_identity() {
        // <A·P, B> = <A, B·P> for every kind.
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, -3.0]);
        let b = DMatrix::from_row_slice(2, 4, &[0.3, -0.7, 1.1, 0.9, 2.0, -2.0, 0.0, 1.0]);
        for inv in [
            Invariance::symmetry(4).unwrap(),
            Invariance::time_reversal(4).unwrap(),
            Invariance::local_exchangeability(4).unwrap(),
        ] {
            let lhs = inv.apply(&a).unwrap().dot(&b);
            let rhs = a.dot(&inv.apply(&b).unwrap());
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }
}
