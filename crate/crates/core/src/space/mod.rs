//! Weighted sequence spaces `X = l2(lambda) ⊂ H = l2 ⊂ X* = l2(1/lambda)` at
//! finite truncation, together with the finitely based test functions that
//! act on them.

mod family;
mod generator;
mod nfunction;
mod testfn;

pub use family::{separating_family, FamilySpec};
pub use generator::{apply_l, generator};
pub(crate) use generator::apply_l_raw;
pub use nfunction::NFunction;
pub use testfn::{bump_profile, FinitelyBasedFunction, Profile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the three norms of the triple to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    X,
    H,
    XStar,
}

/// The weights `lambda_i` of the Gelfand triple, truncated at `n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriple", into = "RawTriple")]
pub struct SpaceTriple {
    weights: Vec<f64>,
    n_max: usize,
    monotone_from: usize,
}

#[derive(Serialize, Deserialize)]
struct RawTriple {
    lambda: Vec<f64>,
    n_max: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    monotone_from: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl TryFrom<RawTriple> for SpaceTriple {
    type Error = Error;

    fn try_from(raw: RawTriple) -> Result<Self> {
        SpaceTriple::with_monotone_from(raw.lambda, raw.n_max, raw.monotone_from)
    }
}

impl From<SpaceTriple> for RawTriple {
    fn from(s: SpaceTriple) -> Self {
        RawTriple {
            lambda: s.weights,
            n_max: s.n_max,
            monotone_from: s.monotone_from,
        }
    }
}

impl SpaceTriple {
    /// Weights must be finite, nonnegative and non-decreasing.
    pub fn new(weights: Vec<f64>, n_max: usize) -> Result<Self> {
        Self::with_monotone_from(weights, n_max, 0)
    }

    /// Like [`SpaceTriple::new`], but monotonicity is only required from index
    /// `monotone_from` (0-based) onwards.
    pub fn with_monotone_from(weights: Vec<f64>, n_max: usize, monotone_from: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        if weights.len() < n_max {
            return Err(Error::Dimension(format!(
                "{} weights supplied for n_max = {n_max}",
                weights.len()
            )));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidParameter(format!("lambda_{} = {w} is not a finite nonnegative weight", i + 1)));
        }
        let tail = &weights[monotone_from.min(weights.len())..];
        if tail.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(format!(
                "weights must be non-decreasing from index {}",
                monotone_from + 1
            )));
        }
        Ok(SpaceTriple {
            weights,
            n_max,
            monotone_from,
        })
    }

    /// `lambda_i = 1` for all i, so that all three norms coincide.
    pub fn flat(n_max: usize) -> Result<Self> {
        Self::new(vec![1.0; n_max], n_max)
    }

    /// `lambda_i = i^power`, the usual compact-embedding weights.
    pub fn polynomial(n_max: usize, power: f64) -> Result<Self> {
        Self::new((1..=n_max).map(|i| (i as f64).powf(power)).collect(), n_max)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights[..self.n_max]
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `Pi_n z = (z^1, ..., z^n)`.
    pub fn project(&self, z: &[f64], n: usize) -> Result<Vec<f64>> {
        if n == 0 || n > self.n_max {
            return Err(Error::Dimension(format!("truncation {n} outside 1..={}", self.n_max)));
        }
        if z.len() < n {
            return Err(Error::Dimension(format!("vector of length {} cannot be projected to H_{n}", z.len())));
        }
        Ok(z[..n].to_vec())
    }

    pub fn norm(&self, z: &[f64], which: Norm) -> Result<f64> {
        self.norm_squared(z, which).map(f64::sqrt)
    }

    pub fn norm_squared(&self, z: &[f64], which: Norm) -> Result<f64> {
        if z.len() > self.n_max {
            return Err(Error::Dimension(format!("vector of length {} exceeds n_max = {}", z.len(), self.n_max)));
        }
        let mut acc = 0.0;
        for (i, (&zi, &li)) in z.iter().zip(&self.weights).enumerate() {
            acc += match which {
                Norm::H => zi * zi,
                Norm::X => li * zi * zi,
                Norm::XStar => {
                    if zi == 0.0 {
                        0.0
                    } else if li == 0.0 {
                        return Err(Error::SingularWeight { index: i + 1, value: zi });
                    } else {
                        zi * zi / li
                    }
                }
            };
        }
        Ok(acc)
    }

    /// The dual pairing `<z, v> = sum z^i v^i`.
    pub fn pairing(z: &[f64], v: &[f64]) -> f64 {
        z.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_h_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn project_truncates() {
        let s = SpaceTriple::polynomial(4, 1.0).unwrap();
        assert_eq!(s.project(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(s.project(&[0.0; 4], 3).unwrap(), vec![0.0; 3]);
        assert!(matches!(s.project(&[1.0; 4], 5), Err(Error::Dimension(_))));
        assert!(matches!(s.project(&[1.0; 4], 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn projected_dual_norm() {
        let s = SpaceTriple::new(vec![1.0, 2.0, 3.0, 4.0], 4).unwrap();
        let z = [1.0; 4];
        let p = s.project(&z, 2).unwrap();
        let lhs = s.norm_squared(&p, Norm::XStar).unwrap();
        assert!((lhs - 1.5).abs() < 1e-15);
        let rhs = s.norm_squared(&z, Norm::XStar).unwrap();
        assert!((rhs - (1.0 + 0.5 + 1.0 / 3.0 + 0.25)).abs() < 1e-15);
        assert!(lhs <= rhs);
    }

    #[test]
    fn norm_examples() {
        let s = SpaceTriple::new(vec![1.0, 4.0], 2).unwrap();
        assert!((s.norm(&[1.0, 1.0], Norm::X).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!((s.norm(&[2.0, 2.0], Norm::XStar).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!((s.norm(&[3.0, 4.0], Norm::H).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_is_singular_only_for_nonzero_coordinates() {
        let s = SpaceTriple::new(vec![0.0, 1.0], 2).unwrap();
        assert_eq!(s.norm(&[0.0, 2.0], Norm::XStar).unwrap(), 2.0);
        assert_eq!(
            s.norm(&[1.0, 2.0], Norm::XStar),
            Err(Error::SingularWeight { index: 1, value: 1.0 })
        );
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(SpaceTriple::new(vec![1.0, -1.0], 2).is_err());
        assert!(SpaceTriple::new(vec![1.0, f64::INFINITY], 2).is_err());
        assert!(SpaceTriple::new(vec![2.0, 1.0], 2).is_err());
        assert!(SpaceTriple::with_monotone_from(vec![2.0, 1.0, 3.0], 3, 1).is_ok());
        assert!(SpaceTriple::new(vec![1.0], 0).is_err());
        assert!(SpaceTriple::new(vec![1.0], 2).is_err());
    }

    #[test]
    fn json_shape() {
        let s: SpaceTriple = serde_json::from_str(r#"{"lambda": [1.0, 4.0, 9.0], "n_max": 3}"#).unwrap();
        assert_eq!(s.weights(), &[1.0, 4.0, 9.0]);
        let back = serde_json::to_string(&s).unwrap();
        assert_eq!(back, r#"{"lambda":[1.0,4.0,9.0],"n_max":3}"#);
        assert!(serde_json::from_str::<SpaceTriple>(r#"{"lambda": [1.0, -4.0], "n_max": 2}"#).is_err());
    }

    proptest! {
        #[test]
        fn projection_contracts_and_is_idempotent(
            z in proptest::collection::vec(-1e3f64..1e3, 8),
            n in 1usize..=8,
        ) {
            let s = SpaceTriple::polynomial(8, 2.0).unwrap();
            let p = s.project(&z, n).unwrap();
            prop_assert!(s.norm(&p, Norm::XStar).unwrap() <= s.norm(&z, Norm::XStar).unwrap());
            prop_assert_eq!(s.project(&p, n).unwrap(), p);
        }
    }
}
