use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lower, upper]` of one scheduling variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Per-variable bounds of a scheduling vector, in declared order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchedulingBounds(pub Vec<Interval>);

impl SchedulingBounds {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        let b = Self(intervals);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("scheduling bounds are empty".into()));
        }
        for (j, iv) in self.0.iter().enumerate() {
            if !(iv.lower.is_finite() && iv.upper.is_finite() && iv.lower < iv.upper) {
                return Err(Error::Config(format!(
                    "scheduling variable {j}: degenerate bound [{}, {}] (need lower < upper)",
                    iv.lower, iv.upper
                )));
            }
        }
        Ok(())
    }

    /// Number of scheduling variables `r`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `2^r`.
    pub fn vertex_count(&self) -> usize {
        1 << self.0.len()
    }

    /// Extreme scheduling combination of vertex `i`: bit `j` of `i` picks the
    /// lower (0) or upper (1) end of variable `j`.
    pub fn vertex(&self, i: usize) -> SchedulingPoint {
        let values = self
            .0
            .iter()
            .enumerate()
            .map(|(j, iv)| if (i >> j) & 1 == 0 { iv.lower } else { iv.upper })
            .collect();
        SchedulingPoint::new(values)
    }

    pub fn midpoint(&self) -> SchedulingPoint {
        SchedulingPoint::new(self.0.iter().map(Interval::midpoint).collect())
    }

    pub fn clamp(&self, point: &SchedulingPoint) -> SchedulingPoint {
        SchedulingPoint::new(point.values.iter().zip(&self.0).map(|(&x, iv)| iv.clamp(x)).collect())
    }

    pub fn weights(&self, point: &SchedulingPoint) -> MembershipWeights {
        membership_weights(point, self)
    }
}

/// Values of the scheduling variables at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchedulingPoint {
    pub values: Vec<f64>,
}

impl SchedulingPoint {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }
}

impl From<[f64; 3]> for SchedulingPoint {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v.to_vec())
    }
}

/// Convex vertex weights at one scheduling point.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipWeights {
    pub weights: Vec<f64>,
}

impl MembershipWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_i mu_i * M_i`.
    pub fn blend(&self, mats: &[DMatrix<f64>]) -> DMatrix<f64> {
        assert_eq!(mats.len(), self.weights.len(), "vertex count mismatch");
        let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
        for (w, m) in self.weights.iter().zip(mats) {
            if *w != 0.0 {
                out.zip_apply(m, |a, b| *a += *w * b);
            }
        }
        out
    }
}

/// Product-of-eta membership functions. Values outside the bounds are saturated first.
///
/// For variable `j`, `eta0 = (upper - rho) / (upper - lower)` and `eta1 = 1 - eta0`;
/// vertex `i` takes `eta1` where bit `j` of `i` is set and `eta0` otherwise.
pub fn membership_weights(point: &SchedulingPoint, bounds: &SchedulingBounds) -> MembershipWeights {
    assert_eq!(point.values.len(), bounds.len(), "scheduling point dimension does not match bounds");
    let eta: Vec<(f64, f64)> = point
        .values
        .iter()
        .zip(&bounds.0)
        .map(|(&x, iv)| {
            let x = iv.clamp(x);
            let e0 = (iv.upper - x) / (iv.upper - iv.lower);
            (e0, 1.0 - e0)
        })
        .collect();
    let weights = (0..bounds.vertex_count())
        .map(|i| {
            eta.iter().enumerate().map(|(j, &(e0, e1))| if (i >> j) & 1 == 0 { e0 } else { e1 }).product()
        })
        .collect();
    MembershipWeights { weights }
}
