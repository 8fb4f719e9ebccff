//! Time-state(-control) points.
//!
//! A point is `z = (t, x)` for the uncontrolled pipeline and `z = (t, x, v)`
//! with an appended control value for the controlled one. Kernels treat the
//! flat coordinate vector isotropically; derivative operators act on the
//! state block only.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A single evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub t: f64,
    pub x: Vec<f64>,
    /// Control value, present only in the controlled pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
}

impl Point {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Self { t, x, v: None }
    }

    pub fn with_control(t: f64, x: Vec<f64>, v: Vec<f64>) -> Self {
        Self { t, x, v: Some(v) }
    }

    pub fn n_state(&self) -> usize {
        self.x.len()
    }

    pub fn n_ctrl(&self) -> usize {
        self.v.as_ref().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.t.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.v.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::InvalidArgument(
                "point has non-finite coordinates".into(),
            ));
        }
        if self.x.is_empty() {
            return Err(CoreError::EmptyInput("point needs a state of dim >= 1".into()));
        }
        Ok(())
    }
}

/// A batch of points stored as flat coordinate rows `(t, x_1..x_n, v_1..v_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Array2<f64>,
    n_state: usize,
    n_ctrl: usize,
}

impl PointSet {
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| CoreError::EmptyInput("point set is empty".into()))?;
        first.validate()?;
        let (n, d) = (first.n_state(), first.n_ctrl());
        let dim = 1 + n + d;
        let mut coords = Array2::zeros((points.len(), dim));
        for (i, p) in points.iter().enumerate() {
            p.validate()?;
            if p.n_state() != n || p.n_ctrl() != d {
                return Err(CoreError::DimensionMismatch {
                    expected: dim,
                    got: 1 + p.n_state() + p.n_ctrl(),
                });
            }
            coords[[i, 0]] = p.t;
            for (j, v) in p.x.iter().enumerate() {
                coords[[i, 1 + j]] = *v;
            }
            for (j, v) in p.v.iter().flatten().enumerate() {
                coords[[i, 1 + n + j]] = *v;
            }
        }
        Ok(Self {
            coords,
            n_state: n,
            n_ctrl: d,
        })
    }

    /// Builds a set from raw flat coordinates (rows `(t, x.., v..)`).
    pub fn from_coords(coords: Array2<f64>, n_state: usize, n_ctrl: usize) -> Result<Self> {
        if coords.ncols() != 1 + n_state + n_ctrl {
            return Err(CoreError::DimensionMismatch {
                expected: 1 + n_state + n_ctrl,
                got: coords.ncols(),
            });
        }
        if n_state == 0 {
            return Err(CoreError::InvalidArgument("state dimension must be >= 1".into()));
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "point coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            coords,
            n_state,
            n_ctrl,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    /// Total flat dimension `1 + n + d`.
    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> ArrayView2<f64> {
        self.coords.view()
    }

    /// Flat coordinate row of point `i`.
    pub fn row(&self, i: usize) -> ArrayView1<f64> {
        self.coords.row(i)
    }

    pub fn t(&self, i: usize) -> f64 {
        self.coords[[i, 0]]
    }

    /// Column index of state coordinate `i` in the flat layout.
    pub fn state_col(i: usize) -> usize {
        1 + i
    }

    pub fn point(&self, i: usize) -> Point {
        let row = self.coords.row(i);
        let x = row.slice(ndarray::s![1..1 + self.n_state]).to_vec();
        let v = if self.n_ctrl > 0 {
            Some(row.slice(ndarray::s![1 + self.n_state..]).to_vec())
        } else {
            None
        };
        Point {
            t: row[0],
            x,
            v,
        }
    }

    /// Checks that another set lives in the same space.
    pub fn compatible(&self, other: &PointSet) -> Result<()> {
        if self.n_state != other.n_state || self.n_ctrl != other.n_ctrl {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    /// Subset by indices (used by Nystroem anchors and constraint subsets).
    pub fn select(&self, idx: &[usize]) -> PointSet {
        let mut coords = Array2::zeros((idx.len(), self.dim()));
        for (r, &i) in idx.iter().enumerate() {
            coords.row_mut(r).assign(&self.coords.row(i));
        }
        PointSet {
            coords,
            n_state: self.n_state,
            n_ctrl: self.n_ctrl,
        }
    }
}
