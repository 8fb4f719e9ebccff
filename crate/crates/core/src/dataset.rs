//! Sample-path datasets: `Q` paths observed at `M` shared time points in
//! `n` dimensions.

use ndarray::{Array3, ArrayView1, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Provenance carried along with a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    /// Generating process tag, e.g. `"ou"` or `"dubins"`.
    pub tag: String,
}

/// `Q` sample paths on a common strictly increasing time grid.
#[derive(Debug, Clone)]
pub struct PathDataset {
    times: Vec<f64>,
    /// `Q x M x n`.
    states: Array3<f64>,
    pub meta: DatasetMeta,
    /// Per-path divergence flags from the integrator (empty means none).
    pub diverged: Vec<bool>,
}

impl PathDataset {
    pub fn new(times: Vec<f64>, states: Array3<f64>, meta: DatasetMeta) -> Result<Self> {
        if times.is_empty() || states.shape()[0] == 0 {
            return Err(CoreError::EmptyInput("dataset needs Q >= 1, M >= 1".into()));
        }
        if states.shape()[1] != times.len() {
            return Err(CoreError::DimensionMismatch {
                expected: times.len(),
                got: states.shape()[1],
            });
        }
        if states.shape()[2] == 0 {
            return Err(CoreError::InvalidArgument("state dimension must be >= 1".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) || !times.iter().all(|t| t.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "times must be finite and strictly increasing".into(),
            ));
        }
        if !states.iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidArgument("states contain NaN/Inf".into()));
        }
        Ok(Self {
            times,
            states,
            meta,
            diverged: Vec::new(),
        })
    }

    pub fn n_paths(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> ArrayView3<f64> {
        self.states.view()
    }

    /// State of path `q` at time index `l`.
    pub fn state(&self, q: usize, l: usize) -> ArrayView1<f64> {
        self.states.slice(ndarray::s![q, l, ..])
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("times are non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn validates_shapes_and_grid() {
        let meta = DatasetMeta::default();
        let ok = PathDataset::new(
            vec![0.0, 1.0],
            Array3::zeros((3, 2, 1)),
            meta.clone(),
        );
        assert!(ok.is_ok());

        assert!(PathDataset::new(vec![1.0, 1.0], Array3::zeros((3, 2, 1)), meta.clone()).is_err());
        assert!(PathDataset::new(vec![0.0], Array3::zeros((3, 2, 1)), meta.clone()).is_err());
        let mut bad = Array3::zeros((1, 1, 1));
        bad[[0, 0, 0]] = f64::NAN;
        assert!(PathDataset::new(vec![0.0], bad, meta).is_err());
    }
}
