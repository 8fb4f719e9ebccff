//! Step 1: nonparametric estimation of the time-indexed density `p(t, x)`
//! from sample paths.
//!
//! The estimator is the closed form
//!
//! ```text
//! p(t, x) = k_t(t)^T K_t^{-1} g(x),     g_l(x) = (1/Q) sum_q rho(x, X_ql)
//! ```
//!
//! with a Gaussian temporal kernel `k_t(t,t') = exp(-nu (t-t')^2)` on the
//! training grid and the normalized smoother
//! `rho(x, y) = mu^n (2 pi)^{-n/2} exp(-mu^2/2 ||x-y||^2)`. Spatial and
//! temporal derivatives come from differentiating the same closed form, so
//! a single prediction pass returns `p`, its gradient, its Hessian and
//! `dp/dt` aligned to the evaluation points.

use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;

use crate::dataset::PathDataset;
use crate::error::{CoreError, Result};
use crate::fastmath;
use crate::kernel::temporal_gram;
use crate::linalg::CholFactor;
use crate::points::PointSet;

/// Density values below this floor are clamped in log-likelihoods; the
/// temporal interpolation can push the estimator slightly negative.
pub const LOG_DENSITY_FLOOR: f64 = 1e-12;

/// Fitted Step-1 estimator.
#[derive(Debug, Clone)]
pub struct DensityModel {
    nu: f64,
    mu: f64,
    kt_factor: CholFactor,
    train: Arc<PathDataset>,
}

/// Density values and derivatives at a batch of evaluation points.
///
/// Shapes: `p`, `dt` are length-`N`; `dx` is `N x n`; `dxx` is `N x n x n`
/// with symmetric per-point Hessians. When a prediction is made without
/// derivatives the derivative arrays are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEvaluation {
    pub p: Array1<f64>,
    pub dx: Array2<f64>,
    pub dxx: Array3<f64>,
    pub dt: Array1<f64>,
}

impl DensityEvaluation {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn has_derivs(&self) -> bool {
        !self.dx.is_empty()
    }

    /// Row subset aligned with `PointSet::select`.
    pub fn select(&self, idx: &[usize]) -> DensityEvaluation {
        let n = self.dx.ncols();
        let mut p = Array1::zeros(idx.len());
        let mut dt = Array1::zeros(idx.len());
        let mut dx = Array2::zeros((idx.len(), n));
        let mut dxx = Array3::zeros((idx.len(), n, n));
        for (r, &i) in idx.iter().enumerate() {
            p[r] = self.p[i];
            if self.has_derivs() {
                dt[r] = self.dt[i];
                dx.row_mut(r).assign(&self.dx.row(i));
                dxx.slice_mut(ndarray::s![r, .., ..])
                    .assign(&self.dxx.slice(ndarray::s![i, .., ..]));
            }
        }
        if !self.has_derivs() {
            dx = Array2::zeros((0, 0));
            dxx = Array3::zeros((0, 0, 0));
            dt = Array1::zeros(0);
        }
        DensityEvaluation { p, dx, dxx, dt }
    }

    /// Concatenates evaluations (used when stacking per-control blocks).
    pub fn concat(parts: &[DensityEvaluation]) -> Result<DensityEvaluation> {
        let first = parts
            .first()
            .ok_or_else(|| CoreError::EmptyInput("no evaluations to concatenate".into()))?;
        let n = first.dx.ncols();
        let total: usize = parts.iter().map(|e| e.len()).sum();
        let mut p = Array1::zeros(total);
        let mut dt = Array1::zeros(total);
        let mut dx = Array2::zeros((total, n));
        let mut dxx = Array3::zeros((total, n, n));
        let mut at = 0;
        for e in parts {
            if e.has_derivs() != first.has_derivs() || e.dx.ncols() != n {
                return Err(CoreError::InvalidArgument(
                    "evaluations have mismatched shapes".into(),
                ));
            }
            let k = e.len();
            p.slice_mut(ndarray::s![at..at + k]).assign(&e.p);
            if e.has_derivs() {
                dt.slice_mut(ndarray::s![at..at + k]).assign(&e.dt);
                dx.slice_mut(ndarray::s![at..at + k, ..]).assign(&e.dx);
                dxx.slice_mut(ndarray::s![at..at + k, .., ..]).assign(&e.dxx);
            }
            at += k;
        }
        if !first.has_derivs() {
            dx = Array2::zeros((0, 0));
            dxx = Array3::zeros((0, 0, 0));
            dt = Array1::zeros(0);
        }
        Ok(DensityEvaluation { p, dx, dxx, dt })
    }
}

/// Deterministic first-appearance grouping of rows by exact bit pattern.
fn group_rows(rows: impl Iterator<Item = Vec<u64>>) -> (Vec<usize>, usize) {
    let mut ids = Vec::new();
    let mut map: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut next = 0usize;
    for key in rows {
        let id = *map.entry(key).or_insert_with(|| {
            let i = next;
            next += 1;
            i
        });
        ids.push(id);
    }
    (ids, next)
}

/// Per-state-vector kernel mixture sums (`M` entries each).
struct GVectors {
    g: Vec<f64>,
    /// `n x M`, gradient components.
    gi: Vec<Vec<f64>>,
    /// Upper-triangle pairs `(i, j), i <= j`, each `M` entries.
    gij: Vec<Vec<f64>>,
}

pub fn fit_density(data: Arc<PathDataset>, nu: f64, mu: f64) -> Result<DensityModel> {
    if !(nu > 0.0 && nu.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
        return Err(CoreError::InvalidArgument(format!(
            "bandwidths must be positive, got nu={nu}, mu={mu}"
        )));
    }
    let kt = temporal_gram(data.times(), data.times(), nu)?;
    let kt_factor = CholFactor::new_jittered(kt.view())?;
    Ok(DensityModel {
        nu,
        mu,
        kt_factor,
        train: data,
    })
}

impl DensityModel {
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn train(&self) -> &Arc<PathDataset> {
        &self.train
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Cached factorization of the jittered temporal Gram.
    pub fn kt_factor(&self) -> &CholFactor {
        &self.kt_factor
    }

    /// Temporal interpolation weights `K_t^{-1} k_t(t)` and their time
    /// derivative counterpart `K_t^{-1} (d k_t / d t)`.
    fn temporal_weights(&self, t: f64, with_dt: bool) -> (Array1<f64>, Option<Array1<f64>>) {
        let times = self.train.times();
        let m = times.len();
        let mut kt = Array1::zeros(m);
        for (l, tl) in times.iter().enumerate() {
            let d = t - tl;
            kt[l] = fastmath::exp1(-self.nu * d * d);
        }
        let w = self.kt_factor.solve_vec(kt.view());
        let wd = if with_dt {
            let mut ktd = Array1::zeros(m);
            for (l, tl) in times.iter().enumerate() {
                let d = t - tl;
                ktd[l] = -2.0 * self.nu * d * fastmath::exp1(-self.nu * d * d);
            }
            Some(self.kt_factor.solve_vec(ktd.view()))
        } else {
            None
        };
        (w, wd)
    }

    /// Mixture sums for one state vector over all `Q x M` training states.
    fn g_vectors(&self, x: &[f64], with_derivs: bool) -> GVectors {
        let data = &self.train;
        let (q_n, m, n) = (data.n_paths(), data.n_times(), data.dim());
        let mu2 = self.mu * self.mu;
        let coef = self.mu.powi(n as i32) * (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0)
            / q_n as f64;
        let n_pairs = n * (n + 1) / 2;
        let mut g = vec![0.0; m];
        let mut gi = vec![vec![0.0; m]; if with_derivs { n } else { 0 }];
        let mut gij = vec![vec![0.0; m]; if with_derivs { n_pairs } else { 0 }];

        let states = data.states();
        let flat = states.as_slice().expect("states are contiguous");
        let mut args = vec![0.0f64; m];
        for q in 0..q_n {
            let path = &flat[q * m * n..(q + 1) * m * n];
            for l in 0..m {
                let y = &path[l * n..(l + 1) * n];
                let mut s = 0.0;
                for i in 0..n {
                    let d = x[i] - y[i];
                    s += d * d;
                }
                args[l] = -0.5 * mu2 * s;
            }
            fastmath::exp_slice(&mut args);
            if !with_derivs {
                for l in 0..m {
                    g[l] += args[l];
                }
            } else {
                for l in 0..m {
                    let e = args[l];
                    g[l] += e;
                    let y = &path[l * n..(l + 1) * n];
                    let mut pair = 0;
                    for i in 0..n {
                        let ri = x[i] - y[i];
                        gi[i][l] += -mu2 * ri * e;
                        for j in i..n {
                            let rj = x[j] - y[j];
                            let delta = if i == j { 1.0 } else { 0.0 };
                            gij[pair][l] += (mu2 * mu2 * ri * rj - mu2 * delta) * e;
                            pair += 1;
                        }
                    }
                }
            }
        }
        for v in &mut g {
            *v *= coef;
        }
        for gv in gi.iter_mut().chain(gij.iter_mut()) {
            for v in gv {
                *v *= coef;
            }
        }
        GVectors { g, gi, gij }
    }

    /// Evaluates the density (and optionally all derivatives) at a batch of
    /// `(t, x)` points.
    pub fn predict(&self, eval: &PointSet, with_derivs: bool) -> Result<DensityEvaluation> {
        if eval.n_state() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: eval.n_state(),
            });
        }
        if eval.n_ctrl() != 0 {
            return Err(CoreError::InvalidArgument(
                "density evaluation points must not carry control coordinates".into(),
            ));
        }
        let n = self.dim();
        let n_eval = eval.len();

        // Group by exact time and state so grids and path-shaped batches pay
        // each distinct weight/mixture computation once.
        let (t_ids, n_t) = group_rows((0..n_eval).map(|i| vec![eval.t(i).to_bits()]));
        let (x_ids, n_x) = group_rows((0..n_eval).map(|i| {
            (0..n)
                .map(|j| eval.coords()[[i, PointSet::state_col(j)]].to_bits())
                .collect()
        }));
        let mut t_rep = vec![0usize; n_t];
        let mut x_rep = vec![0usize; n_x];
        for i in 0..n_eval {
            t_rep[t_ids[i]] = i;
            x_rep[x_ids[i]] = i;
        }

        let weights: Vec<(Array1<f64>, Option<Array1<f64>>)> = t_rep
            .par_iter()
            .map(|&i| self.temporal_weights(eval.t(i), with_derivs))
            .collect();
        let gvecs: Vec<GVectors> = x_rep
            .par_iter()
            .map(|&i| {
                let row = eval.row(i);
                let x = &row.as_slice().expect("coords are contiguous")[1..1 + n];
                self.g_vectors(x, with_derivs)
            })
            .collect();

        let n_pairs = n * (n + 1) / 2;
        let mut p = Array1::zeros(n_eval);
        let (mut dx, mut dxx, mut dt) = if with_derivs {
            (
                Array2::zeros((n_eval, n)),
                Array3::zeros((n_eval, n, n)),
                Array1::zeros(n_eval),
            )
        } else {
            (Array2::zeros((0, 0)), Array3::zeros((0, 0, 0)), Array1::zeros(0))
        };

        let dot = |w: &Array1<f64>, g: &[f64]| -> f64 {
            let mut s = 0.0;
            for (a, b) in w.iter().zip(g) {
                s += a * b;
            }
            s
        };

        for i in 0..n_eval {
            let (w, wd) = &weights[t_ids[i]];
            let gv = &gvecs[x_ids[i]];
            p[i] = dot(w, &gv.g);
            if with_derivs {
                dt[i] = dot(wd.as_ref().expect("dt weights computed"), &gv.g);
                for a in 0..n {
                    dx[[i, a]] = dot(w, &gv.gi[a]);
                }
                let mut pair = 0;
                for a in 0..n {
                    for b in a..n {
                        let v = dot(w, &gv.gij[pair]);
                        dxx[[i, a, b]] = v;
                        dxx[[i, b, a]] = v;
                        pair += 1;
                    }
                }
            }
        }
        let _ = n_pairs;
        Ok(DensityEvaluation { p, dx, dxx, dt })
    }

    /// Validation log-likelihood: `sum log(max(p(t_l, x_ql), floor))` over
    /// every observed state of the validation set.
    pub fn log_likelihood(&self, val: &PathDataset) -> Result<f64> {
        if val.dim() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: val.dim(),
            });
        }
        if val.n_paths() == 0 || val.n_times() == 0 {
            return Err(CoreError::EmptyInput("validation set is empty".into()));
        }
        let eval = pointset_from_dataset(val)?;
        let dens = self.predict(&eval, false)?;
        Ok(dens
            .p
            .iter()
            .map(|&v| v.max(LOG_DENSITY_FLOOR).ln())
            .sum())
    }
}

/// Flattens every `(t_l, X_ql)` pair of a dataset into an evaluation batch
/// (path-major order).
pub fn pointset_from_dataset(data: &PathDataset) -> Result<PointSet> {
    let (q_n, m, n) = (data.n_paths(), data.n_times(), data.dim());
    let mut coords = Array2::zeros((q_n * m, 1 + n));
    for q in 0..q_n {
        for l in 0..m {
            let r = q * m + l;
            coords[[r, 0]] = data.times()[l];
            for j in 0..n {
                coords[[r, 1 + j]] = data.states()[[q, l, j]];
            }
        }
    }
    PointSet::from_coords(coords, n, 0)
}
