//! Step 2: drift/diffusion recovery by kernel ridge regression on the
//! Fokker-Planck residual.
//!
//! Training minimizes `1/N sum_l (dp/dt(z_l) - <w, phi_tilde(z_l)>)^2 +
//! lambda ||w||^2` over `w = ((w_b^i)_i | w_sigma)`, realized through the
//! representer system `(K~ + N lambda I) c = d`. The soft shape constraint
//! `sigma^2(z_i) >= 0` on a subset `I` of training points enters through a
//! non-negative dual vector solved in [`dual`]; the Nystroem variant
//! restricts `w` to the span of `m` anchor features.

pub mod assembly;
pub mod dual;
mod io;

pub use io::FPModelDoc;

use ndarray::{Array1, Array2};
use std::sync::Arc;

use crate::blas;
use crate::density::DensityEvaluation;
use crate::error::{CoreError, Result};
use crate::fastmath;
use crate::kernel::{gram, GaussianKernelParams};
use crate::linalg::CholFactor;
use crate::points::PointSet;

/// Fokker-Planck training (or validation) data: points, aligned density
/// evaluations, and the constraint subset.
#[derive(Debug, Clone)]
pub struct FPTrainingSet {
    pub points: PointSet,
    pub dens: DensityEvaluation,
    /// Indices (into `points`) where `sigma^2 >= 0` is enforced.
    pub constraint_idx: Vec<usize>,
}

impl FPTrainingSet {
    /// Builds a set constraining every training point.
    pub fn new(points: PointSet, dens: DensityEvaluation) -> Result<Self> {
        let idx = (0..points.len()).collect();
        Self::with_constraints(points, dens, idx)
    }

    pub fn with_constraints(
        points: PointSet,
        dens: DensityEvaluation,
        constraint_idx: Vec<usize>,
    ) -> Result<Self> {
        if dens.len() != points.len() || !dens.has_derivs() {
            return Err(CoreError::InvalidArgument(
                "density evaluation misaligned with FP points".into(),
            ));
        }
        if constraint_idx.iter().any(|&i| i >= points.len()) {
            return Err(CoreError::InvalidArgument(
                "constraint index out of range".into(),
            ));
        }
        Ok(Self {
            points,
            dens,
            constraint_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The regression target `d = dp/dt` at the training points.
    pub fn target(&self) -> &Array1<f64> {
        &self.dens.dt
    }
}

/// Assembles the symmetric `K~` Gram of a training set (spec operation;
/// thin wrapper over [`assembly::tilde_square`]).
pub fn assemble_tilde_gram(
    train: &FPTrainingSet,
    kparams: GaussianKernelParams,
) -> Result<Array2<f64>> {
    assembly::tilde_square(&train.points, &train.dens, kparams)
}

/// A fitted Fokker-Planck matching model (full or Nystroem, with or
/// without the positivity constraint).
#[derive(Debug, Clone)]
pub struct FPModel {
    lambda: f64,
    kparams: GaussianKernelParams,
    train: Arc<FPTrainingSet>,
    /// Representer weights over the weight-bearing points (all training
    /// points, or the anchors for a Nystroem model).
    weights: Array1<f64>,
    /// Non-negative dual multipliers over the constraint subset; empty for
    /// unconstrained fits.
    gamma_dual: Array1<f64>,
    /// Scale of the pure-kernel sigma correction `scale * sum_j gamma_j
    /// k(z_j, .)`: `1/lambda` for full constrained fits, `0` otherwise.
    sigma_extra_scale: f64,
    anchors: Option<Vec<usize>>,
    /// Flattened per-weight-point data for prediction.
    cache: PredictCache,
}

#[derive(Debug, Clone)]
struct PredictCache {
    /// Weight-bearing points, flattened coordinates.
    coords: Vec<f64>,
    dim: usize,
    n_state: usize,
    w_p: Vec<f64>,
    /// `W x n`: weight * density gradient.
    w_dx: Vec<f64>,
    /// `W x n`: weight * density second derivative (diagonal).
    w_dxx: Vec<f64>,
    /// Constraint-point coordinates (flattened) and `scale * gamma`.
    extra_coords: Vec<f64>,
    extra_w: Vec<f64>,
}

impl PredictCache {
    fn build(
        points: &PointSet,
        dens: &DensityEvaluation,
        weight_idx: Option<&[usize]>,
        weights: &Array1<f64>,
        extra_idx: &[usize],
        extra_w: &Array1<f64>,
        extra_scale: f64,
    ) -> Self {
        let n = points.n_state();
        let dim = points.dim();
        let idx: Vec<usize> = match weight_idx {
            Some(sel) => sel.to_vec(),
            None => (0..points.len()).collect(),
        };
        let w_len = idx.len();
        let mut coords = vec![0.0; w_len * dim];
        let mut w_p = vec![0.0; w_len];
        let mut w_dx = vec![0.0; w_len * n];
        let mut w_dxx = vec![0.0; w_len * n];
        for (r, &l) in idx.iter().enumerate() {
            for c in 0..dim {
                coords[r * dim + c] = points.coords()[[l, c]];
            }
            w_p[r] = weights[r] * dens.p[l];
            for a in 0..n {
                w_dx[r * n + a] = weights[r] * dens.dx[[l, a]];
                w_dxx[r * n + a] = weights[r] * dens.dxx[[l, a, a]];
            }
        }
        let mut extra_coords = vec![0.0; extra_idx.len() * dim];
        let mut extra = vec![0.0; extra_idx.len()];
        for (r, &j) in extra_idx.iter().enumerate() {
            for c in 0..dim {
                extra_coords[r * dim + c] = points.coords()[[j, c]];
            }
            extra[r] = extra_scale * extra_w[r];
        }
        Self {
            coords,
            dim,
            n_state: n,
            w_p,
            w_dx,
            w_dxx,
            extra_coords,
            extra_w: extra,
        }
    }
}

impl FPModel {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kparams(&self) -> GaussianKernelParams {
        self.kparams
    }

    pub fn train(&self) -> &Arc<FPTrainingSet> {
        &self.train
    }

    pub fn gamma_dual(&self) -> &Array1<f64> {
        &self.gamma_dual
    }

    pub fn anchors(&self) -> Option<&[usize]> {
        self.anchors.as_deref()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn is_constrained(&self) -> bool {
        !self.gamma_dual.is_empty()
    }

    /// State dimension `n`.
    pub fn n_state(&self) -> usize {
        self.train.points.n_state()
    }

    /// Control dimension `d` (0 for the uncontrolled pipeline).
    pub fn n_ctrl(&self) -> usize {
        self.train.points.n_ctrl()
    }

    /// Predicts `(b, sigma^2)` at one flat coordinate row `(t, x.., v..)`.
    pub fn predict_into(&self, z: &[f64], b_out: &mut [f64]) -> f64 {
        let c = &self.cache;
        let n = c.n_state;
        debug_assert_eq!(z.len(), c.dim);
        debug_assert_eq!(b_out.len(), n);
        let u = -2.0 * self.kparams.gamma();
        for v in b_out.iter_mut() {
            *v = 0.0;
        }
        let mut sigma2 = 0.0;

        let w_len = c.w_p.len();
        const CHUNK: usize = 512;
        let mut args = [0.0f64; CHUNK];
        let mut l0 = 0;
        while l0 < w_len {
            let l1 = (l0 + CHUNK).min(w_len);
            for l in l0..l1 {
                let zl = &c.coords[l * c.dim..(l + 1) * c.dim];
                args[l - l0] = self.kparams.gamma() * -crate::kernel::sq_dist(zl, z);
            }
            fastmath::exp_slice(&mut args[..l1 - l0]);
            for l in l0..l1 {
                let e = args[l - l0];
                let zl = &c.coords[l * c.dim..(l + 1) * c.dim];
                let wp = c.w_p[l];
                for a in 0..n {
                    let ra = zl[1 + a] - z[1 + a];
                    let ka = u * ra * e;
                    let kaa = u * (ra * ka + e);
                    // r_a^b contribution: -(P K_a + P_a K) per weight.
                    b_out[a] -= wp * ka + c.w_dx[l * n + a] * e;
                    // r^sigma contribution: 1/2 (P K_aa + 2 P_a K_a + P_aa K).
                    sigma2 +=
                        0.5 * (wp * kaa + 2.0 * c.w_dx[l * n + a] * ka + c.w_dxx[l * n + a] * e);
                }
            }
            l0 = l1;
        }

        // Pure-kernel sigma correction around the constraint points.
        let m = c.extra_w.len();
        let mut j = 0;
        while j < m {
            let zj = &c.extra_coords[j * c.dim..(j + 1) * c.dim];
            let e = fastmath::exp1(-self.kparams.gamma() * crate::kernel::sq_dist(zj, z));
            sigma2 += c.extra_w[j] * e;
            j += 1;
        }
        sigma2
    }

    /// Predicts `(b, sigma^2)` at a [`crate::points::Point`]-style input.
    pub fn predict_point(&self, t: f64, x: &[f64], v: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let n = self.n_state();
        let d = self.n_ctrl();
        if x.len() != n || v.map_or(0, <[f64]>::len) != d {
            return Err(CoreError::DimensionMismatch {
                expected: 1 + n + d,
                got: 1 + x.len() + v.map_or(0, <[f64]>::len),
            });
        }
        let mut z = Vec::with_capacity(1 + n + d);
        z.push(t);
        z.extend_from_slice(x);
        if let Some(v) = v {
            z.extend_from_slice(v);
        }
        let mut b = vec![0.0; n];
        let s2 = self.predict_into(&z, &mut b);
        Ok((b, s2))
    }

    /// `sigma^2` evaluated at every constraint point.
    pub fn sigma_at_constraints(&self) -> Vec<f64> {
        let n = self.n_state();
        let mut b = vec![0.0; n];
        self.train
            .constraint_idx
            .iter()
            .map(|&i| {
                let row = self.train.points.row(i);
                self.predict_into(row.as_slice().expect("coords contiguous"), &mut b)
            })
            .collect()
    }

    /// The model's Fokker-Planck operator values `<w, phi_tilde(z)>` at an
    /// evaluated point set, computed in feature form.
    pub fn fp_values(&self, valset: &FPTrainingSet) -> Result<Array1<f64>> {
        let wpoints = match &self.anchors {
            Some(a) => self.train.points.select(a),
            None => self.train.points.clone(),
        };
        let wdens = match &self.anchors {
            Some(a) => self.train.dens.select(a),
            None => self.train.dens.clone(),
        };
        let n_val = valset.len();
        let mut out = Array1::zeros(n_val);
        // Tile the cross-Gram so large validation sets stay in bounded memory.
        let block = 1024usize;
        let mut lo = 0;
        while lo < n_val {
            let hi = (lo + block).min(n_val);
            let idx: Vec<usize> = (lo..hi).collect();
            let vp = valset.points.select(&idx);
            let vd = valset.dens.select(&idx);
            let cross = assembly::tilde_cross(&vp, &vd, &wpoints, &wdens, self.kparams)?;
            let vals = cross.dot(&self.weights);
            out.slice_mut(ndarray::s![lo..hi]).assign(&vals);
            if self.sigma_extra_scale != 0.0 && !self.gamma_dual.is_empty() {
                let cpoints = self.train.points.select(&self.train.constraint_idx);
                let s = assembly::sigma_cross(&vp, &vd, &cpoints, self.kparams)?;
                let corr = s.dot(&self.gamma_dual) * self.sigma_extra_scale;
                let mut dst = out.slice_mut(ndarray::s![lo..hi]);
                dst += &corr;
            }
            lo = hi;
        }
        Ok(out)
    }

    /// Mean squared Fokker-Planck residual on a validation set evaluated
    /// with the same density model.
    pub fn residual_mse(&self, valset: &FPTrainingSet) -> Result<f64> {
        let fp = self.fp_values(valset)?;
        let d = valset.target();
        let mut s = 0.0;
        for i in 0..fp.len() {
            let r = d[i] - fp[i];
            s += r * r;
        }
        Ok(s / fp.len() as f64)
    }
}

/// Mean squared target (the residual of the zero model) on a set.
pub fn zero_model_mse(valset: &FPTrainingSet) -> f64 {
    let d = valset.target();
    d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
}

/// Shared assembly for fitting several ridge weights on one training set.
pub struct FPDesign {
    train: Arc<FPTrainingSet>,
    kparams: GaussianKernelParams,
    ktilde: Array2<f64>,
}

impl FPDesign {
    pub fn new(train: Arc<FPTrainingSet>, kparams: GaussianKernelParams) -> Result<Self> {
        if train.is_empty() {
            return Err(CoreError::EmptyInput("FP training set is empty".into()));
        }
        let ktilde = assembly::tilde_square(&train.points, &train.dens, kparams)?;
        Ok(Self {
            train,
            kparams,
            ktilde,
        })
    }

    pub fn ktilde(&self) -> &Array2<f64> {
        &self.ktilde
    }

    pub fn train(&self) -> &Arc<FPTrainingSet> {
        &self.train
    }

    /// Fits ridge weights; `constrained` additionally enforces the
    /// positivity of `sigma^2` on the training set's constraint subset.
    pub fn fit(&self, lambda: f64, constrained: bool) -> Result<FPModel> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "ridge weight must be positive, got {lambda}"
            )));
        }
        let n = self.train.len();
        let ridge = n as f64 * lambda;
        let factor = CholFactor::with_diag_shift(self.ktilde.view(), ridge)?;
        let c = factor.solve_vec(self.train.target().view());

        let (weights, gamma, scale) = if !constrained {
            (c, Array1::zeros(0), 0.0)
        } else {
            let idx = &self.train.constraint_idx;
            if idx.is_empty() {
                return Err(CoreError::EmptyInput(
                    "constrained fit needs a non-empty constraint set".into(),
                ));
            }
            let cpoints = self.train.points.select(idx);
            let r = assembly::sigma_cross(&self.train.points, &self.train.dens, &cpoints, self.kparams)?;
            let x = factor.solve_mat(r.view());
            // A = (K_II - R' X) / lambda, symmetrized against rounding.
            let kii = gram(&cpoints, &cpoints, self.kparams)?;
            let mut a = blas::gemm_alloc(-1.0, r.view(), true, x.view(), false);
            a += &kii;
            a.mapv_inplace(|v| v / lambda);
            let at = a.t().to_owned();
            a += &at;
            a.mapv_inplace(|v| 0.5 * v);
            // h = sigma^2_std at the constraint points.
            let h = r.t().dot(&c);
            let gamma = dual::solve_nonneg_qp(a.view(), h.view(), dual::DUAL_TOL, dual::DUAL_MAX_ITER)?;
            let corr = x.dot(&gamma) / lambda;
            let weights = &c - &corr;
            (weights, gamma, 1.0 / lambda)
        };

        let cache = PredictCache::build(
            &self.train.points,
            &self.train.dens,
            None,
            &weights,
            if scale != 0.0 { &self.train.constraint_idx } else { &[] },
            &gamma,
            scale,
        );
        Ok(FPModel {
            lambda,
            kparams: self.kparams,
            train: self.train.clone(),
            weights,
            gamma_dual: gamma,
            sigma_extra_scale: scale,
            anchors: None,
            cache,
        })
    }
}

/// Unconstrained ridge fit (spec operation).
pub fn fit_fp(
    train: Arc<FPTrainingSet>,
    lambda: f64,
    kparams: GaussianKernelParams,
) -> Result<FPModel> {
    FPDesign::new(train, kparams)?.fit(lambda, false)
}

/// Ridge fit with the soft positivity constraint on `sigma^2`.
pub fn fit_fp_constrained(
    train: Arc<FPTrainingSet>,
    lambda: f64,
    kparams: GaussianKernelParams,
) -> Result<FPModel> {
    FPDesign::new(train, kparams)?.fit(lambda, true)
}

/// Nystroem fit on `m` anchor points (optionally constrained).
pub fn fit_fp_nystrom(
    train: Arc<FPTrainingSet>,
    lambda: f64,
    kparams: GaussianKernelParams,
    anchors: Vec<usize>,
    constrained: bool,
) -> Result<FPModel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "ridge weight must be positive, got {lambda}"
        )));
    }
    let n = train.len();
    if anchors.is_empty() || anchors.len() > n {
        return Err(CoreError::InvalidArgument(format!(
            "need 1 <= m <= N anchors, got m={} with N={n}",
            anchors.len()
        )));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for &a in &anchors {
            if a >= n || !seen.insert(a) {
                return Err(CoreError::InvalidArgument(
                    "anchor indices must be distinct and in range".into(),
                ));
            }
        }
    }

    let apoints = train.points.select(&anchors);
    let adens = train.dens.select(&anchors);
    let knm = assembly::tilde_cross(&train.points, &train.dens, &apoints, &adens, kparams)?;
    let kmm = assembly::tilde_square(&apoints, &adens, kparams)?;
    // G = K_nm' K_nm + N lambda K_mm
    let mut g = blas::gemm_alloc(1.0, knm.view(), true, knm.view(), false);
    g.scaled_add(n as f64 * lambda, &kmm);
    let factor = CholFactor::new(g.view())?;

    let rhs0 = knm.t().dot(train.target());
    let (alpha, gamma) = if !constrained {
        (factor.solve_vec(rhs0.view()), Array1::zeros(0))
    } else {
        let idx = &train.constraint_idx;
        if idx.is_empty() {
            return Err(CoreError::EmptyInput(
                "constrained fit needs a non-empty constraint set".into(),
            ));
        }
        let cpoints = train.points.select(idx);
        let rm = assembly::sigma_cross(&apoints, &adens, &cpoints, kparams)?;
        let x = factor.solve_mat(rm.view());
        let mut a = blas::gemm_alloc(1.0, rm.view(), true, x.view(), false);
        let at = a.t().to_owned();
        a += &at;
        a.mapv_inplace(|v| 0.5 * v);
        let h = rm.t().dot(&factor.solve_vec(rhs0.view()));
        let gamma = dual::solve_nonneg_qp(a.view(), h.view(), dual::DUAL_TOL, dual::DUAL_MAX_ITER)?;
        let rhs = &rhs0 + &rm.dot(&gamma);
        (factor.solve_vec(rhs.view()), gamma)
    };

    let cache = PredictCache::build(
        &train.points,
        &train.dens,
        Some(&anchors),
        &alpha,
        &[],
        &gamma,
        0.0,
    );
    Ok(FPModel {
        lambda,
        kparams,
        train,
        weights: alpha,
        gamma_dual: gamma,
        sigma_extra_scale: 0.0,
        anchors: Some(anchors),
        cache,
    })
}

/// Strong-form Fokker-Planck residual `dp/dt - L* p` for given coefficient
/// values and density derivatives at one point.
///
/// `div_b = sum_a db_a/dx_a`; `sigma2_dx`, `sigma2_dxx_diag` are the first
/// and (diagonal) second spatial derivatives of `sigma^2`.
#[allow(clippy::too_many_arguments)]
pub fn strong_fp_residual(
    dt: f64,
    p: f64,
    dx: &[f64],
    dxx_diag: &[f64],
    b: &[f64],
    div_b: f64,
    sigma2: f64,
    sigma2_dx: &[f64],
    sigma2_dxx_diag: &[f64],
) -> f64 {
    let n = b.len();
    let mut lstar = -div_b * p;
    for a in 0..n {
        lstar += 0.5
            * (sigma2_dxx_diag[a] * p + 2.0 * sigma2_dx[a] * dx[a] + sigma2 * dxx_diag[a])
            - b[a] * dx[a];
    }
    dt - lstar
}
