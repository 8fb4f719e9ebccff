//! Serialization of fitted FP models.
//!
//! The document stores the training point coordinates, their density
//! evaluations, the target, the dual vector and the anchor indices; the
//! ridge factorization and representer weights are rebuilt on load (no
//! iterative solve is repeated: the stored dual makes the rebuild a pair of
//! linear solves).

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::density::DensityEvaluation;
use crate::error::{CoreError, Result};
use crate::kernel::GaussianKernelParams;
use crate::linalg::CholFactor;
use crate::points::PointSet;

use super::{assembly, FPModel, FPTrainingSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FPModelDoc {
    pub lambda: f64,
    /// Kernel inverse-squared bandwidth.
    pub gamma: f64,
    pub n_state: usize,
    pub n_ctrl: usize,
    /// Flat coordinates, row-major `N x (1 + n + d)`.
    pub points: Vec<f64>,
    /// Density values and derivatives at the training points.
    pub dens_p: Vec<f64>,
    /// Row-major `N x n`.
    pub dens_dx: Vec<f64>,
    /// Row-major `N x n x n`.
    pub dens_dxx: Vec<f64>,
    /// The regression target `d = dp/dt`.
    pub dens_dt: Vec<f64>,
    pub constraint_idx: Vec<usize>,
    /// Dual multipliers (empty when unconstrained).
    pub gamma_dual: Vec<f64>,
    pub anchors: Option<Vec<usize>>,
}

impl FPModel {
    pub fn to_doc(&self) -> FPModelDoc {
        let t = self.train();
        FPModelDoc {
            lambda: self.lambda(),
            gamma: self.kparams().gamma(),
            n_state: t.points.n_state(),
            n_ctrl: t.points.n_ctrl(),
            points: t.points.coords().iter().copied().collect(),
            dens_p: t.dens.p.iter().copied().collect(),
            dens_dx: t.dens.dx.iter().copied().collect(),
            dens_dxx: t.dens.dxx.iter().copied().collect(),
            dens_dt: t.dens.dt.iter().copied().collect(),
            constraint_idx: t.constraint_idx.clone(),
            gamma_dual: self.gamma_dual().iter().copied().collect(),
            anchors: self.anchors().map(<[usize]>::to_vec),
        }
    }

    /// Rebuilds a model from its document: reassembles the Gram, refactors
    /// the ridge system, and applies the stored dual.
    pub fn from_doc(doc: &FPModelDoc) -> Result<FPModel> {
        let dim = 1 + doc.n_state + doc.n_ctrl;
        if dim == 0 || doc.points.len() % dim != 0 {
            return Err(CoreError::InvalidArgument("corrupt FP model document".into()));
        }
        let n_pts = doc.points.len() / dim;
        let coords = Array2::from_shape_vec((n_pts, dim), doc.points.clone())
            .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
        let points = PointSet::from_coords(coords, doc.n_state, doc.n_ctrl)?;
        let n = doc.n_state;
        let dens = DensityEvaluation {
            p: Array1::from(doc.dens_p.clone()),
            dx: Array2::from_shape_vec((n_pts, n), doc.dens_dx.clone())
                .map_err(|e| CoreError::InvalidArgument(e.to_string()))?,
            dxx: Array3::from_shape_vec((n_pts, n, n), doc.dens_dxx.clone())
                .map_err(|e| CoreError::InvalidArgument(e.to_string()))?,
            dt: Array1::from(doc.dens_dt.clone()),
        };
        let train = Arc::new(FPTrainingSet::with_constraints(
            points,
            dens,
            doc.constraint_idx.clone(),
        )?);
        let kparams = GaussianKernelParams::new(doc.gamma)?;
        let gamma = Array1::from(doc.gamma_dual.clone());
        if !gamma.is_empty() && gamma.len() != doc.constraint_idx.len() {
            return Err(CoreError::InvalidArgument(
                "dual vector length does not match the constraint set".into(),
            ));
        }

        match &doc.anchors {
            None => {
                let design = super::FPDesign::new(train, kparams)?;
                if gamma.is_empty() {
                    design.fit(doc.lambda, false)
                } else {
                    design.refit_with_dual(doc.lambda, gamma)
                }
            }
            Some(anchors) => rebuild_nystrom(train, doc.lambda, kparams, anchors.clone(), gamma),
        }
    }
}

impl super::FPDesign {
    /// Rebuilds the constrained solution from a stored dual vector.
    pub(super) fn refit_with_dual(&self, lambda: f64, gamma: Array1<f64>) -> Result<FPModel> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(CoreError::InvalidArgument("ridge weight must be positive".into()));
        }
        let train = self.train();
        let n = train.len();
        let factor = CholFactor::with_diag_shift(self.ktilde().view(), n as f64 * lambda)?;
        let c = factor.solve_vec(train.target().view());
        let cpoints = train.points.select(&train.constraint_idx);
        let r = assembly::sigma_cross(&train.points, &train.dens, &cpoints, self.kparams())?;
        let x = factor.solve_mat(r.view());
        let corr = x.dot(&gamma) / lambda;
        let weights = &c - &corr;
        let cache = super::PredictCache::build(
            &train.points,
            &train.dens,
            None,
            &weights,
            &train.constraint_idx,
            &gamma,
            1.0 / lambda,
        );
        Ok(FPModel {
            lambda,
            kparams: self.kparams(),
            train: self.train().clone(),
            weights,
            gamma_dual: gamma,
            sigma_extra_scale: 1.0 / lambda,
            anchors: None,
            cache,
        })
    }

    pub(super) fn kparams(&self) -> GaussianKernelParams {
        self.kparams
    }
}

fn rebuild_nystrom(
    train: Arc<FPTrainingSet>,
    lambda: f64,
    kparams: GaussianKernelParams,
    anchors: Vec<usize>,
    gamma: Array1<f64>,
) -> Result<FPModel> {
    let n = train.len();
    let apoints = train.points.select(&anchors);
    let adens = train.dens.select(&anchors);
    let knm = assembly::tilde_cross(&train.points, &train.dens, &apoints, &adens, kparams)?;
    let kmm = assembly::tilde_square(&apoints, &adens, kparams)?;
    let mut g = crate::blas::gemm_alloc(1.0, knm.view(), true, knm.view(), false);
    g.scaled_add(n as f64 * lambda, &kmm);
    let factor = CholFactor::new(g.view())?;
    let mut rhs = knm.t().dot(train.target());
    if !gamma.is_empty() {
        let cpoints = train.points.select(&train.constraint_idx);
        let rm = assembly::sigma_cross(&apoints, &adens, &cpoints, kparams)?;
        rhs += &rm.dot(&gamma);
    }
    let alpha = factor.solve_vec(rhs.view());
    let cache = super::PredictCache::build(
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
