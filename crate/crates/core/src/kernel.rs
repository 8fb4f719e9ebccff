//! Gaussian kernels on time-state(-control) points and their derivative
//! Gram matrices.
//!
//! The kernel is `k(z, z') = exp(-gamma * ||z - z'||^2)` over the full flat
//! coordinates. Fokker-Planck matching needs the mixed partial derivatives
//! of `k` with respect to the *state* coordinates of either argument, up to
//! second order on each side. For the Gaussian kernel all of them follow
//! from eight recursions on the difference matrix `D_z`; subscripts denote
//! first-argument derivatives, superscripts second-argument ones:
//!
//! ```text
//! K_i       = -2g D_i . K
//! K^i       = -K_i
//! K_ij      = -2g (D_j . K_i + d_ij K)
//! K^ij      = K_ij
//! K_i^j     = -K_ij
//! K_k^ij    = -2g (D_j . K_ik + d_jk K_i + d_ij K_k)
//! K_ij^k    = -K_i^jk
//! K_kl^ij   = -2g (-D_j . K_kl^i + d_jl K_ik + d_jk K_il + d_ij K_kl)
//! ```
//!
//! (`.` elementwise, `d` Kronecker delta, `g` the bandwidth parameter.)

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::fastmath;
use crate::points::PointSet;

/// Inverse-squared-bandwidth of an isotropic Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernelParams {
    gamma: f64,
}

impl GaussianKernelParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "kernel gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Squared Euclidean distance between two flat coordinate rows.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Base Gram matrix: `(p, q) -> exp(-gamma ||z_p - z'_q||^2)`.
pub fn gram(z: &PointSet, zp: &PointSet, params: GaussianKernelParams) -> Result<Array2<f64>> {
    z.compatible(zp)?;
    let g = params.gamma();
    let mut out = Array2::zeros((z.len(), zp.len()));
    let zc = z.coords();
    let zpc = zp.coords();
    for (p, mut row) in out.outer_iter_mut().enumerate() {
        let a = zc.row(p);
        let a = a.as_slice().expect("coords are contiguous");
        let row_s = row.as_slice_mut().expect("output row is contiguous");
        for (q, o) in row_s.iter_mut().enumerate() {
            let b = zpc.row(q);
            *o = -g * sq_dist(a, b.as_slice().expect("coords are contiguous"));
        }
        fastmath::exp_slice(row_s);
    }
    Ok(out)
}

/// Temporal Gram `(l, m) -> exp(-nu (t_l - t'_m)^2)`.
pub fn temporal_gram(t1: &[f64], t2: &[f64], nu: f64) -> Result<Array2<f64>> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "temporal bandwidth nu must be positive, got {nu}"
        )));
    }
    if t1.iter().chain(t2).any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidArgument("times must be finite".into()));
    }
    let mut out = Array2::zeros((t1.len(), t2.len()));
    for (l, mut row) in out.outer_iter_mut().enumerate() {
        let row_s = row.as_slice_mut().expect("row is contiguous");
        for (m, o) in row_s.iter_mut().enumerate() {
            let d = t1[l] - t2[m];
            *o = -nu * d * d;
        }
        fastmath::exp_slice(row_s);
    }
    Ok(out)
}

/// Evaluation context shared by the derivative recursions.
struct DerivCtx {
    gamma: f64,
    base: Array2<f64>,
    /// `diff[i][(p, q)] = z_p[state i] - z'_q[state i]`.
    diff: Vec<Array2<f64>>,
}

impl DerivCtx {
    fn new(z: &PointSet, zp: &PointSet, params: GaussianKernelParams) -> Result<Self> {
        let base = gram(z, zp, params)?;
        let n = z.n_state();
        let mut diff = Vec::with_capacity(n);
        for i in 0..n {
            let col = PointSet::state_col(i);
            let mut d = Array2::zeros((z.len(), zp.len()));
            for p in 0..z.len() {
                let zi = z.coords()[[p, col]];
                for q in 0..zp.len() {
                    d[[p, q]] = zi - zp.coords()[[q, col]];
                }
            }
            diff.push(d);
        }
        Ok(Self {
            gamma: params.gamma(),
            base,
            diff,
        })
    }

    /// `-2g (D_j . A + extra)`, the recurring combination step.
    fn step(&self, j: usize, a: &Array2<f64>, extra: &[(f64, &Array2<f64>)]) -> Array2<f64> {
        let mut out = a.clone();
        Zip::from(&mut out).and(&self.diff[j]).for_each(|o, d| *o *= d);
        for (w, m) in extra {
            if *w != 0.0 {
                Zip::from(&mut out).and(*m).for_each(|o, v| *o += w * v);
            }
        }
        out.mapv_inplace(|v| -2.0 * self.gamma * v);
        out
    }

    fn d1(&self, i: usize) -> Array2<f64> {
        // K_i = -2g D_i . K
        self.step(i, &self.base, &[])
    }

    fn d2(&self, i: usize, j: usize) -> Array2<f64> {
        // K_ij = -2g (D_j . K_i + d_ij K)
        let ki = self.d1(i);
        let dij = if i == j { 1.0 } else { 0.0 };
        self.step(j, &ki, &[(dij, &self.base)])
    }

    fn d1_d2(&self, k: usize, i: usize, j: usize) -> Array2<f64> {
        // K_k^{ij} = -2g (D_j . K_ik + d_jk K_i + d_ij K_k)
        let kik = self.d2(i, k);
        let ki = self.d1(i);
        let kk = self.d1(k);
        let djk = if j == k { 1.0 } else { 0.0 };
        let dij = if i == j { 1.0 } else { 0.0 };
        self.step(j, &kik, &[(djk, &ki), (dij, &kk)])
    }

    fn d2_d2(&self, k: usize, l: usize, i: usize, j: usize) -> Array2<f64> {
        // K_{kl}^{ij} = -2g (-D_j . K_{kl}^i + d_jl K_ik + d_jk K_il + d_ij K_kl)
        // with K_{kl}^i = -K_k^{li}.
        let mut kkl_i = self.d1_d2(k, l, i);
        kkl_i.mapv_inplace(|v| -v);
        let kik = self.d2(i, k);
        let kil = self.d2(i, l);
        let kkl = self.d2(k, l);
        let djl = if j == l { 1.0 } else { 0.0 };
        let djk = if j == k { 1.0 } else { 0.0 };
        let dij = if i == j { 1.0 } else { 0.0 };
        // -D_j . A == D_j . (-A)
        let mut neg = kkl_i;
        neg.mapv_inplace(|v| -v);
        self.step(j, &neg, &[(djl, &kik), (djk, &kil), (dij, &kkl)])
    }

    fn block(&self, sub: &[usize], sup: &[usize]) -> Result<Array2<f64>> {
        let n = self.diff.len();
        if sub.iter().chain(sup).any(|&i| i >= n) {
            return Err(CoreError::InvalidArgument(format!(
                "derivative index out of range for state dim {n}"
            )));
        }
        let out = match (sub, sup) {
            ([], []) => self.base.clone(),
            ([i], []) => self.d1(*i),
            ([], [i]) => {
                let mut k = self.d1(*i);
                k.mapv_inplace(|v| -v);
                k
            }
            ([i, j], []) => self.d2(*i, *j),
            ([], [i, j]) => self.d2(*i, *j),
            ([i], [j]) => {
                let mut k = self.d2(*i, *j);
                k.mapv_inplace(|v| -v);
                k
            }
            ([k], [i, j]) => self.d1_d2(*k, *i, *j),
            ([i, j], [k]) => {
                // K_{ij}^k = -K_i^{jk}
                let mut m = self.d1_d2(*i, *j, *k);
                m.mapv_inplace(|v| -v);
                m
            }
            ([k, l], [i, j]) => self.d2_d2(*k, *l, *i, *j),
            _ => {
                return Err(CoreError::InvalidArgument(
                    "derivative order above 2 per argument is not supported".into(),
                ))
            }
        };
        Ok(out)
    }
}

/// A single derivative Gram block `K_sub^sup` for arbitrary index tuples of
/// length <= 2 per side.
pub fn deriv_block(
    z: &PointSet,
    zp: &PointSet,
    params: GaussianKernelParams,
    sub: &[usize],
    sup: &[usize],
) -> Result<Array2<f64>> {
    DerivCtx::new(z, zp, params)?.block(sub, sup)
}

/// The derivative Gram blocks consumed by Fokker-Planck matching.
///
/// Blocks are keyed by `(subscript tuple, superscript tuple)` with sorted
/// indices. `max_order` 1 stores first derivatives, 2 everything up to one
/// derivative per argument side plus pure seconds, and 4 additionally the
/// `(aa, c)`, `(a, cc)`, `(aa, cc)` combinations that the uniform-diffusion
/// Gram assembly needs.
#[derive(Debug, Clone)]
pub struct DerivGramSet {
    base: Array2<f64>,
    blocks: BTreeMap<(Vec<usize>, Vec<usize>), Array2<f64>>,
    pub max_order: u8,
    pub n_state: usize,
}

impl DerivGramSet {
    pub fn base(&self) -> &Array2<f64> {
        &self.base
    }

    /// Looks up a stored block; indices are sorted internally.
    pub fn block(&self, sub: &[usize], sup: &[usize]) -> Option<&Array2<f64>> {
        let mut s = sub.to_vec();
        let mut p = sup.to_vec();
        s.sort_unstable();
        p.sort_unstable();
        self.blocks.get(&(s, p))
    }

    pub fn keys(&self) -> impl Iterator<Item = &(Vec<usize>, Vec<usize>)> {
        self.blocks.keys()
    }
}

/// Computes the derivative Gram blocks for `max_order` in `{1, 2, 4}`.
pub fn deriv_grams(
    z: &PointSet,
    zp: &PointSet,
    params: GaussianKernelParams,
    max_order: u8,
) -> Result<DerivGramSet> {
    if !matches!(max_order, 1 | 2 | 4) {
        return Err(CoreError::InvalidArgument(format!(
            "max_order must be 1, 2 or 4, got {max_order}"
        )));
    }
    let ctx = DerivCtx::new(z, zp, params)?;
    let n = z.n_state();
    let mut blocks = BTreeMap::new();
    let mut put = |sub: Vec<usize>, sup: Vec<usize>, m: Array2<f64>| {
        blocks.insert((sub, sup), m);
    };

    for i in 0..n {
        put(vec![i], vec![], ctx.block(&[i], &[])?);
        put(vec![], vec![i], ctx.block(&[], &[i])?);
    }
    if max_order >= 2 {
        for i in 0..n {
            for j in i..n {
                put(vec![i, j], vec![], ctx.block(&[i, j], &[])?);
                put(vec![], vec![i, j], ctx.block(&[], &[i, j])?);
            }
            for j in 0..n {
                put(vec![i], vec![j], ctx.block(&[i], &[j])?);
            }
        }
    }
    if max_order == 4 {
        for a in 0..n {
            for c in 0..n {
                put(vec![a, a], vec![c], ctx.block(&[a, a], &[c])?);
                put(vec![a], vec![c, c], ctx.block(&[a], &[c, c])?);
                put(vec![a, a], vec![c, c], ctx.block(&[a, a], &[c, c])?);
            }
        }
    }

    Ok(DerivGramSet {
        base: ctx.base,
        blocks,
        max_order,
        n_state: n,
    })
}
