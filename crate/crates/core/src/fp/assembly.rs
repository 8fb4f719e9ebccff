//! Assembly of the Fokker-Planck feature Gram matrix and its cross terms.
//!
//! With the uniform-diffusion model the feature map at a training point is
//!
//! ```text
//! phi_tilde(z) = ((-phi_tilde_i(z))_i | 1/2 sum_i phi_tilde_ii(z))
//! phi_tilde_i  = d/dx_i [k(z, .) p(z)]   (product rule: 2 terms)
//! phi_tilde_ii = d2/dx_i2 [k(z, .) p(z)] (product rule: 3 terms)
//! ```
//!
//! so entries of `K~[p, q] = <phi_tilde(z_p), phi_tilde(z_q)>` expand into
//! Hadamard combinations of kernel-derivative values and density values.
//! Everything here is evaluated entrywise and fused: per entry one `exp`
//! plus O(n^2) flops, no intermediate derivative matrices.

use ndarray::Array2;
use rayon::prelude::*;

use crate::density::DensityEvaluation;
use crate::error::{CoreError, Result};
use crate::fastmath;
use crate::kernel::GaussianKernelParams;
use crate::points::PointSet;

/// Maximum state dimension the fused kernels are instantiated for.
pub const MAX_STATE_DIM: usize = 4;

/// Per-point density values in the layout the entry kernels consume.
struct DensSlices<'a> {
    p: &'a [f64],
    /// `N x n` gradient, row-major.
    dx: Vec<f64>,
    /// `N x n` diagonal second derivatives, row-major.
    dxx: Vec<f64>,
    n: usize,
}

impl<'a> DensSlices<'a> {
    fn new(points: &PointSet, dens: &'a DensityEvaluation) -> Result<Self> {
        let n = points.n_state();
        if dens.len() != points.len() || !dens.has_derivs() || dens.dx.ncols() != n {
            return Err(CoreError::InvalidArgument(
                "density evaluation misaligned with points".into(),
            ));
        }
        if n > MAX_STATE_DIM {
            return Err(CoreError::InvalidArgument(format!(
                "state dimension {n} above supported maximum {MAX_STATE_DIM}"
            )));
        }
        let len = points.len();
        let mut dx = vec![0.0; len * n];
        let mut dxx = vec![0.0; len * n];
        for l in 0..len {
            for a in 0..n {
                dx[l * n + a] = dens.dx[[l, a]];
                dxx[l * n + a] = dens.dxx[[l, a, a]];
            }
        }
        Ok(Self {
            p: dens.p.as_slice().expect("density values are contiguous"),
            dx,
            dxx,
            n,
        })
    }
}

/// One `K~` entry given the base kernel value and coordinate differences.
///
/// `r[a] = z_row[x_a] - z_col[x_a]`; subscripts differentiate the row
/// argument, superscripts the column argument.
#[allow(clippy::too_many_arguments)]
#[inline]
fn tilde_entry(
    n: usize,
    u: f64, // -2 gamma
    e: f64, // base kernel value
    r: &[f64],
    p_l: f64,
    dx_l: &[f64],
    dxx_l: &[f64],
    p_q: f64,
    dx_q: &[f64],
    dxx_q: &[f64],
) -> f64 {
    let mut ka = [0.0f64; MAX_STATE_DIM];
    let mut kaa = [0.0f64; MAX_STATE_DIM];
    for a in 0..n {
        ka[a] = u * r[a] * e;
        kaa[a] = u * (r[a] * ka[a] + e);
    }

    // Drift blocks: sum_a <phi_tilde_a(row), phi_tilde_a(col)>.
    let mut acc = 0.0;
    for a in 0..n {
        acc += e * dx_l[a] * dx_q[a] + ka[a] * (p_l * dx_q[a] - dx_l[a] * p_q)
            - kaa[a] * p_l * p_q;
    }

    // Diffusion block: 1/4 sum_{a,c} <phi_tilde_aa(row), phi_tilde_cc(col)>.
    let mut sacc = 0.0;
    for a in 0..n {
        for c in 0..n {
            let dac = if a == c { 1.0 } else { 0.0 };
            let kac = u * (r[c] * ka[a] + dac * e);
            // K_aa^c = -K_a^{ac} = -u (r_c K_aa + 2 d_ac K_a)
            let kaa_c = -u * (r[c] * kaa[a] + 2.0 * dac * ka[a]);
            // K_a^{cc} = u (r_c K_ac + d_ac K_c + K_a)
            let ka_cc = u * (r[c] * kac + dac * ka[c] + ka[a]);
            // K_aa^{cc} = u (-r_c K_aa^c + 2 d_ac K_ac + K_aa)
            let kaa_cc = u * (-r[c] * kaa_c + 2.0 * dac * kac + kaa[a]);
            sacc += e * dxx_l[a] * dxx_q[c]
                + 2.0 * ka[a] * dx_l[a] * dxx_q[c]
                + kaa[a] * p_l * dxx_q[c]
                - 2.0 * ka[c] * dxx_l[a] * dx_q[c]
                - 4.0 * kac * dx_l[a] * dx_q[c]
                + 2.0 * kaa_c * p_l * dx_q[c]
                + kaa[c] * dxx_l[a] * p_q
                + 2.0 * ka_cc * dx_l[a] * p_q
                + kaa_cc * p_l * p_q;
        }
    }
    acc + 0.25 * sacc
}

const TILE: usize = 256;

fn fill_rows(
    out: &mut [f64],
    row_range: std::ops::Range<usize>,
    rows: &PointSet,
    rd: &DensSlices,
    cols: &PointSet,
    cd: &DensSlices,
    gamma: f64,
    lower_limit: bool,
) {
    let n = rd.n;
    let dim = rows.dim();
    let u = -2.0 * gamma;
    let ncols = cols.len();
    let rc = rows.coords();
    let cc = cols.coords();
    let rcs = rc.as_slice().expect("coords contiguous");
    let ccs = cc.as_slice().expect("coords contiguous");
    let mut args = vec![0.0f64; TILE];
    for l in row_range.clone() {
        let zl = &rcs[l * dim..(l + 1) * dim];
        let out_row =
            &mut out[(l - row_range.start) * ncols..(l - row_range.start + 1) * ncols];
        let q_start = if lower_limit { l } else { 0 };
        let mut q0 = q_start;
        while q0 < ncols {
            let q1 = (q0 + TILE).min(ncols);
            for q in q0..q1 {
                let zq = &ccs[q * dim..(q + 1) * dim];
                args[q - q0] = -gamma * crate::kernel::sq_dist(zl, zq);
            }
            fastmath::exp_slice(&mut args[..q1 - q0]);
            for q in q0..q1 {
                let zq = &ccs[q * dim..(q + 1) * dim];
                let mut r = [0.0f64; MAX_STATE_DIM];
                for a in 0..n {
                    r[a] = zl[1 + a] - zq[1 + a];
                }
                out_row[q] = tilde_entry(
                    n,
                    u,
                    args[q - q0],
                    &r,
                    rd.p[l],
                    &rd.dx[l * n..(l + 1) * n],
                    &rd.dxx[l * n..(l + 1) * n],
                    cd.p[q],
                    &cd.dx[q * n..(q + 1) * n],
                    &cd.dxx[q * n..(q + 1) * n],
                );
            }
            q0 = q1;
        }
    }
}

/// Rectangular cross Gram `K~[l, q]` between two evaluated point sets.
pub fn tilde_cross(
    rows: &PointSet,
    rows_dens: &DensityEvaluation,
    cols: &PointSet,
    cols_dens: &DensityEvaluation,
    params: GaussianKernelParams,
) -> Result<Array2<f64>> {
    rows.compatible(cols)?;
    let rd = DensSlices::new(rows, rows_dens)?;
    let cd = DensSlices::new(cols, cols_dens)?;
    let (nr, nc) = (rows.len(), cols.len());
    let mut out = vec![0.0f64; nr * nc];
    let chunk = 64usize;
    out.par_chunks_mut(chunk * nc)
        .enumerate()
        .for_each(|(ci, slab)| {
            let lo = ci * chunk;
            let hi = (lo + chunk).min(nr);
            fill_rows(slab, lo..hi, rows, &rd, cols, &cd, params.gamma(), false);
        });
    Ok(Array2::from_shape_vec((nr, nc), out).expect("shape matches"))
}

/// Square symmetric Gram `K~` over one evaluated point set. Computes the
/// upper triangle and mirrors it, so the result is exactly symmetric.
pub fn tilde_square(
    points: &PointSet,
    dens: &DensityEvaluation,
    params: GaussianKernelParams,
) -> Result<Array2<f64>> {
    let d = DensSlices::new(points, dens)?;
    let n_pts = points.len();
    let mut out = vec![0.0f64; n_pts * n_pts];
    let chunk = 64usize;
    out.par_chunks_mut(chunk * n_pts)
        .enumerate()
        .for_each(|(ci, slab)| {
            let lo = ci * chunk;
            let hi = (lo + chunk).min(n_pts);
            fill_rows(slab, lo..hi, points, &d, points, &d, params.gamma(), true);
        });
    let mut m = Array2::from_shape_vec((n_pts, n_pts), out).expect("shape matches");
    for l in 0..n_pts {
        for q in 0..l {
            m[[l, q]] = m[[q, l]];
        }
    }
    Ok(m)
}

/// Cross matrix of the diffusion feature against plain kernel sections:
/// `R[l, j] = r_sigma(z_l, w_j) = <1/2 sum_a phi_tilde_aa(z_l), phi(w_j)>`.
///
/// Rows carry density evaluations; columns are plain points.
pub fn sigma_cross(
    rows: &PointSet,
    rows_dens: &DensityEvaluation,
    cols: &PointSet,
    params: GaussianKernelParams,
) -> Result<Array2<f64>> {
    rows.compatible(cols)?;
    let rd = DensSlices::new(rows, rows_dens)?;
    let gamma = params.gamma();
    let u = -2.0 * gamma;
    let n = rd.n;
    let dim = rows.dim();
    let (nr, nc) = (rows.len(), cols.len());
    let rcs = rows.coords();
    let rcs = rcs.as_slice().expect("coords contiguous");
    let ccs = cols.coords();
    let ccs = ccs.as_slice().expect("coords contiguous");
    let mut out = vec![0.0f64; nr * nc];
    out.par_chunks_mut(nc).enumerate().for_each(|(l, row)| {
        let zl = &rcs[l * dim..(l + 1) * dim];
        let mut args = vec![0.0f64; nc];
        for q in 0..nc {
            let zq = &ccs[q * dim..(q + 1) * dim];
            args[q] = -gamma * crate::kernel::sq_dist(zl, zq);
        }
        fastmath::exp_slice(&mut args);
        for q in 0..nc {
            let zq = &ccs[q * dim..(q + 1) * dim];
            let e = args[q];
            let mut acc = 0.0;
            for a in 0..n {
                let ra = zl[1 + a] - zq[1 + a];
                let ka = u * ra * e;
                let kaa = u * (ra * ka + e);
                acc += rd.p[l] * kaa
                    + 2.0 * rd.dx[l * n + a] * ka
                    + rd.dxx[l * n + a] * e;
            }
            row[q] = 0.5 * acc;
        }
    });
    Ok(Array2::from_shape_vec((nr, nc), out).expect("shape matches"))
}
