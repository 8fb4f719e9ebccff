//! Projected gradient ascent for the non-negative dual of the soft shape
//! constraint.
//!
//! The dual is the concave quadratic `QP(g) = -g' A g - 2 g' h` maximized
//! over `g >= 0`, with `A` positive semi-definite. The gradient is
//! `-2 (A g + h)`; ascent steps use `1/L` with `L` the Gershgorin bound of
//! the Hessian `2A`, and iterates are projected onto the orthant. At a KKT
//! point, `-(gradient)/2 = A g + h` equals the constrained diffusion value
//! at each constraint point, so feasibility and complementary slackness
//! fall out of the stationarity conditions.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{CoreError, Result};

pub const DUAL_TOL: f64 = 1e-8;
pub const DUAL_MAX_ITER: usize = 10_000;

/// Maximizes `-g' A g - 2 g' h` over `g >= 0`.
pub fn solve_nonneg_qp(
    a: ArrayView2<f64>,
    h: ArrayView1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Array1<f64>> {
    let m = h.len();
    assert_eq!(a.nrows(), m);
    assert_eq!(a.ncols(), m);

    // Lipschitz constant of the gradient via Gershgorin on 2A.
    let mut lips = 0.0f64;
    for i in 0..m {
        let row_sum: f64 = a.row(i).iter().map(|v| v.abs()).sum();
        lips = lips.max(2.0 * row_sum);
    }
    let step = 1.0 / lips.max(1e-300);

    let mut gamma = Array1::<f64>::zeros(m);
    let mut grad = Array1::<f64>::zeros(m);
    for iter in 0..max_iter {
        // grad = -2 (A gamma + h)
        for i in 0..m {
            let mut s = h[i];
            for j in 0..m {
                s += a[[i, j]] * gamma[j];
            }
            grad[i] = -2.0 * s;
        }
        // Projected gradient: free coordinates keep their gradient, active
        // ones only count ascent directions leaving the boundary.
        let mut pg_norm2 = 0.0;
        for i in 0..m {
            let pg = if gamma[i] > 0.0 {
                grad[i]
            } else {
                grad[i].max(0.0)
            };
            pg_norm2 += pg * pg;
        }
        if pg_norm2.sqrt() <= tol {
            return Ok(gamma);
        }
        for i in 0..m {
            gamma[i] = (gamma[i] + step * grad[i]).max(0.0);
        }
        if iter + 1 == max_iter {
            return Err(CoreError::DualNotConverged {
                residual: pg_norm2.sqrt(),
                iterations: max_iter,
            });
        }
    }
    Ok(gamma)
}
