//! SPD factorization and triangular solves, blocked over `dgemm`.
//!
//! Kernel Gram matrices on clustered points are routinely rank-deficient to
//! machine precision. Every factorization in the pipeline goes through
//! [`CholFactor::new`], which retries the Cholesky decomposition with an
//! escalating diagonal shift (relative to the mean diagonal) before giving
//! up.
//!
//! The factorization and solves are written here as blocked recursions whose
//! bulk work lands in `dgemm`; see the note in [`crate::blas`] on why the
//! library `dpotrf`/`dtrsm` are not used.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use crate::blas;
use crate::error::{CoreError, Result};

/// Initial jitter, as a fraction of the mean diagonal.
pub const JITTER_INITIAL: f64 = 1e-10;
/// Largest jitter tried before failing, as a fraction of the mean diagonal.
pub const JITTER_MAX: f64 = 1e-4;

/// Block size below which substitution runs unblocked.
const TRSM_BASE: usize = 48;
/// Panel width for the blocked Cholesky.
const CHOL_PANEL: usize = 192;

/// Unblocked upper Cholesky: `a` (row-major, symmetric) is overwritten in
/// its upper triangle with `U`, `A = U^T U`. Returns the failing pivot.
fn potrf_unblocked(a: &mut ArrayViewMut2<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[k, j]] * a[[k, j]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let dj = d.sqrt();
        a[[j, j]] = dj;
        let inv = 1.0 / dj;
        for i in j + 1..n {
            let mut s_ = a[[j, i]];
            for k in 0..j {
                s_ -= a[[k, i]] * a[[k, j]];
            }
            a[[j, i]] = s_ * inv;
        }
    }
    Ok(())
}

/// Blocked upper Cholesky (`A = U^T U`), bulk work in dgemm.
fn potrf_blocked(a: &mut Array2<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    let mut done = 0;
    while done < n {
        let b = CHOL_PANEL.min(n - done);
        let (head, mut tail) = a.view_mut().split_at(Axis(0), done + b);
        let mut head = head.slice_move(s![done.., ..]);
        {
            let mut diag = head.slice_mut(s![.., done..done + b]);
            potrf_unblocked(&mut diag).map_err(|j| done + j)?;
        }
        if done + b < n {
            // Panel: U12 = U11^{-T} A12.
            let (u11, mut a12) = head.split_at(Axis(1), done + b);
            let u11 = u11.slice_move(s![.., done..]);
            let mut a12 = a12.view_mut();
            trsm_upper_left(u11.view(), true, &mut a12);
            // Trailing update: A22 -= U12^T U12, upper blocks only.
            let u12 = a12.view();
            let mut tail = tail.view_mut().slice_move(s![.., done + b..]);
            let cols = tail.ncols();
            let mut j0 = 0;
            while j0 < cols {
                let w = CHOL_PANEL.min(cols - j0);
                let c_rows = j0 + w; // only rows up to the diagonal block
                let mut cblk = tail.slice_mut(s![..c_rows, j0..j0 + w]);
                blas::gemm(
                    -1.0,
                    u12.slice(s![.., ..c_rows]),
                    true,
                    u12.slice(s![.., j0..j0 + w]),
                    false,
                    1.0,
                    &mut cblk,
                );
                j0 += w;
            }
        }
        done += b;
    }
    // Zero the (unreferenced) lower triangle so the factor is clean.
    for i in 1..n {
        for j in 0..i {
            a[[i, j]] = 0.0;
        }
    }
    Ok(())
}

/// Solves `op(U) X = B` in place where `U` is row-major upper triangular,
/// `op` is identity or transpose. `B` is row-major, overwritten with `X`.
pub fn trsm_upper_left(u: ArrayView2<f64>, transpose: bool, b: &mut ArrayViewMut2<f64>) {
    let n = u.nrows();
    debug_assert_eq!(n, u.ncols());
    debug_assert_eq!(n, b.nrows());
    if n == 0 || b.ncols() == 0 {
        return;
    }
    if n <= TRSM_BASE {
        let k = b.ncols();
        if !transpose {
            // Back substitution.
            for i in (0..n).rev() {
                let inv = 1.0 / u[[i, i]];
                for j in i + 1..n {
                    let m = u[[i, j]];
                    if m != 0.0 {
                        let (row_j, mut row_i) = {
                            let (top, bot) = b.view_mut().split_at(Axis(0), j);
                            (bot.row(0).to_owned(), top.slice_move(s![i..i + 1, ..]))
                        };
                        for c in 0..k {
                            row_i[[0, c]] -= m * row_j[c];
                        }
                    }
                }
                for c in 0..k {
                    b[[i, c]] *= inv;
                }
            }
        } else {
            // Forward substitution with U^T (lower).
            for i in 0..n {
                for j in 0..i {
                    let m = u[[j, i]];
                    if m != 0.0 {
                        for c in 0..k {
                            let v = b[[j, c]];
                            b[[i, c]] -= m * v;
                        }
                    }
                }
                let inv = 1.0 / u[[i, i]];
                for c in 0..k {
                    b[[i, c]] *= inv;
                }
            }
        }
        return;
    }

    let h = n / 2;
    let u11 = u.slice(s![..h, ..h]);
    let u12 = u.slice(s![..h, h..]);
    let u22 = u.slice(s![h.., h..]);
    let (mut b1, mut b2) = b.view_mut().split_at(Axis(0), h);
    if !transpose {
        // U11 X1 + U12 X2 = B1 ; U22 X2 = B2.
        trsm_upper_left(u22, false, &mut b2);
        blas::gemm(-1.0, u12, false, b2.view(), false, 1.0, &mut b1);
        trsm_upper_left(u11, false, &mut b1);
    } else {
        // U11^T X1 = B1 ; U12^T X1 + U22^T X2 = B2.
        trsm_upper_left(u11, true, &mut b1);
        blas::gemm(-1.0, u12, true, b1.view(), false, 1.0, &mut b2);
        trsm_upper_left(u22, true, &mut b2);
    }
}

/// Cholesky factor `U` (row-major upper, `A = U^T U`) of a jittered SPD
/// matrix.
#[derive(Debug, Clone)]
pub struct CholFactor {
    u: Array2<f64>,
    /// Absolute jitter that was actually added to the diagonal.
    pub jitter: f64,
}

impl CholFactor {
    /// Factorizes a symmetric positive semi-definite matrix, escalating the
    /// diagonal shift from `JITTER_INITIAL` by factors of 10 up to
    /// `JITTER_MAX` (both relative to the mean diagonal).
    pub fn new(a: ArrayView2<f64>) -> Result<Self> {
        Self::with_diag_shift(a, 0.0)
    }

    /// Factorizes with the escalation starting at `JITTER_INITIAL` instead
    /// of zero. Used for temporal Grams, which are near-singular on dense
    /// time grids and need the floor for a usable condition number.
    pub fn new_jittered(a: ArrayView2<f64>) -> Result<Self> {
        Self::factorize(a, 0.0, JITTER_INITIAL)
    }

    /// Same as [`CholFactor::new`] but with a fixed shift `ridge` added to
    /// the diagonal before factorizing (for `K + N*lambda*I` systems).
    pub fn with_diag_shift(a: ArrayView2<f64>, ridge: f64) -> Result<Self> {
        Self::factorize(a, ridge, 0.0)
    }

    fn factorize(a: ArrayView2<f64>, ridge: f64, rel_start: f64) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(CoreError::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        if n == 0 {
            return Err(CoreError::EmptyInput("cannot factorize a 0x0 matrix".into()));
        }
        if !a.iter().all(|v| v.is_finite()) || !ridge.is_finite() {
            return Err(CoreError::InvalidArgument(
                "matrix contains non-finite entries".into(),
            ));
        }
        let mean_diag = (a.diag().sum() / n as f64) + ridge;
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };

        // Escalate the relative jitter from the starting value.
        let mut rel = rel_start;
        loop {
            let shift = ridge + rel * scale;
            let mut work = Array2::zeros((n, n));
            work.assign(&a);
            if shift != 0.0 {
                for i in 0..n {
                    work[[i, i]] += shift;
                }
            }
            match potrf_blocked(&mut work) {
                Ok(()) => {
                    return Ok(Self {
                        u: work,
                        jitter: rel * scale,
                    })
                }
                Err(_) => {
                    if rel == 0.0 {
                        rel = JITTER_INITIAL;
                    } else if rel < JITTER_MAX {
                        rel *= 10.0;
                    } else {
                        return Err(CoreError::FactorizationFailed {
                            last_jitter: rel * scale,
                        });
                    }
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// The upper factor `U` with `A + jitter*I = U^T U`.
    pub fn factor(&self) -> ArrayView2<f64> {
        self.u.view()
    }

    /// Solves `A x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut x = Array2::zeros((n, 1));
        x.column_mut(0).assign(&b);
        self.solve_mat_inplace(&mut x.view_mut());
        x.remove_axis(Axis(1))
    }

    /// Solves `A X = B` for a matrix of right-hand sides (row-major).
    pub fn solve_mat(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut x = Array2::zeros(b.raw_dim());
        x.assign(&b);
        self.solve_mat_inplace(&mut x.view_mut());
        x
    }

    /// In-place variant of [`CholFactor::solve_mat`].
    pub fn solve_mat_inplace(&self, b: &mut ArrayViewMut2<f64>) {
        assert_eq!(b.nrows(), self.dim(), "rhs rows must match system size");
        // A = U^T U: forward with U^T, back with U.
        trsm_upper_left(self.u.view(), true, b);
        trsm_upper_left(self.u.view(), false, b);
    }

    /// Explicit inverse; only sensible for small systems such as the
    /// temporal Gram.
    pub fn inverse(&self) -> Array2<f64> {
        self.solve_mat(Array2::eye(self.dim()).view())
    }
}

/// Eigenvalues of a small symmetric matrix by the cyclic Jacobi method,
/// ascending. Test oracles and feasibility checks only; O(n^3) per sweep.
pub fn sym_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenvalues need a square matrix");
    let mut m = Array2::zeros((n, n));
    m.assign(&a);
    // Symmetrize against rounding in the caller.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let scale = m.iter().fold(0.0f64, |mx, v| mx.max(v.abs())).max(1.0);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(m[[i, j]].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s_ = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s_ * mkq;
                    m[[k, q]] = s_ * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s_ * mqk;
                    m[[q, k]] = s_ * mpk + c * mqk;
                }
            }
        }
    }
    let mut w: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    w
}
