//! Row-major `gemm` facade.
//!
//! All dense products route through `ndarray`'s matrixmultiply backend. The
//! system BLAS is deliberately not linked: its optimized `dtrsm`/`dpotrf`/
//! `dgemm` kernels produce wrong results for some shapes on recent CPU
//! generations, and a reproducible pure-Rust path is worth more here than
//! the last factor of two in throughput.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

/// `c = alpha * op(a) . op(b) + beta * c`, all row-major.
pub fn gemm(
    alpha: f64,
    a: ArrayView2<f64>,
    trans_a: bool,
    b: ArrayView2<f64>,
    trans_b: bool,
    beta: f64,
    c: &mut ArrayViewMut2<f64>,
) {
    let av = if trans_a { a.reversed_axes() } else { a };
    let bv = if trans_b { b.reversed_axes() } else { b };
    ndarray::linalg::general_mat_mul(alpha, &av, &bv, beta, c);
}

/// Convenience allocating form: `alpha * op(a) . op(b)`.
pub fn gemm_alloc(
    alpha: f64,
    a: ArrayView2<f64>,
    trans_a: bool,
    b: ArrayView2<f64>,
    trans_b: bool,
) -> Array2<f64> {
    let m = if trans_a { a.ncols() } else { a.nrows() };
    let n = if trans_b { b.nrows() } else { b.ncols() };
    let mut c = Array2::zeros((m, n));
    gemm(alpha, a, trans_a, b, trans_b, 0.0, &mut c.view_mut());
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gemm_matches_ndarray_dot() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let b = array![[1.0, 0.5], [-1.0, 2.0], [0.0, 1.0]];
        let c = gemm_alloc(1.0, a.view(), false, b.view(), false);
        assert_eq!(c, a.dot(&b));

        let ct = gemm_alloc(2.0, a.view(), true, a.view(), false);
        let want = a.t().dot(&a) * 2.0;
        assert!((&ct - &want).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gemm_random_shapes_and_strides() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let m = rng.gen_range(1..40);
            let k = rng.gen_range(1..40);
            let n = rng.gen_range(1..40);
            let a = Array2::from_shape_fn((m, k), |_| rng.gen_range(-1.0..1.0));
            let b = Array2::from_shape_fn((k, n), |_| rng.gen_range(-1.0..1.0));
            let c = gemm_alloc(1.0, a.view(), false, b.view(), false);
            let want = a.dot(&b);
            let diff = (&c - &want).iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
            assert!(diff < 1e-12, "m={m} k={k} n={n}: diff {diff:e}");

            if m > 2 && k > 2 {
                let asub = a.slice(s![1.., 1..]);
                let bsub = b.slice(s![1.., ..]);
                let c2 = gemm_alloc(1.0, asub, false, bsub, false);
                let want2 = asub.dot(&bsub);
                let diff2 = (&c2 - &want2).iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
                assert!(diff2 < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_transposed_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Array2::from_shape_fn((13, 7), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((13, 9), |_| rng.gen_range(-1.0..1.0));
        let c = gemm_alloc(1.0, a.view(), true, b.view(), false);
        let want = a.t().dot(&b);
        assert!((&c - &want).iter().all(|v| v.abs() < 1e-12));

        let d = gemm_alloc(1.0, b.view(), true, a.view(), false);
        let want = b.t().dot(&a);
        assert!((&d - &want).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let mut c = array![[5.0, 5.0], [5.0, 5.0]];
        gemm(1.0, a.view(), false, a.view(), false, 2.0, &mut c.view_mut());
        assert_eq!(c, array![[11.0, 10.0], [10.0, 11.0]]);
    }
}
