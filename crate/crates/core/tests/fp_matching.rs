//! End-to-end behavior of Fokker-Planck matching on synthetic fields with
//! exactly known density derivatives.

use fp_sde_core::density::DensityEvaluation;
use fp_sde_core::fp::{
    self, assemble_tilde_gram, fit_fp, fit_fp_constrained, fit_fp_nystrom, strong_fp_residual,
    FPDesign, FPModel, FPTrainingSet,
};
use fp_sde_core::kernel::{gram, GaussianKernelParams};
use fp_sde_core::linalg::{sym_eigenvalues, CholFactor};
use fp_sde_core::points::{Point, PointSet};
use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn random_points(rng: &mut impl Rng, n_pts: usize, dim: usize) -> PointSet {
    let pts: Vec<Point> = (0..n_pts)
        .map(|_| {
            Point::new(
                rng.gen_range(0.0..2.0),
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    PointSet::from_points(&pts).unwrap()
}

/// Smooth synthetic density with exact derivatives.
fn synthetic_dens(points: &PointSet) -> DensityEvaluation {
    let n = points.n_state();
    let len = points.len();
    let mut p = Array1::zeros(len);
    let mut dt = Array1::zeros(len);
    let mut dx = Array2::zeros((len, n));
    let mut dxx = Array3::zeros((len, n, n));
    for l in 0..len {
        let t = points.t(l);
        let x: Vec<f64> = (0..n)
            .map(|a| points.coords()[[l, PointSet::state_col(a)]])
            .collect();
        let s: f64 = x.iter().map(|v| v * v).sum();
        let e = (-0.4 * (s + 0.5 * t)).exp();
        p[l] = e + 0.3;
        dt[l] = -0.2 * e;
        for a in 0..n {
            dx[[l, a]] = -0.8 * x[a] * e;
            for b in 0..n {
                let dab = if a == b { 1.0 } else { 0.0 };
                dxx[[l, a, b]] = (0.64 * x[a] * x[b] - 0.8 * dab) * e;
            }
        }
    }
    DensityEvaluation { p, dx, dxx, dt }
}

fn training_set(rng: &mut impl Rng, n_pts: usize, dim: usize) -> FPTrainingSet {
    let z = random_points(rng, n_pts, dim);
    let dens = synthetic_dens(&z);
    FPTrainingSet::new(z, dens).unwrap()
}

#[test]
fn zero_target_gives_zero_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut train = training_set(&mut rng, 20, 1);
    train.dens.dt.fill(0.0);
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let model = fit_fp(Arc::new(train), 1e-3, kp).unwrap();
    for _ in 0..10 {
        let (b, s2) = model
            .predict_point(rng.gen_range(0.0..2.0), &[rng.gen_range(-1.0..1.0)], None)
            .unwrap();
        assert_eq!(b[0], 0.0);
        assert_eq!(s2, 0.0);
    }
}

#[test]
fn huge_ridge_shrinks_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut train = training_set(&mut rng, 30, 1);
    // Unit-normalized random target.
    let norm = train.dens.dt.iter().map(|v| v * v).sum::<f64>().sqrt();
    train.dens.dt.mapv_inplace(|v| v / norm);
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let model = fit_fp(Arc::new(train), 1e6, kp).unwrap();
    let mut sup_b = 0.0f64;
    let mut sup_s = 0.0f64;
    for _ in 0..50 {
        let (b, s2) = model
            .predict_point(rng.gen_range(0.0..2.0), &[rng.gen_range(-1.0..1.0)], None)
            .unwrap();
        sup_b = sup_b.max(b[0].abs());
        sup_s = sup_s.max(s2.abs());
    }
    assert!(sup_b < 1e-3, "sup |b| = {sup_b}");
    assert!(sup_s < 1e-3, "sup |sigma^2| = {sup_s}");
}

#[test]
fn inactive_constraints_leave_fit_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut train = training_set(&mut rng, 40, 1);
    let kp = GaussianKernelParams::new(0.6).unwrap();
    let lambda = 1e-3;

    // Force a target whose unconstrained sigma^2 is non-negative on the
    // constraint set; flip the sign if needed.
    let unc = fit_fp(Arc::new(train.clone()), lambda, kp).unwrap();
    let sig = unc.sigma_at_constraints();
    if sig.iter().any(|&v| v < 0.0) {
        train.dens.dt.mapv_inplace(|v| -v);
        let again = fit_fp(Arc::new(train.clone()), lambda, kp).unwrap();
        assert!(
            again.sigma_at_constraints().iter().all(|&v| v >= 0.0),
            "could not engineer an all-feasible instance"
        );
    }
    let train = Arc::new(train);
    let design = FPDesign::new(train, kp).unwrap();
    let unc = design.fit(lambda, false).unwrap();
    let con = design.fit(lambda, true).unwrap();
    assert!(con.gamma_dual().iter().all(|&g| g == 0.0));
    for _ in 0..20 {
        let t = rng.gen_range(0.0..2.0);
        let x = [rng.gen_range(-1.0..1.0)];
        let (bu, su) = unc.predict_point(t, &x, None).unwrap();
        let (bc, sc) = con.predict_point(t, &x, None).unwrap();
        assert!((bu[0] - bc[0]).abs() <= 1e-10);
        assert!((su - sc).abs() <= 1e-10);
    }
}

#[test]
fn single_constraint_matches_scalar_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = training_set(&mut rng, 30, 1);
    let kp = GaussianKernelParams::new(0.7).unwrap();
    let lambda = 1e-3;

    // Pick the constraint point where the unconstrained fit is most
    // negative; flip the target sign if no violation exists.
    let mut train = base.clone();
    let probe = fit_fp(Arc::new(train.clone()), lambda, kp).unwrap();
    let sig = probe.sigma_at_constraints();
    let (mut jmin, mut vmin) = (0usize, f64::INFINITY);
    for (j, &v) in sig.iter().enumerate() {
        if v < vmin {
            vmin = v;
            jmin = j;
        }
    }
    if vmin >= 0.0 {
        train.dens.dt.mapv_inplace(|v| -v);
        let probe = fit_fp(Arc::new(train.clone()), lambda, kp).unwrap();
        let sig = probe.sigma_at_constraints();
        let (j2, v2) = sig
            .iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |acc, (j, &v)| {
                if v < acc.1 {
                    (j, v)
                } else {
                    acc
                }
            });
        jmin = j2;
        assert!(v2 < 0.0, "no violated constraint to test against");
    }

    let train =
        FPTrainingSet::with_constraints(train.points.clone(), train.dens.clone(), vec![jmin])
            .unwrap();
    let n = train.len();
    let train = Arc::new(train);
    let model = fit_fp_constrained(train.clone(), lambda, kp).unwrap();

    // Closed form: gamma* = max(0, -h/a) with
    // a = (k(z_j,z_j) - r' (K~+N lambda I)^{-1} r) / lambda, h = sigma_std(z_j).
    let ktilde = assemble_tilde_gram(&train, kp).unwrap();
    let factor = CholFactor::with_diag_shift(ktilde.view(), n as f64 * lambda).unwrap();
    let cpoints = train.points.select(&[jmin]);
    let r = fp::assembly::sigma_cross(&train.points, &train.dens, &cpoints, kp).unwrap();
    let rcol = r.column(0).to_owned();
    let x = factor.solve_vec(rcol.view());
    let kjj = gram(&cpoints, &cpoints, kp).unwrap()[[0, 0]];
    let a = (kjj - rcol.dot(&x)) / lambda;
    let c = factor.solve_vec(train.target().view());
    let h = rcol.dot(&c);
    let want = (-h / a).max(0.0);
    assert!(want > 0.0, "engineered constraint is not active");
    assert!(
        (model.gamma_dual()[0] - want).abs() <= 1e-8 * want.max(1.0),
        "gamma {} vs closed form {want}",
        model.gamma_dual()[0]
    );
    let s_con = model.sigma_at_constraints()[0];
    assert!(s_con >= -1e-8, "constrained sigma^2 {s_con}");
}

#[test]
fn engineered_violations_are_repaired() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut train = training_set(&mut rng, 50, 1);
    let kp = GaussianKernelParams::new(0.6).unwrap();
    let lambda = 1e-4;

    let probe = fit_fp(Arc::new(train.clone()), lambda, kp).unwrap();
    let neg = probe
        .sigma_at_constraints()
        .iter()
        .filter(|&&v| v < 0.0)
        .count();
    if neg < 3 {
        train.dens.dt.mapv_inplace(|v| -v);
    }
    let train = Arc::new(train);
    let probe = fit_fp(train.clone(), lambda, kp).unwrap();
    let neg = probe
        .sigma_at_constraints()
        .iter()
        .filter(|&&v| v < 0.0)
        .count();
    assert!(neg >= 3, "engineering produced only {neg} violations");

    let model = fit_fp_constrained(train, lambda, kp).unwrap();
    let sig = model.sigma_at_constraints();
    for (j, &v) in sig.iter().enumerate() {
        assert!(v >= -1e-8, "constraint {j}: sigma^2 = {v:e}");
        let slack = model.gamma_dual()[j] * v;
        assert!(slack.abs() <= 1e-6, "slackness {j}: {slack:e}");
    }
    assert!(model.gamma_dual().iter().all(|&g| g >= 0.0));
}

#[test]
fn dual_matrix_is_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &(n_pts, dim) in &[(30usize, 1usize), (40, 2)] {
        let train = training_set(&mut rng, n_pts, dim);
        let kp = GaussianKernelParams::new(0.5).unwrap();
        let lambda = 1e-3;
        let ktilde = assemble_tilde_gram(&train, kp).unwrap();
        let factor = CholFactor::with_diag_shift(ktilde.view(), n_pts as f64 * lambda).unwrap();
        let cpoints = train.points.clone();
        let r = fp::assembly::sigma_cross(&train.points, &train.dens, &cpoints, kp).unwrap();
        let x = factor.solve_mat(r.view());
        let kii = gram(&cpoints, &cpoints, kp).unwrap();
        let mut a = &kii - &r.t().dot(&x);
        a.mapv_inplace(|v| v / lambda);
        let w = sym_eigenvalues(a.view());
        assert!(
            w[0] >= -1e-8 * w.last().unwrap().max(1.0),
            "min eigenvalue {}",
            w[0]
        );
    }
}

#[test]
fn nystrom_with_all_anchors_reproduces_full_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train = Arc::new(training_set(&mut rng, 40, 1));
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let lambda = 1e-2;
    let full = fit_fp(train.clone(), lambda, kp).unwrap();
    let ny = fit_fp_nystrom(train.clone(), lambda, kp, (0..train.len()).collect(), false).unwrap();
    for _ in 0..20 {
        let t = rng.gen_range(0.0..2.0);
        let x = [rng.gen_range(-1.0..1.0)];
        let (bf, sf) = full.predict_point(t, &x, None).unwrap();
        let (bn, sn) = ny.predict_point(t, &x, None).unwrap();
        assert!(
            (bf[0] - bn[0]).abs() <= 1e-8,
            "drift {} vs {}",
            bf[0],
            bn[0]
        );
        assert!((sf - sn).abs() <= 1e-8, "sigma {sf} vs {sn}");
    }
}

#[test]
fn nystrom_rejects_bad_anchor_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = Arc::new(training_set(&mut rng, 10, 1));
    let kp = GaussianKernelParams::new(0.5).unwrap();
    assert!(fit_fp_nystrom(train.clone(), 1e-2, kp, vec![], false).is_err());
    assert!(fit_fp_nystrom(train.clone(), 1e-2, kp, vec![0, 0], false).is_err());
    assert!(fit_fp_nystrom(train, 1e-2, kp, vec![11], false).is_err());
}

#[test]
fn residual_of_zero_model_is_mean_squared_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train = Arc::new(training_set(&mut rng, 25, 1));
    let kp = GaussianKernelParams::new(0.5).unwrap();
    // Zero model: fit on a zero target, evaluate on the real set.
    let mut zero_train = (*train).clone();
    zero_train.dens.dt.fill(0.0);
    let zero_model = fit_fp(Arc::new(zero_train), 1e-3, kp).unwrap();
    let mse = zero_model.residual_mse(&train).unwrap();
    let want = fp::zero_model_mse(&train);
    assert!((mse - want).abs() < 1e-12 * want.max(1.0));

    // Permutation invariance of the validation MSE.
    let model = fit_fp(train.clone(), 1e-3, kp).unwrap();
    let mse1 = model.residual_mse(&train).unwrap();
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..train.len()).collect();
        p.shuffle(&mut rng);
        p
    };
    let vperm = FPTrainingSet::new(train.points.select(&perm), train.dens.select(&perm)).unwrap();
    let mse2 = model.residual_mse(&vperm).unwrap();
    assert!((mse1 - mse2).abs() <= 1e-10 * mse1.max(1.0));
}

#[test]
fn training_mse_is_nondecreasing_in_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let train = Arc::new(training_set(&mut rng, 35, 1));
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let design = FPDesign::new(train.clone(), kp).unwrap();
    let mut last = -1.0;
    for &lambda in &[1e-8, 1e-6, 1e-4, 1e-2, 1e0, 1e2] {
        let model = design.fit(lambda, false).unwrap();
        let mse = model.residual_mse(&train).unwrap();
        assert!(
            mse >= last - 1e-12,
            "training MSE decreased: {last} -> {mse} at lambda {lambda}"
        );
        last = mse;
    }
}

#[test]
fn strong_fp_residual_vanishes_for_analytic_ou() {
    // theta = 0.5, mu = 2.5, sigma^2 = theta/4, stationary-variance start.
    let theta = 0.5f64;
    let mu = 2.5f64;
    let sigma2 = theta / 4.0;
    let mu0 = 0.5f64;
    let var0 = sigma2 / (2.0 * theta);

    let mean = |t: f64| (-theta * t).exp() * (mu0 - mu) + mu;
    let var = |t: f64| {
        let stat = sigma2 / (2.0 * theta);
        (var0 - stat) * (-2.0 * theta * t).exp() + stat
    };

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = rng.gen_range(0.01..10.0);
        let x = rng.gen_range(-1.0..4.0);
        let (m, s) = (mean(t), var(t));
        let z = x - m;
        let p = (-0.5 * z * z / s).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
        let px = -z / s * p;
        let pxx = (z * z / (s * s) - 1.0 / s) * p;
        // m' = theta (mu - m); S' = sigma^2 - 2 theta S
        let mp = theta * (mu - m);
        let sp = sigma2 - 2.0 * theta * s;
        let pt = (mp * z / s + sp * 0.5 * (z * z / (s * s) - 1.0 / s)) * p;

        let b = [theta * (mu - x)];
        let res = strong_fp_residual(
            pt,
            p,
            &[px],
            &[pxx],
            &b,
            -theta,
            sigma2,
            &[0.0],
            &[0.0],
        );
        worst = worst.max(res.abs());
    }
    assert!(worst <= 1e-10, "max |residual| = {worst:e}");
}

#[test]
fn predictions_are_locally_lipschitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let train = Arc::new(training_set(&mut rng, 40, 1));
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let model = fit_fp(train, 1e-3, kp).unwrap();
    let delta = 1e-6;
    for _ in 0..20 {
        let t = rng.gen_range(0.1..1.9);
        let x = rng.gen_range(-0.9..0.9);
        let (b0, s0) = model.predict_point(t, &[x], None).unwrap();
        let (b1, s1) = model.predict_point(t, &[x + delta], None).unwrap();
        assert!((b1[0] - b0[0]).abs() <= 1e4 * delta);
        assert!((s1 - s0).abs() <= 1e4 * delta);
    }
}

#[test]
fn model_document_roundtrip_preserves_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut train = training_set(&mut rng, 30, 1);
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let lambda = 1e-4;
    // Make the constraint active so the dual vector is exercised.
    let probe = fit_fp(Arc::new(train.clone()), lambda, kp).unwrap();
    if probe.sigma_at_constraints().iter().all(|&v| v >= 0.0) {
        train.dens.dt.mapv_inplace(|v| -v);
    }
    let train = Arc::new(train);

    for (name, model) in [
        ("unconstrained", fit_fp(train.clone(), lambda, kp).unwrap()),
        (
            "constrained",
            fit_fp_constrained(train.clone(), lambda, kp).unwrap(),
        ),
        (
            "nystrom",
            fit_fp_nystrom(train.clone(), lambda, kp, (0..15).collect(), false).unwrap(),
        ),
    ] {
        let doc = model.to_doc();
        let json = serde_json::to_string(&doc).unwrap();
        let doc2: fp::FPModelDoc = serde_json::from_str(&json).unwrap();
        let rebuilt = FPModel::from_doc(&doc2).unwrap();
        for _ in 0..10 {
            let t = rng.gen_range(0.0..2.0);
            let x = [rng.gen_range(-1.0..1.0)];
            let (b0, s0) = model.predict_point(t, &x, None).unwrap();
            let (b1, s1) = rebuilt.predict_point(t, &x, None).unwrap();
            assert!(
                (b0[0] - b1[0]).abs() <= 1e-10 && (s0 - s1).abs() <= 1e-10,
                "{name}: roundtrip drift {} vs {}, sigma {s0} vs {s1}",
                b0[0],
                b1[0]
            );
        }
    }
}
