use fp_sde_core::density::DensityEvaluation;
use fp_sde_core::fp::{fit_fp_nystrom, FPTrainingSet};
use fp_sde_core::kernel::GaussianKernelParams;
use fp_sde_core::points::{Point, PointSet};
use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn synthetic_dens(points: &PointSet) -> DensityEvaluation {
    let n = points.n_state();
    let len = points.len();
    let mut p = Array1::zeros(len);
    let mut dt = Array1::zeros(len);
    let mut dx = Array2::zeros((len, n));
    let mut dxx = Array3::zeros((len, n, n));
    for l in 0..len {
        let t = points.t(l);
        let x: Vec<f64> = (0..n).map(|a| points.coords()[[l, PointSet::state_col(a)]]).collect();
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

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pts: Vec<Point> = (0..30)
        .map(|_| Point::new(rng.gen_range(0.0..2.0), vec![rng.gen_range(-1.0..1.0)]))
        .collect();
    let z = PointSet::from_points(&pts).unwrap();
    let mut dens = synthetic_dens(&z);
    dens.dt.mapv_inplace(|v| -v);
    let train = Arc::new(FPTrainingSet::new(z, dens).unwrap());
    let kp = GaussianKernelParams::new(0.5).unwrap();
    let model = fit_fp_nystrom(train, 1e-4, kp, (0..15).collect(), false).unwrap();
    let doc = model.to_doc();
    let json = serde_json::to_string(&doc).unwrap();
    let doc2: fp_sde_core::fp::FPModelDoc = serde_json::from_str(&json).unwrap();
    let json2 = serde_json::to_string(&doc2).unwrap();
    if json != json2 {
        let pos = json.bytes().zip(json2.bytes()).position(|(a, b)| a != b).unwrap_or(json.len().min(json2.len()));
        let lo = pos.saturating_sub(60);
        println!("first diff at {pos}");
        println!("json : ...{}...", &json[lo..(pos + 40).min(json.len())]);
        println!("json2: ...{}...", &json2[lo..(pos + 40).min(json2.len())]);
    } else {
        println!("json identical");
    }
}
