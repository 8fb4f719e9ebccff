//! Euler-Maruyama path generation from true or estimated coefficients.
//!
//! `X_{k+1} = X_k + b dt + sigma sqrt(dt) xi`, `xi ~ N(0, I)`, with
//! `substeps` integrator steps between saved grid points. Paths draw from
//! independent, deterministically derived RNG streams, so generation is
//! reproducible and order-independent.

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controlled::ControlSpec;
use crate::dataset::{DatasetMeta, PathDataset};
use crate::error::{CoreError, Result};
use crate::processes::{ProcessDef, ProcessKind};

/// Configuration of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of paths `Q`.
    pub n_paths: usize,
    /// Number of saved time points `M` (including `t = 0`).
    pub n_saves: usize,
    /// Integrator steps per saved interval.
    pub substeps: usize,
    /// Horizon `T`.
    pub horizon: f64,
    /// Mean of the Gaussian initial distribution.
    pub init_mean: Vec<f64>,
    /// Variance scale of the initial distribution (covariance `var * I`).
    pub init_var: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_saves == 0 || self.substeps == 0 {
            return Err(CoreError::InvalidArgument(
                "paths, saves and substeps must all be >= 1".into(),
            ));
        }
        if !(self.horizon > 0.0) || !(self.init_var >= 0.0) || self.init_mean.is_empty() {
            return Err(CoreError::InvalidArgument("invalid simulation config".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        if self.n_saves == 1 {
            return vec![0.0];
        }
        let m = self.n_saves;
        (0..m)
            .map(|l| self.horizon * l as f64 / (m - 1) as f64)
            .collect()
    }
}

/// Abort threshold: a run with more than this fraction of diverged paths
/// fails outright.
const MAX_DIVERGED_FRACTION: f64 = 0.5;
/// State magnitude treated as divergence even while still finite.
const DIVERGE_LIMIT: f64 = 1e8;

/// Simulates from a drift/diffusion evaluator.
///
/// The evaluator writes the drift into its out-buffer and returns the scalar
/// diffusion `sigma` (not squared). Paths that leave the finite range are
/// flagged, frozen at their last valid state, and reported in
/// `PathDataset::diverged`; the run errors if more than half diverge.
pub fn simulate<F>(eval: F, cfg: &SimConfig, tag: &str) -> Result<PathDataset>
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let n = cfg.init_mean.len();
    let times = cfg.times();
    let m = times.len();

    let results: Vec<(Vec<f64>, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|q| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(q as u64);
            let mut x = vec![0.0; n];
            for i in 0..n {
                x[i] = cfg.init_mean[i]
                    + cfg.init_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let mut saved = vec![0.0; m * n];
            saved[..n].copy_from_slice(&x);
            let mut drift = vec![0.0; n];
            let mut diverged = false;
            for l in 1..m {
                if !diverged {
                    let dt = (times[l] - times[l - 1]) / cfg.substeps as f64;
                    let sq = dt.sqrt();
                    let mut t = times[l - 1];
                    'steps: for _ in 0..cfg.substeps {
                        let sigma = eval(t, &x, &mut drift);
                        for i in 0..n {
                            let xi: f64 = rng.sample(StandardNormal);
                            x[i] += drift[i] * dt + sigma * sq * xi;
                        }
                        t += dt;
                        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGE_LIMIT) {
                            diverged = true;
                            // Freeze at the last saved state.
                            x.copy_from_slice(&saved[(l - 1) * n..l * n]);
                            break 'steps;
                        }
                    }
                }
                saved[l * n..(l + 1) * n].copy_from_slice(&x);
            }
            (saved, diverged)
        })
        .collect();

    let n_div = results.iter().filter(|(_, d)| *d).count();
    if n_div as f64 > MAX_DIVERGED_FRACTION * cfg.n_paths as f64 {
        return Err(CoreError::SimulationDiverged {
            diverged: n_div,
            total: cfg.n_paths,
        });
    }

    let mut states = Array3::zeros((cfg.n_paths, m, n));
    let mut flags = Vec::with_capacity(cfg.n_paths);
    for (q, (saved, diverged)) in results.into_iter().enumerate() {
        for l in 0..m {
            for i in 0..n {
                states[[q, l, i]] = saved[l * n + i];
            }
        }
        flags.push(diverged);
    }
    let mut data = PathDataset::new(
        times,
        states,
        DatasetMeta {
            seed: cfg.seed,
            tag: tag.to_string(),
        },
    )?;
    data.diverged = flags;
    Ok(data)
}

/// Simulates a reference process (optionally under a control).
pub fn simulate_process(
    def: &ProcessDef,
    cfg: &SimConfig,
    u: Option<&ControlSpec>,
) -> Result<PathDataset> {
    def.validate()?;
    if cfg.init_mean.len() != def.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: def.dim(),
            got: cfg.init_mean.len(),
        });
    }
    // Probe control requirements once up front for a clean error.
    let probe = vec![0.0; def.dim()];
    let mut dbuf = vec![0.0; def.dim()];
    def.coefficients_into(0.0, &probe, u, &mut dbuf)?;

    // The exponential-sum diffusion admits zeros; floor it during
    // simulation to avoid degenerate noise.
    let sigma_floor = match def.kind {
        ProcessKind::Fes(_) => 1e-6,
        _ => 0.0,
    };
    let tag = def.tag().to_string();
    simulate(
        |t, x, drift| {
            let sigma = def
                .coefficients_into(t, x, u, drift)
                .expect("coefficient evaluation cannot fail after the probe");
            sigma.max(sigma_floor)
        },
        cfg,
        &tag,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::OuParams;

    fn ou_def() -> ProcessDef {
        let theta: f64 = 0.5;
        let sigma = (theta / 4.0).sqrt();
        ProcessDef::new(
            ProcessKind::Ou(OuParams {
                theta,
                mu: 2.5,
                sigma,
                mu0: 0.5,
                var0: sigma * sigma / (2.0 * theta),
            }),
            10.0,
        )
        .unwrap()
    }

    fn cfg(n_paths: usize, n_saves: usize, substeps: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_paths,
            n_saves,
            substeps,
            horizon: 10.0,
            init_mean: vec![0.5],
            init_var: 0.125,
            seed,
        }
    }

    #[test]
    fn zero_coefficients_freeze_paths() {
        let c = cfg(5, 4, 3, 1);
        let data = simulate(
            |_, _, drift| {
                drift[0] = 0.0;
                0.0
            },
            &c,
            "frozen",
        )
        .unwrap();
        for q in 0..5 {
            let x0 = data.states()[[q, 0, 0]];
            for l in 1..4 {
                assert_eq!(data.states()[[q, l, 0]], x0);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let c = cfg(8, 6, 4, 42);
        let def = ou_def();
        let a = simulate_process(&def, &c, None).unwrap();
        let b = simulate_process(&def, &c, None).unwrap();
        assert_eq!(a.states(), b.states());
        let c2 = cfg(8, 6, 4, 43);
        let d = simulate_process(&def, &c2, None).unwrap();
        assert_ne!(a.states(), d.states());
    }

    #[test]
    fn noiseless_ou_converges_at_first_order() {
        // sigma = 0 turns EM into explicit Euler on dx/dt = theta (mu - x);
        // halving dt should roughly halve the terminal error (slope ~ 1).
        let theta: f64 = 0.5;
        let def = ProcessDef::new(
            ProcessKind::Ou(OuParams {
                theta,
                mu: 2.5,
                sigma: 1e-30, // validation wants > 0; effectively zero
                mu0: 0.5,
                var0: 0.0,
            }),
            10.0,
        )
        .unwrap();
        let exact = 2.5 + (0.5 - 2.5) * (-theta * 10.0f64).exp();
        let mut errs = Vec::new();
        for substeps in [4usize, 8, 16, 32] {
            let c = SimConfig {
                n_paths: 1,
                n_saves: 11,
                substeps,
                horizon: 10.0,
                init_mean: vec![0.5],
                init_var: 0.0,
                seed: 0,
            };
            let data = simulate_process(&def, &c, None).unwrap();
            errs.push((data.states()[[0, 10, 0]] - exact).abs());
        }
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!(
                (0.8..=1.2).contains(&slope),
                "convergence slope {slope}, errors {errs:?}"
            );
        }
    }

    #[test]
    fn ou_ensemble_moments_match_analytic() {
        let def = ou_def();
        let c = cfg(10_000, 101, 10, 7);
        let data = simulate_process(&def, &c, None).unwrap();
        for &l in &[0usize, 50, 100] {
            let t = data.times()[l];
            let (mean, var) = def.analytic_ou_density(t).unwrap();
            let xs: Vec<f64> = (0..data.n_paths()).map(|q| data.states()[[q, l, 0]]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
            let se_mean = (var / xs.len() as f64).sqrt();
            let se_var = var * (2.0 / (xs.len() as f64 - 1.0)).sqrt();
            assert!(
                (m - mean).abs() < 3.0 * se_mean + 2e-3,
                "t={t}: mean {m} vs {mean}"
            );
            assert!(
                (v - var).abs() < 3.0 * se_var + 2e-3,
                "t={t}: var {v} vs {var}"
            );
        }
    }

    #[test]
    fn weak_error_below_monte_carlo_noise() {
        // Halving dt moves the ensemble mean by less than the MC stderr.
        let def = ou_def();
        let a = simulate_process(&def, &cfg(10_000, 6, 10, 3), None).unwrap();
        let b = simulate_process(&def, &cfg(10_000, 6, 20, 3), None).unwrap();
        let l = 5;
        let q_n = a.n_paths() as f64;
        let ma = (0..a.n_paths()).map(|q| a.states()[[q, l, 0]]).sum::<f64>() / q_n;
        let mb = (0..b.n_paths()).map(|q| b.states()[[q, l, 0]]).sum::<f64>() / q_n;
        let (_, var) = def.analytic_ou_density(a.times()[l]).unwrap();
        let se = (var / q_n).sqrt();
        assert!((ma - mb).abs() < se, "mean shift {} vs se {se}", (ma - mb).abs());
    }

    #[test]
    fn diverged_paths_flagged_and_monotone_in_dt() {
        // Cubic blow-up drift: larger steps diverge more often.
        let blow = |_t: f64, x: &[f64], drift: &mut [f64]| {
            drift[0] = x[0] * x[0] * x[0];
            0.5
        };
        let count = |substeps: usize| {
            let c = SimConfig {
                n_paths: 60,
                n_saves: 6,
                substeps,
                horizon: 5.0,
                init_mean: vec![1.2],
                init_var: 0.04,
                seed: 11,
            };
            simulate(blow, &c, "blowup")
                .map(|d| d.diverged.iter().filter(|&&f| f).count())
                .unwrap_or(61)
        };
        let coarse = count(1);
        let fine = count(4);
        let finest = count(16);
        assert!(coarse >= fine && fine >= finest, "{coarse} {fine} {finest}");
    }

    #[test]
    fn aborts_when_most_paths_diverge() {
        let c = SimConfig {
            n_paths: 10,
            n_saves: 5,
            substeps: 2,
            horizon: 4.0,
            init_mean: vec![5.0],
            init_var: 0.0,
            seed: 1,
        };
        let r = simulate(
            |_, x, drift| {
                drift[0] = x[0] * x[0] * x[0];
                0.0
            },
            &c,
            "blowup",
        );
        assert!(matches!(r, Err(CoreError::SimulationDiverged { .. })));
    }

    #[test]
    fn control_plumbs_through() {
        let def = ProcessDef::new(
            ProcessKind::ControlledOu(crate::processes::ControlledOuParams {
                theta: 0.5,
                sigma: 0.3536,
                mu0: 0.5,
                var0: 0.125,
            }),
            10.0,
        )
        .unwrap();
        let c = cfg(4, 5, 2, 9);
        assert!(simulate_process(&def, &c, None).is_err());
        let u = ControlSpec::TwoStep {
            u0: vec![1.0],
            u1: vec![-1.0],
            t1: 5.0,
        };
        assert!(simulate_process(&def, &c, Some(&u)).is_ok());
    }

    #[test]
    fn controlled_ou_monte_carlo_matches_analytic_mean() {
        // Euler-Maruyama ensemble vs the piecewise-exponential mean formula.
        let def = ProcessDef::new(
            ProcessKind::ControlledOu(crate::processes::ControlledOuParams {
                theta: 0.5,
                sigma: 0.3536,
                mu0: 0.5,
                var0: 0.125,
            }),
            10.0,
        )
        .unwrap();
        let u = ControlSpec::TwoStep {
            u0: vec![-1.5],
            u1: vec![2.0],
            t1: 4.0,
        };
        // dt = 1e-3: 11 saves, 1000 substeps per save interval.
        let c = SimConfig {
            n_paths: 50_000,
            n_saves: 11,
            substeps: 1000,
            horizon: 10.0,
            init_mean: vec![0.5],
            init_var: 0.125,
            seed: 5,
        };
        let data = simulate_process(&def, &c, Some(&u)).unwrap();
        for &l in &[2usize, 5, 8] {
            let t = data.times()[l];
            let (mean, var) = def.controlled_ou_moments(&u, t).unwrap();
            let q_n = data.n_paths() as f64;
            let m = (0..data.n_paths()).map(|q| data.states()[[q, l, 0]]).sum::<f64>() / q_n;
            let se = (var / q_n).sqrt();
            assert!(
                (m - mean).abs() < 3.0 * se + 1e-3,
                "t={t}: {m} vs {mean} (se {se})"
            );
        }
    }
}
