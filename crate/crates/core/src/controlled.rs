//! Controlled-SDE estimation: control families, per-control density fits,
//! stacked Fokker-Planck training over `z = (t, x, u_k(t))`, and joint
//! coefficient prediction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A member of a parametric open-loop control family, evaluable at any
/// `t` in `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ControlSpec {
    /// Piecewise constant: `u0` on `[0, t1)`, `u1` on `[t1, T]`.
    TwoStep { u0: Vec<f64>, u1: Vec<f64>, t1: f64 },
    /// `t -> a sin(pi t / 10)`, scalar.
    Sinusoidal { amplitude: f64 },
    /// Constant level.
    Constant { level: Vec<f64> },
}

impl ControlSpec {
    /// Control dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            ControlSpec::TwoStep { u0, .. } => u0.len(),
            ControlSpec::Sinusoidal { .. } => 1,
            ControlSpec::Constant { level } => level.len(),
        }
    }

    /// Evaluates `u(t)` into `out` (length `dim()`).
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match self {
            ControlSpec::TwoStep { u0, u1, t1 } => {
                let src = if t < *t1 { u0 } else { u1 };
                out.copy_from_slice(src);
            }
            ControlSpec::Sinusoidal { amplitude } => {
                out[0] = amplitude * (t * std::f64::consts::PI / 10.0).sin();
            }
            ControlSpec::Constant { level } => out.copy_from_slice(level),
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.value_into(t, &mut out);
        out
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        let ok = match self {
            ControlSpec::TwoStep { u0, u1, t1 } => {
                u0.len() == u1.len()
                    && !u0.is_empty()
                    && t1.is_finite()
                    && (0.0..=horizon).contains(t1)
                    && u0.iter().chain(u1).all(|v| v.is_finite())
            }
            ControlSpec::Sinusoidal { amplitude } => amplitude.is_finite(),
            ControlSpec::Constant { level } => {
                !level.is_empty() && level.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument("invalid control specification".into()))
        }
    }
}

/// Sampling description for drawing i.i.d. controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ControlSampling {
    TwoStep {
        u0_range: (f64, f64),
        u1_range: (f64, f64),
        t1_range: (f64, f64),
        #[serde(default = "one")]
        dim: usize,
    },
    Sinusoidal { amplitude_range: (f64, f64) },
    Constant {
        range: (f64, f64),
        #[serde(default = "one")]
        dim: usize,
    },
}

fn one() -> usize {
    1
}

fn check_range(r: (f64, f64)) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite()) || r.0 > r.1 {
        return Err(CoreError::InvalidArgument(format!(
            "empty or invalid sampling range [{}, {}]",
            r.0, r.1
        )));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..r.1)
    }
}

/// Draws `k` i.i.d. controls, reproducibly from the seed.
pub fn sample_controls(spec: &ControlSampling, k: usize, seed: u64) -> Result<Vec<ControlSpec>> {
    if k == 0 {
        return Err(CoreError::EmptyInput("need at least one control".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let c = match spec {
            ControlSampling::TwoStep {
                u0_range,
                u1_range,
                t1_range,
                dim,
            } => {
                check_range(*u0_range)?;
                check_range(*u1_range)?;
                check_range(*t1_range)?;
                let u0 = (0..*dim).map(|_| draw(&mut rng, *u0_range)).collect();
                let u1 = (0..*dim).map(|_| draw(&mut rng, *u1_range)).collect();
                let t1 = draw(&mut rng, *t1_range);
                ControlSpec::TwoStep { u0, u1, t1 }
            }
            ControlSampling::Sinusoidal { amplitude_range } => {
                check_range(*amplitude_range)?;
                ControlSpec::Sinusoidal {
                    amplitude: draw(&mut rng, *amplitude_range),
                }
            }
            ControlSampling::Constant { range, dim } => {
                check_range(*range)?;
                ControlSpec::Constant {
                    level: (0..*dim).map(|_| draw(&mut rng, *range)).collect(),
                }
            }
        };
        out.push(c);
    }
    Ok(out)
}
