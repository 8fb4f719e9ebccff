//! Reference SDEs with evaluable coefficients and, for the OU family,
//! analytic densities and moments. These serve both as data generators and
//! as ground-truth oracles for recovery experiments.

use serde::{Deserialize, Serialize};

use crate::controlled::ControlSpec;
use crate::error::{CoreError, Result};

/// Ornstein-Uhlenbeck: `dX = theta (mu - X) dt + sigma dW`, Gaussian init.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub mu0: f64,
    /// Initial variance `sigma_0^2`.
    pub var0: f64,
}

/// OU with controlled mean: `dX = theta (u(t) - X) dt + sigma dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledOuParams {
    pub theta: f64,
    pub sigma: f64,
    pub mu0: f64,
    pub var0: f64,
}

/// Planar motion at constant speed with (controlled) heading:
/// `dX = v (cos u(t), sin u(t)) dt + sigma dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DubinsParams {
    pub speed: f64,
    /// Amplitude of the built-in heading `u(t) = amp sin(pi t / 10)`
    /// (ignored by the controlled variant).
    pub theta_amp: f64,
    pub sigma: f64,
}

/// Finite exponential sum process on the plane: drift and scalar diffusion
/// are sums of `w_i exp(-gamma ||x - x_i|| |t - t_i|)` bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FesParams {
    /// Space-time centers `(t_i, x_i)`.
    pub centers: Vec<(f64, [f64; 2])>,
    /// Drift weights `b_i`, one per center used by the drift sum.
    pub drift_weights: Vec<[f64; 2]>,
    /// Diffusion weights `s_i`, one per center used by the diffusion sum.
    pub diff_weights: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    Ou(OuParams),
    ControlledOu(ControlledOuParams),
    Dubins(DubinsParams),
    ControlledDubins(DubinsParams),
    Fes(FesParams),
}

/// A reference SDE with a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessDef {
    #[serde(flatten)]
    pub kind: ProcessKind,
    pub horizon: f64,
}

impl ProcessDef {
    pub fn new(kind: ProcessKind, horizon: f64) -> Result<Self> {
        let def = Self { kind, horizon };
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(CoreError::InvalidArgument("horizon must be positive".into()));
        }
        let ok = match &self.kind {
            ProcessKind::Ou(p) => p.theta > 0.0 && p.sigma > 0.0 && p.var0 >= 0.0,
            ProcessKind::ControlledOu(p) => p.theta > 0.0 && p.sigma > 0.0 && p.var0 >= 0.0,
            ProcessKind::Dubins(p) | ProcessKind::ControlledDubins(p) => p.sigma > 0.0,
            ProcessKind::Fes(p) => {
                p.gamma > 0.0
                    && p.drift_weights.len() <= p.centers.len()
                    && p.diff_weights.len() <= p.centers.len()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument("invalid process parameters".into()))
        }
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        match &self.kind {
            ProcessKind::Ou(_) | ProcessKind::ControlledOu(_) => 1,
            _ => 2,
        }
    }

    /// Control dimension, if the process is controlled.
    pub fn ctrl_dim(&self) -> Option<usize> {
        match &self.kind {
            ProcessKind::ControlledOu(_) | ProcessKind::ControlledDubins(_) => Some(1),
            _ => None,
        }
    }

    /// Initial distribution `(mean, variance scale)`.
    pub fn initial(&self) -> (Vec<f64>, f64) {
        match &self.kind {
            ProcessKind::Ou(p) => (vec![p.mu0], p.var0),
            ProcessKind::ControlledOu(p) => (vec![p.mu0], p.var0),
            // 2-D experiments start at N(0, 1/4 I) unless configured
            // otherwise at the experiment layer.
            _ => (vec![0.0, 0.0], 0.25),
        }
    }

    pub fn tag(&self) -> &'static str {
        match &self.kind {
            ProcessKind::Ou(_) => "ou",
            ProcessKind::ControlledOu(_) => "controlled-ou",
            ProcessKind::Dubins(_) => "dubins",
            ProcessKind::ControlledDubins(_) => "controlled-dubins",
            ProcessKind::Fes(_) => "fes",
        }
    }

    /// Exact drift and scalar diffusion `sigma` (not squared) at `(t, x)`.
    ///
    /// Controlled kinds require `u`; uncontrolled kinds reject one.
    pub fn coefficients_into(
        &self,
        t: f64,
        x: &[f64],
        u: Option<&ControlSpec>,
        drift: &mut [f64],
    ) -> Result<f64> {
        match (&self.kind, u) {
            (ProcessKind::Ou(p), None) => {
                drift[0] = p.theta * (p.mu - x[0]);
                Ok(p.sigma)
            }
            (ProcessKind::ControlledOu(p), Some(u)) => {
                let mut level = [0.0];
                u.value_into(t, &mut level);
                drift[0] = p.theta * (level[0] - x[0]);
                Ok(p.sigma)
            }
            (ProcessKind::Dubins(p), None) => {
                let angle = p.theta_amp * (t * std::f64::consts::PI / 10.0).sin();
                drift[0] = p.speed * angle.cos();
                drift[1] = p.speed * angle.sin();
                Ok(p.sigma)
            }
            (ProcessKind::ControlledDubins(p), Some(u)) => {
                let mut angle = [0.0];
                u.value_into(t, &mut angle);
                drift[0] = p.speed * angle[0].cos();
                drift[1] = p.speed * angle[0].sin();
                Ok(p.sigma)
            }
            (ProcessKind::Fes(p), None) => {
                drift[0] = 0.0;
                drift[1] = 0.0;
                let mut sigma = 0.0;
                for (i, (ti, xi)) in p.centers.iter().enumerate() {
                    let dx0 = x[0] - xi[0];
                    let dx1 = x[1] - xi[1];
                    let e = (-p.gamma * (dx0 * dx0 + dx1 * dx1).sqrt() * (t - ti).abs()).exp();
                    if let Some(w) = p.drift_weights.get(i) {
                        drift[0] += w[0] * e;
                        drift[1] += w[1] * e;
                    }
                    if let Some(s) = p.diff_weights.get(i) {
                        sigma += s * e;
                    }
                }
                Ok(sigma)
            }
            (_, Some(_)) => Err(CoreError::InvalidArgument(
                "process is uncontrolled but a control was supplied".into(),
            )),
            (_, None) => Err(CoreError::InvalidArgument(
                "controlled process needs a control".into(),
            )),
        }
    }

    /// Allocating convenience form of [`ProcessDef::coefficients_into`].
    pub fn coefficients(
        &self,
        t: f64,
        x: &[f64],
        u: Option<&ControlSpec>,
    ) -> Result<(Vec<f64>, f64)> {
        let mut drift = vec![0.0; self.dim()];
        let sigma = self.coefficients_into(t, x, u, &mut drift)?;
        Ok((drift, sigma))
    }

    /// Analytic OU density parameters `(mean(t), var(t))`.
    pub fn analytic_ou_density(&self, t: f64) -> Result<(f64, f64)> {
        match &self.kind {
            ProcessKind::Ou(p) => {
                let mean = (-p.theta * t).exp() * (p.mu0 - p.mu) + p.mu;
                let stat = p.sigma * p.sigma / (2.0 * p.theta);
                let var = (p.var0 - stat) * (-2.0 * p.theta * t).exp() + stat;
                Ok((mean, var))
            }
            _ => Err(CoreError::InvalidArgument(
                "analytic density is available for the OU kind only".into(),
            )),
        }
    }

    /// Analytic moments of the controlled OU under a two-step control:
    /// segment-wise exponential relaxation of the mean; variance equals the
    /// uncontrolled OU variance (control-independent).
    pub fn controlled_ou_moments(&self, u: &ControlSpec, t: f64) -> Result<(f64, f64)> {
        let p = match &self.kind {
            ProcessKind::ControlledOu(p) => p,
            _ => {
                return Err(CoreError::InvalidArgument(
                    "controlled moments need the controlled OU kind".into(),
                ))
            }
        };
        let (u0, u1, t1) = match u {
            ControlSpec::TwoStep { u0, u1, t1 } => (u0[0], u1[0], *t1),
            _ => {
                return Err(CoreError::InvalidArgument(
                    "analytic controlled moments support the two-step family only".into(),
                ))
            }
        };
        let mean = if t < t1 {
            u0 + (p.mu0 - u0) * (-p.theta * t).exp()
        } else {
            let m1 = u0 + (p.mu0 - u0) * (-p.theta * t1).exp();
            u1 + (m1 - u1) * (-p.theta * (t - t1)).exp()
        };
        let stat = p.sigma * p.sigma / (2.0 * p.theta);
        let var = (p.var0 - stat) * (-2.0 * p.theta * t).exp() + stat;
        Ok((mean, var))
    }
}

/// Example-1 pair: `(theta, sigma)` and `(scale*theta, sqrt(scale)*sigma)`
/// under stationary initialization share the probability density for all t.
pub fn nonidentifiability_pair(
    theta: f64,
    sigma: f64,
    mu: f64,
    horizon: f64,
    scale: f64,
) -> Result<(ProcessDef, ProcessDef)> {
    if !(theta > 0.0 && sigma > 0.0 && scale > 0.0) {
        return Err(CoreError::InvalidArgument(
            "theta, sigma and scale must be positive".into(),
        ));
    }
    let var_stat = sigma * sigma / (2.0 * theta);
    let a = ProcessDef::new(
        ProcessKind::Ou(OuParams {
            theta,
            mu,
            sigma,
            mu0: mu,
            var0: var_stat,
        }),
        horizon,
    )?;
    let b = ProcessDef::new(
        ProcessKind::Ou(OuParams {
            theta: scale * theta,
            mu,
            sigma: scale.sqrt() * sigma,
            mu0: mu,
            var0: var_stat,
        }),
        horizon,
    )?;
    Ok((a, b))
}


impl ProcessKind {
    #[cfg(test)]
    fn drift_weights(&self) -> &[[f64; 2]] {
        match self {
            ProcessKind::Fes(p) => &p.drift_weights,
            _ => &[],
        }
    }
}
