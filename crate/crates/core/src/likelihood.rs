//! The log-likelihood-ratio process `U` of the post- against the pre-change
//! law, built from a simulated path and its jump ledger.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, Flag, Provenance};
use crate::model::{ChangeModel, DensityRatio, JumpComponent};
use crate::parallel::{try_replicate, Execution};
use crate::paths::{sample_changed_path, Jump, SamplePath};
use crate::rng::RngStream;
use crate::stats::mean_se;

/// Per-step increments of `U` for one change model.
#[derive(Debug, Clone, Copy)]
pub struct LlrKernel {
    alpha: f64,
    sigma: f64,
    drift_pre: f64,
    compensator: f64,
    phi: Option<DensityRatio>,
    /// φ is linear through the origin and applied to the total jump mass of
    /// a step rather than jump by jump.
    affine_jumps: bool,
}

/// The two additive pieces of one `U` increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParts {
    pub diffusion: f64,
    pub jumps: f64,
}

impl StepParts {
    pub fn total(&self) -> f64 {
        self.diffusion + self.jumps
    }
}

impl LlrKernel {
    pub fn new(model: &ChangeModel) -> Result<Self> {
        model.ensure_admissible()?;
        let affine_jumps = matches!(model.pre.jumps, Some(JumpComponent::Gamma { .. }));
        Ok(Self {
            alpha: model.alpha,
            sigma: model.pre.sigma,
            drift_pre: model.pre.effective_drift(),
            compensator: model.jump.map_or(0.0, |j| j.compensator),
            phi: model.phi().copied(),
            affine_jumps,
        })
    }

    /// Increment of `U` over a step of length `dt` whose continuous part
    /// moved by `continuous`, whose total increment is `increment`, and whose
    /// ledger holds `jumps`.
    pub fn step_parts(&self, dt: f64, continuous: f64, increment: f64, jumps: &[Jump]) -> Result<StepParts> {
        let diffusion = if self.alpha != 0.0 {
            self.alpha * (continuous - self.drift_pre * dt) - 0.5 * self.alpha * self.alpha * self.sigma * self.sigma * dt
        } else {
            0.0
        };
        let jumps = match &self.phi {
            None => 0.0,
            Some(phi) if self.affine_jumps => phi.positive.c1 * (increment - continuous) - self.compensator * dt,
            Some(phi) => {
                let mut sum = 0.0;
                for j in jumps {
                    sum += phi.eval(j.size)?;
                }
                sum - self.compensator * dt
            }
        };
        Ok(StepParts { diffusion, jumps })
    }

    pub fn step(&self, dt: f64, continuous: f64, increment: f64, jumps: &[Jump]) -> Result<f64> {
        self.step_parts(dt, continuous, increment, jumps).map(|p| p.total())
    }
}

/// `U` at the grid points of its source path.
#[derive(Debug, Clone, PartialEq)]
pub struct LLRPath {
    pub grid_dt: f64,
    pub u_values: Vec<f64>,
    pub source: RngStream,
    pub horizon: f64,
}

impl LLRPath {
    /// Builds an LLR path directly from values, e.g. for synthetic inputs.
    pub fn from_values(grid_dt: f64, u_values: Vec<f64>) -> Result<Self> {
        if u_values.first() != Some(&0.0) {
            return Err(Error::Validation("U must start at 0".into()));
        }
        if !(grid_dt > 0.0) {
            return Err(Error::Validation(format!("grid_dt must be positive, got {grid_dt}")));
        }
        let horizon = (u_values.len() - 1) as f64 * grid_dt;
        Ok(Self {
            grid_dt,
            u_values,
            source: RngStream::new(0, 0),
            horizon,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.u_values.len() - 1
    }

    /// Writes `t,u` rows aligned with the path dump.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,u")?;
        for (i, u) in self.u_values.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 * self.grid_dt, u)?;
        }
        Ok(())
    }
}

/// Computes `U` along `path`. The continuous part of each step is the grid
/// increment minus the ledger jumps recorded in it.
pub fn llr_path(model: &ChangeModel, path: &SamplePath) -> Result<LLRPath> {
    if path.families != (model.pre.family, model.post.family) {
        return Err(Error::Contract(format!(
            "path simulated for {} → {} but model is {} → {}",
            path.families.0, path.families.1, model.pre.family, model.post.family
        )));
    }
    let kernel = LlrKernel::new(model)?;
    let dt = path.grid_dt;
    let mut u = Vec::with_capacity(path.values.len());
    let mut acc = 0.0;
    u.push(acc);
    for i in 0..path.n_steps() {
        let increment = path.values[i + 1] - path.values[i];
        let jumps = path.jumps_in_step(i);
        let continuous = if model.pre.jumps.is_some() && !kernel.affine_jumps {
            increment - jumps.iter().map(|j| j.size).sum::<f64>()
        } else if kernel.affine_jumps {
            // pure-jump subordinator: no continuous motion at all
            0.0
        } else {
            increment
        };
        acc += kernel.step(dt, continuous, increment, jumps)?;
        u.push(acc);
    }
    Ok(LLRPath {
        grid_dt: dt,
        u_values: u,
        source: path.stream,
        horizon: path.horizon,
    })
}

/// Increment laws with closed-form densities for the discrete-time CUSUM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncrementLaw {
    Gaussian { mean: f64, sd: f64 },
    Poisson { rate: f64 },
}

impl IncrementLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            IncrementLaw::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            IncrementLaw::Poisson { rate } => rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("malformed increment law {self:?}")))
        }
    }
}

/// `log dQ₁/dQ₀(x)` for a pair of equivalent increment laws.
pub fn llr_increment_iid(q0: IncrementLaw, q1: IncrementLaw, x: f64) -> Result<f64> {
    q0.validate()?;
    q1.validate()?;
    match (q0, q1) {
        (IncrementLaw::Gaussian { mean: m0, sd: s0 }, IncrementLaw::Gaussian { mean: m1, sd: s1 }) => {
            if (s0 - s1).abs() > 1e-12 * s0.max(s1) {
                return Err(Error::Validation(format!(
                    "Gaussian increment laws need equal sd, got {s0} and {s1}"
                )));
            }
            Ok(((m1 - m0) * x - 0.5 * (m1 * m1 - m0 * m0)) / (s0 * s0))
        }
        (IncrementLaw::Poisson { rate: r0 }, IncrementLaw::Poisson { rate: r1 }) => {
            if !(x >= 0.0 && x.fract() == 0.0) {
                return Err(Error::Domain(format!("Poisson count must be a nonnegative integer, got {x}")));
            }
            Ok(x * (r1 / r0).ln() - (r1 - r0))
        }
        _ => Err(Error::Validation(format!("increment laws {q0:?} and {q1:?} are not equivalent"))),
    }
}

/// Monte Carlo estimate of `E_∞[e^{U_Δ}]`, which equals one for an
/// admissible model. The report carries [`Flag::OutsideTolerance`] when the
/// estimate is more than three standard errors away from one.
pub fn martingale_check(
    model: &ChangeModel,
    delta: f64,
    n_rep: usize,
    master_seed: u64,
    execution: Execution,
) -> Result<EvalReport> {
    model.ensure_admissible()?;
    if n_rep < 2 {
        return Err(Error::Validation("martingale check needs at least two replications".into()));
    }
    let samples = try_replicate(n_rep, execution, |i| {
        let path = sample_changed_path(model, f64::INFINITY, delta, delta, RngStream::new(master_seed, i))?;
        let u = llr_path(model, &path)?;
        Ok::<_, Error>(u.u_values[1].exp())
    })?;
    let (estimate, std_error) = mean_se(&samples);
    let mut flags = Vec::new();
    if (estimate - 1.0).abs() > 3.0 * std_error {
        flags.push(Flag::OutsideTolerance);
    }
    Ok(EvalReport {
        label: "martingale".into(),
        estimate,
        std_error,
        n_rep,
        n_censored: 0,
        horizon: delta,
        provenance: Provenance {
            master_seed,
            grid_dt: delta,
            delta: Some(delta),
            rule: "none".into(),
            h_bar: None,
            model_digest: model.digest(),
        },
        flags,
    })
}
