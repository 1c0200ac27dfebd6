use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, Monitor, Rule};
use crate::error::{Error, Result};
use crate::model::ChangeModel;
use crate::parallel::try_replicate;
use crate::paths::stride_for;
use crate::rng::RngStream;
use crate::stats::{covariance, mean, variance};

use super::report::{EvalReport, Flag};
use super::runs::{provenance, LlrStream, SimSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    /// `d̄(T, Δ)` with its delta-method standard error.
    pub ratio: EvalReport,
    /// Mean of `Σ max(S_k, 1)` over `k < T/Δ`.
    pub numerator: f64,
    /// Mean of `Σ (1 − S_k)⁺` over `k < T/Δ`.
    pub denominator: f64,
}

/// Per-replication sums `(Σ max(S_k,1), Σ (1−S_k)⁺)` for `k = 0 … T/Δ − 1`
/// under the in-control law, with `S` the CUSUM statistic at the rule's Δ.
fn paired_sums(
    model: &ChangeModel,
    config: &DetectorConfig,
    delta: f64,
    sim: &SimSettings,
    stream: RngStream,
) -> Result<(f64, f64, bool)> {
    let mut rule = Monitor::new(config, sim.grid_dt)?;
    let cusum_config = DetectorConfig {
        rule: Rule::CusumGrid { delta },
        log_barrier: f64::MAX,
    };
    let mut cusum = Monitor::new(&cusum_config, sim.grid_dt)?;
    let stride = stride_for(delta, sim.grid_dt)? as u64;
    let mut llr = LlrStream::new(model, f64::INFINITY, sim.grid_dt, stream)?;
    // k = 0 term: S₀ = 0
    let (mut num, mut den) = (1.0, 1.0);
    for i in 0..sim.max_steps() {
        let u = llr.advance()?;
        let stop = rule.push(u);
        cusum.push(u);
        if (i + 1) % stride == 0 {
            if stop {
                return Ok((num, den, false));
            }
            let s = cusum.stat().exp();
            num += s.max(1.0);
            den += (1.0 - s).max(0.0);
        }
    }
    Ok((num, den, true))
}

/// Estimates `Δ·E_∞[Σ max(S_k,1)] / E_∞[Σ (1−S_k)⁺]` for a Δ-grid rule as a
/// ratio of means.
pub fn lower_bound_ratio(model: &ChangeModel, config: &DetectorConfig, sim: &SimSettings) -> Result<LowerBoundReport> {
    model.ensure_admissible()?;
    config.validate()?;
    sim.validate()?;
    let delta = match config.rule {
        Rule::CusumGrid { delta } | Rule::ShiryaevRoberts { delta } | Rule::FixedTime { delta, .. } => delta,
        other => {
            return Err(Error::Contract(format!(
                "the lower bound needs a Δ-grid rule, got {}",
                other.name()
            )))
        }
    };
    let sums = try_replicate(sim.n_rep, sim.execution, |i| {
        paired_sums(model, config, delta, sim, RngStream::new(sim.master_seed, i))
    })?;
    let a: Vec<f64> = sums.iter().map(|s| s.0).collect();
    let b: Vec<f64> = sums.iter().map(|s| s.1).collect();
    let n_censored = sums.iter().filter(|s| s.2).count();
    let (ma, mb) = (mean(&a), mean(&b));
    if !(mb > 0.0) {
        return Err(Error::Degenerate(format!("denominator estimate {mb} is not positive")));
    }
    let r = ma / mb;
    let n = sim.n_rep as f64;
    let var = (variance(&a) - 2.0 * r * covariance(&a, &b) + r * r * variance(&b)) / (mb * mb * n);
    let mut flags = Vec::new();
    if n_censored > 0 {
        flags.push(Flag::CensoringBias);
        if n_censored as f64 >= 0.01 * n {
            flags.push(Flag::InsufficientHorizon);
        }
    }
    Ok(LowerBoundReport {
        ratio: EvalReport {
            label: "lower_bound".into(),
            estimate: delta * r,
            std_error: delta * var.max(0.0).sqrt(),
            n_rep: sim.n_rep,
            n_censored,
            horizon: sim.horizon,
            provenance: provenance(model, config, sim),
            flags,
        },
        numerator: ma,
        denominator: mb,
    })
}
