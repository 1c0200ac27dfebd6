use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, Rule};
use crate::error::{Error, Result};
use crate::model::ChangeModel;
use crate::rng::RngStream;

use super::report::{EvalReport, Flag};
use super::runs::{calibrate_barrier, provenance, simulate_stops, SimSettings};

/// Detection delays measured after restarting the statistic from its least
/// favorable state at each change-point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LordenReport {
    pub taus: Vec<f64>,
    pub per_tau: Vec<EvalReport>,
    /// Index into `per_tau` of the largest delay.
    pub worst: usize,
    /// Per-replication delays `(T − τ)⁺` for each τ.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl LordenReport {
    pub fn worst_report(&self) -> &EvalReport {
        &self.per_tau[self.worst]
    }
}

fn check_on_grid(tau: f64, step: f64) -> Result<()> {
    let k = tau / step;
    if !(tau >= 0.0 && tau.is_finite()) || (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::Alignment(format!(
            "change-point {tau} is not on the monitoring grid of step {step}"
        )));
    }
    Ok(())
}

/// Estimates `E_τ[(T − τ)⁺]` for every τ in `tau_grid`. Each τ gets its own
/// derived seed so the per-τ samples are independent.
pub fn lorden_delay(model: &ChangeModel, config: &DetectorConfig, tau_grid: &[f64], sim: &SimSettings) -> Result<LordenReport> {
    if tau_grid.is_empty() {
        return Err(Error::Validation("tau grid is empty".into()));
    }
    let step = config.rule.delta().unwrap_or(sim.grid_dt);
    let mut per_tau = Vec::with_capacity(tau_grid.len());
    let mut samples = Vec::with_capacity(tau_grid.len());
    for (j, &tau) in tau_grid.iter().enumerate() {
        check_on_grid(tau, step)?;
        check_on_grid(tau, sim.grid_dt)?;
        if tau >= sim.horizon {
            return Err(Error::Validation(format!("change-point {tau} is beyond the horizon {}", sim.horizon)));
        }
        let sub = sim.with_seed(RngStream::derive_seed(sim.master_seed, j as u64));
        let stops = simulate_stops(model, config, tau, true, &sub)?;
        let delays: Vec<f64> = stops.iter().map(|s| (s.stop_time - tau).max(0.0)).collect();
        let censored = stops.iter().filter(|s| s.censored).count();
        let mut report = EvalReport::from_samples(
            format!("delay_tau={tau}"),
            &delays,
            censored,
            sim.horizon,
            provenance(model, config, &sub),
        );
        if !config.rule.is_cusum() {
            report.flag(Flag::GridWorstCase);
        }
        per_tau.push(report);
        samples.push(delays);
    }
    let worst = per_tau
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.estimate.total_cmp(&b.1.estimate))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(LordenReport {
        taus: tau_grid.to_vec(),
        per_tau,
        worst,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rule: Rule,
    pub log_barrier: Option<f64>,
    pub calibrated: bool,
    pub arl: Option<EvalReport>,
    pub worst_delay: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub gamma: f64,
    pub rows: Vec<ComparisonRow>,
    /// Whether every CUSUM row has worst-case delay at most each
    /// competitor's plus three combined standard errors; `None` when there
    /// is nothing to compare.
    pub cusum_dominates: Option<bool>,
}

/// Calibrates each rule to the false-alarm budget `gamma`, then measures
/// its worst-case delay over `tau_grid`. A rule whose calibration fails
/// yields a flagged row instead of aborting the table.
pub fn compare(
    model: &ChangeModel,
    gamma: f64,
    rules: &[Rule],
    rel_tol: f64,
    tau_grid: &[f64],
    sim: &SimSettings,
) -> Result<ComparisonTable> {
    model.ensure_admissible()?;
    let mut rows = Vec::with_capacity(rules.len());
    for &rule in rules {
        let row = match calibrate_barrier(model, rule, gamma, rel_tol, sim) {
            Ok(cal) => {
                let config = DetectorConfig::new(rule, cal.log_barrier)?;
                let delay = lorden_delay(model, &config, tau_grid, sim)?;
                ComparisonRow {
                    rule,
                    log_barrier: Some(cal.log_barrier),
                    calibrated: cal.converged,
                    arl: Some(cal.report),
                    worst_delay: Some(delay.worst_report().clone()),
                    error: None,
                }
            }
            // rules without a barrier stay in the table as unevaluated rows
            Err(e @ (Error::Infeasible(_) | Error::Numerical { .. } | Error::Contract(_))) => ComparisonRow {
                rule,
                log_barrier: None,
                calibrated: false,
                arl: None,
                worst_delay: None,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let delay = |r: &ComparisonRow| r.worst_delay.as_ref().map(|d| (d.estimate, d.std_error));
    let cusum: Vec<_> = rows.iter().filter(|r| r.rule.is_cusum()).filter_map(delay).collect();
    let others: Vec<_> = rows.iter().filter(|r| !r.rule.is_cusum()).filter_map(delay).collect();
    let cusum_dominates = (!cusum.is_empty() && !others.is_empty()).then(|| {
        cusum.iter().all(|&(c, cs)| {
            others
                .iter()
                .all(|&(o, os)| c <= o + 3.0 * (cs * cs + os * os).sqrt())
        })
    });
    Ok(ComparisonTable {
        gamma,
        rows,
        cusum_dominates,
    })
}
