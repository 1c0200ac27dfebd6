use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, Monitor, Rule};
use crate::error::{Error, Result};
use crate::model::ChangeModel;
use crate::parallel::try_replicate;
use crate::paths::stride_for;
use crate::rng::RngStream;
use crate::stats::mean_se;

use super::report::{EvalReport, Provenance};
use super::runs::{LlrStream, Regime, SimSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub level: usize,
    pub delta: f64,
    pub stop_time: EvalReport,
    /// Mean of `T(Δ_n) − T(grid_dt)` over paths.
    pub mean_gap: f64,
    pub gap_std_error: f64,
    /// Paths on which `≥` and `>` at the barrier give different stops.
    pub convention_mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub h_bar: f64,
    pub levels: Vec<ConvergenceLevel>,
    /// The stride-one rule, the finest monitoring available.
    pub reference: ConvergenceLevel,
    pub n_paths: usize,
    /// Paths whose stop times are nonincreasing along the refinement chain.
    pub monotone_paths: usize,
}

impl ConvergenceTable {
    pub fn all_monotone(&self) -> bool {
        self.monotone_paths == self.n_paths
    }

    /// Whether the mean gap to the stride-one rule strictly decreases from
    /// level to level.
    pub fn gaps_strictly_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].mean_gap < w[0].mean_gap)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("level,delta,mean_stop,std_error,n_censored,mean_gap,gap_std_error,convention_mismatches\n");
        for l in self.levels.iter().chain(std::iter::once(&self.reference)) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                l.level,
                l.delta,
                l.stop_time.estimate,
                l.stop_time.std_error,
                l.stop_time.n_censored,
                l.mean_gap,
                l.gap_std_error,
                l.convention_mismatches
            ));
        }
        out
    }
}

struct PathStops {
    /// Stop indices in fine steps, one per level then the reference;
    /// censored runs record the last step.
    standard: Vec<u64>,
    strict: Vec<u64>,
    censored: Vec<bool>,
}

/// Runs CUSUM with barrier `h̄` at the dyadic intervals
/// `coarsest_delta / 2ⁿ`, `n < levels`, plus stride one, all on the same
/// simulated paths.
pub fn convergence_study(
    model: &ChangeModel,
    h_bar: f64,
    levels: usize,
    coarsest_delta: f64,
    regime: Regime,
    sim: &SimSettings,
) -> Result<ConvergenceTable> {
    model.ensure_admissible()?;
    sim.validate()?;
    if levels == 0 {
        return Err(Error::Validation("at least one dyadic level is needed".into()));
    }
    let mut deltas: Vec<f64> = (0..levels).map(|n| coarsest_delta / (1u64 << n) as f64).collect();
    for &d in &deltas {
        stride_for(d, sim.grid_dt).map_err(|e| Error::Validation(e.to_string()))?;
    }
    deltas.push(sim.grid_dt);
    let configs: Vec<DetectorConfig> = deltas
        .iter()
        .map(|&delta| DetectorConfig::new(Rule::CusumGrid { delta }, h_bar))
        .collect::<Result<_>>()?;

    let n_steps = sim.max_steps();
    let runs = try_replicate(sim.n_rep, sim.execution, |i| {
        let mut standard: Vec<Monitor> = configs
            .iter()
            .map(|c| Monitor::new(c, sim.grid_dt))
            .collect::<Result<_>>()?;
        let mut strict: Vec<Monitor> = standard.iter().cloned().map(|m| m.strict(true)).collect();
        let m = configs.len();
        let mut out = PathStops {
            standard: vec![n_steps; m],
            strict: vec![n_steps; m],
            censored: vec![true; m],
        };
        let mut strict_open = vec![true; m];
        let mut open = 2 * m;
        let mut llr = LlrStream::new(model, regime.tau(), sim.grid_dt, RngStream::new(sim.master_seed, i))?;
        for step in 1..=n_steps {
            let u = llr.advance()?;
            for j in 0..m {
                if out.censored[j] && standard[j].push(u) {
                    out.standard[j] = step;
                    out.censored[j] = false;
                    open -= 1;
                }
                if strict_open[j] && strict[j].push(u) {
                    out.strict[j] = step;
                    strict_open[j] = false;
                    open -= 1;
                }
            }
            if open == 0 {
                break;
            }
        }
        Ok::<_, Error>(out)
    })?;

    let m = deltas.len();
    let reference = m - 1;
    let monotone_paths = runs
        .iter()
        .filter(|r| r.standard.windows(2).all(|w| w[1] <= w[0]))
        .count();
    let dt = sim.grid_dt;
    let rows: Vec<ConvergenceLevel> = (0..m)
        .map(|j| {
            let times: Vec<f64> = runs.iter().map(|r| r.standard[j] as f64 * dt).collect();
            let censored = runs.iter().filter(|r| r.censored[j]).count();
            let gaps: Vec<f64> = runs
                .iter()
                .map(|r| (r.standard[j] as f64 - r.standard[reference] as f64) * dt)
                .collect();
            let (mean_gap, gap_std_error) = mean_se(&gaps);
            let provenance = Provenance {
                master_seed: sim.master_seed,
                grid_dt: dt,
                delta: Some(deltas[j]),
                rule: Rule::CusumGrid { delta: deltas[j] }.name().to_string(),
                h_bar: Some(h_bar),
                model_digest: model.digest(),
            };
            ConvergenceLevel {
                level: j,
                delta: deltas[j],
                stop_time: EvalReport::from_samples(format!("stop_level={j}"), &times, censored, sim.horizon, provenance),
                mean_gap: if j == reference { 0.0 } else { mean_gap },
                gap_std_error: if j == reference { 0.0 } else { gap_std_error },
                convention_mismatches: runs.iter().filter(|r| r.standard[j] != r.strict[j]).count(),
            }
        })
        .collect();
    let mut levels_out = rows;
    let reference_row = levels_out.pop().expect("reference level present");
    Ok(ConvergenceTable {
        h_bar,
        levels: levels_out,
        reference: reference_row,
        n_paths: sim.n_rep,
        monotone_paths,
    })
}
