use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, Monitor, Rule, StopResult};
use crate::error::{Error, Result};
use crate::likelihood::LlrKernel;
use crate::model::ChangeModel;
use crate::parallel::{try_replicate, Execution};
use crate::paths::PathSampler;
use crate::rng::RngStream;

use super::report::{EvalReport, Flag, Provenance};

/// Monte Carlo settings shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub n_rep: usize,
    pub grid_dt: f64,
    pub horizon: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_rep < 2 {
            return Err(Error::Validation(format!("n_rep must be at least 2, got {}", self.n_rep)));
        }
        if !(self.grid_dt > 0.0 && self.grid_dt.is_finite()) {
            return Err(Error::Validation(format!("grid_dt must be positive, got {}", self.grid_dt)));
        }
        if !(self.horizon >= self.grid_dt && self.horizon.is_finite()) {
            return Err(Error::Validation(format!(
                "horizon {} must be finite and at least one grid step",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, master_seed: u64) -> Self {
        Self { master_seed, ..self }
    }

    pub fn with_reps(self, n_rep: usize) -> Self {
        Self { n_rep, ..self }
    }

    pub fn with_horizon(self, horizon: f64) -> Self {
        Self { horizon, ..self }
    }

    pub(crate) fn max_steps(&self) -> u64 {
        (self.horizon / self.grid_dt + 1e-9).floor() as u64
    }
}

/// Which law the data follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// No change, `τ = ∞`.
    InControl,
    /// Change at time zero.
    OutOfControl,
}

impl Regime {
    pub fn tau(&self) -> f64 {
        match self {
            Regime::InControl => f64::INFINITY,
            Regime::OutOfControl => 0.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regime::InControl => "arl_in_control",
            Regime::OutOfControl => "arl_out_of_control",
        }
    }
}

pub(crate) fn provenance(model: &ChangeModel, config: &DetectorConfig, sim: &SimSettings) -> Provenance {
    Provenance {
        master_seed: sim.master_seed,
        grid_dt: sim.grid_dt,
        delta: config.rule.delta(),
        rule: config.rule.name().to_string(),
        h_bar: match config.rule {
            Rule::FixedTime { .. } => None,
            _ => Some(config.log_barrier),
        },
        model_digest: model.digest(),
    }
}

/// Drives `U` along a freshly simulated path, one fine step at a time.
pub(crate) struct LlrStream {
    sampler: PathSampler,
    kernel: LlrKernel,
    ledger: Vec<crate::paths::Jump>,
    affine: bool,
    has_jumps: bool,
    pub u: f64,
}

impl LlrStream {
    pub fn new(model: &ChangeModel, tau: f64, grid_dt: f64, stream: RngStream) -> Result<Self> {
        Ok(Self {
            sampler: PathSampler::new(model, tau, grid_dt, stream)?,
            kernel: LlrKernel::new(model)?,
            ledger: Vec::new(),
            affine: matches!(model.pre.jumps, Some(crate::model::JumpComponent::Gamma { .. })),
            has_jumps: model.pre.jumps.is_some(),
            u: 0.0,
        })
    }

    /// Grid index of the change-point, `None` for no change.
    pub fn change_step(&self) -> Option<u64> {
        self.sampler
            .change_point()
            .map(|c| (c / self.sampler.grid_dt()).round() as u64)
    }

    /// Advances one grid step and returns the new value of `U`.
    pub fn advance(&mut self) -> Result<f64> {
        self.ledger.clear();
        let draw = self.sampler.next_step(&mut self.ledger);
        let continuous = if self.affine {
            0.0
        } else if self.has_jumps {
            draw.continuous
        } else {
            draw.increment
        };
        let dt = self.sampler.grid_dt();
        self.u += self.kernel.step(dt, continuous, draw.increment, &self.ledger)?;
        Ok(self.u)
    }
}

/// One replication: the change happens at `tau`; with `restart` the
/// statistic is reset to its least favorable state at the change and alarms
/// raised before it are ignored (the rule is then run afresh on the
/// post-change data).
pub(crate) fn run_once(
    model: &ChangeModel,
    config: &DetectorConfig,
    tau: f64,
    restart: bool,
    sim: &SimSettings,
    stream: RngStream,
) -> Result<StopResult> {
    let mut monitor = Monitor::new(config, sim.grid_dt)?;
    let mut llr = LlrStream::new(model, tau, sim.grid_dt, stream)?;
    let change = llr.change_step();
    let restarts = restart && !matches!(config.rule, Rule::FixedTime { .. });
    if restarts && change == Some(0) {
        monitor.restart_least_favorable();
    }
    if monitor.alarm_at_start() && !(restarts && change.is_some_and(|c| c > 0)) {
        return Ok(StopResult {
            stop_time: 0.0,
            censored: false,
            stat_at_stop: monitor.stat(),
            steps_taken: 0,
            tau_hat: Some(0.0),
        });
    }
    let n = sim.max_steps();
    for i in 0..n {
        if restarts && change == Some(i) && i > 0 {
            monitor.restart_least_favorable();
            if monitor.alarm_at_restart() {
                return Ok(monitor.stopped());
            }
        }
        let u = llr.advance()?;
        if monitor.push(u) {
            let pre_change = restarts && change.is_some_and(|c| i + 1 <= c);
            if !pre_change {
                return Ok(monitor.stopped());
            }
        }
    }
    Ok(monitor.censored(n as f64 * sim.grid_dt))
}

/// Stop results of `sim.n_rep` replications; replication `i` uses stream `i`.
pub fn simulate_stops(
    model: &ChangeModel,
    config: &DetectorConfig,
    tau: f64,
    restart: bool,
    sim: &SimSettings,
) -> Result<Vec<StopResult>> {
    model.ensure_admissible()?;
    config.validate()?;
    sim.validate()?;
    try_replicate(sim.n_rep, sim.execution, |i| {
        run_once(model, config, tau, restart, sim, RngStream::new(sim.master_seed, i))
    })
}

/// Average run length under the in-control or out-of-control law.
pub fn estimate_arl(model: &ChangeModel, config: &DetectorConfig, regime: Regime, sim: &SimSettings) -> Result<EvalReport> {
    let stops = simulate_stops(model, config, regime.tau(), false, sim)?;
    Ok(EvalReport::from_stops(
        regime.label(),
        &stops,
        sim.horizon,
        provenance(model, config, sim),
    ))
}

/// One probe of the calibration bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProbe {
    pub log_barrier: f64,
    pub arl: f64,
    pub std_error: f64,
    pub n_rep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub log_barrier: f64,
    /// In-control ARL at the returned barrier, at four times the probe budget.
    pub report: EvalReport,
    pub trace: Vec<CalibrationProbe>,
    pub converged: bool,
}

const MAX_BARRIER: f64 = 64.0;
const BISECTION_STEPS: usize = 60;

/// Finds `h̄` with in-control ARL equal to `gamma` within `rel_tol` by
/// bisection under common random numbers. Probes use `sim.n_rep`
/// replications; the search is then refined at four times that budget.
pub fn calibrate_barrier(
    model: &ChangeModel,
    rule: Rule,
    gamma: f64,
    rel_tol: f64,
    sim: &SimSettings,
) -> Result<Calibration> {
    model.ensure_admissible()?;
    sim.validate()?;
    let step = rule.delta().unwrap_or(sim.grid_dt);
    if !(gamma >= step) {
        return Err(Error::Infeasible(format!(
            "target γ = {gamma} is below one monitoring step {step}; only randomized rules reach it"
        )));
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::Validation(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    if matches!(rule, Rule::FixedTime { .. } | Rule::CusumIid) {
        return Err(Error::Contract(format!("rule {} has no barrier to calibrate", rule.name())));
    }
    let mut trace = Vec::new();
    let mut probe = |h: f64, sim: &SimSettings| -> Result<EvalReport> {
        let config = DetectorConfig::new(rule, h)?;
        let report = estimate_arl(model, &config, Regime::InControl, sim)?;
        trace.push(CalibrationProbe {
            log_barrier: h,
            arl: report.estimate,
            std_error: report.std_error,
            n_rep: report.n_rep,
        });
        Ok(report)
    };
    let close = |arl: f64, tol: f64| (arl - gamma).abs() <= tol * gamma;

    let coarse = *sim;
    let fine = sim.with_reps(sim.n_rep * 4);

    let at_zero = probe(0.0, &coarse)?;
    if at_zero.estimate >= gamma || close(at_zero.estimate, rel_tol) {
        let report = probe(0.0, &fine)?;
        let converged = report.estimate >= gamma || close(report.estimate, rel_tol);
        return finish(0.0, report, trace, converged);
    }

    // bracket: ARL(lo) < γ ≤ ARL(hi)
    let (mut lo, mut hi) = (0.0, 1.0);
    loop {
        let r = probe(hi, &coarse)?;
        if r.estimate >= gamma {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > MAX_BARRIER {
            return Err(Error::Infeasible(format!(
                "ARL stays below γ = {gamma} up to h̄ = {MAX_BARRIER}; raise the horizon"
            )));
        }
    }
    let h = bisect(&mut probe, lo, hi, gamma, rel_tol / 4.0, &coarse)?;

    // refine at the larger budget in a bracket around the coarse answer
    let width = ((hi - lo) / 8.0).max(0.05);
    let (mut lo, mut hi) = ((h - width).max(0.0), h + width);
    while lo > 0.0 && probe(lo, &fine)?.estimate >= gamma {
        lo = (lo - width).max(0.0);
    }
    while probe(hi, &fine)?.estimate < gamma {
        hi += width;
        if hi > MAX_BARRIER {
            break;
        }
    }
    let h = bisect(&mut probe, lo, hi, gamma, rel_tol / 4.0, &fine)?;
    let report = probe(h, &fine)?;
    let converged = close(report.estimate, rel_tol);
    finish(h, report, trace, converged)
}

fn bisect(
    probe: &mut impl FnMut(f64, &SimSettings) -> Result<EvalReport>,
    mut lo: f64,
    mut hi: f64,
    gamma: f64,
    tol: f64,
    sim: &SimSettings,
) -> Result<f64> {
    let mut best = (f64::INFINITY, 0.5 * (lo + hi));
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let arl = probe(mid, sim)?.estimate;
        let miss = (arl - gamma).abs() / gamma;
        if miss < best.0 {
            best = (miss, mid);
        }
        if miss <= tol || hi - lo < 1e-6 {
            break;
        }
        if arl < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

fn finish(log_barrier: f64, mut report: EvalReport, trace: Vec<CalibrationProbe>, converged: bool) -> Result<Calibration> {
    report.label = "calibrated_arl".into();
    if !converged {
        report.flag(Flag::NotConverged);
    }
    Ok(Calibration {
        log_barrier,
        report,
        trace,
        converged,
    })
}
