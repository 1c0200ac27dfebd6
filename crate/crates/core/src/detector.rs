//! CUSUM and competitor stopping rules.
//!
//! Every rule on the log-likelihood-ratio process is driven by [`Monitor`],
//! which consumes `U` one fine grid point at a time. The CUSUM statistic is
//! kept in its drawup form `log S_k = U_k − min_{m<k} U_m` rather than via
//! the product recursion: the two agree in exact arithmetic, and the drawup
//! form makes stop times on nested grids comparable without rounding noise
//! (floating-point subtraction is monotone).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{llr_increment_iid, IncrementLaw, LLRPath};
use crate::model::ChangeModel;
use crate::paths::{stride_for, IncrementSeries};

/// Stopping rule. All grid rules monitor at multiples of `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Drawup monitored at every simulation grid point.
    CusumContinuous,
    /// CUSUM on `delta`-spaced increments of `U`, started from `S₀ = 0`.
    CusumGrid { delta: f64 },
    /// Discrete CUSUM on an i.i.d. increment series with closed-form laws.
    CusumIid,
    /// Shiryaev–Roberts statistic on `delta`-spaced increments.
    ShiryaevRoberts { delta: f64 },
    /// Stops after exactly `steps` monitoring steps.
    FixedTime { delta: f64, steps: u64 },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::CusumContinuous => "cusum_continuous",
            Rule::CusumGrid { .. } => "cusum_grid",
            Rule::CusumIid => "cusum_iid",
            Rule::ShiryaevRoberts { .. } => "shiryaev_roberts",
            Rule::FixedTime { .. } => "fixed_time",
        }
    }

    /// Monitoring interval, `None` for the continuous rule.
    pub fn delta(&self) -> Option<f64> {
        match *self {
            Rule::CusumGrid { delta } | Rule::ShiryaevRoberts { delta } | Rule::FixedTime { delta, .. } => Some(delta),
            Rule::CusumContinuous | Rule::CusumIid => None,
        }
    }

    pub fn is_cusum(&self) -> bool {
        matches!(self, Rule::CusumContinuous | Rule::CusumGrid { .. } | Rule::CusumIid)
    }

    /// The same rule with a different monitoring interval.
    pub fn with_delta(&self, delta: f64) -> Rule {
        match *self {
            Rule::CusumGrid { .. } => Rule::CusumGrid { delta },
            Rule::ShiryaevRoberts { .. } => Rule::ShiryaevRoberts { delta },
            Rule::FixedTime { steps, .. } => Rule::FixedTime { delta, steps },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(flatten)]
    pub rule: Rule,
    /// `h̄ = log h` for CUSUM rules, the log threshold for Shiryaev–Roberts.
    pub log_barrier: f64,
}

impl DetectorConfig {
    pub fn new(rule: Rule, log_barrier: f64) -> Result<Self> {
        let config = Self { rule, log_barrier };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.log_barrier.is_finite() {
            return Err(Error::Validation(format!("barrier must be finite, got {}", self.log_barrier)));
        }
        if self.rule.is_cusum() && self.log_barrier < 0.0 {
            return Err(Error::Validation(format!(
                "CUSUM barrier h̄ = log h must be ≥ 0, got {}",
                self.log_barrier
            )));
        }
        if let Some(delta) = self.rule.delta() {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::Validation(format!("monitoring interval must be positive, got {delta}")));
            }
        }
        if let Rule::FixedTime { steps: 0, .. } = self.rule {
            return Err(Error::Validation("fixed-time rule needs at least one step".into()));
        }
        Ok(())
    }
}

/// Discrete CUSUM state; `log_stat = −∞` encodes `S = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CusumState {
    pub log_stat: f64,
    pub steps: u64,
}

impl Default for CusumState {
    fn default() -> Self {
        Self {
            log_stat: f64::NEG_INFINITY,
            steps: 0,
        }
    }
}

/// `S_k = max(S_{k−1}, 1)·L_k` in log form.
pub fn cusum_update(state: CusumState, log_l: f64) -> CusumState {
    CusumState {
        log_stat: state.log_stat.max(0.0) + log_l,
        steps: state.steps + 1,
    }
}

/// `log(1 + e^a)` without overflow; `a = −∞` gives 0.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Outcome of one run of a stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopResult {
    pub stop_time: f64,
    pub censored: bool,
    /// Monitored statistic at the stop (log scale).
    pub stat_at_stop: f64,
    /// Monitoring steps taken.
    pub steps_taken: u64,
    /// Last time the statistic was at or below its reflection level.
    pub tau_hat: Option<f64>,
}

/// `Y_t = U_t − min_{s≤t} U_s` at each grid point.
pub fn drawup(llr: &LLRPath) -> Vec<f64> {
    let mut min = f64::INFINITY;
    llr.u_values
        .iter()
        .map(|&u| {
            min = min.min(u);
            u - min
        })
        .collect()
}

/// First monitored index `i ∈ {0, k, 2k, …}` with `y[i] ≥ h̄`, else censored
/// at the last grid point.
pub fn first_passage(y: &[f64], log_barrier: f64, grid_dt: f64, monitor_stride: usize) -> Result<StopResult> {
    if monitor_stride == 0 {
        return Err(Error::Validation("monitor stride must be positive".into()));
    }
    if y.is_empty() {
        return Err(Error::Validation("empty drawup sequence".into()));
    }
    let mut last_zero = 0;
    let mut steps = 0;
    for i in (0..y.len()).step_by(monitor_stride) {
        if y[i] <= 0.0 {
            last_zero = i;
        }
        if y[i] >= log_barrier {
            return Ok(StopResult {
                stop_time: i as f64 * grid_dt,
                censored: false,
                stat_at_stop: y[i],
                steps_taken: steps,
                tau_hat: Some(last_zero as f64 * grid_dt),
            });
        }
        steps += 1;
    }
    let last = y.len() - 1;
    Ok(StopResult {
        stop_time: last as f64 * grid_dt,
        censored: true,
        stat_at_stop: y[last - last % monitor_stride],
        steps_taken: steps.saturating_sub(1),
        tau_hat: None,
    })
}

/// Last index with `log S ≤ 0` at or before an uncensored stop, times `delta`.
pub fn mle_changepoint(log_stats: &[f64], stop: &StopResult, delta: f64) -> Result<f64> {
    if stop.censored {
        return Err(Error::Domain("change-point estimate is undefined for a censored run".into()));
    }
    let k = ((stop.stop_time / delta).round() as usize).min(log_stats.len().saturating_sub(1));
    log_stats[..=k]
        .iter()
        .rposition(|&s| s <= 0.0)
        .map(|i| i as f64 * delta)
        .ok_or_else(|| Error::Domain("statistic never at or below zero before the stop".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Drawup,
    Cusum,
    ShiryaevRoberts,
    Fixed(u64),
}

/// Streaming evaluation of a stopping rule over `U` at fine grid points.
///
/// Feed cumulative values `U_{i·dt}` with [`Monitor::push`]; the monitor
/// checks the barrier every `stride` fine steps.
#[derive(Debug, Clone)]
pub struct Monitor {
    kind: Kind,
    stride: u64,
    log_barrier: f64,
    strict: bool,
    grid_dt: f64,
    fine: u64,
    checks: u64,
    /// `U` at the previous check.
    last_u: f64,
    /// Running minimum of `U` over the checks before the current one
    /// (drawup form of the CUSUM statistic).
    min_u: f64,
    stat: f64,
    last_reflection: u64,
}

impl Monitor {
    pub fn new(config: &DetectorConfig, grid_dt: f64) -> Result<Self> {
        config.validate()?;
        let (kind, stride) = match config.rule {
            Rule::CusumContinuous => (Kind::Drawup, 1),
            Rule::CusumGrid { delta } => (Kind::Cusum, stride_for(delta, grid_dt)?),
            Rule::ShiryaevRoberts { delta } => (Kind::ShiryaevRoberts, stride_for(delta, grid_dt)?),
            Rule::FixedTime { delta, steps } => (Kind::Fixed(steps), stride_for(delta, grid_dt)?),
            Rule::CusumIid => {
                return Err(Error::Contract("the i.i.d. CUSUM runs on increment series, not on U".into()));
            }
        };
        let mut monitor = Self {
            kind,
            stride: stride as u64,
            log_barrier: config.log_barrier,
            strict: false,
            grid_dt,
            fine: 0,
            checks: 0,
            last_u: 0.0,
            min_u: f64::INFINITY,
            stat: f64::NEG_INFINITY,
            last_reflection: 0,
        };
        if kind == Kind::Drawup {
            monitor.min_u = 0.0;
            monitor.stat = 0.0;
        }
        Ok(monitor)
    }

    /// Use `>` instead of `≥` at the barrier.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    pub fn fine_steps(&self) -> u64 {
        self.fine
    }

    pub fn checks(&self) -> u64 {
        self.checks
    }

    pub fn stat(&self) -> f64 {
        self.stat
    }

    fn crossed(&self) -> bool {
        if self.strict {
            self.stat > self.log_barrier
        } else {
            self.stat >= self.log_barrier
        }
    }

    /// Whether the rule stops at time zero, before any data (only the
    /// continuous rule with `h̄ = 0`).
    pub fn alarm_at_start(&self) -> bool {
        self.kind == Kind::Drawup && self.fine == 0 && self.crossed()
    }

    /// Whether a freshly restarted statistic already sits at the barrier
    /// (only the continuous rule with `h̄ = 0`).
    pub fn alarm_at_restart(&self) -> bool {
        self.kind == Kind::Drawup && self.crossed()
    }

    /// Advances one fine step to the cumulative value `u`; returns `true`
    /// on an alarm at this point.
    pub fn push(&mut self, u: f64) -> bool {
        self.fine += 1;
        if self.fine % self.stride != 0 {
            return false;
        }
        self.checks += 1;
        match self.kind {
            Kind::Drawup => {
                self.min_u = self.min_u.min(u);
                self.stat = u - self.min_u;
                if self.stat <= 0.0 {
                    self.last_reflection = self.fine;
                }
            }
            Kind::Cusum => {
                if self.min_u == f64::INFINITY {
                    // S₀ = 0 at the previous check
                    self.min_u = self.last_u;
                }
                self.stat = u - self.min_u;
                self.min_u = self.min_u.min(u);
                if self.stat <= 0.0 {
                    self.last_reflection = self.fine;
                }
            }
            Kind::ShiryaevRoberts => {
                self.stat = softplus(self.stat) + (u - self.last_u);
            }
            Kind::Fixed(steps) => {
                self.stat = u;
                self.last_u = u;
                return self.checks >= steps;
            }
        }
        self.last_u = u;
        self.crossed()
    }

    /// Resets the statistic to its least favorable post-change state at the
    /// current point: `S = 1` for CUSUM, `R = 0` for Shiryaev–Roberts. The
    /// fixed-time rule keeps its clock.
    pub fn restart_least_favorable(&mut self) {
        match self.kind {
            Kind::Drawup | Kind::Cusum => {
                self.min_u = self.last_u_or_current();
                self.stat = 0.0;
                self.last_reflection = self.fine;
            }
            Kind::ShiryaevRoberts => self.stat = f64::NEG_INFINITY,
            Kind::Fixed(_) => {}
        }
    }

    fn last_u_or_current(&self) -> f64 {
        self.last_u
    }

    /// Stop result for an alarm raised by the last [`Monitor::push`].
    pub fn stopped(&self) -> StopResult {
        StopResult {
            stop_time: self.fine as f64 * self.grid_dt,
            censored: false,
            stat_at_stop: self.stat,
            steps_taken: self.checks,
            tau_hat: self.tau_hat(),
        }
    }

    /// Stop result for a run cut off at `horizon`.
    pub fn censored(&self, horizon: f64) -> StopResult {
        StopResult {
            stop_time: horizon,
            censored: true,
            stat_at_stop: self.stat,
            steps_taken: self.checks,
            tau_hat: None,
        }
    }

    fn tau_hat(&self) -> Option<f64> {
        matches!(self.kind, Kind::Drawup | Kind::Cusum).then(|| self.last_reflection as f64 * self.grid_dt)
    }
}

/// Input of [`run_rule`].
#[derive(Debug, Clone, Copy)]
pub enum DetectorInput<'a> {
    Llr(&'a LLRPath),
    Increments {
        series: &'a IncrementSeries,
        q0: IncrementLaw,
        q1: IncrementLaw,
    },
}

/// Runs a rule over a precomputed input up to `horizon`.
pub fn run_rule(config: &DetectorConfig, input: DetectorInput<'_>, horizon: f64) -> Result<StopResult> {
    config.validate()?;
    match (config.rule, input) {
        (Rule::CusumIid, DetectorInput::Increments { series, q0, q1 }) => {
            let mut state = CusumState::default();
            let mut last_reflection = 0;
            for (k, &x) in series.increments.iter().enumerate() {
                let t = (k + 1) as f64 * series.delta;
                if t > horizon * (1.0 + 1e-12) {
                    break;
                }
                state = cusum_update(state, llr_increment_iid(q0, q1, x)?);
                if state.log_stat <= 0.0 {
                    last_reflection = k + 1;
                }
                if state.log_stat >= config.log_barrier {
                    return Ok(StopResult {
                        stop_time: t,
                        censored: false,
                        stat_at_stop: state.log_stat,
                        steps_taken: state.steps,
                        tau_hat: Some(last_reflection as f64 * series.delta),
                    });
                }
            }
            Ok(StopResult {
                stop_time: horizon,
                censored: true,
                stat_at_stop: state.log_stat,
                steps_taken: state.steps,
                tau_hat: None,
            })
        }
        (Rule::CusumIid, DetectorInput::Llr(_)) | (_, DetectorInput::Increments { .. }) => Err(Error::Contract(format!(
            "rule {} does not accept this input",
            config.rule.name()
        ))),
        (_, DetectorInput::Llr(llr)) => {
            let mut monitor = Monitor::new(config, llr.grid_dt)?;
            if monitor.alarm_at_start() {
                return Ok(StopResult {
                    stop_time: 0.0,
                    censored: false,
                    stat_at_stop: 0.0,
                    steps_taken: 0,
                    tau_hat: Some(0.0),
                });
            }
            let limit = ((horizon / llr.grid_dt) + 1e-9).floor() as usize;
            for &u in llr.u_values.iter().skip(1).take(limit) {
                if monitor.push(u) {
                    return Ok(monitor.stopped());
                }
            }
            Ok(monitor.censored(horizon))
        }
    }
}

/// Perturbs `h̄` by `1e-6` when the model's φ is a constant `c` and `h̄`
/// sits on the lattice `{k·c}`, where the barrier-crossing law has atoms.
pub fn atom_safe_log_barrier(model: &ChangeModel, log_barrier: f64) -> f64 {
    let Some(c) = model.phi().and_then(|phi| phi.constant_value()) else {
        return log_barrier;
    };
    if c == 0.0 || model.alpha != 0.0 {
        return log_barrier;
    }
    let k = (log_barrier / c).round();
    if k >= 0.0 && (log_barrier - k * c).abs() <= 1e-9 {
        log_barrier + 1e-6
    } else {
        log_barrier
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llr(dt: f64, u: Vec<f64>) -> LLRPath {
        LLRPath::from_values(dt, u).unwrap()
    }

    fn ramp(dt: f64, n: usize) -> LLRPath {
        llr(dt, (0..=n).map(|i| i as f64 * dt).collect())
    }

    #[test]
    fn drawup_examples() {
        assert_eq!(drawup(&llr(1.0, vec![0.0, -1.0, -0.5])), vec![0.0, 0.0, 0.5]);
        assert_eq!(drawup(&llr(1.0, vec![0.0, 2.0, 1.0, 3.0])), vec![0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn update_examples() {
        let s = cusum_update(CusumState::default(), 0.0);
        assert_eq!(s.log_stat, 0.0);
        let s = cusum_update(
            CusumState {
                log_stat: 2f64.ln(),
                steps: 3,
            },
            3f64.ln(),
        );
        assert!((s.log_stat.exp() - 6.0).abs() < 1e-12);
        assert_eq!(s.steps, 4);
    }

    #[test]
    fn first_passage_examples() {
        let zero = vec![0.0; 11];
        let r = first_passage(&zero, 1.0, 0.1, 1).unwrap();
        assert!(r.censored);
        assert!((r.stop_time - 1.0).abs() < 1e-12);

        let y = drawup(&ramp(0.01, 500));
        let r = first_passage(&y, 2.0, 0.01, 1).unwrap();
        assert!((r.stop_time - 2.0).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn grid_ramp_stops_at_barrier() {
        let path = ramp(0.01, 500);
        let c = DetectorConfig::new(Rule::CusumGrid { delta: 0.5 }, 2.0).unwrap();
        let r = run_rule(&c, DetectorInput::Llr(&path), 5.0).unwrap();
        assert!((r.stop_time - 2.0).abs() < 1e-12, "{r:?}");
        assert_eq!(r.steps_taken, 4);
        assert_eq!(r.tau_hat, Some(0.0));
    }

    #[test]
    fn zero_barrier_grid_stops_at_first_step() {
        let path = llr(0.1, vec![0.0; 21]);
        let c = DetectorConfig::new(Rule::CusumGrid { delta: 0.5 }, 0.0).unwrap();
        let r = run_rule(&c, DetectorInput::Llr(&path), 2.0).unwrap();
        assert!((r.stop_time - 0.5).abs() < 1e-12);
        // the continuous rule can stop before any data
        let c = DetectorConfig::new(Rule::CusumContinuous, 0.0).unwrap();
        assert_eq!(run_rule(&c, DetectorInput::Llr(&path), 2.0).unwrap().stop_time, 0.0);
    }

    #[test]
    fn mle_examples() {
        let stats = [f64::NEG_INFINITY, -0.2, 0.1, 0.8];
        let stop = StopResult {
            stop_time: 3.0,
            censored: false,
            stat_at_stop: 0.8,
            steps_taken: 3,
            tau_hat: None,
        };
        assert_eq!(mle_changepoint(&stats, &stop, 1.0).unwrap(), 1.0);
        let censored = StopResult { censored: true, ..stop };
        assert!(mle_changepoint(&stats, &censored, 1.0).is_err());
    }

    #[test]
    fn tau_hat_tracks_ramp_onset() {
        let dt = 0.01;
        let u: Vec<f64> = (0..=600)
            .map(|i| {
                let t = i as f64 * dt;
                if t <= 3.0 { -t } else { -3.0 + 2.0 * (t - 3.0) }
            })
            .collect();
        let c = DetectorConfig::new(Rule::CusumGrid { delta: dt }, 1.0).unwrap();
        let r = run_rule(&c, DetectorInput::Llr(&llr(dt, u)), 6.0).unwrap();
        assert!((r.tau_hat.unwrap() - 3.0).abs() <= dt + 1e-12, "{r:?}");
    }

    #[test]
    fn mismatched_input_is_contract_error() {
        let path = ramp(0.1, 10);
        let c = DetectorConfig::new(Rule::CusumIid, 1.0).unwrap();
        assert!(matches!(run_rule(&c, DetectorInput::Llr(&path), 1.0), Err(Error::Contract(_))));
        let series = IncrementSeries {
            delta: 1.0,
            increments: vec![1.0],
        };
        let g = IncrementLaw::Gaussian { mean: 0.0, sd: 1.0 };
        let c = DetectorConfig::new(Rule::CusumContinuous, 1.0).unwrap();
        let input = DetectorInput::Increments {
            series: &series,
            q0: g,
            q1: g,
        };
        assert!(matches!(run_rule(&c, input, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn iid_cusum_example_sequence() {
        let series = IncrementSeries {
            delta: 1.0,
            increments: vec![0.5, -1.0, 2.0],
        };
        let q0 = IncrementLaw::Gaussian { mean: 0.0, sd: 1.0 };
        let q1 = IncrementLaw::Gaussian { mean: 1.0, sd: 1.0 };
        let c = DetectorConfig::new(Rule::CusumIid, 1.5).unwrap();
        let r = run_rule(&c, DetectorInput::Increments { series: &series, q0, q1 }, 3.0).unwrap();
        assert_eq!(r.stop_time, 3.0);
        assert!((r.stat_at_stop - 1.5).abs() < 1e-12);
    }

    #[test]
    fn negative_cusum_barrier_rejected() {
        assert!(DetectorConfig::new(Rule::CusumContinuous, -0.1).is_err());
        assert!(DetectorConfig::new(Rule::ShiryaevRoberts { delta: 1.0 }, -0.1).is_ok());
        assert!(DetectorConfig::new(Rule::FixedTime { delta: 1.0, steps: 0 }, 0.0).is_err());
    }

    #[test]
    fn shiryaev_roberts_recursion() {
        // R_k = (1 + R_{k−1})·L_k with L ≡ e
        let path = llr(1.0, vec![0.0, 1.0, 2.0, 3.0]);
        let c = DetectorConfig::new(Rule::ShiryaevRoberts { delta: 1.0 }, 100f64.ln()).unwrap();
        let r = run_rule(&c, DetectorInput::Llr(&path), 3.0).unwrap();
        let e = 1f64.exp();
        let r3 = ((1.0 + (1.0 + e) * e) * e).ln();
        assert!(r.censored);
        assert!((r.stat_at_stop - r3).abs() < 1e-12);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert_eq!(softplus(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn fixed_time_rule() {
        let path = ramp(0.5, 10);
        let c = DetectorConfig::new(Rule::FixedTime { delta: 1.0, steps: 2 }, 0.0).unwrap();
        let r = run_rule(&c, DetectorInput::Llr(&path), 5.0).unwrap();
        assert_eq!(r.stop_time, 2.0);
    }
}
