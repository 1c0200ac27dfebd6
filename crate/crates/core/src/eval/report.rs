use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::StopResult;
use crate::stats::mean_se;

/// Conditions attached to an estimate instead of silently correcting it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Some replications were censored at the horizon; the mean is biased low.
    CensoringBias,
    /// At least 1% of replications were censored.
    InsufficientHorizon,
    /// Every replication was censored.
    Unusable,
    /// The estimate is more than three standard errors from its target.
    OutsideTolerance,
    /// Calibration did not reach the requested relative tolerance.
    NotConverged,
    /// Worst case taken over a finite change-point grid only.
    GridWorstCase,
}

impl Flag {
    fn as_str(&self) -> &'static str {
        match self {
            Flag::CensoringBias => "censoring_bias",
            Flag::InsufficientHorizon => "insufficient_horizon",
            Flag::Unusable => "unusable",
            Flag::OutsideTolerance => "outside_tolerance",
            Flag::NotConverged => "not_converged",
            Flag::GridWorstCase => "grid_worst_case",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub grid_dt: f64,
    pub delta: Option<f64>,
    pub rule: String,
    pub h_bar: Option<f64>,
    pub model_digest: String,
}

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_rep: usize,
    pub n_censored: usize,
    pub horizon: f64,
    pub provenance: Provenance,
    pub flags: Vec<Flag>,
}

pub const REPORT_CSV_HEADER: &str =
    "label,estimate,std_error,n_rep,n_censored,horizon,master_seed,grid_dt,delta,rule,h_bar,model_digest,flags";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Report on the stop times of a batch of runs; censored runs contribute
    /// their censored value and are counted.
    pub fn from_stops(label: impl Into<String>, stops: &[StopResult], horizon: f64, provenance: Provenance) -> Self {
        let times: Vec<f64> = stops.iter().map(|s| s.stop_time).collect();
        Self::from_samples(label, &times, stops.iter().filter(|s| s.censored).count(), horizon, provenance)
    }

    pub fn from_samples(
        label: impl Into<String>,
        samples: &[f64],
        n_censored: usize,
        horizon: f64,
        provenance: Provenance,
    ) -> Self {
        let (estimate, std_error) = mean_se(samples);
        let n_rep = samples.len();
        let mut flags = Vec::new();
        if n_censored > 0 {
            flags.push(Flag::CensoringBias);
        }
        if n_censored as f64 >= 0.01 * n_rep as f64 && n_censored > 0 {
            flags.push(Flag::InsufficientHorizon);
        }
        if n_censored == n_rep {
            flags.push(Flag::Unusable);
        }
        Self {
            label: label.into(),
            estimate,
            std_error,
            n_rep,
            n_censored,
            horizon,
            provenance,
            flags,
        }
    }

    /// `|estimate − target| ≤ k·SE`.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.std_error
    }

    pub fn relative_error(&self, target: f64) -> f64 {
        (self.estimate - target).abs() / target.abs()
    }

    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn flag(&mut self, flag: Flag) {
        if !self.has(flag) {
            self.flags.push(flag);
        }
    }

    pub fn csv_row(&self) -> String {
        let p = &self.provenance;
        let flags: Vec<&str> = self.flags.iter().map(Flag::as_str).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.estimate,
            self.std_error,
            self.n_rep,
            self.n_censored,
            self.horizon,
            p.master_seed,
            p.grid_dt,
            opt(p.delta),
            p.rule,
            opt(p.h_bar),
            p.model_digest,
            flags.join(";")
        )
    }
}

/// Renders reports as CSV with [`REPORT_CSV_HEADER`].
pub fn reports_to_csv<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub const STOP_CSV_HEADER: &str = "rule,h_bar,delta,stop_time,censored,stat_at_stop,tau_hat,seed,stream_id";

/// Renders per-replication stop results; row `i` came from stream `i`.
pub fn stops_to_csv(rule: &str, h_bar: f64, delta: Option<f64>, seed: u64, stops: &[StopResult]) -> String {
    let mut out = String::from(STOP_CSV_HEADER);
    out.push('\n');
    for (i, s) in stops.iter().enumerate() {
        let _ = writeln!(
            out,
            "{rule},{h_bar},{},{},{},{},{},{seed},{i}",
            opt(delta),
            s.stop_time,
            s.censored,
            s.stat_at_stop,
            opt(s.tau_hat)
        );
    }
    out
}
