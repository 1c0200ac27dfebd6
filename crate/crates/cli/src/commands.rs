use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde_json::{json, Value};

use levy_cusum::eval::{
    calibrate_barrier, compare, convergence_study, estimate_arl, lorden_delay, lower_bound_ratio, reports_to_csv,
    simulate_stops, stops_to_csv, EvalReport,
};
use levy_cusum::likelihood::llr_path;
use levy_cusum::model::Admissibility;
use levy_cusum::paths::sample_changed_path;
use levy_cusum::{ChangeModel, DetectorConfig, Error, Execution, RngStream, Rule, SimSettings};

use crate::config::ExperimentConfig;

/// Files produced by a command, written only after the command succeeded.
#[derive(Default)]
pub struct Artifacts {
    pub reports: Vec<EvalReport>,
    pub results: Value,
    pub extra: Vec<(&'static str, String)>,
    pub summary: Vec<String>,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Core(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    pub fn category(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Core(e) => e.category(),
            Failure::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "inadmissible" => 3,
            "numerical" => 4,
            "io" => 1,
            _ => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Config(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
            Failure::Io(e) => e.to_string(),
        }
    }
}

fn settings(config: &ExperimentConfig) -> SimSettings {
    SimSettings {
        n_rep: config.simulation.n_rep,
        grid_dt: config.simulation.grid_dt,
        horizon: config.simulation.horizon.expect("resolved config has a horizon"),
        master_seed: config.simulation.master_seed,
        execution: Execution::Parallel,
    }
}

fn detector(config: &ExperimentConfig) -> Result<DetectorConfig, Failure> {
    Ok(DetectorConfig::new(config.detector.rule()?, config.detector.h_bar)?)
}

fn describe(r: &EvalReport) -> String {
    let mut line = format!("{}: {} ± {} (n = {}", r.label, r.estimate, r.std_error, r.n_rep);
    if r.n_censored > 0 {
        let _ = write!(line, ", censored {}", r.n_censored);
    }
    line.push(')');
    line
}

pub fn validate(_config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let mut out = Artifacts {
        results: json!({
            "admissibility": model.admissibility,
            "alpha": model.alpha,
            "jump_constants": model.jump,
            "model_digest": model.digest(),
        }),
        ..Artifacts::default()
    };
    match &model.admissibility {
        Admissibility::Admissible => {
            out.summary.push(format!("model {} is admissible, alpha = {}", model.digest(), model.alpha));
            if let Some(j) = model.jump {
                out.summary.push(format!(
                    "compensator = {}, beta_pre = {}, beta_post = {}",
                    j.compensator, j.beta_pre, j.beta_post
                ));
            }
        }
        Admissibility::Rejected(v) => out.summary.push(format!("model {} rejected: {v}", model.digest())),
    }
    Ok(out)
}

pub fn simulate(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let det = detector(config)?;
    let tau = config.detector.tau.unwrap_or(f64::INFINITY);
    let stops = simulate_stops(model, &det, tau, false, &sim)?;
    let mut report = EvalReport::from_stops("stop_time", &stops, sim.horizon, provenance(model, &det, &sim));
    report.label = format!("stop_time_tau={tau}");
    let mut out = Artifacts {
        summary: vec![describe(&report)],
        results: json!({ "tau": config.detector.tau, "stop_time": report }),
        ..Artifacts::default()
    };
    out.extra.push((
        "stops.csv",
        stops_to_csv(det.rule.name(), det.log_barrier, det.rule.delta(), sim.master_seed, &stops),
    ));
    if config.output.dump_paths {
        let path = sample_changed_path(model, tau, sim.horizon, sim.grid_dt, RngStream::new(sim.master_seed, 0))?;
        let llr = llr_path(model, &path)?;
        let mut buf = Vec::new();
        path.write_csv(&mut buf)?;
        out.extra.push(("path_dump.csv", String::from_utf8(buf).expect("ascii csv")));
        let mut buf = Vec::new();
        path.write_ledger_csv(&mut buf)?;
        out.extra.push(("jump_ledger.csv", String::from_utf8(buf).expect("ascii csv")));
        let mut buf = Vec::new();
        llr.write_csv(&mut buf)?;
        out.extra.push(("llr_dump.csv", String::from_utf8(buf).expect("ascii csv")));
    }
    out.reports.push(report);
    Ok(out)
}

fn provenance(model: &ChangeModel, det: &DetectorConfig, sim: &SimSettings) -> levy_cusum::eval::Provenance {
    levy_cusum::eval::Provenance {
        master_seed: sim.master_seed,
        grid_dt: sim.grid_dt,
        delta: det.rule.delta(),
        rule: det.rule.name().to_string(),
        h_bar: Some(det.log_barrier),
        model_digest: model.digest(),
    }
}

pub fn arl(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let det = detector(config)?;
    let regime = config.detector.regime;
    let stops = simulate_stops(model, &det, regime.tau(), false, &sim)?;
    let report = estimate_arl(model, &det, regime, &sim)?;
    Ok(Artifacts {
        summary: vec![describe(&report)],
        results: json!({ "arl": report }),
        extra: vec![(
            "stops.csv",
            stops_to_csv(det.rule.name(), det.log_barrier, det.rule.delta(), sim.master_seed, &stops),
        )],
        reports: vec![report],
    })
}

pub fn calibrate(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let rule = config.detector.rule()?;
    let gamma = config.detector.gamma()?;
    let cal = calibrate_barrier(model, rule, gamma, config.experiment.rel_tol, &sim)?;
    let mut trace = String::from("log_barrier,arl,std_error,n_rep\n");
    for p in &cal.trace {
        let _ = writeln!(trace, "{},{},{},{}", p.log_barrier, p.arl, p.std_error, p.n_rep);
    }
    Ok(Artifacts {
        summary: vec![
            format!("calibrated h_bar = {} for gamma = {gamma} (converged: {})", cal.log_barrier, cal.converged),
            describe(&cal.report),
        ],
        results: json!({ "h_bar": cal.log_barrier, "converged": cal.converged, "arl": cal.report }),
        extra: vec![("calibration_trace.csv", trace)],
        reports: vec![cal.report],
    })
}

pub fn lorden(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let det = detector(config)?;
    let report = lorden_delay(model, &det, &config.experiment.tau_grid, &sim)?;
    let mut worst = report.worst_report().clone();
    worst.label = "worst_delay".into();
    let mut reports = report.per_tau.clone();
    reports.push(worst.clone());
    Ok(Artifacts {
        summary: reports.iter().map(describe).collect(),
        results: json!({ "per_tau": report.per_tau, "taus": report.taus, "worst": worst }),
        reports,
        extra: Vec::new(),
    })
}

pub fn lowerbound(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let det = detector(config)?;
    let lb = lower_bound_ratio(model, &det, &sim)?;
    Ok(Artifacts {
        summary: vec![describe(&lb.ratio)],
        results: json!({ "lower_bound": lb }),
        reports: vec![lb.ratio],
        extra: Vec::new(),
    })
}

pub fn converge(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let coarsest = config
        .experiment
        .coarsest_delta
        .ok_or_else(|| Failure::Config("converge needs `experiment.coarsest_delta` or `detector.delta`".into()))?;
    let table = convergence_study(
        model,
        config.detector.h_bar,
        config.experiment.dyadic_levels,
        coarsest,
        config.detector.regime,
        &sim,
    )?;
    let mut summary: Vec<String> = table
        .levels
        .iter()
        .chain(std::iter::once(&table.reference))
        .map(|l| format!("delta {}: mean stop {} (gap {})", l.delta, l.stop_time.estimate, l.mean_gap))
        .collect();
    summary.push(format!("monotone paths: {}/{}", table.monotone_paths, table.n_paths));
    let reports = table
        .levels
        .iter()
        .chain(std::iter::once(&table.reference))
        .map(|l| l.stop_time.clone())
        .collect();
    Ok(Artifacts {
        summary,
        results: json!({ "convergence": table }),
        extra: vec![("convergence.csv", table.csv())],
        reports,
    })
}

pub fn compare_rules(config: &ExperimentConfig, model: &ChangeModel) -> Result<Artifacts, Failure> {
    let sim = settings(config);
    let gamma = config.detector.gamma()?;
    let rules: Vec<Rule> = if config.experiment.rules.is_empty() {
        vec![config.detector.rule()?]
    } else {
        config
            .experiment
            .rules
            .iter()
            .map(|r| r.to_rule())
            .collect::<Result<_, _>>()?
    };
    let table = compare(model, gamma, &rules, config.experiment.rel_tol, &config.experiment.tau_grid, &sim)?;
    let mut csv = String::from("rule,delta,h_bar,calibrated,arl,arl_std_error,worst_delay,delay_std_error,error\n");
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for row in &table.rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let arl = row.arl.as_ref();
        let delay = row.worst_delay.as_ref();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            row.rule.name(),
            opt(row.rule.delta()),
            opt(row.log_barrier),
            row.calibrated,
            opt(arl.map(|a| a.estimate)),
            opt(arl.map(|a| a.std_error)),
            opt(delay.map(|d| d.estimate)),
            opt(delay.map(|d| d.std_error)),
            row.error.as_deref().unwrap_or("")
        );
        summary.push(match (arl, delay) {
            (Some(a), Some(d)) => format!(
                "{}: arl {} ± {}, worst delay {} ± {}",
                row.rule.name(),
                a.estimate,
                a.std_error,
                d.estimate,
                d.std_error
            ),
            _ => format!("{}: {}", row.rule.name(), row.error.as_deref().unwrap_or("not evaluated")),
        });
        if let Some(a) = arl {
            reports.push(EvalReport {
                label: format!("arl_{}", row.rule.name()),
                ..a.clone()
            });
        }
        if let Some(d) = delay {
            reports.push(EvalReport {
                label: format!("worst_delay_{}", row.rule.name()),
                ..d.clone()
            });
        }
    }
    if let Some(dominates) = table.cusum_dominates {
        summary.push(format!("cusum delay within 3 SE of every competitor: {dominates}"));
    }
    Ok(Artifacts {
        summary,
        results: json!({ "comparison": table }),
        extra: vec![("comparison.csv", csv)],
        reports,
    })
}

/// Writes `report.csv`, `summary.json` and the command's extra files.
pub fn write_artifacts(
    dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    model: &ChangeModel,
    artifacts: &Artifacts,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), reports_to_csv(&artifacts.reports))?;
    let summary = json!({
        "command": command,
        "master_seed": config.simulation.master_seed,
        "config": config,
        "model_digest": model.digest(),
        "results": artifacts.results,
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    for (name, body) in &artifacts.extra {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}
