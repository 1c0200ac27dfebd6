//! Experiment configuration files.
//!
//! One file describes one experiment. Every field except the model block has
//! a default; [`ExperimentConfig::resolve`] fills in the command-dependent
//! ones so that the configuration embedded in the artifacts is complete.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use levy_cusum::eval::Regime;
use levy_cusum::model::LevySpecDef;
use levy_cusum::{build_change_model, ChangeModel, Error, LevySpec, Result, Rule};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub detector: DetectorBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub pre: LevySpecDef,
    pub post: LevySpecDef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    /// Censoring horizon; defaults to 20·gamma when a target is set, else 1000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_grid_dt")]
    pub grid_dt: f64,
    #[serde(default = "default_n_rep")]
    pub n_rep: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            horizon: None,
            grid_dt: default_grid_dt(),
            n_rep: default_n_rep(),
            master_seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    CusumContinuous,
    CusumGrid,
    ShiryaevRoberts,
    FixedTime,
}

/// A stopping rule as written in a config file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
}

impl RuleSpec {
    pub fn to_rule(self) -> Result<Rule> {
        let delta = || {
            self.delta
                .ok_or_else(|| Error::Validation(format!("rule {:?} needs `delta`", self.rule)))
        };
        Ok(match self.rule {
            RuleKind::CusumContinuous => Rule::CusumContinuous,
            RuleKind::CusumGrid => Rule::CusumGrid { delta: delta()? },
            RuleKind::ShiryaevRoberts => Rule::ShiryaevRoberts { delta: delta()? },
            RuleKind::FixedTime => Rule::FixedTime {
                delta: delta()?,
                steps: self
                    .steps
                    .ok_or_else(|| Error::Validation("rule fixed_time needs `steps`".into()))?,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    #[serde(default = "default_rule_kind")]
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    /// `h̄ = log h`.
    #[serde(default = "default_h_bar")]
    pub h_bar: f64,
    /// False-alarm budget for `calibrate` and `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    /// Change-point for `simulate`; absent means no change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Default for DetectorBlock {
    fn default() -> Self {
        Self {
            rule: default_rule_kind(),
            delta: None,
            steps: None,
            h_bar: default_h_bar(),
            gamma: None,
            regime: default_regime(),
            tau: None,
        }
    }
}

impl DetectorBlock {
    pub fn rule(&self) -> Result<Rule> {
        RuleSpec {
            rule: self.rule,
            delta: self.delta,
            steps: self.steps,
        }
        .to_rule()
    }

    pub fn gamma(&self) -> Result<f64> {
        self.gamma
            .ok_or_else(|| Error::Validation("this command needs `detector.gamma`".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default = "default_levels")]
    pub dyadic_levels: usize,
    /// Coarsest interval of the dyadic chain; defaults to the detector delta.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarsest_delta: Option<f64>,
    /// Rules for `compare`; defaults to the detector rule alone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleSpec>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            tau_grid: default_tau_grid(),
            dyadic_levels: default_levels(),
            coarsest_delta: None,
            rules: Vec::new(),
            rel_tol: default_rel_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also write the path, jump ledger and U of the first replication.
    #[serde(default)]
    pub dump_paths: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            dump_paths: false,
        }
    }
}

fn default_grid_dt() -> f64 {
    0.01
}
fn default_n_rep() -> usize {
    1000
}
fn default_seed() -> u64 {
    1
}
fn default_rule_kind() -> RuleKind {
    RuleKind::CusumGrid
}
fn default_h_bar() -> f64 {
    2.0
}
fn default_regime() -> Regime {
    Regime::InControl
}
fn default_tau_grid() -> Vec<f64> {
    vec![0.0, 1.0, 5.0]
}
fn default_levels() -> usize {
    4
}
fn default_rel_tol() -> f64 {
    0.02
}
fn default_dir() -> PathBuf {
    PathBuf::from("levy-cusum-out")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Fills in defaults that depend on other fields.
    pub fn resolve(&mut self) {
        if self.simulation.horizon.is_none() {
            self.simulation.horizon = Some(self.detector.gamma.map_or(1000.0, |g| 20.0 * g));
        }
        if self.detector.delta.is_none() && self.detector.rule != RuleKind::CusumContinuous {
            self.detector.delta = Some(0.1);
        }
        if self.experiment.coarsest_delta.is_none() {
            self.experiment.coarsest_delta = self.detector.delta;
        }
    }

    pub fn change_model(&self) -> Result<ChangeModel> {
        let pre = LevySpec::try_from(self.model.pre.clone())?;
        let post = LevySpec::try_from(self.model.post.clone())?;
        build_change_model(pre, post)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
