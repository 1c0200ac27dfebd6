//! Pre/post-change Lévy specifications and the change model built from them.
//!
//! A [`LevySpec`] is a generating triplet `(σ, b, ν)` drawn from a small
//! catalogue of parametric families whose log density ratio is a polynomial
//! of degree at most two on each half-line. [`build_change_model`] checks
//! mutual absolute continuity of the pre- and post-change laws (equal
//! volatilities, equivalent Lévy measures with a finite Hellinger-type
//! integral, and the drift identity) and precomputes every constant the
//! likelihood ratio needs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{self, normal_cdf, normal_pdf, DecadeIntegral};

/// Divergence threshold for the integrability check.
const HELLINGER_CEILING: f64 = 1e6;
const DECADES: i32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BrownianDrift,
    CompoundPoisson,
    JumpDiffusion,
    GammaSubordinator,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::BrownianDrift => "brownian_drift",
            Family::CompoundPoisson => "compound_poisson",
            Family::JumpDiffusion => "jump_diffusion",
            Family::GammaSubordinator => "gamma_subordinator",
        };
        f.write_str(s)
    }
}

/// Jump-size distribution of a compound-Poisson block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpLaw {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    /// Density `p·r⁺e^{-r⁺x}` on `x > 0` and `(1-p)·r⁻e^{r⁻x}` on `x < 0`.
    TwoSidedExponential { rate_up: f64, rate_down: f64, weight_up: f64 },
}

impl JumpLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpLaw::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            JumpLaw::Exponential { rate } => rate.is_finite() && rate > 0.0,
            JumpLaw::TwoSidedExponential {
                rate_up,
                rate_down,
                weight_up,
            } => {
                rate_up.is_finite()
                    && rate_down.is_finite()
                    && rate_up > 0.0
                    && rate_down > 0.0
                    && weight_up > 0.0
                    && weight_up < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("malformed jump law {self:?}")))
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match *self {
            JumpLaw::Gaussian { mean, sd } => normal_pdf((x - mean) / sd) / sd,
            JumpLaw::Exponential { rate } => {
                if x > 0.0 {
                    rate * (-rate * x).exp()
                } else {
                    0.0
                }
            }
            JumpLaw::TwoSidedExponential {
                rate_up,
                rate_down,
                weight_up,
            } => {
                if x > 0.0 {
                    weight_up * rate_up * (-rate_up * x).exp()
                } else if x < 0.0 {
                    (1.0 - weight_up) * rate_down * (rate_down * x).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `E[J; |J| ≤ 1]`.
    fn truncated_mean(&self) -> f64 {
        fn exp_part(r: f64) -> f64 {
            (1.0 - (-r).exp() * (1.0 + r)) / r
        }
        match *self {
            JumpLaw::Gaussian { mean, sd } => {
                let a = (-1.0 - mean) / sd;
                let b = (1.0 - mean) / sd;
                mean * (normal_cdf(b) - normal_cdf(a)) + sd * (normal_pdf(a) - normal_pdf(b))
            }
            JumpLaw::Exponential { rate } => exp_part(rate),
            JumpLaw::TwoSidedExponential {
                rate_up,
                rate_down,
                weight_up,
            } => weight_up * exp_part(rate_up) - (1.0 - weight_up) * exp_part(rate_down),
        }
    }

    fn support(&self) -> Support {
        match self {
            JumpLaw::Gaussian { .. } => Support::Real,
            JumpLaw::Exponential { .. } => Support::Positive,
            JumpLaw::TwoSidedExponential { .. } => Support::NonZero,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            JumpLaw::Gaussian { .. } => "gaussian",
            JumpLaw::Exponential { .. } => "exponential",
            JumpLaw::TwoSidedExponential { .. } => "two_sided_exponential",
        }
    }
}

/// Jump part of a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JumpComponent {
    CompoundPoisson { intensity: f64, law: JumpLaw },
    /// Lévy density `a·e^{-x/θ}/x` on `x > 0`.
    Gamma { activity: f64, scale: f64 },
}

/// Generating triplet `(σ, b, ν)` with the truncation function `1{|x| ≤ 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LevySpecDef", into = "LevySpecDef")]
pub struct LevySpec {
    pub family: Family,
    pub sigma: f64,
    pub drift_b: f64,
    pub jumps: Option<JumpComponent>,
}

impl LevySpec {
    pub fn brownian(sigma: f64, drift_b: f64) -> Self {
        Self {
            family: Family::BrownianDrift,
            sigma,
            drift_b,
            jumps: None,
        }
    }

    /// Compound Poisson with truncation drift `drift_b`.
    pub fn compound_poisson(intensity: f64, law: JumpLaw, drift_b: f64) -> Self {
        Self {
            family: Family::CompoundPoisson,
            sigma: 0.0,
            drift_b,
            jumps: Some(JumpComponent::CompoundPoisson { intensity, law }),
        }
    }

    /// Compound Poisson whose paths have no linear drift between jumps.
    pub fn pure_compound_poisson(intensity: f64, law: JumpLaw) -> Self {
        let drift_b = intensity * law.truncated_mean();
        Self::compound_poisson(intensity, law, drift_b)
    }

    pub fn jump_diffusion(sigma: f64, drift_b: f64, intensity: f64, law: JumpLaw) -> Self {
        Self {
            family: Family::JumpDiffusion,
            sigma,
            drift_b,
            jumps: Some(JumpComponent::CompoundPoisson { intensity, law }),
        }
    }

    /// Pure Gamma subordinator (no linear drift): `b = ∫_0^1 x ν(dx)`.
    pub fn gamma(activity: f64, scale: f64) -> Self {
        let drift_b = activity * scale * (1.0 - (-1.0 / scale).exp());
        Self {
            family: Family::GammaSubordinator,
            sigma: 0.0,
            drift_b,
            jumps: Some(JumpComponent::Gamma { activity, scale }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Validation(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !self.drift_b.is_finite() {
            return Err(Error::Validation("drift must be finite".into()));
        }
        if let Some(JumpComponent::CompoundPoisson { intensity, law }) = self.jumps {
            if !(intensity.is_finite() && intensity > 0.0) {
                return Err(Error::Validation(format!(
                    "jump intensity must be positive, got {intensity}"
                )));
            }
            law.validate()?;
        }
        if let Some(JumpComponent::Gamma { activity, scale }) = self.jumps {
            if !(activity.is_finite() && activity > 0.0 && scale.is_finite() && scale > 0.0) {
                return Err(Error::Validation(format!(
                    "gamma activity and scale must be positive, got a={activity}, θ={scale}"
                )));
            }
        }
        let shape_ok = match (self.family, self.jumps) {
            (Family::BrownianDrift, None) => self.sigma > 0.0,
            (Family::CompoundPoisson, Some(JumpComponent::CompoundPoisson { .. })) => self.sigma == 0.0,
            (Family::JumpDiffusion, Some(JumpComponent::CompoundPoisson { .. })) => self.sigma > 0.0,
            (Family::GammaSubordinator, Some(JumpComponent::Gamma { .. })) => self.sigma == 0.0,
            _ => false,
        };
        if !shape_ok {
            return Err(Error::Validation(format!(
                "family {} does not match sigma={} and jump block {:?}",
                self.family, self.sigma, self.jumps
            )));
        }
        Ok(())
    }

    /// `∫_{|x|≤1} x ν(dx)`.
    pub fn truncated_first_moment(&self) -> f64 {
        match self.jumps {
            None => 0.0,
            Some(JumpComponent::CompoundPoisson { intensity, law }) => intensity * law.truncated_mean(),
            Some(JumpComponent::Gamma { activity, scale }) => activity * scale * (1.0 - (-1.0 / scale).exp()),
        }
    }

    /// Linear drift of the path between jumps, `b - ∫_{|x|≤1} x ν(dx)`.
    pub fn effective_drift(&self) -> f64 {
        self.drift_b - self.truncated_first_moment()
    }

    /// Lévy density at `x` (zero outside the support).
    pub fn levy_density(&self, x: f64) -> f64 {
        match self.jumps {
            None => 0.0,
            Some(JumpComponent::CompoundPoisson { intensity, law }) => intensity * law.density(x),
            Some(JumpComponent::Gamma { activity, scale }) => {
                if x > 0.0 {
                    activity * (-x / scale).exp() / x
                } else {
                    0.0
                }
            }
        }
    }

    fn support(&self) -> Option<Support> {
        match self.jumps {
            None => None,
            Some(JumpComponent::CompoundPoisson { law, .. }) => Some(law.support()),
            Some(JumpComponent::Gamma { .. }) => Some(Support::Positive),
        }
    }
}

/// Flat serialization form of [`LevySpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySpecDef {
    pub family: Family,
    #[serde(default)]
    pub sigma: f64,
    /// Truncation-convention drift; defaults to a path without linear drift
    /// for pure-jump families and to zero otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_law: Option<JumpLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl TryFrom<LevySpecDef> for LevySpec {
    type Error = Error;

    fn try_from(d: LevySpecDef) -> Result<Self> {
        let missing = |what: &str| Error::Validation(format!("{} requires `{what}`", d.family));
        let spec = match d.family {
            Family::BrownianDrift => LevySpec::brownian(d.sigma, d.drift.unwrap_or(0.0)),
            Family::CompoundPoisson => {
                let intensity = d.intensity.ok_or_else(|| missing("intensity"))?;
                let law = d.jump_law.ok_or_else(|| missing("jump_law"))?;
                let mut s = LevySpec::pure_compound_poisson(intensity, law);
                s.sigma = d.sigma;
                if let Some(b) = d.drift {
                    s.drift_b = b;
                }
                s
            }
            Family::JumpDiffusion => LevySpec::jump_diffusion(
                d.sigma,
                d.drift.unwrap_or(0.0),
                d.intensity.ok_or_else(|| missing("intensity"))?,
                d.jump_law.ok_or_else(|| missing("jump_law"))?,
            ),
            Family::GammaSubordinator => {
                let mut s = LevySpec::gamma(
                    d.activity.ok_or_else(|| missing("activity"))?,
                    d.scale.ok_or_else(|| missing("scale"))?,
                );
                s.sigma = d.sigma;
                if let Some(b) = d.drift {
                    s.drift_b = b;
                }
                s
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<LevySpec> for LevySpecDef {
    fn from(s: LevySpec) -> Self {
        let mut d = LevySpecDef {
            family: s.family,
            sigma: s.sigma,
            drift: Some(s.drift_b),
            intensity: None,
            jump_law: None,
            activity: None,
            scale: None,
        };
        match s.jumps {
            Some(JumpComponent::CompoundPoisson { intensity, law }) => {
                d.intensity = Some(intensity);
                d.jump_law = Some(law);
            }
            Some(JumpComponent::Gamma { activity, scale }) => {
                d.activity = Some(activity);
                d.scale = Some(scale);
            }
            None => {}
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Real,
    Positive,
    NonZero,
}

/// `c0 + c1·x + c2·x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poly2 {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Poly2 {
    fn affine(c0: f64, c1: f64) -> Self {
        Self { c0, c1, c2: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + x * (self.c1 + x * self.c2)
    }
}

/// Closed form of `φ = log dν¹/dν⁰`, one polynomial per half-line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRatio {
    pub support: Support,
    pub positive: Poly2,
    pub negative: Poly2,
}

impl DensityRatio {
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("φ evaluated at non-finite point {x}")));
        }
        match self.support {
            Support::Real => Ok(self.positive.eval(x)),
            Support::Positive if x > 0.0 => Ok(self.positive.eval(x)),
            Support::NonZero if x > 0.0 => Ok(self.positive.eval(x)),
            Support::NonZero if x < 0.0 => Ok(self.negative.eval(x)),
            _ => Err(Error::Domain(format!("{x} is outside the jump support {:?}", self.support))),
        }
    }

    /// `e^{φ(x)}`, the Radon-Nikodym derivative `dν¹/dν⁰`.
    pub fn ratio(&self, x: f64) -> Result<f64> {
        self.eval(x).map(f64::exp)
    }

    /// The constant value of φ when it does not depend on `x`.
    pub fn constant_value(&self) -> Option<f64> {
        let flat = |p: &Poly2| p.c1 == 0.0 && p.c2 == 0.0;
        match self.support {
            Support::Real | Support::Positive => flat(&self.positive).then_some(self.positive.c0),
            Support::NonZero => (flat(&self.positive)
                && flat(&self.negative)
                && self.positive.c0 == self.negative.c0)
                .then_some(self.positive.c0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Equal Brownian volatilities.
    #[serde(rename = "i")]
    EqualVolatility,
    /// Equivalent Lévy measures with a finite Hellinger-type integral.
    #[serde(rename = "ii")]
    EquivalentLevyMeasures,
    /// Drift identity with `α = 0` when `σ = 0`.
    #[serde(rename = "iii")]
    DriftIdentity,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::EqualVolatility => f.write_str("condition (i)"),
            Condition::EquivalentLevyMeasures => f.write_str("condition (ii)"),
            Condition::DriftIdentity => f.write_str("condition (iii)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: {}", self.condition, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Admissibility {
    Admissible,
    Rejected(Violation),
}

/// Jump-related constants of an admissible change with a jump component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpConstants {
    pub phi: DensityRatio,
    /// `∫(e^φ - 1) ν⁰(dx)`, the compensator rate of the jump sum in U.
    pub compensator: f64,
    /// Drift of the jump part of U under the pre-change law.
    pub beta_pre: f64,
    /// Drift of the jump part of U under the post-change law.
    pub beta_post: f64,
    /// `∫(e^{φ/2} - 1)² ν⁰(dx)`.
    pub hellinger: f64,
}

/// Pre/post-change pair with the derived likelihood constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeModel {
    pub pre: LevySpec,
    pub post: LevySpec,
    pub alpha: f64,
    pub jump: Option<JumpConstants>,
    pub admissibility: Admissibility,
}

impl ChangeModel {
    pub fn is_admissible(&self) -> bool {
        matches!(self.admissibility, Admissibility::Admissible)
    }

    pub fn ensure_admissible(&self) -> Result<()> {
        match &self.admissibility {
            Admissibility::Admissible => Ok(()),
            Admissibility::Rejected(v) => Err(Error::Inadmissible(v.to_string())),
        }
    }

    pub fn phi(&self) -> Option<&DensityRatio> {
        self.jump.as_ref().map(|j| &j.phi)
    }

    pub fn beta_pre(&self) -> Option<f64> {
        self.jump.map(|j| j.beta_pre)
    }

    pub fn beta_post(&self) -> Option<f64> {
        self.jump.map(|j| j.beta_post)
    }

    /// Drift rate of U: pre-change when `post == false`, post-change otherwise.
    pub fn u_drift(&self, post: bool) -> f64 {
        let diffusion = 0.5 * self.alpha * self.alpha * self.pre.sigma * self.pre.sigma;
        match (post, self.jump) {
            (false, j) => -diffusion + j.map_or(0.0, |j| j.beta_pre),
            (true, j) => diffusion + j.map_or(0.0, |j| j.beta_post),
        }
    }

    /// Short stable fingerprint of the pre/post specification.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&(&self.pre, &self.post)).expect("specs serialize");
        let hash = Sha256::digest(&json);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn pairable(a: Family, b: Family) -> bool {
    use Family::*;
    a == b || matches!((a, b), (BrownianDrift, JumpDiffusion) | (JumpDiffusion, BrownianDrift))
}

fn rejected(pre: LevySpec, post: LevySpec, condition: Condition, reason: String) -> ChangeModel {
    ChangeModel {
        pre,
        post,
        alpha: 0.0,
        jump: None,
        admissibility: Admissibility::Rejected(Violation { condition, reason }),
    }
}

/// Builds the change model for a pre/post-change pair and checks
/// admissibility.
///
/// Malformed specs and pairs without a common parametric density ratio are
/// errors; a well-formed pair that fails one of the absolute-continuity
/// conditions is returned with [`Admissibility::Rejected`].
pub fn build_change_model(pre: LevySpec, post: LevySpec) -> Result<ChangeModel> {
    pre.validate()?;
    post.validate()?;
    if !pairable(pre.family, post.family) {
        return Err(Error::UnsupportedPair(format!("{} vs {}", pre.family, post.family)));
    }

    if (pre.sigma - post.sigma).abs() > 1e-12 * pre.sigma.max(post.sigma) {
        return Ok(rejected(
            pre,
            post,
            Condition::EqualVolatility,
            format!("Brownian volatilities differ ({} vs {})", pre.sigma, post.sigma),
        ));
    }

    let phi = match (pre.jumps, post.jumps) {
        (None, None) => None,
        (Some(_), None) | (None, Some(_)) => {
            return Ok(rejected(
                pre,
                post,
                Condition::EquivalentLevyMeasures,
                "one Lévy measure is zero and the other is not".into(),
            ))
        }
        (Some(a), Some(b)) => Some(density_ratio(a, b)?),
    };

    let jump = match phi {
        None => None,
        Some(phi) => {
            let hellinger = match hellinger_integral(&pre, &phi)? {
                DecadeIntegral::Converged(q) => q.value,
                DecadeIntegral::Divergent { partial } => {
                    return Ok(rejected(
                        pre,
                        post,
                        Condition::EquivalentLevyMeasures,
                        format!(
                            "integrability ∫(e^{{φ/2}}-1)² ν⁰(dx) < ∞ fails (partial integral {partial:.4e} does not stabilize)"
                        ),
                    ))
                }
            };
            let (compensator, beta_pre, beta_post) = jump_closed_forms(&pre, &post, &phi);
            Some(JumpConstants {
                phi,
                compensator,
                beta_pre,
                beta_post,
                hellinger,
            })
        }
    };

    let residual = post.drift_b - pre.drift_b - (post.truncated_first_moment() - pre.truncated_first_moment());
    let alpha = if pre.sigma > 0.0 {
        residual / (pre.sigma * pre.sigma)
    } else {
        let scale = 1.0 + pre.drift_b.abs() + post.drift_b.abs();
        if residual.abs() > 1e-10 * scale {
            return Ok(rejected(
                pre,
                post,
                Condition::DriftIdentity,
                format!("σ = 0 forces α = 0 but the drift identity leaves residual {residual:.6e}"),
            ));
        }
        0.0
    };

    Ok(ChangeModel {
        pre,
        post,
        alpha,
        jump,
        admissibility: Admissibility::Admissible,
    })
}

fn density_ratio(pre: JumpComponent, post: JumpComponent) -> Result<DensityRatio> {
    use JumpComponent::*;
    match (pre, post) {
        (
            CompoundPoisson {
                intensity: l0,
                law: law0,
            },
            CompoundPoisson {
                intensity: l1,
                law: law1,
            },
        ) => {
            let lr = (l1 / l0).ln();
            match (law0, law1) {
                (JumpLaw::Gaussian { mean: m0, sd: s0 }, JumpLaw::Gaussian { mean: m1, sd: s1 }) => {
                    let (v0, v1) = (s0 * s0, s1 * s1);
                    let p = Poly2 {
                        c0: lr + (s0 / s1).ln() - m1 * m1 / (2.0 * v1) + m0 * m0 / (2.0 * v0),
                        c1: m1 / v1 - m0 / v0,
                        c2: 1.0 / (2.0 * v0) - 1.0 / (2.0 * v1),
                    };
                    Ok(DensityRatio {
                        support: Support::Real,
                        positive: p,
                        negative: p,
                    })
                }
                (JumpLaw::Exponential { rate: r0 }, JumpLaw::Exponential { rate: r1 }) => {
                    let p = Poly2::affine(lr + (r1 / r0).ln(), r0 - r1);
                    Ok(DensityRatio {
                        support: Support::Positive,
                        positive: p,
                        negative: p,
                    })
                }
                (
                    JumpLaw::TwoSidedExponential {
                        rate_up: u0,
                        rate_down: d0,
                        weight_up: p0,
                    },
                    JumpLaw::TwoSidedExponential {
                        rate_up: u1,
                        rate_down: d1,
                        weight_up: p1,
                    },
                ) => Ok(DensityRatio {
                    support: Support::NonZero,
                    positive: Poly2::affine(lr + (p1 * u1 / (p0 * u0)).ln(), u0 - u1),
                    negative: Poly2::affine(lr + ((1.0 - p1) * d1 / ((1.0 - p0) * d0)).ln(), d1 - d0),
                }),
                (a, b) => Err(Error::UnsupportedPair(format!(
                    "jump laws {} and {} have different supports",
                    a.kind(),
                    b.kind()
                ))),
            }
        }
        (
            Gamma {
                activity: a0,
                scale: t0,
            },
            Gamma {
                activity: a1,
                scale: t1,
            },
        ) => {
            let p = Poly2::affine((a1 / a0).ln(), 1.0 / t0 - 1.0 / t1);
            Ok(DensityRatio {
                support: Support::Positive,
                positive: p,
                negative: p,
            })
        }
        _ => Err(Error::UnsupportedPair(
            "compound-Poisson and Gamma jump components cannot be paired".into(),
        )),
    }
}

/// Integrates `g(x, φ(x)) ν⁰(dx)` over the support with decade panels.
fn integrate_against_pre<G>(pre: &LevySpec, phi: &DensityRatio, g: G) -> Result<DecadeIntegral>
where
    G: Fn(f64) -> f64,
{
    let support = pre.support().expect("jump component present");
    let integrand = |x: f64| {
        let d = pre.levy_density(x);
        if d == 0.0 {
            0.0
        } else {
            g(phi.eval(x).expect("inside support")) * d
        }
    };
    let pos = numeric::integrate_decades(integrand, DECADES, HELLINGER_CEILING)?;
    if support == Support::Positive {
        return Ok(pos);
    }
    let neg = numeric::integrate_decades(|x| integrand(-x), DECADES, HELLINGER_CEILING)?;
    Ok(match (pos, neg) {
        (DecadeIntegral::Converged(a), DecadeIntegral::Converged(b)) => DecadeIntegral::Converged(numeric::Quadrature {
            value: a.value + b.value,
            error: a.error + b.error,
        }),
        (DecadeIntegral::Divergent { partial }, _) | (_, DecadeIntegral::Divergent { partial }) => {
            DecadeIntegral::Divergent { partial }
        }
    })
}

fn hellinger_integral(pre: &LevySpec, phi: &DensityRatio) -> Result<DecadeIntegral> {
    integrate_against_pre(pre, phi, |p| {
        let e = (0.5 * p).exp_m1();
        e * e
    })
}

/// Closed forms `(∫(e^φ-1)ν⁰, β⁰, β¹)`.
fn jump_closed_forms(pre: &LevySpec, post: &LevySpec, phi: &DensityRatio) -> (f64, f64, f64) {
    match (pre.jumps, post.jumps) {
        (
            Some(JumpComponent::CompoundPoisson { intensity: l0, law: law0 }),
            Some(JumpComponent::CompoundPoisson { intensity: l1, law: law1 }),
        ) => {
            let compensator = l1 - l0;
            let e0 = expected_phi(phi, &law0);
            let e1 = expected_phi(phi, &law1);
            (compensator, l0 * e0 - compensator, l1 * e1 - compensator)
        }
        (
            Some(JumpComponent::Gamma { activity, scale: t0 }),
            Some(JumpComponent::Gamma { scale: t1, .. }),
        ) => {
            // Frullani: ∫(e^{-x/θ¹} - e^{-x/θ⁰}) a/x dx = a·log(θ¹/θ⁰)
            let compensator = activity * (t1 / t0).ln();
            let c1 = phi.positive.c1;
            let beta_pre = c1 * activity * t0 - compensator;
            let beta_post = beta_pre + c1 * activity * (t1 - t0);
            (compensator, beta_pre, beta_post)
        }
        _ => unreachable!("density_ratio rejects mixed pairs"),
    }
}

/// `E[φ(J)]` for a jump `J` drawn from `law`.
fn expected_phi(phi: &DensityRatio, law: &JumpLaw) -> f64 {
    match *law {
        JumpLaw::Gaussian { mean, sd } => {
            let p = phi.positive;
            p.c0 + p.c1 * mean + p.c2 * (mean * mean + sd * sd)
        }
        JumpLaw::Exponential { rate } => {
            let p = phi.positive;
            p.c0 + p.c1 / rate + p.c2 * 2.0 / (rate * rate)
        }
        JumpLaw::TwoSidedExponential {
            rate_up,
            rate_down,
            weight_up,
        } => {
            let (p, n) = (phi.positive, phi.negative);
            weight_up * (p.c0 + p.c1 / rate_up + p.c2 * 2.0 / (rate_up * rate_up))
                + (1.0 - weight_up) * (n.c0 - n.c1 / rate_down + n.c2 * 2.0 / (rate_down * rate_down))
        }
    }
}

/// Evaluates `φ(x) = log dν¹/dν⁰(x)`.
pub fn phi_eval(model: &ChangeModel, x: f64) -> Result<f64> {
    model.ensure_admissible()?;
    let phi = model
        .phi()
        .ok_or_else(|| Error::Contract("model has no jump component, φ is undefined".into()))?;
    phi.eval(x)
}

/// The drift constants `(β⁰, β¹)` of the jump part of U.
pub fn drift_constants(model: &ChangeModel) -> Result<(f64, f64)> {
    model.ensure_admissible()?;
    model
        .jump
        .map(|j| (j.beta_pre, j.beta_post))
        .ok_or_else(|| Error::Contract("drift constants need a jump component".into()))
}

/// Quadrature route for the jump constants, independent of the closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConstants {
    pub compensator: f64,
    pub beta_pre: f64,
    pub beta_post: f64,
    pub hellinger: f64,
    /// Sum of the quadrature error estimates.
    pub residual: f64,
}

pub fn jump_constants_by_quadrature(model: &ChangeModel) -> Result<QuadratureConstants> {
    model.ensure_admissible()?;
    let phi = *model
        .phi()
        .ok_or_else(|| Error::Contract("model has no jump component".into()))?;
    let converged = |d: DecadeIntegral, what: &str| match d {
        DecadeIntegral::Converged(q) => Ok(q),
        DecadeIntegral::Divergent { partial } => Err(Error::Numerical {
            message: format!("{what} integral did not converge"),
            residual: partial,
        }),
    };
    let comp = converged(integrate_against_pre(&model.pre, &phi, f64::exp_m1)?, "compensator")?;
    let kl = converged(
        integrate_against_pre(&model.pre, &phi, |p| p.exp_m1() - p)?,
        "β⁰",
    )?;
    let gain = converged(
        integrate_against_pre(&model.pre, &phi, |p| p * p.exp_m1())?,
        "β¹ increment",
    )?;
    let hel = converged(hellinger_integral(&model.pre, &phi)?, "Hellinger")?;
    Ok(QuadratureConstants {
        compensator: comp.value,
        beta_pre: -kl.value,
        beta_post: -kl.value + gain.value,
        hellinger: hel.value,
        residual: comp.error + kl.error + gain.error + hel.error,
    })
}

/// `∫_{|x|≤1} x ν(dx)` by quadrature, used to cross-check the drift identity.
pub fn truncated_first_moment_by_quadrature(spec: &LevySpec) -> Result<f64> {
    let pos = numeric::integrate(|x| x * spec.levy_density(x), 0.0, 1.0, 1e-15, 1e-13)?;
    let neg = numeric::integrate(|x| x * spec.levy_density(x), -1.0, 0.0, 1e-15, 1e-13)?;
    Ok(pos.value + neg.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mean: f64, sd: f64) -> JumpLaw {
        JumpLaw::Gaussian { mean, sd }
    }

    #[test]
    fn brownian_drift_change_gives_alpha_one() {
        let m = build_change_model(LevySpec::brownian(1.0, 0.0), LevySpec::brownian(1.0, 1.0)).unwrap();
        assert!(m.is_admissible());
        assert_eq!(m.alpha, 1.0);
        assert!(m.phi().is_none());
        assert!((m.u_drift(false) + 0.5).abs() < 1e-15);
        assert!((m.u_drift(true) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn volatility_mismatch_is_condition_i() {
        let m = build_change_model(LevySpec::brownian(1.0, 0.0), LevySpec::brownian(2.0, 0.0)).unwrap();
        match &m.admissibility {
            Admissibility::Rejected(v) => assert_eq!(v.condition, Condition::EqualVolatility),
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.ensure_admissible().unwrap_err().to_string().contains("condition (i)"));
    }

    #[test]
    fn gamma_activity_change_diverges() {
        // φ ≡ log 2, so the integrand behaves like (√2-1)²·a/x near zero.
        let near_zero = |x: f64| {
            let e = (0.5 * 2f64.ln()).exp_m1();
            e * e * (-x).exp() / x * x
        };
        assert!((near_zero(1e-12) - (2f64.sqrt() - 1.0).powi(2)).abs() < 1e-9);

        let m = build_change_model(LevySpec::gamma(1.0, 1.0), LevySpec::gamma(2.0, 1.0)).unwrap();
        match &m.admissibility {
            Admissibility::Rejected(v) => {
                assert_eq!(v.condition, Condition::EquivalentLevyMeasures);
                assert!(v.reason.contains("integrability"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let swapped = build_change_model(LevySpec::gamma(2.0, 1.0), LevySpec::gamma(1.0, 1.0)).unwrap();
        assert!(!swapped.is_admissible());
    }

    #[test]
    fn malformed_specs_are_validation_errors() {
        let bad = LevySpec::compound_poisson(-1.0, gauss(0.0, 1.0), 0.0);
        assert!(matches!(
            build_change_model(bad, bad),
            Err(Error::Validation(_))
        ));
        let neg_sigma = LevySpec::brownian(-1.0, 0.0);
        assert!(matches!(
            build_change_model(neg_sigma, LevySpec::brownian(1.0, 0.0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn mismatched_supports_are_unsupported() {
        let a = LevySpec::pure_compound_poisson(1.0, JumpLaw::Exponential { rate: 1.0 });
        let b = LevySpec::pure_compound_poisson(
            1.0,
            JumpLaw::TwoSidedExponential {
                rate_up: 1.0,
                rate_down: 1.0,
                weight_up: 0.5,
            },
        );
        assert!(matches!(build_change_model(a, b), Err(Error::UnsupportedPair(_))));
        assert!(matches!(build_change_model(b, a), Err(Error::UnsupportedPair(_))));
        assert!(matches!(
            build_change_model(a, LevySpec::gamma(1.0, 1.0)),
            Err(Error::UnsupportedPair(_))
        ));
    }

    #[test]
    fn brownian_versus_jump_diffusion_is_condition_ii() {
        let m = build_change_model(
            LevySpec::brownian(1.0, 0.0),
            LevySpec::jump_diffusion(1.0, 0.0, 1.0, gauss(0.0, 1.0)),
        )
        .unwrap();
        match &m.admissibility {
            Admissibility::Rejected(v) => assert_eq!(v.condition, Condition::EquivalentLevyMeasures),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn drift_identity_enforced_without_diffusion() {
        let law = gauss(0.0, 1.0);
        let pre = LevySpec::compound_poisson(1.0, law, 0.0);
        let post = LevySpec::compound_poisson(1.0, law, 0.3);
        let m = build_change_model(pre, post).unwrap();
        match &m.admissibility {
            Admissibility::Rejected(v) => assert_eq!(v.condition, Condition::DriftIdentity),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn phi_examples() {
        let m = build_change_model(
            LevySpec::pure_compound_poisson(1.0, gauss(0.0, 1.0)),
            LevySpec::pure_compound_poisson(1.0, gauss(1.0, 1.0)),
        )
        .unwrap();
        assert!(m.is_admissible());
        assert_eq!(phi_eval(&m, 0.5).unwrap(), 0.0);

        let law = gauss(0.0, 1.0);
        let m = build_change_model(
            LevySpec::pure_compound_poisson(1.0, law),
            LevySpec::pure_compound_poisson(2.0, law),
        )
        .unwrap();
        for x in [-3.0, 0.0, 0.7, 10.0] {
            assert!((phi_eval(&m, x).unwrap() - 2f64.ln()).abs() < 1e-15);
        }

        let g = build_change_model(LevySpec::gamma(1.0, 1.0), LevySpec::gamma(1.0, 2.0)).unwrap();
        assert!((phi_eval(&g, 3.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(phi_eval(&g, -1.0), Err(Error::Domain(_))));

        let b = build_change_model(LevySpec::brownian(1.0, 0.0), LevySpec::brownian(1.0, 1.0)).unwrap();
        assert!(matches!(phi_eval(&b, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn intensity_only_drift_term() {
        let law = JumpLaw::Exponential { rate: 1.0 };
        let m = build_change_model(
            LevySpec::pure_compound_poisson(1.0, law),
            LevySpec::pure_compound_poisson(2.0, law),
        )
        .unwrap();
        let j = m.jump.unwrap();
        assert_eq!(-j.compensator, -1.0);
        // β⁰ = λ⁰ log 2 - 1, β¹ = λ¹ log 2 - 1
        assert!((j.beta_pre - (2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((j.beta_post - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gamma_scale_change_frullani_matches_quadrature() {
        let m = build_change_model(LevySpec::gamma(1.0, 1.0), LevySpec::gamma(1.0, 2.0)).unwrap();
        assert!(m.is_admissible());
        assert_eq!(m.alpha, 0.0);
        let j = m.jump.unwrap();
        assert!((j.compensator - 2f64.ln()).abs() < 1e-15);
        let q = jump_constants_by_quadrature(&m).unwrap();
        assert!((q.compensator - j.compensator).abs() < 1e-8, "{q:?}");
        assert!((q.beta_pre - j.beta_pre).abs() < 1e-8);
        assert!((q.beta_post - j.beta_post).abs() < 1e-8);
        assert!(j.beta_pre < 0.0 && j.beta_post > 0.0);
    }

    #[test]
    fn serde_round_trip_preserves_spec() {
        let spec = LevySpec::jump_diffusion(
            0.8,
            0.1,
            1.5,
            JumpLaw::TwoSidedExponential {
                rate_up: 2.0,
                rate_down: 3.0,
                weight_up: 0.4,
            },
        );
        let json = serde_json::to_string(&spec).unwrap();
        let back: LevySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        let bad = r#"{"family":"compound_poisson","intensity":0.0,"jump_law":{"kind":"exponential","rate":1.0}}"#;
        assert!(serde_json::from_str::<LevySpec>(bad).is_err());
    }
}
