//! Simulation of paths that switch from the pre-change to the post-change
//! law at a grid-snapped change-point.
//!
//! [`PathSampler`] produces one grid step at a time so the Monte Carlo
//! harness can stop a replication as soon as its detector fires;
//! [`sample_changed_path`] materializes a whole [`SamplePath`] from the same
//! draws.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChangeModel, Family, JumpComponent, JumpLaw, LevySpec};
use crate::numeric::exp_integral_e1;
use crate::rng::RngStream;

/// Target ceiling on the expected number of ledger jumps per unit time for
/// infinite-activity components.
pub const LEDGER_RATE_CAP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// A simulated trajectory on a uniform grid with its jump ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid_dt: f64,
    /// `X` at grid points, `values[0] = 0`.
    pub values: Vec<f64>,
    /// Jumps of the finite-activity component, or the jumps above the ledger
    /// threshold for a Gamma subordinator, in increasing time order.
    pub jumps: Vec<Jump>,
    /// Grid-snapped change-point, `None` for no change.
    pub change_point: Option<f64>,
    pub horizon: f64,
    pub families: (Family, Family),
    pub stream: RngStream,
    /// Smallest recorded jump size for infinite-activity components.
    pub ledger_threshold: Option<f64>,
}

impl SamplePath {
    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    /// The ledger entries falling in grid step `i`, i.e. in `[i·dt, (i+1)·dt)`.
    pub fn jumps_in_step(&self, i: usize) -> &[Jump] {
        let t0 = i as f64 * self.grid_dt;
        let t1 = (i + 1) as f64 * self.grid_dt;
        let start = self.jumps.partition_point(|j| j.time < t0);
        let end = self.jumps.partition_point(|j| j.time < t1);
        &self.jumps[start..end]
    }

    /// The sub-path on grid indices `[from, to]`, re-based to start at zero.
    pub fn window(&self, from: usize, to: usize) -> Result<SamplePath> {
        if from > to || to >= self.values.len() {
            return Err(Error::Domain(format!(
                "window [{from}, {to}] outside a path with {} points",
                self.values.len()
            )));
        }
        let t0 = from as f64 * self.grid_dt;
        let t1 = to as f64 * self.grid_dt;
        let start = self.jumps.partition_point(|j| j.time < t0);
        let end = self.jumps.partition_point(|j| j.time < t1);
        let x0 = self.values[from];
        Ok(SamplePath {
            grid_dt: self.grid_dt,
            values: self.values[from..=to].iter().map(|v| v - x0).collect(),
            jumps: self.jumps[start..end]
                .iter()
                .map(|j| Jump {
                    time: j.time - t0,
                    size: j.size,
                })
                .collect(),
            change_point: self.change_point.map(|c| (c - t0).max(0.0)),
            horizon: t1 - t0,
            families: self.families,
            stream: self.stream,
            ledger_threshold: self.ledger_threshold,
        })
    }

    /// Writes `t,x` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x")?;
        for (i, x) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 * self.grid_dt, x)?;
        }
        Ok(())
    }

    /// Writes `t,jump_size` rows of the ledger.
    pub fn write_ledger_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,jump_size")?;
        for j in &self.jumps {
            writeln!(out, "{},{}", j.time, j.size)?;
        }
        Ok(())
    }
}

/// Increments `X_{iδ} - X_{(i-1)δ}` on a coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSeries {
    pub delta: f64,
    pub increments: Vec<f64>,
}

/// Number of fine steps in one `delta` step; `delta` must be an integer
/// multiple of `grid_dt`.
pub fn stride_for(delta: f64, grid_dt: f64) -> Result<usize> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Validation(format!("delta must be positive, got {delta}")));
    }
    let ratio = delta / grid_dt;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Alignment(format!(
            "delta {delta} is not an integer multiple of the grid step {grid_dt}"
        )));
    }
    Ok(stride as usize)
}

/// Restricts a path to the coarse grid `δℤ`. No interpolation is ever done;
/// a trailing partial step is dropped.
pub fn restrict_to_grid(path: &SamplePath, delta: f64) -> Result<IncrementSeries> {
    let stride = stride_for(delta, path.grid_dt)?;
    let n = path.n_steps() / stride;
    let increments = (1..=n)
        .map(|i| path.values[i * stride] - path.values[(i - 1) * stride])
        .collect();
    Ok(IncrementSeries { delta, increments })
}

/// Ledger threshold for a Gamma subordinator: the smallest `ε ≥ 1e-6·θ` such
/// that `a·E1(ε/θ) ≤ LEDGER_RATE_CAP`.
pub fn gamma_ledger_threshold(activity: f64, scale: f64) -> f64 {
    let rate = |z: f64| activity * exp_integral_e1(z);
    let floor = 1e-6;
    if rate(floor) <= LEDGER_RATE_CAP {
        return floor * scale;
    }
    let (mut lo, mut hi) = (floor, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > LEDGER_RATE_CAP {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi * scale
}

#[derive(Debug, Clone)]
enum JumpSampler {
    None,
    Poisson { intensity: f64, law: JumpLaw },
    Gamma { step: Gamma<f64>, stick: f64 },
}

#[derive(Debug, Clone)]
struct Regime {
    sigma_sqrt_dt: f64,
    drift_dt: f64,
    jumps: JumpSampler,
}

impl Regime {
    fn new(spec: &LevySpec, dt: f64) -> Result<Self> {
        let jumps = match spec.jumps {
            None => JumpSampler::None,
            Some(JumpComponent::CompoundPoisson { intensity, law }) => JumpSampler::Poisson { intensity, law },
            Some(JumpComponent::Gamma { activity, scale }) => JumpSampler::Gamma {
                step: Gamma::new(activity * dt, scale)
                    .map_err(|e| Error::Validation(format!("gamma step law: {e}")))?,
                stick: 1.0 / (activity * dt),
            },
        };
        Ok(Self {
            sigma_sqrt_dt: spec.sigma * dt.sqrt(),
            drift_dt: spec.effective_drift() * dt,
            jumps,
        })
    }

    fn intensity(&self) -> Option<f64> {
        match self.jumps {
            JumpSampler::Poisson { intensity, .. } => Some(intensity),
            _ => None,
        }
    }
}

/// One grid step of a simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDraw {
    /// Increment of the continuous part (drift plus Brownian).
    pub continuous: f64,
    /// Total increment of `X` over the step.
    pub increment: f64,
}

fn positive_exp1(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let e: f64 = Exp1.sample(rng);
        if e > 0.0 {
            return e;
        }
    }
}

fn sample_jump(law: &JumpLaw, rng: &mut ChaCha8Rng) -> f64 {
    match *law {
        JumpLaw::Gaussian { mean, sd } => {
            let z: f64 = StandardNormal.sample(rng);
            mean + sd * z
        }
        JumpLaw::Exponential { rate } => positive_exp1(rng) / rate,
        JumpLaw::TwoSidedExponential {
            rate_up,
            rate_down,
            weight_up,
        } => {
            if rng.random::<f64>() < weight_up {
                positive_exp1(rng) / rate_up
            } else {
                -positive_exp1(rng) / rate_down
            }
        }
    }
}

/// Step-by-step generator of a changed path.
#[derive(Debug, Clone)]
pub struct PathSampler {
    rng: ChaCha8Rng,
    dt: f64,
    pre: Regime,
    post: Regime,
    change_step: Option<u64>,
    step: u64,
    next_event: f64,
    ledger_threshold: f64,
}

impl PathSampler {
    /// `tau = f64::INFINITY` means no change; finite values are snapped to
    /// the nearest grid point.
    pub fn new(model: &ChangeModel, tau: f64, grid_dt: f64, stream: RngStream) -> Result<Self> {
        model.ensure_admissible()?;
        if !(grid_dt > 0.0 && grid_dt.is_finite()) {
            return Err(Error::Validation(format!("grid_dt must be positive, got {grid_dt}")));
        }
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::Validation(format!("change-point must lie in [0, ∞], got {tau}")));
        }
        let change_step = tau.is_finite().then(|| (tau / grid_dt).round() as u64);
        let pre = Regime::new(&model.pre, grid_dt)?;
        let post = Regime::new(&model.post, grid_dt)?;
        let ledger_threshold = match (model.pre.jumps, model.post.jumps) {
            (Some(JumpComponent::Gamma { activity: a0, scale: s0 }), Some(JumpComponent::Gamma { activity: a1, scale: s1 })) => {
                gamma_ledger_threshold(a0, s0).max(gamma_ledger_threshold(a1, s1))
            }
            _ => 0.0,
        };
        let mut sampler = Self {
            rng: stream.rng(),
            dt: grid_dt,
            pre,
            post,
            change_step,
            step: 0,
            next_event: f64::INFINITY,
            ledger_threshold,
        };
        let first = if change_step == Some(0) { &sampler.post } else { &sampler.pre };
        if let Some(lambda) = first.intensity() {
            sampler.next_event = positive_exp1(&mut sampler.rng) / lambda;
        }
        Ok(sampler)
    }

    pub fn grid_dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn change_point(&self) -> Option<f64> {
        self.change_step.map(|k| k as f64 * self.dt)
    }

    pub fn ledger_threshold(&self) -> Option<f64> {
        (self.ledger_threshold > 0.0).then_some(self.ledger_threshold)
    }

    /// Draws the next grid step, appending its ledger jumps to `ledger`.
    pub fn next_step(&mut self, ledger: &mut Vec<Jump>) -> StepDraw {
        let i = self.step;
        let t0 = i as f64 * self.dt;
        let t1 = (i + 1) as f64 * self.dt;
        let post = self.change_step.is_some_and(|k| i >= k);
        if post && self.change_step == Some(i) && i > 0 {
            // memoryless restart of the event clock at the change-point
            if let Some(lambda) = self.post.intensity() {
                self.next_event = t0 + positive_exp1(&mut self.rng) / lambda;
            }
        }
        let regime = if post { &self.post } else { &self.pre };

        let mut continuous = regime.drift_dt;
        if regime.sigma_sqrt_dt > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            continuous += regime.sigma_sqrt_dt * z;
        }

        let mut jump_total = 0.0;
        match &regime.jumps {
            JumpSampler::None => {}
            JumpSampler::Poisson { intensity, law } => {
                while self.next_event < t1 {
                    let size = sample_jump(law, &mut self.rng);
                    ledger.push(Jump {
                        time: self.next_event,
                        size,
                    });
                    jump_total += size;
                    self.next_event += positive_exp1(&mut self.rng) / intensity;
                }
            }
            JumpSampler::Gamma { step, stick } => {
                let total = step.sample(&mut self.rng);
                jump_total = total;
                // Stick-breaking of the step total into its size-biased
                // jumps (GEM with parameter a·dt); whatever is left after
                // the remainder drops below ε consists of jumps below ε.
                let start = ledger.len();
                let mut remaining = total;
                let last_time = t1.next_down();
                let mut guard = 0u32;
                while remaining >= self.ledger_threshold && guard < 1_000_000 {
                    let u: f64 = self.rng.random();
                    let v = 1.0 - (1.0 - u).powf(*stick);
                    let w = remaining * v;
                    remaining -= w;
                    if w >= self.ledger_threshold {
                        let s: f64 = self.rng.random();
                        ledger.push(Jump {
                            time: (t0 + s * self.dt).min(last_time),
                            size: w,
                        });
                    }
                    guard += 1;
                }
                ledger[start..].sort_by(|a, b| a.time.total_cmp(&b.time));
            }
        }
        self.step += 1;
        StepDraw {
            continuous,
            increment: continuous + jump_total,
        }
    }
}

/// Simulates `X` on `[0, horizon]` with the change injected at `tau`.
pub fn sample_changed_path(
    model: &ChangeModel,
    tau: f64,
    horizon: f64,
    grid_dt: f64,
    stream: RngStream,
) -> Result<SamplePath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
    }
    if grid_dt > horizon {
        return Err(Error::Validation(format!("grid_dt {grid_dt} exceeds horizon {horizon}")));
    }
    let mut sampler = PathSampler::new(model, tau, grid_dt, stream)?;
    let n = (horizon / grid_dt + 1e-9).floor() as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut jumps = Vec::new();
    let mut x = 0.0;
    values.push(x);
    for _ in 0..n {
        x += sampler.next_step(&mut jumps).increment;
        values.push(x);
    }
    Ok(SamplePath {
        grid_dt,
        values,
        jumps,
        change_point: sampler.change_point(),
        horizon,
        families: (model.pre.family, model.post.family),
        stream,
        ledger_threshold: sampler.ledger_threshold(),
    })
}
