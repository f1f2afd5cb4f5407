//! Latency, age of information and value-of-information metrics.
//!
//! `semantic_voi` needs the true process value and is therefore only
//! available inside the simulator. `expected_voi` is what a receiver can
//! compute before pulling a sample. `pragmatic_voi` scores an update by the
//! change in control cost it causes rather than by estimation error.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processes::{loss, Belief, Estimator, History, ProcessModel, UpdateRecord, Value};
use crate::simkernel::{RngStream, SimTime, Timebase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Latency,
    Aoi,
    VoiSemantic,
    VoiPull,
    VoiPragmatic,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Latency => "latency",
            MetricKind::Aoi => "aoi",
            MetricKind::VoiSemantic => "voi_semantic",
            MetricKind::VoiPull => "voi_pull",
            MetricKind::VoiPragmatic => "voi_pragmatic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t: SimTime,
    pub kind: MetricKind,
    pub value: f64,
    pub sensor_id: usize,
}

/// Renders samples as `t_seconds,kind,sensor_id,value` rows.
pub fn metrics_csv(samples: &[MetricSample], tb: &Timebase) -> String {
    let mut out = String::from("t_seconds,kind,sensor_id,value\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            tb.seconds_of(s.t),
            s.kind.as_str(),
            s.sensor_id,
            s.value
        );
    }
    out
}

/// Transit time `r - g` in seconds.
pub fn latency(record: &UpdateRecord, tb: &Timebase) -> f64 {
    tb.to_seconds(record.r.saturating_sub(record.g))
}

/// Age of the freshest received update at `t`, in seconds. With nothing
/// received yet the age is measured from the prior timestamp `t0`.
pub fn aoi(history: &History, t: SimTime, tb: &Timebase, t0: SimTime) -> f64 {
    let g = history.freshest_generation(t).unwrap_or(t0);
    tb.to_seconds(t.saturating_sub(g))
}

/// Error reduction achieved by `y_new` against the true value `x_true`.
///
/// A record already present in the history leaves the estimate unchanged
/// and scores zero. Single realisations can be negative when the
/// observation is noisy.
pub fn semantic_voi(
    est: &Estimator,
    history: &History,
    y_new: &UpdateRecord,
    x_true: Value,
    t: SimTime,
) -> f64 {
    if history.records().iter().any(|r| same_record(r, y_new)) {
        return 0.0;
    }
    let before = est.conditional_mean(history, t);
    let after = est.conditional_mean(&history.with(*y_new), t);
    loss(x_true, before) - loss(x_true, after)
}

fn same_record(a: &UpdateRecord, b: &UpdateRecord) -> bool {
    a.y.to_bits() == b.y.to_bits()
        && a.g == b.g
        && a.sensor_id == b.sensor_id
        && a.component == b.component
        && a.noise_var.to_bits() == b.noise_var.to_bits()
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
#[derive(Default)]
pub enum VoiMethod {
    #[default]
    ClosedForm,
    MonteCarlo { outer: usize, inner: usize },
}


impl VoiMethod {
    pub const DEFAULT_MONTE_CARLO: VoiMethod = VoiMethod::MonteCarlo {
        outer: 256,
        inner: 64,
    };
}

/// Receiver-side expected VoI of a fresh sample taken at `t` with
/// observation noise `noise_var`, in closed form.
///
/// Gaussian models: prior variance `P` drops to `P R / (P + R)`, so the
/// value is `P^2 / (P + R)`. Markov chains (exact readings): the expected
/// 0/1 loss of the MAP estimate.
pub fn expected_voi(est: &Estimator, history: &History, t: SimTime, noise_var: f64) -> f64 {
    voi_of_belief(&est.posterior(history, t), noise_var)
}

/// Expected error reduction of one fresh sample given the current belief.
pub fn voi_of_belief(belief: &Belief, noise_var: f64) -> f64 {
    match belief {
        Belief::Gaussian { var, .. } => {
            let var = *var;
            if noise_var <= 0.0 {
                var
            } else if var <= 0.0 {
                0.0
            } else {
                var * var / (var + noise_var)
            }
        }
        b @ Belief::Categorical(_) => b.expected_loss(),
    }
}

/// Time average of the AoI over `[t_start, t_end]`, in seconds.
pub fn time_average_aoi(
    history: &History,
    t_start: SimTime,
    t_end: SimTime,
    tb: &Timebase,
    t0: SimTime,
) -> f64 {
    if t_end <= t_start {
        return aoi(history, t_start, tb, t0);
    }
    let mut recs: Vec<&UpdateRecord> = history.records().iter().collect();
    recs.sort_by_key(|r| r.r);
    let mut freshest = t0;
    let mut idx = 0;
    while idx < recs.len() && recs[idx].r <= t_start {
        freshest = freshest.max(recs[idx].g);
        idx += 1;
    }
    // integrate in ticks: on each segment the age grows with slope one
    let mut area: u128 = 0;
    let mut from = t_start;
    let segment = |a: SimTime, b: SimTime, g: SimTime| -> u128 {
        let x = a.saturating_sub(g) as u128;
        let y = b.saturating_sub(g) as u128;
        (x + y) * (b.ticks() - a.ticks()) as u128
    };
    while idx < recs.len() && recs[idx].r < t_end {
        let r = recs[idx].r;
        area += segment(from, r, freshest);
        freshest = freshest.max(recs[idx].g);
        from = r;
        idx += 1;
    }
    area += segment(from, t_end, freshest);
    let span = (t_end.ticks() - t_start.ticks()) as f64;
    tb.to_seconds(1) * area as f64 / (2.0 * span)
}

/// Nested Monte-Carlo estimate of the expected VoI.
///
/// The outer loop draws the true value at `t` by simulating the process
/// forward from its state at the freshest observation; the inner loop draws
/// observation noise for a fresh sample of that value. Each term is the
/// realised error reduction of the conditional-mean estimator.
pub fn expected_voi_monte_carlo(
    est: &Estimator,
    history: &History,
    t: SimTime,
    noise_var: f64,
    outer: usize,
    inner: usize,
    rng: &mut RngStream,
) -> Result<VoiEstimate> {
    if outer == 0 || inner == 0 {
        return Err(Error::invalid("outer/inner", "sample counts must be positive"));
    }
    let tb = est.timebase;
    let t_s = tb.seconds_of(t);
    let pre = est.conditional_mean(history, t);
    // Anchor the simulation at the freshest generation instant.
    let anchor = history.records().iter().max_by_key(|r| r.g).copied();
    let (anchor_time, anchor_belief) = match anchor {
        Some(r) => {
            let at = SimTime(r.g.0);
            (tb.seconds_of(at), est.posterior(history, at))
        }
        None => (est.prior.time, est.prior.belief.clone()),
    };
    let mut stats = RunningStats::default();
    for _ in 0..outer {
        let x_anchor = draw_from(&anchor_belief, rng);
        let x_t = est
            .model
            .advance(x_anchor, (t_s - anchor_time).max(0.0), rng);
        let mut acc = 0.0;
        for _ in 0..inner {
            let y = match x_t {
                Value::Real(x) if noise_var > 0.0 => {
                    let z: f64 = rng.sample(StandardNormal);
                    x + noise_var.sqrt() * z
                }
                v => v.as_f64(),
            };
            let rec = UpdateRecord {
                y,
                g: t,
                r: t,
                sensor_id: usize::MAX,
                component: 0,
                noise_var,
            };
            let post = est.conditional_mean(&history.with(rec), t);
            acc += loss(x_t, pre) - loss(x_t, post);
        }
        stats.push(acc / inner as f64);
    }
    Ok(VoiEstimate {
        value: stats.mean(),
        std_error: stats.std_error(),
    })
}

fn draw_from(b: &Belief, rng: &mut RngStream) -> Value {
    match b {
        Belief::Gaussian { mean, var } => {
            if *var <= 0.0 {
                Value::Real(*mean)
            } else {
                let z: f64 = rng.sample(StandardNormal);
                Value::Real(mean + var.sqrt() * z)
            }
        }
        Belief::Categorical(p) => {
            let u = rng.uniform();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return Value::State(i);
                }
            }
            Value::State(p.len() - 1)
        }
    }
}

/// Welford accumulator for means and standard errors.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Decision rule mapping the receiver's belief to a scalar action.
pub trait Controller {
    fn act(&self, belief: &Belief) -> f64;
}

/// Sets the output to the estimate: the tracking task.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrackingController;

impl Controller for TrackingController {
    fn act(&self, belief: &Belief) -> f64 {
        belief.point().as_f64()
    }
}

/// Outputs `high` when the estimate exceeds `threshold`, else `low`.
#[derive(Clone, Copy, Debug)]
pub struct BangBangController {
    pub threshold: f64,
    pub low: f64,
    pub high: f64,
}

impl Controller for BangBangController {
    fn act(&self, belief: &Belief) -> f64 {
        if belief.point().as_f64() > self.threshold {
            self.high
        } else {
            self.low
        }
    }
}

/// Ignores its input.
#[derive(Clone, Copy, Debug)]
pub struct ConstantController(pub f64);

impl Controller for ConstantController {
    fn act(&self, _: &Belief) -> f64 {
        self.0
    }
}

/// Scalar plant `x' = advance(x, dt) + gain * u` with stage cost `(x - u)^2`.
#[derive(Clone, Debug)]
pub struct Plant {
    pub model: ProcessModel,
    pub dt: f64,
    pub gain: f64,
}

impl Plant {
    pub fn stage_cost(&self, x: f64, u: f64) -> f64 {
        (x - u) * (x - u)
    }

    fn predict(&self, belief: &Belief, u: f64) -> Belief {
        match (belief, &self.model) {
            (Belief::Gaussian { mean, var }, ProcessModel::Wiener { sigma2 }) => Belief::Gaussian {
                mean: mean + self.gain * u,
                var: var + sigma2 * self.dt,
            },
            (Belief::Gaussian { mean, var }, ProcessModel::OrnsteinUhlenbeck { theta, mu, sigma2 }) => {
                let a = (-theta * self.dt).exp();
                Belief::Gaussian {
                    mean: mu + (mean - mu) * a + self.gain * u,
                    var: a * a * var + sigma2 * (1.0 - a * a) / (2.0 * theta),
                }
            }
            (b, _) => b.clone(),
        }
    }
}

/// Paired-rollout estimate of the control-cost reduction due to `y_new`.
///
/// Both rollouts start from `x_true` at `t` and share every process-noise
/// draw; they differ only in the belief the controller starts from. The
/// controller runs open loop on its predicted belief for `horizon` steps.
#[allow(clippy::too_many_arguments)]
pub fn pragmatic_voi(
    controller: &dyn Controller,
    plant: &Plant,
    est: &Estimator,
    history: &History,
    y_new: &UpdateRecord,
    x_true: f64,
    t: SimTime,
    horizon: usize,
    rollouts: usize,
    rng: &mut RngStream,
) -> Result<VoiEstimate> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least one step"));
    }
    if rollouts == 0 {
        return Err(Error::invalid("rollouts", "must be positive"));
    }
    let without = est.posterior(history, t);
    let with = if history.records().iter().any(|r| same_record(r, y_new)) {
        without.clone()
    } else {
        est.posterior(&history.with(*y_new), t)
    };
    let mut stats = RunningStats::default();
    for _ in 0..rollouts {
        let mut xa = x_true;
        let mut xb = x_true;
        let mut ba = without.clone();
        let mut bb = with.clone();
        let mut diff = 0.0;
        for _ in 0..horizon {
            let ua = controller.act(&ba);
            let ub = controller.act(&bb);
            diff += plant.stage_cost(xa, ua) - plant.stage_cost(xb, ub);
            // common random numbers: one noise draw drives both trajectories
            let z: Option<f64> = match plant.model {
                ProcessModel::FiniteMarkov(_) => None,
                _ => Some(rng.sample(StandardNormal)),
            };
            xa = step_plant(plant, xa, ua, z);
            xb = step_plant(plant, xb, ub, z);
            ba = plant.predict(&ba, ua);
            bb = plant.predict(&bb, ub);
        }
        stats.push(diff);
    }
    Ok(VoiEstimate {
        value: stats.mean(),
        std_error: stats.std_error(),
    })
}

fn step_plant(plant: &Plant, x: f64, u: f64, z: Option<f64>) -> f64 {
    let z = z.unwrap_or(0.0);
    let next = match plant.model {
        ProcessModel::Wiener { sigma2 } => x + (sigma2 * plant.dt).sqrt() * z,
        ProcessModel::OrnsteinUhlenbeck { theta, mu, sigma2 } => {
            let a = (-theta * plant.dt).exp();
            mu + (x - mu) * a + (sigma2 * (1.0 - a * a) / (2.0 * theta)).sqrt() * z
        }
        ProcessModel::FiniteMarkov(_) => x,
    };
    next + plant.gain * u
}
