//! Source processes and their exact Bayesian estimators.
//!
//! Three families are supported: Wiener (a martingale), Ornstein-Uhlenbeck
//! (stateful, continuous) and finite Markov chains (stateful, discrete).
//! Continuous models take additive Gaussian observation noise and are
//! filtered with a scalar Kalman recursion; Markov observations are exact
//! state readings.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkernel::{RngStream, SimTime, Timebase};

const ROW_SUM_TOL: f64 = 1e-12;

/// Value of a tracked process: a real number or a discrete state index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Real(f64),
    State(usize),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Real(x) => x,
            Value::State(s) => s as f64,
        }
    }
}

/// Error function `e(x, x_hat)`: squared error for reals, 0/1 loss for states.
pub fn loss(truth: Value, estimate: Value) -> f64 {
    match (truth, estimate) {
        (Value::Real(a), Value::Real(b)) => (a - b) * (a - b),
        (Value::State(a), Value::State(b)) => (a != b) as u8 as f64,
        (a, b) => (a.as_f64() - b.as_f64()).powi(2),
    }
}

/// Finite-state chain with one transition every `step` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    1.0
}

impl MarkovChain {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let chain = MarkovChain {
            matrix,
            labels: Vec::new(),
            step: 1.0,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn states(&self) -> usize {
        self.matrix.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.matrix.len();
        if n == 0 {
            return Err(Error::invalid("matrix", "at least one state is required"));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid("step", "must be positive"));
        }
        if !self.labels.is_empty() && self.labels.len() != n {
            return Err(Error::invalid("labels", "one label per state"));
        }
        for (i, row) in self.matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::invalid("matrix", format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid("matrix", format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Row vector times P, renormalised against rounding drift.
    pub fn propagate(&self, dist: &[f64], steps: u64) -> Vec<f64> {
        let n = self.states();
        let mut cur = dist.to_vec();
        let mut next = vec![0.0; n];
        for _ in 0..steps {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &pi) in cur.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                for (j, &pij) in self.matrix[i].iter().enumerate() {
                    next[j] += pi * pij;
                }
            }
            let s: f64 = next.iter().sum();
            for v in next.iter_mut() {
                *v /= s;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn steps_between(&self, from: f64, to: f64) -> u64 {
        let a = (from / self.step + 1e-9).floor();
        let b = (to / self.step + 1e-9).floor();
        (b - a).max(0.0) as u64
    }

    fn sample_next(&self, state: usize, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let row = &self.matrix[state];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // rounding left a sliver above the last cumulative sum
        row.iter().rposition(|&p| p > 0.0).unwrap_or(state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProcessModel {
    Wiener { sigma2: f64 },
    OrnsteinUhlenbeck { theta: f64, mu: f64, sigma2: f64 },
    FiniteMarkov(MarkovChain),
}

impl ProcessModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            // sigma2 = 0 is accepted as the degenerate constant process
            ProcessModel::Wiener { sigma2 } => {
                if !(*sigma2 >= 0.0) || !sigma2.is_finite() {
                    return Err(Error::invalid("sigma2", "must be finite and non-negative"));
                }
            }
            ProcessModel::OrnsteinUhlenbeck { theta, mu, sigma2 } => {
                if !(*theta > 0.0) || !theta.is_finite() {
                    return Err(Error::invalid("theta", "must be positive"));
                }
                if !mu.is_finite() {
                    return Err(Error::invalid("mu", "must be finite"));
                }
                if !(*sigma2 >= 0.0) || !sigma2.is_finite() {
                    return Err(Error::invalid("sigma2", "must be finite and non-negative"));
                }
            }
            ProcessModel::FiniteMarkov(chain) => chain.validate()?,
        }
        Ok(())
    }

    pub fn is_martingale(&self) -> bool {
        matches!(self, ProcessModel::Wiener { .. })
    }

    /// Stationary variance of the OU process, `sigma2 / (2 theta)`.
    pub fn stationary_variance(&self) -> Option<f64> {
        match self {
            ProcessModel::OrnsteinUhlenbeck { theta, sigma2, .. } => Some(sigma2 / (2.0 * theta)),
            _ => None,
        }
    }

    /// Prior used when nothing has been received: Wiener starts at 0 exactly,
    /// OU at its stationary law, Markov uniform.
    pub fn default_prior(&self) -> Prior {
        let belief = match self {
            ProcessModel::Wiener { .. } => Belief::Gaussian {
                mean: 0.0,
                var: 0.0,
            },
            ProcessModel::OrnsteinUhlenbeck { theta, mu, sigma2 } => Belief::Gaussian {
                mean: *mu,
                var: sigma2 / (2.0 * theta),
            },
            ProcessModel::FiniteMarkov(c) => {
                Belief::Categorical(vec![1.0 / c.states() as f64; c.states()])
            }
        };
        Prior { time: 0.0, belief }
    }

    /// Gaussian prediction step over `dt` seconds.
    fn predict_gaussian(&self, mean: f64, var: f64, dt: f64) -> (f64, f64) {
        match self {
            ProcessModel::Wiener { sigma2 } => (mean, var + sigma2 * dt),
            ProcessModel::OrnsteinUhlenbeck { theta, mu, sigma2 } => {
                let a = (-theta * dt).exp();
                let q = sigma2 * (1.0 - a * a) / (2.0 * theta);
                (mu + (mean - mu) * a, a * a * var + q)
            }
            ProcessModel::FiniteMarkov(_) => unreachable!("gaussian prediction on a markov chain"),
        }
    }

    /// Draws `x(t + dt)` given `x(t) = x` under the exact transition law.
    pub fn advance(&self, x: Value, dt: f64, rng: &mut RngStream) -> Value {
        match (self, x) {
            (ProcessModel::Wiener { sigma2 }, Value::Real(v)) => {
                if *sigma2 == 0.0 || dt <= 0.0 {
                    return Value::Real(v);
                }
                let z: f64 = rng.sample(StandardNormal);
                Value::Real(v + (sigma2 * dt).sqrt() * z)
            }
            (ProcessModel::OrnsteinUhlenbeck { theta, mu, sigma2 }, Value::Real(v)) => {
                if dt <= 0.0 {
                    return Value::Real(v);
                }
                let a = (-theta * dt).exp();
                let sd = (sigma2 * (1.0 - a * a) / (2.0 * theta)).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                Value::Real(mu + (v - mu) * a + sd * z)
            }
            (ProcessModel::FiniteMarkov(chain), Value::State(s)) => {
                let steps = chain.steps_between(0.0, dt);
                let mut cur = s;
                for _ in 0..steps {
                    cur = chain.sample_next(cur, rng);
                }
                Value::State(cur)
            }
            (_, v) => v,
        }
    }

    /// Markov variant of [`advance`](Self::advance) that counts transitions
    /// by the absolute grid `floor(t / step)`, so partial steps accumulate.
    fn advance_abs(&self, x: Value, from: f64, to: f64, rng: &mut RngStream) -> Value {
        match (self, x) {
            (ProcessModel::FiniteMarkov(chain), Value::State(s)) => {
                let mut cur = s;
                for _ in 0..chain.steps_between(from, to) {
                    cur = chain.sample_next(cur, rng);
                }
                Value::State(cur)
            }
            _ => self.advance(x, to - from, rng),
        }
    }
}

/// Draws the process on `grid` (seconds), starting from `x0` at `grid[0]`.
pub fn sample_path(
    model: &ProcessModel,
    x0: Value,
    grid: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<Value>> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridNotIncreasing);
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut cur = x0;
    for (i, &t) in grid.iter().enumerate() {
        if i > 0 {
            cur = model.advance_abs(cur, grid[i - 1], t, rng);
        }
        out.push(cur);
    }
    Ok(out)
}

/// Exact sampler that follows the true path forward through increasing times.
#[derive(Clone, Debug)]
pub struct PathSampler {
    model: ProcessModel,
    time: f64,
    value: Value,
}

impl PathSampler {
    pub fn new(model: ProcessModel, t0: f64, x0: Value) -> Self {
        PathSampler {
            model,
            time: t0,
            value: x0,
        }
    }

    /// Value at `t`; times must be visited in non-decreasing order.
    pub fn at(&mut self, t: f64, rng: &mut RngStream) -> Value {
        if t > self.time {
            self.value = self.model.advance_abs(self.value, self.time, t, rng);
            self.time = t;
        }
        self.value
    }

    /// Adds an out-of-model jump to a real-valued path.
    pub fn perturb(&mut self, delta: f64) {
        if let Value::Real(v) = self.value {
            self.value = Value::Real(v + delta);
        }
    }

    pub fn current(&self) -> (f64, Value) {
        (self.time, self.value)
    }
}

/// A single observation `(y, g, r)` of one scalar component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub y: f64,
    pub g: SimTime,
    pub r: SimTime,
    pub sensor_id: usize,
    #[serde(default)]
    pub component: usize,
    #[serde(default)]
    pub noise_var: f64,
}

impl UpdateRecord {
    pub fn new(y: f64, g: SimTime, r: SimTime) -> Result<Self> {
        if r < g {
            return Err(Error::ReceivedBeforeGenerated {
                g: g.0,
                r: r.0,
            });
        }
        Ok(UpdateRecord {
            y,
            g,
            r,
            sensor_id: 0,
            component: 0,
            noise_var: 0.0,
        })
    }

    pub fn with_noise(mut self, noise_var: f64) -> Self {
        self.noise_var = noise_var;
        self
    }

    pub fn with_sensor(mut self, sensor_id: usize) -> Self {
        self.sensor_id = sensor_id;
        self
    }

    pub fn with_component(mut self, component: usize) -> Self {
        self.component = component;
        self
    }
}

/// Receiver knowledge `h(t)`: records ordered by reception time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    records: Vec<UpdateRecord>,
}

impl History {
    pub fn new() -> Self {
        History::default()
    }

    pub fn from_records(records: Vec<UpdateRecord>) -> Result<Self> {
        let mut h = History::new();
        for r in records {
            h.push(r)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, rec: UpdateRecord) -> Result<()> {
        if rec.r < rec.g {
            return Err(Error::ReceivedBeforeGenerated {
                g: rec.g.0,
                r: rec.r.0,
            });
        }
        if let Some(last) = self.records.last() {
            if rec.r < last.r {
                return Err(Error::HistoryOutOfOrder {
                    last: last.r.0,
                    got: rec.r.0,
                });
            }
        }
        self.records.push(rec);
        Ok(())
    }

    /// Copy of the history with `rec` appended, ignoring reception order.
    pub fn with(&self, rec: UpdateRecord) -> History {
        let mut h = self.clone();
        h.records.push(rec);
        h
    }

    pub fn records(&self) -> &[UpdateRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_reception(&self) -> Option<SimTime> {
        self.records.last().map(|r| r.r)
    }

    /// Freshest generation instant among records received by `t`.
    pub fn freshest_generation(&self, t: SimTime) -> Option<SimTime> {
        self.records
            .iter()
            .filter(|r| r.r <= t)
            .map(|r| r.g)
            .max()
    }
}

/// Belief about the process at a given time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Belief {
    Gaussian { mean: f64, var: f64 },
    Categorical(Vec<f64>),
}

impl Belief {
    /// Bayes point estimate: the mean, or the MAP state (lowest index on ties).
    pub fn point(&self) -> Value {
        match self {
            Belief::Gaussian { mean, .. } => Value::Real(*mean),
            Belief::Categorical(p) => Value::State(argmax(p)),
        }
    }

    /// Expected loss of [`point`](Self::point) under this belief.
    pub fn expected_loss(&self) -> f64 {
        match self {
            Belief::Gaussian { var, .. } => *var,
            Belief::Categorical(p) => 1.0 - p[argmax(p)],
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub time: f64,
    pub belief: Belief,
}

/// A process model bundled with its prior and clock, answering posterior queries.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimator {
    pub model: ProcessModel,
    pub prior: Prior,
    pub timebase: Timebase,
}

impl Estimator {
    pub fn new(model: ProcessModel, timebase: Timebase) -> Result<Self> {
        model.validate()?;
        let prior = model.default_prior();
        Ok(Estimator {
            model,
            prior,
            timebase,
        })
    }

    pub fn with_prior(mut self, prior: Prior) -> Result<Self> {
        match (&self.model, &prior.belief) {
            (ProcessModel::FiniteMarkov(c), Belief::Categorical(p)) if p.len() == c.states() => {}
            (ProcessModel::FiniteMarkov(_), _) => {
                return Err(Error::invalid("prior", "markov prior must be a distribution over states"))
            }
            (_, Belief::Gaussian { var, .. }) if *var >= 0.0 => {}
            _ => return Err(Error::invalid("prior", "gaussian prior with non-negative variance required")),
        }
        self.prior = prior;
        Ok(self)
    }

    fn secs(&self, t: SimTime) -> f64 {
        self.timebase.seconds_of(t)
    }

    /// Belief at `to` seconds given `belief` at `from` and no new evidence.
    pub fn predict(&self, belief: &Belief, from: f64, to: f64) -> Belief {
        match (&self.model, belief) {
            (ProcessModel::FiniteMarkov(chain), Belief::Categorical(p)) => {
                Belief::Categorical(chain.propagate(p, chain.steps_between(from, to)))
            }
            (_, Belief::Gaussian { mean, var }) => {
                let (m, v) = self.model.predict_gaussian(*mean, *var, (to - from).max(0.0));
                Belief::Gaussian { mean: m, var: v }
            }
            (_, b) => b.clone(),
        }
    }

    /// Conditions `belief` on one observation `y` with noise variance `noise_var`.
    pub fn observe(&self, belief: &Belief, y: f64, noise_var: f64) -> Belief {
        match (&self.model, belief) {
            (ProcessModel::FiniteMarkov(chain), _) => {
                let s = (y.round().max(0.0) as usize).min(chain.states() - 1);
                let mut d = vec![0.0; chain.states()];
                d[s] = 1.0;
                Belief::Categorical(d)
            }
            (_, Belief::Gaussian { mean, var }) => {
                let (m, v) = kalman_update(*mean, *var, y, noise_var);
                Belief::Gaussian { mean: m, var: v }
            }
            (_, b) => b.clone(),
        }
    }

    /// Filtered belief at the freshest generation instant, as `(seconds, belief)`.
    pub fn filter(&self, history: &History) -> (f64, Belief) {
        let mut recs: Vec<&UpdateRecord> = history.records().iter().collect();
        recs.sort_by_key(|r| r.g);
        let mut now = self.prior.time;
        let mut belief = self.prior.belief.clone();
        for r in recs {
            let g = self.secs(r.g);
            belief = self.predict(&belief, now, g.max(now));
            belief = self.observe(&belief, r.y, r.noise_var);
            now = now.max(g);
        }
        (now, belief)
    }

    /// Exact posterior of `x(t)` given every record in `history`.
    pub fn posterior(&self, history: &History, t: SimTime) -> Belief {
        let (now, belief) = self.filter(history);
        self.predict(&belief, now, self.secs(t).max(now))
    }

    pub fn conditional_mean(&self, history: &History, t: SimTime) -> Value {
        self.posterior(history, t).point()
    }

    pub fn conditional_mse(&self, history: &History, t: SimTime) -> f64 {
        self.posterior(history, t).expected_loss()
    }
}

/// Scalar Kalman measurement update with noise variance `r`.
fn kalman_update(m: f64, p: f64, y: f64, r: f64) -> (f64, f64) {
    if r <= 0.0 {
        return (y, 0.0);
    }
    if p <= 0.0 {
        return (m, 0.0);
    }
    let k = p / (p + r);
    (m + k * (y - m), (1.0 - k) * p)
}

/// One sensor: which components it observes and its noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub components: Vec<usize>,
    #[serde(default)]
    pub noise_var: f64,
}

/// `N` sensors jointly observing a `d`-dimensional field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorField {
    pub dimension: usize,
    pub sensors: Vec<SensorSpec>,
}

impl SensorField {
    /// One sensor per component, all with the same noise variance.
    pub fn one_per_component(dimension: usize, noise_var: f64) -> Self {
        SensorField {
            dimension,
            sensors: (0..dimension)
                .map(|c| SensorSpec {
                    components: vec![c],
                    noise_var,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::invalid("sensors", "at least one sensor is required"));
        }
        let mut seen = vec![false; self.dimension];
        for (n, s) in self.sensors.iter().enumerate() {
            if !(s.noise_var >= 0.0) {
                return Err(Error::invalid("noise_var", format!("sensor {n} has negative noise")));
            }
            for &c in &s.components {
                if c >= self.dimension {
                    return Err(Error::invalid(
                        "components",
                        format!("sensor {n} observes component {c} of {}", self.dimension),
                    ));
                }
                seen[c] = true;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::invalid("components", format!("component {c} is unobserved")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::Seeder;

    fn rng(name: &str) -> RngStream {
        Seeder::new(20240611).substream(name)
    }

    fn secs(tb: Timebase, s: u64) -> SimTime {
        SimTime(s * tb.den / tb.num)
    }

    #[test]
    fn zero_variance_wiener_is_constant() {
        let m = ProcessModel::Wiener { sigma2: 0.0 };
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let path = sample_path(&m, Value::Real(1.25), &grid, &mut rng("c")).unwrap();
        assert!(path.iter().all(|v| *v == Value::Real(1.25)));
    }

    #[test]
    fn non_increasing_grid_rejected() {
        let m = ProcessModel::Wiener { sigma2: 1.0 };
        let err = sample_path(&m, Value::Real(0.0), &[0.0, 1.0, 1.0], &mut rng("g"));
        assert_eq!(err, Err(Error::GridNotIncreasing));
    }

    #[test]
    fn ou_mean_reversion_monte_carlo() {
        let m = ProcessModel::OrnsteinUhlenbeck {
            theta: 1.0,
            mu: 0.0,
            sigma2: 1.0,
        };
        let mut r = rng("ou");
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let p = sample_path(&m, Value::Real(2.0), &[0.0, 1.0], &mut r).unwrap();
            let x = p[1].as_f64();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let expect = 2.0 * (-1.0f64).exp();
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn uniform_markov_chain_visits_states_uniformly() {
        let k = 4;
        let chain = MarkovChain::new(vec![vec![0.25; k]; k]).unwrap();
        let m = ProcessModel::FiniteMarkov(chain);
        let steps = 100_000;
        let grid: Vec<f64> = (0..steps).map(|i| i as f64).collect();
        let path = sample_path(&m, Value::State(0), &grid, &mut rng("mk")).unwrap();
        let mut counts = vec![0f64; k];
        for v in &path {
            if let Value::State(s) = v {
                counts[*s] += 1.0;
            }
        }
        let e = steps as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        // chi-square with 3 dof, 99.9% quantile
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn martingale_estimate_is_last_sample() {
        let tb = Timebase::SECONDS;
        let est = Estimator::new(ProcessModel::Wiener { sigma2: 1.0 }, tb).unwrap();
        let mut h = History::new();
        h.push(UpdateRecord::new(-4.0, SimTime(0), SimTime(0)).unwrap()).unwrap();
        h.push(UpdateRecord::new(2.0, SimTime(1), SimTime(1)).unwrap()).unwrap();
        assert_eq!(est.conditional_mean(&h, SimTime(3)), Value::Real(2.0));
        assert_eq!(est.conditional_mse(&h, SimTime(3)), 2.0);
        assert_eq!(est.conditional_mse(&h, SimTime(1)), 0.0);
    }

    #[test]
    fn ou_noiseless_estimate_decays_to_mean() {
        let tb = Timebase::MILLIS;
        let est = Estimator::new(
            ProcessModel::OrnsteinUhlenbeck {
                theta: 1.0,
                mu: 0.0,
                sigma2: 1.0,
            },
            tb,
        )
        .unwrap();
        let h = History::from_records(vec![UpdateRecord::new(2.0, SimTime(0), SimTime(0)).unwrap()])
            .unwrap();
        let Value::Real(m) = est.conditional_mean(&h, secs(tb, 1)) else {
            panic!()
        };
        assert!((m - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(est.conditional_mean(&History::new(), secs(tb, 5)), Value::Real(0.0));
    }

    #[test]
    fn ou_mse_saturates_at_stationary_variance() {
        let theta = 0.5;
        let sigma2 = 2.0;
        let tb = Timebase::SECONDS;
        let est = Estimator::new(
            ProcessModel::OrnsteinUhlenbeck {
                theta,
                mu: 1.0,
                sigma2,
            },
            tb,
        )
        .unwrap();
        let h = History::from_records(vec![UpdateRecord::new(3.0, SimTime(0), SimTime(0)).unwrap()])
            .unwrap();
        let stat = sigma2 / (2.0 * theta);
        let far = est.conditional_mse(&h, SimTime((50.0 / theta) as u64));
        assert!((far - stat).abs() / stat < 0.01);
        for t in 0..40 {
            assert!(est.conditional_mse(&h, SimTime(t)) <= stat + 1e-12);
        }
    }

    #[test]
    fn wiener_mse_matches_monte_carlo() {
        let m = ProcessModel::Wiener { sigma2: 1.0 };
        let mut r = rng("wmse");
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = m.advance(Value::Real(0.0), 2.0, &mut r).as_f64();
            acc += x * x;
        }
        let mc = acc / n as f64;
        assert!((mc - 2.0).abs() / 2.0 < 0.01, "mc {mc}");
    }

    #[test]
    fn noisy_kalman_combines_observations() {
        let est = Estimator::new(ProcessModel::Wiener { sigma2: 1.0 }, Timebase::SECONDS)
            .unwrap()
            .with_prior(Prior {
                time: 0.0,
                belief: Belief::Gaussian { mean: 0.0, var: 1.0 },
            })
            .unwrap();
        let rec = UpdateRecord::new(2.0, SimTime(0), SimTime(0)).unwrap().with_noise(1.0);
        let h = History::from_records(vec![rec]).unwrap();
        match est.posterior(&h, SimTime(0)) {
            Belief::Gaussian { mean, var } => {
                assert!((mean - 1.0).abs() < 1e-15);
                assert!((var - 0.5).abs() < 1e-15);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn markov_posterior_from_last_state() {
        let chain = MarkovChain::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let est = Estimator::new(ProcessModel::FiniteMarkov(chain), Timebase::SECONDS).unwrap();
        let h = History::from_records(vec![UpdateRecord::new(1.0, SimTime(2), SimTime(2)).unwrap()])
            .unwrap();
        match est.posterior(&h, SimTime(4)) {
            Belief::Categorical(p) => {
                // [0,1] P^2 = [0.2*0.9 + 0.8*0.2, 0.2*0.1 + 0.8*0.8]
                assert!((p[0] - 0.34).abs() < 1e-12);
                assert!((p[1] - 0.66).abs() < 1e-12);
            }
            _ => panic!(),
        }
        assert_eq!(est.conditional_mean(&h, SimTime(4)), Value::State(1));
        assert!((est.conditional_mse(&h, SimTime(4)) - 0.34).abs() < 1e-12);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ProcessModel::Wiener { sigma2: -1.0 }.validate().is_err());
        assert!(ProcessModel::OrnsteinUhlenbeck {
            theta: 0.0,
            mu: 0.0,
            sigma2: 1.0
        }
        .validate()
        .is_err());
        assert!(MarkovChain::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(MarkovChain::new(vec![vec![1.1, -0.1], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn history_rejects_out_of_order_and_reversed_records() {
        let mut h = History::new();
        h.push(UpdateRecord::new(0.0, SimTime(1), SimTime(5)).unwrap()).unwrap();
        assert!(h.push(UpdateRecord::new(0.0, SimTime(1), SimTime(4)).unwrap()).is_err());
        assert!(UpdateRecord::new(0.0, SimTime(3), SimTime(2)).is_err());
    }

    #[test]
    fn sensor_field_requires_coverage() {
        let mut f = SensorField::one_per_component(3, 0.1);
        assert!(f.validate().is_ok());
        f.sensors.pop();
        assert!(f.validate().is_err());
        assert!(SensorField { dimension: 1, sensors: vec![] }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn markov_posterior_is_a_distribution(
                rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 4),
                steps in 0u64..200,
                start in 0usize..4,
            ) {
                let matrix: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        let mut row: Vec<f64> = r.iter().map(|v| v / s).collect();
                        let head: f64 = row[..3].iter().sum();
                        row[3] = 1.0 - head;
                        row
                    })
                    .collect();
                let chain = MarkovChain { matrix, labels: vec![], step: 1.0 };
                prop_assume!(chain.validate().is_ok());
                let mut d = vec![0.0; 4];
                d[start] = 1.0;
                let p = chain.propagate(&d, steps);
                prop_assert!(p.iter().all(|&v| v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn wiener_noiseless_ignores_older_history(
                older in prop::collection::vec(-10.0f64..10.0, 0..6),
                last in -10.0f64..10.0,
                lag in 0u64..50,
            ) {
                let est = Estimator::new(ProcessModel::Wiener { sigma2: 1.5 }, Timebase::SECONDS).unwrap();
                let n = older.len() as u64;
                let mut recs: Vec<UpdateRecord> = older
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| UpdateRecord::new(y, SimTime(i as u64), SimTime(i as u64)).unwrap())
                    .collect();
                recs.push(UpdateRecord::new(last, SimTime(n), SimTime(n)).unwrap());
                let h = History::from_records(recs).unwrap();
                let t = SimTime(n + lag);
                prop_assert_eq!(est.conditional_mean(&h, t), Value::Real(last));
                prop_assert_eq!(est.conditional_mse(&h, t), 1.5 * lag as f64);
            }
        }
    }
}
