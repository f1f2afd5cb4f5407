//! Push and pull scheduling policies and the multi-sensor tracking loop.
//!
//! Pull policies run at the receiver, which polls one sensor per decision
//! epoch. Push policies run at each sensor, which decides on its own when
//! to send. Pushes from different sensors in the same epoch collide.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channels::LinkModel;
use crate::error::{Error, Result};
use crate::processes::{
    loss, Belief, Estimator, History, PathSampler, ProcessModel, SensorField, SensorSpec,
    UpdateRecord, Value,
};
use crate::simkernel::{EventTrace, Kernel, PayloadTag, RngStream, SimTime, Timebase};
use crate::timing_metrics::{time_average_aoi, voi_of_belief, MetricKind, MetricSample};

// slack for comparing elapsed seconds that went through tick rounding
const TIME_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerPolicy {
    PeriodicPush {
        interval: f64,
    },
    ThresholdPush {
        threshold: f64,
    },
    /// Empty weights mean unit weights.
    AoiGreedyPull {
        #[serde(default)]
        weights: Vec<f64>,
    },
    VoiGreedyPull,
    RandomPull,
}

impl SchedulerPolicy {
    pub fn is_push(&self) -> bool {
        matches!(
            self,
            SchedulerPolicy::PeriodicPush { .. } | SchedulerPolicy::ThresholdPush { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerPolicy::PeriodicPush { .. } => "periodic_push",
            SchedulerPolicy::ThresholdPush { .. } => "threshold_push",
            SchedulerPolicy::AoiGreedyPull { .. } => "aoi_greedy_pull",
            SchedulerPolicy::VoiGreedyPull => "voi_greedy_pull",
            SchedulerPolicy::RandomPull => "random_pull",
        }
    }

    pub fn validate(&self, sensors: usize) -> Result<()> {
        match self {
            SchedulerPolicy::PeriodicPush { interval } => {
                if !(*interval > 0.0) || !interval.is_finite() {
                    return Err(Error::invalid("interval", "must be positive"));
                }
            }
            SchedulerPolicy::ThresholdPush { threshold } => {
                if !(*threshold >= 0.0) {
                    return Err(Error::invalid("threshold", "must be non-negative"));
                }
            }
            SchedulerPolicy::AoiGreedyPull { weights } => {
                if !weights.is_empty() && weights.len() != sensors {
                    return Err(Error::DimensionMismatch {
                        expected: sensors,
                        got: weights.len(),
                    });
                }
                if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::invalid("weights", "must be positive"));
                }
            }
            SchedulerPolicy::VoiGreedyPull | SchedulerPolicy::RandomPull => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushDecision {
    Send,
    Hold,
}

/// What a sensor remembers about its own transmissions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SenderState {
    /// Values of the last update known to have been delivered.
    pub last_sent: Option<Vec<f64>>,
    /// Seconds at which the last transmission was attempted.
    pub last_send_time: Option<f64>,
}

/// Push decision for one sensor holding `local` at `t` seconds.
pub fn decide_push(
    policy: &SchedulerPolicy,
    local: &[f64],
    sender: &SenderState,
    t: f64,
) -> Result<PushDecision> {
    let send = match policy {
        SchedulerPolicy::PeriodicPush { interval } => match sender.last_send_time {
            None => true,
            Some(last) => t - last + TIME_SLACK * interval.max(1.0) >= *interval,
        },
        SchedulerPolicy::ThresholdPush { threshold } => match &sender.last_sent {
            None => true,
            Some(prev) => {
                let dev = local
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                dev >= *threshold
            }
        },
        other => {
            return Err(Error::WrongPolicyKind {
                policy: other.name().to_string(),
                expected: "push",
            })
        }
    };
    Ok(if send { PushDecision::Send } else { PushDecision::Hold })
}

/// Receiver knowledge: one estimator and one history per field component.
#[derive(Clone, Debug)]
pub struct Receiver {
    timebase: Timebase,
    field: SensorField,
    estimators: Vec<Estimator>,
    histories: Vec<History>,
    filters: Vec<(f64, Belief)>,
    freshest: Vec<Option<SimTime>>,
    t0: SimTime,
}

impl Receiver {
    pub fn new(models: &[ProcessModel], field: SensorField, timebase: Timebase) -> Result<Self> {
        if models.len() != field.dimension {
            return Err(Error::DimensionMismatch {
                expected: field.dimension,
                got: models.len(),
            });
        }
        field.validate()?;
        let estimators = models
            .iter()
            .map(|m| Estimator::new(m.clone(), timebase))
            .collect::<Result<Vec<_>>>()?;
        let filters = estimators
            .iter()
            .map(|e| (e.prior.time, e.prior.belief.clone()))
            .collect();
        Ok(Receiver {
            timebase,
            freshest: vec![None; field.sensors.len()],
            histories: vec![History::new(); field.dimension],
            estimators,
            filters,
            field,
            t0: SimTime::ZERO,
        })
    }

    pub fn sensors(&self) -> usize {
        self.field.sensors.len()
    }

    pub fn field(&self) -> &SensorField {
        &self.field
    }

    pub fn history(&self, component: usize) -> &History {
        &self.histories[component]
    }

    /// Age of the freshest update received from sensor `n`, in seconds.
    pub fn sensor_aoi(&self, n: usize, t: SimTime) -> f64 {
        let g = self.freshest[n].unwrap_or(self.t0);
        self.timebase.to_seconds(t.saturating_sub(g))
    }

    pub fn belief(&self, component: usize, t: SimTime) -> Belief {
        let (now, b) = &self.filters[component];
        let ts = self.timebase.seconds_of(t);
        self.estimators[component].predict(b, *now, ts.max(*now))
    }

    pub fn estimate(&self, component: usize, t: SimTime) -> Value {
        self.belief(component, t).point()
    }

    /// Expected VoI of polling sensor `n` now, summed over its components.
    pub fn sensor_voi(&self, n: usize, t: SimTime) -> f64 {
        let spec = &self.field.sensors[n];
        spec.components
            .iter()
            .map(|&c| voi_of_belief(&self.belief(c, t), spec.noise_var))
            .sum()
    }

    /// Records an update from sensor `n` observed at `g` and received now.
    pub fn deliver(&mut self, n: usize, values: &[(usize, f64)], g: SimTime, r: SimTime) -> Result<()> {
        let noise_var = self.field.sensors[n].noise_var;
        for &(c, y) in values {
            let rec = UpdateRecord::new(y, g, r)?
                .with_noise(noise_var)
                .with_sensor(n)
                .with_component(c);
            self.histories[c].push(rec)?;
            let gs = self.timebase.seconds_of(g);
            let (now, belief) = &self.filters[c];
            if gs >= *now {
                let est = &self.estimators[c];
                let predicted = est.predict(belief, *now, gs);
                self.filters[c] = (gs, est.observe(&predicted, y, noise_var));
            } else {
                // out-of-order arrival: refilter the whole history
                self.filters[c] = self.estimators[c].filter(&self.histories[c]);
            }
        }
        self.freshest[n] = Some(self.freshest[n].map_or(g, |f| f.max(g)));
        Ok(())
    }
}

fn argmax_lowest(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Sensor to poll at `t`. Ties go to the lowest index.
pub fn decide_pull(
    policy: &SchedulerPolicy,
    receiver: &Receiver,
    t: SimTime,
    rng: &mut RngStream,
) -> Result<usize> {
    let n = receiver.sensors();
    match policy {
        SchedulerPolicy::AoiGreedyPull { weights } => Ok(argmax_lowest((0..n).map(|i| {
            let w = weights.get(i).copied().unwrap_or(1.0);
            w * receiver.sensor_aoi(i, t)
        }))),
        SchedulerPolicy::VoiGreedyPull => {
            Ok(argmax_lowest((0..n).map(|i| receiver.sensor_voi(i, t))))
        }
        SchedulerPolicy::RandomPull => Ok(rng.below(n as u64) as usize),
        other => Err(Error::WrongPolicyKind {
            policy: other.name().to_string(),
            expected: "pull",
        }),
    }
}

/// Additive jump of the true process that the receiver's model does not
/// anticipate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub time: f64,
    pub component: usize,
    pub size: f64,
}

fn default_pull_period() -> u64 {
    1
}

fn default_retry_prob() -> f64 {
    0.5
}

/// Tracking scenario. Times are in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    #[serde(default)]
    pub timebase: Timebase,
    pub components: Vec<ProcessModel>,
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub link: LinkModel,
    pub policy: SchedulerPolicy,
    /// Pull policy evaluated alongside a pull `policy` for comparison only.
    #[serde(default)]
    pub shadow: Option<SchedulerPolicy>,
    pub epoch: f64,
    pub duration: f64,
    /// Pull policies poll once every this many epochs.
    #[serde(default = "default_pull_period")]
    pub pull_period: u64,
    /// Seconds before an unanswered poll is abandoned; one polling period if unset.
    #[serde(default)]
    pub pull_timeout: Option<f64>,
    #[serde(default)]
    pub jumps: Vec<Jump>,
    /// Transmit probability of a sensor whose previous push collided.
    #[serde(default = "default_retry_prob")]
    pub retry_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrackingConfig {
    pub fn field(&self) -> SensorField {
        SensorField {
            dimension: self.components.len(),
            sensors: self.sensors.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.components {
            m.validate()?;
        }
        self.field().validate()?;
        self.link.validate()?;
        self.policy.validate(self.sensors.len())?;
        if let Some(s) = &self.shadow {
            s.validate(self.sensors.len())?;
            if s.is_push() || self.policy.is_push() {
                return Err(Error::invalid("shadow", "only pull policies can be compared"));
            }
        }
        if !(self.epoch > 0.0) || !self.epoch.is_finite() {
            return Err(Error::invalid("epoch", "must be positive"));
        }
        if self.timebase.ticks_for(self.epoch) == 0 {
            return Err(Error::invalid("epoch", "shorter than one tick"));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid("duration", "must be non-negative"));
        }
        if let Some(to) = self.pull_timeout {
            if !(to > 0.0) || !to.is_finite() {
                return Err(Error::invalid("pull_timeout", "must be positive"));
            }
        }
        if self.pull_period == 0 {
            return Err(Error::invalid("pull_period", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.retry_prob) || self.retry_prob == 0.0 {
            return Err(Error::invalid("retry_prob", "must lie in (0, 1]"));
        }
        for j in &self.jumps {
            if j.component >= self.components.len() {
                return Err(Error::invalid("jumps", "component out of range"));
            }
            if !(j.time >= 0.0) || !j.size.is_finite() {
                return Err(Error::invalid("jumps", "time must be non-negative"));
            }
            if matches!(self.components[j.component], ProcessModel::FiniteMarkov(_)) {
                return Err(Error::invalid("jumps", "jumps apply to continuous components"));
            }
        }
        Ok(())
    }
}

/// State at one decision epoch, measured before any poll is issued.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub t: SimTime,
    /// Polled sensor, or the lone pushing sensor.
    pub chosen: Option<usize>,
    pub aoi: Vec<f64>,
    pub voi: Vec<f64>,
    pub sq_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PollDecision {
    pub t: SimTime,
    /// `None` when a request was still in flight.
    pub sensor: Option<usize>,
    pub shadow: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingRunResult {
    pub timebase: Timebase,
    pub epochs: Vec<EpochRecord>,
    pub decisions: Vec<PollDecision>,
    pub samples: Vec<MetricSample>,
    pub transmissions: u64,
    pub deliveries: u64,
    pub collisions: u64,
    pub mean_sq_error: f64,
    /// AoI averaged over sensors and decision epochs.
    pub mean_aoi: f64,
    /// AoI averaged over sensors and continuous time.
    pub time_avg_aoi: f64,
    /// Seconds from each jump until the first post-jump update arrived.
    pub detection_delays: Vec<Option<f64>>,
    pub trace: EventTrace,
}

impl TrackingRunResult {
    /// `(agreeing, compared)` over decisions where both policies chose.
    pub fn agreement(&self) -> (usize, usize) {
        let mut agree = 0;
        let mut total = 0;
        for d in &self.decisions {
            if let (Some(a), Some(b)) = (d.sensor, d.shadow) {
                total += 1;
                agree += (a == b) as usize;
            }
        }
        (agree, total)
    }

    /// Per-epoch rows: `t_seconds,chosen,aoi_<n>...,voi_<n>...,sq_error`.
    pub fn epochs_csv(&self) -> String {
        let n = self.epochs.first().map_or(0, |e| e.aoi.len());
        let mut out = String::from("t_seconds,chosen");
        for i in 0..n {
            let _ = write!(out, ",aoi_{i}");
        }
        for i in 0..n {
            let _ = write!(out, ",voi_{i}");
        }
        out.push_str(",sq_error\n");
        for e in &self.epochs {
            let _ = write!(out, "{}", self.timebase.seconds_of(e.t));
            match e.chosen {
                Some(c) => {
                    let _ = write!(out, ",{c}");
                }
                None => out.push_str(",-1"),
            }
            for v in e.aoi.iter().chain(&e.voi) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", e.sq_error);
        }
        out
    }
}

#[derive(Clone, Debug)]
enum TrackEvent {
    Epoch(u64),
    Jump(usize),
    Deliver {
        sensor: usize,
        values: Vec<(usize, f64)>,
        g: SimTime,
        pushed: bool,
    },
}

impl PayloadTag for TrackEvent {
    fn tag(&self) -> String {
        match self {
            TrackEvent::Epoch(k) => format!("epoch:{k}"),
            TrackEvent::Jump(j) => format!("jump:{j}"),
            TrackEvent::Deliver { sensor, .. } => format!("deliver:{sensor}"),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct PushSender {
    state: SenderState,
    awaiting_ack: bool,
    backing_off: bool,
}

fn draw_from(belief: &Belief, rng: &mut RngStream) -> Value {
    match belief {
        Belief::Gaussian { mean, var } => {
            let z: f64 = rng.sample(StandardNormal);
            Value::Real(mean + var.max(0.0).sqrt() * z)
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

struct Tracker<'a> {
    cfg: &'a TrackingConfig,
    tb: Timebase,
    receiver: Receiver,
    truth: Vec<PathSampler>,
    truth_rng: Vec<RngStream>,
    noise_rng: Vec<RngStream>,
    link_rng: RngStream,
    policy_rng: RngStream,
    shadow_rng: RngStream,
    backoff_rng: RngStream,
    senders: Vec<PushSender>,
    in_flight_until: Option<SimTime>,
    epoch_ticks: u64,
    epochs: Vec<EpochRecord>,
    decisions: Vec<PollDecision>,
    samples: Vec<MetricSample>,
    transmissions: u64,
    deliveries: u64,
    collisions: u64,
    detections: Vec<Option<f64>>,
}

impl<'a> Tracker<'a> {
    fn truth_at(&mut self, c: usize, t: SimTime) -> Value {
        let ts = self.tb.seconds_of(t);
        self.truth[c].at(ts, &mut self.truth_rng[c])
    }

    fn observe(&mut self, n: usize, t: SimTime) -> Vec<(usize, f64)> {
        let spec = self.cfg.sensors[n].clone();
        let mut out = Vec::with_capacity(spec.components.len());
        for &c in &spec.components {
            let x = self.truth_at(c, t);
            let z: f64 = self.noise_rng[n].sample(StandardNormal);
            let y = match x {
                Value::Real(v) => v + spec.noise_var.sqrt() * z,
                Value::State(s) => s as f64,
            };
            out.push((c, y));
        }
        out
    }

    fn send(&mut self, k: &mut Kernel<TrackEvent>, n: usize, t: SimTime, pushed: bool) -> Result<bool> {
        let values = self.observe(n, t);
        self.transmissions += 1;
        match self.cfg.link.transmit(t, &self.tb, &mut self.link_rng) {
            Some(at) => {
                k.schedule(
                    at,
                    TrackEvent::Deliver {
                        sensor: n,
                        values,
                        g: t,
                        pushed,
                    },
                )?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn record_epoch(&mut self, t: SimTime) -> usize {
        let n = self.receiver.sensors();
        let aoi: Vec<f64> = (0..n).map(|i| self.receiver.sensor_aoi(i, t)).collect();
        let voi: Vec<f64> = (0..n).map(|i| self.receiver.sensor_voi(i, t)).collect();
        let mut sq_error = 0.0;
        for c in 0..self.truth.len() {
            let x = self.truth_at(c, t);
            sq_error += loss(x, self.receiver.estimate(c, t));
        }
        for i in 0..n {
            self.samples.push(MetricSample {
                t,
                kind: MetricKind::Aoi,
                value: aoi[i],
                sensor_id: i,
            });
            self.samples.push(MetricSample {
                t,
                kind: MetricKind::VoiPull,
                value: voi[i],
                sensor_id: i,
            });
        }
        self.epochs.push(EpochRecord {
            t,
            chosen: None,
            aoi,
            voi,
            sq_error,
        });
        self.epochs.len() - 1
    }

    fn on_epoch(&mut self, k: &mut Kernel<TrackEvent>, idx: u64, t: SimTime) -> Result<()> {
        let row = self.record_epoch(t);
        if self.cfg.policy.is_push() {
            self.push_round(k, t, row)?;
        } else if idx.is_multiple_of(self.cfg.pull_period) {
            self.pull_round(k, t, row)?;
        }
        Ok(())
    }

    fn pull_round(&mut self, k: &mut Kernel<TrackEvent>, t: SimTime, row: usize) -> Result<()> {
        if self.in_flight_until.is_some_and(|d| t < d) {
            self.decisions.push(PollDecision {
                t,
                sensor: None,
                shadow: None,
            });
            return Ok(());
        }
        let chosen = decide_pull(&self.cfg.policy, &self.receiver, t, &mut self.policy_rng)?;
        let shadow = match &self.cfg.shadow {
            Some(s) => Some(decide_pull(s, &self.receiver, t, &mut self.shadow_rng)?),
            None => None,
        };
        self.decisions.push(PollDecision {
            t,
            sensor: Some(chosen),
            shadow,
        });
        self.epochs[row].chosen = Some(chosen);
        // the request itself reaches the sensor instantly and reliably
        self.send(k, chosen, t, false)?;
        let timeout = match self.cfg.pull_timeout {
            Some(s) => self.tb.ticks_for(s),
            None => self.epoch_ticks * self.cfg.pull_period,
        };
        self.in_flight_until = Some(t + timeout);
        Ok(())
    }

    fn push_round(&mut self, k: &mut Kernel<TrackEvent>, t: SimTime, row: usize) -> Result<()> {
        let ts = self.tb.seconds_of(t);
        let mut senders = Vec::new();
        for n in 0..self.senders.len() {
            let local: Vec<f64> = self.observe(n, t).into_iter().map(|(_, y)| y).collect();
            // one backoff draw per sensor per epoch keeps the streams aligned
            let u = self.backoff_rng.uniform();
            let s = &self.senders[n];
            if s.awaiting_ack {
                continue;
            }
            if decide_push(&self.cfg.policy, &local, &s.state, ts)? == PushDecision::Hold {
                continue;
            }
            if s.backing_off && u >= self.cfg.retry_prob {
                continue;
            }
            senders.push(n);
        }
        match senders.len() {
            0 => {}
            1 => {
                let n = senders[0];
                self.epochs[row].chosen = Some(n);
                let delivered = self.send(k, n, t, true)?;
                let s = &mut self.senders[n];
                s.state.last_send_time = Some(ts);
                s.backing_off = false;
                s.awaiting_ack = delivered;
            }
            _ => {
                self.collisions += 1;
                self.transmissions += senders.len() as u64;
                for n in senders {
                    let s = &mut self.senders[n];
                    s.state.last_send_time = Some(ts);
                    s.backing_off = true;
                }
            }
        }
        Ok(())
    }

    fn on_deliver(
        &mut self,
        now: SimTime,
        sensor: usize,
        values: Vec<(usize, f64)>,
        g: SimTime,
        pushed: bool,
    ) -> Result<()> {
        self.receiver.deliver(sensor, &values, g, now)?;
        self.deliveries += 1;
        self.samples.push(MetricSample {
            t: now,
            kind: MetricKind::Latency,
            value: self.tb.to_seconds(now.saturating_sub(g)),
            sensor_id: sensor,
        });
        let gs = self.tb.seconds_of(g);
        let now_s = self.tb.seconds_of(now);
        for (j, jump) in self.cfg.jumps.iter().enumerate() {
            if self.detections[j].is_none()
                && gs >= jump.time
                && values.iter().any(|(c, _)| *c == jump.component)
            {
                self.detections[j] = Some(now_s - jump.time);
            }
        }
        if pushed {
            let s = &mut self.senders[sensor];
            s.awaiting_ack = false;
            s.state.last_sent = Some(values.iter().map(|(_, y)| *y).collect());
        } else {
            self.in_flight_until = None;
        }
        Ok(())
    }
}

/// Runs one replication of a tracking scenario.
///
/// Decision epochs fall at `epoch, 2 epoch, ...` up to `duration`. At each
/// epoch the metrics are recorded first and then the policy acts: a pull
/// policy polls one sensor (one request in flight at a time, abandoned
/// after `pull_timeout`), a push policy lets every sensor decide.
pub fn run_tracking_experiment(cfg: &TrackingConfig) -> Result<TrackingRunResult> {
    cfg.validate()?;
    let tb = cfg.timebase;
    let root = RngStream::new(cfg.seed, "tracking");
    let receiver = Receiver::new(&cfg.components, cfg.field(), tb)?;
    let mut truth = Vec::new();
    let mut truth_rng = Vec::new();
    for (c, m) in cfg.components.iter().enumerate() {
        let mut rng = root.child(&format!("truth/{c}"));
        let prior = m.default_prior();
        let x0 = draw_from(&prior.belief, &mut rng);
        truth.push(PathSampler::new(m.clone(), prior.time, x0));
        truth_rng.push(rng);
    }
    let n = cfg.sensors.len();
    let mut tr = Tracker {
        cfg,
        tb,
        receiver,
        truth,
        truth_rng,
        noise_rng: (0..n).map(|i| root.child(&format!("noise/{i}"))).collect(),
        link_rng: root.child("link"),
        policy_rng: root.child("policy"),
        shadow_rng: root.child("shadow"),
        backoff_rng: root.child("backoff"),
        senders: vec![PushSender::default(); n],
        in_flight_until: None,
        epoch_ticks: tb.ticks_for(cfg.epoch),
        epochs: Vec::new(),
        decisions: Vec::new(),
        samples: Vec::new(),
        transmissions: 0,
        deliveries: 0,
        collisions: 0,
        detections: vec![None; cfg.jumps.len()],
    };
    let t_end = SimTime(tb.ticks_for(cfg.duration));
    let mut kernel: Kernel<TrackEvent> = Kernel::new();
    for (j, jump) in cfg.jumps.iter().enumerate() {
        kernel.schedule(SimTime(tb.ticks_for(jump.time)), TrackEvent::Jump(j))?;
    }
    if tr.epoch_ticks <= t_end.ticks() {
        kernel.schedule(SimTime(tr.epoch_ticks), TrackEvent::Epoch(1))?;
    }
    while let Some(ev) = kernel.next_event(t_end) {
        match ev.payload {
            TrackEvent::Epoch(k) => {
                tr.on_epoch(&mut kernel, k, ev.time)?;
                let next = SimTime(tr.epoch_ticks * (k + 1));
                if next <= t_end {
                    kernel.schedule(next, TrackEvent::Epoch(k + 1))?;
                }
            }
            TrackEvent::Jump(j) => {
                let jump = cfg.jumps[j];
                tr.truth_at(jump.component, ev.time);
                tr.truth[jump.component].perturb(jump.size);
            }
            TrackEvent::Deliver {
                sensor,
                values,
                g,
                pushed,
            } => tr.on_deliver(ev.time, sensor, values, g, pushed)?,
        }
    }

    let epochs_n = tr.epochs.len();
    let (mean_sq_error, mean_aoi) = if epochs_n == 0 {
        (0.0, 0.0)
    } else {
        let e = tr.epochs.iter().map(|e| e.sq_error).sum::<f64>() / epochs_n as f64;
        let a = tr
            .epochs
            .iter()
            .map(|e| e.aoi.iter().sum::<f64>() / n as f64)
            .sum::<f64>()
            / epochs_n as f64;
        (e, a)
    };
    let time_avg_aoi = if epochs_n == 0 {
        0.0
    } else {
        (0..n)
            .map(|i| {
                let h = sensor_history(&tr.receiver, i);
                time_average_aoi(&h, SimTime::ZERO, t_end, &tb, SimTime::ZERO)
            })
            .sum::<f64>()
            / n as f64
    };
    Ok(TrackingRunResult {
        timebase: tb,
        epochs: tr.epochs,
        decisions: tr.decisions,
        samples: tr.samples,
        transmissions: tr.transmissions,
        deliveries: tr.deliveries,
        collisions: tr.collisions,
        mean_sq_error,
        mean_aoi,
        time_avg_aoi,
        detection_delays: tr.detections,
        trace: kernel.trace().clone(),
    })
}

fn sensor_history(receiver: &Receiver, n: usize) -> History {
    let mut recs: Vec<UpdateRecord> = Vec::new();
    for c in &receiver.field().sensors[n].components {
        recs.extend(receiver.history(*c).records().iter().filter(|r| r.sensor_id == n));
    }
    recs.sort_by_key(|r| (r.r, r.g));
    recs.dedup_by_key(|r| (r.r, r.g));
    History::from_records(recs).unwrap_or_default()
}
