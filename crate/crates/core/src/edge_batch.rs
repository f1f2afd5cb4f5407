//! Batched multi-user edge inference with early exits.
//!
//! A model is a chain of layer blocks. Block `b` processes a batch of `m`
//! tasks in `a_b + c_b m` seconds, so the fixed memory-access cost `a_b` is
//! shared by the batch. A task leaves the batch at its exit block and its
//! result is returned at once, which shrinks the batch for later blocks.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkernel::{Kernel, PayloadTag, RngStream, SimTime, Timebase};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockCost {
    /// Fixed cost per batch, seconds.
    pub a: f64,
    /// Cost per task in the batch, seconds.
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelProfile {
    pub blocks: Vec<BlockCost>,
}

impl ModelProfile {
    pub fn uniform(layers: usize, a: f64, c: f64) -> Self {
        ModelProfile {
            blocks: vec![BlockCost { a, c }; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("profile", "needs at least one block"));
        }
        for b in &self.blocks {
            if !(b.a >= 0.0) || !(b.c > 0.0) || !b.a.is_finite() || !b.c.is_finite() {
                return Err(Error::invalid("profile", "need a >= 0 and c > 0"));
            }
        }
        Ok(())
    }

    pub fn block_time(&self, b: usize, m: usize) -> f64 {
        let cost = self.blocks[b];
        cost.a + cost.c * m as f64
    }

    /// Time for one task alone to reach exit block `exit` (1-based).
    pub fn solo_makespan(&self, exit: usize) -> f64 {
        (0..exit).map(|b| self.block_time(b, 1)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSchedule {
    /// Completion offset of each task from the batch start, seconds.
    pub offsets: Vec<f64>,
    /// Tasks still in the batch at each block.
    pub sizes: Vec<usize>,
    pub makespan: f64,
}

fn check_exits(profile: &ModelProfile, exits: &[usize]) -> Result<()> {
    if exits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&e) = exits.iter().find(|&&e| e == 0 || e > profile.layers()) {
        return Err(Error::invalid("exit", format!("block {e} outside 1..={}", profile.layers())));
    }
    Ok(())
}

/// Runs the blocks in order; a task exiting at block `b` finishes when
/// block `b` finishes. The batch stops after the deepest exit.
pub fn compute_batch(profile: &ModelProfile, exits: &[usize]) -> Result<BatchSchedule> {
    check_exits(profile, exits)?;
    let deepest = *exits.iter().max().expect("non-empty");
    let mut elapsed = 0.0;
    let mut done_at = vec![0.0; deepest + 1];
    let mut sizes = Vec::with_capacity(deepest);
    for b in 1..=deepest {
        let m = exits.iter().filter(|&&e| e >= b).count();
        sizes.push(m);
        elapsed += profile.block_time(b - 1, m);
        done_at[b] = elapsed;
    }
    Ok(BatchSchedule {
        offsets: exits.iter().map(|&e| done_at[e]).collect(),
        sizes,
        makespan: elapsed,
    })
}

// Tick offsets, rounding each block once so replays agree with the simulator.
fn batch_ticks(profile: &ModelProfile, exits: &[usize], tb: &Timebase) -> Result<(Vec<u64>, Vec<usize>, u64)> {
    let sched = compute_batch(profile, exits)?;
    let mut done_at = vec![0u64; sched.sizes.len() + 1];
    for (b, &m) in sched.sizes.iter().enumerate() {
        done_at[b + 1] = done_at[b] + tb.ticks_for(profile.block_time(b, m));
    }
    let offsets = exits.iter().map(|&e| done_at[e]).collect();
    Ok((offsets, sched.sizes, *done_at.last().expect("one block")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BatchPolicy {
    /// Wait for `b_max` queued tasks.
    FixedSize { b_max: usize },
    /// Start when `b_max` tasks are queued or the oldest has waited `wait` seconds.
    Timeout { b_max: usize, wait: f64 },
}

impl BatchPolicy {
    pub fn b_max(&self) -> usize {
        match *self {
            BatchPolicy::FixedSize { b_max } | BatchPolicy::Timeout { b_max, .. } => b_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_max() == 0 {
            return Err(Error::invalid("b_max", "must be at least 1"));
        }
        if let BatchPolicy::Timeout { wait, .. } = self {
            if !(*wait >= 0.0) {
                return Err(Error::invalid("wait", "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UplinkModel {
    Fixed { delay: f64 },
    /// `bits / rate` plus an exponential scheduling delay of the given mean.
    Rate { bits: f64, rate: f64, jitter_mean: f64 },
}

impl UplinkModel {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            UplinkModel::Fixed { delay } => delay >= 0.0,
            UplinkModel::Rate { bits, rate, jitter_mean } => bits >= 0.0 && rate > 0.0 && jitter_mean >= 0.0,
        };
        if !ok {
            return Err(Error::invalid("uplink", "delays and sizes must be non-negative, rate positive"));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            UplinkModel::Fixed { delay } => delay,
            UplinkModel::Rate { bits, rate, jitter_mean } => {
                let jitter = if jitter_mean > 0.0 {
                    Exp::new(1.0 / jitter_mean).expect("positive rate").sample(rng)
                } else {
                    0.0
                };
                bits / rate + jitter
            }
        }
    }
}

/// Accuracy requirement with its share of the task mix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Requirement {
    pub accuracy: f64,
    pub weight: f64,
}

/// Accuracy reached at each exit; a requirement maps to the first block
/// that meets it, or the last block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExitMap {
    pub block_accuracy: Vec<f64>,
}

impl ExitMap {
    pub fn exit_for(&self, accuracy: f64) -> usize {
        self.block_accuracy
            .iter()
            .position(|&a| a >= accuracy)
            .map_or(self.block_accuracy.len(), |b| b + 1)
    }

    fn validate(&self, layers: usize) -> Result<()> {
        if self.block_accuracy.len() != layers {
            return Err(Error::DimensionMismatch {
                expected: layers,
                got: self.block_accuracy.len(),
            });
        }
        if self.block_accuracy.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("exit_accuracy", "must be non-decreasing over blocks"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InferenceTask {
    pub id: usize,
    pub arrival: SimTime,
    pub uplink: u64,
    pub exit: usize,
}

impl InferenceTask {
    pub fn server_arrival(&self) -> SimTime {
        self.arrival + self.uplink
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    #[serde(default = "micros")]
    pub timebase: Timebase,
    pub profile: ModelProfile,
    pub exit_accuracy: ExitMap,
    pub requirements: Vec<Requirement>,
    /// Poisson arrival rate, tasks per second.
    pub arrival_rate: f64,
    /// Arrivals are generated over `[0, duration)` seconds.
    pub duration: f64,
    pub uplink: UplinkModel,
    pub policy: BatchPolicy,
    /// When false every task runs to the last block.
    #[serde(default = "yes")]
    pub early_exit: bool,
    /// Goodput counts tasks finishing within this end-to-end latency.
    #[serde(default)]
    pub deadline: Option<f64>,
    #[serde(default = "default_queue_cap")]
    pub queue_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

fn micros() -> Timebase {
    Timebase::MICROS
}

fn yes() -> bool {
    true
}

fn default_queue_cap() -> usize {
    10_000
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.exit_accuracy.validate(self.profile.layers())?;
        self.policy.validate()?;
        self.uplink.validate()?;
        if !(self.arrival_rate > 0.0) || !(self.duration > 0.0) {
            return Err(Error::invalid("arrival_rate", "rate and duration must be positive"));
        }
        if self.requirements.is_empty() || self.requirements.iter().any(|r| !(r.weight >= 0.0)) {
            return Err(Error::invalid("requirements", "need non-negative weights"));
        }
        if !(self.requirements.iter().map(|r| r.weight).sum::<f64>() > 0.0) {
            return Err(Error::invalid("requirements", "weights sum to zero"));
        }
        if self.deadline.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::invalid("deadline", "must be positive"));
        }
        Ok(())
    }

    /// The pinned workload for the batch-size sweep: four blocks of
    /// 2 ms + 0.5 ms per task, 300 tasks/s, 50 ms deadline.
    pub fn pinned() -> Self {
        EdgeConfig {
            timebase: Timebase::MICROS,
            profile: ModelProfile::uniform(4, 2e-3, 0.5e-3),
            exit_accuracy: ExitMap {
                block_accuracy: vec![0.6, 0.75, 0.85, 0.9],
            },
            requirements: vec![
                Requirement { accuracy: 0.6, weight: 0.25 },
                Requirement { accuracy: 0.75, weight: 0.25 },
                Requirement { accuracy: 0.85, weight: 0.25 },
                Requirement { accuracy: 0.9, weight: 0.25 },
            ],
            arrival_rate: 300.0,
            duration: 20.0,
            uplink: UplinkModel::Fixed { delay: 5e-3 },
            policy: BatchPolicy::FixedSize { b_max: 8 },
            early_exit: true,
            deadline: Some(0.05),
            queue_cap: default_queue_cap(),
            seed: 1,
        }
    }
}

/// Poisson arrivals with sampled uplink delays and exit blocks.
pub fn generate_tasks(cfg: &EdgeConfig, rng: &RngStream) -> Result<Vec<InferenceTask>> {
    cfg.validate()?;
    let tb = cfg.timebase;
    let mut arrivals = rng.child("arrivals");
    let mut uplink = rng.child("uplink");
    let mut mix = rng.child("requirements");
    let gap = Exp::new(cfg.arrival_rate).map_err(|e| Error::invalid("arrival_rate", e.to_string()))?;
    let total: f64 = cfg.requirements.iter().map(|r| r.weight).sum();
    let mut tasks = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut arrivals);
        if t >= cfg.duration {
            break;
        }
        let mut u = mix.uniform() * total;
        let req = cfg
            .requirements
            .iter()
            .find(|r| {
                let hit = u < r.weight;
                u -= r.weight;
                hit
            })
            .unwrap_or_else(|| cfg.requirements.last().expect("non-empty"));
        let exit = if cfg.early_exit {
            cfg.exit_accuracy.exit_for(req.accuracy)
        } else {
            cfg.profile.layers()
        };
        tasks.push(InferenceTask {
            id: tasks.len(),
            arrival: SimTime(tb.ticks_for(t)),
            uplink: tb.ticks_for(cfg.uplink.sample(&mut uplink)),
            exit,
        });
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRecord {
    pub id: usize,
    pub tasks: Vec<usize>,
    /// Latest server arrival among the batch's tasks.
    pub ready: SimTime,
    pub start: SimTime,
    pub end: SimTime,
    pub sizes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub task: InferenceTask,
    pub batch: usize,
    pub completion: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EdgeStats {
    pub tasks: usize,
    pub completed: usize,
    pub mean_latency: f64,
    pub p95_latency: f64,
    /// Completed tasks per second of arrival window.
    pub throughput: f64,
    /// Tasks meeting the deadline per second of arrival window.
    pub goodput: f64,
    pub mean_batch_size: f64,
    pub unstable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRunResult {
    pub timebase: Timebase,
    pub tasks: Vec<InferenceTask>,
    pub records: Vec<TaskRecord>,
    pub batches: Vec<BatchRecord>,
    pub stats: EdgeStats,
}

impl EdgeRunResult {
    /// Rows `arrival,batch,exit_block,e2e_latency` in seconds, task order.
    pub fn tasks_csv(&self) -> String {
        let tb = self.timebase;
        let mut out = String::from("task,arrival,batch,exit_block,e2e_latency\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.task.id,
                tb.seconds_of(r.task.arrival),
                r.batch,
                r.task.exit,
                tb.to_seconds(r.completion.0 - r.task.arrival.0)
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EdgeEvent {
    Arrive(usize),
    Timeout,
    Done,
}

impl PayloadTag for EdgeEvent {
    fn tag(&self) -> String {
        match self {
            EdgeEvent::Arrive(i) => format!("arrive:{i}"),
            EdgeEvent::Timeout => "timeout".into(),
            EdgeEvent::Done => "done".into(),
        }
    }
}

struct Server<'a> {
    cfg: &'a EdgeConfig,
    tasks: &'a [InferenceTask],
    queue: VecDeque<usize>,
    busy: bool,
    arrived: usize,
    batches: Vec<BatchRecord>,
    records: Vec<TaskRecord>,
}

impl Server<'_> {
    fn try_start(&mut self, k: &mut Kernel<EdgeEvent>) -> Result<()> {
        if self.busy || self.queue.is_empty() {
            return Ok(());
        }
        let now = k.now();
        let b_max = self.cfg.policy.b_max();
        let all_arrived = self.arrived == self.tasks.len();
        let go = self.queue.len() >= b_max
            || all_arrived
            || match self.cfg.policy {
                BatchPolicy::FixedSize { .. } => false,
                BatchPolicy::Timeout { wait, .. } => {
                    let oldest = self.tasks[self.queue[0]].server_arrival();
                    let due = oldest + self.cfg.timebase.ticks_for(wait);
                    if now < due {
                        k.schedule(due, EdgeEvent::Timeout)?;
                    }
                    now >= due
                }
            };
        if !go {
            return Ok(());
        }
        let n = self.queue.len().min(b_max);
        let ids: Vec<usize> = self.queue.drain(..n).collect();
        let exits: Vec<usize> = ids.iter().map(|&i| self.tasks[i].exit).collect();
        let (offsets, sizes, makespan) = batch_ticks(&self.cfg.profile, &exits, &self.cfg.timebase)?;
        let id = self.batches.len();
        for (&i, off) in ids.iter().zip(offsets) {
            self.records.push(TaskRecord {
                task: self.tasks[i],
                batch: id,
                completion: now + off,
            });
        }
        let ready = ids.iter().map(|&i| self.tasks[i].server_arrival()).max().expect("non-empty");
        self.batches.push(BatchRecord {
            id,
            tasks: ids,
            ready,
            start: now,
            end: now + makespan,
            sizes,
        });
        self.busy = true;
        k.schedule(now + makespan, EdgeEvent::Done)?;
        Ok(())
    }
}

/// Event-driven run of one server with a single batch in service at a time.
/// Tasks queued when the last task has reached the server are served
/// without waiting for a full batch.
pub fn simulate(cfg: &EdgeConfig) -> Result<EdgeRunResult> {
    let rng = RngStream::new(cfg.seed, "edge");
    let tasks = generate_tasks(cfg, &rng)?;
    simulate_tasks(cfg, tasks)
}

/// Runs the server on a given task list.
pub fn simulate_tasks(cfg: &EdgeConfig, tasks: Vec<InferenceTask>) -> Result<EdgeRunResult> {
    cfg.validate()?;
    let mut kernel: Kernel<EdgeEvent> = Kernel::new().without_trace();
    for t in &tasks {
        kernel.schedule(t.server_arrival(), EdgeEvent::Arrive(t.id))?;
    }
    let mut server = Server {
        cfg,
        tasks: &tasks,
        queue: VecDeque::new(),
        busy: false,
        arrived: 0,
        batches: Vec::new(),
        records: Vec::new(),
    };
    let mut unstable = false;
    while let Some(ev) = kernel.next_event(SimTime(u64::MAX)) {
        match ev.payload {
            EdgeEvent::Arrive(i) => {
                server.queue.push_back(i);
                server.arrived += 1;
                if server.queue.len() > cfg.queue_cap {
                    unstable = true;
                    break;
                }
            }
            EdgeEvent::Done => server.busy = false,
            EdgeEvent::Timeout => {}
        }
        server.try_start(&mut kernel)?;
    }
    let mut records = server.records;
    records.sort_by_key(|r| r.task.id);
    let batches = server.batches;
    let stats = summarize(cfg, &tasks, &records, &batches, unstable);
    Ok(EdgeRunResult {
        timebase: cfg.timebase,
        tasks,
        records,
        batches,
        stats,
    })
}

fn summarize(
    cfg: &EdgeConfig,
    tasks: &[InferenceTask],
    records: &[TaskRecord],
    batches: &[BatchRecord],
    unstable: bool,
) -> EdgeStats {
    let tb = cfg.timebase;
    let mut lat: Vec<f64> = records
        .iter()
        .map(|r| tb.to_seconds(r.completion.0 - r.task.arrival.0))
        .collect();
    lat.sort_by(f64::total_cmp);
    let n = lat.len();
    let mean = if n == 0 { f64::NAN } else { lat.iter().sum::<f64>() / n as f64 };
    // nearest-rank percentile
    let p95 = if n == 0 { f64::NAN } else { lat[(0.95 * n as f64).ceil() as usize - 1] };
    let met = match cfg.deadline {
        Some(d) => lat.iter().filter(|&&l| l <= d + 1e-12).count(),
        None => n,
    };
    EdgeStats {
        tasks: tasks.len(),
        completed: n,
        mean_latency: mean,
        p95_latency: p95,
        throughput: n as f64 / cfg.duration,
        goodput: met as f64 / cfg.duration,
        mean_batch_size: if batches.is_empty() {
            0.0
        } else {
            n as f64 / batches.len() as f64
        },
        unstable,
    }
}

/// Completion times when the batches of a previous run are served again in
/// the same order, each starting at the later of its readiness and the end
/// of the previous batch, with the given exit blocks.
pub fn replay(
    profile: &ModelProfile,
    tb: &Timebase,
    batches: &[BatchRecord],
    exits: &[usize],
) -> Result<Vec<Option<SimTime>>> {
    let mut completion = vec![None; exits.len()];
    let mut free = SimTime::ZERO;
    for b in batches {
        let e: Vec<usize> = b.tasks.iter().map(|&i| exits[i]).collect();
        let (offsets, _, makespan) = batch_ticks(profile, &e, tb)?;
        let start = b.ready.max(free);
        for (&i, off) in b.tasks.iter().zip(offsets) {
            completion[i] = Some(start + off);
        }
        free = start + makespan;
    }
    Ok(completion)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub b_max: usize,
    pub stats: EdgeStats,
}

/// Runs `cfg` once per batch cap, on the same arrivals.
pub fn sweep_batch_size(cfg: &EdgeConfig, caps: &[usize]) -> Result<Vec<SweepPoint>> {
    let tasks = generate_tasks(cfg, &RngStream::new(cfg.seed, "edge"))?;
    caps.iter()
        .map(|&b_max| {
            let mut c = cfg.clone();
            c.policy = match cfg.policy {
                BatchPolicy::FixedSize { .. } => BatchPolicy::FixedSize { b_max },
                BatchPolicy::Timeout { wait, .. } => BatchPolicy::Timeout { b_max, wait },
            };
            Ok(SweepPoint {
                b_max,
                stats: simulate_tasks(&c, tasks.clone())?.stats,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDemand {
    pub bits: f64,
    /// Spectral efficiency, bits per second per hertz.
    pub efficiency: f64,
    /// Uplink deadline, seconds.
    pub deadline: f64,
}

impl UserDemand {
    fn latency(&self, bandwidth: f64) -> f64 {
        if bandwidth <= 0.0 {
            f64::INFINITY
        } else {
            self.bits / (bandwidth * self.efficiency)
        }
    }
}

/// Greedy heuristic: bandwidth is handed out in `quanta` equal pieces, each
/// to the user whose uplink latency exceeds its deadline by the most (ties
/// to the lowest index). Returns the fraction of `total` given to each user.
pub fn allocate_bandwidth_greedy(users: &[UserDemand], total: f64, quanta: usize) -> Result<Vec<f64>> {
    if !(total > 0.0) || quanta == 0 {
        return Err(Error::invalid("bandwidth", "total and quanta must be positive"));
    }
    if users.iter().any(|u| !(u.bits >= 0.0) || !(u.efficiency > 0.0) || !(u.deadline > 0.0)) {
        return Err(Error::invalid("users", "need bits >= 0, efficiency > 0, deadline > 0"));
    }
    let mut units = vec![0usize; users.len()];
    let piece = total / quanta as f64;
    for _ in 0..quanta {
        let deficit = |i: usize| users[i].latency(units[i] as f64 * piece) - users[i].deadline;
        let mut best = None::<(usize, f64)>;
        for i in 0..users.len() {
            let d = deficit(i);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => units[i] += 1,
            None => break,
        }
    }
    Ok(units.iter().map(|&u| u as f64 / quanta as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_profile() -> ModelProfile {
        ModelProfile::uniform(3, 4.0, 1.0)
    }

    #[test]
    fn shrinking_batch_example() {
        let s = compute_batch(&unit_profile(), &[1, 1, 3, 3]).unwrap();
        assert_eq!(s.offsets, vec![8.0, 8.0, 20.0, 20.0]);
        assert_eq!(s.sizes, vec![4, 2, 2]);
        assert_eq!(s.makespan, 20.0);
    }

    #[test]
    fn all_exit_at_the_first_block() {
        let s = compute_batch(&unit_profile(), &[1, 1, 1]).unwrap();
        assert_eq!(s.offsets, vec![7.0; 3]);
        assert_eq!(s.sizes, vec![3]);
    }

    #[test]
    fn solo_task_runs_every_block() {
        let p = ModelProfile {
            blocks: vec![BlockCost { a: 1.0, c: 0.5 }, BlockCost { a: 2.0, c: 0.25 }],
        };
        let s = compute_batch(&p, &[2]).unwrap();
        assert_eq!(s.makespan, 3.75);
        assert_eq!(p.solo_makespan(2), 3.75);
    }

    #[test]
    fn bad_exits_are_rejected() {
        assert_eq!(compute_batch(&unit_profile(), &[]), Err(Error::EmptyBatch));
        assert!(compute_batch(&unit_profile(), &[0]).is_err());
        assert!(compute_batch(&unit_profile(), &[4]).is_err());
        assert!(ModelProfile::uniform(2, 1.0, 0.0).validate().is_err());
    }

    #[test]
    fn exit_map_takes_the_first_sufficient_block() {
        let m = ExitMap {
            block_accuracy: vec![0.5, 0.7, 0.9],
        };
        assert_eq!(m.exit_for(0.4), 1);
        assert_eq!(m.exit_for(0.7), 2);
        assert_eq!(m.exit_for(0.95), 3);
    }

    fn light_load() -> EdgeConfig {
        EdgeConfig {
            arrival_rate: 0.5,
            duration: 2000.0,
            policy: BatchPolicy::FixedSize { b_max: 1 },
            early_exit: false,
            ..EdgeConfig::pinned()
        }
    }

    #[test]
    fn empty_system_latency_is_uplink_plus_solo_compute() {
        let cfg = light_load();
        let res = simulate(&cfg).unwrap();
        let solo = cfg.profile.solo_makespan(4);
        // at 0.5 tasks/s a 10 ms service period almost never overlaps
        let alone = res
            .records
            .iter()
            .filter(|r| res.batches[r.batch].start == r.task.server_arrival())
            .count();
        assert!(alone as f64 >= 0.98 * res.records.len() as f64);
        for r in res.records.iter().filter(|r| res.batches[r.batch].start == r.task.server_arrival()) {
            let l = cfg.timebase.to_seconds(r.completion.0 - r.task.arrival.0);
            assert!((l - (5e-3 + solo)).abs() < 1e-9);
        }
    }

    #[test]
    fn timeout_zero_serves_greedily() {
        let cfg = EdgeConfig {
            policy: BatchPolicy::Timeout { b_max: 4, wait: 0.0 },
            duration: 2.0,
            ..EdgeConfig::pinned()
        };
        let res = simulate(&cfg).unwrap();
        let mut prev_end = SimTime::ZERO;
        for b in &res.batches {
            let earliest = b.tasks.iter().map(|&i| res.tasks[i].server_arrival()).min().unwrap();
            assert_eq!(b.start, earliest.max(prev_end));
            prev_end = b.end;
        }
        assert_eq!(res.stats.completed, res.stats.tasks);
    }

    #[test]
    fn overload_is_flagged() {
        let cfg = EdgeConfig {
            policy: BatchPolicy::FixedSize { b_max: 1 },
            queue_cap: 50,
            ..EdgeConfig::pinned()
        };
        assert!(simulate(&cfg).unwrap().stats.unstable);
    }

    #[test]
    fn replay_with_identical_exits_never_delays_a_task() {
        let cfg = EdgeConfig {
            policy: BatchPolicy::Timeout { b_max: 8, wait: 0.01 },
            duration: 2.0,
            ..EdgeConfig::pinned()
        };
        let res = simulate(&cfg).unwrap();
        let exits: Vec<usize> = res.tasks.iter().map(|t| t.exit).collect();
        let again = replay(&cfg.profile, &cfg.timebase, &res.batches, &exits).unwrap();
        // batches start no earlier than readiness, so replay can only be earlier
        for r in &res.records {
            assert!(again[r.task.id].unwrap() <= r.completion);
        }
    }

    fn user(deadline: f64) -> UserDemand {
        UserDemand {
            bits: 1e6,
            efficiency: 2.0,
            deadline,
        }
    }

    #[test]
    fn greedy_bandwidth_cases() {
        assert_eq!(allocate_bandwidth_greedy(&[user(0.1)], 1e6, 100).unwrap(), vec![1.0]);
        assert_eq!(
            allocate_bandwidth_greedy(&[user(0.1), user(0.1)], 1e6, 100).unwrap(),
            vec![0.5, 0.5]
        );
        let s = allocate_bandwidth_greedy(&[user(1.0), user(0.1)], 1e6, 100).unwrap();
        assert!(s[1] >= s[0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tasks_csv_has_one_row_per_completion() {
        let cfg = EdgeConfig {
            duration: 0.2,
            ..EdgeConfig::pinned()
        };
        let res = simulate(&cfg).unwrap();
        let csv = res.tasks_csv();
        assert!(csv.starts_with("task,arrival,batch,exit_block,e2e_latency\n"));
        assert_eq!(csv.lines().count(), res.records.len() + 1);
    }
}
