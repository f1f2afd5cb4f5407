//! Deterministic event-driven simulation core.
//!
//! Time is kept as integer ticks. Events are ordered by `(time, seq)` where
//! `seq` is a monotone insertion counter, so simultaneous events fire in
//! FIFO order. Randomness comes from named [`RngStream`]s keyed by a root
//! seed and a label, which lets independent replications and subsystems
//! draw without sharing state.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;

/// A point on the simulation clock, in ticks.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

/// Duration of one tick as an exact rational number of seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timebase {
    pub num: u64,
    pub den: u64,
}

impl Default for Timebase {
    fn default() -> Self {
        Timebase::MILLIS
    }
}

impl Timebase {
    pub const MILLIS: Timebase = Timebase { num: 1, den: 1000 };
    pub const MICROS: Timebase = Timebase { num: 1, den: 1_000_000 };
    pub const SECONDS: Timebase = Timebase { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, Error> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidTimebase { num, den });
        }
        Ok(Timebase { num, den })
    }

    /// Exact elapsed seconds for `ticks` as a reduced fraction `(numerator, denominator)`.
    pub fn exact_seconds(&self, ticks: u64) -> (u128, u128) {
        let n = ticks as u128 * self.num as u128;
        let d = self.den as u128;
        let g = gcd(n, d);
        if g == 0 {
            (0, 1)
        } else {
            (n / g, d / g)
        }
    }

    /// Seconds for `ticks`, rounded once from the exact fraction.
    pub fn to_seconds(&self, ticks: u64) -> f64 {
        let (n, d) = self.exact_seconds(ticks);
        n as f64 / d as f64
    }

    pub fn seconds_of(&self, t: SimTime) -> f64 {
        self.to_seconds(t.0)
    }

    /// Nearest tick count for a duration in seconds (negative clamps to 0).
    pub fn ticks_for(&self, seconds: f64) -> u64 {
        if !(seconds > 0.0) {
            return 0;
        }
        (seconds * self.den as f64 / self.num as f64).round() as u64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Payloads name themselves for trace export.
pub trait PayloadTag {
    fn tag(&self) -> String;
}

impl PayloadTag for &'static str {
    fn tag(&self) -> String {
        (*self).to_string()
    }
}

impl PayloadTag for String {
    fn tag(&self) -> String {
        self.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: P,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: SimTime,
    pub seq: u64,
    pub tag: String,
}

/// Ordered record of processed events.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub entries: Vec<TraceEntry>,
}

impl EventTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV rows `time_ticks,seq,payload_tag` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ticks,seq,payload_tag\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.time.0, e.seq, e.tag);
        }
        out
    }
}

struct Queued<P> {
    time: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Single-threaded event scheduler.
pub struct Kernel<P> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    record_trace: bool,
    trace: EventTrace,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            record_trace: true,
            trace: EventTrace::default(),
        }
    }

    /// Disables trace recording for long runs where only results matter.
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues `payload` at `time` and returns the assigned sequence number.
    pub fn schedule(&mut self, time: SimTime, payload: P) -> Result<u64, Error> {
        if time < self.clock {
            return Err(Error::ScheduleInPast {
                at: time.0,
                now: self.clock.0,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { time, seq, payload }));
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay_ticks: u64, payload: P) -> Result<u64, Error> {
        let at = self.clock + delay_ticks;
        self.schedule(at, payload)
    }

    /// Pops the next event if it fires at or before `t_end`, advancing the clock.
    pub fn next_event(&mut self, t_end: SimTime) -> Option<Event<P>>
    where
        P: PayloadTag,
    {
        match self.queue.peek() {
            Some(Reverse(q)) if q.time <= t_end => {}
            _ => return None,
        }
        let Reverse(q) = self.queue.pop()?;
        self.clock = q.time;
        if self.record_trace {
            self.trace.entries.push(TraceEntry {
                time: q.time,
                seq: q.seq,
                tag: q.payload.tag(),
            });
        }
        Some(Event {
            time: q.time,
            seq: q.seq,
            payload: q.payload,
        })
    }

    /// Processes every event with `time <= t_end` in `(time, seq)` order,
    /// then sets the clock to `t_end`. The handler may schedule more events.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<EventTrace, Error>
    where
        P: PayloadTag,
        F: FnMut(&mut Kernel<P>, Event<P>) -> Result<(), Error>,
    {
        let start = self.trace.entries.len();
        while let Some(ev) = self.next_event(t_end) {
            handler(self, ev)?;
        }
        if t_end > self.clock {
            self.clock = t_end;
        }
        Ok(EventTrace {
            entries: self.trace.entries[start..].to_vec(),
        })
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }
}

/// Root of a family of named random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeder {
    pub root_seed: u64,
}

impl Seeder {
    pub fn new(root_seed: u64) -> Self {
        Seeder { root_seed }
    }

    pub fn substream(&self, name: &str) -> RngStream {
        RngStream::new(self.root_seed, name)
    }
}

/// Counter-based random stream keyed by `(root_seed, name)`.
///
/// The key is a SHA-256 digest of the seed and label; draws come from a
/// ChaCha12 block function whose internal word counter advances per draw.
#[derive(Clone, Debug)]
pub struct RngStream {
    root_seed: u64,
    name: String,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, name: &str) -> Self {
        assert!(!name.is_empty(), "stream name must be non-empty");
        let mut h = Sha256::new();
        h.update(b"goalsim.rng.v1");
        h.update(root_seed.to_le_bytes());
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        RngStream {
            root_seed,
            name: name.to_string(),
            inner: ChaCha12Rng::from_seed(key),
        }
    }

    /// Independent child stream, labelled `<parent>/<name>`.
    pub fn child(&self, name: &str) -> RngStream {
        assert!(!name.is_empty(), "stream name must be non-empty");
        RngStream::new(self.root_seed, &format!("{}/{}", self.name, name))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // Lemire's multiply-shift with rejection, platform independent.
        loop {
            let x = self.inner.next_u64();
            let m = x as u128 * n as u128;
            let low = m as u64;
            if low >= n.wrapping_neg() % n {
                return (m >> 64) as u64;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earlier_event_fires_first() {
        let mut k: Kernel<&'static str> = Kernel::new();
        k.schedule(SimTime(5), "late").unwrap();
        k.schedule(SimTime(3), "early").unwrap();
        let trace = k.run_until(SimTime(10), |_, _| Ok(())).unwrap();
        let tags: Vec<_> = trace.entries.iter().map(|e| e.tag.as_str()).collect();
        assert_eq!(tags, ["early", "late"]);
    }

    #[test]
    fn simultaneous_events_are_fifo() {
        let mut k: Kernel<&'static str> = Kernel::new();
        k.schedule(SimTime(7), "a").unwrap();
        k.schedule(SimTime(7), "b").unwrap();
        let trace = k.run_until(SimTime(7), |_, _| Ok(())).unwrap();
        assert_eq!(trace.entries[0].tag, "a");
        assert_eq!(trace.entries[1].tag, "b");
        assert!(trace.entries[0].seq < trace.entries[1].seq);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut k: Kernel<&'static str> = Kernel::new();
        k.run_until(SimTime(4), |_, _| Ok(())).unwrap();
        assert_eq!(
            k.schedule(SimTime(2), "x"),
            Err(Error::ScheduleInPast { at: 2, now: 4 })
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut k: Kernel<&'static str> = Kernel::new();
        let trace = k.run_until(SimTime(10), |_, _| Ok(())).unwrap();
        assert!(trace.is_empty());
        assert_eq!(k.now(), SimTime(10));
    }

    #[test]
    fn trace_order_and_seq() {
        let mut k: Kernel<&'static str> = Kernel::new();
        for t in [1, 1, 3] {
            k.schedule(SimTime(t), "e").unwrap();
        }
        let trace = k.run_until(SimTime(5), |_, _| Ok(())).unwrap();
        let got: Vec<_> = trace.entries.iter().map(|e| (e.time.0, e.seq)).collect();
        assert_eq!(got, [(1, 0), (1, 1), (3, 2)]);
        assert!(trace.to_csv().starts_with("time_ticks,seq,payload_tag\n1,0,e\n"));
    }

    #[test]
    fn events_beyond_horizon_stay_queued() {
        let mut k: Kernel<&'static str> = Kernel::new();
        k.schedule(SimTime(20), "later").unwrap();
        let trace = k.run_until(SimTime(10), |_, _| Ok(())).unwrap();
        assert!(trace.is_empty());
        assert_eq!(k.pending(), 1);
    }

    #[test]
    fn handler_can_reschedule() {
        let mut k: Kernel<String> = Kernel::new();
        k.schedule(SimTime(0), "tick".to_string()).unwrap();
        let trace = k
            .run_until(SimTime(9), |k, ev| {
                k.schedule_in(3, ev.payload).map(|_| ())
            })
            .unwrap();
        let times: Vec<_> = trace.entries.iter().map(|e| e.time.0).collect();
        assert_eq!(times, [0, 3, 6, 9]);
    }

    #[test]
    fn exact_tick_conversion() {
        let tb = Timebase::MILLIS;
        assert_eq!(tb.to_seconds(1500), 1.5);
        assert_eq!(tb.exact_seconds(1500), (3, 2));
        let third = Timebase::new(1, 3).unwrap();
        assert_eq!(third.exact_seconds(6), (2, 1));
        assert!(Timebase::new(0, 3).is_err());
    }

    #[test]
    fn same_name_same_draws() {
        let s = Seeder::new(42);
        let mut a = s.substream("noise");
        let mut b = s.substream("noise");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.counter(), 200);
    }

    #[test]
    fn named_substreams_are_uncorrelated() {
        let s = Seeder::new(42);
        let mut a = s.substream("noise");
        let mut b = s.substream("arrivals");
        let n = 100_000;
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform();
            let y = b.uniform();
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let va = saa / nf - (sa / nf).powi(2);
        let vb = sbb / nf - (sb / nf).powi(2);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.01, "corr = {corr}");
    }

    #[test]
    fn different_root_seeds_differ() {
        let mut a = Seeder::new(1).substream("noise");
        let mut b = Seeder::new(2).substream("noise");
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn below_is_in_range() {
        let mut r = Seeder::new(3).substream("below");
        for n in [1u64, 2, 3, 7, 1 << 40] {
            for _ in 0..200 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn child_streams_are_distinct() {
        let root = Seeder::new(9).substream("rep");
        let mut a = root.child("0");
        let mut b = root.child("1");
        assert_eq!(a.name(), "rep/0");
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
