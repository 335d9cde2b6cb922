//! Deterministic discrete-event kernel: virtual clock, ordered event queue,
//! seeded randomness and run lifecycle.
//!
//! Events fire in `(fire_at, sequence)` order; the sequence number is a
//! monotone insertion counter, so simultaneous events run FIFO. All
//! randomness is derived from the run seed through SplitMix64 (Steele et
//! al., "Fast splittable pseudorandom number generators", OOPSLA 2014; the
//! finalizer constants are Vigna's reference implementation), which has a
//! portable, documented bit-stream. Packet-loss draws use a counter-indexed
//! variant keyed by `(flow, packet, link, attempt)` so loss outcomes do not
//! depend on event interleaving.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use thiserror::Error;

/// Virtual time in seconds. Finite and non-negative by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn from_secs(seconds: f64) -> Self {
        assert!(
            seconds.is_finite() && seconds >= 0.0,
            "SimTime must be finite and non-negative, got {seconds}"
        );
        SimTime(seconds)
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    pub fn bits(self) -> u64 {
        self.0.to_bits()
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::ops::Add<f64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: f64) -> SimTime {
        SimTime::from_secs(self.0 + rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {at} behind the clock {clock}")]
    ScheduleInPast { at: SimTime, clock: SimTime },
}

/// Kernel-level run parameters. Scenario parameters live in [`crate::config`].
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon: SimTime,
}

impl SimConfig {
    pub fn new(seed: u64, horizon_secs: f64) -> Self {
        assert!(horizon_secs > 0.0, "horizon must be > 0");
        SimConfig {
            seed,
            horizon: SimTime::from_secs(horizon_secs),
        }
    }
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_f64(bits: u64) -> f64 {
    // Top 53 bits -> [0, 1).
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential SplitMix64 stream seeded from the run seed.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }
}

/// Pure function of `(seed, domain, parts)`: the same tuple always yields the
/// same draw, whatever order the simulation asks in.
pub fn indexed_uniform(seed: u64, domain: u64, parts: &[u64]) -> f64 {
    let mut h = mix64(seed ^ domain);
    for &p in parts {
        h = mix64(h.wrapping_add(GAMMA) ^ p);
    }
    unit_f64(h)
}

/// Compact event descriptor carried for tracing and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventTag {
    pub kind: &'static str,
    pub a: u64,
    pub b: u64,
}

impl EventTag {
    pub fn new(kind: &'static str) -> Self {
        EventTag { kind, a: 0, b: 0 }
    }

    pub fn with(kind: &'static str, a: u64, b: u64) -> Self {
        EventTag { kind, a, b }
    }
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.kind, self.a, self.b)
    }
}

type Action<W> = Box<dyn FnOnce(&mut Simulation<W>)>;

struct Scheduled<W> {
    fire_at: SimTime,
    seq: u64,
    tag: EventTag,
    action: Action<W>,
}

impl<W> PartialEq for Scheduled<W> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<W> Eq for Scheduled<W> {}

impl<W> PartialOrd for Scheduled<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<W> Ord for Scheduled<W> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the earliest
        // (fire_at, seq) on top.
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct TraceRecord {
    time_bits: u64,
    seq: u64,
    tag: EventTag,
}

/// One simulation run. Owns the clock, the event queue, the world state and
/// every source of randomness; two runs with the same seed and the same
/// schedule of work replay bit-identically.
pub struct Simulation<W> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Scheduled<W>>,
    rng: StreamRng,
    seed: u64,
    trace: Option<Vec<TraceRecord>>,
    pub world: W,
}

impl<W> Simulation<W> {
    pub fn new(seed: u64, world: W) -> Self {
        Simulation {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            rng: StreamRng::new(seed),
            seed,
            trace: None,
            world,
        }
    }

    /// A run bounded by the config's horizon; see [`Simulation::run_until`].
    pub fn from_config(config: SimConfig, world: W) -> (Self, SimTime) {
        (Simulation::new(config.seed, world), config.horizon)
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Record `(time, sequence, tag)` for every executed event from now on.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Executed-event trace in a stable line format, for replay comparison.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        if let Some(trace) = &self.trace {
            for rec in trace {
                out.push_str(&format!("{:016x} {} {}\n", rec.time_bits, rec.seq, rec.tag));
            }
        }
        out
    }

    /// Queue `action` to run at `at`. Events fire in `(fire_at, seq)` order.
    pub fn schedule(
        &mut self,
        at: SimTime,
        tag: EventTag,
        action: impl FnOnce(&mut Simulation<W>) + 'static,
    ) -> Result<(), SimError> {
        if at < self.clock {
            return Err(SimError::ScheduleInPast {
                at,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled {
            fire_at: at,
            seq,
            tag,
            action: Box::new(action),
        });
        Ok(())
    }

    /// Run every event with `fire_at <= t`, then advance the clock to `t`.
    pub fn run_until(&mut self, t: SimTime) -> SimTime {
        assert!(t >= self.clock, "run_until target behind the clock");
        while let Some(head) = self.queue.peek() {
            if head.fire_at > t {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            debug_assert!(ev.fire_at >= self.clock, "clock regression");
            self.clock = ev.fire_at;
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRecord {
                    time_bits: ev.fire_at.bits(),
                    seq: ev.seq,
                    tag: ev.tag,
                });
            }
            (ev.action)(self);
        }
        self.clock = t;
        self.clock
    }

    /// Drain the queue completely; returns the time of the last event.
    pub fn run_to_completion(&mut self) -> SimTime {
        while let Some(head) = self.queue.peek() {
            let t = head.fire_at;
            self.run_until(t);
        }
        self.clock
    }

    /// Uniform draw in `[0, 1)` from the run's sequential stream.
    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.next_f64()
    }

    /// Order-independent uniform draw keyed by `(domain, parts)`.
    pub fn indexed_uniform(&self, domain: u64, parts: &[u64]) -> f64 {
        indexed_uniform(self.seed, domain, parts)
    }
}
