//! Virtual-time kernel: an integer-millisecond clock, a FIFO-stable event
//! queue, and labelled random streams forked from a single master seed.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Virtual time in milliseconds since scenario start.
pub type Millis = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule at {at} ms: clock is already at {now} ms")]
    InThePast { at: Millis, now: Millis },
    #[error("cannot run until {t_end} ms: clock is already at {now} ms")]
    RewindClock { t_end: Millis, now: Millis },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Millis,
}

impl SimClock {
    pub fn now(&self) -> Millis {
        self.now
    }

    fn advance_to(&mut self, t: Millis) {
        debug_assert!(t >= self.now, "clock must not run backwards");
        self.now = t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: Millis,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Discrete-event queue. Events with equal timestamps are dispatched in
/// insertion order.
pub struct EventQueue<E> {
    clock: SimClock,
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
    cancelled: BTreeSet<u64>,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            clock: SimClock::default(),
            heap: BinaryHeap::new(),
            next_seq: 0,
            cancelled: BTreeSet::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of events dispatched since creation.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(&mut self, at: Millis, event: E) -> Result<EventHandle, ScheduleError> {
        if at < self.clock.now() {
            return Err(ScheduleError::InThePast {
                at,
                now: self.clock.now(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, event }));
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` ms after the current time. Cannot fail.
    pub fn schedule_in(&mut self, delay: Millis, event: E) -> EventHandle {
        let at = self.clock.now() + delay;
        self.schedule(at, event).expect("future time is never in the past")
    }

    /// Marks a pending event as cancelled; it will be skipped silently.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    /// Timestamp of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<Millis> {
        self.skip_cancelled();
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    fn skip_cancelled(&mut self) {
        while let Some(Reverse(top)) = self.heap.peek() {
            if self.cancelled.remove(&top.seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Pops the next event due at or before `t_end`, advancing the clock to
    /// its timestamp.
    pub fn pop_due(&mut self, t_end: Millis) -> Option<(Millis, E)> {
        self.skip_cancelled();
        match self.heap.peek() {
            Some(Reverse(top)) if top.at <= t_end => {
                let Reverse(entry) = self.heap.pop().expect("peeked");
                self.clock.advance_to(entry.at);
                self.dispatched += 1;
                Some((entry.at, entry.event))
            }
            _ => None,
        }
    }

    /// Moves the clock forward without dispatching. Used after `pop_due`
    /// drains everything up to `t_end`.
    pub fn advance_to(&mut self, t_end: Millis) -> Result<(), ScheduleError> {
        if t_end < self.clock.now() {
            return Err(ScheduleError::RewindClock {
                t_end,
                now: self.clock.now(),
            });
        }
        self.clock.advance_to(t_end);
        Ok(())
    }

    /// Dispatches every event with timestamp `<= t_end` through `handler`,
    /// which may schedule further events. Leaves the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: Millis, mut handler: F) -> Result<u64, ScheduleError>
    where
        F: FnMut(&mut Self, Millis, E),
    {
        if t_end < self.clock.now() {
            return Err(ScheduleError::RewindClock {
                t_end,
                now: self.clock.now(),
            });
        }
        let mut count = 0;
        while let Some((at, ev)) = self.pop_due(t_end) {
            handler(self, at, ev);
            count += 1;
        }
        self.clock.advance_to(t_end);
        Ok(count)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A labelled deterministic random stream.
#[derive(Clone)]
pub struct RngStream {
    label: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream")
            .field("label", &self.label)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let derived = mix64(seed ^ fnv1a(label.as_bytes()));
        Self {
            label: label.to_owned(),
            seed: derived,
            rng: ChaCha8Rng::seed_from_u64(derived),
        }
    }

    /// Root stream for a world.
    pub fn master(seed: u64) -> Self {
        Self::new(seed, "master")
    }

    /// Child stream keyed by (this stream's seed, `label`). Independent of
    /// how many values have been drawn from `self` or from siblings.
    pub fn fork(&self, label: &str) -> RngStream {
        let seed = mix64(self.seed.wrapping_add(fnv1a(label.as_bytes())));
        RngStream {
            label: format!("{}/{}", self.label, label),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform() < p
        }
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.gen_range(0..n)
    }

    /// Exponential sample with the given mean, via inverse CDF.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        let u = self.uniform();
        -mean * (1.0 - u).ln()
    }

    /// Index drawn from unnormalized non-negative weights.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut x = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_now_dispatches_first() {
        let mut q = EventQueue::new();
        q.schedule(5, "late").unwrap();
        q.schedule(0, "now").unwrap();
        let mut seen = Vec::new();
        q.run_until(10, |_, _, e| seen.push(e)).unwrap();
        assert_eq!(seen, vec!["now", "late"]);
    }

    #[test]
    fn equal_timestamps_are_fifo() {
        let mut q = EventQueue::new();
        for i in 0..50 {
            q.schedule(100, i).unwrap();
        }
        let mut seen = Vec::new();
        q.run_until(100, |_, _, e| seen.push(e)).unwrap();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until(10, |_, _, _| {}).unwrap();
        assert_eq!(
            q.schedule(9, ()),
            Err(ScheduleError::InThePast { at: 9, now: 10 })
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run_until(1000, |_, _, _| {}).unwrap(), 0);
        assert_eq!(q.now(), 1000);
    }

    #[test]
    fn run_until_stops_at_boundary() {
        let mut q = EventQueue::new();
        for t in [10, 20, 30] {
            q.schedule(t, t).unwrap();
        }
        assert_eq!(q.run_until(25, |_, _, _| {}).unwrap(), 2);
        assert_eq!(q.now(), 25);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn handlers_may_schedule_followups() {
        let mut q = EventQueue::new();
        q.schedule(0, 0u32).unwrap();
        let mut seen = Vec::new();
        q.run_until(100, |q, at, n| {
            seen.push((at, n));
            if n < 3 {
                q.schedule(at + 10, n + 1).unwrap();
            }
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 0), (10, 1), (20, 2), (30, 3)]);
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut q = EventQueue::new();
        let h = q.schedule(5, 'a').unwrap();
        q.schedule(6, 'b').unwrap();
        q.cancel(h);
        let mut seen = Vec::new();
        q.run_until(10, |_, _, e| seen.push(e)).unwrap();
        assert_eq!(seen, vec!['b']);
    }

    #[test]
    fn rewinding_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until(50, |_, _, _| {}).unwrap();
        assert!(q.run_until(49, |_, _, _| {}).is_err());
    }

    #[test]
    fn forks_are_deterministic_and_distinct() {
        let root = RngStream::master(7);
        let mut a1 = root.fork("think");
        let mut a2 = root.fork("think");
        let mut b = root.fork("b");
        let xs: Vec<u64> = (0..16).map(|_| a1.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| a2.next_u64()).collect();
        let zs: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn fork_ignores_parent_draw_position() {
        let mut root = RngStream::master(11);
        let early = root.fork("child").next_u64();
        for _ in 0..100 {
            root.next_u64();
        }
        assert_eq!(root.fork("child").next_u64(), early);
    }

    #[test]
    fn per_client_streams_unaffected_by_extra_clients() {
        let root = RngStream::master(3);
        let draw = |n_clients: u64| -> Vec<Vec<u64>> {
            let mut streams: Vec<RngStream> =
                (0..n_clients).map(|c| root.fork(&format!("client/{c}"))).collect();
            (0..20)
                .map(|_| streams.iter_mut().map(|s| s.next_u64()).collect())
                .collect()
        };
        let small = draw(4);
        let big = draw(5);
        for (row_s, row_b) in small.iter().zip(&big) {
            assert_eq!(row_s[..], row_b[..4]);
        }
    }

    #[test]
    fn exponential_mean_is_close() {
        let mut s = RngStream::master(1);
        let n = 100_000;
        let mean = (0..n).map(|_| s.exponential(7000.0)).sum::<f64>() / n as f64;
        assert!((mean - 7000.0).abs() < 7000.0 * 0.02, "mean {mean}");
    }
}
