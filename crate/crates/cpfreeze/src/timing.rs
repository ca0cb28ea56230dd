//! Monotonic clock and a serial latency harness.

use std::time::Instant;

use cpfreeze_core::metrics::LatencyStats;
use cpfreeze_core::Clock;

/// Seconds since the clock was created, from `Instant`.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Warmup and repetition counts for one latency measurement.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingPlan {
    pub warmups: usize,
    pub repetitions: usize,
}

impl Default for TimingPlan {
    fn default() -> Self {
        Self { warmups: 3, repetitions: 10 }
    }
}

impl TimingPlan {
    /// One untimed-warmup-free sample; for count-only experiments.
    pub fn single() -> Self {
        Self { warmups: 0, repetitions: 1 }
    }
}

/// Runs `f` `warmups` times unrecorded, then `repetitions` times recorded,
/// on the calling thread.
pub fn measure_latency<F: FnMut()>(mut f: F, plan: TimingPlan) -> LatencyStats {
    assert!(plan.repetitions >= 1, "at least one repetition");
    for _ in 0..plan.warmups {
        f();
    }
    let samples = (0..plan.repetitions)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    LatencyStats::from_samples(samples).expect("clock samples are finite and non-negative")
}

/// Times `a` and `b` alternately, one call of each per repetition, so slow
/// drift of the host hits both sample sets alike.
pub fn measure_paired<A: FnMut(), B: FnMut()>(mut a: A, mut b: B, plan: TimingPlan) -> (LatencyStats, LatencyStats) {
    assert!(plan.repetitions >= 1, "at least one repetition");
    for _ in 0..plan.warmups {
        a();
        b();
    }
    let time = |f: &mut dyn FnMut()| {
        let t = Instant::now();
        f();
        t.elapsed().as_secs_f64()
    };
    let (mut sa, mut sb) = (Vec::with_capacity(plan.repetitions), Vec::with_capacity(plan.repetitions));
    for _ in 0..plan.repetitions {
        sa.push(time(&mut a));
        sb.push(time(&mut b));
    }
    let stats = |v| LatencyStats::from_samples(v).expect("clock samples are finite and non-negative");
    (stats(sa), stats(sb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn clock_is_monotonic() {
        let c = MonotonicClock::new();
        let a = c.now();
        let b = c.now();
        assert!(b >= a && a >= 0.0);
    }

    #[test]
    fn single_repetition_has_zero_spread() {
        let s = measure_latency(|| {}, TimingPlan { warmups: 0, repetitions: 1 });
        assert_eq!(s.samples.len(), 1);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn sleep_is_measured() {
        let s = measure_latency(|| std::thread::sleep(Duration::from_millis(10)), TimingPlan { warmups: 1, repetitions: 5 });
        assert!(s.mean >= 0.009 && s.mean <= 0.020, "mean {}", s.mean);
    }

    #[test]
    fn paired_keeps_the_two_workloads_apart() {
        let (a, b) = measure_paired(
            || std::thread::sleep(Duration::from_millis(2)),
            || std::thread::sleep(Duration::from_millis(8)),
            TimingPlan { warmups: 1, repetitions: 4 },
        );
        assert_eq!((a.samples.len(), b.samples.len()), (4, 4));
        assert!(a.median < b.median, "{} vs {}", a.median, b.median);
    }

    #[test]
    fn constant_work_is_stable() {
        let mut acc = 0u64;
        let s = measure_latency(
            || {
                for i in 0..200_000u64 {
                    acc = std::hint::black_box(acc.wrapping_mul(31).wrapping_add(i));
                }
            },
            TimingPlan::default(),
        );
        assert!(s.rsd_percent < 50.0, "rsd {}", s.rsd_percent);
    }
}
