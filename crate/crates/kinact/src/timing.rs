//! Wall-clock helpers: IK time budgets, FPS benchmarks, latency percentiles.

use std::time::{Duration, Instant};

use kinact_core::ik::Budget;
use kinact_core::metrics::{fps_from_latencies, MetricsError, MIN_FPS_TRIALS};
use serde::{Deserialize, Serialize};

/// Budget that expires a fixed time after creation.
#[derive(Clone, Copy, Debug)]
pub struct Deadline(Instant);

impl Deadline {
    pub fn after(d: Duration) -> Self {
        Self(Instant::now() + d)
    }

    pub fn after_ms(ms: f64) -> Self {
        Self::after(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

impl Budget for Deadline {
    fn expired(&self) -> bool {
        Instant::now() >= self.0
    }
}

/// Seconds taken by each of `trials` calls of `op`, after `warmup` untimed calls.
pub fn time_trials<E>(mut op: impl FnMut() -> Result<(), E>, warmup: usize, trials: usize) -> Result<Vec<f64>, E> {
    for _ in 0..warmup {
        op()?;
    }
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t0 = Instant::now();
        op()?;
        out.push(t0.elapsed().as_secs_f64());
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError<E> {
    #[error(transparent)]
    Metrics(MetricsError),
    #[error(transparent)]
    Op(E),
}

/// Median inverse latency of `op`; needs at least ten trials.
pub fn fps_benchmark<E>(op: impl FnMut() -> Result<(), E>, warmup: usize, trials: usize) -> Result<f64, BenchError<E>> {
    if trials < MIN_FPS_TRIALS {
        return Err(BenchError::Metrics(MetricsError::TooFewTrials {
            min: MIN_FPS_TRIALS,
            got: trials,
        }));
    }
    let lat = time_trials(op, warmup, trials).map_err(BenchError::Op)?;
    fps_from_latencies(&lat).map_err(BenchError::Metrics)
}

/// Latency summary in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_secs(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s: Vec<f64> = samples.iter().map(|x| x * 1e3).collect();
        s.sort_by(f64::total_cmp);
        Self {
            count: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: percentile(&s, 50.0),
            p95_ms: percentile(&s, 95.0),
            max_ms: s[s.len() - 1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<f64> = (1..=100).map(|i| i as f64 / 1e3).collect();
        let st = LatencyStats::from_secs(&s);
        assert_eq!(st.count, 100);
        assert!((st.p50_ms - 50.0).abs() < 1e-9);
        assert!((st.p95_ms - 95.0).abs() < 1e-9);
        assert!((st.max_ms - 100.0).abs() < 1e-9);
        assert!((st.mean_ms - 50.5).abs() < 1e-9);
        assert_eq!(LatencyStats::from_secs(&[]).count, 0);
    }

    #[test]
    fn deadline_expires() {
        assert!(Deadline::after_ms(0.0).expired());
        assert!(!Deadline::after(Duration::from_secs(60)).expired());
    }

    #[test]
    fn sleeping_op_runs_near_100_fps() {
        let fps = fps_benchmark(
            || {
                std::thread::sleep(Duration::from_millis(10));
                Ok::<_, ()>(())
            },
            1,
            10,
        )
        .unwrap();
        assert!((fps - 100.0).abs() < 20.0, "{fps}");
    }

    #[test]
    fn too_few_trials_rejected() {
        let r = fps_benchmark(|| Ok::<_, ()>(()), 0, 9);
        assert!(matches!(r, Err(BenchError::Metrics(MetricsError::TooFewTrials { got: 9, .. }))));
    }

    #[test]
    fn pure_op_is_stable() {
        let work = || {
            let mut x = 0.0f64;
            for i in 0..20_000 {
                x = std::hint::black_box(x + (i as f64).sqrt());
            }
            std::hint::black_box(x);
            Ok::<_, ()>(())
        };
        let a = fps_benchmark(work, 20, 200).unwrap();
        let b = fps_benchmark(work, 20, 200).unwrap();
        assert!((a / b - 1.0).abs() < 0.3, "{a} vs {b}");
    }
}
