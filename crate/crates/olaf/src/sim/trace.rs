//! Workload sources: replayed trace files and seeded synthetic generators.
//!
//! Trace files are plain CSV with one record per generated update, sorted by
//! generation time per worker:
//!
//! ```text
//! cluster,worker_index,gen_time_ns,reward,grad_seed
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::types::{ClusterId, SimDuration, SimTime, WorkerId};
use crate::OlafError;

/// One generated update in a workload trace.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct TraceRecord {
    pub worker: WorkerId,
    pub gen_time: SimTime,
    pub reward: f64,
    /// Seed from which the gradient payload is materialized.
    pub grad_seed: u64,
}

/// Deterministic seed mixer (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Materializes the gradient payload for a record.
pub fn gradient_for(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(-0.1..0.1)).collect()
}

/// Episodic emission shape shared with the scenario config.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BurstShape {
    pub size: u32,
    pub spacing: SimDuration,
}

/// Bounded random walk over the send phase, reseeded per cluster so cluster
/// mates wander together.
pub struct PhaseWalkState {
    width: i64,
    step: i64,
    position: i64,
    rng: ChaCha8Rng,
}

impl PhaseWalkState {
    pub fn new(width: SimDuration, step: SimDuration, cluster_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cluster_seed);
        let width = width.as_nanos() as i64;
        let position = rng.gen_range(0..=width);
        PhaseWalkState { width, step: step.as_nanos() as i64, position, rng }
    }

    /// Offset for round `k`; must be called with consecutive rounds.
    fn advance(&mut self) -> u64 {
        let current = self.position;
        let mut next = self.position + self.rng.gen_range(-self.step..=self.step);
        if next < 0 {
            next = -next;
        }
        if next > self.width {
            next = 2 * self.width - next;
        }
        self.position = next.clamp(0, self.width);
        current as u64
    }
}

/// Per-worker synthetic update stream: periodic generation with optional
/// fixed phase, per-update jitter and episodic bursts, rewards on a noisy
/// rising ramp.
pub struct SyntheticSource {
    worker: WorkerId,
    period: SimDuration,
    phase: SimDuration,
    jitter: SimDuration,
    burst: Option<BurstShape>,
    walk: Option<PhaseWalkState>,
    reward_base: f64,
    reward_slope: f64,
    reward_noise: f64,
    budget: Option<u32>,
    k: u32,
    last_emit: u64,
    rng: ChaCha8Rng,
}

impl SyntheticSource {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        worker: WorkerId,
        period: SimDuration,
        base_phase: SimDuration,
        phase_spread: SimDuration,
        jitter: SimDuration,
        burst: Option<BurstShape>,
        walk: Option<PhaseWalkState>,
        reward_base: f64,
        reward_slope: f64,
        reward_noise: f64,
        budget: Option<u32>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = if phase_spread.is_zero() {
            base_phase
        } else {
            base_phase + SimDuration(rng.gen_range(0..=phase_spread.as_nanos()))
        };
        SyntheticSource {
            worker,
            period,
            phase,
            jitter,
            burst,
            walk,
            reward_base,
            reward_slope,
            reward_noise,
            budget,
            k: 0,
            last_emit: 0,
            rng,
        }
    }
}

/// A stream of trace records for one worker.
pub trait UpdateSource {
    fn next_record(&mut self) -> Option<TraceRecord>;
}

impl UpdateSource for SyntheticSource {
    fn next_record(&mut self) -> Option<TraceRecord> {
        if let Some(budget) = self.budget {
            if self.k >= budget {
                return None;
            }
        }
        let k = self.k;
        self.k += 1;
        let base = match self.burst {
            None => self.phase.as_nanos() + u64::from(k) * self.period.as_nanos(),
            Some(b) => {
                let episode = u64::from(k / b.size);
                let within = u64::from(k % b.size);
                self.phase.as_nanos()
                    + episode * u64::from(b.size) * self.period.as_nanos()
                    + within * b.spacing.as_nanos()
            }
        };
        let jitter =
            if self.jitter.is_zero() { 0 } else { self.rng.gen_range(0..=self.jitter.as_nanos()) };
        let wander = self.walk.as_mut().map_or(0, PhaseWalkState::advance);
        // generation times never run backwards, whatever the jitter draw
        let at = (base + wander + jitter).max(self.last_emit + u64::from(self.k > 1));
        self.last_emit = at;
        let noise = if self.reward_noise == 0.0 {
            0.0
        } else {
            self.reward_noise * (self.rng.gen::<f64>() * 2.0 - 1.0)
        };
        let reward = self.reward_base + self.reward_slope * f64::from(k) + noise;
        Some(TraceRecord {
            worker: self.worker,
            gen_time: SimTime(at),
            reward,
            grad_seed: self.rng.gen(),
        })
    }
}

/// Replays a pre-recorded, per-worker-sorted record list.
pub struct TraceSource {
    records: std::collections::VecDeque<TraceRecord>,
}

impl TraceSource {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        TraceSource { records: records.into() }
    }
}

impl UpdateSource for TraceSource {
    fn next_record(&mut self) -> Option<TraceRecord> {
        self.records.pop_front()
    }
}

pub fn records_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from("cluster,worker_index,gen_time_ns,reward,grad_seed\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.worker.cluster.0,
            r.worker.index,
            r.gen_time.as_nanos(),
            r.reward,
            r.grad_seed
        ));
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<TraceRecord>, OlafError> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(OlafError::Config(format!(
                "trace line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |i: usize, what: &str| -> Result<u64, OlafError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|e| OlafError::Config(format!("trace line {}: bad {what}: {e}", lineno + 1)))
        };
        records.push(TraceRecord {
            worker: WorkerId::new(ClusterId(parse(0, "cluster")? as u16), parse(1, "worker")? as u16),
            gen_time: SimTime(parse(2, "gen_time")?),
            reward: fields[3].trim().parse().map_err(|e| {
                OlafError::Config(format!("trace line {}: bad reward: {e}", lineno + 1))
            })?,
            grad_seed: parse(4, "grad_seed")?,
        });
    }
    let mut last: std::collections::BTreeMap<WorkerId, SimTime> = Default::default();
    for r in &records {
        if let Some(prev) = last.insert(r.worker, r.gen_time) {
            if prev > r.gen_time {
                return Err(OlafError::Config(format!(
                    "trace not sorted by gen_time for {}",
                    r.worker
                )));
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_stream_is_deterministic_and_periodic() {
        let make = || {
            SyntheticSource::new(
                WorkerId::new(ClusterId(0), 0),
                SimDuration::from_nanos(1000),
                SimDuration::ZERO,
                SimDuration::ZERO,
                SimDuration::from_nanos(100),
                None,
                None,
                0.0,
                0.01,
                0.0,
                Some(5),
                42,
            )
        };
        let a: Vec<_> = std::iter::from_fn(|| make().next_record()).take(1).collect();
        let mut s1 = make();
        let mut s2 = make();
        let r1: Vec<_> = std::iter::from_fn(move || s1.next_record()).collect();
        let r2: Vec<_> = std::iter::from_fn(move || s2.next_record()).collect();
        assert_eq!(r1, r2);
        assert_eq!(r1.len(), 5);
        assert_eq!(r1[0].gen_time, a[0].gen_time);
        for (k, w) in r1.windows(2).enumerate() {
            let gap = w[1].gen_time.as_nanos() as i64 - w[0].gen_time.as_nanos() as i64;
            assert!((900..=1100).contains(&gap), "gap {gap} at {k}");
            assert!(w[1].reward >= w[0].reward, "ramp must rise without noise");
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut src = SyntheticSource::new(
            WorkerId::new(ClusterId(3), 1),
            SimDuration::from_nanos(500),
            SimDuration::ZERO,
            SimDuration::from_nanos(200),
            SimDuration::from_nanos(50),
            None,
            None,
            1.0,
            0.05,
            0.01,
            Some(10),
            7,
        );
        let records: Vec<_> = std::iter::from_fn(move || src.next_record()).collect();
        let parsed = records_from_csv(&records_to_csv(&records)).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn unsorted_trace_is_rejected() {
        let text = "cluster,worker_index,gen_time_ns,reward,grad_seed\n0,0,100,1.0,1\n0,0,50,1.0,2\n";
        assert!(records_from_csv(text).is_err());
    }
}
