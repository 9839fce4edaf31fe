//! Domain types shared by the queue, endpoints, simulator and verifier:
//! identifiers, fixed-point simulation time, model updates and queue feedback.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use crate::OlafError;

/// Dense 0-based cluster identifier.
#[derive(
    Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClusterId(pub u16);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Globally unique worker identifier: a cluster plus an index within it.
#[derive(
    Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
pub struct WorkerId {
    pub cluster: ClusterId,
    pub index: u16,
}

impl WorkerId {
    pub fn new(cluster: ClusterId, index: u16) -> Self {
        WorkerId { cluster, index }
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}.{}", self.cluster.0, self.index)
    }
}

/// Simulation timestamp in integer nanoseconds since run start.
///
/// Fixed-point so that identical runs replay bit-identically; no float drift.
#[derive(
    Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// Span between two [`SimTime`]s, in integer nanoseconds.
#[derive(
    Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }
    pub fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }
    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }
    pub fn as_nanos(self) -> u64 {
        self.0
    }
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// Elapsed time since `earlier`, clamped at zero.
    pub fn saturating_since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);
    pub const MAX: SimDuration = SimDuration(u64::MAX);

    pub fn from_nanos(ns: u64) -> Self {
        SimDuration(ns)
    }
    pub fn from_micros(us: u64) -> Self {
        SimDuration(us * 1_000)
    }
    pub fn from_millis(ms: u64) -> Self {
        SimDuration(ms * 1_000_000)
    }
    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(secs >= 0.0 && secs.is_finite(), "duration must be finite and non-negative");
        SimDuration((secs * 1e9).round() as u64)
    }
    pub fn as_nanos(self) -> u64 {
        self.0
    }
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Wire time for `bits` on a link of `bits_per_sec`, rounded up to whole ns.
    pub fn for_bits(bits: u64, bits_per_sec: u64) -> Self {
        assert!(bits_per_sec > 0, "link capacity must be positive");
        let ns = (bits as u128 * 1_000_000_000u128).div_ceil(bits_per_sec as u128);
        SimDuration(u64::try_from(ns).expect("transmission time overflows u64 nanoseconds"))
    }

    pub fn saturating_sub(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_sub(rhs.0))
    }

    pub fn min(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.min(rhs.0))
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.checked_add(rhs.0).expect("simulation time overflow"))
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        *self = *self + rhs;
    }
}

impl Sub<SimTime> for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0.checked_sub(rhs.0).expect("negative simulation duration"))
    }
}

impl Add<SimDuration> for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.checked_add(rhs.0).expect("duration overflow"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One worker's gradient/reward message.
///
/// `origins` records which generated updates this message carries: a freshly
/// generated update holds exactly its own `(worker, gen_time)`, and in-queue
/// merges concatenate the lists. `agg_count` is the number of generated
/// updates merged in, and equals `origins.len()` at all times.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub worker: WorkerId,
    /// Generation timestamp of the freshest merged-in update.
    pub gen_time: SimTime,
    pub gradient: Vec<f64>,
    /// Mean episode reward claimed by this update.
    pub reward: f64,
    /// Number of generated worker updates merged into this one (>= 1).
    pub agg_count: u32,
    /// On-wire size; constant within a scenario (single-frame model).
    pub size_bits: u32,
    pub origins: Vec<(WorkerId, SimTime)>,
}

impl ModelUpdate {
    pub fn new(
        worker: WorkerId,
        gen_time: SimTime,
        gradient: Vec<f64>,
        reward: f64,
        size_bits: u32,
    ) -> Self {
        ModelUpdate {
            worker,
            gen_time,
            gradient,
            reward,
            agg_count: 1,
            size_bits,
            origins: vec![(worker, gen_time)],
        }
    }

    pub fn cluster(&self) -> ClusterId {
        self.worker.cluster
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }
}

/// Queue state piggybacked on ACKs traversing the accelerator.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct QueueFeedback {
    /// Number of active clusters sending through the accelerator (N).
    pub active_clusters: u32,
    /// Queue capacity in segments.
    pub q_max: u32,
    /// Occupied segments at the time the feedback was stamped.
    pub q_now: u32,
    pub emitted_at: SimTime,
}

/// The `(cluster, worker)` pair used for aggregation/replacement matching.
pub fn update_key(update: &ModelUpdate) -> (ClusterId, WorkerId) {
    (update.cluster(), update.worker)
}

/// Element-wise mean of two gradients, weighted by each side's `agg_count`.
///
/// Weighting by merge counts makes k-way opportunistic aggregation
/// order-insensitive.
pub fn merge_gradients(a: &ModelUpdate, b: &ModelUpdate) -> Result<Vec<f64>, OlafError> {
    if a.dim() != b.dim() {
        return Err(OlafError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let wa = a.agg_count as f64;
    let wb = b.agg_count as f64;
    let total = wa + wb;
    Ok(a.gradient
        .iter()
        .zip(&b.gradient)
        .map(|(x, y)| (wa * x + wb * y) / total)
        .collect())
}

/// Merge two updates into one aggregated update.
///
/// The result keeps the freshest generation timestamp, the better reward,
/// the weighted-mean gradient and the summed merge count. In-queue callers
/// only pair same-cluster updates; the server's running average also folds
/// across clusters.
pub fn merge_updates(resident: &ModelUpdate, incoming: &ModelUpdate) -> Result<ModelUpdate, OlafError> {
    let gradient = merge_gradients(resident, incoming)?;
    let (worker, gen_time) = if incoming.gen_time >= resident.gen_time {
        (incoming.worker, incoming.gen_time)
    } else {
        (resident.worker, resident.gen_time)
    };
    let mut origins = resident.origins.clone();
    origins.extend_from_slice(&incoming.origins);
    Ok(ModelUpdate {
        worker,
        gen_time,
        gradient,
        reward: resident.reward.max(incoming.reward),
        agg_count: resident.agg_count + incoming.agg_count,
        size_bits: resident.size_bits,
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn update(cluster: u16, index: u16, gradient: Vec<f64>, reward: f64) -> ModelUpdate {
        ModelUpdate::new(
            WorkerId::new(ClusterId(cluster), index),
            SimTime::ZERO,
            gradient,
            reward,
            2048,
        )
    }

    #[test]
    fn update_key_projects_ids() {
        let u = update(3, 7, vec![1.0], 5.0);
        assert_eq!(update_key(&u), (ClusterId(3), WorkerId::new(ClusterId(3), 7)));
        // same worker, same key
        let v = update(3, 7, vec![2.0], 9.0);
        assert_eq!(update_key(&u), update_key(&v));
        // different cluster differs in the first element
        let w = update(4, 7, vec![1.0], 5.0);
        assert_ne!(update_key(&u).0, update_key(&w).0);
    }

    #[test]
    fn merge_unweighted_mean() {
        let a = update(0, 0, vec![1.0, 1.0], 0.0);
        let b = update(0, 1, vec![3.0, 3.0], 0.0);
        assert_eq!(merge_gradients(&a, &b).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn merge_weighted_by_agg_count() {
        let mut a = update(0, 0, vec![0.0, 0.0], 0.0);
        a.agg_count = 3;
        let b = update(0, 1, vec![4.0, 0.0], 0.0);
        // (3*0 + 1*4) / 4 = 1
        assert_eq!(merge_gradients(&a, &b).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn merge_identical_operands_is_idempotent() {
        let a = update(0, 0, vec![2.5, -1.0], 0.0);
        assert_eq!(merge_gradients(&a, &a).unwrap(), a.gradient);
    }

    #[test]
    fn merge_dimension_mismatch_is_an_error() {
        let a = update(0, 0, vec![1.0], 0.0);
        let b = update(0, 1, vec![1.0, 2.0], 0.0);
        assert!(merge_gradients(&a, &b).is_err());
    }

    #[test]
    fn merged_metadata_takes_freshest_and_best() {
        let mut a = update(2, 0, vec![0.0], 4.0);
        a.gen_time = SimTime(100);
        let mut b = update(2, 1, vec![2.0], 3.0);
        b.gen_time = SimTime(250);
        let m = merge_updates(&a, &b).unwrap();
        assert_eq!(m.gen_time, SimTime(250));
        assert_eq!(m.worker, b.worker);
        assert_eq!(m.reward, 4.0);
        assert_eq!(m.agg_count, 2);
        assert_eq!(m.origins.len(), 2);
    }

    #[test]
    fn transmission_time_rounds_up() {
        assert_eq!(SimDuration::for_bits(2048, 40_000_000_000).as_nanos(), 52);
        assert_eq!(SimDuration::for_bits(2048, 1_000_000_000).as_nanos(), 2048);
    }

    proptest! {
        #[test]
        fn merge_is_commutative(
            g1 in proptest::collection::vec(-1e6f64..1e6, 1..64),
            g2 in proptest::collection::vec(-1e6f64..1e6, 1..64),
            c1 in 1u32..100,
            c2 in 1u32..100,
        ) {
            let n = g1.len().min(g2.len());
            let mut a = update(0, 0, g1[..n].to_vec(), 0.0);
            let mut b = update(0, 1, g2[..n].to_vec(), 0.0);
            a.agg_count = c1;
            b.agg_count = c2;
            let ab = merge_gradients(&a, &b).unwrap();
            let ba = merge_gradients(&b, &a).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
        }

        #[test]
        fn merge_is_associative_with_count_bookkeeping(
            g in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 3),
        ) {
            let a = update(0, 0, g[0].clone(), 0.0);
            let b = update(0, 1, g[1].clone(), 0.0);
            let c = update(0, 2, g[2].clone(), 0.0);
            let ab_c = merge_updates(&merge_updates(&a, &b).unwrap(), &c).unwrap();
            let a_bc = merge_updates(&a, &merge_updates(&b, &c).unwrap()).unwrap();
            for (x, y) in ab_c.gradient.iter().zip(&a_bc.gradient) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
            prop_assert_eq!(ab_c.agg_count, 3);
            prop_assert_eq!(a_bc.agg_count, 3);
        }
    }
}
