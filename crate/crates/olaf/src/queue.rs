//! Queue disciplines for the accelerator switch.
//!
//! [`OlafQueue`] stores at most one matchable update per cluster: an arriving
//! update is merged with (or replaces) the resident update of its cluster in
//! place, inheriting the resident's departure position. Only when its cluster
//! is absent does it take a fresh segment, and only when the queue is also
//! full is it dropped. [`FifoQueue`] is the tail-drop baseline behind the same
//! interface.
//!
//! The segment bookkeeping mirrors the hardware design: a fixed pool of
//! single-update segments, two cyclic address lists (free and outbound), a
//! per-cluster status map and per-cluster replaceability flags.

use std::collections::BTreeMap;

use crate::types::{ClusterId, ModelUpdate, SimTime, WorkerId};
use crate::{types, OlafError};

/// What happened to an arriving update.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum EnqueueKind {
    Appended,
    Replaced,
    Aggregated,
    DroppedFull,
    DroppedLowReward,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct EnqueueOutcome {
    pub kind: EnqueueKind,
    /// Segment written, for outcomes that stored the update.
    pub slot: Option<usize>,
}

impl EnqueueOutcome {
    fn dropped(kind: EnqueueKind) -> Self {
        EnqueueOutcome { kind, slot: None }
    }
    pub fn is_drop(&self) -> bool {
        matches!(self.kind, EnqueueKind::DroppedFull | EnqueueKind::DroppedLowReward)
    }
}

/// Point-in-time view of a queue.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct QueueSnapshot {
    /// Occupied segments, including one locked in service.
    pub q_now: usize,
    pub q_max: usize,
    pub full: bool,
    pub active_clusters: Vec<ClusterId>,
}

/// Common surface of the Olaf and FIFO disciplines.
///
/// Implementations are deterministic given the call sequence. `begin_service`
/// locks the head for transmission without freeing its segment;
/// `complete_service` releases the segment once the update has left.
pub trait QueueDiscipline {
    fn enqueue(&mut self, update: ModelUpdate, now: SimTime) -> EnqueueOutcome;
    fn begin_service(&mut self, now: SimTime) -> Option<ModelUpdate>;
    fn complete_service(&mut self, now: SimTime) -> Result<(), OlafError>;
    fn snapshot(&self) -> QueueSnapshot;
}

/// Fixed-capacity cyclic list of segment addresses.
///
/// Models the hardware's circular address registers: `pop_front` advances the
/// read/write pointer, `push_back` is the append pointer.
#[derive(Clone, Debug)]
struct AddrRing {
    slots: Vec<usize>,
    head: usize,
    len: usize,
}

impl AddrRing {
    fn with_capacity(cap: usize) -> Self {
        AddrRing { slots: vec![0; cap], head: 0, len: 0 }
    }

    fn filled(cap: usize) -> Self {
        AddrRing { slots: (0..cap).collect(), head: 0, len: cap }
    }

    fn len(&self) -> usize {
        self.len
    }

    fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn push_back(&mut self, addr: usize) {
        assert!(self.len < self.slots.len(), "cyclic address list overflow");
        let tail = (self.head + self.len) % self.slots.len();
        self.slots[tail] = addr;
        self.len += 1;
    }

    fn pop_front(&mut self) -> Option<usize> {
        if self.len == 0 {
            return None;
        }
        let addr = self.slots[self.head];
        self.head = (self.head + 1) % self.slots.len();
        self.len -= 1;
        Some(addr)
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |i| self.slots[(self.head + i) % self.slots.len()])
    }
}

/// Per-cluster circular head/tail tracking.
///
/// A cluster holds at most two segments, and two only while the first is
/// locked in service. `head == tail` means no queued update.
#[derive(Clone, Copy, Debug, Default)]
struct ClusterTrack {
    entries: [usize; 2],
    head: u8,
    tail: u8,
}

impl ClusterTrack {
    fn len(&self) -> usize {
        (self.tail.wrapping_sub(self.head) % 4) as usize
    }

    fn push(&mut self, slot: usize) {
        assert!(self.len() < 2, "cluster already holds two updates");
        self.entries[(self.tail % 2) as usize] = slot;
        self.tail = (self.tail + 1) % 4;
    }

    fn front(&self) -> Option<usize> {
        (self.len() > 0).then(|| self.entries[(self.head % 2) as usize])
    }

    fn back(&self) -> Option<usize> {
        (self.len() > 0).then(|| self.entries[((self.tail + 3) % 4 % 2) as usize])
    }

    fn pop_front(&mut self) -> Option<usize> {
        let slot = self.front()?;
        self.head = (self.head + 1) % 4;
        Some(slot)
    }
}

#[derive(Clone, Copy, Debug)]
struct ReplaceStatus {
    flag: bool,
    worker: WorkerId,
}

/// The opportunistic-aggregation queue.
pub struct OlafQueue {
    segments: Vec<Option<ModelUpdate>>,
    available_addrs: AddrRing,
    out_addrs: AddrRing,
    cluster_status: BTreeMap<ClusterId, ClusterTrack>,
    replace_status: BTreeMap<ClusterId, ReplaceStatus>,
    in_service: Option<usize>,
    /// Reward-comparability threshold for the aggregate-or-replace decision.
    reward_threshold: f64,
}

impl OlafQueue {
    pub fn new(q_max: usize, reward_threshold: f64) -> Self {
        assert!(q_max > 0, "queue needs at least one segment");
        assert!(reward_threshold >= 0.0);
        OlafQueue {
            segments: vec![None; q_max],
            available_addrs: AddrRing::filled(q_max),
            out_addrs: AddrRing::with_capacity(q_max),
            cluster_status: BTreeMap::new(),
            replace_status: BTreeMap::new(),
            in_service: None,
            reward_threshold,
        }
    }

    fn q_max(&self) -> usize {
        self.segments.len()
    }

    fn is_full(&self) -> bool {
        self.available_addrs.is_empty()
    }

    /// The cluster's matchable segment: its most recent unlocked entry.
    fn matchable_slot(&self, cluster: ClusterId) -> Option<usize> {
        let track = self.cluster_status.get(&cluster)?;
        let slot = track.back()?;
        if Some(slot) == self.in_service {
            return None;
        }
        Some(slot)
    }

    /// Aggregate, replace or drop against the resident update, by reward gap.
    fn reward_gated_compute(&mut self, slot: usize, incoming: ModelUpdate) -> EnqueueOutcome {
        let resident = self.segments[slot].as_ref().expect("matchable slot must be occupied");
        let gap = incoming.reward - resident.reward;
        if gap.abs() <= self.reward_threshold {
            let merged = types::merge_updates(resident, &incoming)
                .expect("same-scenario updates share one gradient dimension");
            self.segments[slot] = Some(merged);
            EnqueueOutcome { kind: EnqueueKind::Aggregated, slot: Some(slot) }
        } else if gap > 0.0 {
            self.segments[slot] = Some(incoming);
            EnqueueOutcome { kind: EnqueueKind::Replaced, slot: Some(slot) }
        } else {
            EnqueueOutcome::dropped(EnqueueKind::DroppedLowReward)
        }
    }

    /// Consistency check over the full state; used by the property suites.
    pub fn validate(&self) -> Result<(), String> {
        let occupied = self.segments.iter().filter(|s| s.is_some()).count();
        if self.available_addrs.len() + self.out_addrs.len() + usize::from(self.in_service.is_some())
            != self.q_max()
        {
            return Err("free + occupied address count != q_max".into());
        }
        if occupied != self.out_addrs.len() + usize::from(self.in_service.is_some()) {
            return Err("occupied segments out of sync with address lists".into());
        }
        for addr in self.available_addrs.iter() {
            if self.segments[addr].is_some() {
                return Err(format!("free-listed segment {addr} is occupied"));
            }
        }
        for addr in self.out_addrs.iter() {
            if self.segments[addr].is_none() {
                return Err(format!("outbound segment {addr} is empty"));
            }
        }
        for (cluster, track) in &self.cluster_status {
            let n = track.len();
            if n == 0 || n > 2 {
                return Err(format!("{cluster} tracks {n} entries"));
            }
            if n == 2 && Some(track.front().unwrap()) != self.in_service {
                return Err(format!("{cluster} holds two entries but its head is not in service"));
            }
            let mut unlocked = 0;
            for i in 0..n {
                let slot = if i == 0 { track.front().unwrap() } else { track.back().unwrap() };
                match &self.segments[slot] {
                    Some(u) if u.cluster() == *cluster => {}
                    _ => return Err(format!("{cluster} tracks segment {slot} it does not own")),
                }
                if Some(slot) != self.in_service {
                    unlocked += 1;
                }
            }
            if unlocked > 1 {
                return Err(format!("{cluster} has {unlocked} unlocked entries"));
            }
        }
        for (slot, seg) in self.segments.iter().enumerate() {
            if let Some(u) = seg {
                let track = self
                    .cluster_status
                    .get(&u.cluster())
                    .ok_or_else(|| format!("segment {slot} belongs to an untracked cluster"))?;
                let tracked = track.front() == Some(slot) || track.back() == Some(slot);
                if !tracked {
                    return Err(format!("segment {slot} not referenced by its cluster track"));
                }
            }
        }
        for (cluster, rs) in &self.replace_status {
            if rs.flag {
                let slot = self
                    .matchable_slot(*cluster)
                    .ok_or_else(|| format!("{cluster} flagged replaceable with no unlocked entry"))?;
                let u = self.segments[slot].as_ref().unwrap();
                if u.worker != rs.worker || u.agg_count != 1 {
                    return Err(format!("{cluster} replace flag inconsistent with resident"));
                }
            }
        }
        Ok(())
    }
}

impl QueueDiscipline for OlafQueue {
    fn enqueue(&mut self, update: ModelUpdate, _now: SimTime) -> EnqueueOutcome {
        let cluster = update.cluster();

        if let Some(slot) = self.matchable_slot(cluster) {
            let status = self.replace_status.get(&cluster).copied();
            if let Some(rs) = status.filter(|rs| rs.flag) {
                // Same-worker replacement needs both sides unaggregated.
                if rs.worker == update.worker && update.agg_count == 1 {
                    self.segments[slot] = Some(update);
                    return EnqueueOutcome { kind: EnqueueKind::Replaced, slot: Some(slot) };
                }
                let outcome = self.reward_gated_compute(slot, update);
                self.replace_status.insert(cluster, ReplaceStatus { flag: false, worker: rs.worker });
                return outcome;
            }
            return self.reward_gated_compute(slot, update);
        }

        // Cluster absent for matching (possibly present but locked in service).
        if self.is_full() {
            return EnqueueOutcome::dropped(EnqueueKind::DroppedFull);
        }
        let slot = self.available_addrs.pop_front().expect("queue not full");
        let track = self.cluster_status.entry(cluster).or_default();
        let second_entry = track.len() > 0;
        // A second entry behind a locked head is never replaceable.
        let flag = !second_entry && update.agg_count == 1;
        self.replace_status.insert(cluster, ReplaceStatus { flag, worker: update.worker });
        track.push(slot);
        self.segments[slot] = Some(update);
        self.out_addrs.push_back(slot);
        EnqueueOutcome { kind: EnqueueKind::Appended, slot: Some(slot) }
    }

    fn begin_service(&mut self, _now: SimTime) -> Option<ModelUpdate> {
        if self.in_service.is_some() {
            return None;
        }
        let slot = self.out_addrs.pop_front()?;
        self.in_service = Some(slot);
        // The locked head no longer matches incoming updates of its cluster,
        // so clear its replaceability.
        let update = self.segments[slot].clone().expect("outbound segment occupied");
        if let Some(rs) = self.replace_status.get_mut(&update.cluster()) {
            rs.flag = false;
        }
        Some(update)
    }

    fn complete_service(&mut self, _now: SimTime) -> Result<(), OlafError> {
        let slot = self.in_service.take().ok_or(OlafError::NothingInService)?;
        let update = self.segments[slot].take().expect("in-service segment occupied");
        self.available_addrs.push_back(slot);
        let cluster = update.cluster();
        let track = self.cluster_status.get_mut(&cluster).expect("served cluster is tracked");
        let popped = track.pop_front();
        debug_assert_eq!(popped, Some(slot));
        if track.len() == 0 {
            self.cluster_status.remove(&cluster);
            self.replace_status.remove(&cluster);
        }
        Ok(())
    }

    fn snapshot(&self) -> QueueSnapshot {
        let q_now = self.out_addrs.len() + usize::from(self.in_service.is_some());
        QueueSnapshot {
            q_now,
            q_max: self.q_max(),
            full: q_now == self.q_max(),
            active_clusters: self.cluster_status.keys().copied().collect(),
        }
    }
}

/// Tail-drop FIFO baseline with the same service-locking semantics.
pub struct FifoQueue {
    queue: std::collections::VecDeque<ModelUpdate>,
    in_service: Option<ModelUpdate>,
    q_max: usize,
}

impl FifoQueue {
    pub fn new(q_max: usize) -> Self {
        assert!(q_max > 0);
        FifoQueue { queue: std::collections::VecDeque::with_capacity(q_max), in_service: None, q_max }
    }

    fn occupied(&self) -> usize {
        self.queue.len() + usize::from(self.in_service.is_some())
    }
}

impl QueueDiscipline for FifoQueue {
    fn enqueue(&mut self, update: ModelUpdate, _now: SimTime) -> EnqueueOutcome {
        if self.occupied() >= self.q_max {
            return EnqueueOutcome::dropped(EnqueueKind::DroppedFull);
        }
        self.queue.push_back(update);
        EnqueueOutcome { kind: EnqueueKind::Appended, slot: None }
    }

    fn begin_service(&mut self, _now: SimTime) -> Option<ModelUpdate> {
        if self.in_service.is_some() {
            return None;
        }
        let update = self.queue.pop_front()?;
        self.in_service = Some(update.clone());
        Some(update)
    }

    fn complete_service(&mut self, _now: SimTime) -> Result<(), OlafError> {
        self.in_service.take().map(|_| ()).ok_or(OlafError::NothingInService)
    }

    fn snapshot(&self) -> QueueSnapshot {
        let mut active: Vec<ClusterId> = self
            .queue
            .iter()
            .chain(self.in_service.iter())
            .map(|u| u.cluster())
            .collect();
        active.sort_unstable();
        active.dedup();
        QueueSnapshot {
            q_now: self.occupied(),
            q_max: self.q_max,
            full: self.occupied() == self.q_max,
            active_clusters: active,
        }
    }
}
