//! Bounded verifier for cross-cluster age-fairness objectives.
//!
//! The model is a single work-conserving queue shared by several clusters,
//! each with a fixed arrival schedule of transmission opportunities. An
//! opportunity whose send probability is below one becomes a nondeterministic
//! send/skip branch; the verifier explores every resolution and checks that
//! no branch drives the per-cluster average peak ages further than epsilon
//! apart. A violation comes with a decision trace that replays through
//! [`trajectory`] to the exact offending gap.
//!
//! Same-cluster sends that overlap a queued entry are absorbed into it, as
//! the opportunistic queue would aggregate or replace them; absorbed sends
//! contribute no departure and no peak.

use serde::{Deserialize, Serialize};

use crate::endpoint::TxControlParams;
use crate::types::{SimDuration, SimTime};
use crate::OlafError;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSchedule {
    Periodic { period: SimDuration, phase: SimDuration },
    Explicit(Vec<SimTime>),
}

/// How epsilon is compared against the pairwise average-peak gap.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// Gap in seconds.
    #[default]
    AbsoluteSeconds,
    /// Gap divided by the service time.
    NormalizedByService,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub cluster_count: u16,
    /// Service time per update (model size over link rate).
    pub service_time: SimDuration,
    pub q_max: u32,
    pub tx: TxControlParams,
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
    /// Constant delay from a departure to the cluster receiving its ACK.
    #[serde(default)]
    pub ack_delay: SimDuration,
    /// One arrival schedule per cluster.
    pub schedules: Vec<ArrivalSchedule>,
    /// Opportunities generated per periodic schedule.
    pub horizon_updates: u32,
    /// Cap on gated opportunities along any decision path.
    #[serde(default = "default_branch_cap")]
    pub branch_cap: u32,
}

fn default_branch_cap() -> u32 {
    24
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), OlafError> {
        if self.cluster_count == 0 {
            return Err(OlafError::Config("verifier needs at least one cluster".into()));
        }
        if self.schedules.len() != usize::from(self.cluster_count) {
            return Err(OlafError::Config(format!(
                "{} schedules for {} clusters",
                self.schedules.len(),
                self.cluster_count
            )));
        }
        if self.service_time.is_zero() {
            return Err(OlafError::Config("service time must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(OlafError::Config("epsilon must be positive".into()));
        }
        for (i, s) in self.schedules.iter().enumerate() {
            match s {
                ArrivalSchedule::Periodic { period, .. } if period.is_zero() => {
                    return Err(OlafError::Config(format!("cluster {i} has a zero period")));
                }
                ArrivalSchedule::Explicit(times) => {
                    if times.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(OlafError::Config(format!(
                            "cluster {i} schedule is not strictly increasing"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// All transmission opportunities in processing order.
    fn opportunities(&self) -> Vec<Opportunity> {
        let mut all = Vec::new();
        for (cluster, schedule) in self.schedules.iter().enumerate() {
            match schedule {
                ArrivalSchedule::Periodic { period, phase } => {
                    for k in 0..self.horizon_updates {
                        all.push(Opportunity {
                            time: SimTime(phase.as_nanos() + u64::from(k) * period.as_nanos()),
                            cluster,
                            index: k as usize,
                        });
                    }
                }
                ArrivalSchedule::Explicit(times) => {
                    for (index, &time) in times.iter().enumerate() {
                        all.push(Opportunity { time, cluster, index });
                    }
                }
            }
        }
        all.sort_by_key(|o| (o.time, o.cluster, o.index));
        all
    }
}

#[derive(Copy, Clone, Debug)]
struct Opportunity {
    time: SimTime,
    cluster: usize,
    index: usize,
}

/// Queued-but-not-departed entry of one cluster.
#[derive(Copy, Clone, Debug)]
struct PendingEntry {
    first_arrival: SimTime,
    latest_arrival: SimTime,
    latest_index: usize,
    departure: SimTime,
}

/// Evaluation state shared by trajectory replay and branch exploration.
#[derive(Clone, Debug)]
struct Walker {
    service: SimDuration,
    ack_delay: SimDuration,
    q_max: u32,
    cluster_count: u16,
    tx: TxControlParams,
    last_scheduled_departure: SimTime,
    pending: Vec<Option<PendingEntry>>,
    last_ack_source: Vec<Option<SimTime>>, // departure time backing the latest ACK
    peaks: Vec<Vec<Option<SimDuration>>>,
    departures: Vec<Vec<Option<SimTime>>>,
    queue_at_arrival: Vec<Vec<u32>>,
    ack_queue: Vec<Vec<Option<u32>>>,
    sent: Vec<Vec<bool>>,
    arrivals_seen: Vec<Vec<SimTime>>,
    /// Unabsorbed arrival times, for the ACK_Q window count.
    entry_arrivals: Vec<(SimTime, SimTime)>, // (arrival, departure)
    gated_so_far: u32,
}

impl Walker {
    fn new(config: &VerifierConfig) -> Self {
        let f = usize::from(config.cluster_count);
        Walker {
            service: config.service_time,
            ack_delay: config.ack_delay,
            q_max: config.q_max,
            cluster_count: config.cluster_count,
            tx: config.tx,
            last_scheduled_departure: SimTime::ZERO,
            pending: vec![None; f],
            last_ack_source: vec![None; f],
            peaks: vec![Vec::new(); f],
            departures: vec![Vec::new(); f],
            queue_at_arrival: vec![Vec::new(); f],
            ack_queue: vec![Vec::new(); f],
            sent: vec![Vec::new(); f],
            arrivals_seen: vec![Vec::new(); f],
            entry_arrivals: Vec::new(),
            gated_so_far: 0,
        }
    }

    /// Finalizes entries that have departed by `now`.
    fn settle(&mut self, now: SimTime) {
        for cluster in 0..self.pending.len() {
            if let Some(entry) = self.pending[cluster] {
                if entry.departure <= now {
                    self.finalize(cluster, entry);
                    self.pending[cluster] = None;
                }
            }
        }
    }

    fn finalize(&mut self, cluster: usize, entry: PendingEntry) {
        let peak = entry.departure - entry.latest_arrival;
        self.peaks[cluster][entry.latest_index] = Some(peak);
        self.departures[cluster][entry.latest_index] = Some(entry.departure);
        // queue size seen by this update's ACK: unabsorbed arrivals strictly
        // inside its (arrival, departure) window
        let acked = self
            .entry_arrivals
            .iter()
            .filter(|(a, _)| *a > entry.latest_arrival && *a < entry.departure)
            .count() as u32;
        self.ack_queue[cluster][entry.latest_index] = Some(acked);
        match self.last_ack_source[cluster] {
            Some(prev) if prev >= entry.departure => {}
            _ => self.last_ack_source[cluster] = Some(entry.departure),
        }
    }

    /// Send probability at this opportunity; 1.0 means the send is forced.
    fn send_probability(&self, cluster: usize, now: SimTime) -> f64 {
        if u32::from(self.cluster_count) <= self.q_max {
            return 1.0;
        }
        let last_ack = match self.last_ack_source[cluster] {
            Some(d) if d + self.ack_delay <= now => d + self.ack_delay,
            _ => return 1.0, // no usable feedback: transmit
        };
        let delta_hat = now - last_ack;
        let base = f64::from(self.q_max) / f64::from(u32::from(self.cluster_count));
        let over = delta_hat.saturating_sub(self.tx.delta_t).as_secs_f64();
        (base + self.tx.slope() * over).min(1.0)
    }

    fn record_slot(&mut self, cluster: usize, index: usize, time: SimTime) {
        debug_assert_eq!(self.sent[cluster].len(), index);
        self.arrivals_seen[cluster].push(time);
        self.sent[cluster].push(false);
        self.peaks[cluster].push(None);
        self.departures[cluster].push(None);
        self.queue_at_arrival[cluster].push(0);
        self.ack_queue[cluster].push(None);
    }

    /// Queued other-cluster entries at `now`, per the occupancy constraint.
    fn occupancy(&self, cluster: usize, now: SimTime) -> u32 {
        self.pending
            .iter()
            .enumerate()
            .filter(|(c, e)| {
                *c != cluster
                    && e.map_or(false, |e| e.first_arrival < now && now < e.departure)
            })
            .count() as u32
    }

    /// Applies a send at this opportunity.
    fn send(&mut self, op: Opportunity) {
        let slot = self.sent[op.cluster].len() - 1;
        debug_assert_eq!(slot, op.index);
        self.sent[op.cluster][op.index] = true;
        self.queue_at_arrival[op.cluster][op.index] = self.occupancy(op.cluster, op.time);
        match &mut self.pending[op.cluster] {
            Some(entry) => {
                // overlaps the cluster's queued update: aggregated/replaced in
                // place, departure slot unchanged, freshness advanced
                entry.latest_arrival = op.time;
                entry.latest_index = op.index;
            }
            slot_ref @ None => {
                let start = op.time.max(self.last_scheduled_departure);
                let departure = start + self.service;
                self.last_scheduled_departure = departure;
                *slot_ref = Some(PendingEntry {
                    first_arrival: op.time,
                    latest_arrival: op.time,
                    latest_index: op.index,
                    departure,
                });
                self.entry_arrivals.push((op.time, departure));
            }
        }
    }

    fn flush(&mut self) {
        self.settle(SimTime::MAX);
    }

    fn avg_peaks_seconds(&self) -> Vec<f64> {
        self.peaks
            .iter()
            .map(|peaks| {
                let vals: Vec<f64> =
                    peaks.iter().flatten().map(|p| p.as_secs_f64()).collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect()
    }
}

/// Per-cluster evaluation of the constraint system for fixed decisions.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ClusterTrajectory {
    pub arrivals: Vec<SimTime>,
    pub sent: Vec<bool>,
    /// Departure per update; absent for skipped and absorbed updates.
    pub departures: Vec<Option<SimTime>>,
    /// Peak age per departing update: departure minus freshest arrival.
    pub peaks: Vec<Option<SimDuration>>,
    /// Other-cluster queue occupancy observed at each sent arrival.
    pub queue_at_arrival: Vec<u32>,
    /// Queue size carried by the update's ACK.
    pub ack_queue: Vec<Option<u32>>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub clusters: Vec<ClusterTrajectory>,
    pub gated_opportunities: u32,
    pub avg_peaks_seconds: Vec<f64>,
}

/// Decision for one gated opportunity.
pub type TxDecision = bool;

/// Evaluates the constraint system under explicit send/skip decisions.
///
/// `decisions` are consumed in chronological gate order and must cover
/// exactly the gated opportunities of this configuration.
pub fn trajectory(config: &VerifierConfig, decisions: &[TxDecision]) -> Result<Trajectory, OlafError> {
    config.validate()?;
    let mut walker = Walker::new(config);
    let mut cursor = 0usize;
    for op in config.opportunities() {
        walker.settle(op.time);
        walker.record_slot(op.cluster, op.index, op.time);
        let p = walker.send_probability(op.cluster, op.time);
        let send = if p < 1.0 {
            walker.gated_so_far += 1;
            let d = *decisions.get(cursor).ok_or_else(|| {
                OlafError::InconsistentDecisions(format!(
                    "decision trace exhausted at gated opportunity {cursor}"
                ))
            })?;
            cursor += 1;
            d
        } else {
            true
        };
        if send {
            walker.send(op);
        }
    }
    if cursor != decisions.len() {
        return Err(OlafError::InconsistentDecisions(format!(
            "{} decisions provided but only {cursor} opportunities were gated",
            decisions.len()
        )));
    }
    walker.flush();
    Ok(Trajectory {
        avg_peaks_seconds: walker.avg_peaks_seconds(),
        gated_opportunities: walker.gated_so_far,
        clusters: (0..usize::from(config.cluster_count))
            .map(|c| ClusterTrajectory {
                arrivals: walker.arrivals_seen[c].clone(),
                sent: walker.sent[c].clone(),
                departures: walker.departures[c].clone(),
                peaks: walker.peaks[c].clone(),
                queue_at_arrival: walker.queue_at_arrival[c].clone(),
                ack_queue: walker.ack_queue[c].clone(),
            })
            .collect(),
    })
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictResult {
    ObjectiveHolds,
    Violated,
}

/// Replayable evidence for a violation.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Witness {
    /// Send/skip per gated opportunity, in gate order.
    pub decisions: Vec<TxDecision>,
    pub offending_pair: (u16, u16),
    /// Average-peak gap for the pair, in epsilon units.
    pub gap: f64,
    pub avg_peaks_seconds: Vec<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub result: VerdictResult,
    pub witness: Option<Witness>,
    pub branches_explored: u64,
}

fn gap_units(config: &VerifierConfig, gap_seconds: f64) -> f64 {
    match config.epsilon_mode {
        EpsilonMode::AbsoluteSeconds => gap_seconds,
        EpsilonMode::NormalizedByService => gap_seconds / config.service_time.as_secs_f64(),
    }
}

fn worst_pair(config: &VerifierConfig, avgs: &[f64]) -> Option<(u16, u16, f64)> {
    let mut worst: Option<(u16, u16, f64)> = None;
    for u in 0..avgs.len() {
        for v in u + 1..avgs.len() {
            let gap = gap_units(config, (avgs[u] - avgs[v]).abs());
            if worst.map_or(true, |(_, _, g)| gap > g) {
                worst = Some((u as u16, v as u16, gap));
            }
        }
    }
    worst
}

/// Sound subtree bound: every future peak lies in [0, (F+1)·service], a
/// pending entry's final peak lies in [0, its current slack] (absorption can
/// only shrink it), and each cluster adds between zero and its remaining
/// opportunities worth of peaks. If no assignment within those bounds can
/// push a pairwise gap past epsilon, the whole subtree satisfies the
/// objective.
fn subtree_cannot_violate(
    config: &VerifierConfig,
    walker: &Walker,
    remaining_by_cluster: &[u32],
) -> bool {
    let peak_hi = config.service_time.as_secs_f64()
        * (f64::from(u32::from(config.cluster_count)) + 1.0);
    let mut lo = Vec::with_capacity(walker.peaks.len());
    let mut hi = Vec::with_capacity(walker.peaks.len());
    for (c, peaks) in walker.peaks.iter().enumerate() {
        let done: Vec<f64> = peaks.iter().flatten().map(|p| p.as_secs_f64()).collect();
        let sum: f64 = done.iter().sum();
        let n = done.len() as f64;
        // a pending entry departs exactly once, with a peak no larger than
        // its current departure-minus-freshest-arrival slack
        let pending = walker.pending[c]
            .map(|e| (e.departure - e.latest_arrival).as_secs_f64());
        let (pend_n, pend_hi) = match pending {
            Some(p) => (1.0, p),
            None => (0.0, 0.0),
        };
        let r = remaining_by_cluster[c];
        let mut c_lo = f64::INFINITY;
        let mut c_hi = f64::NEG_INFINITY;
        for k in 0..=r {
            let count = n + pend_n + f64::from(k);
            if count == 0.0 {
                c_lo = c_lo.min(0.0);
                c_hi = c_hi.max(0.0);
                continue;
            }
            c_lo = c_lo.min(sum / count);
            c_hi = c_hi.max((sum + pend_hi + f64::from(k) * peak_hi) / count);
        }
        lo.push(c_lo);
        hi.push(c_hi);
    }
    let mut worst = 0.0f64;
    for u in 0..lo.len() {
        for v in 0..lo.len() {
            if u != v {
                worst = worst.max(hi[u] - lo[v]);
            }
        }
    }
    gap_units(config, worst) <= config.epsilon
}

/// Explores every send/skip resolution of the gated opportunities and checks
/// the pairwise average-peak objective on each.
pub fn check_fairness(config: &VerifierConfig) -> Result<VerifierVerdict, OlafError> {
    config.validate()?;
    let opportunities = config.opportunities();
    // suffix counts of remaining opportunities per cluster, for pruning
    let f = usize::from(config.cluster_count);
    let mut remaining_suffix: Vec<Vec<u32>> = vec![vec![0; f]; opportunities.len() + 1];
    for i in (0..opportunities.len()).rev() {
        remaining_suffix[i] = remaining_suffix[i + 1].clone();
        remaining_suffix[i][opportunities[i].cluster] += 1;
    }

    struct Dfs<'c> {
        config: &'c VerifierConfig,
        opportunities: &'c [Opportunity],
        remaining_suffix: &'c [Vec<u32>],
        branches: u64,
        pruned: u64,
    }

    enum Outcome {
        Holds,
        Violated(Witness),
    }

    impl Dfs<'_> {
        /// Runs from opportunity `from` with the walker state so far.
        fn explore(
            &mut self,
            mut walker: Walker,
            from: usize,
            decisions: &mut Vec<TxDecision>,
        ) -> Result<Outcome, OlafError> {
            for (i, op) in self.opportunities.iter().enumerate().skip(from) {
                walker.settle(op.time);
                walker.record_slot(op.cluster, op.index, op.time);
                let p = walker.send_probability(op.cluster, op.time);
                if p < 1.0 {
                    walker.gated_so_far += 1;
                    if walker.gated_so_far > self.config.branch_cap {
                        return Err(OlafError::BranchCapExceeded {
                            gated: walker.gated_so_far,
                            cap: self.config.branch_cap,
                        });
                    }
                    if subtree_cannot_violate(self.config, &walker, &self.remaining_suffix[i]) {
                        self.pruned += 1;
                        return Ok(Outcome::Holds);
                    }
                    // branch; sends first so witnesses favor active traces
                    for decision in [true, false] {
                        let mut forked = walker.clone();
                        if decision {
                            forked.send(*op);
                        }
                        decisions.push(decision);
                        match self.explore(forked, i + 1, decisions)? {
                            Outcome::Holds => {}
                            violated => return Ok(violated),
                        }
                        decisions.pop();
                    }
                    return Ok(Outcome::Holds);
                }
                walker.send(*op);
            }
            self.branches += 1;
            walker.flush();
            let avgs = walker.avg_peaks_seconds();
            if let Some((u, v, gap)) = worst_pair(self.config, &avgs) {
                if gap > self.config.epsilon {
                    return Ok(Outcome::Violated(Witness {
                        decisions: decisions.clone(),
                        offending_pair: (u, v),
                        gap,
                        avg_peaks_seconds: avgs,
                    }));
                }
            }
            Ok(Outcome::Holds)
        }
    }

    let mut dfs = Dfs {
        config,
        opportunities: &opportunities,
        remaining_suffix: &remaining_suffix,
        branches: 0,
        pruned: 0,
    };
    let mut decisions = Vec::new();
    let outcome = dfs.explore(Walker::new(config), 0, &mut decisions)?;
    let branches_explored = dfs.branches + dfs.pruned;
    Ok(match outcome {
        Outcome::Holds => VerifierVerdict {
            result: VerdictResult::ObjectiveHolds,
            witness: None,
            branches_explored,
        },
        Outcome::Violated(w) => VerifierVerdict {
            result: VerdictResult::Violated,
            witness: Some(w),
            branches_explored,
        },
    })
}

/// Renders a witness as event-log-style text for replay inspection.
pub fn witness_trace(config: &VerifierConfig, witness: &Witness) -> Result<String, OlafError> {
    let t = trajectory(config, &witness.decisions)?;
    let mut lines = Vec::new();
    for (c, ct) in t.clusters.iter().enumerate() {
        for (k, &arrival) in ct.arrivals.iter().enumerate() {
            let kind = if ct.sent[k] { "send" } else { "skip" };
            lines.push((arrival, format!("{arrival} model {kind} c{c} u{k}")));
            if let (Some(d), Some(p)) = (ct.departures[k], ct.peaks[k]) {
                lines.push((d, format!("{d} model depart c{c} peak_ns={}", p.as_nanos())));
            }
        }
    }
    lines.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut out: String = lines.into_iter().map(|(_, l)| l + "\n").collect();
    out.push_str(&format!(
        "verdict violated pair=({},{}) gap={}\n",
        witness.offending_pair.0, witness.offending_pair.1, witness.gap
    ));
    Ok(out)
}
