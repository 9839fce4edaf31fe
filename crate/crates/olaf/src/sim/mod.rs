//! Deterministic discrete-event engine.
//!
//! Workers generate updates from their sources, gate transmissions on queue
//! feedback, and send through a chain of switches to the parameter server.
//! ACKs retrace the path, get stamped with queue state at the accelerator,
//! and are multicast to the sender's cluster. Identical scenarios and seeds
//! replay to bit-identical event logs.

pub mod config;
pub mod metrics;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};

use crate::endpoint::{AckMessage, ParameterServer, TickAction, Worker};
use crate::queue::{EnqueueKind, FifoQueue, OlafQueue, QueueDiscipline};
use crate::types::{ClusterId, ModelUpdate, QueueFeedback, SimDuration, SimTime, WorkerId};
use crate::OlafError;

pub use config::{
    single_switch_scenario, ClusterGroup, DisciplineKind, Hop, PsParams, Scenario, SwitchSpec,
    Topology, Workload,
};
pub use metrics::{ClusterCounters, EventLog, LogMode, RunMetrics};
pub use trace::{gradient_for, mix_seed, SyntheticSource, TraceRecord, TraceSource, UpdateSource};

#[derive(Debug)]
enum EventKind {
    Generate { worker: usize, record: TraceRecord },
    TryTx { worker: usize },
    AckTimeout { worker: usize, token: u64 },
    Arrive { switch: usize, update: ModelUpdate },
    ServiceDone { switch: usize },
    PsArrive { update: ModelUpdate },
    AckStamp { ack: AckMessage },
    AckDeliver { ack: AckMessage },
}

struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed so the BinaryHeap pops the earliest (time, seq) first
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct WorkerRt {
    core: Worker,
    source: Box<dyn UpdateSource>,
    entry_switch: usize,
    ingress_delay: SimDuration,
    last_sent: Option<ModelUpdate>,
    highest_confirmed: Option<SimTime>,
    ack_timeout: SimDuration,
    timeout_token: u64,
}

struct SwitchRt {
    name: String,
    queue: Box<dyn QueueDiscipline>,
    serving: Option<ModelUpdate>,
    service_time: SimDuration,
    out_delay: SimDuration,
    next: Hop,
    active_clusters: u32,
    q_max: u32,
    occupancy: BTreeMap<ClusterId, u64>,
}

struct ReversePath {
    ps_to_accelerator: SimDuration,
    accelerator_to_workers: SimDuration,
    workers: Vec<usize>,
}

/// Result of a run: metrics plus the event log text when requested.
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub event_log: Option<String>,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    clock: SimTime,
    seq: u64,
    heap: BinaryHeap<Event>,
    workers: Vec<WorkerRt>,
    switches: Vec<SwitchRt>,
    ps: ParameterServer,
    credits: BTreeMap<WorkerId, (SimTime, u32)>,
    workers_at_target: usize,
    target_met_at: Option<SimTime>,
    reverse: Vec<ReversePath>,
    counters: BTreeMap<ClusterId, ClusterCounters>,
    aom: BTreeMap<ClusterId, crate::aom::AomSeries>,
    delivered_agg_counts: Vec<u32>,
    log: EventLog,
    events_processed: u64,
    gradient_dim: usize,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, log_mode: LogMode) -> Result<Self, OlafError> {
        scenario.validate()?;
        let t = &scenario.topology;

        let mut switches = Vec::with_capacity(t.switches.len());
        for spec in &t.switches {
            let queue: Box<dyn QueueDiscipline> = match spec.discipline {
                DisciplineKind::Fifo => Box::new(FifoQueue::new(spec.q_max)),
                DisciplineKind::Olaf => {
                    Box::new(OlafQueue::new(spec.q_max, spec.reward_threshold))
                }
            };
            switches.push(SwitchRt {
                name: spec.name.clone(),
                queue,
                serving: None,
                service_time: SimDuration::for_bits(
                    u64::from(scenario.workload.update_size_bits),
                    spec.out_capacity_bps,
                ),
                out_delay: spec.out_prop_delay,
                next: spec.next,
                active_clusters: 0,
                q_max: spec.q_max as u32,
                occupancy: BTreeMap::new(),
            });
        }

        let mut workers = Vec::new();
        let mut reverse = Vec::new();
        let mut cluster_base = 0u16;
        for group in &t.groups {
            let path = scenario.forward_path(group.entry_switch)?;
            for &sw in &path {
                switches[sw].active_clusters += u32::from(group.clusters);
            }
            // reverse-path delays: PS back to the accelerator, then on to the
            // workers, retracing the forward links with zero service time
            let acc_pos = path
                .iter()
                .position(|&sw| sw == t.accelerator)
                .expect("validated: path traverses the accelerator");
            let ps_to_accelerator = path[acc_pos..]
                .iter()
                .fold(SimDuration::ZERO, |d, &sw| d + t.switches[sw].out_prop_delay);
            let accelerator_to_workers = path[..acc_pos]
                .iter()
                .fold(group.ingress_delay, |d, &sw| d + t.switches[sw].out_prop_delay);
            let path_service: SimDuration = path
                .iter()
                .fold(SimDuration::ZERO, |d, &sw| {
                    let s = SimDuration::for_bits(
                        u64::from(scenario.workload.update_size_bits),
                        t.switches[sw].out_capacity_bps,
                    );
                    d + SimDuration(s.as_nanos() * (1 + t.switches[sw].q_max as u64))
                });
            let prop_round_trip = SimDuration(
                2 * (group.ingress_delay.as_nanos()
                    + path
                        .iter()
                        .map(|&sw| t.switches[sw].out_prop_delay.as_nanos())
                        .sum::<u64>()),
            );
            let ack_timeout = SimDuration(3 * (prop_round_trip.as_nanos() + path_service.as_nanos()));

            for c in 0..group.clusters {
                let cluster = ClusterId(cluster_base + c);
                let cluster_period =
                    group.gen_period + SimDuration(group.period_step.as_nanos() * u64::from(c));
                let cluster_phase =
                    SimDuration(group.cluster_phase_step.as_nanos() * u64::from(c));
                let mut cluster_workers = Vec::new();
                for index in 0..group.workers_per_cluster {
                    let id = WorkerId::new(cluster, index);
                    let widx = workers.len();
                    let base_phase = cluster_phase
                        + SimDuration(group.worker_phase_step.as_nanos() * u64::from(index));
                    let source = SyntheticSource::new(
                        id,
                        cluster_period,
                        base_phase,
                        group.phase_spread,
                        group.jitter,
                        group.burst.map(|b| trace::BurstShape { size: b.size, spacing: b.spacing }),
                        group.phase_walk.map(|w| {
                            trace::PhaseWalkState::new(
                                w.width,
                                w.step,
                                mix_seed(&[scenario.seed, 3, u64::from(cluster.0)]),
                            )
                        }),
                        scenario.workload.reward_base,
                        scenario.workload.reward_slope_per_update,
                        scenario.workload.reward_noise,
                        group.updates_per_worker,
                        mix_seed(&[scenario.seed, 2, widx as u64]),
                    );
                    workers.push(WorkerRt {
                        core: Worker::new(
                            id,
                            cluster_period,
                            scenario.tx_control,
                            mix_seed(&[scenario.seed, 1, widx as u64]),
                        ),
                        source: Box::new(source),
                        entry_switch: group.entry_switch,
                        ingress_delay: group.ingress_delay,
                        last_sent: None,
                        highest_confirmed: None,
                        ack_timeout,
                        timeout_token: 0,
                    });
                    cluster_workers.push(widx);
                }
                reverse.push(ReversePath {
                    ps_to_accelerator,
                    accelerator_to_workers,
                    workers: cluster_workers,
                });
            }
            cluster_base += group.clusters;
        }

        let mut counters = BTreeMap::new();
        let mut aom = BTreeMap::new();
        for c in 0..cluster_base {
            counters.insert(ClusterId(c), ClusterCounters::default());
            aom.insert(ClusterId(c), crate::aom::AomSeries::new(ClusterId(c), scenario.horizon));
        }

        Ok(Engine {
            scenario,
            clock: SimTime::ZERO,
            seq: 0,
            heap: BinaryHeap::new(),
            workers,
            switches,
            ps: ParameterServer::new(
                scenario.ps.learning_rate,
                scenario.ps.reward_gate,
                scenario.ps.gradient_avg,
            ),
            credits: BTreeMap::new(),
            workers_at_target: 0,
            target_met_at: None,
            reverse,
            counters,
            aom,
            delivered_agg_counts: Vec::new(),
            log: EventLog::new(log_mode),
            events_processed: 0,
            gradient_dim: scenario.workload.gradient_dim,
        })
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    fn schedule_generate(&mut self, worker: usize) {
        if let Some(record) = self.workers[worker].source.next_record() {
            self.push(record.gen_time, EventKind::Generate { worker, record });
        }
    }

    fn run(mut self) -> Result<RunOutput, OlafError> {
        let started = std::time::Instant::now();
        for w in 0..self.workers.len() {
            self.schedule_generate(w);
        }

        while let Some(head) = self.heap.peek() {
            if head.time > self.scenario.horizon || self.target_met_at.is_some() {
                break;
            }
            let ev = self.heap.pop().expect("peeked");
            assert!(ev.time >= self.clock, "event processed out of order");
            self.clock = ev.time;
            self.events_processed += 1;
            self.dispatch(ev);
        }

        // in-flight audit: whatever is still queued or on a link
        let mut in_flight: BTreeMap<ClusterId, u64> = BTreeMap::new();
        for sw in &self.switches {
            for (c, n) in &sw.occupancy {
                *in_flight.entry(*c).or_default() += n;
            }
        }
        for ev in self.heap.iter() {
            match &ev.kind {
                EventKind::Arrive { update, .. } | EventKind::PsArrive { update } => {
                    *in_flight.entry(update.cluster()).or_default() += 1;
                }
                _ => {}
            }
        }
        for (c, counter) in self.counters.iter_mut() {
            counter.in_flight = in_flight.get(c).copied().unwrap_or(0);
            debug_assert!(counter.conservation_holds(), "conservation broken for {c}: {counter:?}");
        }

        let (event_log_digest, event_log) = self.log.finish();
        Ok(RunOutput {
            metrics: RunMetrics {
                per_cluster: self.counters,
                aom: self.aom,
                delivered_agg_counts: self.delivered_agg_counts,
                horizon: self.scenario.horizon,
                wall_clock_s: started.elapsed().as_secs_f64(),
                event_log_digest,
                target_met_at: self.target_met_at,
                events_processed: self.events_processed,
            },
            event_log,
        })
    }

    fn dispatch(&mut self, ev: Event) {
        let now = ev.time;
        match ev.kind {
            EventKind::Generate { worker, record } => {
                let update = ModelUpdate::new(
                    record.worker,
                    record.gen_time,
                    gradient_for(record.grad_seed, self.gradient_dim),
                    record.reward,
                    self.scenario.workload.update_size_bits,
                );
                let w = &mut self.workers[worker];
                w.core.generate(update);
                let detail = format!("{:.6}", record.reward);
                self.log_line(now, &format!("{} gen", record.worker), record.worker.cluster, &detail);
                self.attempt_tx(worker, now);
                self.schedule_generate(worker);
            }
            EventKind::TryTx { worker } => {
                self.attempt_tx(worker, now);
            }
            EventKind::AckTimeout { worker, token } => {
                self.on_ack_timeout(worker, token, now);
            }
            EventKind::Arrive { switch, update } => {
                self.on_arrive(switch, update, now);
            }
            EventKind::ServiceDone { switch } => {
                self.on_service_done(switch, now);
            }
            EventKind::PsArrive { update } => {
                self.on_ps_arrive(update, now);
            }
            EventKind::AckStamp { mut ack } => {
                let acc = self.scenario.topology.accelerator;
                let sw = &self.switches[acc];
                let feedback = QueueFeedback {
                    active_clusters: sw.active_clusters,
                    q_max: sw.q_max,
                    q_now: sw.queue.snapshot().q_now as u32,
                    emitted_at: now,
                };
                ack.feedback = Some(feedback);
                let name = sw.name.clone();
                self.log_line(now, &format!("{name} ackstamp"), ack.cluster, &feedback.q_now.to_string());
                let delay = self.reverse[ack.cluster.0 as usize].accelerator_to_workers;
                self.push(now + delay, EventKind::AckDeliver { ack });
            }
            EventKind::AckDeliver { ack } => {
                let feedback = ack.feedback.expect("stamped at the accelerator");
                let worker_indices = self.reverse[ack.cluster.0 as usize].workers.clone();
                for wi in worker_indices {
                    let w = &mut self.workers[wi];
                    w.core.on_ack(&ack.weights, feedback, now);
                    for (origin, gen) in &ack.confirms {
                        if *origin == w.core.id && Some(*gen) > w.highest_confirmed {
                            w.highest_confirmed = Some(*gen);
                        }
                    }
                }
                self.log_line(now, "net ack", ack.cluster, "-");
            }
        }
    }

    fn attempt_tx(&mut self, worker: usize, now: SimTime) {
        let action = self.workers[worker].core.on_tick(now);
        match action {
            TickAction::Send(update) => self.send(worker, update, now),
            TickAction::Retry(at) => {
                let id = self.workers[worker].core.id;
                self.log_line(now, &format!("{id} skip"), id.cluster, "-");
                self.push(at, EventKind::TryTx { worker });
            }
            TickAction::Idle => {}
        }
    }

    fn send(&mut self, worker: usize, update: ModelUpdate, now: SimTime) {
        let w = &mut self.workers[worker];
        let id = w.core.id;
        self.counters.get_mut(&id.cluster).expect("known cluster").sent += 1;
        if self.scenario.retransmit {
            w.last_sent = Some(update.clone());
            w.timeout_token += 1;
            let token = w.timeout_token;
            let at = now + w.ack_timeout;
            self.push(at, EventKind::AckTimeout { worker, token });
        }
        let entry = self.workers[worker].entry_switch;
        let at = now + self.workers[worker].ingress_delay;
        self.log_line(now, &format!("{id} send"), id.cluster, "-");
        self.push(at, EventKind::Arrive { switch: entry, update });
    }

    fn on_ack_timeout(&mut self, worker: usize, token: u64, now: SimTime) {
        if !self.scenario.retransmit || self.workers[worker].timeout_token != token {
            return;
        }
        let resend = {
            let w = &self.workers[worker];
            match &w.last_sent {
                Some(u) if Some(u.gen_time) > w.highest_confirmed => Some(u.clone()),
                _ => None,
            }
        };
        if let Some(update) = resend {
            let id = self.workers[worker].core.id;
            self.log_line(now, &format!("{id} rtx"), id.cluster, "-");
            self.send(worker, update, now);
        }
    }

    fn on_arrive(&mut self, switch: usize, update: ModelUpdate, now: SimTime) {
        let cluster = update.cluster();
        let worker = update.worker;
        let outcome = self.switches[switch].queue.enqueue(update, now);
        let counter = self.counters.get_mut(&cluster).expect("known cluster");
        let label = match outcome.kind {
            EnqueueKind::Appended => {
                *self.switches[switch].occupancy.entry(cluster).or_default() += 1;
                "append"
            }
            EnqueueKind::Aggregated => {
                counter.aggregated += 1;
                "aggregate"
            }
            EnqueueKind::Replaced => {
                counter.replaced += 1;
                "replace"
            }
            EnqueueKind::DroppedFull => {
                counter.dropped_full += 1;
                "drop_full"
            }
            EnqueueKind::DroppedLowReward => {
                counter.dropped_low_reward += 1;
                "drop_reward"
            }
        };
        let name = self.switches[switch].name.clone();
        self.log_line(now, &format!("{name} {label}"), cluster, &worker.to_string());
        self.try_begin(switch, now);
    }

    fn try_begin(&mut self, switch: usize, now: SimTime) {
        if self.switches[switch].serving.is_some() {
            return;
        }
        if let Some(update) = self.switches[switch].queue.begin_service(now) {
            let at = now + self.switches[switch].service_time;
            self.switches[switch].serving = Some(update);
            self.push(at, EventKind::ServiceDone { switch });
        }
    }

    fn on_service_done(&mut self, switch: usize, now: SimTime) {
        self.switches[switch]
            .queue
            .complete_service(now)
            .expect("service completion matches a begun service");
        let update = self.switches[switch].serving.take().expect("serving update");
        let cluster = update.cluster();
        if let Some(n) = self.switches[switch].occupancy.get_mut(&cluster) {
            *n -= 1;
        }
        let name = self.switches[switch].name.clone();
        self.log_line(now, &format!("{name} depart"), cluster, &update.worker.to_string());
        let at = now + self.switches[switch].out_delay;
        match self.switches[switch].next {
            Hop::Switch(j) => self.push(at, EventKind::Arrive { switch: j, update }),
            Hop::ParameterServer => self.push(at, EventKind::PsArrive { update }),
        }
        self.try_begin(switch, now);
    }

    fn on_ps_arrive(&mut self, update: ModelUpdate, now: SimTime) {
        let cluster = update.cluster();
        self.counters.get_mut(&cluster).expect("known cluster").delivered += 1;
        self.delivered_agg_counts.push(update.agg_count);
        self.aom.get_mut(&cluster).expect("known cluster").push(update.gen_time, now);
        if let Some(target) = self.scenario.target_updates_per_worker {
            for (origin, gen) in &update.origins {
                let entry = self.credits.entry(*origin).or_insert((SimTime::ZERO, 0));
                if *gen > entry.0 || (entry.1 == 0 && *gen >= entry.0) {
                    entry.0 = *gen;
                    entry.1 += 1;
                    if entry.1 == target {
                        self.workers_at_target += 1;
                    }
                }
            }
            if self.workers_at_target == self.workers.len() {
                self.target_met_at = Some(now);
            }
        }
        self.log_line(
            now,
            &format!("ps deliver"),
            cluster,
            &format!("{}x{}", update.worker, update.agg_count),
        );
        let ack = self
            .ps
            .receive(&update, now)
            .expect("scenario uses one gradient dimension throughout");
        let delay = self.reverse[cluster.0 as usize].ps_to_accelerator;
        self.push(now + delay, EventKind::AckStamp { ack });
    }

    fn log_line(&mut self, time: SimTime, node_kind: &str, cluster: ClusterId, detail: &str) {
        let line = format!("{time} {node_kind} {cluster} {detail}");
        self.log.record(&line);
    }
}

/// Executes a scenario.
pub fn run(scenario: &Scenario, log_mode: LogMode) -> Result<RunOutput, OlafError> {
    Engine::new(scenario, log_mode)?.run()
}

/// Time ratio for the server to credit `n_updates` per worker under FIFO vs
/// the opportunistic queue, on identical traces and seeds.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SpeedupReport {
    pub t_fifo: Option<SimTime>,
    pub t_olaf: Option<SimTime>,
    /// `t_fifo / t_olaf`; absent when either run was censored by the horizon.
    pub ratio: Option<f64>,
}

pub fn compare_speedup(scenario: &Scenario, n_updates: u32) -> Result<SpeedupReport, OlafError> {
    let mut base = scenario.clone();
    base.retransmit = true;
    base.target_updates_per_worker = Some(n_updates);
    let fifo = run(&base.with_discipline(DisciplineKind::Fifo), LogMode::Digest)?;
    let olaf = run(&base.with_discipline(DisciplineKind::Olaf), LogMode::Digest)?;
    let t_fifo = fifo.metrics.target_met_at;
    let t_olaf = olaf.metrics.target_met_at;
    let ratio = match (t_fifo, t_olaf) {
        (Some(f), Some(o)) if o > SimTime::ZERO => Some(f.as_nanos() as f64 / o.as_nanos() as f64),
        _ => None,
    };
    Ok(SpeedupReport { t_fifo, t_olaf, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aom::ColdStart;
    use crate::endpoint::{SlopeMode, TxControlParams};

    fn tiny_scenario(discipline: DisciplineKind) -> Scenario {
        let mut s = single_switch_scenario(
            discipline,
            8,
            1_000_000_000,
            1,
            1,
            SimDuration::from_micros(100),
            SimTime::from_millis(10),
            7,
        );
        s.topology.groups[0].updates_per_worker = Some(50);
        s
    }

    #[test]
    fn lone_worker_delivers_everything() {
        let out = run(&tiny_scenario(DisciplineKind::Olaf), LogMode::Full).unwrap();
        let m = out.metrics;
        let c = m.per_cluster[&ClusterId(0)];
        assert_eq!(c.sent, 50);
        assert_eq!(c.delivered, 50);
        assert_eq!(c.lost(), 0);
        assert!(m.conservation_holds());
        assert_eq!(m.loss_pct(), 0.0);
        let log = out.event_log.unwrap();
        assert!(log.lines().count() > 200);
    }

    #[test]
    fn identical_seeds_replay_to_identical_digests() {
        let a = run(&tiny_scenario(DisciplineKind::Olaf), LogMode::Digest).unwrap();
        let b = run(&tiny_scenario(DisciplineKind::Olaf), LogMode::Digest).unwrap();
        assert_eq!(a.metrics.event_log_digest, b.metrics.event_log_digest);
        let mut other = tiny_scenario(DisciplineKind::Olaf);
        other.seed = 8;
        let c = run(&other, LogMode::Digest).unwrap();
        assert_ne!(a.metrics.event_log_digest, c.metrics.event_log_digest);
    }

    fn congested_scenario(discipline: DisciplineKind, seed: u64) -> Scenario {
        // 5 clusters x 2 workers bursting into a 4-slot queue
        let mut s = single_switch_scenario(
            discipline,
            4,
            2_000_000_000,
            5,
            2,
            SimDuration::from_micros(10),
            SimTime::from_millis(20),
            seed,
        );
        s.topology.groups[0].updates_per_worker = Some(200);
        s.topology.groups[0].jitter = SimDuration::from_nanos(2_000);
        s
    }

    #[test]
    fn conservation_holds_under_congestion_for_both_disciplines() {
        for d in [DisciplineKind::Fifo, DisciplineKind::Olaf] {
            let m = run(&congested_scenario(d, 3), LogMode::Digest).unwrap().metrics;
            assert!(m.conservation_holds(), "{d:?}: {:?}", m.total());
            let t = m.total();
            assert_eq!(t.sent, 2000);
            assert!(t.delivered > 0);
            if d == DisciplineKind::Fifo {
                assert!(t.aggregated == 0 && t.replaced == 0);
                assert!(t.dropped_full > 0, "fifo must tail-drop under overload");
            } else {
                assert!(t.aggregated > 0, "olaf must aggregate under overload");
            }
        }
    }

    #[test]
    fn olaf_loses_less_and_stays_fresher_than_fifo() {
        let fifo = run(&congested_scenario(DisciplineKind::Fifo, 3), LogMode::Digest).unwrap();
        let olaf = run(&congested_scenario(DisciplineKind::Olaf, 3), LogMode::Digest).unwrap();
        assert!(olaf.metrics.loss_pct() < fifo.metrics.loss_pct());
        assert!(
            olaf.metrics.mean_avg_aom(ColdStart::AgeFromZero)
                < fifo.metrics.mean_avg_aom(ColdStart::AgeFromZero)
        );
    }

    #[test]
    fn speedup_is_one_without_congestion() {
        let mut s = tiny_scenario(DisciplineKind::Olaf);
        s.topology.groups[0].updates_per_worker = None;
        s.horizon = SimTime::from_millis(50);
        let report = compare_speedup(&s, 20).unwrap();
        let ratio = report.ratio.expect("uncongested target reached");
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn single_update_target_gives_unit_ratio() {
        let mut s = tiny_scenario(DisciplineKind::Olaf);
        s.topology.groups[0].updates_per_worker = None;
        let report = compare_speedup(&s, 1).unwrap();
        assert_eq!(report.ratio, Some(1.0));
    }

    #[test]
    fn malformed_topology_is_rejected() {
        let mut s = tiny_scenario(DisciplineKind::Olaf);
        s.topology.switches[0].next = Hop::Switch(0);
        assert!(run(&s, LogMode::Digest).is_err());
        let mut s2 = tiny_scenario(DisciplineKind::Olaf);
        s2.topology.accelerator = 5;
        assert!(run(&s2, LogMode::Digest).is_err());
    }

    #[test]
    fn transmission_control_throttles_congested_workers() {
        let clusters = 12u16; // exceeds q_max=4: congestion regime
        let mut s = single_switch_scenario(
            DisciplineKind::Olaf,
            4,
            500_000_000,
            clusters,
            1,
            SimDuration::from_micros(20),
            SimTime::from_millis(30),
            11,
        );
        s.topology.groups[0].updates_per_worker = Some(300);
        let plain = run(&s, LogMode::Digest).unwrap().metrics;
        let tc = run(
            &s.with_tx_control(Some(TxControlParams::new(
                SimDuration::from_millis(2),
                SlopeMode::Urgency,
            ))),
            LogMode::Digest,
        )
        .unwrap()
        .metrics;
        assert!(tc.total().sent < plain.total().sent, "the send gate must thin traffic");
        assert!(tc.conservation_holds());
    }

    #[test]
    fn multihop_chain_delivers_and_accounts() {
        let s = Scenario {
            topology: Topology {
                switches: vec![
                    SwitchSpec {
                        name: "sw1".into(),
                        discipline: DisciplineKind::Olaf,
                        q_max: 5,
                        reward_threshold: 0.1,
                        out_capacity_bps: 1_000_000_000,
                        out_prop_delay: SimDuration::from_micros(1),
                        next: Hop::Switch(1),
                    },
                    SwitchSpec {
                        name: "sw3".into(),
                        discipline: DisciplineKind::Olaf,
                        q_max: 8,
                        reward_threshold: 0.1,
                        out_capacity_bps: 1_000_000_000,
                        out_prop_delay: SimDuration::from_micros(1),
                        next: Hop::ParameterServer,
                    },
                ],
                groups: vec![ClusterGroup {
                    clusters: 3,
                    workers_per_cluster: 2,
                    entry_switch: 0,
                    ingress_delay: SimDuration::from_micros(1),
                    gen_period: SimDuration::from_micros(50),
                    period_step: SimDuration::ZERO,
                    cluster_phase_step: SimDuration::ZERO,
                    worker_phase_step: SimDuration::ZERO,
                    phase_spread: SimDuration::from_micros(50),
                    jitter: SimDuration::ZERO,
                    burst: None,
                    phase_walk: None,
                    updates_per_worker: Some(100),
                }],
                accelerator: 1,
            },
            workload: Workload::default(),
            tx_control: None,
            ps: PsParams::default(),
            horizon: SimTime::from_millis(20),
            seed: 5,
            retransmit: false,
            target_updates_per_worker: None,
        };
        let m = run(&s, LogMode::Digest).unwrap().metrics;
        assert!(m.conservation_holds());
        let t = m.total();
        assert_eq!(t.sent, 600);
        assert!(t.delivered + t.aggregated + t.replaced == 600, "nothing lost uncongested");
    }
}
