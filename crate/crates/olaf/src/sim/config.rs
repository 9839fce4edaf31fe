//! Scenario and topology description.
//!
//! A scenario wires worker groups through a chain of switches to the
//! parameter server, with one switch designated as the accelerator that
//! stamps queue feedback onto ACKs on the reverse path.

use serde::{Deserialize, Serialize};

use crate::endpoint::{GradientAvgMode, RewardGateMode, TxControlParams};
use crate::types::{SimDuration, SimTime};
use crate::OlafError;

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisciplineKind {
    Fifo,
    Olaf,
}

/// Where a switch forwards served updates.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hop {
    Switch(usize),
    ParameterServer,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SwitchSpec {
    pub name: String,
    pub discipline: DisciplineKind,
    pub q_max: usize,
    /// Reward-comparability threshold for opportunistic aggregation.
    pub reward_threshold: f64,
    pub out_capacity_bps: u64,
    pub out_prop_delay: SimDuration,
    pub next: Hop,
}

/// Episodic generation: every `size` consecutive updates are emitted
/// back-to-back `spacing` apart, then the worker stays silent until the next
/// episode boundary at `size * gen_period`, preserving the average rate.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BurstSpec {
    pub size: u32,
    pub spacing: SimDuration,
}

/// Slowly wandering per-cluster send phase: each round the cluster's phase
/// takes a uniform step in [-step, +step], reflected into [0, width]. All of
/// a cluster's workers share the walk, so cluster salvos migrate coherently
/// through the contention window.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PhaseWalk {
    pub width: SimDuration,
    pub step: SimDuration,
}

/// A set of clusters with a shared workload profile and entry switch.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ClusterGroup {
    pub clusters: u16,
    pub workers_per_cluster: u16,
    pub entry_switch: usize,
    pub ingress_delay: SimDuration,
    pub gen_period: SimDuration,
    /// Per-cluster period heterogeneity: the group's i-th cluster runs at
    /// `gen_period + i * period_step`, so cluster phases drift slowly.
    #[serde(default)]
    pub period_step: SimDuration,
    /// Deterministic per-cluster phase: the group's i-th cluster starts at
    /// `i * cluster_phase_step`.
    #[serde(default)]
    pub cluster_phase_step: SimDuration,
    /// Fixed stagger between a cluster's workers.
    #[serde(default)]
    pub worker_phase_step: SimDuration,
    /// Per-worker constant phase drawn uniformly from [0, spread].
    pub phase_spread: SimDuration,
    /// Per-update jitter drawn uniformly from [0, jitter].
    pub jitter: SimDuration,
    /// Episodic burst structure; smooth periodic generation when absent.
    #[serde(default)]
    pub burst: Option<BurstSpec>,
    /// Wandering cluster phase within a bounded contention window.
    #[serde(default)]
    pub phase_walk: Option<PhaseWalk>,
    /// Generation budget per worker; unbounded when absent.
    pub updates_per_worker: Option<u32>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Topology {
    pub switches: Vec<SwitchSpec>,
    pub groups: Vec<ClusterGroup>,
    /// Index of the switch stamping queue feedback onto ACKs.
    pub accelerator: usize,
}

/// Synthetic workload shape; rewards follow a slowly rising noisy ramp.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Workload {
    pub update_size_bits: u32,
    pub gradient_dim: usize,
    pub reward_base: f64,
    pub reward_slope_per_update: f64,
    pub reward_noise: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            update_size_bits: 2048,
            gradient_dim: 8,
            reward_base: 0.0,
            reward_slope_per_update: 0.01,
            reward_noise: 0.02,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PsParams {
    pub learning_rate: f64,
    pub reward_gate: RewardGateMode,
    pub gradient_avg: GradientAvgMode,
}

impl Default for PsParams {
    fn default() -> Self {
        PsParams {
            learning_rate: 0.001,
            reward_gate: RewardGateMode::TrackBest,
            gradient_avg: GradientAvgMode::Pairwise,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    pub workload: Workload,
    /// Worker-side transmission control; disabled when absent.
    pub tx_control: Option<TxControlParams>,
    pub ps: PsParams,
    pub horizon: SimTime,
    pub seed: u64,
    /// Re-send unacknowledged updates after a timeout.
    pub retransmit: bool,
    /// Stop once the server has credited this many updates per worker.
    pub target_updates_per_worker: Option<u32>,
}

impl Scenario {
    /// Structural checks: every group reaches the parameter server, the
    /// forward path is acyclic, and it traverses the accelerator.
    pub fn validate(&self) -> Result<(), OlafError> {
        let t = &self.topology;
        if t.switches.is_empty() {
            return Err(OlafError::Config("topology has no switches".into()));
        }
        if t.groups.is_empty() {
            return Err(OlafError::Config("topology has no worker groups".into()));
        }
        if t.accelerator >= t.switches.len() {
            return Err(OlafError::Config(format!(
                "accelerator index {} out of range",
                t.accelerator
            )));
        }
        if self.horizon == SimTime::ZERO {
            return Err(OlafError::ZeroHorizon);
        }
        for (i, sw) in t.switches.iter().enumerate() {
            if sw.q_max == 0 {
                return Err(OlafError::Config(format!("switch {} has zero capacity", sw.name)));
            }
            if sw.out_capacity_bps == 0 {
                return Err(OlafError::Config(format!("switch {} has a dead output link", sw.name)));
            }
            if let Hop::Switch(j) = sw.next {
                if j >= t.switches.len() {
                    return Err(OlafError::Config(format!(
                        "switch {} forwards to unknown index {j}",
                        sw.name
                    )));
                }
                if j == i {
                    return Err(OlafError::Config(format!("switch {} forwards to itself", sw.name)));
                }
            }
        }
        for (gi, g) in t.groups.iter().enumerate() {
            if g.clusters == 0 || g.workers_per_cluster == 0 {
                return Err(OlafError::Config(format!("group {gi} is empty")));
            }
            if g.gen_period.is_zero() {
                return Err(OlafError::Config(format!("group {gi} has a zero generation period")));
            }
            if g.entry_switch >= t.switches.len() {
                return Err(OlafError::Config(format!(
                    "group {gi} enters at unknown switch {}",
                    g.entry_switch
                )));
            }
            let path = self.forward_path(g.entry_switch)?;
            if !path.contains(&t.accelerator) {
                return Err(OlafError::Config(format!(
                    "group {gi} does not traverse the accelerator"
                )));
            }
        }
        Ok(())
    }

    /// Switch indices from `entry` to the parameter server, inclusive.
    pub fn forward_path(&self, entry: usize) -> Result<Vec<usize>, OlafError> {
        let mut path = Vec::new();
        let mut at = entry;
        loop {
            if path.contains(&at) {
                return Err(OlafError::Config(format!(
                    "forwarding loop through switch {}",
                    self.topology.switches[at].name
                )));
            }
            path.push(at);
            if path.len() > self.topology.switches.len() {
                return Err(OlafError::Config("forwarding path does not terminate".into()));
            }
            match self.topology.switches[at].next {
                Hop::Switch(j) => at = j,
                Hop::ParameterServer => return Ok(path),
            }
        }
    }

    pub fn total_clusters(&self) -> u16 {
        self.topology.groups.iter().map(|g| g.clusters).sum()
    }

    pub fn total_workers(&self) -> usize {
        self.topology
            .groups
            .iter()
            .map(|g| g.clusters as usize * g.workers_per_cluster as usize)
            .sum()
    }

    /// Copy of the scenario with every switch forced to one discipline.
    pub fn with_discipline(&self, discipline: DisciplineKind) -> Scenario {
        let mut s = self.clone();
        for sw in &mut s.topology.switches {
            sw.discipline = discipline;
        }
        s
    }

    /// Copy with transmission control enabled or disabled.
    pub fn with_tx_control(&self, tx: Option<TxControlParams>) -> Scenario {
        let mut s = self.clone();
        s.tx_control = tx;
        s
    }
}

/// Convenience builder for the common single-switch scenario.
pub fn single_switch_scenario(
    discipline: DisciplineKind,
    q_max: usize,
    out_capacity_bps: u64,
    clusters: u16,
    workers_per_cluster: u16,
    gen_period: SimDuration,
    horizon: SimTime,
    seed: u64,
) -> Scenario {
    Scenario {
        topology: Topology {
            switches: vec![SwitchSpec {
                name: "sw0".into(),
                discipline,
                q_max,
                reward_threshold: 0.1,
                out_capacity_bps,
                out_prop_delay: SimDuration::from_nanos(1_000),
                next: Hop::ParameterServer,
            }],
            groups: vec![ClusterGroup {
                clusters,
                workers_per_cluster,
                entry_switch: 0,
                ingress_delay: SimDuration::from_nanos(1_000),
                gen_period,
                period_step: SimDuration::ZERO,
                cluster_phase_step: SimDuration::ZERO,
                worker_phase_step: SimDuration::ZERO,
                phase_spread: SimDuration::ZERO,
                jitter: SimDuration::ZERO,
                burst: None,
                phase_walk: None,
                updates_per_worker: None,
            }],
            accelerator: 0,
        },
        workload: Workload::default(),
        tx_control: None,
        ps: PsParams::default(),
        horizon,
        seed,
        retransmit: false,
        target_updates_per_worker: None,
    }
}
