//! Run outputs: per-cluster counters, delivery logs and the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aom::{AomSeries, ColdStart, FairnessReport};
use crate::types::{ClusterId, SimTime};

/// Fate of every transmission from a cluster's workers.
///
/// Each transmitted update ends in exactly one bucket: it reaches the server
/// as a carrier, is absorbed by in-queue aggregation or replacement, is
/// dropped, or is still in flight when the run stops.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct ClusterCounters {
    pub sent: u64,
    pub delivered: u64,
    pub aggregated: u64,
    pub replaced: u64,
    pub dropped_full: u64,
    pub dropped_low_reward: u64,
    pub in_flight: u64,
}

impl ClusterCounters {
    pub fn lost(&self) -> u64 {
        self.dropped_full + self.dropped_low_reward
    }

    pub fn conservation_holds(&self) -> bool {
        self.sent
            == self.delivered
                + self.aggregated
                + self.replaced
                + self.dropped_full
                + self.dropped_low_reward
                + self.in_flight
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_cluster: BTreeMap<ClusterId, ClusterCounters>,
    pub aom: BTreeMap<ClusterId, AomSeries>,
    /// Merge count of every carrier delivered to the server, in order.
    pub delivered_agg_counts: Vec<u32>,
    pub horizon: SimTime,
    pub wall_clock_s: f64,
    /// SHA-256 of the event log text.
    pub event_log_digest: String,
    /// When the per-worker delivery target was met, if one was set.
    pub target_met_at: Option<SimTime>,
    pub events_processed: u64,
}

impl RunMetrics {
    pub fn total(&self) -> ClusterCounters {
        let mut t = ClusterCounters::default();
        for c in self.per_cluster.values() {
            t.sent += c.sent;
            t.delivered += c.delivered;
            t.aggregated += c.aggregated;
            t.replaced += c.replaced;
            t.dropped_full += c.dropped_full;
            t.dropped_low_reward += c.dropped_low_reward;
            t.in_flight += c.in_flight;
        }
        t
    }

    /// Fraction of transmissions lost to drops, in percent.
    pub fn loss_pct(&self) -> f64 {
        let t = self.total();
        if t.sent == 0 {
            return 0.0;
        }
        t.lost() as f64 / t.sent as f64 * 100.0
    }

    /// Per-cluster average age in seconds, in cluster order.
    pub fn avg_aom_per_cluster(&self, mode: ColdStart) -> Vec<(ClusterId, f64)> {
        self.aom
            .iter()
            .map(|(c, s)| (*c, s.avg_aom(mode).expect("run horizon is positive")))
            .collect()
    }

    pub fn mean_avg_aom(&self, mode: ColdStart) -> f64 {
        let per = self.avg_aom_per_cluster(mode);
        per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64
    }

    /// Mean average age over a contiguous cluster-id range (a cluster group).
    pub fn group_avg_aom(&self, clusters: std::ops::Range<u16>, mode: ColdStart) -> f64 {
        let vals: Vec<f64> = self
            .aom
            .iter()
            .filter(|(c, _)| clusters.contains(&c.0))
            .map(|(_, s)| s.avg_aom(mode).expect("run horizon is positive"))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn fairness(&self, mode: ColdStart) -> FairnessReport {
        FairnessReport::from_averages(
            self.avg_aom_per_cluster(mode).into_iter().map(|(_, a)| a).collect(),
        )
    }

    pub fn conservation_holds(&self) -> bool {
        self.per_cluster.values().all(ClusterCounters::conservation_holds)
    }

    /// Mean merge count of delivered carriers.
    pub fn mean_agg_per_delivery(&self) -> f64 {
        if self.delivered_agg_counts.is_empty() {
            return 0.0;
        }
        self.delivered_agg_counts.iter().map(|&c| f64::from(c)).sum::<f64>()
            / self.delivered_agg_counts.len() as f64
    }

    /// Percentile of the merge-count distribution (q in [0, 1]).
    pub fn agg_per_delivery_quantile(&self, q: f64) -> u32 {
        if self.delivered_agg_counts.is_empty() {
            return 0;
        }
        let mut v = self.delivered_agg_counts.clone();
        v.sort_unstable();
        let idx = ((v.len() - 1) as f64 * q).round() as usize;
        v[idx]
    }
}

/// How much of the event log to keep.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum LogMode {
    /// Hash only; no text retained.
    Digest,
    /// Hash and full text.
    Full,
}

/// Newline-delimited event log with a running digest.
///
/// Record schema, one per line, space-separated:
/// `time_ns node kind cluster worker detail`
/// with `-` for fields that do not apply.
pub struct EventLog {
    mode: LogMode,
    hasher: Sha256,
    lines: String,
    records: u64,
}

impl EventLog {
    pub fn new(mode: LogMode) -> Self {
        EventLog { mode, hasher: Sha256::new(), lines: String::new(), records: 0 }
    }

    pub fn record(&mut self, line: &str) {
        debug_assert!(!line.contains('\n'));
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if self.mode == LogMode::Full {
            self.lines.push_str(line);
            self.lines.push('\n');
        }
        self.records += 1;
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(self) -> (String, Option<String>) {
        let digest = self.hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        let text = match self.mode {
            LogMode::Full => Some(self.lines),
            LogMode::Digest => None,
        };
        (hex, text)
    }
}
