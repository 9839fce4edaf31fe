//! Worker and parameter-server endpoints.
//!
//! Workers hold at most one pending update, gate its transmission on the
//! queue feedback carried by ACKs, and retry failed draws. The parameter
//! server admits updates through a reward gate, applies gradient descent to
//! the global weights and answers every delivery with an ACK addressed to
//! the sender's cluster.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{ClusterId, ModelUpdate, QueueFeedback, SimDuration, SimTime, WorkerId};
use crate::{types, OlafError};

/// Slope presets for the feedback-staleness term.
#[derive(Copy, Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMode {
    /// v = 1 / threshold: stale workers ramp to certain transmission fast.
    Urgency,
    /// v = threshold (in seconds): gentler ramp favoring equal shares.
    Fairness,
    /// Explicit slope in 1/second.
    Custom(f64),
}

/// Transmission-control parameters, homogeneous among workers.
#[derive(Copy, Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TxControlParams {
    /// Feedback-staleness threshold before a worker inflates its send
    /// probability.
    pub delta_t: SimDuration,
    pub mode: SlopeMode,
}

impl TxControlParams {
    pub fn new(delta_t: SimDuration, mode: SlopeMode) -> Self {
        assert!(!delta_t.is_zero(), "staleness threshold must be positive");
        if let SlopeMode::Custom(v) = mode {
            assert!(v >= 0.0, "slope must be non-negative");
        }
        TxControlParams { delta_t, mode }
    }

    /// Slope of the staleness term, in 1/second.
    pub fn slope(&self) -> f64 {
        match self.mode {
            SlopeMode::Urgency => 1.0 / self.delta_t.as_secs_f64(),
            SlopeMode::Fairness => self.delta_t.as_secs_f64(),
            SlopeMode::Custom(v) => v,
        }
    }
}

/// Send probability for the congestion regime.
///
/// With `N` active clusters over `q_max` segments, a worker with feedback age
/// `delta_hat` transmits with `min(q_max/N + f, 1)` where `f` ramps linearly
/// once the feedback is older than the threshold. Below the congestion
/// regime (`N <= q_max`) workers transmit at will.
pub fn tx_probability(
    feedback: &QueueFeedback,
    delta_hat: SimDuration,
    params: &TxControlParams,
) -> Result<f64, OlafError> {
    let n = feedback.active_clusters;
    if n == 0 {
        return Err(OlafError::NoActiveClusters);
    }
    if n <= feedback.q_max {
        return Ok(1.0);
    }
    let base = f64::from(feedback.q_max) / f64::from(n);
    let over = delta_hat.saturating_sub(params.delta_t).as_secs_f64();
    let staleness = params.slope() * over;
    Ok((base + staleness).min(1.0))
}

/// What a worker decided to do at a transmission opportunity.
#[derive(Clone, PartialEq, Debug)]
pub enum TickAction {
    Send(ModelUpdate),
    /// Bernoulli draw failed; try again at the given time.
    Retry(SimTime),
    /// Nothing pending.
    Idle,
}

/// One worker: pending-update slot, feedback bookkeeping and the seeded
/// stream driving its transmission draws.
pub struct Worker {
    pub id: WorkerId,
    pub gen_period: SimDuration,
    tx_params: Option<TxControlParams>,
    last_ack_time: Option<SimTime>,
    latest_feedback: Option<QueueFeedback>,
    pending_update: Option<ModelUpdate>,
    rng: ChaCha8Rng,
    /// Global weights in use, adopted at generation boundaries only.
    current_weights: Option<Vec<f64>>,
    staged_weights: Option<Vec<f64>>,
}

impl Worker {
    pub fn new(
        id: WorkerId,
        gen_period: SimDuration,
        tx_params: Option<TxControlParams>,
        seed: u64,
    ) -> Self {
        Worker {
            id,
            gen_period,
            tx_params,
            last_ack_time: None,
            latest_feedback: None,
            pending_update: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current_weights: None,
            staged_weights: None,
        }
    }

    pub fn pending(&self) -> Option<&ModelUpdate> {
        self.pending_update.as_ref()
    }

    pub fn current_weights(&self) -> Option<&[f64]> {
        self.current_weights.as_deref()
    }

    /// Time since the last ACK, saturating to "forever" before the first one.
    pub fn feedback_age(&self, now: SimTime) -> SimDuration {
        match self.last_ack_time {
            Some(t) => now.saturating_since(t),
            None => SimDuration::MAX,
        }
    }

    /// Stages a freshly generated update; any unsent predecessor is obsolete
    /// and silently replaced. Weights staged by ACKs are adopted here.
    pub fn generate(&mut self, update: ModelUpdate) {
        debug_assert_eq!(update.worker, self.id);
        if let Some(w) = self.staged_weights.take() {
            self.current_weights = Some(w);
        }
        self.pending_update = Some(update);
    }

    /// Records ACK reception: resets the feedback timer, keeps the freshest
    /// queue state and stages the global weights for the next generation
    /// boundary (in-progress work is not preempted).
    pub fn on_ack(&mut self, weights: &[f64], feedback: QueueFeedback, now: SimTime) {
        self.last_ack_time = Some(now);
        match self.latest_feedback {
            Some(prev) if prev.emitted_at > feedback.emitted_at => {}
            _ => self.latest_feedback = Some(feedback),
        }
        self.staged_weights = Some(weights.to_vec());
    }

    /// Transmission opportunity: draw against the send probability and either
    /// emit the pending update or schedule a retry.
    ///
    /// Workers that never received feedback send unconditionally so cold
    /// starts are not starved.
    pub fn on_tick(&mut self, now: SimTime) -> TickAction {
        if self.pending_update.is_none() {
            return TickAction::Idle;
        }
        let p = self.send_probability(now);
        // the draw is taken even when p == 1 so decision streams stay aligned
        let accept = self.rng.gen::<f64>() < p;
        if accept {
            TickAction::Send(self.pending_update.take().expect("pending checked above"))
        } else {
            TickAction::Retry(now + self.retry_epoch())
        }
    }

    pub fn send_probability(&self, now: SimTime) -> f64 {
        let params = match &self.tx_params {
            Some(p) => p,
            None => return 1.0,
        };
        let feedback = match &self.latest_feedback {
            Some(fb) => fb,
            None => return 1.0,
        };
        tx_probability(feedback, self.feedback_age(now), params)
            .expect("stamped feedback always reports at least one active cluster")
    }

    /// Backoff before re-drawing a failed transmission.
    pub fn retry_epoch(&self) -> SimDuration {
        match &self.tx_params {
            Some(p) => self.gen_period.min(SimDuration(p.delta_t.as_nanos() / 2)),
            None => self.gen_period,
        }
    }
}

/// How the reward gate treats the stored global reward.
#[derive(Copy, Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardGateMode {
    /// Track the best reward seen: accepted updates raise the bar.
    TrackBest,
    /// Gate against a fixed threshold.
    Fixed(f64),
}

/// Averaging rule for the server's running gradient.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientAvgMode {
    /// Plain pairwise mean of the running average and the incoming gradient.
    Pairwise,
    /// Mean weighted by how many worker updates each side carries.
    CountWeighted,
}

/// ACK returned for every delivered update; queue feedback is stamped later
/// by the accelerator on the reverse path.
#[derive(Clone, PartialEq, Debug)]
pub struct AckMessage {
    pub cluster: ClusterId,
    pub weights: Vec<f64>,
    pub feedback: Option<QueueFeedback>,
    /// Origins of the acknowledged update, for delivery confirmation.
    pub confirms: Vec<(WorkerId, SimTime)>,
    pub emitted_at: SimTime,
}

/// Parameter-server state: weights, reward gate and the running gradient.
pub struct ParameterServer {
    weights: Vec<f64>,
    global_reward: f64,
    avg_gradient: Option<ModelUpdate>,
    learning_rate: f64,
    initialized: bool,
    gate_mode: RewardGateMode,
    avg_mode: GradientAvgMode,
    accepted: u64,
    rejected: u64,
}

impl ParameterServer {
    pub fn new(learning_rate: f64, gate_mode: RewardGateMode, avg_mode: GradientAvgMode) -> Self {
        ParameterServer {
            weights: Vec::new(),
            global_reward: f64::NEG_INFINITY,
            avg_gradient: None,
            learning_rate,
            initialized: false,
            gate_mode,
            avg_mode,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn global_reward(&self) -> f64 {
        self.global_reward
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Handles one delivered update and returns the ACK for its cluster.
    ///
    /// The first-ever delivery initializes the global weights from its
    /// payload and is not gated; later deliveries pass the reward gate to
    /// fold their gradient into the running average and step the weights.
    pub fn receive(&mut self, update: &ModelUpdate, now: SimTime) -> Result<AckMessage, OlafError> {
        if !self.initialized {
            self.weights = update.gradient.clone();
            self.initialized = true;
            return Ok(self.ack_for(update, now));
        }
        if update.dim() != self.weights.len() {
            return Err(OlafError::DimensionMismatch {
                left: update.dim(),
                right: self.weights.len(),
            });
        }
        let threshold = match self.gate_mode {
            RewardGateMode::TrackBest => self.global_reward,
            RewardGateMode::Fixed(t) => t,
        };
        if update.reward > threshold {
            self.fold_gradient(update)?;
            let grad = &self.avg_gradient.as_ref().expect("set by fold_gradient").gradient;
            for (w, g) in self.weights.iter_mut().zip(grad) {
                *w += self.learning_rate * g;
            }
            if matches!(self.gate_mode, RewardGateMode::TrackBest) {
                self.global_reward = update.reward;
            }
            self.accepted += 1;
        } else {
            self.rejected += 1;
        }
        Ok(self.ack_for(update, now))
    }

    fn fold_gradient(&mut self, update: &ModelUpdate) -> Result<(), OlafError> {
        let folded = match self.avg_gradient.take() {
            None => update.clone(),
            Some(mut acc) => match self.avg_mode {
                GradientAvgMode::Pairwise => {
                    // literal avg(g_a, g_i) regardless of merge counts
                    acc.agg_count = 1;
                    let mut one = update.clone();
                    one.agg_count = 1;
                    types::merge_updates(&acc, &one)?
                }
                GradientAvgMode::CountWeighted => types::merge_updates(&acc, update)?,
            },
        };
        self.avg_gradient = Some(folded);
        Ok(())
    }

    fn ack_for(&self, update: &ModelUpdate, now: SimTime) -> AckMessage {
        AckMessage {
            cluster: update.cluster(),
            weights: self.weights.clone(),
            feedback: None,
            confirms: update.origins.clone(),
            emitted_at: now,
        }
    }
}
