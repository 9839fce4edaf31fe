//! Age-of-model computations over per-cluster delivery logs.
//!
//! The age at the receiver grows linearly with time and drops on each
//! delivery to the age of the delivered update, producing a sawtooth. This
//! module evaluates the sawtooth pointwise, extracts its peaks, integrates it
//! in closed form for time averages, and scores cross-cluster parity with
//! Jain's index.

use serde::{Deserialize, Serialize};

use crate::types::{ClusterId, SimDuration, SimTime};
use crate::OlafError;

/// One delivered update: when it was generated and when it arrived.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Delivery {
    pub gen_time: SimTime,
    pub deliver_time: SimTime,
}

/// How the age is accounted before the first delivery.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    /// Age ramps from zero at t = 0 (there is no model yet).
    #[default]
    AgeFromZero,
    /// Accounting starts at the first delivery.
    FromFirstDelivery,
}

/// Per-cluster delivery log over a fixed observation horizon.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct AomSeries {
    pub cluster: ClusterId,
    pub deliveries: Vec<Delivery>,
    pub horizon: SimTime,
}

impl AomSeries {
    pub fn new(cluster: ClusterId, horizon: SimTime) -> Self {
        AomSeries { cluster, deliveries: Vec::new(), horizon }
    }

    /// Appends a delivery; delivery times must be strictly increasing and an
    /// update cannot be delivered before it was generated.
    pub fn push(&mut self, gen_time: SimTime, deliver_time: SimTime) {
        debug_assert!(gen_time <= deliver_time);
        if let Some(last) = self.deliveries.last() {
            debug_assert!(deliver_time > last.deliver_time);
        }
        self.deliveries.push(Delivery { gen_time, deliver_time });
    }

    /// Age at time `t`: `t` minus the generation time of the latest delivery
    /// at or before `t`. Before any delivery the age is `t` itself.
    pub fn aom_at(&self, t: SimTime) -> SimDuration {
        let idx = self.deliveries.partition_point(|d| d.deliver_time <= t);
        if idx == 0 {
            return t.saturating_since(SimTime::ZERO);
        }
        t - self.deliveries[idx - 1].gen_time
    }

    /// Peak ages per the sawtooth geometry.
    ///
    /// Entry `k` emits a peak only if it actually resets the age before the
    /// next update exists, i.e. `deliver(k) < gen(k+1)`; entries overlapped by
    /// the next update's generation were aggregated or replaced downstream
    /// and contribute no peak. Each emitted peak is measured against the
    /// previous emitting entry (the last departed update); the first entry is
    /// measured against itself.
    pub fn peak_aom(&self) -> Vec<SimDuration> {
        let mut peaks = Vec::new();
        let mut last_departed: Option<usize> = None;
        for (k, d) in self.deliveries.iter().enumerate() {
            let emits = match self.deliveries.get(k + 1) {
                Some(next) => d.deliver_time < next.gen_time,
                None => true,
            };
            if emits {
                let base = self.deliveries[last_departed.unwrap_or(k)].gen_time;
                peaks.push(d.deliver_time - base);
                last_departed = Some(k);
            }
        }
        peaks
    }

    /// Time-averaged age over the horizon, from the exact trapezoid areas of
    /// the sawtooth. Returned in seconds.
    pub fn avg_aom(&self, mode: ColdStart) -> Result<f64, OlafError> {
        let (start, base0) = match mode {
            ColdStart::AgeFromZero => (SimTime::ZERO, SimTime::ZERO),
            ColdStart::FromFirstDelivery => match self.deliveries.first() {
                Some(d) => (d.deliver_time, d.gen_time),
                None => (SimTime::ZERO, SimTime::ZERO),
            },
        };
        if self.horizon <= start {
            return Err(OlafError::ZeroHorizon);
        }
        let window = (self.horizon - start).as_nanos();

        // Sum of 2x the trapezoid areas, exactly: over a segment [t0, t1) with
        // age base g, 2*integral = (t1-g)^2 - (t0-g)^2.
        let mut twice_area: u128 = 0;
        let mut seg_start = start;
        let mut base = base0;
        let segment = |t0: SimTime, t1: SimTime, g: SimTime| -> u128 {
            let a = (t1.as_nanos() - g.as_nanos()) as u128;
            let b = (t0.as_nanos() - g.as_nanos()) as u128;
            a * a - b * b
        };
        for d in &self.deliveries {
            if d.deliver_time <= seg_start {
                // deliveries at or before the accounting start only move the base
                base = base.max(d.gen_time);
                continue;
            }
            if d.deliver_time >= self.horizon {
                break;
            }
            twice_area += segment(seg_start, d.deliver_time, base);
            seg_start = d.deliver_time;
            base = d.gen_time;
        }
        twice_area += segment(seg_start, self.horizon, base);
        Ok(twice_area as f64 / 2.0 / window as f64 * 1e-9)
    }

    /// Sawtooth breakpoints `(t, age)` ready for plotting: two rows per
    /// delivery (just before and just after the jump), plus the endpoints.
    pub fn breakpoints(&self) -> Vec<(SimTime, SimDuration)> {
        let mut rows = vec![(SimTime::ZERO, SimDuration::ZERO)];
        for d in &self.deliveries {
            if d.deliver_time > self.horizon {
                break;
            }
            rows.push((d.deliver_time, self.aom_before(d.deliver_time)));
            rows.push((d.deliver_time, d.deliver_time - d.gen_time));
        }
        rows.push((self.horizon, self.aom_at(self.horizon)));
        rows
    }

    /// Age just before `t` (left limit of the sawtooth).
    pub fn aom_before(&self, t: SimTime) -> SimDuration {
        let idx = self.deliveries.partition_point(|d| d.deliver_time < t);
        if idx == 0 {
            return t.saturating_since(SimTime::ZERO);
        }
        t - self.deliveries[idx - 1].gen_time
    }
}

/// Jain's fairness index `(sum x)^2 / (n * sum x^2)` over non-negative
/// values; 1 means perfect parity. An all-zero vector is perfectly equal.
pub fn jain_fairness(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "fairness of an empty set is undefined");
    assert!(values.iter().all(|v| *v >= 0.0), "fairness is defined over non-negative values");
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return 1.0;
    }
    sum * sum / (values.len() as f64 * sum_sq)
}

/// Cross-cluster parity report over per-cluster average ages (seconds).
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_cluster_avg_aom: Vec<f64>,
    pub jain_index: f64,
    pub max_pairwise_gap: f64,
}

impl FairnessReport {
    pub fn from_averages(per_cluster_avg_aom: Vec<f64>) -> Self {
        let jain_index = jain_fairness(&per_cluster_avg_aom);
        let max = per_cluster_avg_aom.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = per_cluster_avg_aom.iter().cloned().fold(f64::INFINITY, f64::min);
        FairnessReport {
            per_cluster_avg_aom,
            jain_index,
            max_pairwise_gap: if max >= min { max - min } else { 0.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(entries: &[(u64, u64)], horizon: u64) -> AomSeries {
        let mut s = AomSeries::new(ClusterId(0), SimTime(horizon));
        for &(a, d) in entries {
            s.push(SimTime(a), SimTime(d));
        }
        s
    }

    /// Quadrature oracle for the average age, independent of the closed form:
    /// composite trapezoid over `aom_at` samples between consecutive jump
    /// knots, with the left limit taken via `aom_before` at each knot.
    fn numeric_avg(s: &AomSeries, start: SimTime) -> f64 {
        let mut knots: Vec<u64> = vec![start.as_nanos()];
        knots.extend(
            s.deliveries
                .iter()
                .map(|d| d.deliver_time.as_nanos())
                .filter(|&d| d > start.as_nanos() && d < s.horizon.as_nanos()),
        );
        knots.push(s.horizon.as_nanos());
        let mut area = 0.0;
        for w in knots.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let m = 8u64;
            let mut prev_t = t0;
            let mut prev_v = s.aom_at(SimTime(t0)).as_secs_f64();
            for i in 1..=m {
                let t = t0 + (t1 - t0) * i / m;
                let v = if i == m {
                    s.aom_before(SimTime(t)).as_secs_f64()
                } else {
                    s.aom_at(SimTime(t)).as_secs_f64()
                };
                area += (t - prev_t) as f64 * 1e-9 * (prev_v + v) / 2.0;
                prev_t = t;
                prev_v = v;
            }
        }
        area / ((s.horizon.as_nanos() - start.as_nanos()) as f64 * 1e-9)
    }

    #[test]
    fn age_grows_linearly_after_a_delivery() {
        let s = series(&[(0, 2)], 10);
        assert_eq!(s.aom_at(SimTime(5)), SimDuration(5));
        // at the jump the age equals the update's age
        assert_eq!(s.aom_at(SimTime(2)), SimDuration(2));
    }

    #[test]
    fn staircase_age() {
        let s = series(&[(0, 2), (3, 4)], 10);
        // at t=4.5ns scaled by 10: use 45 with entries x10
        let s10 = series(&[(0, 20), (30, 40)], 100);
        assert_eq!(s10.aom_at(SimTime(45)), SimDuration(15));
        assert_eq!(s.aom_at(SimTime(3)), SimDuration(3));
        assert_eq!(s.aom_at(SimTime(4)), SimDuration(1));
    }

    #[test]
    fn cold_start_age_is_elapsed_time() {
        let s = series(&[], 10);
        assert_eq!(s.aom_at(SimTime(7)), SimDuration(7));
    }

    #[test]
    fn peaks_of_clean_staircase() {
        let s = series(&[(0, 2), (3, 5)], 10);
        assert_eq!(s.peak_aom(), vec![SimDuration(2), SimDuration(5)]);
    }

    #[test]
    fn single_delivery_peak_is_its_own_age() {
        let s = series(&[(1, 4)], 10);
        assert_eq!(s.peak_aom(), vec![SimDuration(3)]);
    }

    #[test]
    fn overlapped_entry_emits_no_peak() {
        // entry 1 is generated before entry 0 delivers: entry 0 was absorbed
        // downstream, so only the merged departure resets the age and the
        // merged departure's peak is measured against itself
        let s = series(&[(0, 10), (8, 12), (20, 25)], 40);
        let peaks = s.peak_aom();
        assert_eq!(peaks, vec![SimDuration(4), SimDuration(17)]);
    }

    #[test]
    fn absorbed_run_resolves_against_last_departed() {
        // entry 1 overlapped by entry 2's generation: peaks come from entries
        // 0 and 2, the latter measured against entry 0's generation
        let s = series(&[(0, 2), (3, 10), (9, 12)], 40);
        assert_eq!(s.peak_aom(), vec![SimDuration(2), SimDuration(12)]);
    }

    #[test]
    fn avg_of_one_delivery_by_hand() {
        // ramp 0..2 (area 2) then age 2 -> 4 over 2..4 (area 6); avg = 8/4
        let s = series(&[(0, 2)], 4);
        assert!((s.avg_aom(ColdStart::AgeFromZero).unwrap() - 2.0e-9).abs() < 1e-18);
    }

    #[test]
    fn empty_series_averages_half_horizon() {
        let s = series(&[], 1_000);
        assert!((s.avg_aom(ColdStart::AgeFromZero).unwrap() - 500.0e-9).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let s = series(&[], 0);
        assert!(s.avg_aom(ColdStart::AgeFromZero).is_err());
    }

    #[test]
    fn periodic_deliveries_approach_one_and_a_half_periods() {
        // generated every P, each delivered one period later: sawtooth between
        // P and 2P, so the long-run average is 1.5 P
        let period = 1_000u64;
        let n = 400;
        let entries: Vec<(u64, u64)> = (0..n).map(|k| (k * period, (k + 1) * period)).collect();
        let s = series(&entries, n * period);
        let avg = s.avg_aom(ColdStart::AgeFromZero).unwrap();
        let expect = 1.5 * period as f64 * 1e-9;
        assert!((avg - expect).abs() / expect < 0.01, "avg {avg} vs {expect}");
        // and the closed form agrees with numerical integration
        let numeric = numeric_avg(&s, SimTime::ZERO);
        assert!((avg - numeric).abs() / numeric < 1e-6);
    }

    #[test]
    fn jain_matches_hand_values() {
        assert!((jain_fairness(&[5.0, 5.0, 5.0]) - 1.0).abs() < 1e-12);
        assert!((jain_fairness(&[1.0, 2.0, 3.0]) - 36.0 / 42.0).abs() < 1e-12);
        let n = 8;
        let mut one_hot = vec![0.0; n];
        one_hot[3] = 9.0;
        assert!((jain_fairness(&one_hot) - 1.0 / n as f64).abs() < 1e-12);
        assert_eq!(jain_fairness(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn peaks_match_age_just_before_delivery() {
        let s = series(&[(0, 5), (7, 12), (14, 20)], 30);
        let peaks = s.peak_aom();
        let expected: Vec<SimDuration> =
            s.deliveries.iter().map(|d| s.aom_before(d.deliver_time)).collect();
        assert_eq!(peaks, expected);
    }

    fn arbitrary_clean_series() -> impl Strategy<Value = AomSeries> {
        // strictly separated staircase: gen(k+1) > deliver(k)
        proptest::collection::vec((1u64..50, 1u64..80), 1..40).prop_map(|gaps| {
            let mut t = 0u64;
            let mut s = AomSeries::new(ClusterId(0), SimTime::ZERO);
            for (gen_gap, delay) in gaps {
                let gen = t + gen_gap;
                let del = gen + delay;
                s.push(SimTime(gen), SimTime(del));
                t = del;
            }
            s.horizon = SimTime(t + 100);
            s
        })
    }

    fn arbitrary_overlapping_series() -> impl Strategy<Value = AomSeries> {
        // generations strictly increasing, delays free to overlap
        proptest::collection::vec((1u64..40, 1u64..200), 2..40).prop_map(|gaps| {
            let mut s = AomSeries::new(ClusterId(0), SimTime::ZERO);
            let mut gen = 0u64;
            let mut last_del = 0u64;
            for (gen_gap, delay) in gaps {
                gen += gen_gap;
                let del = (gen + delay).max(last_del + 1);
                s.push(SimTime(gen), SimTime(del));
                last_del = del;
            }
            s.horizon = SimTime(last_del + 100);
            s
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn closed_form_matches_numerical_integration(s in arbitrary_clean_series()) {
            let avg = s.avg_aom(ColdStart::AgeFromZero).unwrap();
            let numeric = numeric_avg(&s, SimTime::ZERO);
            prop_assert!((avg - numeric).abs() <= 1e-6 * numeric.abs().max(1e-12),
                "closed {avg} vs numeric {numeric}");
        }

        #[test]
        fn peaks_are_the_pre_jump_ages(s in arbitrary_clean_series()) {
            let peaks = s.peak_aom();
            prop_assert_eq!(peaks.len(), s.deliveries.len());
            // the first peak is measured against its own generation by
            // convention, so the sawtooth consistency starts at the second
            for (p, d) in peaks.iter().zip(&s.deliveries).skip(1) {
                prop_assert_eq!(*p, s.aom_before(d.deliver_time));
            }
        }

        #[test]
        fn translation_leaves_averages_and_peaks_unchanged(
            s in arbitrary_clean_series(),
            shift in 1u64..1_000_000,
        ) {
            let mut shifted = s.clone();
            for d in &mut shifted.deliveries {
                d.gen_time = SimTime(d.gen_time.as_nanos() + shift);
                d.deliver_time = SimTime(d.deliver_time.as_nanos() + shift);
            }
            shifted.horizon = SimTime(s.horizon.as_nanos() + shift);
            let a = s.avg_aom(ColdStart::FromFirstDelivery).unwrap();
            let b = shifted.avg_aom(ColdStart::FromFirstDelivery).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
            prop_assert_eq!(s.peak_aom(), shifted.peak_aom());
        }

        #[test]
        fn merging_deliveries_never_increases_average_age(
            s in arbitrary_overlapping_series(),
            pick in 0usize..64,
        ) {
            // merge a pair (i, i+1) whose later generation precedes the
            // earlier delivery, into one entry carrying the later generation
            // and the earlier delivery, as in-queue aggregation does
            let mergeable: Vec<usize> = (0..s.deliveries.len() - 1)
                .filter(|&i| s.deliveries[i + 1].gen_time <= s.deliveries[i].deliver_time)
                .collect();
            prop_assume!(!mergeable.is_empty());
            let i = mergeable[pick % mergeable.len()];
            let mut merged = s.clone();
            merged.deliveries[i] = Delivery {
                gen_time: s.deliveries[i + 1].gen_time,
                deliver_time: s.deliveries[i].deliver_time,
            };
            merged.deliveries.remove(i + 1);
            let before = s.avg_aom(ColdStart::AgeFromZero).unwrap();
            let after = merged.avg_aom(ColdStart::AgeFromZero).unwrap();
            prop_assert!(after <= before + 1e-12, "merge increased avg: {before} -> {after}");
        }
    }
}
