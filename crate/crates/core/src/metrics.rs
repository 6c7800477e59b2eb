//! Link-quality estimation and the ELP link/path cost.
//!
//! A link's cost is the product of a loss factor, an interference factor and
//! a capacity factor:
//!
//! ```text
//! loss         = 1 / (d_f^w * d_r^(1-w))
//! interference = 1 / (1 - b)
//! capacity     = ref_rate / capacity
//! ```
//!
//! `d_f`/`d_r` are forward/reverse probe delivery ratios, `w > 0.5` weights
//! the forward (data) direction, and `b` is the busy fraction of the link's
//! contention domain. Path cost is the plain sum of link costs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sum_in_order, Float, Scalar};

/// Delivery ratios below this make a link unusable.
pub const DELIVERY_FLOOR: f64 = 0.01;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MetricError {
    #[error("link is dead (delivery ratio below floor)")]
    DeadLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeDirection {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkStats<T> {
    pub d_f: T,
    pub d_r: T,
    pub busy: T,
    pub capacity: T,
    /// Probe counts `[forward, reverse]`.
    pub samples: [u64; 2],
}

impl<T: Scalar> LinkStats<T> {
    /// Fresh estimate: both ratios start at one and decay as losses arrive.
    pub fn new(capacity: T) -> Self {
        Self {
            d_f: T::one(),
            d_r: T::one(),
            busy: T::zero(),
            capacity,
            samples: [0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElpParams<T> {
    /// Forward-bias exponent in (0.5, 1].
    pub w: T,
    /// Busy-fraction clamp in (0, 1).
    pub b_max: T,
    /// Bits/s that maps to a capacity factor of one.
    pub ref_rate: T,
    pub ewma_alpha: T,
}

impl<T: Scalar> Default for ElpParams<T> {
    fn default() -> Self {
        Self {
            w: T::lit(0.75),
            b_max: T::lit(0.99),
            ref_rate: T::lit(54e6),
            ewma_alpha: T::lit(0.1),
        }
    }
}

impl<T: Scalar> ElpParams<T> {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.w > T::lit(0.5) && self.w <= T::one()) {
            errs.push("elp.w must lie in (0.5, 1]".into());
        }
        if !(self.b_max > T::zero() && self.b_max < T::one()) {
            errs.push("elp.b_max must lie in (0, 1)".into());
        }
        if !(self.ref_rate > T::zero()) {
            errs.push("elp.ref_rate must be positive".into());
        }
        if !(self.ewma_alpha > T::zero() && self.ewma_alpha <= T::one()) {
            errs.push("elp.ewma_alpha must lie in (0, 1]".into());
        }
        errs
    }
}

/// EWMA update of one direction's delivery ratio.
pub fn record_probe<T: Scalar>(
    stats: &mut LinkStats<T>,
    direction: ProbeDirection,
    received: bool,
    alpha: T,
) {
    let sample = if received { T::one() } else { T::zero() };
    let (ratio, count) = match direction {
        ProbeDirection::Forward => (&mut stats.d_f, &mut stats.samples[0]),
        ProbeDirection::Reverse => (&mut stats.d_r, &mut stats.samples[1]),
    };
    *ratio = (T::one() - alpha) * *ratio + alpha * sample;
    *count += 1;
}

pub fn busy_fraction<T: Scalar>(airtime: T, window: T, b_max: T) -> T {
    debug_assert!(window > T::zero());
    (airtime / window).min_of(b_max)
}

pub fn elp_link<T: Float + Scalar>(stats: &LinkStats<T>, params: &ElpParams<T>) -> Result<T, MetricError> {
    let floor = T::lit(DELIVERY_FLOOR);
    if stats.d_f < floor || stats.d_r < floor {
        return Err(MetricError::DeadLink);
    }
    let w = params.w;
    let loss = T::one() / (stats.d_f.powf(w) * stats.d_r.powf(T::one() - w));
    let b = stats.busy.max_of(T::zero()).min_of(params.b_max);
    let interference = T::one() / (T::one() - b);
    let capacity = params.ref_rate / stats.capacity;
    Ok(loss * interference * capacity)
}

pub fn elp_path<T: Scalar>(link_costs: &[T]) -> T {
    sum_in_order(link_costs.iter().copied())
}

pub fn hop_count_metric<T: Scalar>() -> T {
    T::one()
}

pub fn hop_count_path(hops: usize) -> u64 {
    hops as u64
}

/// Routing metric selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Elp,
    HopCount,
}

impl Metric {
    /// Cost of one link under this metric; `None` means unusable.
    pub fn link_cost<T: Float + Scalar>(&self, stats: &LinkStats<T>, params: &ElpParams<T>) -> Option<T> {
        match self {
            Metric::Elp => elp_link(stats, params).ok(),
            Metric::HopCount => {
                let floor = T::lit(DELIVERY_FLOOR);
                (stats.d_f >= floor && stats.d_r >= floor).then(hop_count_metric)
            }
        }
    }
}

/// Sliding-window airtime accumulator for one link, in fixed-width buckets.
#[derive(Debug, Clone)]
pub struct AirtimeWindow {
    bucket_width: f64,
    n_buckets: i64,
    buckets: VecDeque<(i64, f64)>,
    sum: f64,
}

impl AirtimeWindow {
    pub fn new(window: f64, bucket_width: f64) -> Self {
        let n = (window / bucket_width).round().max(1.0) as i64;
        Self {
            bucket_width,
            n_buckets: n,
            buckets: VecDeque::new(),
            sum: 0.0,
        }
    }

    pub fn window(&self) -> f64 {
        self.n_buckets as f64 * self.bucket_width
    }

    fn evict(&mut self, now: f64) {
        let current = (now / self.bucket_width).floor() as i64;
        let mut changed = false;
        while let Some(&(idx, _)) = self.buckets.front() {
            if idx > current - self.n_buckets {
                break;
            }
            self.buckets.pop_front();
            changed = true;
        }
        if changed {
            self.sum = self.buckets.iter().map(|b| b.1).sum();
        }
    }

    pub fn record(&mut self, at: f64, airtime: f64) {
        self.evict(at);
        let idx = (at / self.bucket_width).floor() as i64;
        match self.buckets.back_mut() {
            Some(b) if b.0 == idx => b.1 += airtime,
            _ => self.buckets.push_back((idx, airtime)),
        }
        self.sum += airtime;
    }

    pub fn airtime(&mut self, now: f64) -> f64 {
        self.evict(now);
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(d_f: f64, d_r: f64, busy: f64, capacity: f64) -> LinkStats<f64> {
        LinkStats {
            d_f,
            d_r,
            busy,
            capacity,
            samples: [0, 0],
        }
    }

    #[test]
    fn all_received_is_fixed_point() {
        let mut s = LinkStats::new(1.0);
        for _ in 0..100 {
            record_probe(&mut s, ProbeDirection::Forward, true, 0.1);
        }
        assert_eq!(s.d_f, 1.0);
        assert_eq!(s.samples, [100, 0]);
    }

    #[test]
    fn single_loss_from_one() {
        let mut s = LinkStats::new(1.0);
        record_probe(&mut s, ProbeDirection::Reverse, false, 0.1);
        assert!((s.d_r - 0.9).abs() < 1e-15);
    }

    #[test]
    fn alternating_probes_settle_in_band() {
        // Oracle: closed-form two-cycle of the recurrence x' = 0.9 x + 0.1 s.
        let hi = 0.1 / (1.0 - 0.81);
        let lo = 0.9 * hi;
        let mut s = LinkStats::new(1.0);
        for i in 0..1000 {
            record_probe(&mut s, ProbeDirection::Forward, i % 2 == 0, 0.1);
            if i > 200 {
                assert!((s.d_f - 0.5).abs() <= 0.06);
            }
        }
        // Last sample was a loss.
        assert!((s.d_f - lo).abs() < 1e-9);
    }

    #[test]
    fn busy_fraction_examples() {
        assert_eq!(busy_fraction(0.0, 1.0, 0.99), 0.0);
        assert_eq!(busy_fraction(0.5, 1.0, 0.99), 0.5);
        assert_eq!(busy_fraction(2.0, 1.0, 0.99), 0.99);
        assert_eq!(busy_fraction(1.0, 1.0, 0.99), 0.99);
    }

    #[test]
    fn perfect_link_costs_one() {
        let p = ElpParams::<f64>::default();
        assert_eq!(elp_link(&stats(1.0, 1.0, 0.0, p.ref_rate), &p), Ok(1.0));
    }

    #[test]
    fn worked_link_cost() {
        let p = ElpParams::<f64>::default();
        let c = elp_link(&stats(0.5, 1.0, 0.5, p.ref_rate / 2.0), &p).unwrap();
        // 0.5^-0.75 * 2 * 2 evaluated independently: 2^0.75 = 1.6817928305...
        assert!((c - 6.727171322029716).abs() < 1e-12, "{c}");
    }

    #[test]
    fn dead_link_below_floor() {
        let p = ElpParams::<f64>::default();
        assert_eq!(elp_link(&stats(0.005, 1.0, 0.0, 1.0), &p), Err(MetricError::DeadLink));
        assert_eq!(elp_link(&stats(1.0, 0.005, 0.0, 1.0), &p), Err(MetricError::DeadLink));
        assert_eq!(Metric::HopCount.link_cost(&stats(0.005, 1.0, 0.0, 1.0), &p), None);
    }

    #[test]
    fn elp_works_in_single_precision() {
        let p = ElpParams::<f32>::default();
        let c = elp_link(&LinkStats { d_f: 0.5f32, d_r: 1.0, busy: 0.5, capacity: p.ref_rate / 2.0, samples: [0; 2] }, &p).unwrap();
        assert!((c - 6.727_171).abs() < 1e-4);
    }

    #[test]
    fn path_examples() {
        assert_eq!(elp_path::<f64>(&[]), 0.0);
        assert_eq!(elp_path(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(elp_path(&[3.0, 1.0, 2.0]), 6.0);
        assert_eq!(hop_count_metric::<f64>(), 1.0);
        assert_eq!(hop_count_path(3), 3);
        assert_eq!(hop_count_path(0), 0);
    }

    #[test]
    fn default_params_validate() {
        assert!(ElpParams::<f64>::default().validate().is_empty());
        let bad = ElpParams { w: 0.5, b_max: 1.0, ref_rate: 0.0, ewma_alpha: 0.0 };
        assert_eq!(bad.validate().len(), 4);
    }

    #[test]
    fn monotone_over_grid() {
        let p = ElpParams::<f64>::default();
        let grid = [0.05, 0.2, 0.5, 0.8, 1.0];
        let busy = [0.0, 0.3, 0.6, 0.95];
        let caps = [1e6, 11e6, 54e6];
        let cost = |df, dr, b, c| elp_link(&stats(df, dr, b, c), &p).unwrap();
        for &df in &grid {
            for &dr in &grid {
                for &b in &busy {
                    for &c in &caps {
                        let base = cost(df, dr, b, c);
                        for &df2 in grid.iter().filter(|&&x| x >= df) {
                            assert!(cost(df2, dr, b, c) <= base);
                        }
                        for &dr2 in grid.iter().filter(|&&x| x >= dr) {
                            assert!(cost(df, dr2, b, c) <= base);
                        }
                        for &c2 in caps.iter().filter(|&&x| x >= c) {
                            assert!(cost(df, dr, b, c2) <= base);
                        }
                        for &b2 in busy.iter().filter(|&&x| x >= b) {
                            assert!(cost(df, dr, b2, c) >= base);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn airtime_window_slides() {
        let mut w = AirtimeWindow::new(5.0, 0.1);
        w.record(0.05, 0.2);
        w.record(1.0, 0.3);
        assert!((w.airtime(1.0) - 0.5).abs() < 1e-12);
        assert!((w.airtime(4.95) - 0.5).abs() < 1e-12);
        assert!((w.airtime(5.11) - 0.3).abs() < 1e-12);
        assert_eq!(w.airtime(7.0), 0.0);
    }

    proptest! {
        #[test]
        fn forward_degradation_costs_more(d in 0.05f64..1.0, delta in 0.001f64..0.04, w in 0.51f64..1.0) {
            let p = ElpParams { w, ..ElpParams::default() };
            let fwd = elp_link(&stats(d - delta.min(d - 0.02), d, 0.1, 54e6), &p).unwrap();
            let rev = elp_link(&stats(d, d - delta.min(d - 0.02), 0.1, 54e6), &p).unwrap();
            prop_assert!(fwd > rev);
        }

        #[test]
        fn path_cost_is_additive(a in prop::collection::vec(0.0f64..100.0, 0..8), b in prop::collection::vec(0.0f64..100.0, 0..8)) {
            // Integer-valued costs keep float addition associative.
            let a: Vec<f64> = a.iter().map(|x| x.round()).collect();
            let b: Vec<f64> = b.iter().map(|x| x.round()).collect();
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(elp_path(&joined), elp_path(&a) + elp_path(&b));
        }
    }
}
