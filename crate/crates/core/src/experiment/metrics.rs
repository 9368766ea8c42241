//! Closed-loop performance metrics.

use serde::{Deserialize, Serialize};

/// Tracking metrics for one output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    /// Integral of absolute error over the whole run.
    pub iae: f64,
    /// IAE from the first disturbance onset on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iae_post_disturbance: Option<f64>,
    /// 10–90 % rise time after the first setpoint change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rise_time: Option<f64>,
    /// Time to stay within ±2 % of the step size, measured from the step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settling_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overshoot_pct: Option<f64>,
    /// Samples outside `[y_min, y_max]`.
    pub violations: usize,
}

const BOUND_TOL: f64 = 1e-9;

/// `t`, `r`, `y` are sampled at interval `ts`; errors are integrated with
/// the rectangle rule.
pub fn channel_metrics(
    t: &[f64],
    r: &[f64],
    y: &[f64],
    ts: f64,
    bounds: (f64, f64),
    disturbance_onset: Option<f64>,
) -> ChannelMetrics {
    let iae = r.iter().zip(y).map(|(r, y)| (r - y).abs() * ts).sum();
    let iae_post_disturbance = disturbance_onset.map(|t0| {
        t.iter()
            .zip(r.iter().zip(y))
            .filter(|(t, _)| **t >= t0 - 1e-9)
            .map(|(_, (r, y))| (r - y).abs() * ts)
            .sum()
    });
    let violations = y
        .iter()
        .filter(|&&v| v < bounds.0 - BOUND_TOL || v > bounds.1 + BOUND_TOL)
        .count();
    let (rise_time, settling_time, overshoot_pct) = step_metrics(t, r, y).unwrap_or((None, None, None));
    ChannelMetrics {
        iae,
        iae_post_disturbance,
        rise_time,
        settling_time,
        overshoot_pct,
        violations,
    }
}

type StepMetrics = (Option<f64>, Option<f64>, Option<f64>);

/// Rise, settling and overshoot for the first reference step; `None` when
/// the reference never changes.
fn step_metrics(t: &[f64], r: &[f64], y: &[f64]) -> Option<StepMetrics> {
    let k0 = (1..r.len()).find(|&k| r[k] != r[k - 1])?;
    let (r0, r1) = (r[k0 - 1], r[k0]);
    let delta = r1 - r0;
    let end = (k0 + 1..r.len()).find(|&k| r[k] != r1).unwrap_or(r.len());
    let progress = |k: usize| (y[k] - r0) / delta;

    // Crossing instants are interpolated linearly between samples.
    let crossing = |level: f64| {
        let k = (k0..end).find(|&k| progress(k) >= level)?;
        if k == k0 {
            return Some(t[k]);
        }
        let (p0, p1) = (progress(k - 1), progress(k));
        Some(t[k - 1] + (level - p0) / (p1 - p0) * (t[k] - t[k - 1]))
    };
    let rise = crossing(0.1).zip(crossing(0.9)).map(|(a, b)| b - a);

    let peak = (k0..end).map(progress).fold(f64::NEG_INFINITY, f64::max);
    let overshoot = Some(((peak - 1.0) * 100.0).max(0.0));

    let band = 0.02 * delta.abs();
    let settling = match (k0..end).rev().find(|&k| (y[k] - r1).abs() > band) {
        None => Some(0.0),
        Some(k) if k + 1 >= end => None,
        Some(k) => Some(t[k + 1] - t[k0]),
    };
    Some((rise, settling, overshoot))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_order(n: usize, k0: usize, pole: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let r: Vec<f64> = (0..n).map(|k| if k >= k0 { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n)
            .map(|k| if k > k0 { 1.0 - pole.powi((k - k0) as i32) } else { 0.0 })
            .collect();
        (t, r, y)
    }

    #[test]
    fn first_order_step_by_hand() {
        // y = 1 - 0.5^j after the step at k0 = 2: progress 0, 0.5, 0.75,
        // 0.875, 0.9375 at k = 2..6. 10 % is crossed at 2 + 0.1 / 0.5,
        // 90 % at 5 + 0.025 / 0.0625.
        let (t, r, y) = first_order(30, 2, 0.5);
        let m = channel_metrics(&t, &r, &y, 1.0, (-10.0, 10.0), None);
        assert!((m.rise_time.unwrap() - 3.2).abs() < 1e-12);
        assert_eq!(m.overshoot_pct, Some(0.0));
        // 0.5^j <= 0.02 first at j = 6.
        assert_eq!(m.settling_time, Some(6.0));
        // IAE = 1 (at k = 2) + sum_{j>=1} 0.5^j over 27 samples.
        let oracle = 1.0 + (1..28).map(|j| 0.5f64.powi(j)).sum::<f64>();
        assert!((m.iae - oracle).abs() < 1e-12);
        assert_eq!(m.violations, 0);
    }

    #[test]
    fn overshoot_and_violations() {
        let t: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let r = vec![0.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let y = vec![0.0, 0.0, 2.5, 2.0, 2.0, 2.0];
        let m = channel_metrics(&t, &r, &y, 1.0, (-1.0, 2.2), Some(3.0));
        assert!((m.overshoot_pct.unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(m.violations, 1);
        assert_eq!(m.iae_post_disturbance, Some(0.0));
        assert_eq!(m.settling_time, Some(2.0));
    }

    #[test]
    fn unsettled_and_flat_reference() {
        let (t, r, mut y) = first_order(10, 2, 0.9);
        let m = channel_metrics(&t, &r, &y, 1.0, (-1.0, 2.0), None);
        assert_eq!(m.settling_time, None);
        y.iter_mut().for_each(|v| *v = 0.0);
        let flat = vec![0.0; 10];
        let m = channel_metrics(&t, &flat, &y, 1.0, (-1.0, 2.0), None);
        assert_eq!((m.rise_time, m.settling_time, m.overshoot_pct), (None, None, None));
        assert_eq!(m.iae, 0.0);
    }
}
