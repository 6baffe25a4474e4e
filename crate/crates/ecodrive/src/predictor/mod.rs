//! Target velocity prediction.
//!
//! The predictor consumes a short history of target-vehicle features and
//! produces a velocity forecast used by the gap constraint and the
//! receding-horizon optimizer. Features per 1 Hz history sample:
//!
//! * `v`: target velocity, m/s
//! * `a`: target acceleration, m/s^2
//! * `d_tl`: estimated target distance to the next signalized intersection;
//!   `500 m` is the out-of-range sentinel.
//!
//! The distance estimate follows the connected-vehicle setup: the ego knows
//! its own distance to the next light from signal broadcasts (received inside
//! `dsrc_range`) and subtracts the measured inter-vehicle gap. Beyond the
//! broadcast range the feature saturates at the sentinel.

mod gru;
mod linalg;
mod model;
mod train;

pub use gru::{gru_cell_step, GruWeights};
pub use linalg::Mat;
pub use model::{load_model, save_model, GruEdModel, MODEL_FORMAT_VERSION};
pub use train::{
    grad_check, loss_and_gradients, train, validation_rmse_ms, Gradients, Hyperparams,
    TrainingLog,
};

use crate::error::{Error, Result};
use crate::traffic::TargetTrajectory;
use serde::{Deserialize, Serialize};

/// Sentinel distance-to-light, m: no signalized intersection in range.
pub const DTL_SENTINEL_M: f64 = 500.0;
/// Smallest representable distance-to-light, m.
pub const DTL_EPS_M: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub v_ms: f64,
    pub a_ms2: f64,
    pub d_tl_m: f64,
}

/// Estimated target distance to the next light from ego-side measurements.
///
/// `d_tl_ego` is the ego's own distance to the next light (infinite when no
/// light lies ahead), `d_gap` the measured inter-vehicle gap. Inside the
/// broadcast range the estimate is their difference; a non-positive result
/// (the target has already crossed the bar) collapses to [`DTL_EPS_M`].
pub fn target_distance_to_light(d_tl_ego_m: f64, d_gap_m: f64, dsrc_range_m: f64) -> f64 {
    if d_tl_ego_m < dsrc_range_m {
        let d = d_tl_ego_m - d_gap_m;
        if d <= 0.0 {
            log::debug!(
                "target past the stop bar (ego {d_tl_ego_m:.1} m, gap {d_gap_m:.1} m); \
                 clamping distance-to-light to epsilon"
            );
            DTL_EPS_M
        } else {
            d.min(DTL_SENTINEL_M)
        }
    } else {
        DTL_SENTINEL_M
    }
}

/// Velocity forecast for the target vehicle.
///
/// `velocities_ms[i]` holds over the interval
/// `[start + i * period, start + (i+1) * period)`; the forecast position is
/// the exact integral of that step function, so it is piecewise linear in
/// time. `position_offsets_m[i]` is the displacement accumulated at the end
/// of interval `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetForecast {
    pub start_time_s: f64,
    pub sample_period_s: f64,
    pub velocities_ms: Vec<f64>,
    pub position_offsets_m: Vec<f64>,
}

impl TargetForecast {
    pub fn from_velocities(start_time_s: f64, sample_period_s: f64, velocities_ms: Vec<f64>) -> Self {
        assert!(sample_period_s > 0.0, "sample period must be positive");
        assert!(!velocities_ms.is_empty(), "forecast must hold at least one sample");
        debug_assert!(velocities_ms.iter().all(|v| *v >= 0.0));
        let mut position_offsets_m = Vec::with_capacity(velocities_ms.len());
        let mut pos = 0.0;
        for v in &velocities_ms {
            pos += v * sample_period_s;
            position_offsets_m.push(pos);
        }
        TargetForecast {
            start_time_s,
            sample_period_s,
            velocities_ms,
            position_offsets_m,
        }
    }

    /// Forecast velocity at time `t`; the last sample is held past the horizon.
    pub fn velocity_at(&self, t: f64) -> f64 {
        assert!(
            t >= self.start_time_s - 1e-9,
            "query t = {t} before forecast start {}",
            self.start_time_s
        );
        let idx = ((t - self.start_time_s) / self.sample_period_s).floor() as usize;
        let idx = idx.min(self.velocities_ms.len() - 1);
        self.velocities_ms[idx]
    }

    pub fn end_time_s(&self) -> f64 {
        self.start_time_s + self.velocities_ms.len() as f64 * self.sample_period_s
    }
}

/// Constant-velocity baseline forecast.
pub fn constant_velocity_forecast(
    v_ms: f64,
    samples: usize,
    start_time_s: f64,
    sample_period_s: f64,
) -> TargetForecast {
    TargetForecast::from_velocities(
        start_time_s,
        sample_period_s,
        vec![v_ms.max(0.0); samples.max(1)],
    )
}

/// One supervised example: feature history plus the future velocities to hit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub history: Vec<FeatureVector>,
    pub future_v_ms: Vec<f64>,
}

/// Slices a trajectory into overlapping (history, future) windows, stride one
/// sample. Features are computed against the route's signalized intersections
/// with the broadcast-range rule evaluated at the target's own position.
pub fn make_windows(
    traj: &TargetTrajectory,
    light_positions_m: &[f64],
    dsrc_range_m: f64,
    history_len: usize,
    horizon_len: usize,
) -> Vec<WindowPair> {
    assert!(history_len >= 1 && horizon_len >= 1);
    let n = traj.samples.len();
    let span = history_len + horizon_len;
    if n < span {
        return Vec::new();
    }
    let features: Vec<FeatureVector> = traj
        .samples
        .iter()
        .map(|s| {
            let dist = light_positions_m
                .iter()
                .map(|l| l - s.position_m)
                .find(|d| *d > 0.0)
                .unwrap_or(f64::INFINITY);
            FeatureVector {
                v_ms: s.v_ms,
                a_ms2: s.a_ms2,
                d_tl_m: target_distance_to_light(dist, 0.0, dsrc_range_m),
            }
        })
        .collect();
    (0..=n - span)
        .map(|i| WindowPair {
            history: features[i..i + history_len].to_vec(),
            future_v_ms: traj.samples[i + history_len..i + span]
                .iter()
                .map(|s| s.v_ms)
                .collect(),
        })
        .collect()
}

/// Per-feature min-max normalization bounds, fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub v_ms: (f64, f64),
    pub a_ms2: (f64, f64),
    pub d_tl_m: (f64, f64),
}

impl FeatureBounds {
    /// Fits bounds over all history features and future velocities of the
    /// given windows. A degenerate (constant) feature is padded by ±0.5 so
    /// normalization stays invertible.
    pub fn fit(windows: &[WindowPair]) -> Result<FeatureBounds> {
        if windows.is_empty() {
            return Err(Error::validation("windows", "cannot fit bounds on no data"));
        }
        let mut v = (f64::INFINITY, f64::NEG_INFINITY);
        let mut a = v;
        let mut d = v;
        let take = |r: &mut (f64, f64), x: f64| {
            r.0 = r.0.min(x);
            r.1 = r.1.max(x);
        };
        for w in windows {
            for f in &w.history {
                take(&mut v, f.v_ms);
                take(&mut a, f.a_ms2);
                take(&mut d, f.d_tl_m);
            }
            for y in &w.future_v_ms {
                take(&mut v, *y);
            }
        }
        let pad = |r: (f64, f64)| {
            if r.1 - r.0 < 1e-9 {
                (r.0 - 0.5, r.1 + 0.5)
            } else {
                r
            }
        };
        Ok(FeatureBounds {
            v_ms: pad(v),
            a_ms2: pad(a),
            d_tl_m: pad(d),
        })
    }

    fn norm(r: (f64, f64), x: f64) -> f64 {
        ((x - r.0) / (r.1 - r.0)).clamp(0.0, 1.0)
    }

    /// Normalizes a feature vector into `[0, 1]^3`, clamping out-of-range
    /// values for inference-time robustness.
    pub fn normalize(&self, f: &FeatureVector) -> [f64; 3] {
        [
            Self::norm(self.v_ms, f.v_ms),
            Self::norm(self.a_ms2, f.a_ms2),
            Self::norm(self.d_tl_m, f.d_tl_m),
        ]
    }

    pub fn normalize_velocity(&self, v: f64) -> f64 {
        Self::norm(self.v_ms, v)
    }

    pub fn denormalize_velocity(&self, y: f64) -> f64 {
        self.v_ms.0 + y * (self.v_ms.1 - self.v_ms.0)
    }
}

/// Root-mean-square error between two equally long velocity sequences, m/s.
pub fn rmse(predicted_ms: &[f64], actual_ms: &[f64]) -> f64 {
    assert_eq!(
        predicted_ms.len(),
        actual_ms.len(),
        "rmse requires equally long sequences"
    );
    assert!(!predicted_ms.is_empty(), "rmse of empty sequences");
    let sum_sq: f64 = predicted_ms
        .iter()
        .zip(actual_ms)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    (sum_sq / predicted_ms.len() as f64).sqrt()
}
