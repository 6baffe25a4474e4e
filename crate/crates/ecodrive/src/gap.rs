//! Ego-target relative distance: gap dynamics over distance steps, the
//! closed-form gap from forecast positions, the safe following distance and
//! the sensing-window feasibility check.
//!
//! Two equivalent gap formulations coexist on purpose. The per-step update
//! divides by the ego's average speed and is how the distance-domain solver
//! thinks; the closed form integrates the forecast in time and stays defined
//! when the ego stands still. The module's property tests pin their
//! equivalence, and the solver relies on it by evaluating the closed form at
//! grid nodes instead of carrying the gap as a state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::TargetForecast;

/// Car-following parameters. The acceleration/braking bounds parameterize
/// the engagement-distance term of the safe distance, not the plant limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    /// Minimum spacing at standstill, m.
    pub standstill_gap_m: f64,
    /// Desired time gap, s.
    pub time_gap_s: f64,
    /// Assumed maximum ego acceleration, m/s^2.
    pub ego_accel_max_ms2: f64,
    /// Assumed maximum target braking, m/s^2.
    pub target_brake_max_ms2: f64,
    /// Radar sensing range, m: the gap constraint only applies within it.
    pub radar_range_m: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            standstill_gap_m: 2.0,
            time_gap_s: 1.5,
            ego_accel_max_ms2: 2.0,
            target_brake_max_ms2: 3.0,
            radar_range_m: 250.0,
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("standstill_gap_m", self.standstill_gap_m),
            ("time_gap_s", self.time_gap_s),
            ("ego_accel_max_ms2", self.ego_accel_max_ms2),
            ("target_brake_max_ms2", self.target_brake_max_ms2),
            ("radar_range_m", self.radar_range_m),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::validation(name, "must be strictly positive"));
            }
        }
        if self.radar_range_m <= self.standstill_gap_m {
            return Err(Error::validation(
                "radar_range_m",
                "must exceed the standstill gap",
            ));
        }
        Ok(())
    }
}

/// Gap change over one ego distance step `dd`, given both vehicles' average
/// speeds over the step. The target covers `v_target_avg * (dd / v_ego_avg)`
/// meters while the ego covers `dd`.
///
/// Undefined when the ego does not move (the step takes no time bound);
/// callers with a stationary ego must use the time-domain form [`gap_at`].
pub fn gap_update(
    d_gap_m: f64,
    v_target_avg_ms: f64,
    v_ego_avg_ms: f64,
    dd_m: f64,
) -> Result<f64> {
    debug_assert!(dd_m > 0.0, "distance step must be positive");
    if v_ego_avg_ms <= 0.0 {
        return Err(Error::UndefinedGapStep);
    }
    Ok(d_gap_m + (v_target_avg_ms / v_ego_avg_ms - 1.0) * dd_m)
}

/// Distance the target has traveled since the forecast start, m. Exact
/// integral of the held-sample step function: linear within each sample
/// interval, the last velocity extends past the horizon.
pub fn target_position_at(forecast: &TargetForecast, t_s: f64) -> f64 {
    assert!(
        t_s >= forecast.start_time_s - 1e-9,
        "position query at t = {t_s} precedes forecast start {}",
        forecast.start_time_s
    );
    let dt = (t_s - forecast.start_time_s).max(0.0);
    let period = forecast.sample_period_s;
    let n = forecast.velocities_ms.len();
    let idx = (dt / period).floor() as usize;
    if idx >= n {
        forecast.position_offsets_m[n - 1]
            + forecast.velocities_ms[n - 1] * (dt - n as f64 * period)
    } else {
        let base = if idx == 0 {
            0.0
        } else {
            forecast.position_offsets_m[idx - 1]
        };
        base + forecast.velocities_ms[idx] * (dt - idx as f64 * period)
    }
}

/// Gap at ego time `t_ego_s`, after the ego has advanced
/// `ego_position_delta_m` from where the gap was `initial_gap_m`.
pub fn gap_at(
    initial_gap_m: f64,
    forecast: &TargetForecast,
    ego_position_delta_m: f64,
    t_ego_s: f64,
) -> f64 {
    initial_gap_m + target_position_at(forecast, t_ego_s) - ego_position_delta_m
}

/// Minimum safe following distance for the ego at `v_ego_next_ms` with
/// closing speed `dv_ms` (ego minus target; positive while closing in).
/// Never below the standstill gap.
pub fn safe_distance(cfg: &GapConfig, v_ego_next_ms: f64, dv_ms: f64) -> f64 {
    debug_assert!(v_ego_next_ms >= 0.0, "negative ego speed");
    let engagement =
        v_ego_next_ms * dv_ms / (2.0 * (cfg.ego_accel_max_ms2 * cfg.target_brake_max_ms2).sqrt());
    (cfg.standstill_gap_m + v_ego_next_ms * cfg.time_gap_s + engagement)
        .max(cfg.standstill_gap_m)
}

/// The raw sensing-window check: the gap must sit inside the closed interval
/// `[d_safe, radar_range]`. Callers that want beyond-radar gaps to release
/// the constraint (a vanished target must not make free driving infeasible)
/// use [`follower_constraint_ok`].
pub fn gap_feasible(cfg: &GapConfig, gap_m: f64, d_safe_m: f64) -> bool {
    d_safe_m <= gap_m && gap_m <= cfg.radar_range_m
}

/// Follower-coupling constraint as the solver applies it: satisfied inside
/// the sensing window, released entirely beyond it.
pub fn follower_constraint_ok(cfg: &GapConfig, gap_m: f64, d_safe_m: f64) -> bool {
    gap_m > cfg.radar_range_m || gap_feasible(cfg, gap_m, d_safe_m)
}
