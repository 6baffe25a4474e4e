//! Route description: length, grade and speed-limit profiles, signalized
//! intersections with fixed-cycle phase schedules, and stop signs.
//!
//! Positions are meters from the trip start. Profiles are piecewise constant:
//! each breakpoint holds from its position until the next breakpoint. Both
//! optimizers discretize the route into steps of `distance_step_m`, and
//! intersections and stop signs are required to sit on those grid nodes so a
//! crossing always coincides with a step boundary.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed-cycle signal timing for one intersection.
///
/// The phase at absolute time `t` is `(t - offset) mod cycle`; the light is
/// green while the phase lies in `[green_start, green_end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatSchedule {
    pub cycle_time_s: f64,
    pub green_start_s: f64,
    pub green_end_s: f64,
    #[serde(default)]
    pub offset_s: f64,
}

impl SpatSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_time_s > 0.0) {
            return Err(Error::validation("spat.cycle_time_s", "must be positive"));
        }
        if !(0.0 <= self.green_start_s
            && self.green_start_s < self.green_end_s
            && self.green_end_s <= self.cycle_time_s)
        {
            return Err(Error::validation(
                "spat",
                format!(
                    "need 0 <= green_start < green_end <= cycle_time, got [{}, {}) in cycle {}",
                    self.green_start_s, self.green_end_s, self.cycle_time_s
                ),
            ));
        }
        Ok(())
    }

    pub fn is_green(&self, t: f64) -> bool {
        let phase = (t - self.offset_s).rem_euclid(self.cycle_time_s);
        phase >= self.green_start_s && phase < self.green_end_s
    }

    /// Green intervals `[start, end)` clipped to the horizon `[t0, t1]`.
    ///
    /// Cycles repeat indefinitely; an interval that degenerates to zero length
    /// after clipping is dropped.
    pub fn green_windows(&self, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if t1 <= t0 {
            return out;
        }
        let c = self.cycle_time_s;
        let k0 = ((t0 - self.offset_s) / c).floor() as i64 - 1;
        let k1 = ((t1 - self.offset_s) / c).ceil() as i64 + 1;
        for k in k0..=k1 {
            let base = self.offset_s + k as f64 * c;
            let start = (base + self.green_start_s).max(t0);
            let end = (base + self.green_end_s).min(t1);
            if start < end {
                out.push((start, end));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradePoint {
    pub position_m: f64,
    pub grade_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimitPoint {
    pub position_m: f64,
    pub v_min_ms: f64,
    pub v_max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub position_m: f64,
    pub spat: SpatSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub length_m: f64,
    pub distance_step_m: f64,
    /// Road grade profile in radians, uphill positive. Empty means flat.
    #[serde(default)]
    pub grade: Vec<GradePoint>,
    /// Speed limit profile; must start at position 0.
    pub speed_limits: Vec<SpeedLimitPoint>,
    #[serde(default)]
    pub intersections: Vec<Intersection>,
    #[serde(default)]
    pub stop_signs_m: Vec<f64>,
}

/// Tolerance for "sits on a distance-grid node" checks, meters.
const GRID_ALIGN_TOL_M: f64 = 1e-6;

impl RouteSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::validation("route.length_m", "must be positive"));
        }
        if !(self.distance_step_m > 0.0) {
            return Err(Error::validation(
                "route.distance_step_m",
                "must be positive",
            ));
        }
        let steps = self.length_m / self.distance_step_m;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::validation(
                "route.length_m",
                "must be an integer multiple of distance_step_m",
            ));
        }
        if self.speed_limits.is_empty() {
            return Err(Error::validation(
                "route.speed_limits",
                "at least one breakpoint is required",
            ));
        }
        if self.speed_limits[0].position_m != 0.0 {
            return Err(Error::validation(
                "route.speed_limits",
                "first breakpoint must sit at position 0",
            ));
        }
        for pair in self.speed_limits.windows(2) {
            if pair[1].position_m <= pair[0].position_m {
                return Err(Error::validation(
                    "route.speed_limits",
                    "breakpoint positions must be strictly increasing",
                ));
            }
        }
        for p in &self.speed_limits {
            if !(0.0 <= p.v_min_ms && p.v_min_ms < p.v_max_ms) {
                return Err(Error::validation(
                    "route.speed_limits",
                    format!(
                        "need 0 <= v_min < v_max at position {} m, got [{}, {}]",
                        p.position_m, p.v_min_ms, p.v_max_ms
                    ),
                ));
            }
        }
        for pair in self.grade.windows(2) {
            if pair[1].position_m <= pair[0].position_m {
                return Err(Error::validation(
                    "route.grade",
                    "breakpoint positions must be strictly increasing",
                ));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for x in &self.intersections {
            x.spat.validate()?;
            if x.position_m <= last {
                return Err(Error::validation(
                    "route.intersections",
                    "positions must be strictly increasing",
                ));
            }
            last = x.position_m;
            self.check_on_grid("route.intersections", x.position_m)?;
        }
        let mut last = f64::NEG_INFINITY;
        for &s in &self.stop_signs_m {
            if s <= last {
                return Err(Error::validation(
                    "route.stop_signs_m",
                    "positions must be strictly increasing",
                ));
            }
            last = s;
            self.check_on_grid("route.stop_signs_m", s)?;
        }
        Ok(())
    }

    fn check_on_grid(&self, field: &str, pos: f64) -> Result<()> {
        if !(0.0..=self.length_m).contains(&pos) {
            return Err(Error::validation(
                field,
                format!("position {pos} m lies outside the route"),
            ));
        }
        let steps = pos / self.distance_step_m;
        if (steps - steps.round()).abs() * self.distance_step_m > GRID_ALIGN_TOL_M {
            return Err(Error::validation(
                field,
                format!(
                    "position {pos} m must sit on a multiple of distance_step_m = {} m",
                    self.distance_step_m
                ),
            ));
        }
        Ok(())
    }

    /// Number of spatial steps; there are `num_steps() + 1` grid nodes.
    pub fn num_steps(&self) -> usize {
        (self.length_m / self.distance_step_m).round() as usize
    }

    pub fn position(&self, index: usize) -> f64 {
        index as f64 * self.distance_step_m
    }

    pub fn grade_at(&self, pos: f64) -> f64 {
        piecewise_at(&self.grade, pos, |g| g.position_m)
            .map(|g| g.grade_rad)
            .unwrap_or(0.0)
    }

    /// `(v_min, v_max)` limits holding at `pos`.
    pub fn speed_limits_at(&self, pos: f64) -> (f64, f64) {
        let p = piecewise_at(&self.speed_limits, pos, |l| l.position_m)
            .unwrap_or(&self.speed_limits[0]);
        (p.v_min_ms, p.v_max_ms)
    }

    /// Smallest v_max holding anywhere in `[p0, p1]`.
    pub fn min_vmax_over(&self, p0: f64, p1: f64) -> f64 {
        debug_assert!(p1 >= p0);
        let mut vmax = self.speed_limits_at(p0).1;
        for l in &self.speed_limits {
            if l.position_m > p0 && l.position_m <= p1 {
                vmax = vmax.min(l.v_max_ms);
            }
        }
        vmax
    }

    /// Largest v_max holding anywhere in `[p0, p1]`.
    pub fn max_vmax_over(&self, p0: f64, p1: f64) -> f64 {
        debug_assert!(p1 >= p0);
        let mut vmax = self.speed_limits_at(p0).1;
        for l in &self.speed_limits {
            if l.position_m > p0 && l.position_m <= p1 {
                vmax = vmax.max(l.v_max_ms);
            }
        }
        vmax
    }

    /// First intersection strictly ahead of `pos`.
    pub fn next_intersection_after(&self, pos: f64) -> Option<&Intersection> {
        self.intersections.iter().find(|x| x.position_m > pos)
    }

    /// Index of the intersection inside the half-open interval `(p0, p1]`, if any.
    pub fn intersection_in(&self, p0: f64, p1: f64) -> Option<usize> {
        self.intersections
            .iter()
            .position(|x| x.position_m > p0 && x.position_m <= p1)
    }

    /// Stop sign inside the half-open interval `(p0, p1]`, if any.
    pub fn stop_sign_in(&self, p0: f64, p1: f64) -> Option<f64> {
        self.stop_signs_m
            .iter()
            .copied()
            .find(|&s| s > p0 && s <= p1)
    }

    pub fn has_stop_sign_at(&self, pos: f64) -> bool {
        self.stop_signs_m
            .iter()
            .any(|&s| (s - pos).abs() <= GRID_ALIGN_TOL_M)
    }
}

/// Last breakpoint with position <= pos (piecewise-constant hold).
fn piecewise_at<T>(points: &[T], pos: f64, key: impl Fn(&T) -> f64) -> Option<&T> {
    let idx = points.partition_point(|p| key(p) <= pos);
    if idx == 0 {
        None
    } else {
        Some(&points[idx - 1])
    }
}

pub fn load_route(path: &Path) -> Result<RouteSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let route: RouteSpec =
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    route.validate()?;
    Ok(route)
}
