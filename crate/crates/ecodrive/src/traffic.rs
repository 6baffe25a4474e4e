//! Target vehicle trajectories.
//!
//! A [`TargetTrajectory`] is a uniformly sampled record of the vehicle ahead:
//! velocity at 1 Hz plus acceleration and position derived from it. The
//! derived columns keep two exact relationships that downstream code and the
//! tests rely on:
//!
//! * position is the trapezoidal integral of velocity between samples, and
//! * acceleration is the forward difference of velocity (last sample repeats
//!   the previous value).
//!
//! Trajectories come either from a CSV file or from the built-in intelligent
//! driver model generator, which drives the route's speed limits, reacts to
//! red lights as standing virtual leaders, and serves stop signs with a short
//! dwell. Generation is deterministic for a fixed seed.

use crate::error::{Error, Result};
use crate::route::RouteSpec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const SAMPLE_PERIOD_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub v_ms: f64,
    pub a_ms2: f64,
    pub position_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTrajectory {
    pub sample_period_s: f64,
    pub samples: Vec<TrajectorySample>,
}

impl TargetTrajectory {
    /// Builds a trajectory from velocity samples, deriving acceleration by
    /// forward difference and position by trapezoidal integration.
    pub fn from_velocities(
        start_time_s: f64,
        sample_period_s: f64,
        velocities_ms: &[f64],
        initial_position_m: f64,
    ) -> Result<Self> {
        if velocities_ms.len() < 2 {
            return Err(Error::validation(
                "trajectory",
                "need at least two velocity samples",
            ));
        }
        if !(sample_period_s > 0.0) {
            return Err(Error::validation(
                "trajectory.sample_period_s",
                "must be positive",
            ));
        }
        if let Some(v) = velocities_ms.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::validation(
                "trajectory.v_ms",
                format!("velocities must be finite and non-negative, got {v}"),
            ));
        }
        let n = velocities_ms.len();
        let mut samples = Vec::with_capacity(n);
        let mut pos = initial_position_m;
        for i in 0..n {
            let v = velocities_ms[i];
            let a = if i + 1 < n {
                (velocities_ms[i + 1] - v) / sample_period_s
            } else {
                (v - velocities_ms[i - 1]) / sample_period_s
            };
            if i > 0 {
                pos += 0.5 * (velocities_ms[i - 1] + v) * sample_period_s;
            }
            samples.push(TrajectorySample {
                t_s: start_time_s + i as f64 * sample_period_s,
                v_ms: v,
                a_ms2: a,
                position_m: pos,
            });
        }
        Ok(TargetTrajectory {
            sample_period_s,
            samples,
        })
    }

    pub fn start_time_s(&self) -> f64 {
        self.samples[0].t_s
    }

    pub fn end_time_s(&self) -> f64 {
        self.samples[self.samples.len() - 1].t_s
    }

    /// Fractional sample index for `t`, clamped to the record.
    fn index_of(&self, t: f64) -> (usize, f64) {
        let rel = (t - self.start_time_s()) / self.sample_period_s;
        if rel <= 0.0 {
            return (0, 0.0);
        }
        let last = self.samples.len() - 1;
        if rel >= last as f64 {
            return (last, 0.0);
        }
        let i = rel.floor() as usize;
        (i, rel - i as f64)
    }

    /// Velocity at `t`, linear between samples, held constant outside the record.
    pub fn velocity_at(&self, t: f64) -> f64 {
        let (i, frac) = self.index_of(t);
        if frac == 0.0 {
            return self.samples[i].v_ms;
        }
        let a = self.samples[i].v_ms;
        let b = self.samples[i + 1].v_ms;
        a + frac * (b - a)
    }

    /// Acceleration at `t`, held per sample interval, zero outside the record.
    pub fn accel_at(&self, t: f64) -> f64 {
        if t < self.start_time_s() || t > self.end_time_s() {
            return 0.0;
        }
        let (i, _) = self.index_of(t);
        self.samples[i].a_ms2
    }

    /// Position at `t`: exact integral of the piecewise-linear velocity.
    ///
    /// Beyond the record the last (first) velocity is held.
    pub fn position_at(&self, t: f64) -> f64 {
        let first = &self.samples[0];
        if t <= first.t_s {
            return first.position_m - first.v_ms * (first.t_s - t);
        }
        let last = &self.samples[self.samples.len() - 1];
        if t >= last.t_s {
            return last.position_m + last.v_ms * (t - last.t_s);
        }
        let (i, frac) = self.index_of(t);
        let s = &self.samples[i];
        if frac == 0.0 {
            return s.position_m;
        }
        let v_next = self.samples[i + 1].v_ms;
        let dt = frac * self.sample_period_s;
        let v_t = s.v_ms + frac * (v_next - s.v_ms);
        s.position_m + 0.5 * (s.v_ms + v_t) * dt
    }
}

/// Loads a trajectory from CSV with columns `t,v[,a,pos]`.
///
/// Acceleration and position columns, if present, are ignored and re-derived
/// so the trajectory invariants hold exactly. Input that is not sampled at
/// 1 Hz is resampled by linear interpolation of velocity.
pub fn load_trajectory_csv(path: &Path) -> Result<TargetTrajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::schema(path, e.to_string()))?;
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(path, e.to_string()))?;
        if rec.len() < 2 {
            return Err(Error::schema(
                path,
                format!("row {}: need at least columns t,v", line + 2),
            ));
        }
        let t: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::schema(path, format!("row {}: bad t value", line + 2)))?;
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::schema(path, format!("row {}: bad v value", line + 2)))?;
        if let Some(last) = ts.last() {
            if t <= *last {
                return Err(Error::validation(
                    "trajectory.t_s",
                    format!("row {}: time must be strictly increasing", line + 2),
                ));
            }
        }
        if !(v >= 0.0) {
            return Err(Error::validation(
                "trajectory.v_ms",
                format!("row {}: velocity must be non-negative", line + 2),
            ));
        }
        ts.push(t);
        vs.push(v);
    }
    if ts.len() < 2 {
        return Err(Error::validation(
            "trajectory",
            "need at least two rows",
        ));
    }
    let uniform_1hz = ts
        .windows(2)
        .all(|w| (w[1] - w[0] - SAMPLE_PERIOD_S).abs() < 1e-9);
    let velocities = if uniform_1hz {
        vs
    } else {
        // resample at 1 Hz by linear interpolation of v over [t0, t_end]
        let t0 = ts[0];
        let t_end = ts[ts.len() - 1];
        let n = ((t_end - t0) / SAMPLE_PERIOD_S).floor() as usize + 1;
        let mut out = Vec::with_capacity(n);
        let mut j = 0usize;
        for k in 0..n {
            let t = t0 + k as f64 * SAMPLE_PERIOD_S;
            while j + 1 < ts.len() && ts[j + 1] < t {
                j += 1;
            }
            let v = if t <= ts[j] {
                vs[j]
            } else {
                let frac = (t - ts[j]) / (ts[j + 1] - ts[j]);
                vs[j] + frac * (vs[j + 1] - vs[j])
            };
            out.push(v);
        }
        out
    };
    TargetTrajectory::from_velocities(ts[0], SAMPLE_PERIOD_S, &velocities, 0.0)
}

pub fn write_trajectory_csv<W: Write>(traj: &TargetTrajectory, mut w: W) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<writer>", e);
    writeln!(w, "t,v,a,pos").map_err(io_err)?;
    for s in &traj.samples {
        writeln!(w, "{},{},{},{}", s.t_s, s.v_ms, s.a_ms2, s.position_m).map_err(io_err)?;
    }
    Ok(())
}

/// Intelligent-driver-model parameters for the target vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    /// Maximum acceleration, m/s^2.
    pub max_accel_ms2: f64,
    /// Comfortable deceleration, m/s^2.
    pub comfort_decel_ms2: f64,
    /// Free-road acceleration exponent.
    pub accel_exponent: f64,
    /// Standstill distance kept to a stop bar or leader, m.
    pub standstill_gap_m: f64,
    /// Desired time headway, s.
    pub time_headway_s: f64,
    /// Desired speed as a fraction of the local limit is drawn uniformly from
    /// this range and redrawn every `frac_resample_period_s`.
    pub desired_speed_frac_lo: f64,
    pub desired_speed_frac_hi: f64,
    pub frac_resample_period_s: f64,
    /// Dwell time at a stop sign, drawn uniformly from this range, s.
    pub stop_dwell_lo_s: f64,
    pub stop_dwell_hi_s: f64,
    pub initial_speed_ms: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            max_accel_ms2: 1.3,
            comfort_decel_ms2: 2.0,
            accel_exponent: 4.0,
            standstill_gap_m: 2.0,
            time_headway_s: 1.2,
            desired_speed_frac_lo: 0.8,
            desired_speed_frac_hi: 1.0,
            frac_resample_period_s: 60.0,
            stop_dwell_lo_s: 1.0,
            stop_dwell_hi_s: 3.0,
            initial_speed_ms: 0.0,
        }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_accel_ms2 > 0.0 && self.comfort_decel_ms2 > 0.0) {
            return Err(Error::validation(
                "driver",
                "accelerations must be positive",
            ));
        }
        if !(self.standstill_gap_m > 0.0) {
            return Err(Error::validation(
                "driver.standstill_gap_m",
                "must be positive",
            ));
        }
        if !(0.0 < self.desired_speed_frac_lo
            && self.desired_speed_frac_lo <= self.desired_speed_frac_hi
            && self.desired_speed_frac_hi <= 1.0)
        {
            return Err(Error::validation(
                "driver.desired_speed_frac",
                "need 0 < lo <= hi <= 1",
            ));
        }
        if !(0.0 <= self.stop_dwell_lo_s && self.stop_dwell_lo_s <= self.stop_dwell_hi_s) {
            return Err(Error::validation(
                "driver.stop_dwell",
                "need 0 <= lo <= hi",
            ));
        }
        if !(self.initial_speed_ms >= 0.0) {
            return Err(Error::validation(
                "driver.initial_speed_ms",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Internal integration step of the generator, s. One output sample spans an
/// integer number of these.
const FINE_STEP_S: f64 = 0.05;
/// Speed below which the driver counts as stopped, m/s.
const STOPPED_EPS_MS: f64 = 0.05;

struct DriverRng {
    rng: ChaCha8Rng,
}

impl DriverRng {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            self.rng.random_range(lo..hi)
        }
    }
}

/// Generates a target trajectory by integrating an intelligent driver model
/// along the route.
///
/// The driver tracks a seeded fraction of the speed limit, treats a red light
/// as a standing virtual leader at the stop bar (and ignores it once green),
/// and stops at each stop sign for a short dwell. Output is sampled at 1 Hz;
/// the stored samples satisfy the trajectory invariants exactly and never
/// exceed the route speed limit.
pub fn gen_target_trajectory(
    route: &RouteSpec,
    driver: &DriverParams,
    departure_time_s: f64,
    duration_s: f64,
    initial_position_m: f64,
    seed: u64,
) -> Result<TargetTrajectory> {
    driver.validate()?;
    if !(duration_s >= 2.0 * SAMPLE_PERIOD_S) {
        return Err(Error::validation(
            "target.duration_s",
            "must cover at least two samples",
        ));
    }
    let mut rng = DriverRng {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let substeps = (SAMPLE_PERIOD_S / FINE_STEP_S).round() as usize;

    let mut pending_signs: Vec<f64> = route
        .stop_signs_m
        .iter()
        .copied()
        .filter(|&s| s > initial_position_m)
        .collect();
    let mut dwell_remaining = 0.0_f64;
    let mut frac = rng.uniform(driver.desired_speed_frac_lo, driver.desired_speed_frac_hi);
    let mut frac_timer = driver.frac_resample_period_s;

    let n_samples = (duration_s / SAMPLE_PERIOD_S).floor() as usize + 1;
    let mut velocities = Vec::with_capacity(n_samples);
    let mut v = driver
        .initial_speed_ms
        .min(route.speed_limits_at(initial_position_m).1);
    velocities.push(v);

    // Authoritative position follows the 1 Hz trapezoid of the stored samples;
    // the fine integration inside each sample block restarts from it so the
    // stored positions and the positions used against stop bars agree to
    // within a fraction of a meter.
    let mut pos_auth = initial_position_m;
    let mut t = departure_time_s;

    for _ in 1..n_samples {
        let v_block_start = v;
        let mut p = pos_auth;
        for _ in 0..substeps {
            frac_timer -= FINE_STEP_S;
            if frac_timer <= 0.0 {
                frac = rng.uniform(driver.desired_speed_frac_lo, driver.desired_speed_frac_hi);
                frac_timer = driver.frac_resample_period_s;
            }

            // Serve a stop sign: once stopped near the bar, dwell, then drop it.
            if let Some(&sign) = pending_signs.first() {
                let near = sign - p < driver.standstill_gap_m + 1.5;
                if near && v < STOPPED_EPS_MS && dwell_remaining == 0.0 {
                    dwell_remaining =
                        rng.uniform(driver.stop_dwell_lo_s, driver.stop_dwell_hi_s).max(FINE_STEP_S);
                }
            }
            if dwell_remaining > 0.0 {
                dwell_remaining -= FINE_STEP_S;
                if dwell_remaining <= 0.0 {
                    dwell_remaining = 0.0;
                    pending_signs.remove(0);
                }
                v = 0.0;
                t += FINE_STEP_S;
                continue;
            }

            let vmax_here = route.speed_limits_at(p).1;
            let v0 = (frac * vmax_here).max(0.5);
            let mut accel = idm_free(driver, v, v0);

            // Nearest relevant standing obstacle: next pending stop sign and
            // the next red light ahead.
            if let Some(&sign) = pending_signs.first() {
                accel = accel.min(idm_obstacle(driver, v, v0, sign - p));
            }
            if let Some(light) = route.next_intersection_after(p + 0.5) {
                if !light.spat.is_green(t) {
                    accel = accel.min(idm_obstacle(driver, v, v0, light.position_m - p));
                }
            }

            let mut v_next = (v + accel * FINE_STEP_S).max(0.0);
            let travel = 0.5 * (v + v_next) * FINE_STEP_S;
            let cap = route.min_vmax_over(p, p + travel.max(0.0));
            v_next = v_next.min(cap);
            p += 0.5 * (v + v_next) * FINE_STEP_S;
            v = v_next;
            t += FINE_STEP_S;
        }
        velocities.push(v);
        pos_auth += 0.5 * (v_block_start + v) * SAMPLE_PERIOD_S;
    }

    TargetTrajectory::from_velocities(
        departure_time_s,
        SAMPLE_PERIOD_S,
        &velocities,
        initial_position_m,
    )
}

fn idm_free(d: &DriverParams, v: f64, v0: f64) -> f64 {
    d.max_accel_ms2 * (1.0 - (v / v0).powf(d.accel_exponent))
}

/// IDM interaction term against a standing obstacle `gap` meters ahead.
fn idm_obstacle(d: &DriverParams, v: f64, v0: f64, gap: f64) -> f64 {
    let gap = gap.max(0.1);
    let desired = d.standstill_gap_m
        + v * d.time_headway_s
        + v * v / (2.0 * (d.max_accel_ms2 * d.comfort_decel_ms2).sqrt());
    d.max_accel_ms2 * (1.0 - (v / v0).powf(d.accel_exponent) - (desired / gap).powi(2))
}
