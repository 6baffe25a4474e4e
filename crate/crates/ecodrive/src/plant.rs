//! Quasi-static longitudinal plant: P0 mild-hybrid driveline with an engine
//! fuel map, belt starter generator (BSG) and a zero-th order equivalent
//! circuit battery.
//!
//! The model advances over fixed distance steps. For a step of length `dd`
//! starting at speed `v` with control torques `(t_eng, t_bsg)`:
//!
//! ```text
//! F = (t_eng + t_bsg) * ratio(v) / r_wheel
//!     - drag_area_coeff * v^2
//!     - mass * g * (rolling_coeff * cos(grade) + sin(grade))
//! a  = F / mass
//! v' = sqrt(max(0, v^2 + 2 a dd))        dt = dd / ((v + v') / 2)
//! ```
//!
//! The spatial-average time formula is exact under constant acceleration, so
//! traversing two consecutive steps under the same force adds up to the
//! composed single step to float precision. A step whose average speed falls
//! to the stall threshold is reported infeasible rather than clamped; the
//! optimizers use that signal for pruning. Battery state of charge is likewise
//! never clamped here: callers see the raw value and decide.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const GRAVITY_MS2: f64 = 9.81;

/// Average speed at or below which a spatial step is infeasible, m/s.
pub const STALL_EPS_MS: f64 = 1e-3;

/// Failure of a single spatial step. Kept allocation-free because the solvers
/// evaluate millions of candidate steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepError {
    /// Average speed over the step at or below [`STALL_EPS_MS`].
    Stalled,
    /// Battery cannot deliver the requested terminal power.
    PowerLimit,
}

impl From<StepError> for Error {
    fn from(e: StepError) -> Self {
        match e {
            StepError::Stalled => Error::StalledStep,
            StepError::PowerLimit => Error::PowerLimit { requested_w: f64::NAN },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub v_ms: f64,
    pub soc: f64,
    pub t_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub t_eng_nm: f64,
    pub t_bsg_nm: f64,
}

/// Piecewise-linear curve over strictly increasing abscissae; queries beyond
/// either end clamp to the nearest breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curve {
    points: Vec<[f64; 2]>,
}

impl Curve {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("curve", "needs at least one point"));
        }
        for w in points.windows(2) {
            if w[1][0] <= w[0][0] {
                return Err(Error::validation(
                    "curve",
                    "abscissae must be strictly increasing",
                ));
            }
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::validation("curve", "points must be finite"));
        }
        Ok(Curve { points })
    }

    pub fn constant(y: f64) -> Self {
        Curve {
            points: vec![[0.0, y]],
        }
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0][0] {
            return pts[0][1];
        }
        let last = pts.len() - 1;
        if x >= pts[last][0] {
            return pts[last][1];
        }
        let i = pts.partition_point(|p| p[0] <= x) - 1;
        let (x0, y0) = (pts[i][0], pts[i][1]);
        let (x1, y1) = (pts[i + 1][0], pts[i + 1][1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    fn validate_after_deserialize(&self) -> Result<()> {
        Curve::new(self.points.clone()).map(|_| ())
    }
}

/// Engine fuel rate map over (engine speed, engine torque), bilinear between
/// grid nodes and clamped to the nearest edge outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelMap {
    pub speed_axis_rad_s: Vec<f64>,
    pub torque_axis_nm: Vec<f64>,
    /// Row per speed-axis entry, column per torque-axis entry, g/s.
    pub rates_g_s: Vec<Vec<f64>>,
}

impl FuelMap {
    pub fn validate(&self) -> Result<()> {
        let ok_axis = |a: &[f64]| a.len() >= 2 && a.windows(2).all(|w| w[1] > w[0]);
        if !ok_axis(&self.speed_axis_rad_s) || !ok_axis(&self.torque_axis_nm) {
            return Err(Error::validation(
                "fuel_map",
                "axes need at least two strictly increasing entries",
            ));
        }
        if self.rates_g_s.len() != self.speed_axis_rad_s.len()
            || self
                .rates_g_s
                .iter()
                .any(|r| r.len() != self.torque_axis_nm.len())
        {
            return Err(Error::validation(
                "fuel_map.rates_g_s",
                "dimensions must match the axes",
            ));
        }
        for row in &self.rates_g_s {
            if row.iter().any(|r| !(*r >= 0.0)) {
                return Err(Error::validation(
                    "fuel_map.rates_g_s",
                    "rates must be finite and non-negative",
                ));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::validation(
                    "fuel_map.rates_g_s",
                    "rates must be non-decreasing along the torque axis",
                ));
            }
        }
        Ok(())
    }

    /// Bilinear lookup, clamped to the table edges.
    pub fn rate_at(&self, speed_rad_s: f64, torque_nm: f64) -> f64 {
        let (i, fx) = clamped_cell(&self.speed_axis_rad_s, speed_rad_s);
        let (j, fy) = clamped_cell(&self.torque_axis_nm, torque_nm);
        let r = &self.rates_g_s;
        let a = r[i][j] + fy * (r[i][j + 1] - r[i][j]);
        let b = r[i + 1][j] + fy * (r[i + 1][j + 1] - r[i + 1][j]);
        a + fx * (b - a)
    }
}

/// Cell index and clamped fractional position for a query on a sorted axis.
fn clamped_cell(axis: &[f64], x: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if x <= axis[0] {
        return (0, 0.0);
    }
    if x >= axis[last] {
        return (last - 1, 1.0);
    }
    let i = axis.partition_point(|a| *a <= x) - 1;
    (i, (x - axis[i]) / (axis[i + 1] - axis[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    /// Torque limits versus vehicle speed, N*m.
    pub torque_min_nm: Curve,
    pub torque_max_nm: Curve,
    pub fuel_map: FuelMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsgParams {
    pub torque_min_nm: Curve,
    pub torque_max_nm: Curve,
    /// Mechanical/electrical conversion efficiency, applied in each direction.
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Charge capacity, A*s.
    pub capacity_as: f64,
    pub open_circuit_voltage_v: f64,
    pub internal_resistance_ohm: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub mass_kg: f64,
    /// Lumped aerodynamic coefficient `0.5 * rho * cd * A`, kg/m.
    pub drag_area_coeff: f64,
    pub rolling_coeff: f64,
    pub wheel_radius_m: f64,
    /// Effective driveline ratio (engine speed / wheel speed) versus vehicle speed.
    pub driveline_ratio: Curve,
    pub engine: EngineParams,
    pub bsg: BsgParams,
    pub battery: BatteryParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueLimits {
    pub eng_min_nm: f64,
    pub eng_max_nm: f64,
    pub bsg_min_nm: f64,
    pub bsg_max_nm: f64,
}

/// Result of one applied spatial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOutcome {
    pub next: VehicleState,
    pub dt_s: f64,
    pub fuel_rate_g_s: f64,
    /// Weighted stage cost `(w * fuel_rate + (1 - w)) * dt`.
    pub cost: f64,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass_kg > 0.0 && self.wheel_radius_m > 0.0) {
            return Err(Error::validation(
                "plant",
                "mass and wheel radius must be positive",
            ));
        }
        if !(self.drag_area_coeff >= 0.0 && self.rolling_coeff >= 0.0) {
            return Err(Error::validation(
                "plant",
                "resistance coefficients must be non-negative",
            ));
        }
        self.driveline_ratio.validate_after_deserialize()?;
        self.engine.torque_min_nm.validate_after_deserialize()?;
        self.engine.torque_max_nm.validate_after_deserialize()?;
        self.engine.fuel_map.validate()?;
        self.bsg.torque_min_nm.validate_after_deserialize()?;
        self.bsg.torque_max_nm.validate_after_deserialize()?;
        if !(self.bsg.efficiency > 0.0 && self.bsg.efficiency <= 1.0) {
            return Err(Error::validation("bsg.efficiency", "must lie in (0, 1]"));
        }
        let b = &self.battery;
        if !(b.capacity_as > 0.0
            && b.open_circuit_voltage_v > 0.0
            && b.internal_resistance_ohm > 0.0)
        {
            return Err(Error::validation(
                "battery",
                "capacity, voltage and resistance must be positive",
            ));
        }
        if !(0.0 <= b.soc_min && b.soc_min < b.soc_max && b.soc_max <= 1.0) {
            return Err(Error::validation(
                "battery",
                "need 0 <= soc_min < soc_max <= 1",
            ));
        }
        Ok(())
    }

    /// Engine/BSG torque boxes at vehicle speed `v`, clamped curve lookups.
    pub fn torque_limits(&self, v_ms: f64) -> TorqueLimits {
        TorqueLimits {
            eng_min_nm: self.engine.torque_min_nm.value_at(v_ms),
            eng_max_nm: self.engine.torque_max_nm.value_at(v_ms),
            bsg_min_nm: self.bsg.torque_min_nm.value_at(v_ms),
            bsg_max_nm: self.bsg.torque_max_nm.value_at(v_ms),
        }
    }

    /// Crankshaft speed at vehicle speed `v`, rad/s.
    pub fn engine_speed(&self, v_ms: f64) -> f64 {
        v_ms * self.driveline_ratio.value_at(v_ms) / self.wheel_radius_m
    }

    /// Engine fuel rate, g/s. Exactly zero at or below zero engine torque:
    /// start-stop logic shuts the engine off instead of letting it motor.
    pub fn fuel_rate(&self, v_ms: f64, t_eng_nm: f64) -> f64 {
        if t_eng_nm <= 0.0 {
            return 0.0;
        }
        self.engine
            .fuel_map
            .rate_at(self.engine_speed(v_ms), t_eng_nm)
    }

    /// Net longitudinal wheel force at the start-of-step speed, N.
    pub fn net_wheel_force(&self, v_ms: f64, u: ControlInput, grade_rad: f64) -> f64 {
        let ratio = self.driveline_ratio.value_at(v_ms);
        let traction = (u.t_eng_nm + u.t_bsg_nm) * ratio / self.wheel_radius_m;
        let drag = self.drag_area_coeff * v_ms * v_ms;
        let road = self.mass_kg
            * GRAVITY_MS2
            * (self.rolling_coeff * grade_rad.cos() + grade_rad.sin());
        traction - drag - road
    }

    /// BSG electrical terminal power for torque `t_bsg` at vehicle speed `v`,
    /// W. Positive discharges the battery (assist), negative charges (regen).
    pub fn bsg_electrical_power(&self, v_ms: f64, t_bsg_nm: f64) -> f64 {
        let p_mech = t_bsg_nm * self.engine_speed(v_ms);
        if p_mech >= 0.0 {
            p_mech / self.bsg.efficiency
        } else {
            p_mech * self.bsg.efficiency
        }
    }

    /// Advances speed and time over one distance step `dd` under control `u`.
    ///
    /// Returns the kinematic part only (speed, time, elapsed dt); battery
    /// bookkeeping is separate so the solvers can reuse partial results.
    pub fn kinematic_step(
        &self,
        v_ms: f64,
        u: ControlInput,
        dd_m: f64,
        grade_rad: f64,
    ) -> Result<(f64, f64), StepError> {
        debug_assert!(dd_m > 0.0);
        let a = self.net_wheel_force(v_ms, u, grade_rad) / self.mass_kg;
        let v_next_sq = v_ms * v_ms + 2.0 * a * dd_m;
        let v_next = if v_next_sq > 0.0 { v_next_sq.sqrt() } else { 0.0 };
        let v_avg = 0.5 * (v_ms + v_next);
        if v_avg <= STALL_EPS_MS {
            return Err(StepError::Stalled);
        }
        Ok((v_next, dd_m / v_avg))
    }

    /// Battery state of charge after drawing `p_batt` W for `dt` s.
    ///
    /// Solves the zero-th order equivalent circuit for terminal current and
    /// integrates it. The result is intentionally not clamped to the SoC box.
    pub fn soc_transition(&self, soc: f64, p_batt_w: f64, dt_s: f64) -> Result<f64, StepError> {
        debug_assert!((0.0..=1.0).contains(&soc), "soc out of [0, 1]: {soc}");
        let b = &self.battery;
        let voc = b.open_circuit_voltage_v;
        let disc = voc * voc - 4.0 * b.internal_resistance_ohm * p_batt_w;
        if disc < 0.0 {
            return Err(StepError::PowerLimit);
        }
        let current = (voc - disc.sqrt()) / (2.0 * b.internal_resistance_ohm);
        Ok(soc - current * dt_s / b.capacity_as)
    }

    /// Full spatial step: kinematics, battery and the weighted stage cost
    /// `(fuel_weight * fuel_rate + (1 - fuel_weight)) * dt`.
    pub fn stage_step(
        &self,
        state: VehicleState,
        u: ControlInput,
        dd_m: f64,
        grade_rad: f64,
        fuel_weight: f64,
    ) -> Result<StageOutcome, StepError> {
        let (v_next, dt) = self.kinematic_step(state.v_ms, u, dd_m, grade_rad)?;
        let p_batt = self.bsg_electrical_power(state.v_ms, u.t_bsg_nm);
        let soc_next = self.soc_transition(state.soc, p_batt, dt)?;
        let fuel = self.fuel_rate(state.v_ms, u.t_eng_nm);
        Ok(StageOutcome {
            next: VehicleState {
                v_ms: v_next,
                soc: soc_next,
                t_s: state.t_s + dt,
            },
            dt_s: dt,
            fuel_rate_g_s: fuel,
            cost: (fuel_weight * fuel + (1.0 - fuel_weight)) * dt,
        })
    }

    /// Convenience wrapper matching the classic transition signature.
    pub fn vehicle_transition(
        &self,
        state: VehicleState,
        u: ControlInput,
        dd_m: f64,
        grade_rad: f64,
    ) -> Result<VehicleState, StepError> {
        self.stage_step(state, u, dd_m, grade_rad, 0.0).map(|o| o.next)
    }
}

pub fn load_plant(path: &Path) -> Result<PlantParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let plant: PlantParams =
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    plant.validate()?;
    Ok(plant)
}
