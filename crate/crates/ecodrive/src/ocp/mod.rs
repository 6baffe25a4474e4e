//! Two-stage Dynamic Programming over the route.
//!
//! The long-term stage runs backward induction over (speed, state of charge)
//! for the whole route using only static route data; its value function acts
//! as the terminal cost for the receding-horizon stage, a (speed, state of
//! charge, time) backward induction over the next few hundred meters that
//! additionally enforces signal phases, the follower gap and local traffic.
//!
//! Positions are the stage variable: both solvers step over the route's
//! fixed distance grid, which is what makes signal bars and stop signs plain
//! node constraints.

mod interp;
mod long_term;
mod receding;

pub use long_term::{rollout_long_term, solve_long_term, LongTermRollout, LongTermStep};
pub use receding::{
    solve_receding_horizon, HorizonProblem, HorizonSolution, PredictedStep,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ControlInput, PlantParams, VehicleState};
use crate::route::RouteSpec;
use interp::{blend2, find_cell};

/// Discretization and weighting knobs for both solver stages. Everything here
/// is config-file level: scenario files may override any field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stage-cost weight on fuel mass; `1 - fuel_weight` weights travel time.
    pub fuel_weight: f64,
    /// Terminal penalty per unit of state-of-charge shortfall below target.
    pub soc_deficit_penalty: f64,
    /// Implied-acceleration box for any transition, m/s^2.
    pub accel_min_ms2: f64,
    pub accel_max_ms2: f64,
    /// Receding-horizon length in distance steps.
    pub horizon_steps: usize,
    pub v_step_ms: f64,
    /// Lowest speed node: the crawl speed that stands in for waiting.
    pub v_floor_ms: f64,
    pub soc_step: f64,
    pub t_step_s: f64,
    /// Sizing speed for the time axis: the window covers traversing the
    /// horizon this slowly (signal waits extend it further).
    pub v_min_feasible_ms: f64,
    /// Half-width of the receding stage's local state-of-charge window.
    pub soc_window: f64,
    /// Crossing a stop-sign node requires speed at or below this.
    pub stop_speed_eps_ms: f64,
    pub engine_torque_points: usize,
    pub bsg_torque_points: usize,
    /// Extra clearance the solver keeps on top of the safe distance, m,
    /// absorbing one replan step's worth of forecast error.
    pub gap_margin_m: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            fuel_weight: 0.6,
            soc_deficit_penalty: 1e4,
            accel_min_ms2: -2.0,
            accel_max_ms2: 2.0,
            horizon_steps: 20,
            v_step_ms: 1.0,
            v_floor_ms: 0.2,
            soc_step: 0.01,
            t_step_s: 0.5,
            v_min_feasible_ms: 2.0,
            soc_window: 0.08,
            stop_speed_eps_ms: 0.3,
            engine_torque_points: 15,
            bsg_torque_points: 9,
            gap_margin_m: 4.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fuel_weight) {
            return Err(Error::validation("fuel_weight", "must lie in [0, 1]"));
        }
        if !(self.soc_deficit_penalty >= 0.0) {
            return Err(Error::validation(
                "soc_deficit_penalty",
                "must be non-negative",
            ));
        }
        if !(self.accel_min_ms2 < self.accel_max_ms2) {
            return Err(Error::validation(
                "accel_min_ms2",
                "acceleration box must be non-empty",
            ));
        }
        if self.horizon_steps == 0 {
            return Err(Error::validation("horizon_steps", "must be positive"));
        }
        let positive = [
            ("v_step_ms", self.v_step_ms),
            ("v_floor_ms", self.v_floor_ms),
            ("soc_step", self.soc_step),
            ("t_step_s", self.t_step_s),
            ("v_min_feasible_ms", self.v_min_feasible_ms),
            ("soc_window", self.soc_window),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::validation(name, "must be strictly positive"));
            }
        }
        if !(self.stop_speed_eps_ms >= self.v_floor_ms) {
            return Err(Error::validation(
                "stop_speed_eps_ms",
                "must be at least v_floor_ms, or stop-sign stages have no feasible node",
            ));
        }
        if !(self.v_min_feasible_ms >= self.v_floor_ms) {
            return Err(Error::validation(
                "v_min_feasible_ms",
                "must be at least v_floor_ms",
            ));
        }
        if self.engine_torque_points < 2 || self.bsg_torque_points < 2 {
            return Err(Error::validation(
                "torque_points",
                "control grids need at least two points per axis",
            ));
        }
        if !(self.gap_margin_m >= 0.0) {
            return Err(Error::validation("gap_margin_m", "must be non-negative"));
        }
        Ok(())
    }

    /// Full-route axes for the long-term stage: speed from the crawl floor to
    /// the route's highest limit, state of charge over the battery box.
    pub fn long_term_axes(&self, route: &RouteSpec, plant: &PlantParams) -> (Vec<f64>, Vec<f64>) {
        let v_hi = route.max_vmax_over(0.0, route.length_m);
        (
            build_axis(self.v_floor_ms, v_hi, self.v_step_ms),
            build_axis(plant.battery.soc_min, plant.battery.soc_max, self.soc_step),
        )
    }
}

/// Uniform axis from `lo` to `hi` with spacing at most `step` (the range is
/// divided into equal cells, refining the requested step when it does not
/// divide evenly). Both endpoints are nodes.
pub(crate) fn build_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(hi > lo, "axis needs a positive extent");
    assert!(step > 0.0);
    let cells = (((hi - lo) / step) - 1e-9).ceil().max(1.0) as usize;
    let dx = (hi - lo) / cells as f64;
    (0..=cells)
        .map(|i| if i == cells { hi } else { lo + i as f64 * dx })
        .collect()
}

pub(crate) fn axis_step(axis: &[f64]) -> f64 {
    (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
}

/// Control candidates for one spatial step from speed `v`.
///
/// The set is the cross product of the engine and BSG torque grids (each with
/// zero force-included for start-stop and pure coasting), plus node-targeted
/// controls whose total torque lands the arrival speed exactly on a speed-grid
/// node. The targeted controls are what let the solver brake onto the crawl
/// node at stop signs and red signals; they are ordinary interior points of
/// the same torque boxes.
///
/// Candidates violating the implied-acceleration box are dropped here, so the
/// returned set is exactly what the solvers (and the test oracles) evaluate.
/// Order is canonical (engine torque ascending, then BSG magnitude, then BSG
/// value), which fixes argmin tie-breaking everywhere.
pub fn candidate_controls(
    plant: &PlantParams,
    cfg: &SolverConfig,
    v_ms: f64,
    dd_m: f64,
    grade_rad: f64,
    arrival_targets_ms: &[f64],
) -> Vec<ControlInput> {
    let lim = plant.torque_limits(v_ms);
    let mut te_points = linspace_with_zero(lim.eng_min_nm, lim.eng_max_nm, cfg.engine_torque_points);
    te_points.sort_by(f64::total_cmp);
    te_points.dedup();
    let mut tb_points = linspace_with_zero(lim.bsg_min_nm, lim.bsg_max_nm, cfg.bsg_torque_points);
    tb_points.sort_by(f64::total_cmp);
    tb_points.dedup();

    let accel_ok = |u: ControlInput| {
        // Constant-force kinematics make the implied acceleration equal the
        // start-of-step net acceleration exactly.
        let a = plant.net_wheel_force(v_ms, u, grade_rad) / plant.mass_kg;
        a >= cfg.accel_min_ms2 - 1e-9 && a <= cfg.accel_max_ms2 + 1e-9
    };

    let mut out = Vec::with_capacity(te_points.len() * tb_points.len() + 32);
    for &te in &te_points {
        for &tb in &tb_points {
            let u = ControlInput {
                t_eng_nm: te,
                t_bsg_nm: tb,
            };
            if accel_ok(u) {
                out.push(u);
            }
        }
    }

    // Node-targeted candidates: total torque solving v_next == target.
    let ratio = plant.driveline_ratio.value_at(v_ms);
    if ratio > 0.0 && !arrival_targets_ms.is_empty() {
        let resist = plant.drag_area_coeff * v_ms * v_ms
            + plant.mass_kg
                * crate::plant::GRAVITY_MS2
                * (plant.rolling_coeff * grade_rad.cos() + grade_rad.sin());
        for &vt in arrival_targets_ms {
            let accel = (vt * vt - v_ms * v_ms) / (2.0 * dd_m);
            if accel < cfg.accel_min_ms2 - 1e-9 || accel > cfg.accel_max_ms2 + 1e-9 {
                continue;
            }
            let total_nm = (plant.mass_kg * accel + resist) * plant.wheel_radius_m / ratio;
            let mut splits = [
                (total_nm, 0.0),           // engine alone
                (0.0, total_nm),           // BSG alone
                (total_nm - lim.bsg_min_nm, lim.bsg_min_nm), // max regen assist
            ];
            // braking with the engine off keeps fuel at zero
            if total_nm < 0.0 {
                splits[2] = (total_nm - lim.bsg_max_nm, lim.bsg_max_nm);
            }
            for (te, tb) in splits {
                if te >= lim.eng_min_nm - 1e-9
                    && te <= lim.eng_max_nm + 1e-9
                    && tb >= lim.bsg_min_nm - 1e-9
                    && tb <= lim.bsg_max_nm + 1e-9
                {
                    out.push(ControlInput {
                        t_eng_nm: te.clamp(lim.eng_min_nm, lim.eng_max_nm),
                        t_bsg_nm: tb.clamp(lim.bsg_min_nm, lim.bsg_max_nm),
                    });
                }
            }
        }
    }

    out.sort_by(|a, b| {
        a.t_eng_nm
            .total_cmp(&b.t_eng_nm)
            .then(a.t_bsg_nm.abs().total_cmp(&b.t_bsg_nm.abs()))
            .then(a.t_bsg_nm.total_cmp(&b.t_bsg_nm))
    });
    out.dedup_by(|a, b| a.t_eng_nm == b.t_eng_nm && a.t_bsg_nm == b.t_bsg_nm);
    out
}

fn linspace_with_zero(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 2);
    let mut v: Vec<f64> = if hi > lo {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    } else {
        vec![lo]
    };
    if lo <= 0.0 && hi >= 0.0 {
        v.push(0.0);
    }
    v
}

/// Physics of one candidate transition, independent of battery state and
/// clock time: the state-of-charge drop and elapsed time depend only on the
/// start speed and control, which is what the solvers exploit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EdgeEval {
    pub v_next: f64,
    pub dt_s: f64,
    pub d_soc: f64,
    pub cost: f64,
}

pub(crate) fn eval_edge(
    plant: &PlantParams,
    u: ControlInput,
    v_ms: f64,
    dd_m: f64,
    grade_rad: f64,
    fuel_weight: f64,
) -> Option<EdgeEval> {
    const PROBE_SOC: f64 = 0.5;
    let out = plant
        .stage_step(
            VehicleState {
                v_ms,
                soc: PROBE_SOC,
                t_s: 0.0,
            },
            u,
            dd_m,
            grade_rad,
            fuel_weight,
        )
        .ok()?;
    Some(EdgeEval {
        v_next: out.next.v_ms,
        dt_s: out.dt_s,
        d_soc: PROBE_SOC - out.next.soc,
        cost: out.cost,
    })
}

/// Long-term value function: one (speed x state-of-charge) layer per route
/// position, `+inf` on infeasible nodes.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub v_axis: Vec<f64>,
    pub soc_axis: Vec<f64>,
    pub distance_step_m: f64,
    pub soc_target: f64,
    pub fuel_weight: f64,
    /// `layers[position_index][iv * soc_axis.len() + isoc]`
    pub layers: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn num_positions(&self) -> usize {
        self.layers.len()
    }

    pub fn node_value(&self, position_index: usize, iv: usize, isoc: usize) -> f64 {
        self.layers[position_index][iv * self.soc_axis.len() + isoc]
    }

    /// Bilinear cost-to-go at a continuous state; `+inf` outside the grid
    /// hull or next to infeasible nodes (conservative propagation).
    pub fn value_at(&self, position_index: usize, v_ms: f64, soc: f64) -> f64 {
        let Some((iv, wv)) = find_cell(&self.v_axis, v_ms) else {
            return f64::INFINITY;
        };
        let Some((is0, ws)) = find_cell(&self.soc_axis, soc) else {
            return f64::INFINITY;
        };
        let s = self.soc_axis.len();
        let l = &self.layers[position_index];
        blend2(
            l[iv * s + is0],
            l[iv * s + is0 + 1],
            l[(iv + 1) * s + is0],
            l[(iv + 1) * s + is0 + 1],
            wv,
            ws,
        )
    }

    /// Plain tabular dump: one row per node, `inf` marking infeasible nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let to_err = |e: std::io::Error| Error::io("<value-table>", e);
        writeln!(w, "position_index,v_ms,soc,value").map_err(to_err)?;
        for (pos, layer) in self.layers.iter().enumerate() {
            for (iv, v) in self.v_axis.iter().enumerate() {
                for (isoc, soc) in self.soc_axis.iter().enumerate() {
                    writeln!(w, "{pos},{v},{soc},{}", layer[iv * self.soc_axis.len() + isoc])
                        .map_err(to_err)?;
                }
            }
        }
        Ok(())
    }
}

/// Times within `window` at which the step `(p0, p1]` may be traversed
/// without running a red: the window itself when no signal bar lies in the
/// step, otherwise the bar's green windows intersected with it (and with each
/// other, should several bars share one step).
pub fn pass_at_green_feasible_times(
    route: &RouteSpec,
    p0: f64,
    p1: f64,
    window: (f64, f64),
) -> Vec<(f64, f64)> {
    if window.1 <= window.0 {
        return Vec::new();
    }
    let mut feasible = vec![window];
    for inter in route
        .intersections
        .iter()
        .filter(|i| i.position_m > p0 && i.position_m <= p1)
    {
        let greens = inter.spat.green_windows(window.0, window.1);
        feasible = intersect_interval_sets(&feasible, &greens);
        if feasible.is_empty() {
            break;
        }
    }
    feasible
}

fn intersect_interval_sets(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    out
}
