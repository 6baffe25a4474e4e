//! Receding-horizon backward induction over (speed, state of charge, time).
//!
//! Time enters the state so that signal phases and the forecast-driven gap
//! constraint can gate nodes; the long-term table caps the horizon as an
//! approximate terminal cost. When nothing in the horizon depends on time
//! (no signal bar ahead, follower constraint released) the time axis is
//! dropped and the stage kernel of the long-term solver runs on a local
//! window instead, which is both faster and exactly consistent with the
//! long-term solution.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gap::{follower_constraint_ok, gap_at, safe_distance, GapConfig};
use crate::plant::{ControlInput, PlantParams, StageOutcome, StepError, VehicleState};
use crate::predictor::TargetForecast;
use crate::route::{Intersection, RouteSpec};

use super::interp::{blend, blend2, find_cell, UniformShift};
use super::long_term::{backward_stage_2d, static_node_ok, static_v_mask};
use super::{axis_step, build_axis, candidate_controls, eval_edge, SolverConfig, ValueTable};

/// One receding-horizon instance: where the vehicle is, what it knows about
/// the target ahead, and which knobs to solve with.
#[derive(Debug, Clone, Copy)]
pub struct HorizonProblem<'a> {
    pub route: &'a RouteSpec,
    pub plant: &'a PlantParams,
    pub cfg: &'a SolverConfig,
    pub gap_cfg: &'a GapConfig,
    /// Distance-grid index the vehicle currently occupies.
    pub start_index: usize,
    /// Current state; `t_s` is the absolute clock the signal schedules use.
    pub state: VehicleState,
    /// Forecast of the target ahead; `None` releases the follower constraint.
    pub forecast: Option<&'a TargetForecast>,
    /// Bumper-to-bumper gap at `state.t_s`, m. Ignored without a forecast.
    pub initial_gap_m: f64,
}

impl HorizonProblem<'_> {
    fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.gap_cfg.validate()?;
        if self.start_index >= self.route.num_steps() {
            return Err(Error::validation(
                "start_index",
                "horizon must start before the route end",
            ));
        }
        if !(self.state.v_ms >= 0.0) {
            return Err(Error::validation("state.v_ms", "must be non-negative"));
        }
        if let Some(fc) = self.forecast {
            if !(self.initial_gap_m >= 0.0) {
                return Err(Error::validation("initial_gap_m", "must be non-negative"));
            }
            if (fc.start_time_s - self.state.t_s).abs() > 1e-6 {
                return Err(Error::validation(
                    "forecast",
                    "must start at the current clock time",
                ));
            }
        }
        Ok(())
    }
}

/// One step of the planned trajectory, described at its arrival point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PredictedStep {
    /// Arrival position, m.
    pub position_m: f64,
    pub t_s: f64,
    pub v_ms: f64,
    pub soc: f64,
    pub control: ControlInput,
    pub dt_s: f64,
    pub fuel_rate_g_s: f64,
    /// Gap to the forecast target on arrival, when a forecast was given.
    pub gap_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonSolution {
    /// Control to apply for the next distance step.
    pub first_control: ControlInput,
    /// Cost-to-go from the current state (stage costs plus terminal value).
    pub cost: f64,
    /// Planned trajectory; may stop short of the horizon when interpolation
    /// conservatism cuts a continuation off, the first step is always there.
    pub predicted: Vec<PredictedStep>,
}

enum Tables {
    /// Per-stage (v, soc) layers; stage 0 is unused (the rollout starts from
    /// the real state).
    TwoD { layers: Vec<Vec<f64>> },
    /// Per-stage (v, soc, t) layers, `t` fastest.
    ThreeD { layers: Vec<Vec<f64>>, t_axis: Vec<f64> },
}

struct StageSet<'a> {
    v_axis: &'a [f64],
    soc_axis: Vec<f64>,
    tables: Tables,
}

impl StageSet<'_> {
    /// Cost-to-go at a continuous state on stage `k` (1..=horizon).
    fn continuation(&self, k: usize, v: f64, soc: f64, t_abs: f64) -> f64 {
        match &self.tables {
            Tables::TwoD { layers } => interp2(&layers[k], self.v_axis, &self.soc_axis, v, soc),
            Tables::ThreeD { layers, t_axis } => {
                let Some((iv, wv)) = find_cell(self.v_axis, v) else {
                    return f64::INFINITY;
                };
                let Some((is0, ws)) = find_cell(&self.soc_axis, soc) else {
                    return f64::INFINITY;
                };
                let Some((it, wt)) = find_cell(t_axis, t_abs) else {
                    return f64::INFINITY;
                };
                let (s_len, t_len) = (self.soc_axis.len(), t_axis.len());
                let layer = &layers[k];
                let at = |jv: usize, js: usize| {
                    let row = (jv * s_len + js) * t_len;
                    blend(layer[row + it], layer[row + it + 1], wt)
                };
                blend(
                    blend(at(iv, is0), at(iv, is0 + 1), ws),
                    blend(at(iv + 1, is0), at(iv + 1, is0 + 1), ws),
                    wv,
                )
            }
        }
    }
}

fn interp2(layer: &[f64], v_axis: &[f64], soc_axis: &[f64], v: f64, soc: f64) -> f64 {
    let Some((iv, wv)) = find_cell(v_axis, v) else {
        return f64::INFINITY;
    };
    let Some((is0, ws)) = find_cell(soc_axis, soc) else {
        return f64::INFINITY;
    };
    let s = soc_axis.len();
    blend2(
        layer[iv * s + is0],
        layer[iv * s + is0 + 1],
        layer[(iv + 1) * s + is0],
        layer[(iv + 1) * s + is0 + 1],
        wv,
        ws,
    )
}

fn bar_at(route: &RouteSpec, pos_m: f64) -> Option<&Intersection> {
    route
        .intersections
        .iter()
        .find(|x| (x.position_m - pos_m).abs() <= 1e-6)
}

/// Local state-of-charge axis: a window around the current charge, clipped to
/// the battery box. A window spanning the whole box reproduces the long-term
/// axis exactly.
fn local_soc_axis(cfg: &SolverConfig, soc_now: f64, soc_min: f64, soc_max: f64) -> Vec<f64> {
    let lo = (soc_now - cfg.soc_window).max(soc_min);
    let hi = (soc_now + cfg.soc_window).min(soc_max);
    if hi - lo < cfg.soc_step {
        // degenerate window (current charge pinned at a box edge)
        build_axis(soc_min, soc_max, cfg.soc_step)
    } else {
        build_axis(lo, hi, cfg.soc_step)
    }
}

/// Solves one receding-horizon problem against the long-term terminal table.
///
/// Stage tables are built backward from the horizon end, then the plan is
/// re-derived forward from the true (off-grid) state, which also yields the
/// first control. Infeasibility of the very first step is an error carrying
/// the binding constraint of every rejected candidate.
pub fn solve_receding_horizon(
    problem: &HorizonProblem,
    terminal: &ValueTable,
) -> Result<HorizonSolution> {
    problem.validate()?;
    let route = problem.route;
    let cfg = problem.cfg;
    let n = route.num_steps();
    let h = cfg.horizon_steps.min(n - problem.start_index);
    if terminal.num_positions() <= problem.start_index + h {
        return Err(Error::validation(
            "terminal",
            "value table does not cover the horizon end",
        ));
    }
    if (terminal.distance_step_m - route.distance_step_m).abs() > 1e-9 {
        return Err(Error::validation(
            "terminal",
            "value table was built for a different distance step",
        ));
    }
    if (terminal.fuel_weight - cfg.fuel_weight).abs() > 1e-12 {
        return Err(Error::validation(
            "terminal",
            "value table was built with a different fuel weight",
        ));
    }

    let v_axis = &terminal.v_axis;
    let soc_axis = local_soc_axis(
        cfg,
        problem.state.soc,
        problem.plant.battery.soc_min,
        problem.plant.battery.soc_max,
    );
    let dd = route.distance_step_m;
    let p_start = route.position(problem.start_index);
    let p_end = route.position(problem.start_index + h);
    let has_bars = route.intersection_in(p_start, p_end).is_some();
    // The follower constraint cannot bind anywhere in the horizon if the gap
    // stays beyond radar range even with the target frozen in place.
    let gap_released = match problem.forecast {
        None => true,
        Some(_) => problem.initial_gap_m - h as f64 * dd > problem.gap_cfg.radar_range_m,
    };

    if !has_bars && gap_released {
        let layers = solve_2d_stages(problem, terminal, h, v_axis, &soc_axis);
        let set = StageSet {
            v_axis,
            soc_axis,
            tables: Tables::TwoD { layers },
        };
        return rollout(problem, h, &set);
    }

    // Time axis window sized for traversing the horizon slowly; when no
    // signal needs waiting out, try a half window first and fall back to the
    // full one if that prunes every plan away.
    let full_span = h as f64 * dd / cfg.v_min_feasible_ms;
    let spans: &[f64] = if has_bars { &[1.0] } else { &[0.5, 1.0] };
    let mut last_err = None;
    for (attempt, frac) in spans.iter().enumerate() {
        let t_axis = build_axis(
            problem.state.t_s,
            problem.state.t_s + full_span * frac,
            cfg.t_step_s,
        );
        let layers = solve_3d_stages(problem, terminal, h, v_axis, &soc_axis, &t_axis);
        let set = StageSet {
            v_axis,
            soc_axis: soc_axis.clone(),
            tables: Tables::ThreeD { layers, t_axis },
        };
        match rollout(problem, h, &set) {
            Ok(sol) => return Ok(sol),
            Err(e) => {
                if attempt + 1 < spans.len() {
                    log::debug!(
                        "receding horizon at index {} infeasible on a {:.0}% time window, retrying wider",
                        problem.start_index,
                        frac * 100.0
                    );
                }
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one time window was attempted"))
}

/// Stage tables for the time-free case, reusing the long-term stage kernel.
fn solve_2d_stages(
    problem: &HorizonProblem,
    terminal: &ValueTable,
    h: usize,
    v_axis: &[f64],
    soc_axis: &[f64],
) -> Vec<Vec<f64>> {
    let route = problem.route;
    let cfg = problem.cfg;
    let s_len = soc_axis.len();
    let mut layers = vec![Vec::new(); h + 1];

    let end_index = problem.start_index + h;
    let mut term = vec![f64::INFINITY; v_axis.len() * s_len];
    for (iv, &v) in v_axis.iter().enumerate() {
        for (isoc, &soc) in soc_axis.iter().enumerate() {
            term[iv * s_len + isoc] = terminal.value_at(end_index, v, soc);
        }
    }
    layers[h] = term;

    for k in (1..h).rev() {
        let pos_index = problem.start_index + k;
        let p0 = route.position(pos_index);
        let p1 = route.position(pos_index + 1);
        let mut layer = vec![f64::INFINITY; v_axis.len() * s_len];
        backward_stage_2d(
            problem.plant,
            cfg,
            v_axis,
            soc_axis,
            route.distance_step_m,
            route.grade_at(p0),
            route.min_vmax_over(p0, p1),
            &static_v_mask(route, cfg, p0, v_axis),
            &layers[k + 1],
            &mut layer,
        );
        layers[k] = layer;
    }
    layers
}

/// Node feasibility on the (speed, time) face of stage `k_steps` (state of
/// charge never gates a node: the battery box is the axis hull itself).
fn node_mask_3d(
    problem: &HorizonProblem,
    k_steps: usize,
    v_axis: &[f64],
    t_axis: &[f64],
) -> Vec<bool> {
    let route = problem.route;
    let pos = route.position(problem.start_index + k_steps);
    let bar = bar_at(route, pos);
    let dd = route.distance_step_m;
    let t_len = t_axis.len();
    let mut ok = vec![false; v_axis.len() * t_len];

    // green phase, gap and target speed depend on t alone; hoist them
    let per_t: Vec<(bool, f64, f64)> = t_axis
        .iter()
        .map(|&t| {
            let green = bar.is_none_or(|b| b.spat.is_green(t));
            match problem.forecast {
                Some(fc) => (
                    green,
                    gap_at(problem.initial_gap_m, fc, k_steps as f64 * dd, t),
                    fc.velocity_at(t),
                ),
                None => (green, f64::INFINITY, 0.0),
            }
        })
        .collect();

    for (iv, &v) in v_axis.iter().enumerate() {
        if !static_node_ok(route, problem.cfg, pos, v) {
            continue;
        }
        for (it, &(green, gap, v_tgt)) in per_t.iter().enumerate() {
            if !green {
                continue;
            }
            let gap_ok = problem.forecast.is_none() || {
                let d_safe = safe_distance(problem.gap_cfg, v, v - v_tgt);
                follower_constraint_ok(problem.gap_cfg, gap, d_safe + problem.cfg.gap_margin_m)
            };
            ok[iv * t_len + it] = gap_ok;
        }
    }
    ok
}

fn solve_3d_stages(
    problem: &HorizonProblem,
    terminal: &ValueTable,
    h: usize,
    v_axis: &[f64],
    soc_axis: &[f64],
    t_axis: &[f64],
) -> Vec<Vec<f64>> {
    let route = problem.route;
    let cfg = problem.cfg;
    let (s_len, t_len) = (soc_axis.len(), t_axis.len());
    let mut layers = vec![Vec::new(); h + 1];

    // terminal stage: long-term values replicated over feasible times
    let end_index = problem.start_index + h;
    let end_mask = node_mask_3d(problem, h, v_axis, t_axis);
    let mut term = vec![f64::INFINITY; v_axis.len() * s_len * t_len];
    for (iv, &v) in v_axis.iter().enumerate() {
        for (isoc, &soc) in soc_axis.iter().enumerate() {
            let value = terminal.value_at(end_index, v, soc);
            let row = (iv * s_len + isoc) * t_len;
            for it in 0..t_len {
                if end_mask[iv * t_len + it] {
                    term[row + it] = value;
                }
            }
        }
    }
    layers[h] = term;

    for k in (1..h).rev() {
        let pos_index = problem.start_index + k;
        let p0 = route.position(pos_index);
        let p1 = route.position(pos_index + 1);
        let mask = node_mask_3d(problem, k, v_axis, t_axis);
        let mut layer = vec![f64::INFINITY; v_axis.len() * s_len * t_len];
        backward_stage_3d(
            problem.plant,
            cfg,
            v_axis,
            soc_axis,
            t_axis,
            route.distance_step_m,
            route.grade_at(p0),
            route.min_vmax_over(p0, p1),
            &mask,
            &layers[k + 1],
            &mut layer,
        );
        layers[k] = layer;
    }
    layers
}

/// One backward-induction stage on the full (v, soc, t) grid. Same structure
/// as the 2-D kernel with time walked by a constant per-candidate shift; the
/// mask gates which (v, t) nodes of the current stage get values at all.
#[allow(clippy::too_many_arguments)]
fn backward_stage_3d(
    plant: &PlantParams,
    cfg: &SolverConfig,
    v_axis: &[f64],
    soc_axis: &[f64],
    t_axis: &[f64],
    dd_m: f64,
    grade_rad: f64,
    step_vmax_ms: f64,
    mask: &[bool],
    next: &[f64],
    out: &mut [f64],
) {
    let (s_len, t_len) = (soc_axis.len(), t_axis.len());
    let soc_h = axis_step(soc_axis);
    let t_h = axis_step(t_axis);
    for (iv, &v) in v_axis.iter().enumerate() {
        let mask_row = &mask[iv * t_len..(iv + 1) * t_len];
        if v > step_vmax_ms + 1e-9 || !mask_row.iter().any(|&m| m) {
            continue;
        }
        for u in candidate_controls(plant, cfg, v, dd_m, grade_rad, v_axis) {
            let Some(edge) = eval_edge(plant, u, v, dd_m, grade_rad, cfg.fuel_weight) else {
                continue;
            };
            if edge.v_next > step_vmax_ms + 1e-9 {
                continue;
            }
            let Some((jv, wv)) = find_cell(v_axis, edge.v_next) else {
                continue;
            };
            let shift_s = UniformShift::new(s_len, soc_h, -edge.d_soc);
            let shift_t = UniformShift::new(t_len, t_h, edge.dt_s);
            for isoc in 0..s_len {
                let Some((js, ws)) = shift_s.cell(isoc) else {
                    continue;
                };
                let r00 = &next[(jv * s_len + js) * t_len..][..t_len];
                let r01 = &next[(jv * s_len + js + 1) * t_len..][..t_len];
                let r10 = &next[((jv + 1) * s_len + js) * t_len..][..t_len];
                let r11 = &next[((jv + 1) * s_len + js + 1) * t_len..][..t_len];
                let out_row = &mut out[(iv * s_len + isoc) * t_len..][..t_len];
                for (it, slot) in out_row.iter_mut().enumerate() {
                    if !mask_row[it] {
                        continue;
                    }
                    let Some((jt, wt)) = shift_t.cell(it) else {
                        continue;
                    };
                    let c00 = blend(r00[jt], r00[jt + 1], wt);
                    let c01 = blend(r01[jt], r01[jt + 1], wt);
                    let c10 = blend(r10[jt], r10[jt + 1], wt);
                    let c11 = blend(r11[jt], r11[jt + 1], wt);
                    let val = blend(blend(c00, c01, ws), blend(c10, c11, ws), wv);
                    if val.is_finite() {
                        let total = edge.cost + val;
                        if total < *slot {
                            *slot = total;
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass from the true state: picks the argmin candidate against the
/// stage tables at each step, applying it through the real plant. Stage 0
/// doubles as the first-control selection; its infeasibility is the
/// solver-level error and carries one reason per rejected candidate.
fn rollout(problem: &HorizonProblem, h: usize, set: &StageSet) -> Result<HorizonSolution> {
    let route = problem.route;
    let cfg = problem.cfg;
    let plant = problem.plant;
    let dd = route.distance_step_m;
    let mut state = problem.state;
    let mut predicted: Vec<PredictedStep> = Vec::with_capacity(h);
    let mut solution_cost = f64::INFINITY;

    for k in 0..h {
        let pos_index = problem.start_index + k;
        let p0 = route.position(pos_index);
        let p1 = route.position(pos_index + 1);
        let grade = route.grade_at(p0);
        let step_vmax = route.min_vmax_over(p0, p1);
        let bar = bar_at(route, p1);
        let collect = k == 0;
        let mut reasons: Vec<String> = Vec::new();
        let mut best: Option<(f64, ControlInput, StageOutcome, Option<f64>)> = None;

        if state.v_ms > step_vmax + 1e-9 {
            if collect {
                reasons.push(format!(
                    "current speed {:.2} m/s already exceeds the step limit {:.2} m/s",
                    state.v_ms, step_vmax
                ));
            }
        } else {
            for u in candidate_controls(plant, cfg, state.v_ms, dd, grade, set.v_axis) {
                let reject = |reason: &str, reasons: &mut Vec<String>| {
                    if collect {
                        reasons.push(format!(
                            "te {:+.1} N*m, tb {:+.1} N*m: {reason}",
                            u.t_eng_nm, u.t_bsg_nm
                        ));
                    }
                };
                let out = match plant.stage_step(state, u, dd, grade, cfg.fuel_weight) {
                    Ok(o) => o,
                    Err(StepError::Stalled) => {
                        reject("stalls before completing the step", &mut reasons);
                        continue;
                    }
                    Err(StepError::PowerLimit) => {
                        reject("exceeds the battery power limit", &mut reasons);
                        continue;
                    }
                };
                let nxt = out.next;
                if nxt.v_ms > step_vmax + 1e-9 {
                    reject("breaks the speed limit inside the step", &mut reasons);
                    continue;
                }
                if !static_node_ok(route, cfg, p1, nxt.v_ms) {
                    if route.has_stop_sign_at(p1) && nxt.v_ms > cfg.stop_speed_eps_ms {
                        reject("stop sign ahead requires crawl speed", &mut reasons);
                    } else {
                        reject("arrival speed leaves the limit band", &mut reasons);
                    }
                    continue;
                }
                if let Some(b) = bar {
                    if !b.spat.is_green(nxt.t_s) {
                        reject("signal is red on arrival", &mut reasons);
                        continue;
                    }
                }
                let mut gap_next = None;
                if let Some(fc) = problem.forecast {
                    let g = gap_at(problem.initial_gap_m, fc, (k + 1) as f64 * dd, nxt.t_s);
                    let d_safe = safe_distance(problem.gap_cfg, nxt.v_ms, nxt.v_ms - fc.velocity_at(nxt.t_s));
                    if !follower_constraint_ok(problem.gap_cfg, g, d_safe + cfg.gap_margin_m) {
                        reject("unsafe gap to the target", &mut reasons);
                        continue;
                    }
                    gap_next = Some(g);
                }
                let to_go = set.continuation(k + 1, nxt.v_ms, nxt.soc, nxt.t_s);
                if !to_go.is_finite() {
                    reject("no feasible continuation from the arrival state", &mut reasons);
                    continue;
                }
                let total = out.cost + to_go;
                if best.as_ref().is_none_or(|(b, _, _, _)| total < *b) {
                    best = Some((total, u, out, gap_next));
                }
            }
        }

        match best {
            Some((total, control, out, gap_next)) => {
                if k == 0 {
                    solution_cost = total;
                }
                predicted.push(PredictedStep {
                    position_m: p1,
                    t_s: out.next.t_s,
                    v_ms: out.next.v_ms,
                    soc: out.next.soc,
                    control,
                    dt_s: out.dt_s,
                    fuel_rate_g_s: out.fuel_rate_g_s,
                    gap_m: gap_next,
                });
                state = out.next;
            }
            None if k == 0 => {
                return Err(Error::InfeasibleSolve {
                    position_index: pos_index,
                    detail: summarize_rejections(&reasons),
                });
            }
            None => {
                log::debug!(
                    "predicted rollout truncated at stage {k} of {h} (interpolation conservatism)"
                );
                break;
            }
        }
    }

    Ok(HorizonSolution {
        first_control: predicted[0].control,
        cost: solution_cost,
        predicted,
    })
}

fn summarize_rejections(reasons: &[String]) -> String {
    const SHOWN: usize = 12;
    let head = reasons
        .iter()
        .take(SHOWN)
        .cloned()
        .collect::<Vec<_>>()
        .join("; ");
    if reasons.len() > SHOWN {
        format!(
            "{} candidates, none feasible: {head} (+{} more)",
            reasons.len(),
            reasons.len() - SHOWN
        )
    } else {
        format!("{} candidates, none feasible: {head}", reasons.len())
    }
}
