//! Closed-loop scenario harness: couples the traffic target, the predictor
//! and the two solver stages into a replanning simulation loop.
//!
//! One scenario run:
//!
//! 1. solve the full-route value table once (signals and traffic ignored),
//! 2. every `replan_stride` distance steps, sense the true target, build a
//!    feature history, forecast its velocity (GRU encoder-decoder or constant
//!    velocity) and solve the receding horizon against the long-term table,
//! 3. apply the plan's leading controls through the true plant, advance the
//!    target along its recorded trajectory, and log the realized step.
//!
//! The spatial solver cannot represent a standing vehicle, so the harness
//! wraps it in two supervisory moves. An infeasible solve is first retried
//! with progressively shorter horizons, which plans up to the feasibility
//! boundary instead of giving up because the far end of the horizon is
//! blocked. When even a single step is infeasible and the ego is slow enough
//! to come to rest within one distance cell, it holds at the current grid
//! node with the clock running and replans every time step until the world
//! changes or `max_wait_s` runs out. Genuine infeasibility at speed aborts
//! the run with the binding constraints.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gap::{safe_distance, GapConfig};
use crate::ocp::{
    solve_long_term, solve_receding_horizon, HorizonProblem, HorizonSolution, SolverConfig,
    ValueTable,
};
use crate::plant::{load_plant, PlantParams, VehicleState};
use crate::predictor::{
    constant_velocity_forecast, load_model, target_distance_to_light, FeatureVector, GruEdModel,
};
use crate::route::{load_route, RouteSpec};
use crate::traffic::{
    gen_target_trajectory, load_trajectory_csv, DriverParams, TargetTrajectory, SAMPLE_PERIOD_S,
};

/// Which velocity predictor drives the gap constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// GRU encoder-decoder model loaded from `model_file`.
    Gru,
    /// Hold the target's current velocity over the whole horizon.
    Constant,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Gru => "gru",
            PredictorKind::Constant => "constant",
        })
    }
}

/// Where the target vehicle's trajectory comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSource {
    /// No target ahead: free driving.
    #[default]
    None,
    /// Integrate the seeded intelligent-driver model along the route.
    Generate {
        seed: u64,
        departure_time_s: f64,
        duration_s: f64,
        #[serde(default)]
        initial_position_m: f64,
        #[serde(default)]
        driver: DriverParams,
    },
    /// Load a recorded trajectory from CSV (`t,v[,a,pos]` columns).
    Csv { path: PathBuf },
}

fn default_initial_soc() -> f64 {
    0.55
}
fn default_dsrc_range_m() -> f64 {
    300.0
}
fn default_history_window_s() -> f64 {
    10.0
}
fn default_prediction_horizon_s() -> f64 {
    20.0
}
fn default_replan_stride() -> usize {
    1
}
fn default_max_wait_s() -> f64 {
    120.0
}

/// Everything one closed-loop run needs, loadable from a JSON file.
///
/// Paths are interpreted relative to the config file's directory when loaded
/// through [`load_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub route_file: PathBuf,
    pub plant_file: PathBuf,
    /// GRU model; optional when the constant-velocity predictor is used.
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    /// Forced predictor choice; `None` picks GRU whenever a model is given.
    #[serde(default)]
    pub predictor: Option<PredictorKind>,
    #[serde(default)]
    pub target: TargetSource,
    /// Ego departure clock time, s (signal schedules share this clock).
    #[serde(default)]
    pub departure_time_s: f64,
    #[serde(default)]
    pub initial_speed_ms: f64,
    #[serde(default = "default_initial_soc")]
    pub initial_soc: f64,
    /// Terminal state-of-charge target; defaults to `initial_soc`
    /// (charge-sustaining operation).
    #[serde(default)]
    pub soc_target: Option<f64>,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Signal broadcast range for the distance-to-light feature, m.
    #[serde(default = "default_dsrc_range_m")]
    pub dsrc_range_m: f64,
    /// Feature history span fed to the predictor, s. Must equal the model's
    /// trained window when a model is given.
    #[serde(default = "default_history_window_s")]
    pub history_window_s: f64,
    /// Forecast span of the constant-velocity predictor, s. A GRU model
    /// brings its own horizon.
    #[serde(default = "default_prediction_horizon_s")]
    pub prediction_horizon_s: f64,
    /// Distance steps driven per plan before replanning.
    #[serde(default = "default_replan_stride")]
    pub replan_stride: usize,
    /// Longest continuous supervisory hold before the run is declared stuck, s.
    #[serde(default = "default_max_wait_s")]
    pub max_wait_s: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.gap.validate()?;
        if self.route_file.as_os_str().is_empty() || self.plant_file.as_os_str().is_empty() {
            return Err(Error::validation(
                "scenario",
                "route_file and plant_file are required",
            ));
        }
        if !(self.initial_speed_ms >= 0.0) {
            return Err(Error::validation(
                "initial_speed_ms",
                "must be non-negative",
            ));
        }
        if !self.departure_time_s.is_finite() {
            return Err(Error::validation("departure_time_s", "must be finite"));
        }
        let positive = [
            ("dsrc_range_m", self.dsrc_range_m),
            ("history_window_s", self.history_window_s),
            ("prediction_horizon_s", self.prediction_horizon_s),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::validation(name, "must be strictly positive"));
            }
        }
        if self.replan_stride == 0 {
            return Err(Error::validation("replan_stride", "must be at least 1"));
        }
        if !(self.max_wait_s >= 0.0) {
            return Err(Error::validation("max_wait_s", "must be non-negative"));
        }
        if let TargetSource::Generate { duration_s, .. } = &self.target {
            if !(*duration_s > 0.0) {
                return Err(Error::validation(
                    "target.duration_s",
                    "must be strictly positive",
                ));
            }
        }
        Ok(())
    }

    /// Re-roots every relative path against `base_dir`.
    pub fn resolve_paths(&mut self, base_dir: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut self.route_file);
        resolve(&mut self.plant_file);
        if let Some(m) = &mut self.model_file {
            resolve(m);
        }
        if let TargetSource::Csv { path } = &mut self.target {
            resolve(path);
        }
    }

    fn wants_gru(&self) -> bool {
        match self.predictor {
            Some(PredictorKind::Gru) => true,
            Some(PredictorKind::Constant) => false,
            None => self.model_file.is_some(),
        }
    }
}

/// Loads a scenario config from JSON, resolving relative paths against the
/// config file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    if let Some(dir) = path.parent() {
        config.resolve_paths(dir);
    }
    config.validate()?;
    Ok(config)
}

/// A scenario with every referenced artifact loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub route: RouteSpec,
    pub plant: PlantParams,
    /// Present exactly when the GRU predictor is in play.
    pub model: Option<GruEdModel>,
    /// The target's true trajectory; `None` means free driving.
    pub target: Option<TargetTrajectory>,
    pub config: ScenarioConfig,
}

impl Scenario {
    /// Cross-invariants between the loaded pieces. [`prepare`] calls this;
    /// hand-assembled scenarios get the same checks from [`run`].
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.plant.validate()?;
        self.route.validate()?;
        if self.config.wants_gru() && self.model.is_none() {
            return Err(Error::validation(
                "predictor",
                "the gru predictor needs a model",
            ));
        }
        if let Some(model) = &self.model {
            model.validate()?;
            let trained_window = model.history_len as f64 * model.sample_period_s;
            if (trained_window - self.config.history_window_s).abs() > 1e-6 {
                return Err(Error::validation(
                    "history_window_s",
                    format!(
                        "config window {} s does not match the model's trained window {} s",
                        self.config.history_window_s, trained_window
                    ),
                ));
            }
        }
        let b = &self.plant.battery;
        if !(b.soc_min <= self.config.initial_soc && self.config.initial_soc <= b.soc_max) {
            return Err(Error::validation(
                "initial_soc",
                "must lie inside the battery's state-of-charge box",
            ));
        }
        if let Some(target) = self.config.soc_target {
            if !(b.soc_min <= target && target <= b.soc_max) {
                return Err(Error::validation(
                    "soc_target",
                    "must lie inside the battery's state-of-charge box",
                ));
            }
        }
        if let Some(traj) = &self.target {
            let t0 = self.config.departure_time_s;
            let gap0 = traj.position_at(t0);
            if !(gap0 > 0.0) {
                return Err(Error::validation(
                    "target",
                    format!("target sits at or behind the ego at departure (gap {gap0:.2} m)"),
                ));
            }
            let dv0 = self.config.initial_speed_ms - traj.velocity_at(t0);
            let d_safe0 = safe_distance(&self.config.gap, self.config.initial_speed_ms, dv0);
            if gap0 <= self.config.gap.radar_range_m && gap0 < d_safe0 {
                return Err(Error::validation(
                    "target",
                    format!(
                        "ego departs inside the safe distance (gap {gap0:.2} m, safe {d_safe0:.2} m)"
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Loads route, plant, model and target for a config.
pub fn prepare(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let route = load_route(&config.route_file)?;
    let plant = load_plant(&config.plant_file)?;
    let model = if config.wants_gru() {
        let Some(path) = &config.model_file else {
            return Err(Error::validation(
                "predictor",
                "predictor 'gru' requires model_file",
            ));
        };
        Some(load_model(path)?)
    } else {
        None
    };
    let target = match &config.target {
        TargetSource::None => None,
        TargetSource::Generate {
            seed,
            departure_time_s,
            duration_s,
            initial_position_m,
            driver,
        } => Some(gen_target_trajectory(
            &route,
            driver,
            *departure_time_s,
            *duration_s,
            *initial_position_m,
            *seed,
        )?),
        TargetSource::Csv { path } => Some(load_trajectory_csv(path)?),
    };
    let scenario = Scenario {
        route,
        plant,
        model,
        target,
        config: config.clone(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// A signalized-intersection crossing observed in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingNote {
    /// Index into the route's intersection list.
    pub intersection: usize,
    pub green: bool,
    /// Time into the signal cycle at the crossing instant, s.
    pub phase_s: f64,
}

/// One logged simulation event: either an applied distance step (described at
/// its arrival point) or a supervisory hold tick (position unchanged).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub position_m: f64,
    pub t_s: f64,
    pub v_ms: f64,
    pub soc: f64,
    pub t_eng_nm: f64,
    pub t_bsg_nm: f64,
    pub fuel_rate_g_s: f64,
    /// Duration of the step ending at this row, s (0 for the departure row).
    pub dt_s: f64,
    pub v_target_ms: Option<f64>,
    /// True bumper-to-bumper gap, m, when a target exists.
    pub gap_m: Option<f64>,
    pub crossing: Option<CrossingNote>,
}

/// Outcome of one closed-loop run.
///
/// `violations` collects soft safety-audit findings (a logged gap below the
/// safe distance inside radar range). Collisions and red-light crossings are
/// hard failures and surface as [`Error::SafetyViolation`] instead, so a
/// returned report never contains either.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub fuel_consumed_g: f64,
    pub travel_time_s: f64,
    pub distance_m: f64,
    pub final_soc: f64,
    /// Whether the ego reached the route end. `false` means it was parked by
    /// the supervisory hold until `max_wait_s` ran out.
    pub completed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopped_reason: Option<String>,
    pub lights_passed_on_green: usize,
    pub lights_total: usize,
    pub violations: Vec<String>,
    /// Applied plans (successful solves whose controls were driven).
    pub replans: usize,
    /// Total supervisory hold time, s.
    pub wait_time_s: f64,
    pub trace: Vec<TraceRow>,
}

/// Highest speed from which the plant can come to rest within one distance
/// cell at the configured braking limit; the supervisory hold refuses to
/// engage above it.
fn hold_speed_max_ms(cfg: &SolverConfig, dd_m: f64) -> f64 {
    (2.0 * cfg.accel_min_ms2.abs() * dd_m).sqrt()
}

/// Ego position at time `t` from the recorded (time, position) track, linear
/// between entries and held at the ends. Within-step acceleration is ignored,
/// which only matters for which light counts as "next" in the instants around
/// a bar crossing.
fn track_position(track: &[(f64, f64)], t: f64) -> f64 {
    debug_assert!(!track.is_empty());
    if t <= track[0].0 {
        return track[0].1;
    }
    let (t_last, p_last) = track[track.len() - 1];
    if t >= t_last {
        return p_last;
    }
    let i = track.partition_point(|(ts, _)| *ts <= t);
    let (t0, p0) = track[i - 1];
    let (t1, p1) = track[i];
    p0 + (p1 - p0) * ((t - t0) / (t1 - t0))
}

/// Ego-side feature history for the predictor: `history_len` samples spaced
/// `period_s` apart ending at `now_s`. Target velocity and acceleration are
/// read from the true trajectory; the distance-to-light feature is estimated
/// the way the ego would, from its own broadcast-limited distance to the next
/// light minus the measured gap at that instant.
fn feature_history(
    route: &RouteSpec,
    traj: &TargetTrajectory,
    track: &[(f64, f64)],
    dsrc_range_m: f64,
    history_len: usize,
    period_s: f64,
    now_s: f64,
) -> Vec<FeatureVector> {
    (0..history_len)
        .map(|i| {
            let t_i = now_s - (history_len - 1 - i) as f64 * period_s;
            let ego_pos = track_position(track, t_i);
            let d_tl_ego = route
                .next_intersection_after(ego_pos)
                .map_or(f64::INFINITY, |x| x.position_m - ego_pos);
            let gap = traj.position_at(t_i) - ego_pos;
            FeatureVector {
                v_ms: traj.velocity_at(t_i),
                a_ms2: traj.accel_at(t_i),
                d_tl_m: target_distance_to_light(d_tl_ego, gap, dsrc_range_m),
            }
        })
        .collect()
}

/// Solves the receding horizon, backing off to shorter horizons when the full
/// one is infeasible (a blocked far end must not forbid the feasible prefix).
fn plan_with_truncation(
    problem: &HorizonProblem,
    terminal: &ValueTable,
) -> Result<HorizonSolution> {
    match solve_receding_horizon(problem, terminal) {
        Ok(sol) => Ok(sol),
        Err(first @ Error::InfeasibleSolve { .. }) => {
            let mut h = problem.cfg.horizon_steps / 2;
            let mut last = first;
            while h >= 1 {
                let short_cfg = SolverConfig {
                    horizon_steps: h,
                    ..problem.cfg.clone()
                };
                let short = HorizonProblem {
                    cfg: &short_cfg,
                    ..*problem
                };
                match solve_receding_horizon(&short, terminal) {
                    Ok(sol) => {
                        log::debug!(
                            "index {}: horizon truncated to {} steps",
                            problem.start_index,
                            h
                        );
                        return Ok(sol);
                    }
                    Err(e @ Error::InfeasibleSolve { .. }) => {
                        last = e;
                        h /= 2;
                    }
                    Err(other) => return Err(other),
                }
            }
            Err(last)
        }
        Err(other) => Err(other),
    }
}

/// Time to cover `dist` from speed `v0` under constant acceleration `accel`.
fn time_to_cover(v0: f64, accel: f64, dist: f64) -> f64 {
    if accel.abs() < 1e-12 {
        return dist / v0.max(1e-9);
    }
    let disc = (v0 * v0 + 2.0 * accel * dist).max(0.0);
    (disc.sqrt() - v0) / accel
}

struct StepAudit {
    crossing: Option<CrossingNote>,
    greens: usize,
    crossings: usize,
    violations: Vec<String>,
}

/// Audits one applied distance step against the true world: collision and
/// red-light crossings are hard errors, a gap inside radar range that dips
/// below the safe distance is recorded. The step is sampled at one-second
/// granularity under its constant-acceleration kinematics so long crawl
/// steps cannot hide a transient approach.
#[allow(clippy::too_many_arguments)]
fn audit_step(
    route: &RouteSpec,
    gap_cfg: &GapConfig,
    target: Option<&TargetTrajectory>,
    p0: f64,
    p1: f64,
    t0: f64,
    v0: f64,
    v1: f64,
    dt: f64,
) -> Result<StepAudit> {
    let accel = (v1 - v0) / dt;
    let mut audit = StepAudit {
        crossing: None,
        greens: 0,
        crossings: 0,
        violations: Vec::new(),
    };

    if let Some(traj) = target {
        let mut tau = 1.0_f64.min(dt);
        loop {
            let t_abs = t0 + tau;
            let v_ego = v0 + accel * tau;
            let ego_pos = p0 + v0 * tau + 0.5 * accel * tau * tau;
            let gap = traj.position_at(t_abs) - ego_pos;
            if gap <= 0.0 {
                return Err(Error::SafetyViolation {
                    position_m: ego_pos,
                    time_s: t_abs,
                    detail: format!("collision: gap {gap:.2} m to the target"),
                });
            }
            let d_safe = safe_distance(gap_cfg, v_ego.max(0.0), v_ego - traj.velocity_at(t_abs));
            if gap <= gap_cfg.radar_range_m && gap < d_safe - 1e-9 {
                audit.violations.push(format!(
                    "gap {gap:.2} m below safe distance {d_safe:.2} m at {ego_pos:.1} m, t = {t_abs:.1} s"
                ));
            }
            if tau >= dt {
                break;
            }
            tau = (tau + 1.0).min(dt);
        }
    }

    for (idx, x) in route.intersections.iter().enumerate() {
        if !(x.position_m > p0 && x.position_m <= p1) {
            continue;
        }
        let t_x = t0 + time_to_cover(v0, accel, x.position_m - p0);
        let green = x.spat.is_green(t_x);
        let phase_s = (t_x - x.spat.offset_s).rem_euclid(x.spat.cycle_time_s);
        if !green {
            return Err(Error::SafetyViolation {
                position_m: x.position_m,
                time_s: t_x,
                detail: format!(
                    "crossed intersection {idx} during red (phase {phase_s:.2} s of {:.0} s cycle)",
                    x.spat.cycle_time_s
                ),
            });
        }
        audit.crossings += 1;
        audit.greens += 1;
        if audit.crossing.is_none() {
            audit.crossing = Some(CrossingNote {
                intersection: idx,
                green,
                phase_s,
            });
        }
    }
    Ok(audit)
}

/// Runs the closed loop on an already loaded scenario.
pub fn run(scenario: &Scenario) -> Result<ScenarioReport> {
    scenario.validate()?;
    let config = &scenario.config;
    let solver = &config.solver;
    let route = &scenario.route;
    let plant = &scenario.plant;
    let target = scenario.target.as_ref();
    let dd = route.distance_step_m;
    let n = route.num_steps();

    let soc_target = config.soc_target.unwrap_or(config.initial_soc);
    let (v_axis, soc_axis) = solver.long_term_axes(route, plant);
    let terminal = solve_long_term(route, plant, solver, &v_axis, &soc_axis, soc_target)?;

    let mut state = VehicleState {
        v_ms: config.initial_speed_ms,
        soc: config.initial_soc,
        t_s: config.departure_time_s,
    };
    let mut index = 0usize;
    let hold_cap_ms = hold_speed_max_ms(solver, dd);

    // Recorded ego motion for reconstructing past gap measurements.
    let mut track: Vec<(f64, f64)> = vec![(state.t_s, 0.0)];
    let gap_of = |t: f64, ego_pos: f64| target.map(|traj| traj.position_at(t) - ego_pos);

    let mut trace = vec![TraceRow {
        step: 0,
        position_m: 0.0,
        t_s: state.t_s,
        v_ms: state.v_ms,
        soc: state.soc,
        t_eng_nm: 0.0,
        t_bsg_nm: 0.0,
        fuel_rate_g_s: 0.0,
        dt_s: 0.0,
        v_target_ms: target.map(|traj| traj.velocity_at(state.t_s)),
        gap_m: gap_of(state.t_s, 0.0),
        crossing: None,
    }];
    let mut fuel_g = 0.0;
    let mut violations = Vec::new();
    let mut lights_green = 0usize;
    let mut lights_total = 0usize;
    let mut replans = 0usize;
    let mut wait_time = 0.0;
    let mut held_here = 0.0;
    let mut completed = true;
    let mut stopped_reason = None;

    while index < n {
        let position_m = route.position(index);
        let forecast = target.map(|traj| match &scenario.model {
            Some(model) => {
                let history = feature_history(
                    route,
                    traj,
                    &track,
                    config.dsrc_range_m,
                    model.history_len,
                    model.sample_period_s,
                    state.t_s,
                );
                model.predict(&history, state.t_s)
            }
            None => {
                let samples = (config.prediction_horizon_s / SAMPLE_PERIOD_S).ceil() as usize;
                constant_velocity_forecast(
                    traj.velocity_at(state.t_s),
                    samples,
                    state.t_s,
                    SAMPLE_PERIOD_S,
                )
            }
        });
        let initial_gap = gap_of(state.t_s, position_m).unwrap_or(0.0);
        let problem = HorizonProblem {
            route,
            plant,
            cfg: solver,
            gap_cfg: &config.gap,
            start_index: index,
            state,
            forecast: forecast.as_ref(),
            initial_gap_m: initial_gap,
        };

        let solution = match plan_with_truncation(&problem, &terminal) {
            Ok(sol) => sol,
            Err(Error::InfeasibleSolve { detail, .. }) => {
                if state.v_ms <= hold_cap_ms {
                    if held_here + 1e-9 >= config.max_wait_s {
                        completed = false;
                        stopped_reason = Some(format!(
                            "held {held_here:.1} s at {position_m:.1} m without a feasible plan"
                        ));
                        break;
                    }
                    // Brake-to-rest fiction: discard the remaining kinetic
                    // energy and hold at the current node with the clock
                    // running. Conservative on fuel, time and gap.
                    state.v_ms = 0.0;
                    let dt = solver.t_step_s;
                    state.t_s += dt;
                    wait_time += dt;
                    held_here += dt;
                    track.push((state.t_s, position_m));
                    let gap = gap_of(state.t_s, position_m);
                    if let Some(g) = gap {
                        if g <= 0.0 {
                            return Err(Error::SafetyViolation {
                                position_m,
                                time_s: state.t_s,
                                detail: format!("collision while holding: gap {g:.2} m"),
                            });
                        }
                        let d_safe = safe_distance(
                            &config.gap,
                            0.0,
                            -target.expect("gap implies target").velocity_at(state.t_s),
                        );
                        if g <= config.gap.radar_range_m && g < d_safe - 1e-9 {
                            violations.push(format!(
                                "gap {g:.2} m below safe distance {d_safe:.2} m while holding at {position_m:.1} m, t = {:.1} s",
                                state.t_s
                            ));
                        }
                    }
                    trace.push(TraceRow {
                        step: trace.len(),
                        position_m,
                        t_s: state.t_s,
                        v_ms: 0.0,
                        soc: state.soc,
                        t_eng_nm: 0.0,
                        t_bsg_nm: 0.0,
                        fuel_rate_g_s: 0.0,
                        dt_s: dt,
                        v_target_ms: target.map(|traj| traj.velocity_at(state.t_s)),
                        gap_m: gap,
                        crossing: None,
                    });
                    continue;
                }
                return Err(Error::InfeasibleSolve {
                    position_index: index,
                    detail: format!(
                        "at {position_m:.1} m, v = {:.2} m/s, soc = {:.3}, t = {:.1} s: {detail}",
                        state.v_ms, state.soc, state.t_s
                    ),
                });
            }
            Err(e) => return Err(e),
        };
        replans += 1;
        held_here = 0.0;

        let take = config.replan_stride.min(solution.predicted.len());
        for planned in &solution.predicted[..take] {
            let p0 = route.position(index);
            let p1 = route.position(index + 1);
            let grade = route.grade_at(p0);
            let out = plant
                .stage_step(state, planned.control, dd, grade, solver.fuel_weight)
                .expect("planned step re-executes on the same plant");
            let audit = audit_step(
                route,
                &config.gap,
                target,
                p0,
                p1,
                state.t_s,
                state.v_ms,
                out.next.v_ms,
                out.dt_s,
            )?;
            lights_green += audit.greens;
            lights_total += audit.crossings;
            violations.extend(audit.violations);

            state = out.next;
            index += 1;
            fuel_g += out.fuel_rate_g_s * out.dt_s;
            track.push((state.t_s, p1));
            trace.push(TraceRow {
                step: trace.len(),
                position_m: p1,
                t_s: state.t_s,
                v_ms: state.v_ms,
                soc: state.soc,
                t_eng_nm: planned.control.t_eng_nm,
                t_bsg_nm: planned.control.t_bsg_nm,
                fuel_rate_g_s: out.fuel_rate_g_s,
                dt_s: out.dt_s,
                v_target_ms: target.map(|traj| traj.velocity_at(state.t_s)),
                gap_m: gap_of(state.t_s, p1),
                crossing: audit.crossing,
            });
            if index >= n {
                break;
            }
        }

        // Keep the measurement track bounded: one entry before the oldest
        // instant the feature window can ask for is enough.
        let cutoff = state.t_s - config.history_window_s - 2.0 * SAMPLE_PERIOD_S;
        while track.len() > 1 && track[1].0 <= cutoff {
            track.remove(0);
        }
    }

    Ok(ScenarioReport {
        fuel_consumed_g: fuel_g,
        travel_time_s: state.t_s - config.departure_time_s,
        distance_m: route.position(index),
        final_soc: state.soc,
        completed,
        stopped_reason,
        lights_passed_on_green: lights_green,
        lights_total,
        violations,
        replans,
        wait_time_s: wait_time,
        trace,
    })
}

/// Loads everything a config references and runs the closed loop.
pub fn simulate(config: &ScenarioConfig) -> Result<ScenarioReport> {
    run(&prepare(config)?)
}

/// One run of a batch comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub variant: PredictorKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fuel_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub travel_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lights_passed_on_green: Option<usize>,
    /// Failure marker; `None` for a completed run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-variant aggregate over the completed runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: PredictorKind,
    pub completed_runs: usize,
    pub failed_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_fuel_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_travel_time_s: Option<f64>,
    /// Percentage deltas against the first variant's means.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fuel_delta_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub travel_time_delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub summaries: Vec<VariantSummary>,
}

/// Runs every predictor variant over every seed on the base scenario and
/// aggregates fuel and travel time. A seed replaces the generated target's
/// seed (a fixed CSV or targetless scenario repeats identically). Failures
/// mark their row and drop out of the means; deltas are relative to the
/// first variant.
pub fn compare(
    base: &ScenarioConfig,
    seeds: &[u64],
    variants: &[PredictorKind],
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::validation("seeds", "compare needs at least one seed"));
    }
    if variants.is_empty() {
        return Err(Error::validation(
            "variants",
            "compare needs at least one predictor variant",
        ));
    }
    let mut rows = Vec::with_capacity(seeds.len() * variants.len());
    for &variant in variants {
        for &seed in seeds {
            let mut config = base.clone();
            config.predictor = Some(variant);
            if let TargetSource::Generate { seed: s, .. } = &mut config.target {
                *s = seed;
            }
            let row = match simulate(&config) {
                Ok(report) if report.completed => CompareRow {
                    variant,
                    seed,
                    fuel_g: Some(report.fuel_consumed_g),
                    travel_time_s: Some(report.travel_time_s),
                    lights_passed_on_green: Some(report.lights_passed_on_green),
                    error: None,
                },
                Ok(report) => CompareRow {
                    variant,
                    seed,
                    fuel_g: None,
                    travel_time_s: None,
                    lights_passed_on_green: None,
                    error: Some(format!(
                        "did not finish: {}",
                        report
                            .stopped_reason
                            .unwrap_or_else(|| "stopped short of the route end".into())
                    )),
                },
                Err(e) => CompareRow {
                    variant,
                    seed,
                    fuel_g: None,
                    travel_time_s: None,
                    lights_passed_on_green: None,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }

    // rows are variant-major, so each variant's block is a contiguous slice
    // (robust even when the same variant is listed twice)
    let mut summaries: Vec<VariantSummary> = variants
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let block = &rows[k * seeds.len()..(k + 1) * seeds.len()];
            let done: Vec<&CompareRow> = block.iter().filter(|r| r.error.is_none()).collect();
            let mean =
                |f: fn(&CompareRow) -> Option<f64>| -> Option<f64> {
                    if done.is_empty() {
                        None
                    } else {
                        Some(done.iter().filter_map(|r| f(r)).sum::<f64>() / done.len() as f64)
                    }
                };
            VariantSummary {
                variant,
                completed_runs: done.len(),
                failed_runs: seeds.len() - done.len(),
                mean_fuel_g: mean(|r| r.fuel_g),
                mean_travel_time_s: mean(|r| r.travel_time_s),
                fuel_delta_pct: None,
                travel_time_delta_pct: None,
            }
        })
        .collect();

    let base_fuel = summaries[0].mean_fuel_g;
    let base_time = summaries[0].mean_travel_time_s;
    for summary in &mut summaries {
        summary.fuel_delta_pct = match (base_fuel, summary.mean_fuel_g) {
            (Some(b), Some(m)) if b > 0.0 => Some((m - b) / b * 100.0),
            _ => None,
        };
        summary.travel_time_delta_pct = match (base_time, summary.mean_travel_time_s) {
            (Some(b), Some(m)) if b > 0.0 => Some((m - b) / b * 100.0),
            _ => None,
        };
    }

    Ok(Comparison { rows, summaries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn write_report_json<W: Write>(report: &ScenarioReport, mut w: W) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::validation("report", format!("serializing report: {e}")))?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io("<writer>", e))
}

/// Trace CSV with one row per logged event. Columns, in order and stable
/// across versions:
///
/// `step, position_m, t_s, v_ms, soc, t_eng_nm, t_bsg_nm, fuel_rate_g_s,
/// dt_s, v_target_ms, gap_m, crossing_intersection, crossing_green,
/// crossing_phase_s`
///
/// Optional cells are empty when absent. Floats print in shortest
/// round-trip form.
pub fn write_report_csv<W: Write>(report: &ScenarioReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::validation("report", format!("writing csv: {e}"));
    wtr.write_record([
        "step",
        "position_m",
        "t_s",
        "v_ms",
        "soc",
        "t_eng_nm",
        "t_bsg_nm",
        "fuel_rate_g_s",
        "dt_s",
        "v_target_ms",
        "gap_m",
        "crossing_intersection",
        "crossing_green",
        "crossing_phase_s",
    ])
    .map_err(io_err)?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for row in &report.trace {
        wtr.write_record([
            row.step.to_string(),
            row.position_m.to_string(),
            row.t_s.to_string(),
            row.v_ms.to_string(),
            row.soc.to_string(),
            row.t_eng_nm.to_string(),
            row.t_bsg_nm.to_string(),
            row.fuel_rate_g_s.to_string(),
            row.dt_s.to_string(),
            opt(row.v_target_ms),
            opt(row.gap_m),
            row.crossing
                .map_or(String::new(), |c| c.intersection.to_string()),
            row.crossing.map_or(String::new(), |c| c.green.to_string()),
            row.crossing.map_or(String::new(), |c| c.phase_s.to_string()),
        ])
        .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn emit_report(report: &ScenarioReport, format: ReportFormat, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Json => write_report_json(report, &mut buf)?,
        ReportFormat::Csv => write_report_csv(report, &mut buf)?,
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_comparison_json<W: Write>(comparison: &Comparison, mut w: W) -> Result<()> {
    let text = serde_json::to_string_pretty(comparison)
        .map_err(|e| Error::validation("comparison", format!("serializing comparison: {e}")))?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io("<writer>", e))
}

/// Comparison CSV: the per-run rows (summaries are JSON-only). Columns:
/// `variant, seed, fuel_g, travel_time_s, lights_passed_on_green, error`.
pub fn write_comparison_csv<W: Write>(comparison: &Comparison, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::validation("comparison", format!("writing csv: {e}"));
    wtr.write_record([
        "variant",
        "seed",
        "fuel_g",
        "travel_time_s",
        "lights_passed_on_green",
        "error",
    ])
    .map_err(io_err)?;
    for row in &comparison.rows {
        wtr.write_record([
            row.variant.to_string(),
            row.seed.to_string(),
            row.fuel_g.map_or(String::new(), |v| v.to_string()),
            row.travel_time_s.map_or(String::new(), |v| v.to_string()),
            row.lights_passed_on_green
                .map_or(String::new(), |v| v.to_string()),
            row.error.clone().unwrap_or_default(),
        ])
        .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn emit_comparison(
    comparison: &Comparison,
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Json => write_comparison_json(comparison, &mut buf)?,
        ReportFormat::Csv => write_comparison_csv(comparison, &mut buf)?,
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::rollout_long_term;
    use crate::ocp::test_fixtures::{flat_route, unit_plant};
    use crate::route::{Intersection, SpatSchedule};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Small grids that keep in-test closed loops fast.
    fn quick_solver() -> SolverConfig {
        SolverConfig {
            fuel_weight: 0.5,
            horizon_steps: 8,
            soc_step: 0.05,
            soc_window: 0.1,
            t_step_s: 1.0,
            v_min_feasible_ms: 2.0,
            engine_torque_points: 7,
            bsg_torque_points: 3,
            ..SolverConfig::default()
        }
    }

    fn free_config(solver: SolverConfig) -> ScenarioConfig {
        ScenarioConfig {
            route_file: PathBuf::from("route.json"),
            plant_file: PathBuf::from("plant.json"),
            model_file: None,
            predictor: None,
            target: TargetSource::None,
            departure_time_s: 3.0,
            initial_speed_ms: 0.0,
            initial_soc: 0.5,
            soc_target: None,
            gap: GapConfig::default(),
            solver,
            dsrc_range_m: 300.0,
            history_window_s: 10.0,
            prediction_horizon_s: 20.0,
            replan_stride: 1,
            max_wait_s: 120.0,
        }
    }

    fn free_scenario(route: RouteSpec, solver: SolverConfig) -> Scenario {
        Scenario {
            route,
            plant: unit_plant(),
            model: None,
            target: None,
            config: free_config(solver),
        }
    }

    #[test]
    fn empty_road_run_matches_long_term_rollout() {
        // On a free road the receding stage's tables reproduce the long-term
        // layers exactly (same kernel, same axes once the charge window spans
        // the battery box), so the closed loop must retrace the long-term
        // greedy rollout step for step.
        let solver = SolverConfig {
            soc_window: 10.0,
            ..quick_solver()
        };
        let scenario = free_scenario(flat_route(200.0, 20.0), solver.clone());
        let report = run(&scenario).unwrap();
        assert!(report.completed);
        assert!(report.violations.is_empty());

        let (v_axis, soc_axis) = solver.long_term_axes(&scenario.route, &scenario.plant);
        let table = solve_long_term(
            &scenario.route,
            &scenario.plant,
            &solver,
            &v_axis,
            &soc_axis,
            0.5,
        )
        .unwrap();
        let start = VehicleState {
            v_ms: 0.0,
            soc: 0.5,
            t_s: 3.0,
        };
        let rollout =
            rollout_long_term(&scenario.route, &scenario.plant, &solver, &table, start).unwrap();
        assert_abs_diff_eq!(report.fuel_consumed_g, rollout.fuel_g, epsilon = 1e-9);
        assert_abs_diff_eq!(report.travel_time_s, rollout.travel_time_s, epsilon = 1e-9);
        assert_abs_diff_eq!(report.distance_m, 200.0);
    }

    #[test]
    fn parked_target_forces_a_safe_stop() {
        // A target parked 60 m ahead forever: the ego must approach, brake,
        // hold, and eventually give up without ever violating the gap.
        let solver = SolverConfig {
            t_step_s: 1.0,
            ..quick_solver()
        };
        let mut config = free_config(solver);
        config.departure_time_s = 0.0;
        config.max_wait_s = 6.0;
        let target =
            TargetTrajectory::from_velocities(0.0, SAMPLE_PERIOD_S, &[0.0, 0.0], 60.0).unwrap();
        let scenario = Scenario {
            route: flat_route(150.0, 20.0),
            plant: unit_plant(),
            model: None,
            target: Some(target),
            config,
        };
        let report = run(&scenario).unwrap();
        assert!(!report.completed);
        assert!(report.stopped_reason.unwrap().contains("held"));
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        let last = report.trace.last().unwrap();
        assert_abs_diff_eq!(last.v_ms, 0.0);
        assert!(last.position_m < 60.0);
        // never closer than the standstill gap; d0 = 2 m here
        for row in &report.trace {
            assert!(row.gap_m.unwrap() >= 2.0 - 1e-9);
        }
        assert!(report.wait_time_s >= 6.0 - 1e-9);
    }

    #[test]
    fn crossing_bookkeeping_and_determinism() {
        let mut route = flat_route(100.0, 20.0);
        route.intersections.push(Intersection {
            position_m: 50.0,
            spat: SpatSchedule {
                cycle_time_s: 10.0,
                green_start_s: 0.0,
                green_end_s: 10.0,
                offset_s: 0.0,
            },
        });
        let scenario = free_scenario(route, quick_solver());
        let report = run(&scenario).unwrap();
        assert!(report.completed);
        assert_eq!(report.lights_total, 1);
        assert_eq!(report.lights_passed_on_green, 1);
        let crossing_row = report
            .trace
            .iter()
            .find(|r| r.crossing.is_some())
            .expect("one crossing logged");
        assert_abs_diff_eq!(crossing_row.position_m, 50.0);
        let note = crossing_row.crossing.unwrap();
        assert!(note.green);
        assert!((0.0..10.0).contains(&note.phase_s));

        let again = run(&scenario).unwrap();
        let a = serde_json::to_string(&report).unwrap();
        let b = serde_json::to_string(&again).unwrap();
        assert_eq!(a, b, "closed loop must be deterministic");
    }

    #[test]
    fn generated_target_run_keeps_the_books_straight() {
        let solver = quick_solver();
        let mut config = free_config(solver);
        config.departure_time_s = 8.0;
        config.target = TargetSource::Generate {
            seed: 42,
            departure_time_s: 0.0,
            duration_s: 60.0,
            initial_position_m: 0.0,
            driver: DriverParams::default(),
        };
        let route = flat_route(300.0, 20.0);
        let target = match &config.target {
            TargetSource::Generate {
                seed,
                departure_time_s,
                duration_s,
                initial_position_m,
                driver,
            } => gen_target_trajectory(
                &route,
                driver,
                *departure_time_s,
                *duration_s,
                *initial_position_m,
                *seed,
            )
            .unwrap(),
            _ => unreachable!(),
        };
        let scenario = Scenario {
            route,
            plant: unit_plant(),
            model: None,
            target: Some(target),
            config,
        };
        let report = run(&scenario).unwrap();
        assert!(report.completed);
        assert!(report.violations.is_empty(), "{:?}", report.violations);

        // bookkeeping: totals re-derive from the trace
        let fuel: f64 = report
            .trace
            .iter()
            .map(|r| r.fuel_rate_g_s * r.dt_s)
            .sum();
        let time: f64 = report.trace.iter().map(|r| r.dt_s).sum();
        assert_abs_diff_eq!(report.fuel_consumed_g, fuel, epsilon = 1e-6);
        assert_abs_diff_eq!(report.travel_time_s, time, epsilon = 1e-6);

        // logged gaps inside radar range never dip below the safe distance
        for row in &report.trace {
            let (gap, vt) = (row.gap_m.unwrap(), row.v_target_ms.unwrap());
            assert!(gap > 0.0);
            if gap <= scenario.config.gap.radar_range_m {
                let d_safe = safe_distance(&scenario.config.gap, row.v_ms, row.v_ms - vt);
                assert!(
                    gap >= d_safe - 1e-9,
                    "gap {gap:.2} < safe {d_safe:.2} at step {}",
                    row.step
                );
            }
        }
        // positions are non-decreasing and end at the route end
        for pair in report.trace.windows(2) {
            assert!(pair[1].position_m >= pair[0].position_m);
        }
        assert_abs_diff_eq!(report.distance_m, 300.0);
    }

    #[test]
    fn gru_predictor_runs_the_loop() {
        // An untrained model still exercises the full feature-history path
        // deterministically; its clamped forecasts must not break safety.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bounds = crate::predictor::FeatureBounds {
            v_ms: (0.0, 20.0),
            a_ms2: (-3.0, 3.0),
            d_tl_m: (0.0, 500.0),
        };
        let model = GruEdModel::init(4, 10, 5, SAMPLE_PERIOD_S, bounds, &mut rng);
        let mut config = free_config(quick_solver());
        config.departure_time_s = 10.0;
        config.target = TargetSource::Generate {
            seed: 9,
            departure_time_s: 0.0,
            duration_s: 60.0,
            initial_position_m: 0.0,
            driver: DriverParams::default(),
        };
        let route = flat_route(200.0, 20.0);
        let target = gen_target_trajectory(&route, &DriverParams::default(), 0.0, 60.0, 0.0, 9)
            .unwrap();
        let scenario = Scenario {
            route,
            plant: unit_plant(),
            model: Some(model),
            target: Some(target),
            config,
        };
        let report = run(&scenario).unwrap();
        assert!(report.completed);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        let again = run(&scenario).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn feature_history_uses_the_ego_side_estimate() {
        let mut route = flat_route(300.0, 20.0);
        route.intersections.push(Intersection {
            position_m: 150.0,
            spat: SpatSchedule {
                cycle_time_s: 10.0,
                green_start_s: 0.0,
                green_end_s: 5.0,
                offset_s: 0.0,
            },
        });
        // target parked at 120 m, ego parked at 100 m
        let traj =
            TargetTrajectory::from_velocities(0.0, 1.0, &[0.0, 0.0], 120.0).unwrap();
        let track = vec![(0.0, 100.0)];
        let history = feature_history(&route, &traj, &track, 300.0, 3, 1.0, 10.0);
        assert_eq!(history.len(), 3);
        for f in &history {
            assert_abs_diff_eq!(f.v_ms, 0.0);
            // ego distance to light 50, gap 20: estimated target distance 30
            assert_abs_diff_eq!(f.d_tl_m, 30.0);
        }
        // beyond broadcast range the feature saturates at the sentinel
        let far = feature_history(&route, &traj, &[(0.0, -200.0)], 300.0, 1, 1.0, 10.0);
        assert_abs_diff_eq!(far[0].d_tl_m, 500.0);
    }

    #[test]
    fn track_position_interpolates_and_clamps() {
        let track = vec![(0.0, 0.0), (2.0, 10.0), (4.0, 30.0)];
        assert_abs_diff_eq!(track_position(&track, -1.0), 0.0);
        assert_abs_diff_eq!(track_position(&track, 1.0), 5.0);
        assert_abs_diff_eq!(track_position(&track, 3.0), 20.0);
        assert_abs_diff_eq!(track_position(&track, 9.0), 30.0);
    }

    fn dummy_report() -> ScenarioReport {
        ScenarioReport {
            fuel_consumed_g: 12.5,
            travel_time_s: 30.0,
            distance_m: 100.0,
            final_soc: 0.5,
            completed: true,
            stopped_reason: None,
            lights_passed_on_green: 1,
            lights_total: 1,
            violations: vec![],
            replans: 10,
            wait_time_s: 0.0,
            trace: vec![
                TraceRow {
                    step: 0,
                    position_m: 0.0,
                    t_s: 0.0,
                    v_ms: 0.0,
                    soc: 0.5,
                    t_eng_nm: 0.0,
                    t_bsg_nm: 0.0,
                    fuel_rate_g_s: 0.0,
                    dt_s: 0.0,
                    v_target_ms: None,
                    gap_m: None,
                    crossing: None,
                },
                TraceRow {
                    step: 1,
                    position_m: 10.0,
                    t_s: 2.5,
                    v_ms: 8.0,
                    soc: 0.499,
                    t_eng_nm: 120.0,
                    t_bsg_nm: -20.0,
                    fuel_rate_g_s: 0.35,
                    dt_s: 2.5,
                    v_target_ms: Some(7.25),
                    gap_m: Some(42.125),
                    crossing: Some(CrossingNote {
                        intersection: 0,
                        green: true,
                        phase_s: 12.75,
                    }),
                },
            ],
        }
    }

    #[test]
    fn report_json_has_the_summary_keys() {
        let mut buf = Vec::new();
        write_report_json(&dummy_report(), &mut buf).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert!(value.get("fuel_consumed_g").is_some());
        assert!(value.get("travel_time_s").is_some());
        assert_eq!(value["trace"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn report_csv_round_trips_exactly() {
        let report = dummy_report();
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        let parse = |record: &csv::StringRecord, i: usize| -> f64 {
            record.get(i).unwrap().parse().unwrap()
        };
        // shortest round-trip float output reparses bit for bit
        assert_eq!(parse(&rows[1], 1), 10.0);
        assert_eq!(parse(&rows[1], 7), 0.35);
        assert_eq!(parse(&rows[1], 10), 42.125);
        assert_eq!(rows[1].get(12).unwrap(), "true");
        assert_eq!(parse(&rows[1], 13), 12.75);
        // optional cells on the departure row are empty
        assert_eq!(rows[0].get(9).unwrap(), "");
        assert_eq!(rows[0].get(11).unwrap(), "");
    }

    #[test]
    fn empty_trace_emits_a_header_only_csv() {
        let mut report = dummy_report();
        report.trace.clear();
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("step,position_m,"));
    }

    /// Writes the unit plant and a flat route as JSON files so the file-based
    /// entry points can run against the in-crate fixtures.
    fn fixture_files(dir: &Path) -> (PathBuf, PathBuf) {
        let route_path = dir.join("route.json");
        let plant_path = dir.join("plant.json");
        fs::write(
            &route_path,
            serde_json::to_string_pretty(&flat_route(150.0, 20.0)).unwrap(),
        )
        .unwrap();
        fs::write(
            &plant_path,
            serde_json::to_string_pretty(&unit_plant()).unwrap(),
        )
        .unwrap();
        (route_path, plant_path)
    }

    #[test]
    fn load_scenario_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fixture_files(dir.path());
        let config_path = dir.path().join("scenario.json");
        fs::write(
            &config_path,
            r#"{
                "route_file": "route.json",
                "plant_file": "plant.json",
                "initial_soc": 0.5,
                "solver": { "horizon_steps": 6, "soc_step": 0.05 }
            }"#,
        )
        .unwrap();
        let config = load_scenario(&config_path).unwrap();
        assert!(config.route_file.is_absolute());
        assert_eq!(config.solver.horizon_steps, 6);
        assert_eq!(config.replan_stride, 1);
        let report = simulate(&config).unwrap();
        assert!(report.completed);
    }

    #[test]
    fn load_scenario_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("scenario.json");
        fs::write(
            &config_path,
            r#"{ "route_file": "r.json", "plant_file": "p.json", "horizon": 3 }"#,
        )
        .unwrap();
        let err = load_scenario(&config_path).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
    }

    #[test]
    fn mismatched_history_window_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (route_file, plant_file) = fixture_files(dir.path());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bounds = crate::predictor::FeatureBounds {
            v_ms: (0.0, 20.0),
            a_ms2: (-3.0, 3.0),
            d_tl_m: (0.0, 500.0),
        };
        let model = GruEdModel::init(3, 10, 5, 1.0, bounds, &mut rng);
        let model_path = dir.path().join("model.json");
        crate::predictor::save_model(&model, &model_path).unwrap();

        let mut config = free_config(quick_solver());
        config.route_file = route_file;
        config.plant_file = plant_file;
        config.model_file = Some(model_path);
        config.history_window_s = 7.0; // model was trained on 10 s
        let err = simulate(&config).unwrap_err();
        assert!(
            matches!(&err, Error::Validation { field, .. } if field == "history_window_s"),
            "{err}"
        );
    }

    #[test]
    fn compare_single_run_equals_simulate() {
        let dir = tempfile::tempdir().unwrap();
        let (route_file, plant_file) = fixture_files(dir.path());
        let mut config = free_config(quick_solver());
        config.route_file = route_file;
        config.plant_file = plant_file;
        config.departure_time_s = 8.0;
        config.target = TargetSource::Generate {
            seed: 1,
            departure_time_s: 0.0,
            duration_s: 40.0,
            initial_position_m: 0.0,
            driver: DriverParams::default(),
        };

        let comparison = compare(&config, &[5], &[PredictorKind::Constant]).unwrap();
        assert_eq!(comparison.rows.len(), 1);
        assert_eq!(comparison.summaries.len(), 1);

        let mut direct_config = config.clone();
        direct_config.predictor = Some(PredictorKind::Constant);
        if let TargetSource::Generate { seed, .. } = &mut direct_config.target {
            *seed = 5;
        }
        let direct = simulate(&direct_config).unwrap();
        let row = &comparison.rows[0];
        assert_eq!(row.error, None);
        assert_eq!(row.fuel_g.unwrap(), direct.fuel_consumed_g);
        assert_eq!(row.travel_time_s.unwrap(), direct.travel_time_s);
        let summary = &comparison.summaries[0];
        assert_eq!(summary.mean_fuel_g.unwrap(), direct.fuel_consumed_g);
        assert_abs_diff_eq!(summary.fuel_delta_pct.unwrap(), 0.0);

        // identical variants twice produce identical rows
        let twice = compare(
            &config,
            &[5],
            &[PredictorKind::Constant, PredictorKind::Constant],
        )
        .unwrap();
        assert_eq!(twice.rows[0].fuel_g, twice.rows[1].fuel_g);
        assert_eq!(twice.rows[0].travel_time_s, twice.rows[1].travel_time_s);
    }

    #[test]
    fn compare_marks_failed_variants() {
        let dir = tempfile::tempdir().unwrap();
        let (route_file, plant_file) = fixture_files(dir.path());
        let mut config = free_config(quick_solver());
        config.route_file = route_file;
        config.plant_file = plant_file;
        // gru without a model file: every run of that variant fails
        let comparison = compare(
            &config,
            &[1, 2],
            &[PredictorKind::Constant, PredictorKind::Gru],
        )
        .unwrap();
        assert_eq!(comparison.rows.len(), 4);
        for row in &comparison.rows {
            match row.variant {
                PredictorKind::Constant => assert!(row.error.is_none()),
                PredictorKind::Gru => assert!(row.error.is_some()),
            }
        }
        let gru = &comparison.summaries[1];
        assert_eq!(gru.completed_runs, 0);
        assert_eq!(gru.failed_runs, 2);
        assert_eq!(gru.mean_fuel_g, None);
        assert_eq!(gru.fuel_delta_pct, None);

        let mut buf = Vec::new();
        write_comparison_csv(&comparison, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("model"));
    }
}
