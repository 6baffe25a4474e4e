//! Solve the full-route value table (signals and traffic ignored) and roll
//! its greedy policy forward: the charge-sustaining speed profile the
//! receding horizon later tracks.
//!
//! Run with `cargo run --example long_term_plan`.

use ecodrive::data_file;
use ecodrive::ocp::{rollout_long_term, solve_long_term, SolverConfig};
use ecodrive::plant::{load_plant, VehicleState};
use ecodrive::route::load_route;

fn main() -> ecodrive::Result<()> {
    let route = load_route(&data_file("route_7km.json"))?;
    let plant = load_plant(&data_file("plant_default.json"))?;
    let cfg = SolverConfig::default();

    let soc_target = 0.55;
    let (v_axis, soc_axis) = cfg.long_term_axes(&route, &plant);
    println!(
        "solving {} positions x {} speeds x {} charge levels",
        route.num_steps() + 1,
        v_axis.len(),
        soc_axis.len()
    );
    let table = solve_long_term(&route, &plant, &cfg, &v_axis, &soc_axis, soc_target)?;

    let start = VehicleState {
        v_ms: 0.0,
        soc: soc_target,
        t_s: 0.0,
    };
    let roll = rollout_long_term(&route, &plant, &cfg, &table, start)?;
    println!(
        "rollout: {:.1} g fuel, {:.1} s, final soc {:.4} (target {soc_target})",
        roll.fuel_g, roll.travel_time_s, roll.final_state.soc
    );
    println!("  pos[m]  v[m/s]   soc    t[s]  limit[m/s]");
    for step in roll.steps.iter().step_by(50) {
        println!(
            "  {:>6.0}  {:>6.2}  {:.4}  {:>6.1}  {:>6.1}",
            step.position_m,
            step.v_ms,
            step.soc,
            step.t_s,
            route.speed_limits_at(step.position_m).1
        );
    }
    let last = roll.steps.last().unwrap();
    println!(
        "  {:>6.0}  {:>6.2}  {:.4}  {:>6.1}",
        last.position_m, last.v_ms, last.soc, last.t_s
    );
    Ok(())
}
