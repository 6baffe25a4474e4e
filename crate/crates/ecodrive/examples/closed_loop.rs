//! Run one closed-loop scenario: IDM target ahead, GRU forecasts feeding the
//! receding-horizon solver, true plant applying the planned torques.
//!
//! Run with `cargo run --example closed_loop` for the quick one-light
//! scenario, or pass a scenario file:
//! `cargo run --example closed_loop -- crates/ecodrive/data/scenario_01.json`

use std::path::PathBuf;

use ecodrive::data_file;
use ecodrive::sim::{load_scenario, simulate};

fn main() -> ecodrive::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| data_file("scenario_smoke.json"));
    let config = load_scenario(&path)?;
    println!("running {}", path.display());

    let report = simulate(&config)?;
    println!(
        "fuel {:.1} g over {:.0} m in {:.1} s, final soc {:.4}",
        report.fuel_consumed_g, report.distance_m, report.travel_time_s, report.final_soc
    );
    println!(
        "{} of {} lights crossed on green, {} replans, {:.0} s held, {} violations, completed: {}",
        report.lights_passed_on_green,
        report.lights_total,
        report.replans,
        report.wait_time_s,
        report.violations.len(),
        report.completed
    );

    println!("  pos[m]  t[s]  v[m/s]  gap[m]  crossing");
    for row in report.trace.iter().step_by(10) {
        let gap = row
            .gap_m
            .map_or("     -".into(), |g| format!("{g:>6.1}"));
        let note = row
            .crossing
            .map_or(String::new(), |c| format!("light {} green={}", c.intersection, c.green));
        println!(
            "  {:>6.0}  {:>5.1}  {:>6.2}  {gap}  {note}",
            row.position_m, row.t_s, row.v_ms
        );
    }
    Ok(())
}
