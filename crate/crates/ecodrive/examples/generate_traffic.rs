//! Generate a target-vehicle trajectory with the intelligent-driver model
//! and show how it reacts to the route: speed limits, a signalized
//! intersection and the seeded desired-speed variation.
//!
//! Run with `cargo run --example generate_traffic`.

use ecodrive::data_file;
use ecodrive::route::load_route;
use ecodrive::traffic::{gen_target_trajectory, DriverParams};

fn main() -> ecodrive::Result<()> {
    let route = load_route(&data_file("route_short.json"))?;
    let driver = DriverParams::default();

    for seed in [1_u64, 2] {
        let traj = gen_target_trajectory(&route, &driver, 0.0, 120.0, 0.0, seed)?;
        let v_max = traj
            .samples
            .iter()
            .map(|s| s.v_ms)
            .fold(f64::NEG_INFINITY, f64::max);
        let stopped = traj.samples.iter().filter(|s| s.v_ms < 0.1).count();
        println!(
            "seed {seed}: {} samples, reaches {:.1} m, top speed {:.1} m/s, {} s near standstill",
            traj.samples.len(),
            traj.samples.last().unwrap().position_m,
            v_max,
            stopped
        );
        println!("  t[s]  v[m/s]  pos[m]");
        for s in traj.samples.iter().step_by(10) {
            println!("  {:>4.0}  {:>6.2}  {:>7.1}", s.t_s, s.v_ms, s.position_m);
        }
    }
    Ok(())
}
