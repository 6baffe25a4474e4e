//! Head-to-head closed-loop comparison: the same scenario driven once with
//! the constant-velocity predictor and once with the GRU, over a couple of
//! target seeds.
//!
//! Run with `cargo run --example compare_predictors`.

use ecodrive::data_file;
use ecodrive::sim::{compare, load_scenario, PredictorKind};

fn main() -> ecodrive::Result<()> {
    let mut config = load_scenario(&data_file("scenario_smoke.json"))?;
    // the smoke scenario ships without a model; attach the trained one
    config.model_file = Some(data_file("model_gru.json"));

    let comparison = compare(
        &config,
        &[7, 8],
        &[PredictorKind::Constant, PredictorKind::Gru],
    )?;

    println!("variant   seed  fuel[g]  time[s]  greens");
    for row in &comparison.rows {
        match &row.error {
            None => println!(
                "{:<9} {:>4}  {:>7.2}  {:>7.1}  {:>6}",
                row.variant.to_string(),
                row.seed,
                row.fuel_g.unwrap(),
                row.travel_time_s.unwrap(),
                row.lights_passed_on_green.unwrap()
            ),
            Some(e) => println!("{:<9} {:>4}  failed: {e}", row.variant.to_string(), row.seed),
        }
    }
    println!();
    for s in &comparison.summaries {
        println!(
            "{}: mean fuel {:.2} g ({:+.2}%), mean time {:.1} s ({:+.2}%)",
            s.variant,
            s.mean_fuel_g.unwrap_or(f64::NAN),
            s.fuel_delta_pct.unwrap_or(f64::NAN),
            s.mean_travel_time_s.unwrap_or(f64::NAN),
            s.travel_time_delta_pct.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
