//! Load the shipped GRU model and compare its 20 s velocity forecasts against
//! the target's actual motion around a signal stop, next to the
//! constant-velocity baseline.
//!
//! Run with `cargo run --example forecast_target`.

use ecodrive::data_file;
use ecodrive::predictor::{load_model, make_windows, rmse};
use ecodrive::route::load_route;
use ecodrive::traffic::{gen_target_trajectory, DriverParams};

fn main() -> ecodrive::Result<()> {
    let route = load_route(&data_file("route_7km.json"))?;
    let model = load_model(&data_file("model_gru.json"))?;
    let lights: Vec<f64> = route.intersections.iter().map(|x| x.position_m).collect();

    // a held-out seed the shipped model never trained on
    let traj = gen_target_trajectory(&route, &DriverParams::default(), 0.0, 700.0, 0.0, 999)?;
    let windows = make_windows(&traj, &lights, 300.0, model.history_len, model.horizon_len);

    // pick the most dynamic window: largest velocity swing over the horizon
    let spread = |w: &ecodrive::predictor::WindowPair| {
        let hi = w.future_v_ms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lo = w.future_v_ms.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        hi - lo
    };
    let (idx, _) = windows
        .iter()
        .enumerate()
        .max_by(|a, b| spread(a.1).partial_cmp(&spread(b.1)).unwrap())
        .expect("trajectory long enough for windows");
    let w = &windows[idx];
    let now_s = (idx + model.history_len - 1) as f64;

    let forecast = model.predict(&w.history, now_s);
    let held = w.history.last().unwrap().v_ms;

    println!("forecast issued at t = {now_s:.0} s, target currently {held:.2} m/s");
    println!("  +t[s]  actual  gru  constant");
    let mut gru = Vec::new();
    let constant = vec![held; w.future_v_ms.len()];
    for (k, actual) in w.future_v_ms.iter().enumerate() {
        let pred = forecast.velocities_ms[k];
        gru.push(pred);
        println!("  {:>4}  {:>6.2}  {:>5.2}  {:>8.2}", k + 1, actual, pred, held);
    }
    println!(
        "window RMSE: gru {:.3} m/s, constant {:.3} m/s",
        rmse(&gru, &w.future_v_ms),
        rmse(&constant, &w.future_v_ms)
    );
    Ok(())
}
