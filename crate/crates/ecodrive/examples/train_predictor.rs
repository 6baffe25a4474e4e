//! Train a small GRU encoder-decoder from scratch on generated traffic and
//! watch the validation RMSE fall below the hold-current-velocity baseline.
//!
//! Run with `cargo run --example train_predictor` (takes a few seconds).

use ecodrive::data_file;
use ecodrive::predictor::{make_windows, train, validation_rmse_ms, Hyperparams, WindowPair};
use ecodrive::route::load_route;
use ecodrive::traffic::{gen_target_trajectory, DriverParams, SAMPLE_PERIOD_S};

fn baseline_rmse(windows: &[WindowPair]) -> f64 {
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for w in windows {
        let held = w.history.last().unwrap().v_ms;
        for actual in &w.future_v_ms {
            sum_sq += (held - actual) * (held - actual);
            n += 1;
        }
    }
    (sum_sq / n as f64).sqrt()
}

fn main() -> ecodrive::Result<()> {
    let route = load_route(&data_file("route_7km.json"))?;
    let lights: Vec<f64> = route.intersections.iter().map(|x| x.position_m).collect();

    let mut windows = Vec::new();
    for seed in 31..35 {
        let traj = gen_target_trajectory(&route, &DriverParams::default(), 0.0, 400.0, 0.0, seed)?;
        windows.extend(make_windows(&traj, &lights, 300.0, 10, 10));
    }
    println!("cut {} windows (10 s history, 10 s horizon)", windows.len());

    let hp = Hyperparams {
        hidden_dim: 12,
        max_epochs: 30,
        patience: 6,
        batch_size: 64,
        learning_rate: 2e-3,
        ..Hyperparams::default()
    };
    let (model, log) = train(&windows, SAMPLE_PERIOD_S, &hp, 42)?;

    println!(
        "trained {} epochs, best validation RMSE {:.3} m/s at epoch {}",
        log.epochs_run, log.best_val_rmse_ms, log.best_epoch
    );
    println!("epoch  train loss  val RMSE [m/s]");
    for (i, (loss, rmse)) in log.train_loss.iter().zip(&log.val_rmse_ms).enumerate() {
        if i % 5 == 0 || i + 1 == log.epochs_run {
            println!("{i:>5}  {loss:>10.4}  {rmse:>8.3}");
        }
    }
    println!(
        "whole-set RMSE: model {:.3} m/s vs constant-velocity baseline {:.3} m/s",
        validation_rmse_ms(&model, &windows),
        baseline_rmse(&windows)
    );
    Ok(())
}
