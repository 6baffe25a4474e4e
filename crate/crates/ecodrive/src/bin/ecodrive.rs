//! Command-line front end for the ecodrive library.
//!
//! Every subcommand reads one JSON config, writes one artifact (a file with
//! `--out`, stdout otherwise) and exits with:
//!
//! * 0: success,
//! * 2: configuration problem (bad file, bad schema, failed validation),
//! * 3: infeasible solve, including a closed loop parked by the supervisory
//!   hold until its wait budget ran out,
//! * 4: safety violation (collision, red-light crossing, or a completed run
//!   whose log shows the gap dipping below the safe distance).
//!
//! All output is deterministic for fixed inputs; diagnostics go to stderr
//! (enable with `RUST_LOG=debug`).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ecodrive::ocp::{rollout_long_term, solve_long_term, LongTermRollout};
use ecodrive::plant::VehicleState;
use ecodrive::predictor::{
    load_model, make_windows, save_model, train, validation_rmse_ms, Hyperparams, WindowPair,
};
use ecodrive::route::load_route;
use ecodrive::sim::{
    compare, emit_comparison, emit_report, load_scenario, prepare, run, write_comparison_json,
    write_report_csv, write_report_json, PredictorKind, ReportFormat, ScenarioReport,
    TargetSource,
};
use ecodrive::traffic::{
    gen_target_trajectory, load_trajectory_csv, write_trajectory_csv, SAMPLE_PERIOD_S,
};
use ecodrive::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ecodrive",
    version,
    about = "Eco-driving laboratory: traffic generation, predictor training and closed-loop simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    Gru,
    Constant,
}

impl From<PredictorArg> for PredictorKind {
    fn from(p: PredictorArg) -> Self {
        match p {
            PredictorArg::Gru => PredictorKind::Gru,
            PredictorArg::Constant => PredictorKind::Constant,
        }
    }
}

#[derive(Args)]
struct GenTrafficArgs {
    /// Scenario config whose `target` block describes the traffic to generate.
    #[arg(long)]
    config: PathBuf,
    /// Override the generator seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv: `t,v,a,pos` rows; json: the sampled trajectory object.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (route, trajectory sources, window shape, hyperparameters).
    #[arg(long)]
    config: PathBuf,
    /// Override the manifest's training seed (init, shuffling, split).
    #[arg(long)]
    seed: Option<u64>,
    /// Where to save the trained model (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Training manifest naming the evaluation trajectories and the model.
    #[arg(long)]
    config: PathBuf,
    /// Predictor to score over the manifest's windows.
    #[arg(long, value_enum, default_value_t = PredictorArg::Gru)]
    predictor: PredictorArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct SolveLongTermArgs {
    /// Scenario config (the target block is ignored by this stage).
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv: the full value table; json: axes plus the greedy rollout.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config.
    #[arg(long)]
    config: PathBuf,
    /// Override the generated target's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's predictor choice.
    #[arg(long, value_enum)]
    predictor: Option<PredictorArg>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario config used as the base for every run.
    #[arg(long)]
    config: PathBuf,
    /// Seeds for the generated target, one run per seed and predictor.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a target-vehicle trajectory from a scenario's traffic block.
    GenTraffic(GenTrafficArgs),
    /// Train the GRU velocity predictor from a training manifest.
    Train(TrainArgs),
    /// Score a predictor's velocity RMSE over a manifest's windows.
    EvalPredictor(EvalArgs),
    /// Solve the full-route value table and roll out its greedy policy.
    SolveLongTerm(SolveLongTermArgs),
    /// Run one closed-loop scenario and write the trace report.
    Simulate(SimulateArgs),
    /// Run both predictors over a seed list and tabulate fuel and time.
    Compare(CompareArgs),
}

/// Window-cutting and training recipe shared by `train` and `eval-predictor`.
///
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainManifest {
    route_file: PathBuf,
    /// Sources the sliding windows are cut from; `generate` or `csv` entries.
    trajectories: Vec<TargetSource>,
    /// Signal broadcast range for the distance-to-light feature, m.
    #[serde(default = "default_dsrc_range_m")]
    dsrc_range_m: f64,
    /// Feature-history samples per window.
    history_len: usize,
    /// Predicted velocity samples per window.
    horizon_len: usize,
    #[serde(default)]
    hyperparams: Hyperparams,
    /// Training seed (weight init, shuffling, train/validation split).
    #[serde(default = "default_train_seed")]
    seed: u64,
    /// Model scored by `eval-predictor`; ignored by `train`.
    #[serde(default)]
    model_file: Option<PathBuf>,
}

fn default_dsrc_range_m() -> f64 {
    300.0
}
fn default_train_seed() -> u64 {
    1
}

impl TrainManifest {
    fn resolve_paths(&mut self, base_dir: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut self.route_file);
        if let Some(m) = &mut self.model_file {
            resolve(m);
        }
        for t in &mut self.trajectories {
            if let TargetSource::Csv { path } = t {
                resolve(path);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::validation(
                "trajectories",
                "the manifest needs at least one trajectory source",
            ));
        }
        if self
            .trajectories
            .iter()
            .any(|t| matches!(t, TargetSource::None))
        {
            return Err(Error::validation(
                "trajectories",
                "every entry must generate or load a trajectory",
            ));
        }
        if self.history_len == 0 || self.horizon_len == 0 {
            return Err(Error::validation(
                "history_len",
                "window lengths must be positive",
            ));
        }
        // negated so a NaN range fails too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.dsrc_range_m > 0.0) {
            return Err(Error::validation("dsrc_range_m", "must be positive"));
        }
        self.hyperparams.validate()
    }
}

fn load_manifest(path: &Path) -> Result<TrainManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: TrainManifest =
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    if let Some(dir) = path.parent() {
        manifest.resolve_paths(dir);
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Cuts the manifest's windows: every trajectory is generated or loaded, then
/// sliced against the route's signal positions.
fn manifest_windows(manifest: &TrainManifest) -> Result<Vec<WindowPair>> {
    let route = load_route(&manifest.route_file)?;
    let lights: Vec<f64> = route.intersections.iter().map(|x| x.position_m).collect();
    let mut windows = Vec::new();
    for source in &manifest.trajectories {
        let traj = match source {
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
            )?,
            TargetSource::Csv { path } => load_trajectory_csv(path)?,
            TargetSource::None => unreachable!("rejected by validate"),
        };
        windows.extend(make_windows(
            &traj,
            &lights,
            manifest.dsrc_range_m,
            manifest.history_len,
            manifest.horizon_len,
        ));
    }
    if windows.is_empty() {
        return Err(Error::validation(
            "trajectories",
            "the sources are too short to cut a single window",
        ));
    }
    Ok(windows)
}

/// Writes `body` to `out`, or to stdout when no path was given.
fn emit_bytes(out: Option<&Path>, body: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| Error::io(path, e)),
        None => io::stdout()
            .write_all(body)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_gen_traffic(args: &GenTrafficArgs) -> Result<i32> {
    let config = load_scenario(&args.config)?;
    let route = load_route(&config.route_file)?;
    let traj = match &config.target {
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
            args.seed.unwrap_or(*seed),
        )?,
        _ => {
            return Err(Error::validation(
                "target",
                "gen-traffic needs a scenario whose target block is 'generate'",
            ))
        }
    };
    let mut buf = Vec::new();
    match args.format {
        FormatArg::Csv => write_trajectory_csv(&traj, &mut buf)?,
        FormatArg::Json => {
            serde_json::to_writer_pretty(&mut buf, &traj)
                .map_err(|e| Error::validation("trajectory", format!("serializing: {e}")))?;
            buf.push(b'\n');
        }
    }
    emit_bytes(args.out.as_deref(), &buf)?;
    log::info!(
        "generated {} samples over {:.0} s",
        traj.samples.len(),
        traj.end_time_s() - traj.start_time_s()
    );
    Ok(0)
}

/// Summary written by `train` alongside the saved model.
#[derive(Serialize)]
struct TrainSummary {
    model_file: String,
    windows: usize,
    train_windows: usize,
    val_windows: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_rmse_ms: f64,
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let manifest = load_manifest(&args.config)?;
    let windows = manifest_windows(&manifest)?;
    let seed = args.seed.unwrap_or(manifest.seed);
    let (model, log) = train(&windows, SAMPLE_PERIOD_S, &manifest.hyperparams, seed)?;
    save_model(&model, &args.out)?;
    let summary = TrainSummary {
        model_file: args.out.display().to_string(),
        windows: windows.len(),
        train_windows: log.train_windows,
        val_windows: log.val_windows,
        epochs_run: log.epochs_run,
        best_epoch: log.best_epoch,
        best_val_rmse_ms: log.best_val_rmse_ms,
    };
    let mut buf = serde_json::to_vec_pretty(&summary)
        .map_err(|e| Error::validation("summary", format!("serializing: {e}")))?;
    buf.push(b'\n');
    io::stdout()
        .write_all(&buf)
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(0)
}

#[derive(Serialize)]
struct EvalSummary {
    predictor: PredictorKind,
    windows: usize,
    rmse_ms: f64,
}

/// Pooled RMSE of the hold-current-velocity baseline over whole windows,
/// mirroring how the model is scored.
fn constant_baseline_rmse(windows: &[WindowPair]) -> f64 {
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for w in windows {
        let held = w.history.last().expect("non-empty history").v_ms.max(0.0);
        for actual in &w.future_v_ms {
            sum_sq += (held - actual) * (held - actual);
            count += 1;
        }
    }
    (sum_sq / count as f64).sqrt()
}

fn cmd_eval_predictor(args: &EvalArgs) -> Result<i32> {
    let manifest = load_manifest(&args.config)?;
    let windows = manifest_windows(&manifest)?;
    let rmse_ms = match args.predictor {
        PredictorArg::Gru => {
            let Some(model_file) = &manifest.model_file else {
                return Err(Error::validation(
                    "model_file",
                    "eval-predictor gru needs model_file in the manifest",
                ));
            };
            let model = load_model(model_file)?;
            if model.history_len != manifest.history_len
                || model.horizon_len != manifest.horizon_len
            {
                return Err(Error::validation(
                    "model_file",
                    format!(
                        "model windows {}x{} do not match the manifest's {}x{}",
                        model.history_len,
                        model.horizon_len,
                        manifest.history_len,
                        manifest.horizon_len
                    ),
                ));
            }
            validation_rmse_ms(&model, &windows)
        }
        PredictorArg::Constant => constant_baseline_rmse(&windows),
    };
    let summary = EvalSummary {
        predictor: args.predictor.into(),
        windows: windows.len(),
        rmse_ms,
    };
    let mut buf = Vec::new();
    match args.format {
        FormatArg::Json => {
            serde_json::to_writer_pretty(&mut buf, &summary)
                .map_err(|e| Error::validation("summary", format!("serializing: {e}")))?;
            buf.push(b'\n');
        }
        FormatArg::Csv => {
            buf.extend_from_slice(b"predictor,windows,rmse_ms\n");
            buf.extend_from_slice(
                format!("{},{},{}\n", summary.predictor, summary.windows, summary.rmse_ms)
                    .as_bytes(),
            );
        }
    }
    emit_bytes(args.out.as_deref(), &buf)?;
    Ok(0)
}

#[derive(Serialize)]
struct LongTermOutput<'a> {
    distance_step_m: f64,
    num_positions: usize,
    soc_target: f64,
    fuel_weight: f64,
    v_axis: &'a [f64],
    soc_axis: &'a [f64],
    rollout: &'a LongTermRollout,
}

fn cmd_solve_long_term(args: &SolveLongTermArgs) -> Result<i32> {
    let config = load_scenario(&args.config)?;
    let route = load_route(&config.route_file)?;
    let plant = ecodrive::plant::load_plant(&config.plant_file)?;
    let soc_target = config.soc_target.unwrap_or(config.initial_soc);
    let (v_axis, soc_axis) = config.solver.long_term_axes(&route, &plant);
    let table = solve_long_term(&route, &plant, &config.solver, &v_axis, &soc_axis, soc_target)?;
    let mut buf = Vec::new();
    match args.format {
        FormatArg::Csv => table.write_csv(&mut buf)?,
        FormatArg::Json => {
            let start = VehicleState {
                v_ms: config.initial_speed_ms,
                soc: config.initial_soc,
                t_s: config.departure_time_s,
            };
            let rollout = rollout_long_term(&route, &plant, &config.solver, &table, start)?;
            let output = LongTermOutput {
                distance_step_m: table.distance_step_m,
                num_positions: table.num_positions(),
                soc_target,
                fuel_weight: table.fuel_weight,
                v_axis: &table.v_axis,
                soc_axis: &table.soc_axis,
                rollout: &rollout,
            };
            serde_json::to_writer_pretty(&mut buf, &output)
                .map_err(|e| Error::validation("output", format!("serializing: {e}")))?;
            buf.push(b'\n');
        }
    }
    emit_bytes(args.out.as_deref(), &buf)?;
    Ok(0)
}

/// Exit code a finished run earns: soft gap findings outrank an incomplete
/// run because they are the stronger evidence of trouble.
fn report_exit_code(report: &ScenarioReport) -> i32 {
    if !report.violations.is_empty() {
        4
    } else if !report.completed {
        3
    } else {
        0
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut config = load_scenario(&args.config)?;
    if let Some(p) = args.predictor {
        config.predictor = Some(p.into());
    }
    if let Some(seed) = args.seed {
        if let TargetSource::Generate { seed: s, .. } = &mut config.target {
            *s = seed;
        }
    }
    let scenario = prepare(&config)?;
    let report = run(&scenario)?;
    match &args.out {
        Some(path) => {
            emit_report(&report, args.format.into(), path)?;
            println!(
                "fuel {:.1} g, travel time {:.1} s, {}/{} lights on green, {} violation(s){}",
                report.fuel_consumed_g,
                report.travel_time_s,
                report.lights_passed_on_green,
                report.lights_total,
                report.violations.len(),
                if report.completed { "" } else { " [did not finish]" },
            );
        }
        None => {
            let mut buf = Vec::new();
            match args.format {
                FormatArg::Json => write_report_json(&report, &mut buf)?,
                FormatArg::Csv => write_report_csv(&report, &mut buf)?,
            }
            io::stdout()
                .write_all(&buf)
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(report_exit_code(&report))
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let config = load_scenario(&args.config)?;
    // constant first so the deltas read as the model's improvement over it
    let mut variants = vec![PredictorKind::Constant];
    if config.model_file.is_some() {
        variants.push(PredictorKind::Gru);
    }
    let comparison = compare(&config, &args.seeds, &variants)?;
    match &args.out {
        Some(path) => emit_comparison(&comparison, args.format.into(), path)?,
        None => {
            let mut buf = Vec::new();
            match args.format {
                FormatArg::Json => write_comparison_json(&comparison, &mut buf)?,
                FormatArg::Csv => {
                    ecodrive::sim::write_comparison_csv(&comparison, &mut buf)?;
                }
            }
            io::stdout()
                .write_all(&buf)
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    let errors: Vec<&String> = comparison
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref())
        .collect();
    if errors.is_empty() {
        Ok(0)
    } else if errors.iter().any(|e| e.contains("safety violation")) {
        Ok(4)
    } else {
        Ok(3)
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Schema { .. } | Error::Validation { .. } => 2,
        Error::InfeasibleSolve { .. } => 3,
        Error::SafetyViolation { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenTraffic(args) => cmd_gen_traffic(args),
        Command::Train(args) => cmd_train(args),
        Command::EvalPredictor(args) => cmd_eval_predictor(args),
        Command::SolveLongTerm(args) => cmd_solve_long_term(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
