use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use koopcar::config::ConfigFile;
use koopcar::dataset::collect_dataset;
use koopcar::error::{Error, Result};
use koopcar::eso::{design_gains, EsoGains};
use koopcar::koopman::{
    load_checkpoint, one_step_error_study, save_checkpoint, train, KoopmanModel,
    TrajectoryDataset,
};
use koopcar::runner::{
    compare, compute_metrics, run_closed_loop, write_metrics_csv, write_trace_csv,
    ControllerKind, ControllerSetup, TimingMode,
};

#[derive(Parser)]
#[command(
    name = "koopcar",
    about = "Lifted-space vehicle modelling and predictive trajectory tracking"
)]
struct Cli {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive excitation maneuvers on the plant and export a dataset.
    Collect {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the lifted-space model on a collected dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-step prediction error statistics across basis dimensions.
    Dimstudy {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 5, 10, 15])]
        dims: Vec<usize>,
        /// Optional CSV output of the study table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop run of one controller on a scenario; writes a trace CSV.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        controller: String,
        /// Model checkpoint (required for dkmpc / eso-dkmpc).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Export wall-clock solve times in the CSV (non-reproducible).
        #[arg(long)]
        profile: bool,
    },
    /// Run several controllers on one scenario and tabulate metrics.
    Compare {
        #[arg(long)]
        scenario: String,
        /// Comma-separated controller list, e.g. lmpc,dkmpc,eso-dkmpc.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-controller trace CSVs.
        #[arg(long)]
        traces_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        profile: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match ConfigFile::load(path) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => ConfigFile::default(),
    };
    match dispatch(&cli.command, &config) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: kind={} message={:?}", e.kind(), e.to_string());
    let code = match e.kind() {
        "config" | "invalid_param" | "empty_data" | "shape" => 2u8,
        "io" | "checkpoint" => 3,
        "divergence" => 4,
        _ => 1,
    };
    ExitCode::from(code)
}

fn load_model(path: &Option<PathBuf>, needed_by: &str) -> Result<KoopmanModel> {
    let path = path.as_ref().ok_or_else(|| {
        Error::Checkpoint(format!("{needed_by} requires --model <checkpoint>"))
    })?;
    if !path.exists() {
        return Err(Error::Checkpoint(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?.0)
}

fn resolve_gains(config: &ConfigFile, model: &KoopmanModel) -> Result<EsoGains> {
    match (config.eso.beta1, config.eso.beta2) {
        (Some(b1), Some(b2)) => EsoGains::new(b1, b2, model),
        _ => {
            let (gains, rho) = design_gains(model, config.eso.target_rho)?;
            println!(
                "eso gains: beta1={:.2} beta2={:.2} rho={:.4}",
                gains.beta1(),
                gains.beta2(),
                rho
            );
            Ok(gains)
        }
    }
}

fn dispatch(command: &Command, config: &ConfigFile) -> Result<ExitCode> {
    match command {
        Command::Collect { out, seed } => {
            let params = config.vehicle_params()?;
            let spec = config.excitation_spec();
            let dataset = collect_dataset(&params, &spec, *seed)?;
            dataset.save_json(out)?;
            println!(
                "collected {} sequences ({} train / {} validation) at ts={} s -> {}",
                dataset.sequences.len(),
                dataset.train_sequences().count(),
                dataset.validation_sequences().count(),
                dataset.ts,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { dataset, out } => {
            let ds = TrajectoryDataset::load_json(dataset)?;
            let cfg = config.training_config();
            let (model, history) = train(&ds, &cfg)?;
            save_checkpoint(&model, Some(&cfg), out)?;
            let last = history.train_loss.len() - 1;
            println!(
                "trained p_phi={} for {} epochs: train loss {:.6e}, val loss {:.6e} -> {}",
                cfg.p_phi,
                history.train_loss.len(),
                history.train_loss[last],
                history.val_loss[last],
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Dimstudy { dataset, dims, out } => {
            let ds = TrajectoryDataset::load_json(dataset)?;
            let cfg = config.training_config();
            let rows = one_step_error_study(&ds, dims, &cfg)?;
            println!("dim |        E_x (m/s)        |        E_y (m/s)        |       E_r (rad/s)");
            println!("    |   Max      Avg     RMSE |   Max      Avg     RMSE |   Max      Avg     RMSE");
            let mut csv = String::from(
                "dim,ex_max,ex_avg,ex_rmse,ey_max,ey_avg,ey_rmse,er_max,er_avg,er_rmse\n",
            );
            for r in &rows {
                println!(
                    "{:>3} | {:7.4} {:7.4} {:7.4} | {:7.4} {:7.4} {:7.4} | {:7.4} {:7.4} {:7.4}",
                    r.dim, r.ex.max, r.ex.avg, r.ex.rmse, r.ey.max, r.ey.avg, r.ey.rmse,
                    r.er.max, r.er.avg, r.er.rmse
                );
                csv.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    r.dim, r.ex.max, r.ex.avg, r.ex.rmse, r.ey.max, r.ey.avg, r.ey.rmse,
                    r.er.max, r.er.avg, r.er.rmse
                ));
            }
            if let Some(path) = out {
                std::fs::write(path, csv)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            scenario,
            controller,
            model,
            out,
            seed,
            profile,
        } => {
            let kind = ControllerKind::from_str(controller)?;
            let scenario = config.scenario(scenario)?;
            let vehicle = config.vehicle_params()?;
            let (model_owned, gains_owned) = match kind {
                ControllerKind::Lmpc => (None, None),
                ControllerKind::Dkmpc => (Some(load_model(model, "dkmpc")?), None),
                ControllerKind::EsoDkmpc => {
                    let m = load_model(model, "eso-dkmpc")?;
                    let g = resolve_gains(config, &m)?;
                    (Some(m), Some(g))
                }
            };
            let setup = ControllerSetup {
                kind,
                model: model_owned.as_ref(),
                gains: gains_owned.as_ref(),
                mpc: config.mpc_config(),
                kp_long: config.mpc.kp_long,
                lmpc_mu: config.mpc.lmpc_mu,
            };
            let trace = run_closed_loop(&scenario, &setup, &vehicle, *seed)?;
            let timing = if *profile { TimingMode::Real } else { TimingMode::Zeroed };
            write_trace_csv(&trace, out, timing)?;
            let metrics = compute_metrics(&trace)?;
            println!(
                "{} on {}: eY max/avg/rmse = {:.3}/{:.3}/{:.3} m, dphi rmse = {:.4} rad, mean solve {:.2} ms{}",
                metrics.controller,
                scenario.name,
                metrics.ey_max,
                metrics.ey_avg,
                metrics.ey_rmse,
                metrics.dphi_rmse,
                metrics.solve_ms_avg,
                if trace.diverged { " [DIVERGED]" } else { "" }
            );
            if trace.diverged {
                eprintln!("error: kind=divergence message=\"plant left its state envelope\"");
                return Ok(ExitCode::from(4));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            scenario,
            controllers,
            model,
            out,
            traces_dir,
            seed,
            profile,
        } => {
            if controllers.is_empty() {
                return Err(Error::Config("no controllers given".into()));
            }
            let kinds: Vec<ControllerKind> = controllers
                .iter()
                .map(|c| ControllerKind::from_str(c))
                .collect::<Result<_>>()?;
            let scenario = config.scenario(scenario)?;
            let vehicle = config.vehicle_params()?;
            let needs_model = kinds.iter().any(|k| *k != ControllerKind::Lmpc);
            let model_owned = if needs_model {
                Some(load_model(model, "dkmpc/eso-dkmpc")?)
            } else {
                None
            };
            let gains_owned = if kinds.contains(&ControllerKind::EsoDkmpc) {
                Some(resolve_gains(config, model_owned.as_ref().unwrap())?)
            } else {
                None
            };
            let setups: Vec<ControllerSetup> = kinds
                .iter()
                .map(|&kind| ControllerSetup {
                    kind,
                    model: model_owned.as_ref(),
                    gains: gains_owned.as_ref(),
                    mpc: config.mpc_config(),
                    kp_long: config.mpc.kp_long,
                    lmpc_mu: config.mpc.lmpc_mu,
                })
                .collect();
            let (report, traces) = compare(&scenario, &setups, &vehicle, *seed)?;
            let timing = if *profile { TimingMode::Real } else { TimingMode::Zeroed };
            write_metrics_csv(&report, out, timing)?;
            if let Some(dir) = traces_dir {
                std::fs::create_dir_all(dir)?;
                for trace in &traces {
                    let path = dir.join(format!("{}_{}.csv", scenario.name, trace.controller));
                    write_trace_csv(trace, &path, timing)?;
                }
            }
            println!("controller   eY max/avg/rmse [m]      dphi max/avg/rmse [rad]  solve [ms]");
            for r in &report.rows {
                println!(
                    "{:<11} {:>6.3} {:>6.3} {:>6.3}    {:>7.4} {:>7.4} {:>7.4}   {:>8.2}{}",
                    r.controller, r.ey_max, r.ey_avg, r.ey_rmse, r.dphi_max, r.dphi_avg,
                    r.dphi_rmse, r.solve_ms_avg,
                    if r.diverged { "  [DIVERGED]" } else { "" }
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
