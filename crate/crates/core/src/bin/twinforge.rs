use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twinforge::dtconnect::{collect, write_batches, TwinningInterval};
use twinforge::harness::{
    build_network, emit_report, eval_options, make_trial, run_experiment, strategy_input, train_gan, train_models,
    train_s1, train_s2, ExperimentConfig, ExperimentKind, ReportFormat,
};
use twinforge::netsim::{RadioConfig, Simulation};
use twinforge::scenario::{make_scenario, ScenarioKind, ScenarioSpec};
use twinforge::services::{run_strategy, StrategyMode};
use twinforge::whatif::{evaluate_config, EvalOptions, WeightProfile};
use twinforge::Error;

#[derive(Parser)]
#[command(name = "twinforge", version, about = "What-if analysis for digital-twin-managed dense WLANs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its CSV and JSON reports.
    Run {
        /// scaling, strategy or twinning.
        experiment: ExperimentKind,
        #[arg(long)]
        config: PathBuf,
        /// All five sizes and 100 trials per size.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the configured twinning intervals; repeatable.
        #[arg(long = "twinning-interval")]
        twinning_interval: Vec<f64>,
    },
    /// Check an experiment config and print it with defaults filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate a network and write its telemetry batch stream as JSON lines.
    Telemetry {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        size: usize,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long = "twinning-interval", default_value_t = 1.0)]
        twinning_interval: f64,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    #[command(subcommand)]
    Whatif(WhatifCmd),
    #[command(subcommand)]
    Services(ServicesCmd),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Print the timeline of a scenario file.
    Describe { file: PathBuf },
    /// Build a scenario against a freshly observed network and save it.
    Make {
        /// a, b, c1, c2, c3 or d.
        #[arg(long)]
        kind: ScenarioKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum WhatifCmd {
    /// Score one radio configuration against every scenario of a trial.
    Score {
        /// Radio configuration, e.g. {"cst_dbm": -72, "tpc_dbm": 20}.
        #[arg(long)]
        config: PathBuf,
        /// Weight profile with `kpi` and `scenario` groups.
        #[arg(long)]
        weights: PathBuf,
        /// Experiment config supplying network and scenario parameters.
        #[arg(long)]
        experiment: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Also write the report as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ServicesCmd {
    /// Train the carrier-sense classifier and save it as JSON.
    TrainS1 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the transmit-power Q-table and save it as JSON.
    TrainS2 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one strategy mode on one trial and print the chosen configuration.
    Run {
        #[arg(long)]
        mode: StrategyMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match path {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Ok(seed) = std::env::var("TWINFORGE_SEED") {
        cfg.master_seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("TWINFORGE_SEED={seed:?} is not an unsigned integer")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Run {
            experiment,
            config,
            full,
            out,
            twinning_interval,
        } => {
            let mut cfg = load_config(Some(&config))?;
            if full {
                cfg = cfg.full();
            }
            if !twinning_interval.is_empty() {
                cfg.twinning_intervals_s = twinning_interval;
            }
            cfg.validate()?;
            let dir = out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            eprintln!("training models");
            let models = train_models(&cfg)?;
            eprintln!("running {} experiment", experiment.name());
            let report = run_experiment(experiment, &cfg, &models)?;
            if report.incomplete {
                eprintln!("time budget exhausted: report is incomplete");
            }
            for fmt in [ReportFormat::Csv, ReportFormat::Json] {
                for path in emit_report(&report, fmt, &dir)? {
                    println!("{}", path.display());
                }
            }
            for c in &report.checks {
                eprintln!(
                    "{} {}: statistic {:.4}{}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.statistic,
                    c.p_value.map_or(String::new(), |p| format!(", p = {p:.3e}"))
                );
            }
        }
        Cmd::ValidateConfig { config } => {
            let cfg = load_config(Some(&config))?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
        Cmd::Telemetry {
            config,
            size,
            seconds,
            twinning_interval,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let net = build_network(&cfg, size, 1.0, cfg.master_seed)?;
            let interval = TwinningInterval {
                seconds: twinning_interval,
                sample_period: cfg.network.sample_period_s,
            };
            interval.validate()?;
            let mut sim = Simulation::new(&cfg.sim, &net.topology, &net.traffic, cfg.master_seed)?;
            sim.set_radio(RadioConfig::default())?;
            let samples = sim.run_sampled(
                cfg.sim.slots_for_seconds(seconds),
                cfg.sim.slots_for_seconds(cfg.network.sample_period_s),
            );
            let batches = collect(&samples, interval)?;
            write_batches(BufWriter::new(fs::File::create(&out)?), &batches)?;
            println!("{} batches written to {}", batches.len(), out.display());
        }
        Cmd::Scenario(ScenarioCmd::Describe { file }) => {
            let spec = ScenarioSpec::from_json(&read(&file)?)?;
            print!("{}", spec.describe());
        }
        Cmd::Scenario(ScenarioCmd::Make {
            kind,
            config,
            size,
            trial,
            out,
        }) => {
            let cfg = load_config(config.as_deref())?;
            let gan = train_gan(&cfg)?;
            let mut one = cfg.clone();
            one.scenarios = vec![ScenarioKind::A];
            let t = make_trial(&one, &gan, size, trial)?;
            let spec = make_scenario(kind, &t.snapshot, Some(&gan), &cfg.scenario_params, t.seed)?;
            fs::write(&out, spec.to_json()?)?;
            print!("{}", spec.describe());
        }
        Cmd::Whatif(WhatifCmd::Score {
            config,
            weights,
            experiment,
            size,
            trial,
            out,
        }) => {
            let radio: RadioConfig = load_json(&config)?;
            let weights: WeightProfile = load_json(&weights)?;
            weights.validate()?;
            let cfg = load_config(experiment.as_deref())?;
            let gan = train_gan(&cfg)?;
            let t = make_trial(&cfg, &gan, size, trial)?;
            let opts = EvalOptions {
                weights,
                ..eval_options(&cfg)
            };
            let report = evaluate_config(radio, &t.net, &t.scenarios, &opts, t.seed);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let path = dir.join("whatif.csv");
                twinforge::whatif::write_reports_csv(std::slice::from_ref(&report), fs::File::create(&path)?)?;
                eprintln!("{}", path.display());
            }
            println!("{}", report.to_json()?);
            if !report.valid {
                return Err(Error::Invariant(report.error.unwrap_or_else(|| "invalid report".into())));
            }
        }
        Cmd::Services(ServicesCmd::TrainS1 { config, out }) => {
            let cfg = load_config(config.as_deref())?;
            let gan = train_gan(&cfg)?;
            let model = train_s1(&cfg, &gan)?;
            model.save(&out)?;
            println!("training accuracy {:.4}, saved to {}", model.train_accuracy, out.display());
        }
        Cmd::Services(ServicesCmd::TrainS2 { config, out }) => {
            let cfg = load_config(config.as_deref())?;
            let policy = train_s2(&cfg)?;
            policy.save(&out)?;
            println!("{} updates, saved to {}", policy.updates, out.display());
        }
        Cmd::Services(ServicesCmd::Run {
            mode,
            config,
            size,
            trial,
        }) => {
            let cfg = load_config(config.as_deref())?;
            let models = train_models(&cfg)?;
            let t = make_trial(&cfg, &models.gan, size, trial)?;
            let o = eval_options(&cfg);
            let outcome = run_strategy(mode, &strategy_input(&cfg, &t, &models, &o))?;
            println!(
                "mode {}: {} evaluations in {:.3} s, best cst {} dBm, tpc {} dBm, xi {:.6}",
                outcome.mode,
                outcome.evaluations,
                outcome.wall_time_s,
                outcome.best.config.cst_dbm,
                outcome.best.config.tpc_dbm,
                outcome.best.xi
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Invariant(_) => 2,
                Error::Io(_) => 3,
                _ => 1,
            })
        }
    }
}
