//! `agz`: train agents, run the evaluation suites, and plot the results.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use agz_core::evaluation::*;
use agz_core::stimulus::StimulusSet;
use agz_core::training::{load_models, Trainer};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use agz_cli::config::{parse_assignment, RunConfig};
use agz_cli::{plot, CliError};

#[derive(Parser)]
#[command(name = "agz", version, about = "Active binocular vision agents: training, evaluation and plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train to the episode budget, writing checkpoints and training curves.
    Train(TrainArgs),
    /// Run the controlled-error and/or behaviour suites on a checkpoint.
    Eval(EvalArgs),
    /// Render a CSV table produced by `train` or `eval` as SVG figures.
    Plot(PlotArgs),
    /// Show the resolved configuration.
    Config(ConfigArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// TOML file with any subset of the configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set gamma=0.2`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// `procedural:<count>:<seed>` or a directory of PNG images.
    #[arg(long)]
    stimuli: Option<String>,
    #[arg(long)]
    eval_stimuli: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    reward: Option<Reward>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reward {
    New,
    Old,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Controlled,
    Behaviour,
    All,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    /// Evaluation stimuli; defaults to the checkpoint's held-out set.
    #[arg(long)]
    stimuli: Option<String>,
    /// At most this many stimuli are used.
    #[arg(long, default_value_t = 20)]
    stimulus_count: usize,
    /// Screen distance in metres.
    #[arg(long, default_value_t = 2.0)]
    distance: f64,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// `vcurve.csv`, `policy.csv`, `training_curve.csv` or `trajectory.csv`.
    #[arg(long)]
    input: PathBuf,
    /// Directory for the SVG files; defaults to the input's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Print every key with its resolved value as TOML.
    #[arg(long)]
    dump: bool,
}

/// Worker threads allowed by `AGZ_THREADS` (unset: no cap).
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("AGZ_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("AGZ_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn write_table<T: CsvRow>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_csv(rows, File::create(path)?)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push((k.to_string(), format!("{v:?}")));
        }
    };
    flag("stimuli", args.stimuli);
    flag("eval_stimuli", args.eval_stimuli);
    flag("reward", args.reward.map(|r| match r {
        Reward::New => "new".to_string(),
        Reward::Old => "old".to_string(),
    }));
    for (k, v) in [("episodes", args.episodes.map(|x| x as u64)), ("workers", args.workers.map(|x| x as u64)), ("seed", args.seed)] {
        if let Some(v) = v {
            overrides.push((k.to_string(), v.to_string()));
        }
    }
    let mut all = args.source.set;
    all.extend(overrides);
    let run = RunConfig::resolve(args.source.config.as_deref(), &all)?;
    let threads = thread_cap()?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), run.to_toml())?;
    let config = run.train_config();
    let mut trainer = Trainer::new(config.clone())?;
    if let Some(n) = threads {
        trainer.set_max_threads(n);
    }
    let start = Instant::now();
    let step = if run.checkpoint_interval == 0 { config.episodes } else { run.checkpoint_interval };
    while trainer.episodes_done() < config.episodes {
        let until = (trainer.episodes_done() + step.max(1)).min(config.episodes);
        trainer.run_until(until)?;
        if run.checkpoint_interval > 0 && until < config.episodes {
            trainer.save(&args.out.join(format!("ckpt_{until}")))?;
        }
        let recent = &trainer.log()[trainer.log().len().saturating_sub(step)..];
        let mean = |j: usize| recent.iter().map(|s| s.final_abs_error[j]).sum::<f64>() / recent.len().max(1) as f64;
        info!(
            "episode {until}/{}: mean final |error| vergence {:.2}, pan {:.2}, tilt {:.2} ({:.0} s)",
            config.episodes,
            mean(0),
            mean(1),
            mean(2),
            start.elapsed().as_secs_f64()
        );
    }
    trainer.save(&args.out.join("ckpt_final"))?;
    write_table(
        &args.out.join("training_curve.csv"),
        &training_curve_rows(trainer.log(), trainer.evals(), config.reward_mode, config.seed),
    )?;
    write_table(&args.out.join("training_log.csv"), &training_log_rows(trainer.log(), config.reward_mode))?;
    if let Some(last) = trainer.evals().last() {
        println!("testing_error after {} episodes: {:?}", last.episode, last.testing_error);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    if args.stimulus_count == 0 || !(args.distance > 0.0 && args.distance.is_finite()) {
        return Err(CliError::Usage("--stimulus-count must be >= 1 and --distance positive".into()));
    }
    let (config, models) = load_models(&args.checkpoint)?;
    let spec = args.stimuli.unwrap_or_else(|| config.eval_stimuli.clone());
    let stimuli = std::sync::Arc::new(StimulusSet::from_spec(&spec, config.texture_size)?);
    let cfg = EvalConfig {
        distance_m: args.distance,
        stimuli: args.stimulus_count,
        ..EvalConfig::from(&config)
    };
    let out = match args.out {
        Some(o) => o,
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&out)?;
    if matches!(args.suite, Suite::Controlled | Suite::All) {
        let records = controlled_error_sweep(&models.perception, &models, &stimuli, &cfg, &default_grid)?;
        write_table(&out.join("vcurve.csv"), &vcurve_rows(&records))?;
        write_table(&out.join("policy.csv"), &policy_rows(&records))?;
    }
    if matches!(args.suite, Suite::Behaviour | Suite::All) {
        let records = behaviour_suite(&models.perception, &models, &stimuli, &cfg, &error_grid(4.0, 0.5))?;
        write_table(&out.join("trajectory.csv"), &trajectory_rows(&records))?;
        let err = testing_error(&models.perception, &models, &stimuli, &cfg)?;
        println!("testing_error (vergence, pan, tilt): {err:?}");
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    if !args.input.is_file() {
        return Err(CliError::Usage(format!("no such file: {}", args.input.display())));
    }
    let out = match args.out {
        Some(o) => o,
        None => args.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    for path in plot::plot_csv(&args.input, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn show_config(args: ConfigArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(args.source.config.as_deref(), &args.source.set)?;
    if args.dump {
        print!("{}", run.to_toml());
    } else {
        println!("configuration is valid; use --dump to print it");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Plot(a) => plot(a),
        Command::Config(a) => show_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
