use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nlform::run::Model;
use nlform::{builtin, emit, load_scenario, run_tasks, Format, RunOptions, Scenario, Task};

/// Numerical checks of weighted Poincaré inequalities for nonlocal forms.
///
/// Exit status: 0 when every task ran (negative findings included), 1 when
/// a task failed, 2 for usage or scenario errors, 3 for output errors.
#[derive(Parser)]
#[command(name = "nlform", version)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario name (see `nlform scenario list`).
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Output directory; JSON goes to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Seed for the random probes of the form checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "NLFORM_THREADS")]
    threads: Option<usize>,
    /// Add per-task wall times to the report (breaks byte reproducibility).
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the sufficient conditions for the weighted inequality.
    Check,
    /// Assemble the form and compute the best constant on the grid.
    Gap,
    /// Fit a drift certificate for the truncated generator.
    Lyapunov,
    /// Failure slope of a ramp family.
    Sharpness,
    /// Super Poincaré rate function.
    Beta,
    /// Exponential and stretched moments.
    Concentration,
    /// Every task listed in the scenario.
    All,
    /// Built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Write the assembled form matrix and masses as `i j value` lines.
    DumpForm,
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// List built-in scenario names.
    List,
    /// Print the TOML source of a built-in scenario.
    Show { name: String },
}

fn load(cli: &Cli) -> Result<Scenario, String> {
    match (&cli.config, &cli.scenario) {
        (Some(path), _) => load_scenario(path).map_err(|e| e.to_string()),
        (None, Some(name)) => match builtin::builtin(name) {
            Some(parsed) => parsed.map_err(|e| e.to_string()),
            None => Err(format!(
                "unknown built-in scenario {name:?}; known: {}",
                builtin::names().collect::<Vec<_>>().join(", ")
            )),
        },
        (None, None) => Err("pass --config PATH or --scenario NAME".into()),
    }
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            return usage_error(&format!("thread pool: {e}"));
        }
    }
    let tasks: Vec<Task> = match &cli.command {
        Command::Scenario { action: ScenarioAction::List } => {
            for name in builtin::names() {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Scenario { action: ScenarioAction::Show { name } } => {
            return match builtin::source(name) {
                Some(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                None => usage_error(&format!("unknown built-in scenario {name:?}")),
            };
        }
        Command::DumpForm => return dump_form(&cli),
        Command::Check => vec![Task::Check],
        Command::Gap => vec![Task::Gap],
        Command::Lyapunov => vec![Task::Lyapunov],
        Command::Sharpness => vec![Task::Sharpness],
        Command::Beta => vec![Task::Beta],
        Command::Concentration => vec![Task::Concentration],
        Command::All => Vec::new(),
    };
    let scenario = match load(&cli) {
        Ok(s) => s,
        Err(e) => return usage_error(&e),
    };
    let mut tasks = if tasks.is_empty() { scenario.tasks.clone() } else { tasks };
    // The rate needs a Poincaré constant; borrow it from the gap task.
    if tasks.contains(&Task::Beta) && scenario.beta.c0.is_none() && !tasks.contains(&Task::Gap) {
        tasks.push(Task::Gap);
    }
    let options = RunOptions { seed: cli.seed, timings: cli.timings };
    let report = run_tasks(&scenario, &tasks, &options);
    let format = match cli.format {
        OutputFormat::Json => Format::Json,
        OutputFormat::Csv => Format::Csv,
    };
    match emit(&report, format, cli.out.as_deref()) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
        }
        Err(e) if e.kind() == io::ErrorKind::InvalidInput => return usage_error(&e.to_string()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    for t in report.tasks.iter().filter(|t| t.status == nlform::TaskStatus::Failed) {
        eprintln!("task {} failed: {}", t.task, t.reason.as_deref().unwrap_or(""));
    }
    if report.any_failed() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn dump_form(cli: &Cli) -> ExitCode {
    let scenario = match load(cli) {
        Ok(s) => s,
        Err(e) => return usage_error(&e),
    };
    let form = match Model::build(&scenario).and_then(|m| m.assemble(&scenario)) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.out {
        Some(dir) => std::fs::create_dir_all(dir).and_then(|_| {
            let path = dir.join(format!("{}.form.txt", scenario.name));
            let mut file = io::BufWriter::new(std::fs::File::create(&path)?);
            form.dump(&mut file)?;
            file.flush()?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }),
        None => {
            let mut out = io::BufWriter::new(io::stdout().lock());
            form.dump(&mut out).and_then(|_| out.flush())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
