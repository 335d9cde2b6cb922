//! Scenario runner: validate configs, run single scenarios, sweep
//! parameters. Exit codes: 0 success, 1 invalid config, 2 scenario
//! failure at runtime, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aquasim::config::{OutputFormat, RunConfig};
use aquasim::runner::{run_config, sweep, RunError, RunOutput};

#[derive(Parser)]
#[command(
    name = "aquasim",
    version,
    about = "Clone-assisted edge network simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> OutputFormat {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scenario and write its report(s).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed (and seed list).
        #[arg(long)]
        seed: Option<u64>,
        /// Report file; defaults to the config's `output.path` or stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<FormatArg>,
    },
    /// Run once per value of a swept parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key, e.g. `streaming.wireless_loss`.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `0,0.01,0.02,0.05,0.1`.
        #[arg(long)]
        values: String,
        /// Output directory; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fan the runs out across threads (same output bytes as serial).
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        format: Option<FormatArg>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_IO: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

type Failure = (u8, String);

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => cmd_run(&config, seed, out, format),
        Command::Sweep {
            config,
            param,
            values,
            out,
            parallel,
            format,
        } => cmd_sweep(&config, &param, &values, out, parallel, format),
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("ok: scenario `{}`", cfg.scenario);
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| (EXIT_IO, format!("reading {}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = read_text(path)?;
    RunConfig::from_toml_str(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| (EXIT_IO, format!("creating {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content).map_err(|e| (EXIT_IO, format!("writing {}: {e}", path.display())))
}

/// `report.csv` -> `report.s7.c2c_s2.csv` when several files share a stem.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

fn emit_runs(runs: &[RunOutput], out: Option<&Path>, format: OutputFormat) -> Result<(), Failure> {
    let single = runs.len() == 1 && runs[0].reports.len() == 1;
    for run in runs {
        for report in &run.reports {
            let body = report.export(format.to_export());
            match out {
                Some(path) if single => write_file(path, &body)?,
                Some(path) => {
                    let name = format!("s{}.{}", run.seed, report.scenario);
                    write_file(&suffixed(path, &name), &body)?
                }
                None => print!("{body}"),
            }
        }
    }
    Ok(())
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<FormatArg>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.seeds = None;
    }
    let runs = run_config(&cfg).map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
    let format = format.map(OutputFormat::from).unwrap_or(cfg.output.format);
    let out = out.or_else(|| cfg.output.path.as_ref().map(PathBuf::from));
    emit_runs(&runs, out.as_deref(), format)
}

fn cmd_sweep(
    config: &Path,
    param: &str,
    values: &str,
    out: Option<PathBuf>,
    parallel: bool,
    format: Option<FormatArg>,
) -> Result<(), Failure> {
    let text = read_text(config)?;
    let cfg = RunConfig::from_toml_str(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err((EXIT_CONFIG, "--values is empty".to_string()));
    }
    let outputs = sweep(&text, param, &values, parallel).map_err(|e| match e {
        RunError::Config(c) => (EXIT_CONFIG, c.to_string()),
        RunError::Scenario(s) => (EXIT_RUNTIME, s.to_string()),
    })?;
    let format = format.map(OutputFormat::from).unwrap_or(cfg.output.format);
    for swept in &outputs {
        match &out {
            Some(dir) => {
                for run in &swept.runs {
                    for report in &run.reports {
                        let name = format!(
                            "{}={}.s{}.{}.{}",
                            swept.param,
                            swept.value,
                            run.seed,
                            report.scenario,
                            format.extension()
                        );
                        write_file(&dir.join(name), &report.export(format.to_export()))?;
                    }
                }
            }
            None => {
                for run in &swept.runs {
                    for report in &run.reports {
                        print!("{}", report.export(format.to_export()));
                    }
                }
            }
        }
    }
    Ok(())
}
