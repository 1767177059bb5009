//! Command-line front end for the phase-noise bound sweeps.
//!
//! `sweep` runs a config-described experiment and writes CSV/JSON, `validate`
//! runs the slow Monte-Carlo oracle suite, `show-config` prints the resolved
//! defaults. Exit codes: 0 success, 2 config error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pn_bounds::sweep::{
    config_hash, emit_results, load_config, render_csv, render_json, resolved_echo, run_sweep,
    OutputFormat, SweepFamily, SweepSpec, FAMILY_ORDER,
};
use pn_bounds::validation;

#[derive(Parser)]
#[command(name = "pn-bounds", version, about)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a config file.
    Sweep {
        /// Flat key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output file; results go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format: csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated families override (crb_free,crb,lb,rmse).
        #[arg(long)]
        families: Option<String>,
    },
    /// Run the Monte-Carlo oracle suite.
    Validate {
        /// Master seed for the oracle draws.
        #[arg(long, default_value_t = validation::DEFAULT_SEED)]
        seed: u64,
    },
    /// Print the resolved default configuration.
    ShowConfig,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn parse_families(list: &str) -> Result<Vec<SweepFamily>, String> {
    let mut names = Vec::new();
    for part in list.split(',') {
        let name = part.trim();
        let family = match name {
            "crb_free" => SweepFamily::CrbFree,
            "crb" => SweepFamily::CrbHybrid,
            "lb" => SweepFamily::LbAveraged,
            "rmse" => SweepFamily::Rmse,
            _ => return Err(format!("unknown family '{name}'")),
        };
        if !names.contains(&family) {
            names.push(family);
        }
    }
    if names.is_empty() {
        return Err("at least one family required".into());
    }
    Ok(FAMILY_ORDER
        .iter()
        .copied()
        .filter(|f| names.contains(f))
        .collect())
}

fn run_sweep_command(
    config: PathBuf,
    out: Option<PathBuf>,
    format: String,
    seed: Option<u64>,
    families: Option<String>,
) -> ExitCode {
    let format = match format.as_str() {
        "csv" => OutputFormat::Csv,
        "json" => OutputFormat::Json,
        other => {
            eprintln!("error: unknown format '{other}' (expected csv or json)");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut spec: SweepSpec = match load_config(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = seed {
        spec.master_seed = seed;
    }
    if let Some(list) = &families {
        match parse_families(list) {
            Ok(f) => spec.families = f,
            Err(msg) => {
                eprintln!("error: {msg}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }

    let rows = run_sweep(&spec);
    let all_failed = rows.iter().all(|r| r.status != "ok");

    match &out {
        Some(path) => {
            if let Err(e) = emit_results(&rows, &spec, format, path) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG);
            }
            // Resolved-config echo alongside the results for provenance.
            let echo_path = {
                let mut p = path.as_os_str().to_owned();
                p.push(".config");
                PathBuf::from(p)
            };
            if let Err(e) = std::fs::write(&echo_path, resolved_echo(&spec)) {
                eprintln!("error: cannot write {}: {e}", echo_path.display());
                return ExitCode::from(EXIT_CONFIG);
            }
            println!(
                "wrote {} rows to {} (config {} echoed to {})",
                rows.len(),
                path.display(),
                config_hash(&spec),
                echo_path.display()
            );
        }
        None => {
            let text = match format {
                OutputFormat::Csv => render_csv(
                    &rows,
                    &spec.families,
                    Some(&format!("config_hash={}", config_hash(&spec))),
                ),
                OutputFormat::Json => render_json(&rows, &spec),
            };
            match text {
                Ok(t) => print!("{t}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_NUMERICAL);
                }
            }
        }
    }

    if all_failed {
        eprintln!("error: every sweep point failed; see status column");
        return ExitCode::from(EXIT_NUMERICAL);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match cli.command {
        Command::Sweep {
            config,
            out,
            format,
            seed,
            families,
        } => run_sweep_command(config, out, format, seed, families),
        Command::Validate { seed } => {
            let reports = validation::run_all(seed);
            print!("{}", validation::summarize(&reports));
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
        Command::ShowConfig => {
            print!("{}", resolved_echo(&SweepSpec::default()));
            ExitCode::SUCCESS
        }
    }
}
