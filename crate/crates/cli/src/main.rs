use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use doeblin_cli::compare::compare;
use doeblin_cli::report::read_report;
use doeblin_cli::{load_config, output_dir, presets, run_to_dir};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "doeblin", version, about = "Runs the semigroup convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or `preset:NAME`.
    Run {
        config: String,
        /// Output directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root under which `<name>/` is created when no directory is given.
        #[arg(long, env = "DOEBLIN_OUT", hide_env_values = true)]
        out_root: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Diff two report.json files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Relative threshold below which numbers count as equal.
        #[arg(long, default_value_t = 1e-9)]
        rtol: f64,
    },
    /// Inspect the shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, out, out_root, seed, jobs } => {
            let (mut cfg, name) = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(k) = jobs {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    eprintln!("error: --jobs: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            let dir = output_dir(out.as_deref(), &cfg, out_root.as_deref(), &name);
            let report = match run_to_dir(&cfg, &dir) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(EXIT_FAIL);
                }
            };
            for c in report.checks.iter().chain(report.criterion.iter()).chain([&report.runtime]) {
                println!(
                    "{} {:<28} value {:>12.5e}  bound {:>12.5e}  margin {:>12.5e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.bound,
                    c.margin
                );
            }
            println!("wrote {}", dir.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Command::Compare { a, b, rtol } => {
            let (ra, rb) = match (read_report(&a), read_report(&b)) {
                (Ok(x), Ok(y)) => (x, y),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match compare(&ra, &rb, rtol) {
                Ok(diff) if diff.is_empty() => {
                    println!("no differences");
                    ExitCode::SUCCESS
                }
                Ok(diff) => {
                    for d in &diff {
                        match d.relative {
                            Some(r) => println!("{}: {} vs {} (relative {r:.3e})", d.path, d.a, d.b),
                            None => println!("{}: {} vs {}", d.path, d.a, d.b),
                        }
                    }
                    ExitCode::from(EXIT_FAIL)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Command::Presets { action: PresetAction::List } => {
            for p in presets::PRESETS {
                println!("{:<20} {}", p.name, p.description);
            }
            ExitCode::SUCCESS
        }
        Command::Presets { action: PresetAction::Show { name } } => match presets::find(&name) {
            Some(p) => {
                print!("{}", p.text);
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown preset `{name}`");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}
