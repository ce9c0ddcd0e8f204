//! The `rts` command line.
//!
//! [`run`] takes its output streams as arguments and returns the exit code,
//! so tests drive it without spawning a process. JSON output is the
//! pretty-printed serialization of the core result followed by one newline.

use crate::config::ServiceConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rts_core::datamodel::{load_dataset_file, validate_dataset};
use rts_core::evaluation::{backtest_with_window, LabelingRule, DEFAULT_TRAINING_WINDOW};
use rts_core::features::FeatureScope;
use rts_core::fixtures::{planted, shuffled, FixtureParams, SHUFFLE_SEED};
use rts_core::session::SessionStore;
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CORRUPT: i32 = 2;
pub const EXIT_NOTHING_EVALUATED: i32 = 3;

pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "rts",
    version,
    about = "Human-in-the-loop regression test selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset for corruption and data-quality issues.
    Validate {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Replay ranking on past releases and score it with APFD.
    Backtest(BacktestArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Work with stored sessions.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
    /// Write a synthetic dataset.
    Fixture {
        #[arg(value_enum)]
        kind: FixtureKind,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    pub path: PathBuf,
    /// Comma-separated release names; all releases when omitted.
    #[arg(long, value_delimiter = ',')]
    pub releases: Vec<String>,
    /// Random orderings for the baseline column; 0 disables it.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated feature groups to leave out.
    #[arg(long, value_delimiter = ',')]
    pub deselect: Vec<String>,
    /// Earlier releases whose history supplies training labels.
    #[arg(long, default_value_t = DEFAULT_TRAINING_WINDOW)]
    pub window: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Write the selection document of an accepted session.
    Export {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Service configuration naming the store directory.
        #[arg(long, conflicts_with = "store")]
        config: Option<PathBuf>,
        /// Store directory; defaults to the configured one.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Descriptions carry the failure signal.
    Planted,
    /// The planted corpus with descriptions shuffled across tests.
    Shuffled,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result serializes");
    s.push('\n');
    s
}

fn load_config(path: Option<&PathBuf>) -> Result<ServiceConfig, String> {
    match path {
        Some(p) => ServiceConfig::load(p),
        None => Ok(ServiceConfig::default()),
    }
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Validate { path, json } => validate(&path, json, out),
        Command::Backtest(args) => run_backtest(&args, out),
        Command::Serve { config } => serve(config.as_ref()),
        Command::Session {
            command:
                SessionCommand::Export {
                    id,
                    out: target,
                    config,
                    store,
                },
        } => export(&id, target.as_ref(), config.as_ref(), store, out),
        Command::Fixture {
            kind,
            out: target,
            seed,
        } => fixture(kind, target.as_ref(), seed, out),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_ERROR
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), String> {
    out.write_all(text.as_bytes()).map_err(|e| e.to_string())
}

fn validate(path: &PathBuf, json: bool, out: &mut dyn Write) -> Result<i32, String> {
    let d = load_dataset_file(path).map_err(|e| e.to_string())?;
    let report = validate_dataset(&d);
    let text = if json {
        to_json(&report)
    } else {
        report.render_text()
    };
    write_out(out, &text)?;
    Ok(if report.corrupt {
        EXIT_CORRUPT
    } else {
        EXIT_OK
    })
}

fn run_backtest(args: &BacktestArgs, out: &mut dyn Write) -> Result<i32, String> {
    let d = load_dataset_file(&args.path).map_err(|e| e.to_string())?;
    let releases = if args.releases.is_empty() {
        d.releases.clone()
    } else {
        args.releases.clone()
    };
    let mut scope = FeatureScope::all(String::new());
    scope.deselected_groups = args.deselect.iter().cloned().collect();
    let mut report = backtest_with_window(
        &d,
        &scope,
        &Default::default(),
        &releases,
        LabelingRule::HistoryVerdict,
        args.window,
    )
    .map_err(|e| e.to_string())?;
    if args.trials > 0 {
        report
            .attach_random_baseline(&d, args.trials, args.seed)
            .map_err(|e| e.to_string())?;
    }
    let text = if args.json {
        to_json(&report)
    } else {
        report.render_table()
    };
    write_out(out, &text)?;
    Ok(if report.empty {
        EXIT_NOTHING_EVALUATED
    } else {
        EXIT_OK
    })
}

fn serve(config: Option<&PathBuf>) -> Result<i32, String> {
    let config = load_config(config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| format!("cannot start runtime: {e}"))?;
    runtime.block_on(crate::service::serve(config))?;
    Ok(EXIT_OK)
}

fn export(
    id: &str,
    target: Option<&PathBuf>,
    config: Option<&PathBuf>,
    store: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, String> {
    let dir = match store {
        Some(dir) => dir,
        None => load_config(config)?.store_dir,
    };
    if !dir.is_dir() {
        return Err(format!("store directory {} does not exist", dir.display()));
    }
    let store = SessionStore::open(dir).map_err(|e| e.to_string())?;
    let session = store.restore(id).map_err(|e| e.to_string())?;
    let doc = session.export().map_err(|e| e.to_string())?;
    emit(&to_json(&doc), target, out)
}

fn fixture(
    kind: FixtureKind,
    target: Option<&PathBuf>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<i32, String> {
    let mut params = FixtureParams::default();
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let base = planted(&params);
    let d = match kind {
        FixtureKind::Planted => base,
        FixtureKind::Shuffled => shuffled(&base, SHUFFLE_SEED),
    };
    let mut text = d.to_json();
    text.push('\n');
    emit(&text, target, out)
}

fn emit(text: &str, target: Option<&PathBuf>, out: &mut dyn Write) -> Result<i32, String> {
    match target {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => write_out(out, text)?,
    }
    Ok(EXIT_OK)
}
