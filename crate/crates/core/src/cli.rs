//! The `proxkit` command line.
//!
//! Exit status is 0 on success, 1 when input data fail validation or
//! cannot be processed, and 2 on usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_scale, ConfigError, Settings};
use crate::metrics::{session_metrics, write_metrics_csv, MetricsRow, SmoothingWindow, TieBreak, TransitionRule};
use crate::model::{parse_annotation_file, parse_sidecar, validate_annotation_set, AnnotationSet, Slice};
use crate::reliability::{pair_labels, reliability_report, write_reliability_csv};
use crate::service::{serve, SessionStore};
use crate::survey::{bonding_measure, parse_survey_file, read_bonding_csv, write_bonding_csv};
use crate::synth::{generate_corpus, write_study};
use crate::triangulate::{
    correlate_table, join_triangulated, parse_pair_list, JoinOptions, LinkTable, TriangulatedTable,
};

#[derive(Debug, Parser)]
#[command(name = "proxkit", version, about = "Proxemics coding and bonding analysis toolkit")]
struct Cli {
    /// Settings file (`key = value`). Falls back to $PROXKIT_CONFIG; `default` means built-ins.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check annotation files against the format rules.
    Validate {
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
    },
    /// Per-track proximity metrics.
    Metrics {
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
        #[command(flatten)]
        slice: SliceArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement and Cohen's kappa between two coder:pass slices.
    Reliability {
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
        #[arg(long, value_name = "CODER:PASS")]
        a: Slice,
        #[arg(long, value_name = "CODER:PASS")]
        b: Slice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score bonding surveys.
    Survey {
        survey: PathBuf,
        #[arg(long)]
        scale: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join metrics and bonding through the link table.
    Join {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        bonding: PathBuf,
        #[arg(long)]
        link: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report link rows without data instead of failing.
        #[arg(long)]
        allow_dangling: bool,
    },
    /// Correlate columns of a joined table.
    Correlate {
        table: PathBuf,
        /// `x:y,x:y` or `all`.
        #[arg(long, default_value = "all")]
        pairs: String,
        /// Average to one row per session before correlating.
        #[arg(long, value_parser = ["session"])]
        aggregate: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic study with a planted bonding signal.
    Generate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        coupling: Option<f64>,
        #[arg(long)]
        n_sessions: Option<usize>,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Debug, Args)]
struct SliceArgs {
    /// Restrict to one coder (requires --pass).
    #[arg(long, requires = "pass")]
    coder: Option<String>,
    #[arg(long, requires = "coder")]
    pass: Option<u32>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Odd width of at least 3, or `off`.
    #[arg(long, value_name = "N|off")]
    smoothing_window: Option<String>,
    #[arg(long, value_name = "closest|farthest")]
    tie_break: Option<TieBreak>,
    #[arg(long, value_name = "adjacent|bridge")]
    transitions: Option<TransitionRule>,
    /// Keep leading off-screen frames.
    #[arg(long)]
    no_trim: bool,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(format!("config: {e}"))
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Data(format!("{context}: {e}"))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(data(path.display()))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => Ok(Box::new(std::fs::File::create(p).map_err(data(p.display()))?)),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

/// The sidecar of `x.csv` is `x.meta` in the same directory.
pub fn sidecar_path(annotation: &Path) -> PathBuf {
    annotation.with_extension("meta")
}

fn load_annotation(path: &Path) -> Result<AnnotationSet, Failure> {
    let meta_path = sidecar_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(data(meta_path.display()))?;
    let sidecar = parse_sidecar(&text).map_err(data(meta_path.display()))?;
    for w in &sidecar.warnings {
        eprintln!("{}: warning: {w}", meta_path.display());
    }
    if sidecar.partial {
        eprintln!("{}: warning: partial export", meta_path.display());
    }
    parse_annotation_file(&read(path)?, &sidecar.meta).map_err(data(path.display()))
}

fn cmd_validate(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut failed = false;
    for path in paths {
        let set = match load_annotation(path) {
            Ok(s) => s,
            Err(Failure::Data(m)) => {
                eprintln!("{m}");
                failed = true;
                continue;
            }
            Err(e) => return Err(e),
        };
        let report = validate_annotation_set(&set);
        for issue in report.errors.iter().chain(&report.warnings) {
            eprintln!("{}: {issue}", path.display());
        }
        if report.is_valid() {
            println!("{}: ok ({} records, {} slices)", path.display(), set.records.len(), set.slices().len());
        } else {
            failed = true;
        }
    }
    if failed {
        Err(Failure::Data("validation failed".into()))
    } else {
        Ok(())
    }
}

fn apply_pipeline(settings: &mut Settings, p: &PipelineArgs) -> Result<(), Failure> {
    let m = &mut settings.metrics;
    if let Some(w) = &p.smoothing_window {
        m.smoothing = match w.as_str() {
            "off" | "0" => None,
            w => {
                let width = w.parse().map_err(|_| Failure::Usage(format!("bad --smoothing-window {w:?}")))?;
                Some(SmoothingWindow::new(width).map_err(|e| Failure::Usage(e.to_string()))?)
            }
        };
    }
    if let Some(t) = p.tie_break {
        m.tie_break = t;
    }
    if let Some(t) = p.transitions {
        m.transitions = t;
    }
    if p.no_trim {
        m.trim_leading = false;
    }
    Ok(())
}

fn cmd_metrics(settings: &Settings, paths: &[PathBuf], slice: &SliceArgs, out: &Option<PathBuf>) -> Result<(), Failure> {
    let mut rows: Vec<MetricsRow> = Vec::new();
    for path in paths {
        let set = load_annotation(path)?;
        let slices: Vec<Slice> = match (&slice.coder, slice.pass) {
            (Some(c), Some(p)) => vec![Slice::new(c.clone(), p)],
            _ => set.slices().into_iter().collect(),
        };
        for s in &slices {
            let sm = session_metrics(&set, s, &settings.metrics).map_err(data(path.display()))?;
            for skip in &sm.skipped {
                eprintln!("{}: {s} track {} skipped: {}", path.display(), skip.track_id, skip.reason);
            }
            rows.extend(sm.rows());
        }
    }
    write_metrics_csv(output(out)?, &rows).map_err(data("metrics output"))
}

fn cmd_reliability(paths: &[PathBuf], a: &Slice, b: &Slice, out: &Option<PathBuf>) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in paths {
        let set = load_annotation(path)?;
        let pairs = pair_labels(&set, a, b).map_err(data(path.display()))?;
        let report = reliability_report(&pairs).map_err(data(path.display()))?;
        rows.push((set.meta.session_id.clone(), a.clone(), b.clone(), pairs, report));
    }
    write_reliability_csv(output(out)?, &rows).map_err(data("reliability output"))
}

fn cmd_survey(settings: &Settings, survey: &Path, scale: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<(), Failure> {
    let scale_path = scale
        .clone()
        .or_else(|| settings.scale_path.clone())
        .ok_or_else(|| Failure::Usage("survey needs --scale or `scale` in the settings file".into()))?;
    let def = load_scale(&scale_path).map_err(|e| Failure::Data(e.to_string()))?;
    let file = parse_survey_file(&read(survey)?, &def).map_err(data(survey.display()))?;
    let measures: Vec<_> = file.records.iter().map(|r| bonding_measure(r, &def)).collect();
    for m in measures.iter().filter(|m| m.distance_to_agent_mm.is_none()) {
        eprintln!("{}: {} has no agent placement", m.session_id, m.participant_id);
    }
    write_bonding_csv(output(out)?, &measures).map_err(data("bonding output"))
}

fn cmd_join(metrics: &Path, bonding: &Path, link: &Path, out: &Option<PathBuf>, allow_dangling: bool) -> Result<(), Failure> {
    let m = crate::metrics::read_metrics_csv(read(metrics)?.as_slice()).map_err(data(metrics.display()))?;
    let b = read_bonding_csv(read(bonding)?.as_slice()).map_err(data(bonding.display()))?;
    let l = LinkTable::read_csv(read(link)?.as_slice()).map_err(data(link.display()))?;
    let (table, report) = join_triangulated(&m, &b, &l, JoinOptions { allow_dangling }).map_err(data("join"))?;
    for (s, t) in &report.unmatched_metrics {
        eprintln!("unlinked metrics: session {s} track {t}");
    }
    for (s, p) in &report.unmatched_bonding {
        eprintln!("unlinked bonding: session {s} participant {p}");
    }
    for (row, what) in &report.dangling {
        eprintln!("link {row} has no {what}");
    }
    for (c, e) in &table.unstandardized {
        eprintln!("column {c} not standardized: {e}");
    }
    table.write_csv(output(out)?).map_err(data("table output"))
}

fn cmd_correlate(table: &Path, pairs: &str, aggregate: bool, out: &Option<PathBuf>) -> Result<(), Failure> {
    let pairs = parse_pair_list(pairs).map_err(|e| Failure::Usage(format!("--pairs: {e}")))?;
    let mut t = TriangulatedTable::read_csv(read(table)?.as_slice()).map_err(data(table.display()))?;
    if aggregate {
        t = t.aggregate_by_session();
    }
    let report = correlate_table(&t, &pairs).map_err(|e| Failure::Usage(format!("--pairs: {e}")))?;
    for (x, y, e) in &report.skipped {
        eprintln!("{x}:{y} skipped: {e}");
    }
    report.write_csv(output(out)?).map_err(data("correlation output"))
}

fn cmd_generate(mut settings: Settings, out_dir: &Path, seed: Option<u64>, coupling: Option<f64>, n: Option<usize>) -> Result<(), Failure> {
    let g = &mut settings.generator;
    g.seed = seed.unwrap_or(g.seed);
    g.coupling = coupling.unwrap_or(g.coupling);
    g.n_sessions = n.unwrap_or(g.n_sessions);
    g.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let corpus = generate_corpus(g, g.n_sessions).map_err(|e| Failure::Usage(e.to_string()))?;
    let layout = write_study(out_dir, g, &corpus).map_err(data(out_dir.display()))?;
    println!(
        "wrote {} sessions to {} (seed {}, coupling {})",
        layout.annotations.len(),
        out_dir.display(),
        g.seed,
        g.coupling
    );
    Ok(())
}

fn cmd_serve(frames: &Path, addr: std::net::SocketAddr) -> Result<(), Failure> {
    if !frames.is_dir() {
        return Err(Failure::Usage(format!("--frames {} is not a directory", frames.display())));
    }
    let store = Arc::new(SessionStore::new(frames));
    let rt = tokio::runtime::Runtime::new().map_err(data("runtime"))?;
    eprintln!("serving {} on http://{addr}", frames.display());
    rt.block_on(serve(store, addr)).map_err(data(addr))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let mut settings = Settings::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Validate { annotations } => cmd_validate(&annotations),
        Command::Metrics { annotations, slice, pipeline, out } => {
            apply_pipeline(&mut settings, &pipeline)?;
            cmd_metrics(&settings, &annotations, &slice, &out)
        }
        Command::Reliability { annotations, a, b, out } => cmd_reliability(&annotations, &a, &b, &out),
        Command::Survey { survey, scale, out } => cmd_survey(&settings, &survey, &scale, &out),
        Command::Join { metrics, bonding, link, out, allow_dangling } => cmd_join(&metrics, &bonding, &link, &out, allow_dangling),
        Command::Correlate { table, pairs, aggregate, out } => cmd_correlate(&table, &pairs, aggregate.is_some(), &out),
        Command::Generate { out_dir, seed, coupling, n_sessions } => cmd_generate(settings, &out_dir, seed, coupling, n_sessions),
        Command::Serve { frames, port, host } => cmd_serve(&frames, (host, port).into()),
    }
}

const SYNOPSIS: &str = "usage: proxkit [--config FILE] <validate|metrics|reliability|survey|join|correlate|generate|serve> ...\n\
                        run `proxkit help <command>` for the flags of one command";

/// Runs the tool on `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            eprintln!("{SYNOPSIS}");
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("{SYNOPSIS}");
            2
        }
    }
}
