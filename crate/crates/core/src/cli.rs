//! The `buypred` command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
//! 3 data error (unusable input, failed training, corrupt model).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{Config, ConfigError, ConfigOverlay};
use crate::eval::{
    confusion, holdout_split, kfold, threshold_sweep, write_cv_csv, write_sweep_csv, EvalReport,
};
use crate::ingest::{
    assemble_sessions, parse_buys, parse_click_line, parse_clicks, write_rejects, IngestError,
    LineRecords, Parsed, Reject, Session,
};
use crate::pipeline::{
    parse_solution, predict_batch, train, write_solution, BundleError, ModelBundle,
    SessionPrediction, StreamPredictor, Thresholds,
};
use crate::popularity::build_popularity;
use crate::stats;
use crate::synth::{generate, separable_fixture, Dataset};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("write failed: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "buypred", version, about = "Session buy prediction with a two-step filter")]
struct Cli {
    /// Flat TOML file of settings; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit
    #[arg(long, global = true)]
    print_config: bool,
    #[command(flatten)]
    settings: ConfigOverlay,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write clicks.csv, buys.csv and manifest.csv into the output directory
    Gen {
        /// Write the small separable fixture instead
        #[arg(long)]
        separable: bool,
    },
    /// Fit a model bundle on labeled logs
    Train,
    /// Predict every session of the click log (solution format)
    Predict,
    /// Score a solution file, or run a seeded holdout evaluation
    Eval {
        /// Solution file to score against the labeled logs
        #[arg(long, value_name = "PATH")]
        solution: Option<PathBuf>,
    },
    /// k-fold cross-validation (CSV: one row per fold, then mean and std)
    Cv,
    /// Cross-validated threshold grid (CSV: one row per cell)
    Sweep,
    /// Predict from a time-ordered click stream
    Stream {
        /// Click log to replay, `-` for standard input; defaults to --clicks
        input: Option<PathBuf>,
    },
    /// Aggregations by calendar unit, click count, duration and popularity
    Stats,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: Config,
    // settings given in the file or on the command line, not defaulted
    explicit: ConfigOverlay,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let file = cli
        .config
        .as_deref()
        .map(ConfigOverlay::from_file)
        .transpose()?;
    let cfg = Config::resolve(file.as_ref(), &cli.settings)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage(
            "no command given (gen, train, predict, eval, cv, sweep, stream, stats)".into(),
        ));
    };
    let mut explicit = file.unwrap_or_default();
    explicit.t1 = cli.settings.t1.or(explicit.t1);
    explicit.t2 = cli.settings.t2.or(explicit.t2);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let ctx = Ctx { cfg, explicit };
    pool.install(|| match command {
        Command::Gen { separable } => cmd_gen(&ctx, separable),
        Command::Train => cmd_train(&ctx),
        Command::Predict => cmd_predict(&ctx),
        Command::Eval { solution } => cmd_eval(&ctx, solution.as_deref()),
        Command::Cv => cmd_cv(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Stream { input } => cmd_stream(&ctx, input),
        Command::Stats => cmd_stats(&ctx),
    })
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required for this command")))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// The `--output` file, or standard output.
fn output(cfg: &Config) -> Result<Box<dyn Write>, CliError> {
    Ok(match &cfg.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn ingest_err(path: &Path, e: IngestError) -> CliError {
    match e {
        IngestError::Io(e) => io_err(path, e),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

/// Buy rejects go next to the click rejects with a `.buys.csv` extension.
fn log_rejects(cfg: &Config, which: &str, path: &Path, parsed_rejects: &[Reject], lines: u64) -> Result<(), CliError> {
    eprintln!(
        "{which}: {} lines, {} rejected ({})",
        lines,
        parsed_rejects.len(),
        path.display()
    );
    if let Some(base) = &cfg.rejects {
        let target = if which == "buys" {
            base.with_extension("buys.csv")
        } else {
            base.clone()
        };
        write_rejects(create(&target)?, parsed_rejects).map_err(|e| ingest_err(&target, e))?;
    }
    Ok(())
}

fn load_sessions(cfg: &Config, with_buys: bool) -> Result<Vec<Session>, CliError> {
    let clicks_path = require(&cfg.clicks, "clicks")?;
    let clicks: Parsed<_> =
        parse_clicks(open(clicks_path)?).map_err(|e| ingest_err(clicks_path, e))?;
    log_rejects(cfg, "clicks", clicks_path, &clicks.rejects, clicks.total_lines)?;
    let buys = if with_buys {
        let buys_path = require(&cfg.buys, "buys")?;
        let buys = parse_buys(open(buys_path)?).map_err(|e| ingest_err(buys_path, e))?;
        log_rejects(cfg, "buys", buys_path, &buys.rejects, buys.total_lines)?;
        buys.events
    } else {
        Vec::new()
    };
    let assembled = assemble_sessions(clicks.events, buys);
    let d = assembled.diagnostics;
    if d.orphan_buys > 0 || d.unclicked_buys > 0 {
        eprintln!(
            "buys: {} for sessions without clicks (dropped), {} for items not clicked in their session",
            d.orphan_buys, d.unclicked_buys
        );
    }
    let sessions = assembled.into_sessions();
    if sessions.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no valid click records",
            clicks_path.display()
        )));
    }
    Ok(sessions)
}

fn load_bundle(ctx: &Ctx) -> Result<ModelBundle, CliError> {
    let path = require(&ctx.cfg.model, "model")?;
    let bundle = ModelBundle::load(open(path)?).map_err(|e| match e {
        BundleError::Io(e) => io_err(path, e),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    // thresholds given explicitly replace the stored ones, field by field
    let stored = bundle.thresholds();
    let t1 = ctx.explicit.t1.unwrap_or(stored.t1());
    let t2 = ctx.explicit.t2.unwrap_or(stored.t2());
    let th = Thresholds::new(t1, t2).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(bundle.with_thresholds(th))
}

fn cmd_gen(ctx: &Ctx, separable: bool) -> Result<(), CliError> {
    let dir = require(&ctx.cfg.output, "output")?;
    let data: Dataset = if separable {
        separable_fixture(ctx.cfg.seed)
    } else {
        generate(&ctx.cfg.synth_config()?).map_err(|e| CliError::Usage(e.to_string()))?
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("clicks.csv");
    let mut w = create(&path)?;
    data.write_clicks(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
    let path = dir.join("buys.csv");
    let mut w = create(&path)?;
    data.write_buys(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
    let path = dir.join("manifest.csv");
    data.write_manifest(create(&path)?).map_err(|e| io_err(&path, e))?;
    let buy_sessions = data
        .buys
        .iter()
        .map(|b| b.session_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    println!(
        "wrote {} clicks, {} buys ({} buy sessions) to {}",
        data.clicks.len(),
        data.buys.len(),
        buy_sessions,
        dir.display()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<(), CliError> {
    let model_path = require(&ctx.cfg.model, "model")?;
    let sessions = load_sessions(&ctx.cfg, true)?;
    let bundle = train(&sessions, &ctx.cfg.train_config()?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut w = create(model_path)?;
    bundle
        .save(&mut w)
        .map_err(|e| io_err(model_path, e))?;
    w.flush().map_err(|e| io_err(model_path, e))?;
    let lm = bundle.likelihood();
    println!(
        "trained on {} sessions: {} buy / {} non-buy instances, {} feature keys, {} items; saved {}",
        sessions.len(),
        lm.total_buy(),
        lm.total_nonbuy(),
        lm.joint_counts().len(),
        bundle.popularity().len(),
        model_path.display()
    );
    Ok(())
}

fn cmd_predict(ctx: &Ctx) -> Result<(), CliError> {
    let bundle = load_bundle(ctx)?;
    let sessions = load_sessions(&ctx.cfg, false)?;
    let preds = predict_batch(&bundle, &sessions);
    let mut out = output(&ctx.cfg)?;
    write_solution(&mut out, &preds)
        .and_then(|_| out.flush())
        .map_err(write_err)?;
    eprintln!(
        "predicted {} of {} sessions as buy sessions",
        preds.iter().filter(|p| p.session_is_buy()).count(),
        preds.len()
    );
    Ok(())
}

fn summarize(report: &EvalReport) -> String {
    format!(
        "sessions          {} ({} buy)\n\
         score             {:.4}\n\
         session TP %      {:.2}\n\
         session FP %      {:.2}\n\
         item TP %         {:.2}\n\
         item FP %         {:.2}\n\
         unreachable buys  {}\n",
        report.n_test_sessions,
        report.n_buy_sessions,
        report.score,
        report.tp_rate_session(),
        report.fp_rate_session(),
        report.tp_rate_item(),
        report.fp_rate_item(),
        report.unreachable_positives,
    )
}

#[derive(serde::Serialize)]
struct ReportRow {
    n_test_sessions: u64,
    n_buy_sessions: u64,
    score: f64,
    tp_rate_session: f64,
    fp_rate_session: f64,
    tp_rate_item: f64,
    fp_rate_item: f64,
    session_tp: u64,
    session_fp: u64,
    session_tn: u64,
    session_fn: u64,
    item_tp: u64,
    item_fp: u64,
    item_tn: u64,
    item_fn: u64,
    unreachable_positives: u64,
}

fn write_report_csv(path: &Path, r: &EvalReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.serialize(ReportRow {
        n_test_sessions: r.n_test_sessions,
        n_buy_sessions: r.n_buy_sessions,
        score: r.score,
        tp_rate_session: r.tp_rate_session(),
        fp_rate_session: r.fp_rate_session(),
        tp_rate_item: r.tp_rate_item(),
        fp_rate_item: r.fp_rate_item(),
        session_tp: r.session.tp,
        session_fp: r.session.fp,
        session_tn: r.session.tn,
        session_fn: r.session.fn_,
        item_tp: r.item.tp,
        item_fp: r.item.fp,
        item_tn: r.item.tn,
        item_fn: r.item.fn_,
        unreachable_positives: r.unreachable_positives,
    })
    .and_then(|_| w.flush().map_err(Into::into))
    .map_err(|e| io_err(path, e))
}

fn cmd_eval(ctx: &Ctx, solution: Option<&Path>) -> Result<(), CliError> {
    let sessions = load_sessions(&ctx.cfg, true)?;
    let report = match solution {
        Some(path) => {
            let mut preds = parse_solution(open(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            // the solution format omits sessions with no predicted items
            let listed: std::collections::HashSet<_> =
                preds.iter().map(|p| p.session_id).collect();
            preds.extend(
                sessions
                    .iter()
                    .filter(|s| !listed.contains(&s.session_id))
                    .map(|s| SessionPrediction {
                        session_id: s.session_id,
                        predicted_items: Default::default(),
                    }),
            );
            confusion(&preds, &sessions).map_err(|e| CliError::Data(e.to_string()))?
        }
        None => {
            let split = holdout_split(sessions, ctx.cfg.test_fraction, ctx.cfg.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            println!(
                "holdout: {} train / {} test sessions, test buy-session rate {:.4}",
                split.train.len(),
                split.test.len(),
                split.test_buy_rate
            );
            let bundle = train(&split.train, &ctx.cfg.train_config()?)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let preds = predict_batch(&bundle, &split.test);
            confusion(&preds, &split.test).map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    print!("{}", summarize(&report));
    if let Some(path) = &ctx.cfg.output {
        write_report_csv(path, &report)?;
    }
    Ok(())
}

/// CSV goes to `--output` with the summary on stdout, or to stdout with the
/// summary on stderr.
fn emit<F>(cfg: &Config, summary: &str, write_csv: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> csv::Result<()>,
{
    let mut out = output(cfg)?;
    write_csv(&mut out).map_err(write_err)?;
    out.flush().map_err(write_err)?;
    if cfg.output.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

fn cmd_cv(ctx: &Ctx) -> Result<(), CliError> {
    let sessions = load_sessions(&ctx.cfg, true)?;
    let report = kfold(&sessions, ctx.cfg.k, ctx.cfg.seed, &ctx.cfg.train_config()?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let a = &report.aggregate;
    let summary = format!(
        "{}-fold cv over {} sessions (seed {})\n\
         score        {:.4} ± {:.4}\n\
         session TP % {:.2} ± {:.2}\n\
         session FP % {:.2} ± {:.2}\n",
        ctx.cfg.k,
        sessions.len(),
        ctx.cfg.seed,
        a.score.mean,
        a.score.std,
        a.tp_rate_session.mean,
        a.tp_rate_session.std,
        a.fp_rate_session.mean,
        a.fp_rate_session.std,
    );
    emit(&ctx.cfg, &summary, |w| write_cv_csv(w, &report))
}

fn cmd_sweep(ctx: &Ctx) -> Result<(), CliError> {
    let sessions = load_sessions(&ctx.cfg, true)?;
    let cells = threshold_sweep(
        &sessions,
        &ctx.cfg.t1_grid,
        &ctx.cfg.t2_grid,
        ctx.cfg.k,
        ctx.cfg.seed,
        &ctx.cfg.train_config()?,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let best = cells
        .iter()
        .max_by(|a, b| a.aggregate.score.mean.total_cmp(&b.aggregate.score.mean))
        .expect("grids are non-empty");
    let summary = format!(
        "{} cells; best mean score {:.4} at t1={} t2={} (session TP {:.2}%, FP {:.2}%)\n",
        cells.len(),
        best.aggregate.score.mean,
        best.t1,
        best.t2,
        best.aggregate.tp_rate_session.mean,
        best.aggregate.fp_rate_session.mean,
    );
    emit(&ctx.cfg, &summary, |w| write_sweep_csv(w, &cells))
}

fn cmd_stream(ctx: &Ctx, input: Option<PathBuf>) -> Result<(), CliError> {
    let bundle = load_bundle(ctx)?;
    let input = input
        .or_else(|| ctx.cfg.clicks.clone())
        .unwrap_or_else(|| PathBuf::from("-"));
    let reader: Box<dyn BufRead> = if input.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(open(&input)?)
    };
    let mut predictor = StreamPredictor::new(&bundle, ctx.cfg.idle_timeout)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut records = LineRecords::new(reader, parse_click_line);
    let mut out = output(&ctx.cfg)?;
    let mut rejects = Vec::new();
    let mut emitted = 0u64;
    let mut buy_sessions = 0u64;
    let mut flush = |preds: Vec<SessionPrediction>, out: &mut dyn Write| -> Result<(), CliError> {
        emitted += preds.len() as u64;
        buy_sessions += preds.iter().filter(|p| p.session_is_buy()).count() as u64;
        write_solution(out, &preds).map_err(write_err)
    };
    while let Some(rec) = records.next_record().map_err(|e| ingest_err(&input, e))? {
        match rec {
            Ok(ev) => {
                let done = predictor.push(ev);
                if !done.is_empty() {
                    flush(done, &mut out)?;
                    out.flush().map_err(write_err)?;
                }
            }
            Err(r) => rejects.push(r),
        }
    }
    flush(predictor.finish(), &mut out)?;
    out.flush().map_err(write_err)?;
    log_rejects(&ctx.cfg, "clicks", &input, &rejects, records.lines_read())?;
    let d = predictor.diagnostics();
    eprintln!(
        "stream: {} events, {} sessions ({} predicted buy), {} late events dropped, {} reordered",
        d.events, emitted, buy_sessions, d.late_events, d.reordered_events
    );
    Ok(())
}

fn cmd_stats(ctx: &Ctx) -> Result<(), CliError> {
    let sessions = load_sessions(&ctx.cfg, true)?;
    let tc = ctx.cfg.train_config()?;
    let table = build_popularity(
        sessions.iter().flat_map(|s| &s.clicks),
        sessions.iter().flat_map(|s| &s.buys),
        tc.buy_basis,
    );
    let rows = stats::compute(&sessions, &tc.features, &table, &tc.bounds);
    let mut out = output(&ctx.cfg)?;
    stats::write_stats_csv(&mut out, &rows).map_err(write_err)?;
    out.flush().map_err(write_err)
}
