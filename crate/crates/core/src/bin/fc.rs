//! `fc`: measure, analyze, plot and compare forgetting curves.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use forgetting_curve::analysis::memory::Thresholds;
use forgetting_curve::backend::protocol::serve;
use forgetting_curve::backend::remote::{RemoteBackend, RemoteOptions};
use forgetting_curve::backend::{Backend, BackendError};
use forgetting_curve::error::{Error, Result};
use forgetting_curve::evaluator::RunOptions;
use forgetting_curve::pipeline::{measure, BackendSpec, MeasureConfig};
use forgetting_curve::report::compare::{compare_report, overlay_svg};
use forgetting_curve::report::{canonical_json, from_json, plot_svg, to_json, Palette, PlotOptions, ReportBundle};
use forgetting_curve::synthetic::{OracleBackend, OracleSpec};
use forgetting_curve::{selftest, TaskInstance};

#[derive(Parser)]
#[command(name = "fc", version, about = "Forgetting-curve harness: copy vs. LM accuracy across context lengths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write report.json, curve.csv and curve.svg.
    Measure(Box<MeasureArgs>),
    /// Re-extract memory lengths from a report.
    Analyze(AnalyzeArgs),
    /// Render a report as SVG.
    Plot(PlotArgs),
    /// Per-length ANOVA and Kruskal-Wallis across reports.
    Compare(CompareArgs),
    /// Run the synthetic acceptance checks.
    Selftest(SelftestArgs),
    /// Serve a built-in oracle over the JSON-lines protocol.
    Serve(ServeArgs),
}

#[derive(Args)]
#[group(id = "backend", multiple = false)]
struct BackendArgs {
    /// Built-in oracle, e.g. induction:w=512,p=0.3,m=8.
    #[arg(long, group = "backend")]
    oracle: Option<String>,
    /// Command line of a protocol backend speaking on stdin/stdout.
    #[arg(long, group = "backend")]
    backend_exec: Option<String>,
    /// host:port of a protocol backend.
    #[arg(long, group = "backend")]
    backend_tcp: Option<String>,
}

impl BackendArgs {
    /// Flags first, then `FC_BACKEND`.
    fn spec(&self) -> Result<Option<BackendSpec>> {
        let parsed = if let Some(o) = &self.oracle {
            format!("oracle:{o}").parse()
        } else if let Some(cmd) = &self.backend_exec {
            BackendSpec::exec(cmd)
        } else if let Some(addr) = &self.backend_tcp {
            Ok(BackendSpec::Tcp(addr.clone()))
        } else {
            match std::env::var("FC_BACKEND") {
                Ok(v) if !v.trim().is_empty() => v.parse(),
                _ => return Ok(None),
            }
        };
        parsed.map(Some).map_err(Error::Config)
    }
}

#[derive(Args)]
struct MeasureArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// JSON file with the same keys as the flags (snake_case); flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus manifest for the copy pool.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus manifest for irrelevant prefixes.
    #[arg(long)]
    irrelevant: Option<PathBuf>,
    /// Uniform-random irrelevant prefixes.
    #[arg(long)]
    irrelevant_random: bool,
    /// Use a uniform-random copy pool of N tokens.
    #[arg(long, value_name = "N")]
    random_pool: Option<usize>,
    #[arg(long)]
    vocab: Option<u32>,
    /// Token pool cache file.
    #[arg(long)]
    pool_cache: Option<PathBuf>,
    /// Largest test length (default: backend context).
    #[arg(long)]
    max_len: Option<usize>,
    /// Grid points (default 32).
    #[arg(long)]
    points: Option<usize>,
    /// Repeats per grid point (default 10).
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Collect log-probabilities and report perplexity.
    #[arg(long)]
    logprob: bool,
    /// Interpolate threshold crossings between grid points.
    #[arg(long)]
    interpolate: bool,
    /// Token id used when the backend has no bos/eos.
    #[arg(long)]
    separator_token: Option<u32>,
    /// Concurrent requests, for backends that allow it.
    #[arg(long)]
    jobs: Option<usize>,
    /// standard or color-blind.
    #[arg(long)]
    palette: Option<Palette>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    fine_acc: Option<f64>,
    #[arg(long)]
    coarse_margin: Option<f64>,
    /// Write every generated instance as JSON lines.
    #[arg(long)]
    dump_instances: Option<PathBuf>,
    /// No progress output.
    #[arg(long, short)]
    quiet: bool,
    /// Seconds to wait for the backend handshake.
    #[arg(long, default_value_t = 600)]
    handshake_timeout: u64,
    /// Seconds to wait for each backend reply (default: forever).
    #[arg(long)]
    request_timeout: Option<u64>,
}

impl MeasureArgs {
    fn config(&self) -> Result<MeasureConfig> {
        let mut c = match &self.config {
            Some(path) => serde_json::from_str(&read(path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => MeasureConfig::default(),
        };
        if let Some(spec) = self.backend.spec()? {
            c.backend = Some(spec);
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone().into();
                }
            )*};
        }
        take!(corpus, irrelevant, random_pool, pool_cache, max_len, separator_token, title);
        if let Some(v) = self.vocab {
            c.vocab = v;
        }
        if let Some(v) = self.points {
            c.points = v;
        }
        if let Some(v) = self.repeats {
            c.repeats = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.jobs {
            c.jobs = v;
        }
        if let Some(v) = self.palette {
            c.palette = v;
        }
        if let Some(v) = self.fine_acc {
            c.fine_acc = v;
        }
        if let Some(v) = self.coarse_margin {
            c.coarse_margin = v;
        }
        c.irrelevant_random |= self.irrelevant_random;
        c.logprob |= self.logprob;
        c.interpolate |= self.interpolate;
        Ok(c)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    report: PathBuf,
    #[arg(long)]
    fine_acc: Option<f64>,
    #[arg(long)]
    coarse_margin: Option<f64>,
    #[arg(long)]
    interpolate: bool,
    /// Write the re-analyzed report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    report: PathBuf,
    #[arg(long, default_value = "curve.svg")]
    out: PathBuf,
    #[arg(long, default_value = "standard")]
    palette: Palette,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    reports: Vec<PathBuf>,
    /// Comma-separated labels, one per report.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Directory for stats.json and overlay.svg.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value = "standard")]
    palette: Palette,
}

#[derive(Args)]
struct SelftestArgs {
    /// Keep the step-memory oracle in-process instead of behind the protocol.
    #[arg(long)]
    in_process: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Oracle spec, e.g. decay:w1=256,w2=1024,p=0.3.
    #[arg(long)]
    oracle: String,
    /// Listen on this address instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn load_report(path: &Path) -> Result<ReportBundle> {
    Ok(from_json(&read(path)?)?)
}

fn summary(bundle: &ReportBundle) -> String {
    match bundle.analysis.lengths() {
        Some(m) => {
            let mut s = format!("fine memory length:   {}\ncoarse memory length: {}\n", m.fine_display, m.coarse_display);
            for w in &m.warnings {
                s.push_str(&format!("warning: {w}\n"));
            }
            s
        }
        None => format!("memory lengths indeterminate: {:?}\n", bundle.analysis),
    }
}

fn cmd_measure(args: &MeasureArgs) -> Result<()> {
    let config = args.config()?;
    let spec = config.backend.clone().ok_or_else(|| {
        BackendError::Unavailable("none given; use --oracle, --backend-exec, --backend-tcp or FC_BACKEND".into())
    })?;
    let options = RemoteOptions {
        handshake_timeout: Duration::from_secs(args.handshake_timeout),
        request_timeout: args.request_timeout.map(Duration::from_secs),
    };
    let backend = spec.connect(options)?;

    let dump = match &args.dump_instances {
        Some(path) => {
            let file = File::create(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
            Some(Mutex::new(BufWriter::new(file)))
        }
        None => None,
    };
    let sink = |t: &TaskInstance| {
        if let Some(w) = &dump {
            let mut w = w.lock().expect("dump lock");
            let _ = serde_json::to_writer(&mut *w, t);
            let _ = w.write_all(b"\n");
        }
    };
    let run = RunOptions {
        jobs: config.jobs,
        progress: !args.quiet,
        separator: config.separator_token,
        instance_sink: dump.as_ref().map(|_| &sink as &(dyn Fn(&TaskInstance) + Sync)),
    };
    let artifacts = measure(&config, backend.as_ref(), &run)?;
    if let Some(w) = &dump {
        w.lock().expect("dump lock").flush().map_err(|source| Error::Io { path: "instance dump".into(), source })?;
    }
    let written = artifacts.write_to(&config.out)?;
    if artifacts.svg.is_none() {
        eprintln!("warning: fewer than two valid grid points; curve.svg not written");
    }
    print!("{}", summary(&artifacts.bundle));
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let mut bundle = load_report(&args.report)?;
    let previous = match &bundle.analysis {
        forgetting_curve::report::Analysis::Ok(m) => m.thresholds,
        forgetting_curve::report::Analysis::Indeterminate { thresholds, .. } => *thresholds,
    };
    let thresholds = Thresholds {
        fine_acc: args.fine_acc.unwrap_or(previous.fine_acc),
        coarse_margin: args.coarse_margin.unwrap_or(previous.coarse_margin),
        interpolate: args.interpolate || previous.interpolate,
        ..previous
    };
    bundle.reanalyze(&thresholds);
    print!("{}", summary(&bundle));
    if let Some(out) = &args.out {
        write(out, &to_json(&bundle))?;
    }
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let bundle = load_report(&args.report)?;
    let options = PlotOptions { palette: args.palette, title: args.title.clone(), ..PlotOptions::default() };
    let svg = plot_svg(&bundle.curve, bundle.analysis.lengths(), &options)?;
    write(&args.out, &svg)
}

fn default_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(Path::file_name) {
        Some(dir) if stem == "report" => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    if args.reports.len() < 2 {
        return Err(Error::Config(format!("compare needs at least 2 reports, got {}", args.reports.len())));
    }
    let labels = match &args.labels {
        Some(l) if l.len() != args.reports.len() => {
            return Err(Error::Config(format!("{} labels for {} reports", l.len(), args.reports.len())))
        }
        Some(l) => l.clone(),
        None => args.reports.iter().map(|p| default_label(p)).collect(),
    };
    let bundles = args.reports.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    let comparison = compare_report(&labels, &bundles)?;
    let options = PlotOptions { palette: args.palette, ..PlotOptions::default() };
    let svg = overlay_svg(&labels, &bundles, &options)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|source| Error::Io { path: args.out.display().to_string(), source })?;
    write(&args.out.join("stats.json"), &canonical_json(&comparison))?;
    write(&args.out.join("overlay.svg"), &svg)?;
    print!("{}", comparison.table());
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> Result<bool> {
    let remote = if args.in_process {
        None
    } else {
        let exe = std::env::current_exe().map_err(|source| Error::Io { path: "current executable".into(), source })?;
        let argv = vec![
            exe.display().to_string(),
            "serve".into(),
            "--oracle".into(),
            "induction:w=512,p=0.3,m=8".into(),
        ];
        Some(RemoteBackend::spawn(&argv, RemoteOptions::default())?)
    };
    let checks = selftest::run_all(remote.as_ref().map(|r| r as &dyn Backend));
    print!("{}", selftest::table(&checks));
    Ok(checks.iter().all(|c| c.passed))
}

fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let spec: OracleSpec = args.oracle.parse().map_err(|e: forgetting_curve::synthetic::OracleSpecError| Error::Config(e.to_string()))?;
    let backend = OracleBackend::new(spec).map_err(|e| Error::Config(e.to_string()))?;
    let io = |source| Error::Io { path: "protocol stream".into(), source };
    match &args.listen {
        None => serve(&backend, std::io::stdin().lock(), std::io::stdout().lock()).map_err(io),
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(io)?;
            eprintln!("listening on {}", listener.local_addr().map_err(io)?);
            std::thread::scope(|scope| {
                for stream in listener.incoming() {
                    let stream = stream.map_err(io)?;
                    let backend = &backend;
                    scope.spawn(move || {
                        if let Ok(reader) = stream.try_clone() {
                            let _ = serve(backend, BufReader::new(reader), stream);
                        }
                    });
                }
                Ok(())
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Measure(a) => cmd_measure(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Selftest(a) => match cmd_selftest(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
