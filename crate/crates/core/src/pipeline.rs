//! End-to-end measurement: backend, pools, sweep, analysis and artifacts.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::analysis::memory::Thresholds;
use crate::backend::remote::{RemoteBackend, RemoteOptions};
use crate::backend::Backend;
use crate::corpus::{build_token_pool, load_corpus, TokenPool};
use crate::error::{Error, Result};
use crate::evaluator::{run_sweep, IrrelevantSource, Pools, RunOptions, SweepConfig};
use crate::report::{plot_svg, to_csv, to_json, Palette, PlotOptions, ReportBundle};
use crate::synthetic::{OracleBackend, OracleSpec};

pub const DEFAULT_VOCAB: u32 = 32000;

/// Where the model lives.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    /// Program and arguments speaking the protocol on stdin/stdout.
    Exec(Vec<String>),
    Tcp(String),
    Oracle(OracleSpec),
}

impl FromStr for BackendSpec {
    type Err = String;

    /// `exec:<command line>`, `tcp:<host:port>` or `oracle:<oracle spec>`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (scheme, rest) = s.split_once(':').ok_or_else(|| format!("backend spec {s:?} has no scheme"))?;
        match scheme {
            "exec" => BackendSpec::exec(rest),
            "tcp" if !rest.is_empty() => Ok(BackendSpec::Tcp(rest.to_string())),
            "oracle" => rest.parse().map(BackendSpec::Oracle).map_err(|e: crate::synthetic::OracleSpecError| e.to_string()),
            _ => Err(format!("backend spec {s:?}: expected exec:, tcp: or oracle:")),
        }
    }
}

impl BackendSpec {
    /// Split a shell-style command line.
    pub fn exec(command: &str) -> std::result::Result<Self, String> {
        match shlex::split(command) {
            Some(argv) if !argv.is_empty() => Ok(BackendSpec::Exec(argv)),
            _ => Err(format!("cannot parse backend command {command:?}")),
        }
    }

    pub fn connect(&self, options: RemoteOptions) -> Result<Box<dyn Backend>> {
        Ok(match self {
            BackendSpec::Exec(argv) => Box::new(RemoteBackend::spawn(argv, options)?),
            BackendSpec::Tcp(addr) => Box::new(RemoteBackend::connect(addr, options)?),
            BackendSpec::Oracle(spec) => {
                Box::new(OracleBackend::new(spec.clone()).map_err(|e| Error::Config(e.to_string()))?)
            }
        })
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Exec(argv) => {
                let line = shlex::try_join(argv.iter().map(String::as_str)).map_err(|_| fmt::Error)?;
                write!(f, "exec:{line}")
            }
            BackendSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
            BackendSpec::Oracle(spec) => write!(f, "oracle:{spec}"),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything `fc measure` needs. Also the schema of `--config` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub backend: Option<BackendSpec>,
    /// Corpus manifest for the copy pool.
    pub corpus: Option<PathBuf>,
    /// Corpus manifest for irrelevant prefixes.
    pub irrelevant: Option<PathBuf>,
    pub irrelevant_random: bool,
    /// Size of a uniform-random copy pool, used instead of a corpus.
    pub random_pool: Option<usize>,
    pub vocab: u32,
    pub pool_cache: Option<PathBuf>,
    /// Defaults to the backend context.
    pub max_len: Option<usize>,
    pub points: usize,
    pub repeats: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub logprob: bool,
    pub interpolate: bool,
    pub separator_token: Option<u32>,
    pub jobs: usize,
    pub palette: Palette,
    pub title: Option<String>,
    pub fine_acc: f64,
    pub coarse_margin: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        MeasureConfig {
            backend: None,
            corpus: None,
            irrelevant: None,
            irrelevant_random: false,
            random_pool: None,
            vocab: DEFAULT_VOCAB,
            pool_cache: None,
            max_len: None,
            points: crate::evaluator::DEFAULT_POINTS,
            repeats: crate::evaluator::DEFAULT_REPEATS,
            seed: 0,
            out: PathBuf::from("."),
            logprob: false,
            interpolate: false,
            separator_token: None,
            jobs: 1,
            palette: Palette::Standard,
            title: None,
            fine_acc: t.fine_acc,
            coarse_margin: t.coarse_margin,
        }
    }
}

impl MeasureConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            fine_acc: self.fine_acc,
            coarse_margin: self.coarse_margin,
            interpolate: self.interpolate,
            ..Thresholds::default()
        }
    }

    fn check(&self) -> Result<()> {
        match (&self.corpus, self.random_pool) {
            (Some(_), Some(_)) => return Err(Error::Config("give either a corpus or --random-pool, not both".into())),
            (None, None) => return Err(Error::Config("no copy pool: give a corpus manifest or --random-pool".into())),
            (None, Some(0)) => return Err(Error::Config("--random-pool must be positive".into())),
            _ => {}
        }
        if self.irrelevant.is_some() && self.irrelevant_random {
            return Err(Error::Config("give either an irrelevant corpus or --irrelevant-random, not both".into()));
        }
        if self.vocab <= crate::synthetic::BYTE_OFFSET {
            return Err(Error::Config(format!("vocab must exceed {}", crate::synthetic::BYTE_OFFSET)));
        }
        if !(0.0..=1.0).contains(&self.fine_acc) || !(0.0..=1.0).contains(&self.coarse_margin) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Rendered outputs of one measurement.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub bundle: ReportBundle,
    pub json: String,
    pub csv: String,
    /// Absent when the curve has fewer than two valid points.
    pub svg: Option<String>,
}

impl Artifacts {
    pub fn render(bundle: ReportBundle, plot: &PlotOptions) -> Self {
        let svg = plot_svg(&bundle.curve, bundle.analysis.lengths(), plot).ok();
        Artifacts { json: to_json(&bundle), csv: to_csv(&bundle.curve), svg, bundle }
    }

    /// Write `report.json`, `curve.csv` and, when available, `curve.svg`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|source| io_error(dir, source))?;
        let mut files = vec![("report.json", &self.json), ("curve.csv", &self.csv)];
        if let Some(svg) = &self.svg {
            files.push(("curve.svg", svg));
        }
        files
            .into_iter()
            .map(|(name, body)| {
                let path = dir.join(name);
                std::fs::write(&path, body).map_err(|source| io_error(&path, source))?;
                Ok(path)
            })
            .collect()
    }
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn corpus_pool<B: Backend + ?Sized>(manifest: &Path, backend: &B, cache: Option<&Path>) -> Result<TokenPool> {
    let corpus = load_corpus(manifest)?;
    let fingerprint = backend.info().fingerprint();
    if let Some(cache) = cache.filter(|c| c.exists()) {
        let file = File::open(cache).map_err(|source| io_error(cache, source))?;
        let pool = TokenPool::read_cache(BufReader::new(file), corpus.pool_label.clone())?;
        if pool.tokenizer_fingerprint == fingerprint {
            return Ok(pool);
        }
    }
    let pool = build_token_pool(&corpus, backend)?;
    if let Some(cache) = cache {
        let file = File::create(cache).map_err(|source| io_error(cache, source))?;
        pool.write_cache(BufWriter::new(file)).map_err(|source| io_error(cache, source))?;
    }
    Ok(pool)
}

/// Build pools, run the sweep and render the report.
pub fn measure<B: Backend + ?Sized>(config: &MeasureConfig, backend: &B, options: &RunOptions<'_>) -> Result<Artifacts> {
    config.check()?;
    let info = backend.info();
    let max_len = match (config.max_len, info.max_context.tokens()) {
        (Some(l), _) => l,
        (None, Some(max)) => usize::try_from(max).map_err(|_| Error::Config("backend context too large".into()))?,
        (None, None) => return Err(Error::Config("backend context is unbounded; give --max-len".into())),
    };

    let copy = match (&config.corpus, config.random_pool) {
        (Some(manifest), _) => corpus_pool(manifest, backend, config.pool_cache.as_deref())?,
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(config.seed, &[u64::MAX]));
            let mut pool = TokenPool::uniform_random(n, config.vocab, &mut rng);
            pool.label = format!("random/{n}");
            pool
        }
        (None, None) => unreachable!("checked above"),
    };
    let irrelevant_pool = match &config.irrelevant {
        Some(manifest) => Some(corpus_pool(manifest, backend, None)?),
        None => None,
    };
    let irrelevant = match (&irrelevant_pool, config.irrelevant_random) {
        (Some(p), _) => IrrelevantSource::Pool(p),
        (None, true) => IrrelevantSource::Random { vocab: config.vocab },
        (None, false) => IrrelevantSource::SamePool,
    };

    let sweep = SweepConfig {
        points: config.points,
        repeats: config.repeats,
        master_seed: config.seed,
        collect_logprob: config.logprob,
        ..SweepConfig::new(max_len)
    };
    let curve = run_sweep(&sweep, backend, &Pools { copy: &copy, irrelevant }, options)?;
    let bundle = ReportBundle::new(curve, &config.thresholds());
    let plot = PlotOptions { palette: config.palette, title: config.title.clone(), ..PlotOptions::default() };
    Ok(Artifacts::render(bundle, &plot))
}
