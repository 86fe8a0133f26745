//! Grid sweep: sample, score and aggregate copy/LM accuracy per length.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{resolve_delimiters, Backend, BackendError, BackendInfo, ScoreResult};
use crate::corpus::{sample_copy_and_irrelevant, sample_span, CorpusError, TokenPool};
use crate::seed;
use crate::taskgen::{
    build_copy_instance, build_lm_instance, plan_grid, target_len_for, TaskError, TaskInstance, TaskKind,
    TaskMeta,
};

pub const DEFAULT_POINTS: usize = 32;
pub const DEFAULT_REPEATS: usize = 10;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("max length {max_len} exceeds the backend context of {max_context} tokens")]
    ContextTooShort { max_len: usize, max_context: u64 },
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("log-probabilities requested but the backend does not provide them")]
    LogprobUnsupported,
    #[error("score result has no scored positions")]
    EmptyScoredSet,
    #[error("curve carries no log-probabilities")]
    LogprobAbsent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub max_len: usize,
    pub points: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub collect_logprob: bool,
    pub copy_pool: String,
    pub irrelevant_pool: String,
}

impl SweepConfig {
    pub fn new(max_len: usize) -> Self {
        SweepConfig {
            max_len,
            points: DEFAULT_POINTS,
            repeats: DEFAULT_REPEATS,
            master_seed: 0,
            collect_logprob: false,
            copy_pool: String::new(),
            irrelevant_pool: String::new(),
        }
    }

    pub fn validate(&self) -> Result<Vec<usize>, SweepError> {
        if self.repeats == 0 {
            return Err(SweepError::InvalidConfig("repeats must be at least 1".into()));
        }
        Ok(plan_grid(self.max_len, self.points)?)
    }
}

/// Where irrelevant prefixes come from.
#[derive(Debug, Clone, Copy)]
pub enum IrrelevantSource<'a> {
    /// The copy pool, disjoint from the copy target.
    SamePool,
    Pool(&'a TokenPool),
    /// Uniform token ids in `[3, vocab)`.
    Random { vocab: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct Pools<'a> {
    pub copy: &'a TokenPool,
    pub irrelevant: IrrelevantSource<'a>,
}

impl<'a> Pools<'a> {
    pub fn shared(pool: &'a TokenPool) -> Self {
        Pools { copy: pool, irrelevant: IrrelevantSource::SamePool }
    }

    fn irrelevant_label(&self) -> String {
        match self.irrelevant {
            IrrelevantSource::SamePool => self.copy.label.clone(),
            IrrelevantSource::Pool(p) => p.label.clone(),
            IrrelevantSource::Random { vocab } => format!("random/{vocab}"),
        }
    }
}

/// Execution options that do not affect results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Worker threads; only honored when the backend supports concurrency.
    pub jobs: usize,
    /// Progress lines on standard error.
    pub progress: bool,
    /// Substitute for missing bos/eos ids.
    pub separator: Option<u32>,
    /// Receives every generated instance.
    pub instance_sink: Option<&'a (dyn Fn(&TaskInstance) + Sync)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySample {
    pub grid_length: usize,
    pub kind: TaskKind,
    pub repeat_index: usize,
    pub n_scored: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub mean_nll: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub copy_mean: f64,
    pub copy_std: f64,
    pub lm_mean: f64,
    pub lm_std: f64,
    pub copy_samples: Vec<f64>,
    pub lm_samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copy_nll: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_nll: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copy_perplexity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub grid_length: usize,
    pub s_len: usize,
    pub n_scored: usize,
    pub status: PointStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stats: Option<PointStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub aggregation: String,
    pub std: String,
    pub length_unit: String,
}

impl Default for CurveMetadata {
    fn default() -> Self {
        CurveMetadata {
            aggregation: "mean of per-repeat accuracies".into(),
            std: "sample standard deviation (divisor R-1, 0 when R=1)".into(),
            length_unit: "total input tokens including delimiters".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCurve {
    pub backend_info: BackendInfo,
    pub config: SweepConfig,
    pub metadata: CurveMetadata,
    pub points: Vec<CurvePoint>,
}

impl ForgettingCurve {
    pub fn grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.grid_length).collect()
    }
}

/// Fraction of correct flags.
pub fn accuracy_of(result: &ScoreResult) -> Result<f64, SweepError> {
    if result.correct.is_empty() {
        return Err(SweepError::EmptyScoredSet);
    }
    Ok(result.n_correct() as f64 / result.correct.len() as f64)
}

/// `(ℓ, exp(mean over repeats of the LM instances' mean NLL))` per point.
pub fn perplexity_series(curve: &ForgettingCurve) -> Result<Vec<(usize, f64)>, SweepError> {
    series_of(curve, |s| s.lm_perplexity)
}

/// Same as [`perplexity_series`] for the copy instances.
pub fn copy_perplexity_series(curve: &ForgettingCurve) -> Result<Vec<(usize, f64)>, SweepError> {
    series_of(curve, |s| s.copy_perplexity)
}

fn series_of(curve: &ForgettingCurve, f: impl Fn(&PointStats) -> Option<f64>) -> Result<Vec<(usize, f64)>, SweepError> {
    curve
        .points
        .iter()
        .filter_map(|p| p.stats.as_ref().map(|s| (p.grid_length, s)))
        .map(|(l, s)| f(s).map(|ppl| (l, ppl)).ok_or(SweepError::LogprobAbsent))
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Job {
    grid_index: usize,
    repeat: usize,
}

type KindOutcome = Result<AccuracySample, String>;

struct JobOutcome {
    grid_index: usize,
    repeat: usize,
    copy: KindOutcome,
    lm: KindOutcome,
}

struct Runner<'a, B: ?Sized> {
    backend: &'a B,
    pools: &'a Pools<'a>,
    config: &'a SweepConfig,
    grid: &'a [usize],
    bos: u32,
    eos: u32,
    sink: Option<&'a (dyn Fn(&TaskInstance) + Sync)>,
}

impl<B: Backend + ?Sized> Runner<'_, B> {
    fn instances(&self, job: &Job) -> Result<(TaskInstance, TaskInstance), SweepError> {
        let length = self.grid[job.grid_index];
        let s_len = target_len_for(length);
        let seed = seed::derive(self.config.master_seed, &[job.grid_index as u64, job.repeat as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = self.pools.copy;
        let (s, i, s_span, i_span) = match self.pools.irrelevant {
            IrrelevantSource::SamePool => {
                let (s, i, (ss, is)) = sample_copy_and_irrelevant(pool, s_len, s_len, &mut rng)?;
                (s, i, ss, Some(is))
            }
            IrrelevantSource::Pool(other) => {
                let ss = sample_span(pool.len(), s_len, &mut rng)?;
                let is = sample_span(other.len(), s_len, &mut rng)?;
                (pool.slice(ss).to_vec(), other.slice(is).to_vec(), ss, Some(is))
            }
            IrrelevantSource::Random { vocab } => {
                let ss = sample_span(pool.len(), s_len, &mut rng)?;
                let lo = crate::synthetic::BYTE_OFFSET.min(vocab.saturating_sub(1));
                let i = (0..s_len).map(|_| rng.random_range(lo..vocab)).collect();
                (pool.slice(ss).to_vec(), i, ss, None)
            }
        };
        let meta = TaskMeta {
            test_length: length,
            repeat_index: job.repeat,
            seed,
            copy_span: Some(s_span),
            irrelevant_span: i_span,
        };
        let copy = build_copy_instance(&s, self.bos, self.eos, meta.clone())?;
        let lm = build_lm_instance(&i, &s, self.bos, self.eos, meta)?;
        Ok((copy, lm))
    }

    fn score(&self, instance: &TaskInstance) -> KindOutcome {
        let want = self.config.collect_logprob;
        let result = self
            .backend
            .score(&instance.ids, &instance.scored_positions, want)
            .map_err(|e| e.to_string())?;
        let accuracy = accuracy_of(&result).map_err(|e| e.to_string())?;
        let mean_nll = match (&result.logprob, want) {
            (Some(lp), true) => Some(-lp.iter().sum::<f64>() / lp.len() as f64),
            (None, true) => return Err("backend omitted requested log-probabilities".into()),
            _ => None,
        };
        Ok(AccuracySample {
            grid_length: instance.meta.test_length,
            kind: instance.kind,
            repeat_index: instance.meta.repeat_index,
            n_scored: result.correct.len(),
            n_correct: result.n_correct(),
            accuracy,
            mean_nll,
        })
    }

    fn run(&self, job: Job) -> Result<JobOutcome, SweepError> {
        let (copy, lm) = self.instances(&job)?;
        if let Some(sink) = self.sink {
            sink(&copy);
            sink(&lm);
        }
        Ok(JobOutcome { grid_index: job.grid_index, repeat: job.repeat, copy: self.score(&copy), lm: self.score(&lm) })
    }
}

fn report_progress(o: &JobOutcome) {
    for (kind, r) in [("copy", &o.copy), ("lm", &o.lm)] {
        match r {
            Ok(s) => eprintln!("len={} rep={} kind={kind} acc={:.4}", s.grid_length, o.repeat, s.accuracy),
            Err(e) => eprintln!("grid={} rep={} kind={kind} failed: {e}", o.grid_index, o.repeat),
        }
    }
}

/// Run the full sweep. Backend failures mark their grid point as failed;
/// sampling failures abort the sweep.
pub fn run_sweep<B: Backend + ?Sized>(
    config: &SweepConfig,
    backend: &B,
    pools: &Pools<'_>,
    options: &RunOptions<'_>,
) -> Result<ForgettingCurve, SweepError> {
    let grid = config.validate()?;
    let info = backend.info();
    if let Some(max) = info.max_context.tokens() {
        if config.max_len as u64 > max {
            return Err(SweepError::ContextTooShort { max_len: config.max_len, max_context: max });
        }
    }
    if config.collect_logprob && !info.supports_logprob {
        return Err(SweepError::LogprobUnsupported);
    }
    let (bos, eos) = resolve_delimiters(info, options.separator)?;
    let runner = Runner { backend, pools, config, grid: &grid, bos, eos, sink: options.instance_sink };

    let jobs: Vec<Job> = (0..grid.len())
        .flat_map(|g| (0..config.repeats).map(move |r| Job { grid_index: g, repeat: r }))
        .collect();
    let total = jobs.len();
    let mut outcomes: BTreeMap<(usize, usize), JobOutcome> = BTreeMap::new();
    let mut collect = |o: JobOutcome| {
        if options.progress {
            report_progress(&o);
        }
        outcomes.insert((o.grid_index, o.repeat), o);
    };

    let workers = if info.supports_concurrent { options.jobs.clamp(1, total.max(1)) } else { 1 };
    if workers == 1 {
        for job in jobs {
            collect(runner.run(job)?);
        }
    } else {
        let next = AtomicUsize::new(0);
        let jobs = &jobs;
        let runner = &runner;
        let next = &next;
        thread::scope(|scope| -> Result<(), SweepError> {
            let (tx, rx) = mpsc::channel();
            for _ in 0..workers {
                let tx = tx.clone();
                scope.spawn(move || loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(k) else { break };
                    let result = runner.run(Job { grid_index: job.grid_index, repeat: job.repeat });
                    let fatal = result.is_err();
                    if tx.send(result).is_err() || fatal {
                        next.store(jobs.len(), Ordering::Relaxed);
                        break;
                    }
                });
            }
            drop(tx);
            for result in rx {
                collect(result?);
            }
            Ok(())
        })?;
    }

    let points = grid
        .iter()
        .enumerate()
        .map(|(gi, &length)| {
            let per_repeat: Vec<&JobOutcome> = (0..config.repeats).map(|r| &outcomes[&(gi, r)]).collect();
            aggregate(length, &per_repeat)
        })
        .collect();

    let mut config = config.clone();
    config.copy_pool = pools.copy.label.clone();
    config.irrelevant_pool = pools.irrelevant_label();
    Ok(ForgettingCurve { backend_info: info.clone(), config, metadata: CurveMetadata::default(), points })
}

fn aggregate(length: usize, outcomes: &[&JobOutcome]) -> CurvePoint {
    let s_len = target_len_for(length);
    let n_scored = s_len.div_ceil(2);
    let failure = outcomes
        .iter()
        .flat_map(|o| [&o.copy, &o.lm])
        .find_map(|r| r.as_ref().err());
    if let Some(e) = failure {
        return CurvePoint {
            grid_length: length,
            s_len,
            n_scored,
            status: PointStatus::Failed,
            error: Some(e.clone()),
            stats: None,
        };
    }
    let ok = |r: &KindOutcome| r.as_ref().expect("failures handled above").clone();
    let copy: Vec<AccuracySample> = outcomes.iter().map(|o| ok(&o.copy)).collect();
    let lm: Vec<AccuracySample> = outcomes.iter().map(|o| ok(&o.lm)).collect();
    let acc = |v: &[AccuracySample]| v.iter().map(|s| s.accuracy).collect::<Vec<_>>();
    let nll = |v: &[AccuracySample]| v.iter().map(|s| s.mean_nll).collect::<Option<Vec<_>>>();
    let ppl = |v: &Option<Vec<f64>>| v.as_ref().map(|n| (n.iter().sum::<f64>() / n.len() as f64).exp());

    let (copy_samples, lm_samples) = (acc(&copy), acc(&lm));
    let (copy_mean, copy_std) = mean_std(&copy_samples);
    let (lm_mean, lm_std) = mean_std(&lm_samples);
    let (copy_nll, lm_nll) = (nll(&copy), nll(&lm));
    CurvePoint {
        grid_length: length,
        s_len,
        n_scored,
        status: PointStatus::Ok,
        error: None,
        stats: Some(PointStats {
            copy_mean,
            copy_std,
            lm_mean,
            lm_std,
            copy_samples,
            lm_samples,
            copy_perplexity: ppl(&copy_nll),
            lm_perplexity: ppl(&lm_nll),
            copy_nll,
            lm_nll,
        }),
    }
}
