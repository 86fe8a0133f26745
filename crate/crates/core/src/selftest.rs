//! Built-in acceptance checks against the synthetic oracles.

use std::sync::Mutex;
use std::time::Instant;

use crate::analysis::memory::Thresholds;
use crate::backend::Backend;
use crate::evaluator::{copy_perplexity_series, perplexity_series, run_sweep, Pools, RunOptions, SweepConfig};
use crate::pipeline::{measure, MeasureConfig};
use crate::report::ReportBundle;
use crate::synthetic::{OracleBackend, OracleSpec};
use crate::{anova_oneway, chi2_sf, f_sf, kruskal_wallis, ForgettingCurve, TaskInstance, TokenPool};

pub const POOL_SIZE: usize = 200_000;
pub const VOCAB: u32 = 32_000;
pub const SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

pub fn random_pool(seed: u64) -> TokenPool {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    TokenPool::uniform_random(POOL_SIZE, VOCAB, &mut rng)
}

fn oracle(spec: OracleSpec) -> OracleBackend {
    OracleBackend::new(spec).expect("built-in oracle specs are valid")
}

fn sweep<B: Backend + ?Sized>(backend: &B, max_len: usize, points: usize, seed: u64, logprob: bool) -> ForgettingCurve {
    let pool = random_pool(seed);
    let config = SweepConfig { points, master_seed: seed, collect_logprob: logprob, ..SweepConfig::new(max_len) };
    run_sweep(&config, backend, &Pools::shared(&pool), &RunOptions::default()).expect("synthetic sweep succeeds")
}

fn within(x: usize, target: usize, tol: usize) -> bool {
    x.abs_diff(target) <= tol
}

fn lengths_of(curve: &ForgettingCurve) -> Result<(usize, usize), String> {
    let b = ReportBundle::new(curve.clone(), &Thresholds::default());
    b.analysis.lengths().map(|m| (m.fine, m.coarse)).ok_or_else(|| "analysis is indeterminate".to_string())
}

/// Induction oracle (w=512, p=0.3, m=8), l=4096, n=16: both lengths within
/// one grid step of 2w+3.
pub fn step_memory(backend: Option<&dyn Backend>) -> Check {
    let start = Instant::now();
    let local = oracle(OracleSpec::induction(512, 0.3));
    let backend: &dyn Backend = backend.unwrap_or(&local);
    let curve = sweep(backend, 4096, 16, SEED, false);
    let secs = start.elapsed().as_secs_f64();
    let (passed, detail) = match lengths_of(&curve) {
        Ok((fine, coarse)) => (
            within(fine, 1027, 256) && within(coarse, 1027, 256) && secs < 60.0,
            format!("fine={fine} coarse={coarse} target=1027±256 time={secs:.1}s"),
        ),
        Err(e) => (false, e),
    };
    Check::new("step memory (induction oracle)", passed, detail)
}

/// Decay oracle (w1=256, w2=1024, p=0.3): fine near 2·w1+3, coarse near
/// 2·w2+3, copy accuracy falling across the ramp.
pub fn graded_memory() -> Check {
    let curve = sweep(&oracle(OracleSpec::decay(256, 1024, 0.3)), 4096, 16, SEED, false);
    let ramp: Vec<f64> = curve
        .points
        .iter()
        .filter(|p| p.s_len + 1 > 256 && p.s_len + 1 < 1024)
        .filter_map(|p| p.stats.as_ref().map(|s| s.copy_mean))
        .collect();
    let decreasing = ramp.len() >= 2 && ramp.windows(2).all(|w| w[1] - w[0] < 0.03);
    let (passed, detail) = match lengths_of(&curve) {
        Ok((fine, coarse)) => (
            within(fine, 515, 256) && within(coarse, 2051, 256) && decreasing,
            format!("fine={fine} (515±256) coarse={coarse} (2051±256) ramp_decreasing={decreasing}"),
        ),
        Err(e) => (false, e),
    };
    Check::new("graded memory (decay oracle)", passed, detail)
}

/// pure_lm(p=0.3): no memory and every mean within 0.10 of p.
pub fn amnesia() -> Check {
    let curve = sweep(&oracle(OracleSpec::pure_lm(0.3)), 4096, 8, SEED, false);
    let worst = curve
        .points
        .iter()
        .filter_map(|p| p.stats.as_ref())
        .flat_map(|s| [s.copy_mean, s.lm_mean])
        .map(|m| (m - 0.3).abs())
        .fold(0.0, f64::max);
    let min_scored = curve.points.iter().map(|p| p.n_scored).min().unwrap_or(0);
    let (passed, detail) = match lengths_of(&curve) {
        Ok((fine, coarse)) => (
            fine == 0 && coarse == 0 && worst <= 0.10 && min_scored >= 100,
            format!("fine={fine} coarse={coarse} max|mean-0.3|={worst:.4} min_n_scored={min_scored}"),
        ),
        Err(e) => (false, e),
    };
    Check::new("amnesia baseline (pure_lm)", passed, detail)
}

/// Every copy/LM pair shares scored positions and scored tokens.
pub fn paired_alignment() -> Check {
    let seen: Mutex<Vec<TaskInstance>> = Mutex::new(Vec::new());
    let sink = |t: &TaskInstance| seen.lock().expect("sink lock").push(t.clone());
    let pool = random_pool(SEED);
    let config = SweepConfig { points: 16, master_seed: SEED, ..SweepConfig::new(4096) };
    let options = RunOptions { instance_sink: Some(&sink), ..RunOptions::default() };
    let backend = oracle(OracleSpec::pure_lm(0.3));
    if let Err(e) = run_sweep(&config, &backend, &Pools::shared(&pool), &options) {
        return Check::new("paired alignment", false, e.to_string());
    }
    let seen = seen.into_inner().expect("sink lock");
    let mut pairs = 0;
    let mut bad = 0;
    for pair in seen.chunks(2) {
        let [c, l] = pair else {
            bad += 1;
            continue;
        };
        pairs += 1;
        let same_pair = c.meta.test_length == l.meta.test_length && c.meta.repeat_index == l.meta.repeat_index;
        if !same_pair || c.scored_positions != l.scored_positions || c.scored_tokens() != l.scored_tokens() {
            bad += 1;
        }
    }
    let expected = config.points * config.repeats;
    Check::new(
        "paired alignment",
        bad == 0 && pairs == expected,
        format!("{pairs}/{expected} pairs checked, {bad} misaligned"),
    )
}

/// Closed-form values of the test statistics and distribution tails.
pub fn stats_exactness() -> Check {
    let mut failures = Vec::new();
    let mut expect = |what: String, got: f64, want: f64, tol: f64| {
        let off = (got - want).abs();
        if off.is_nan() || off > tol {
            failures.push(format!("{what}: got {got} want {want}"));
        }
    };
    let groups = |g: [[f64; 3]; 3]| g.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let nan = (f64::NAN, f64::NAN);
    let (f, p) = anova_oneway(&groups([[1., 2., 3.], [2., 3., 4.], [3., 4., 5.]]))
        .map_or(nan, |t| (t.statistic, t.p_value));
    expect("anova F".into(), f, 3.0, 1e-12);
    expect("anova p".into(), p, 0.125, 1e-10);
    let (h, p) = kruskal_wallis(&groups([[1., 2., 3.], [4., 5., 6.], [7., 8., 9.]]))
        .map_or(nan, |t| (t.statistic, t.p_value));
    expect("kw H".into(), h, 7.2, 1e-12);
    expect("kw p".into(), p, (-3.6f64).exp(), 1e-10);
    for x in [0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
        expect(format!("chi2_sf({x}, 2)"), chi2_sf(x, 2.0).unwrap_or(f64::NAN), (-x / 2.0).exp(), 1e-10);
        for nu in [1.0, 3.0, 10.0, 40.0] {
            let want = (1.0 + 2.0 * x / nu).powf(-nu / 2.0);
            expect(format!("f_sf({x}, 2, {nu})"), f_sf(x, 2.0, nu).unwrap_or(f64::NAN), want, 1e-10);
        }
    }
    let detail = if failures.is_empty() { "all closed forms match".to_string() } else { failures.join("; ") };
    Check::new("statistics exactness", failures.is_empty(), detail)
}

/// 20 pure_lm sweeps in 4 groups: per-length ANOVA p > 0.05 at ≥ 80% of
/// grid points.
pub fn null_calibration() -> Check {
    let (max_len, points) = (4096, 32);
    let curves: Vec<ForgettingCurve> = (0..20u64)
        .map(|k| sweep(&oracle(OracleSpec::pure_lm(0.3).with_seed(1000 + k)), max_len, points, 100 + k, false))
        .collect();
    let mut above = 0;
    let mut defined = 0;
    for i in 0..points {
        let groups: Vec<Vec<f64>> = curves
            .chunks(5)
            .map(|g| g.iter().flat_map(|c| c.points[i].stats.as_ref().expect("oracle points succeed").lm_samples.clone()).collect())
            .collect();
        if let Ok(t) = anova_oneway(&groups) {
            defined += 1;
            if t.p_value > 0.05 {
                above += 1;
            }
        }
    }
    let frac = above as f64 / points as f64;
    Check::new(
        "null calibration (ANOVA)",
        frac >= 0.8,
        format!("{above}/{points} grid points with p > 0.05 ({defined} defined)"),
    )
}

/// Two identical measurements give identical artifact bytes.
pub fn determinism() -> Check {
    let config = MeasureConfig {
        random_pool: Some(50_000),
        max_len: Some(2048),
        points: 8,
        seed: SEED,
        ..MeasureConfig::default()
    };
    let backend = oracle(OracleSpec::induction(512, 0.3));
    let run = || measure(&config, &backend, &RunOptions::default());
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let same = a.json == b.json && a.csv == b.csv && a.svg == b.svg && a.svg.is_some();
            Check::new("determinism", same, format!("report.json, curve.csv, curve.svg identical: {same}"))
        }
        (Err(e), _) | (_, Err(e)) => Check::new("determinism", false, e.to_string()),
    }
}

/// Induction oracle with log-probabilities: copy perplexity should keep
/// improving with length while the coarse length stays at 2w.
pub fn perplexity_decoupling() -> Check {
    let backend = oracle(OracleSpec::induction(512, 0.3).with_logprob(true));
    let curve = sweep(&backend, 4096, 16, SEED, true);
    let (copy, lm) = match (copy_perplexity_series(&curve), perplexity_series(&curve)) {
        (Ok(c), Ok(l)) => (c, l),
        (Err(e), _) | (_, Err(e)) => return Check::new("perplexity decoupling", false, e.to_string()),
    };
    let improving = copy.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9);
    let first_rise = copy.windows(2).find(|w| w[1].1 > w[0].1 + 1e-9).map(|w| w[1].0);
    let (passed, detail) = match lengths_of(&curve) {
        Ok((_, coarse)) => (
            improving && within(coarse, 1024, 256),
            format!(
                "coarse={coarse} (1024±256) copy ppl non-increasing={improving}{} copy ppl {:.3}→{:.3}, lm ppl {:.3}→{:.3}",
                first_rise.map(|l| format!(" (rises at {l})")).unwrap_or_default(),
                copy[0].1,
                copy[copy.len() - 1].1,
                lm[0].1,
                lm[lm.len() - 1].1,
            ),
        ),
        Err(e) => (false, e),
    };
    Check::new("perplexity decoupling", passed, detail)
}

/// Run every check. `step_backend` replaces the in-process induction oracle
/// for the step-memory check, e.g. with the same oracle behind the wire.
pub fn run_all(step_backend: Option<&dyn Backend>) -> Vec<Check> {
    vec![
        step_memory(step_backend),
        graded_memory(),
        amnesia(),
        paired_alignment(),
        stats_exactness(),
        null_calibration(),
        determinism(),
        perplexity_decoupling(),
    ]
}

pub fn table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:<width$}  {}\n", c.name, c.detail));
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", checks.len()));
    out
}
