//! Desk-scale simulation harness for the Gaussian mean multiple-testing
//! model.
//!
//! Each hypothesis states that its observed statistic has mean zero. The
//! observed vector is multivariate normal with unit variances and
//! equicorrelation `rho`; a `pi_a`-Bernoulli subset of coordinates receives
//! a mean shift `mu_a`. Generated statistics are i.i.d. standard normal per
//! hypothesis — the simulation feeds statistics directly instead of
//! shuffling labels, which is the faithful reproduction path for this
//! design (the identity-statistic mode of the CLI).
//!
//! [`run_experiment`] compares p-value strategies under the
//! Benjamini–Hochberg procedure with common random numbers: within a rep,
//! every method consumes the identical generated statistic sequences, so
//! method comparisons are paired. Reps are distributed over
//! `SEQPERM_THREADS` workers; per-rep results land in rep-indexed slots and
//! are aggregated by pairwise summation, making every reported number
//! independent of the worker count.
//!
//! [`adversarial_bound_check`] and [`worst_bound_figure`] exercise the
//! worst-case average-permutation guarantee of the adaptive schedule on
//! adversarial loss matrices (including the staircase pattern that nearly
//! attains the bound) and emit figure-ready tables of the bound's growth.

use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{
    adaptive_budget, run_bh_avbc, run_bh_binmix, run_general, worst_case_avg_bound, AvbcMode,
    EngineConfig, IndicatorSource, ReplaySource, RunResult,
};
use crate::error::{Error, Result};
use crate::pvalue::Strategy;
use crate::stream::derive_seed;

/// Standard loss-budget parameter of the anytime-valid strategies.
pub const STANDARD_H: u64 = 10;
/// Standard binomial mixture parameter.
pub const STANDARD_B: f64 = 0.9;
/// Standard hard cap on permutations per hypothesis.
pub const STANDARD_CAP: u64 = 10_000;

const TAG_SIM_OBSERVED: u64 = 0x7365_7170_7369_6d79;
const TAG_SIM_GENERATED: u64 = 0x7365_7170_7369_6d6e;

// ---------------------------------------------------------------------------
// Worker partitioning
// ---------------------------------------------------------------------------

/// Worker count: the `SEQPERM_THREADS` environment variable when set to a
/// positive integer, otherwise the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("SEQPERM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluates `f(0..n)` across up to `threads` scoped workers. Each result
/// lands in its index's slot, so the output — and any aggregation that
/// walks it in order — is identical for every worker count.
fn run_partitioned<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let threads = threads.clamp(1, n.max(1));
    if threads <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(f(i));
        }
    } else {
        let chunk = n.div_ceil(threads);
        thread::scope(|scope| {
            for (w, block) in slots.chunks_mut(chunk).enumerate() {
                let f = &f;
                scope.spawn(move || {
                    for (k, slot) in block.iter_mut().enumerate() {
                        *slot = Some(f(w * chunk + k));
                    }
                });
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("every slot is filled by exactly one worker"))
        .collect()
}

/// Pairwise (cascade) summation: deterministic, order-stable, and far less
/// error-prone than naive left-to-right accumulation on long metric
/// vectors.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Gaussian model
// ---------------------------------------------------------------------------

/// Parameters of the equicorrelated Gaussian mean simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSimConfig {
    /// Number of hypotheses.
    pub m: usize,
    /// Probability that a hypothesis is false (receives the mean shift).
    pub pi_a: f64,
    /// Mean shift under the alternative.
    pub mu_a: f64,
    /// Equicorrelation of the observed statistics, in `[0, 1)`.
    pub rho: f64,
    /// Significance level.
    pub alpha: f64,
    /// Number of independent repetitions.
    pub reps: usize,
    /// Master seed; every rep and hypothesis derives its own substream.
    pub seed: u64,
}

impl GaussianSimConfig {
    /// Standard power setting: `M = 1000`, `pi_a = 0.4`, `mu_a = 2.5`,
    /// independent coordinates, level `0.1`, ten reps.
    pub fn standard(seed: u64) -> GaussianSimConfig {
        GaussianSimConfig {
            m: 1000,
            pi_a: 0.4,
            mu_a: 2.5,
            rho: 0.0,
            alpha: 0.1,
            reps: 10,
            seed,
        }
    }

    /// Desk-scale FDR setting: `M = 100`, 500 reps, the rest standard.
    pub fn fdr_default(rho: f64, seed: u64) -> GaussianSimConfig {
        GaussianSimConfig {
            m: 100,
            pi_a: 0.4,
            mu_a: 2.5,
            rho,
            alpha: 0.1,
            reps: 500,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_a) {
            return Err(Error::InvalidParameter(format!(
                "pi_a must lie in [0, 1], got {}",
                self.pi_a
            )));
        }
        if !self.mu_a.is_finite() {
            return Err(Error::InvalidParameter("mu_a must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One simulated rep: observed statistics and the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimInstance {
    /// Observed statistic per hypothesis.
    pub observed: Vec<f64>,
    /// `true` where the hypothesis is false (the alternative holds).
    pub is_alt: Vec<bool>,
}

/// Draws the per-rep observed vectors: `Y_0^i = √rho·Z + √(1−rho)·Z_i +
/// mu_a·1{alt_i}` with a fresh common factor `Z` per rep, so
/// `cov(Y_0^i, Y_0^j) = rho` off the diagonal and variances are one.
pub fn simulate_gaussian(config: &GaussianSimConfig) -> Result<Vec<SimInstance>> {
    config.validate()?;
    let mut instances = Vec::with_capacity(config.reps);
    for rep in 0..config.reps {
        let mut rng =
            ChaCha8Rng::from_seed(derive_seed(config.seed, rep as u64, 0, TAG_SIM_OBSERVED));
        let is_alt: Vec<bool> = (0..config.m)
            .map(|_| rng.random::<f64>() < config.pi_a)
            .collect();
        let common: f64 = StandardNormal.sample(&mut rng);
        let observed = is_alt
            .iter()
            .map(|&alt| {
                let own: f64 = StandardNormal.sample(&mut rng);
                config.rho.sqrt() * common
                    + (1.0 - config.rho).sqrt() * own
                    + if alt { config.mu_a } else { 0.0 }
            })
            .collect();
        instances.push(SimInstance { observed, is_alt });
    }
    Ok(instances)
}

/// Loss indicators for one rep: hypothesis `i` loses at round `t` when a
/// fresh standard normal reaches its observed statistic. Rebuilding the
/// source with the same `(seed, rep)` replays the identical generated
/// statistics — the common-random-number hook used by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct GaussianIndicatorSource {
    observed: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
}

impl GaussianIndicatorSource {
    pub fn new(instance: &SimInstance, seed: u64, rep: u64) -> GaussianIndicatorSource {
        let rngs = (0..instance.observed.len())
            .map(|i| ChaCha8Rng::from_seed(derive_seed(seed, rep, i as u64, TAG_SIM_GENERATED)))
            .collect();
        GaussianIndicatorSource {
            observed: instance.observed.clone(),
            rngs,
        }
    }
}

impl IndicatorSource for GaussianIndicatorSource {
    fn num_hypotheses(&self) -> usize {
        self.observed.len()
    }

    fn next_loss(&mut self, hyp: usize) -> Result<bool> {
        let y: f64 = StandardNormal.sample(&mut self.rngs[hyp]);
        Ok(y >= self.observed[hyp])
    }
}

// ---------------------------------------------------------------------------
// Methods under comparison
// ---------------------------------------------------------------------------

/// A p-value strategy bound to the Benjamini–Hochberg procedure, as
/// compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Fixed-budget permutation p-value, all `budget` draws consumed.
    Classical { budget: u64 },
    /// Stopped sequential p-value: `h`-th loss or `budget`, then one BH
    /// pass.
    BesagClifford { h: u64, budget: u64 },
    /// Anytime-valid stopped p-value on the adaptive budget schedule.
    AnytimeBc { h: u64 },
    /// The `h = 1` anytime-valid strategy: stop at the first loss.
    Aggressive,
    /// Betting wealth from the binomial mixture, per-round BH.
    BinomialMixture { b: f64 },
}

impl Method {
    /// Row label used in tables and CSV output.
    pub fn name(&self) -> String {
        match *self {
            Method::Classical { budget } => format!("classical(B={budget})"),
            Method::BesagClifford { h, budget } => format!("bc(h={h},B={budget})"),
            Method::AnytimeBc { h } => format!("avbc(h={h})"),
            Method::Aggressive => "aggressive".into(),
            Method::BinomialMixture { b } => format!("binmix(b={b})"),
        }
    }

    /// The standard comparison set at the standard hyperparameters.
    pub fn standard_set() -> Vec<Method> {
        vec![
            Method::Classical {
                budget: STANDARD_CAP,
            },
            Method::BesagClifford {
                h: STANDARD_H,
                budget: STANDARD_CAP,
            },
            Method::AnytimeBc { h: STANDARD_H },
            Method::Aggressive,
            Method::BinomialMixture { b: STANDARD_B },
        ]
    }

    /// Runs the method at level `alpha` on `source`, stopping every
    /// hypothesis after at most `cap` permutations.
    pub fn run(&self, alpha: f64, cap: u64, source: &mut dyn IndicatorSource) -> Result<RunResult> {
        match *self {
            Method::Classical { budget } => {
                let mut config = EngineConfig::new(alpha, Strategy::classical(budget)?)?;
                config.batch_size = budget;
                config.max_permutations = Some(budget);
                run_general(&config, source, None)
            }
            Method::BesagClifford { h, budget } => {
                let mut config = EngineConfig::new(alpha, Strategy::besag_clifford(h, budget)?)?;
                config.batch_size = budget;
                config.max_permutations = Some(budget);
                run_general(&config, source, None)
            }
            Method::AnytimeBc { h } => {
                let mut config = EngineConfig::new(alpha, Strategy::anytime_bc(h)?)?;
                config.max_permutations = Some(cap);
                run_bh_avbc(&config, source, AvbcMode::Adaptive)
            }
            Method::Aggressive => {
                let mut config = EngineConfig::new(alpha, Strategy::aggressive())?;
                config.max_permutations = Some(cap);
                run_bh_avbc(&config, source, AvbcMode::Adaptive)
            }
            Method::BinomialMixture { b } => {
                let mut config = EngineConfig::new(alpha, Strategy::binomial_mixture(b)?)?;
                config.max_permutations = Some(cap);
                run_bh_binmix(&config, source)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/// Aggregated metrics of one method over all reps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    /// Mean proportion of false hypotheses rejected, over reps that had at
    /// least one false hypothesis.
    pub power: f64,
    /// `false` when no rep had a false hypothesis (power reported as 0).
    pub power_defined: bool,
    /// Mean false discovery proportion `|V| / (|R| ∨ 1)`.
    pub fdr: f64,
    /// Monte-Carlo standard error of `fdr` (sample SD of the per-rep FDP
    /// over √reps).
    pub fdr_se: f64,
    /// Mean permutations per hypothesis.
    pub avg_permutations: f64,
    /// `(q, t)` pairs: empirical quantiles of rejection times pooled over
    /// reps. Empty when nothing was rejected.
    pub rejection_time_quantiles: Vec<(f64, f64)>,
}

/// Per-rep raw metrics before aggregation.
struct RepMetrics {
    power: Option<f64>,
    fdp: f64,
    avg_tau: f64,
    rejection_times: Vec<u64>,
}

fn rep_metrics(run: &RunResult, is_alt: &[bool]) -> RepMetrics {
    let m = is_alt.len();
    let alt_count = is_alt.iter().filter(|&&a| a).count();
    let rejected = &run.rejections.indices;
    let true_pos = rejected.iter().filter(|&&i| is_alt[i]).count();
    let false_pos = rejected.len() - true_pos;
    let power = (alt_count > 0).then(|| true_pos as f64 / alt_count as f64);
    let fdp = false_pos as f64 / rejected.len().max(1) as f64;
    let avg_tau = run.total_permutations as f64 / m as f64;
    // A rejection granted by the final pass (after the hypothesis had
    // already stopped) is decided when the whole process ends.
    let process_end = run.hypotheses.iter().map(|h| h.tau).max().unwrap_or(0);
    let rejection_times = run
        .hypotheses
        .iter()
        .filter(|h| h.rejected)
        .map(|h| h.rejection_time.unwrap_or(process_end))
        .collect();
    RepMetrics {
        power,
        fdp,
        avg_tau,
        rejection_times,
    }
}

/// Empirical `q`-quantile of an ascending-sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Quantile grid reported for rejection times.
pub const REJECTION_TIME_QUANTILES: [f64; 4] = [0.25, 0.5, 0.75, 0.9];

/// Runs every method on every rep with common random numbers (identical
/// generated statistics within a rep) and aggregates one [`MetricsRecord`]
/// per method, in the order given. `cap` bounds the permutations per
/// hypothesis for the adaptive methods.
pub fn run_experiment(
    config: &GaussianSimConfig,
    methods: &[Method],
    cap: u64,
) -> Result<Vec<MetricsRecord>> {
    run_experiment_with_threads(config, methods, cap, worker_count())
}

/// [`run_experiment`] with an explicit worker count; the output is
/// identical for every `threads` value.
pub fn run_experiment_with_threads(
    config: &GaussianSimConfig,
    methods: &[Method],
    cap: u64,
    threads: usize,
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if cap == 0 {
        return Err(Error::InvalidParameter("cap must be >= 1".into()));
    }
    let instances = simulate_gaussian(config)?;
    let mut records = Vec::with_capacity(methods.len());
    for method in methods {
        let per_rep: Vec<Result<RepMetrics>> = run_partitioned(config.reps, threads, |rep| {
            let instance = &instances[rep];
            let mut source = GaussianIndicatorSource::new(instance, config.seed, rep as u64);
            let run = method.run(config.alpha, cap, &mut source)?;
            Ok(rep_metrics(&run, &instance.is_alt))
        });
        let mut powers = Vec::new();
        let mut fdps = Vec::with_capacity(config.reps);
        let mut taus = Vec::with_capacity(config.reps);
        let mut times: Vec<f64> = Vec::new();
        for rep in per_rep {
            let rep = rep?;
            if let Some(p) = rep.power {
                powers.push(p);
            }
            fdps.push(rep.fdp);
            taus.push(rep.avg_tau);
            times.extend(rep.rejection_times.iter().map(|&t| t as f64));
        }
        let fdr = pairwise_mean(&fdps);
        let centered: Vec<f64> = fdps.iter().map(|&x| (x - fdr).powi(2)).collect();
        let fdr_se = if fdps.len() > 1 {
            (pairwise_sum(&centered) / (fdps.len() - 1) as f64 / fdps.len() as f64).sqrt()
        } else {
            0.0
        };
        times.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let rejection_time_quantiles = if times.is_empty() {
            Vec::new()
        } else {
            REJECTION_TIME_QUANTILES
                .iter()
                .map(|&q| (q, quantile(&times, q)))
                .collect()
        };
        records.push(MetricsRecord {
            method: method.name(),
            power: pairwise_mean(&powers),
            power_defined: !powers.is_empty(),
            fdr,
            fdr_se,
            avg_permutations: pairwise_mean(&taus),
            rejection_time_quantiles,
        });
    }
    Ok(records)
}

/// Tidy CSV: one `(method, metric, value)` row per scalar metric and
/// quantile, ready for any plotting tool.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("method,metric,value\n");
    for r in records {
        let mut push = |metric: &str, value: f64| {
            out.push_str(&format!("{},{metric},{value}\n", r.method));
        };
        push("power", r.power);
        push("power_defined", f64::from(u8::from(r.power_defined)));
        push("fdr", r.fdr);
        push("fdr_se", r.fdr_se);
        push("avg_permutations", r.avg_permutations);
        for &(q, t) in &r.rejection_time_quantiles {
            push(
                &format!("rejection_time_q{}", (q * 100.0).round() as u32),
                t,
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Worst-case bound checks
// ---------------------------------------------------------------------------

/// The staircase adversary. Every hypothesis takes `h − 1` immediate
/// losses — the most an unstopped hypothesis can carry — so its running
/// p-value `h/(t+1)` is the largest possible; hypothesis `k` then takes its
/// freezing `h`-th loss exactly at barrier `B_{M−k}`. The frozen p-value
/// `h/B_{M−k}` sits just above the rank-`(M−k)` threshold and all later
/// ones, while the surviving actives are one short of the count the
/// current rank needs, so no rejection ever fires: one hypothesis settles
/// per barrier and `τ̄ = (Σ_m B_m)/M`, within rounding of the proven worst
/// case.
pub(crate) fn staircase_losses(m: usize, h: u64, alpha: f64, len: usize) -> Vec<Vec<bool>> {
    (0..m)
        .map(|k| {
            let barrier = adaptive_budget(m - k, m, h, alpha);
            (1..=len as u64).map(|t| t < h || t == barrier).collect()
        })
        .collect()
}

fn avbc_tau_bar(rows: Vec<Vec<bool>>, h: u64, alpha: f64) -> Result<f64> {
    let m = rows.len();
    let config = EngineConfig::new(alpha, Strategy::anytime_bc(h)?)?;
    let mut source = ReplaySource::new(rows);
    let run = run_bh_avbc(&config, &mut source, AvbcMode::Adaptive)?;
    Ok(run.total_permutations as f64 / m as f64)
}

/// Runs the adaptive schedule against adversarial and random loss matrices
/// and checks the sure bound `τ̄ ≤ worst_case_avg_bound(M, h, α)` on every
/// one. Patterns: all-clean (everything rejected at the first barrier),
/// all-loss (futility at `t = h`), the staircase adversary, and `trials`
/// random Bernoulli matrices with per-hypothesis loss rates.
pub fn adversarial_bound_check(
    m: usize,
    h: u64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    if m == 0 || h == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "adversarial_bound_check needs m, h, trials >= 1".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let bound = worst_case_avg_bound(m, h, alpha);
    let len = adaptive_budget(1, m, h, alpha) as usize + h as usize + 8;

    let mut ok = avbc_tau_bar(vec![vec![false; len]; m], h, alpha)? <= bound;
    ok &= avbc_tau_bar(vec![vec![true; len]; m], h, alpha)? <= bound;
    ok &= avbc_tau_bar(staircase_losses(m, h, alpha, len), h, alpha)? <= bound;

    let random_ok = run_partitioned(trials, worker_count(), |trial| {
        let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, trial as u64, 0, 0x61647642));
        let rows: Vec<Vec<bool>> = (0..m)
            .map(|_| {
                let rate: f64 = rng.random();
                (0..len).map(|_| rng.random::<f64>() < rate).collect()
            })
            .collect();
        avbc_tau_bar(rows, h, alpha).map(|tau_bar| tau_bar <= bound)
    });
    for r in random_ok {
        ok &= r?;
    }
    Ok(ok)
}

/// One row of the worst-case permutation-count table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    /// Number of hypotheses.
    pub m: usize,
    /// Permutations per hypothesis a fixed-budget run needs so that a lone
    /// rejection can survive BH: `M/α − 1`.
    pub classical: f64,
    /// Sure upper bound on the adaptive schedule's average.
    pub adaptive: f64,
}

/// Evaluates the classical requirement and the adaptive worst-case bound
/// over a grid of problem sizes; the adaptive column grows only
/// logarithmically in `M`.
pub fn worst_bound_figure(alpha: f64, h: u64, m_grid: &[usize]) -> Result<Vec<BoundRow>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if h == 0 {
        return Err(Error::InvalidParameter("h must be >= 1".into()));
    }
    m_grid
        .iter()
        .map(|&m| {
            if m == 0 {
                return Err(Error::InvalidParameter("grid entries must be >= 1".into()));
            }
            Ok(BoundRow {
                m,
                classical: m as f64 / alpha - 1.0,
                adaptive: worst_case_avg_bound(m, h, alpha),
            })
        })
        .collect()
}

/// CSV for [`worst_bound_figure`] rows.
pub fn bound_csv(rows: &[BoundRow]) -> String {
    let mut out = String::from("m,classical,adaptive\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.m, r.classical, r.adaptive));
    }
    out
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
