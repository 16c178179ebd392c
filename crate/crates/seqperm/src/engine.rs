//! Sequential multiple-testing loops with adaptive permutation counts.
//!
//! The engine advances one p-value process per hypothesis, synchronizing at
//! barrier times where the chosen monotone procedure is re-applied to the
//! current (running or frozen) p-values. A hypothesis leaves the active set
//! either by rejection (its decision is final thanks to procedure
//! monotonicity plus nonincreasing p-values) or by futility (its process
//! froze itself: h-th loss for the BC-style strategies, exhausted budget for
//! the classical one, or its wealth collapsed for the binomial mixture).
//!
//! Three barrier schedules are provided:
//! * per-round / batched — the faithful round-by-round loop;
//! * adaptive — jumps straight between the rejection thresholds
//!   `B_m = ⌈hM/(max(m,1)α)⌉ − 1`, at which BH + anytime-valid BC decisions
//!   can change (an uncapped run provably yields the same rejection set as
//!   the per-round loop, which the tests check against a brute-force oracle);
//! * max-p shortcut — per round, the whole active set is rejected at once as
//!   soon as its largest p-value clears the BH rank it would occupy.
//!
//! General and BC-style runs end with one final application of the procedure
//! to the frozen p-values: a futility-stopped hypothesis can become
//! rejectable after it stopped because the BH threshold only rises. Such
//! post-hoc rejections carry `rejection_time = None`. The binomial-mixture
//! loop follows its published form instead: sticky rejectable-level marks,
//! no post-hoc pass.

use serde::{Deserialize, Serialize};

use crate::binom::{binom_quantile, binom_sf};
use crate::error::{Error, Result};
use crate::procedures::{bh_maxp_shortcut_check, Procedure, RejectionSet};
use crate::pvalue::{PValueProcess, Strategy};
use crate::stats::{mid_ranks, Statistic};
use crate::stream::{Dataset, PermutationStream, StreamMode};

// ---------------------------------------------------------------------------
// Configuration and results
// ---------------------------------------------------------------------------

/// Engine configuration shared by all run flavors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Overall significance level.
    pub alpha: f64,
    /// P-value strategy instantiated per hypothesis.
    pub strategy: Strategy,
    /// Monotone multiple-testing procedure applied at each barrier.
    pub procedure: Procedure,
    /// Hard cap on permutations per hypothesis; a hypothesis hitting the cap
    /// while active is futility-stopped with its running-min p-value.
    pub max_permutations: Option<u64>,
    /// Permutations per synchronization round (1 = check after every draw).
    pub batch_size: u64,
    /// Master seed (recorded for manifests; sources are seeded separately).
    pub seed: u64,
    /// Stream mode (recorded for manifests).
    pub stream_mode: StreamMode,
}

impl EngineConfig {
    pub fn new(alpha: f64, strategy: Strategy) -> Result<Self> {
        let config = EngineConfig {
            alpha,
            strategy,
            procedure: Procedure::BenjaminiHochberg,
            max_permutations: None,
            batch_size: 1,
            seed: 0,
            stream_mode: StreamMode::Independent,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if let Some(cap) = self.max_permutations {
            if cap == 0 {
                return Err(Error::InvalidParameter(
                    "max_permutations must be >= 1 when set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Timeline entry: barrier time, indices rejected there, and the procedure's
/// threshold index at that barrier. Entries are recorded whenever a
/// rejection happens or the threshold moves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub time: u64,
    pub rejected: Vec<usize>,
    pub m_star: usize,
}

/// Per-hypothesis outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub index: usize,
    /// Stopping time: permutations drawn for this hypothesis.
    pub tau: u64,
    /// Final (anytime-valid or stopped) p-value.
    pub p_value: f64,
    pub rejected: bool,
    /// Barrier time of the in-run rejection; `None` for hypotheses added by
    /// the final pass after they had already futility-stopped.
    pub rejection_time: Option<u64>,
}

/// Outcome of a full engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub rejections: RejectionSet,
    pub hypotheses: Vec<HypothesisResult>,
    /// Sum of per-hypothesis stopping times. In shared stream mode the
    /// number of distinct permutations generated is `max(tau)` instead.
    pub total_permutations: u64,
    pub timeline: Vec<TimelineEntry>,
}

impl RunResult {
    pub fn stopping_times(&self) -> Vec<u64> {
        self.hypotheses.iter().map(|h| h.tau).collect()
    }

    pub fn final_pvalues(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.p_value).collect()
    }

    pub fn rejection_times(&self) -> Vec<Option<u64>> {
        self.hypotheses.iter().map(|h| h.rejection_time).collect()
    }
}

// ---------------------------------------------------------------------------
// Indicator sources
// ---------------------------------------------------------------------------

/// Supplies loss indicators per hypothesis; abstracts over live permutation
/// streams, recorded sequences, and synthetic generators.
pub trait IndicatorSource {
    fn num_hypotheses(&self) -> usize;
    /// Next loss indicator for hypothesis `hyp`.
    fn next_loss(&mut self, hyp: usize) -> Result<bool>;
}

/// Replays recorded indicator sequences; exhaustion is a configuration
/// error (the run needed more permutations than were recorded).
#[derive(Debug, Clone)]
pub struct ReplaySource {
    rows: Vec<Vec<bool>>,
    pos: Vec<usize>,
}

impl ReplaySource {
    pub fn new(rows: Vec<Vec<bool>>) -> Self {
        let pos = vec![0; rows.len()];
        ReplaySource { rows, pos }
    }
}

impl IndicatorSource for ReplaySource {
    fn num_hypotheses(&self) -> usize {
        self.rows.len()
    }

    fn next_loss(&mut self, hyp: usize) -> Result<bool> {
        let p = self.pos[hyp];
        if p >= self.rows[hyp].len() {
            return Err(Error::InvalidState(format!(
                "replay stream exhausted for hypothesis {hyp} after {p} indicators"
            )));
        }
        self.pos[hyp] = p + 1;
        Ok(self.rows[hyp][p])
    }
}

/// Which direction counts as evidence against the observed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Loss when the permuted statistic is >= the observed one (tests for
    /// group 1 being larger).
    Upper,
    /// Loss when the permuted statistic is <= the observed one.
    Lower,
}

/// Live permutation-testing source: draws label permutations from a stream
/// and compares the permuted statistic against the observed one. Ties count
/// as losses in both orientations.
pub struct DatasetSource<'a> {
    dataset: &'a Dataset,
    stream: PermutationStream,
    statistic: Statistic,
    orientation: Orientation,
    observed: Vec<f64>,
}

impl<'a> DatasetSource<'a> {
    pub fn new(
        dataset: &'a Dataset,
        statistic: Statistic,
        seed: u64,
        mode: StreamMode,
        orientation: Orientation,
    ) -> Result<Self> {
        let observed = (0..dataset.num_hypotheses())
            .map(|j| statistic.evaluate(dataset.column(j), dataset.labels()))
            .collect::<Result<Vec<f64>>>()?;
        let stream = PermutationStream::for_dataset(seed, mode, dataset)?;
        Ok(DatasetSource {
            dataset,
            stream,
            statistic,
            orientation,
            observed,
        })
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }
}

impl IndicatorSource for DatasetSource<'_> {
    fn num_hypotheses(&self) -> usize {
        self.dataset.num_hypotheses()
    }

    fn next_loss(&mut self, hyp: usize) -> Result<bool> {
        let y = self
            .stream
            .next_permuted_statistic(self.dataset, hyp, self.statistic)?;
        if y.is_nan() {
            return Err(Error::InvalidParameter("permuted statistic is NaN".into()));
        }
        Ok(match self.orientation {
            Orientation::Upper => y >= self.observed[hyp],
            Orientation::Lower => y <= self.observed[hyp],
        })
    }
}

// ---------------------------------------------------------------------------
// Adaptive budgets and the worst-case bound
// ---------------------------------------------------------------------------

/// Rounds `x` to the nearest integer when floating-point noise put it within
/// a relative 1e-9 of one; the budget formulas below are integer-valued
/// whenever h·M/(m·α) is, and a 1-ulp error must not shift the budget by 1.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Permutation budget at BH rank `m`:
/// `B_m = ⌈h·M/(max(m,1)·α)⌉ − 1`
/// — the earliest time at which a hypothesis with fewer than h losses
/// becomes rejectable at level m·α/M.
pub fn adaptive_budget(m: usize, m_total: usize, h: u64, alpha: f64) -> u64 {
    assert!(m <= m_total, "rank m = {m} exceeds M = {m_total}");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    assert!(h >= 1, "h must be >= 1");
    let m_eff = m.max(1) as f64;
    let v = snap((h as f64) * (m_total as f64) / (m_eff * alpha));
    (v.ceil() as u64).saturating_sub(1)
}

/// Worst-case average stopping time of the BH + anytime-valid BC run:
/// `⌊h/α − 1⌋ + (h/α) · Σ_{t=⌊h/α⌋}^{⌊M·h/α − 2⌋} 1/(t+1)`.
/// The bound holds surely — for every indicator realization, not just in
/// expectation — which the tests exercise with adversarial inputs.
pub fn worst_case_avg_bound(m_total: usize, h: u64, alpha: f64) -> f64 {
    assert!(m_total >= 1);
    assert!(alpha > 0.0 && alpha < 1.0);
    assert!(h >= 1);
    let ratio = h as f64 / alpha;
    let base = snap(ratio - 1.0).floor();
    let lo = snap(ratio).floor() as u64;
    let hi_f = snap((m_total as f64) * ratio - 2.0).floor();
    if hi_f < lo as f64 {
        return base;
    }
    let hi = hi_f as u64;
    // Kahan summation: the M = 10^6 case sums ~10^8 terms.
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for t in lo..=hi {
        let term = 1.0 / (t + 1) as f64 - carry;
        let next = sum + term;
        carry = (next - sum) - term;
        sum = next;
    }
    base + ratio * sum
}

// ---------------------------------------------------------------------------
// Core barrier loop
// ---------------------------------------------------------------------------

struct HypState {
    process: PValueProcess,
    active: bool,
    tau: Option<u64>,
    rejected: bool,
    rejection_time: Option<u64>,
}

enum BarrierSchedule {
    /// Barriers at every multiple of the batch size, indefinitely.
    EveryBatch(u64),
    /// Explicit strictly increasing barrier times.
    Explicit(Vec<u64>),
}

impl BarrierSchedule {
    fn next_after(&self, prev: u64, step: usize) -> Option<u64> {
        match self {
            BarrierSchedule::EveryBatch(b) => Some(prev + b),
            BarrierSchedule::Explicit(times) => times.get(step).copied(),
        }
    }
}

/// How the BH + anytime-valid BC run schedules its work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AvbcMode {
    /// Round-by-round (batched) barriers with the full procedure each time.
    PerRound,
    /// Jump between the adaptive budgets B_M < ... < B_1.
    Adaptive,
    /// Round-by-round, but reject only when the whole active set clears the
    /// max-p BH shortcut at once.
    MaxpShortcut,
}

/// Barrier-time rejection rule.
enum RejectRule {
    /// Full procedure on the complete p-value vector.
    Procedure,
    /// BH max-p shortcut over the active subset only.
    MaxpShortcut,
}

fn advance_to(
    state: &mut HypState,
    source: &mut dyn IndicatorSource,
    hyp: usize,
    target: u64,
    cap: Option<u64>,
) -> Result<()> {
    let target = cap.map_or(target, |c| target.min(c));
    while state.process.state().t < target && !state.process.is_stopped() {
        let loss = source.next_loss(hyp)?;
        state.process.update(loss)?;
    }
    Ok(())
}

type FutilityRule<'a> = dyn Fn(usize, &PValueProcess) -> bool + 'a;

fn run_core(
    config: &EngineConfig,
    source: &mut dyn IndicatorSource,
    schedule: BarrierSchedule,
    reject_rule: RejectRule,
    futility: Option<&FutilityRule>,
    final_pass: bool,
) -> Result<RunResult> {
    config.validate()?;
    let m_total = source.num_hypotheses();
    if m_total == 0 {
        return Err(Error::InvalidParameter("no hypotheses".into()));
    }
    if config.max_permutations.is_none()
        && matches!(config.strategy, Strategy::BinomialMixture { .. })
        && futility.is_none()
    {
        return Err(Error::InvalidParameter(
            "the binomial mixture strategy never self-stops; set max_permutations \
             or supply a futility rule (or use run_bh_binmix)"
                .into(),
        ));
    }

    let mut states: Vec<HypState> = (0..m_total)
        .map(|_| HypState {
            process: PValueProcess::new(config.strategy),
            active: true,
            tau: None,
            rejected: false,
            rejection_time: None,
        })
        .collect();
    let mut timeline: Vec<TimelineEntry> = Vec::new();
    let mut last_m_star = 0usize;
    let mut rejected_total = 0usize;

    let mut prev_barrier = 0u64;
    let mut step = 0usize;
    while states.iter().any(|s| s.active) {
        let barrier = match schedule.next_after(prev_barrier, step) {
            Some(t) => t,
            // Explicit schedules are proven to resolve everything; freeze any
            // stragglers defensively (their running-min p-values stay valid)
            // and let the final pass decide them.
            None => break,
        };
        debug_assert!(barrier > prev_barrier);
        step += 1;

        for (hyp, state) in states.iter_mut().enumerate() {
            if state.active {
                advance_to(state, source, hyp, barrier, config.max_permutations)?;
            }
        }

        // Rejection first: a process that froze this very round may already
        // be rejectable, and rejection takes precedence over futility.
        let pvalues: Vec<f64> = states.iter().map(|s| s.process.p_value()).collect();
        let (reject_indices, m_star_now) = match reject_rule {
            RejectRule::Procedure => {
                let r = config.procedure.reject(&pvalues, config.alpha);
                let m = r.m_star.unwrap_or(r.indices.len());
                (r.indices, m)
            }
            RejectRule::MaxpShortcut => {
                let active: Vec<usize> = (0..m_total).filter(|&i| states[i].active).collect();
                let active_p: Vec<f64> = active.iter().map(|&i| pvalues[i]).collect();
                if !active.is_empty()
                    && bh_maxp_shortcut_check(
                        &active_p,
                        active.len(),
                        rejected_total,
                        config.alpha,
                        m_total,
                    )
                {
                    let m = rejected_total + active.len();
                    (active, m)
                } else {
                    (Vec::new(), rejected_total)
                }
            }
        };
        let mut newly: Vec<usize> = Vec::new();
        for &i in &reject_indices {
            if states[i].active {
                let s = &mut states[i];
                let t_i = s.process.state().t;
                s.active = false;
                s.rejected = true;
                s.tau = Some(t_i);
                s.rejection_time = Some(t_i);
                newly.push(i);
            }
        }
        rejected_total += newly.len();
        if !newly.is_empty() || m_star_now != last_m_star {
            timeline.push(TimelineEntry {
                time: barrier,
                rejected: newly,
                m_star: m_star_now,
            });
            last_m_star = m_star_now;
        }

        // Futility: custom rule, then the process' own stopping rule, then
        // the permutation cap.
        for (hyp, s) in states.iter_mut().enumerate() {
            if !s.active {
                continue;
            }
            let hook_fires = futility.is_some_and(|f| f(hyp, &s.process));
            let capped = config
                .max_permutations
                .is_some_and(|c| s.process.state().t >= c);
            if hook_fires || s.process.is_stopped() || capped {
                s.active = false;
                s.tau = Some(s.process.state().t);
            }
        }
        prev_barrier = barrier;
    }
    for s in states.iter_mut().filter(|s| s.active) {
        s.active = false;
        s.tau = Some(s.process.state().t);
    }

    // Final pass: futility-stopped p-values can have become rejectable as
    // the threshold rose. In-run rejections are never revoked.
    let final_p: Vec<f64> = states.iter().map(|s| s.process.p_value()).collect();
    let rejections = if final_pass {
        let final_set = config.procedure.reject(&final_p, config.alpha);
        for &i in &final_set.indices {
            if !states[i].rejected {
                states[i].rejected = true; // rejection_time stays None
            }
        }
        let mut indices: Vec<usize> = (0..m_total).filter(|&i| states[i].rejected).collect();
        indices.sort_unstable();
        let m_star = final_set.m_star.map(|m| m.max(indices.len()));
        RejectionSet { indices, m_star }
    } else {
        let indices: Vec<usize> = (0..m_total).filter(|&i| states[i].rejected).collect();
        let m_star = Some(last_m_star);
        RejectionSet { indices, m_star }
    };

    Ok(assemble(states, timeline, rejections))
}

fn assemble(
    states: Vec<HypState>,
    timeline: Vec<TimelineEntry>,
    rejections: RejectionSet,
) -> RunResult {
    let hypotheses: Vec<HypothesisResult> = states
        .iter()
        .enumerate()
        .map(|(i, s)| HypothesisResult {
            index: i,
            tau: s.tau.expect("every hypothesis stopped"),
            p_value: s.process.p_value(),
            rejected: s.rejected,
            rejection_time: s.rejection_time,
        })
        .collect();
    let total_permutations = hypotheses.iter().map(|h| h.tau).sum();
    RunResult {
        rejections,
        hypotheses,
        total_permutations,
        timeline,
    }
}

// ---------------------------------------------------------------------------
// Public run flavors
// ---------------------------------------------------------------------------

/// Generic sequential loop: any strategy, any monotone procedure, optional
/// extra futility rule evaluated at each barrier. Ends with a final
/// procedure pass over the frozen p-values.
pub fn run_general(
    config: &EngineConfig,
    source: &mut dyn IndicatorSource,
    futility: Option<&FutilityRule>,
) -> Result<RunResult> {
    run_core(
        config,
        source,
        BarrierSchedule::EveryBatch(config.batch_size),
        RejectRule::Procedure,
        futility,
        true,
    )
}

/// Strictly increasing barrier times `B_M <= ... <= B_1` (deduplicated) for
/// the adaptive schedule.
fn avbc_schedule(m_total: usize, h: u64, alpha: f64) -> Vec<u64> {
    let mut times: Vec<u64> = (1..=m_total)
        .rev()
        .map(|m| adaptive_budget(m, m_total, h, alpha))
        .filter(|&t| t > 0)
        .collect();
    times.dedup();
    times
}

/// BH + anytime-valid BC run. Requires `strategy = AnytimeBc` and the BH
/// procedure. All three modes produce the same rejection set on uncapped
/// runs (rejection *times* differ: `PerRound` reports the exact round,
/// `Adaptive` the enclosing budget barrier).
pub fn run_bh_avbc(
    config: &EngineConfig,
    source: &mut dyn IndicatorSource,
    mode: AvbcMode,
) -> Result<RunResult> {
    let h = match config.strategy {
        Strategy::AnytimeBc { h } => h,
        other => {
            return Err(Error::InvalidParameter(format!(
                "run_bh_avbc requires the AnytimeBc strategy, got {other:?}"
            )))
        }
    };
    if config.procedure != Procedure::BenjaminiHochberg {
        return Err(Error::InvalidParameter(
            "run_bh_avbc requires the Benjamini-Hochberg procedure".into(),
        ));
    }
    match mode {
        AvbcMode::PerRound => run_core(
            config,
            source,
            BarrierSchedule::EveryBatch(config.batch_size),
            RejectRule::Procedure,
            None,
            true,
        ),
        AvbcMode::Adaptive => {
            let schedule = avbc_schedule(source.num_hypotheses(), h, config.alpha);
            run_core(
                config,
                source,
                BarrierSchedule::Explicit(schedule),
                RejectRule::Procedure,
                None,
                true,
            )
        }
        AvbcMode::MaxpShortcut => run_core(
            config,
            source,
            BarrierSchedule::EveryBatch(config.batch_size),
            RejectRule::MaxpShortcut,
            None,
            true,
        ),
    }
}

// ---------------------------------------------------------------------------
// BH + binomial mixture (sticky rejectable-level watermarks)
// ---------------------------------------------------------------------------

/// Critical loss count at BH rank `j`: a hypothesis with `losses <= crit` is
/// rejectable at level j·α/M. Returns −1 when no loss count qualifies.
/// Defined through the binomial quantile: the largest ℓ whose survival
/// probability at the calibrated success rate still exceeds b.
pub fn binmix_crit(t: u64, j: usize, m_total: usize, b: f64, alpha: f64) -> Result<i64> {
    let c = b * alpha * (j as f64) / (m_total as f64);
    let q = binom_quantile(1.0 - b, t + 1, c)?;
    Ok(q as i64 - 1)
}

/// BH + binomial-mixture run following the published per-round loop:
/// sticky per-hypothesis minimal rejectable ranks (the watermark form of the
/// r_{i,j} flag matrix — equivalent because crit_j is nondecreasing in j and
/// avoids O(M²) memory), threshold `m* = max{m : #{i : w_i <= m} >= m}`
/// counted over all hypotheses, rejection of active hypotheses with
/// `w_i <= m*`, then a live futility sweep in index order: hypothesis i
/// stops when its wealth at the best still-achievable level
/// `α_max = α(|A| + m*)/M` has dropped below `α_max` (equivalently
/// `sf(ℓ; t+1, b·α_max) < b·α_max²`). Stopped hypotheses keep their sticky
/// marks for the count but are never rejected later — no final pass.
pub fn run_bh_binmix(config: &EngineConfig, source: &mut dyn IndicatorSource) -> Result<RunResult> {
    config.validate()?;
    let b = match config.strategy {
        Strategy::BinomialMixture { b } => b,
        other => {
            return Err(Error::InvalidParameter(format!(
                "run_bh_binmix requires the BinomialMixture strategy, got {other:?}"
            )))
        }
    };
    if config.procedure != Procedure::BenjaminiHochberg {
        return Err(Error::InvalidParameter(
            "run_bh_binmix requires the Benjamini-Hochberg procedure".into(),
        ));
    }
    let cap = config.max_permutations.ok_or_else(|| {
        Error::InvalidParameter(
            "run_bh_binmix requires max_permutations: wealth-based futility alone \
             need not stop adversarial loss sequences"
                .into(),
        )
    })?;
    let m_total = source.num_hypotheses();
    if m_total == 0 {
        return Err(Error::InvalidParameter("no hypotheses".into()));
    }
    let alpha = config.alpha;

    // Minimal rejectable rank per hypothesis (sticky); M+1 means "none yet".
    let unset = m_total + 1;
    let mut watermark = vec![unset; m_total];
    let mut states: Vec<HypState> = (0..m_total)
        .map(|_| HypState {
            process: PValueProcess::new(config.strategy),
            active: true,
            tau: None,
            rejected: false,
            rejection_time: None,
        })
        .collect();
    let mut timeline = Vec::new();
    let mut last_m_star = 0usize;

    // Rejectability probe in wealth form: losses <= crit_j ⟺ the survival
    // function at the rank-j success rate still exceeds b. Monotone in j.
    let rejectable_at = |losses: u64, t: u64, j: usize| -> Result<bool> {
        let c = b * alpha * (j as f64) / (m_total as f64);
        Ok(binom_sf(losses, t + 1, c)? > b)
    };
    // Smallest rank j in 1..=M at which (losses, t) is rejectable.
    let min_rejectable_rank = |losses: u64, t: u64| -> Result<usize> {
        if !rejectable_at(losses, t, m_total)? {
            return Ok(unset);
        }
        let (mut lo, mut hi) = (1usize, m_total);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if rejectable_at(losses, t, mid)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    };

    // Barrier at t = 0 (before any draw, as printed), then after each batch.
    let mut t_round = 0u64;
    loop {
        // Update watermarks for active hypotheses.
        for (i, s) in states.iter().enumerate() {
            if s.active {
                let st = s.process.state();
                let w = min_rejectable_rank(st.losses, st.t)?;
                if w < watermark[i] {
                    watermark[i] = w;
                }
            }
        }
        // m* over all hypotheses' sticky marks.
        let mut count_le = vec![0usize; m_total + 1];
        for &w in &watermark {
            if w <= m_total {
                count_le[w] += 1;
            }
        }
        for m in 1..=m_total {
            count_le[m] += count_le[m - 1];
        }
        let m_star = (1..=m_total).rev().find(|&m| count_le[m] >= m).unwrap_or(0);

        // Reject active hypotheses at or below the threshold rank.
        let mut newly = Vec::new();
        if m_star > 0 {
            for (i, s) in states.iter_mut().enumerate() {
                if s.active && watermark[i] <= m_star {
                    let t_i = s.process.state().t;
                    s.active = false;
                    s.rejected = true;
                    s.tau = Some(t_i);
                    s.rejection_time = Some(t_i);
                    newly.push(i);
                }
            }
        }
        if !newly.is_empty() || m_star != last_m_star {
            timeline.push(TimelineEntry {
                time: t_round,
                rejected: newly,
                m_star,
            });
            last_m_star = m_star;
        }

        // Futility sweep with the live active count: stopping one hypothesis
        // lowers the best achievable level for the ones after it.
        let mut a_count = states.iter().filter(|s| s.active).count();
        for s in states.iter_mut() {
            if !s.active {
                continue;
            }
            let alpha_max = alpha * (a_count + m_star) as f64 / m_total as f64;
            let c = (b * alpha_max).min(1.0);
            let st = s.process.state();
            if binom_sf(st.losses, st.t + 1, c)? < b * alpha_max * alpha_max {
                s.active = false;
                s.tau = Some(st.t);
                a_count -= 1;
            }
        }

        if !states.iter().any(|s| s.active) {
            break;
        }
        // Draw the next batch.
        let target = (t_round + config.batch_size).min(cap);
        for (hyp, s) in states.iter_mut().enumerate() {
            if s.active {
                advance_to(s, source, hyp, target, Some(cap))?;
            }
        }
        t_round = target;
        if t_round >= cap {
            // Cap barrier: one last watermark/rejection check below, then
            // everything still active futility-stops.
            for (i, s) in states.iter_mut().enumerate() {
                if s.active {
                    let st = s.process.state();
                    let w = min_rejectable_rank(st.losses, st.t)?;
                    if w < watermark[i] {
                        watermark[i] = w;
                    }
                }
            }
            let mut count_le = vec![0usize; m_total + 1];
            for &w in &watermark {
                if w <= m_total {
                    count_le[w] += 1;
                }
            }
            for m in 1..=m_total {
                count_le[m] += count_le[m - 1];
            }
            let m_star = (1..=m_total).rev().find(|&m| count_le[m] >= m).unwrap_or(0);
            let mut newly = Vec::new();
            if m_star > 0 {
                for (i, s) in states.iter_mut().enumerate() {
                    if s.active && watermark[i] <= m_star {
                        let t_i = s.process.state().t;
                        s.active = false;
                        s.rejected = true;
                        s.tau = Some(t_i);
                        s.rejection_time = Some(t_i);
                        newly.push(i);
                    }
                }
            }
            if !newly.is_empty() || m_star != last_m_star {
                timeline.push(TimelineEntry {
                    time: t_round,
                    rejected: newly,
                    m_star,
                });
                last_m_star = m_star;
            }
            for s in states.iter_mut().filter(|s| s.active) {
                s.active = false;
                s.tau = Some(s.process.state().t);
            }
            break;
        }
    }

    let indices: Vec<usize> = (0..m_total).filter(|&i| states[i].rejected).collect();
    let rejections = RejectionSet {
        indices,
        m_star: Some(last_m_star),
    };
    Ok(assemble(states, timeline, rejections))
}

// ---------------------------------------------------------------------------
// Brute-force oracle (test/verification surface)
// ---------------------------------------------------------------------------

/// Brute-force characterization of the BH + anytime-valid BC rejection set:
/// scanning r = M..0, the largest r whose budget B_r leaves at least r
/// hypotheses with classical permutation p-value (1+L)/(1+B_r) <= α·r/M.
/// Deliberately computed from the recorded indicator matrix with the
/// classical p-value formula — a route independent of the sequential
/// engine — and used to verify `run_bh_avbc` on replayed streams.
pub fn rejection_equivalence_oracle(
    indicator_matrix: &[Vec<bool>],
    h: u64,
    alpha: f64,
) -> Result<RejectionSet> {
    let m_total = indicator_matrix.len();
    if m_total == 0 {
        return Err(Error::InvalidParameter("no hypotheses".into()));
    }
    let b1 = adaptive_budget(1, m_total, h, alpha) as usize;
    for (i, row) in indicator_matrix.iter().enumerate() {
        if row.len() < b1 {
            return Err(Error::InvalidParameter(format!(
                "hypothesis {i} has {} recorded indicators; need at least B_1 = {b1}",
                row.len()
            )));
        }
    }
    // Stopped BC p-value over budget B by a literal walk of the recorded
    // indicators: h/γ when the h-th loss arrives at time γ <= B, otherwise
    // the classical (L+1)/(B+1).
    let stopped_p = |row: &[bool], budget: usize| -> f64 {
        let mut losses = 0u64;
        for (t, &loss) in row[..budget].iter().enumerate() {
            if loss {
                losses += 1;
                if losses >= h {
                    return h as f64 / (t + 1) as f64;
                }
            }
        }
        (losses + 1) as f64 / (budget as f64 + 1.0)
    };
    for r in (1..=m_total).rev() {
        let budget = adaptive_budget(r, m_total, h, alpha) as usize;
        let threshold = alpha * r as f64 / m_total as f64;
        let satisfying: Vec<usize> = indicator_matrix
            .iter()
            .enumerate()
            .filter(|(_, row)| stopped_p(row, budget) <= threshold)
            .map(|(i, _)| i)
            .collect();
        if satisfying.len() >= r {
            return Ok(RejectionSet {
                indices: satisfying,
                m_star: Some(r),
            });
        }
    }
    Ok(RejectionSet {
        indices: Vec::new(),
        m_star: Some(0),
    })
}

// ---------------------------------------------------------------------------
// Fast classical baseline
// ---------------------------------------------------------------------------

/// Classical fixed-budget permutation p-values for a whole dataset, sharing
/// one pass over the permutations. All built-in statistics are increasing
/// functions of the group-1 sum of per-column weights (mid-ranks for
/// Mann–Whitney, raw values otherwise), so each permutation costs one subset
/// sum per column. Matches the generic per-draw route exactly because both
/// compare sums of the same weights.
pub fn classical_pvalues(
    dataset: &Dataset,
    statistic: Statistic,
    budget: u64,
    seed: u64,
    mode: StreamMode,
) -> Result<Vec<f64>> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    let m_total = dataset.num_hypotheses();
    let weights: Vec<Vec<f64>> = (0..m_total)
        .map(|j| match statistic {
            Statistic::MannWhitney => mid_ranks(dataset.column(j)),
            Statistic::MeanDiff | Statistic::Identity => dataset.column(j).to_vec(),
        })
        .collect();
    let observed: Vec<f64> = weights
        .iter()
        .map(|w| {
            w.iter()
                .zip(dataset.labels())
                .filter(|&(_, &l)| l == 1)
                .map(|(&v, _)| v)
                .sum()
        })
        .collect();
    let mut stream = PermutationStream::for_dataset(seed, mode, dataset)?;
    let mut losses = vec![0u64; m_total];
    match mode {
        StreamMode::Shared => {
            // One subset per round, applied to every column (block over
            // columns with the subset hot in cache).
            for round in 0..budget {
                let subset: Vec<u32> = stream.shared_subset_for_round(round)?.to_vec();
                for j in 0..m_total {
                    let w = &weights[j];
                    let s: f64 = subset.iter().map(|&i| w[i as usize]).sum();
                    if s >= observed[j] {
                        losses[j] += 1;
                    }
                }
            }
        }
        StreamMode::Independent => {
            for j in 0..m_total {
                let w = &weights[j];
                for _ in 0..budget {
                    let subset = stream.next_group1_subset(j);
                    let s: f64 = subset.iter().map(|&i| w[i as usize]).sum();
                    if s >= observed[j] {
                        losses[j] += 1;
                    }
                }
            }
        }
    }
    Ok(losses
        .iter()
        .map(|&l| (1 + l) as f64 / (1 + budget) as f64)
        .collect())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
