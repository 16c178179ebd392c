//! Permutation-based closed testing and the sequential max-statistic
//! shortcut.
//!
//! Instead of assembling per-hypothesis p-values, the procedures here test
//! every intersection hypothesis `H_0^I = ∩_{i∈I} H_0^i` with a level-α
//! sequential permutation test and combine the decisions through the
//! closure principle (Marcus–Peritz–Gabriel): reject `H_0^i` exactly when
//! every intersection containing `i` was rejected. That controls the FWER,
//! and following Goeman–Solari the accepted intersections also yield a
//! simultaneous lower confidence bound `d(S)` on the number of true
//! discoveries inside any query set `S`.
//!
//! Two runners are provided:
//!
//! - [`closed_testing`] enumerates all `2^M − 1` nonempty intersections
//!   (guarded at `M ≤` [`MAX_CLOSURE_HYPOTHESES`]) for any [`Combiner`] and
//!   any [`Strategy`], against a replayed matrix of permuted statistic
//!   vectors.
//! - [`maxt_sequential`] is the max-combiner shortcut in the Westfall–Young
//!   tradition: with observed statistics sorted in nonincreasing order only
//!   the `M` suffix intersections `{i, …, M}` need testing. It bets with
//!   the binomial mixture strategy at a fixed mixture parameter
//!   `c ∈ (0, α)`: a suffix is rejected when its wealth reaches `1/α` and
//!   futility-stopped — together with every later suffix — when the wealth
//!   falls below `α`. The shortcut is sound for wealth rules that are
//!   nonincreasing in the loss count, because every intersection `I` is
//!   then dominated by the suffix starting at `min I`.
//!
//! Both runners drive all coordinates from **shared** permutations — one
//! permutation per round produces the whole statistic vector — and assume
//! the vectors belonging to true hypotheses are jointly exchangeable across
//! rounds.
//!
//! A semantic note on the printed futility rule of the shortcut: a futility
//! stop at suffix `i` removes `{i, …, M}` from the rejection set even when
//! some of those indices were already rejected in earlier rounds. That
//! retraction is implemented as the default;
//! [`MaxtConfig::keep_rejections_on_futility`] opts out for exploratory
//! use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procedures::RejectionSet;
use crate::pvalue::{avbc_pvalue, bc_pvalue, binmix_wealth, LossState, Strategy};
use crate::stats::Statistic;
use crate::stream::{Dataset, PermutationStream, StreamMode};

/// Hard cap on the number of hypotheses [`closed_testing`] will enumerate
/// (`2^M − 1` intersection tests).
pub const MAX_CLOSURE_HYPOTHESES: usize = 20;

// ---------------------------------------------------------------------------
// Combining functions
// ---------------------------------------------------------------------------

/// Combining function `C_I` applied to a statistic vector restricted to an
/// intersection set `I`. Every combiner here is coordinatewise monotone, so
/// larger statistics make intersections harder to retain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Combiner {
    /// `C_I(y) = max_{i∈I} y_i` — the max-statistic combiner of the
    /// Westfall–Young maxT tradition (the only one with a closure
    /// shortcut, [`maxt_sequential`]).
    Max,
    /// `C_I(y) = Σ_{i∈I} y_i`.
    Sum,
    /// `C_I(y) = #{i ∈ I : y_i ≥ thresholds[i]}` — per-hypothesis
    /// exceedance counts with user-supplied thresholds, one per
    /// hypothesis (the SAM-improving combiner of Hemerik–Goeman).
    ThresholdCount {
        /// `D^i = [thresholds[i], ∞)`; length must equal the number of
        /// hypotheses.
        thresholds: Vec<f64>,
    },
}

impl Combiner {
    /// Parameter validation against the number of hypotheses `m`.
    pub fn validate(&self, m: usize) -> Result<()> {
        if let Combiner::ThresholdCount { thresholds } = self {
            if thresholds.len() != m {
                return Err(Error::InvalidParameter(format!(
                    "threshold-count combiner has {} thresholds for {m} hypotheses",
                    thresholds.len()
                )));
            }
            if thresholds.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(
                    "threshold-count combiner thresholds must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// `C_I(stats)` for `I` given as ascending indices. An empty subset
    /// returns the combiner identity (`-∞` for max, 0 otherwise); the
    /// closure runner never queries it.
    pub fn evaluate(&self, stats: &[f64], subset: &[usize]) -> f64 {
        match self {
            Combiner::Max => subset
                .iter()
                .fold(f64::NEG_INFINITY, |acc, &i| acc.max(stats[i])),
            Combiner::Sum => subset.iter().fold(0.0, |acc, &i| acc + stats[i]),
            Combiner::ThresholdCount { thresholds } => subset
                .iter()
                .filter(|&&i| stats[i] >= thresholds[i])
                .count() as f64,
        }
    }

    /// Fills `out[mask] = C_I(stats)` for every subset mask at once via the
    /// highest-bit recurrence `C(I) = op(C(I \ {top}), stats[top])`, which
    /// accumulates in ascending index order and therefore agrees *exactly*
    /// (bit for bit) with [`Combiner::evaluate`] on ascending indices.
    fn combine_all(&self, stats: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), 1 << stats.len());
        out[0] = match self {
            Combiner::Max => f64::NEG_INFINITY,
            Combiner::Sum | Combiner::ThresholdCount { .. } => 0.0,
        };
        for mask in 1..out.len() {
            let top = (usize::BITS - 1 - mask.leading_zeros()) as usize;
            let rest = mask & !(1usize << top);
            out[mask] = match self {
                Combiner::Max => out[rest].max(stats[top]),
                Combiner::Sum => out[rest] + stats[top],
                Combiner::ThresholdCount { thresholds } => {
                    out[rest] + (stats[top] >= thresholds[top]) as u8 as f64
                }
            };
        }
    }
}

// ---------------------------------------------------------------------------
// Statistic-vector sources
// ---------------------------------------------------------------------------

/// A stream of permuted statistic *vectors*, one per round, all coordinates
/// driven by the same permutation.
pub trait StatSource {
    /// Number of coordinates (hypotheses) per round.
    fn num_hypotheses(&self) -> usize;

    /// The next round's permuted statistic vector.
    ///
    /// # Errors
    ///
    /// Exhaustion of a finite source is an invalid state: the caller asked
    /// for more permutations than were recorded.
    fn next_round(&mut self) -> Result<&[f64]>;
}

/// Replays a recorded matrix of permuted statistic vectors (row `t-1` is
/// round `t`).
#[derive(Debug, Clone)]
pub struct ReplayStatSource {
    rows: Vec<Vec<f64>>,
    pos: usize,
}

impl ReplayStatSource {
    /// Validates that the rows are nonempty, rectangular, and finite.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = match rows.first() {
            Some(first) => first.len(),
            None => {
                return Err(Error::InvalidParameter(
                    "replayed statistic source needs at least one row".into(),
                ))
            }
        };
        if width == 0 {
            return Err(Error::InvalidParameter(
                "replayed statistic rows must have at least one column".into(),
            ));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidParameter(format!(
                    "replayed statistic row {t} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "replayed statistic row {t} contains a non-finite value"
                )));
            }
        }
        Ok(ReplayStatSource { rows, pos: 0 })
    }
}

impl StatSource for ReplayStatSource {
    fn num_hypotheses(&self) -> usize {
        self.rows[0].len()
    }

    fn next_round(&mut self) -> Result<&[f64]> {
        let row = self.rows.get(self.pos).ok_or_else(|| {
            Error::InvalidState(format!(
                "replayed statistic rows exhausted after {} rounds; the run needs \
                 more permutations than were recorded",
                self.pos
            ))
        })?;
        self.pos += 1;
        Ok(row)
    }
}

/// Generates rounds from a [`Dataset`]: one shared permutation per round,
/// evaluated with the chosen statistic on every column.
#[derive(Debug)]
pub struct DatasetStatSource<'a> {
    dataset: &'a Dataset,
    statistic: Statistic,
    stream: PermutationStream,
    round: u64,
    subset_buf: Vec<u32>,
    label_buf: Vec<u8>,
    stat_buf: Vec<f64>,
}

impl<'a> DatasetStatSource<'a> {
    pub fn new(dataset: &'a Dataset, statistic: Statistic, seed: u64) -> Result<Self> {
        let stream = PermutationStream::for_dataset(seed, StreamMode::Shared, dataset)?;
        Ok(DatasetStatSource {
            dataset,
            statistic,
            stream,
            round: 0,
            subset_buf: Vec::with_capacity(dataset.n_group1()),
            label_buf: vec![0; dataset.n()],
            stat_buf: vec![0.0; dataset.num_hypotheses()],
        })
    }

    /// Observed statistics under the original labels, one per hypothesis.
    pub fn observed(&self) -> Result<Vec<f64>> {
        (0..self.dataset.num_hypotheses())
            .map(|j| {
                self.statistic
                    .evaluate(self.dataset.column(j), self.dataset.labels())
            })
            .collect()
    }
}

impl StatSource for DatasetStatSource<'_> {
    fn num_hypotheses(&self) -> usize {
        self.dataset.num_hypotheses()
    }

    fn next_round(&mut self) -> Result<&[f64]> {
        let subset = self.stream.shared_subset_for_round(self.round)?;
        self.subset_buf.clear();
        self.subset_buf.extend_from_slice(subset);
        self.round += 1;
        self.label_buf.fill(0);
        for &i in &self.subset_buf {
            self.label_buf[i as usize] = 1;
        }
        for j in 0..self.dataset.num_hypotheses() {
            self.stat_buf[j] = self
                .statistic
                .evaluate(self.dataset.column(j), &self.label_buf)?;
        }
        Ok(&self.stat_buf)
    }
}

// ---------------------------------------------------------------------------
// Sequential max-statistic shortcut
// ---------------------------------------------------------------------------

/// Parameters of [`maxt_sequential`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxtConfig {
    /// Mixture parameter of the betting wealth; must lie in `(0, alpha)`.
    pub c: f64,
    /// FWER level in `(0, 1)`.
    pub alpha: f64,
    /// When `true`, a futility cascade does *not* retract rejections it
    /// sweeps over (the printed rule retracts them; that retraction is the
    /// default).
    pub keep_rejections_on_futility: bool,
    /// Safety cap on the number of rounds; `None` runs until every
    /// hypothesis settles or the source ends.
    pub max_rounds: Option<u64>,
}

impl MaxtConfig {
    pub fn new(c: f64, alpha: f64) -> MaxtConfig {
        MaxtConfig {
            c,
            alpha,
            keep_rejections_on_futility: false,
            max_rounds: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.c > 0.0 && self.c < self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "mixture parameter c must lie in (0, alpha) = (0, {}), got {}",
                self.alpha, self.c
            )));
        }
        Ok(())
    }
}

/// Outcome of [`maxt_sequential`]. Indices refer to positions in the sorted
/// input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxtResult {
    /// Final rejection set (`m_star` is not populated; this is not a
    /// step-up procedure).
    pub rejections: RejectionSet,
    /// `τ_i`: the round at which hypothesis `i` settled — its rejection
    /// round, or the round a futility cascade removed it, whichever came
    /// first. `None` when the run hit [`MaxtConfig::max_rounds`] with the
    /// hypothesis still active.
    pub stopping_times: Vec<Option<u64>>,
    /// Rounds actually consumed from the source.
    pub rounds_used: u64,
    /// Whether the active set emptied (every hypothesis settled).
    pub resolved: bool,
}

/// Sequential max-statistic closed testing with the binomial mixture
/// betting strategy.
///
/// `observed` must be sorted in nonincreasing order; the suffix intersection
/// `{i, …, M}` then has observed combined statistic `observed[i]`. Per
/// round, each active suffix `i` (ascending) suffers a loss when the
/// round's suffix maximum `max{Y_t^j : j ≥ i}` is at least `observed[i]`;
/// its wealth is `P(X > ℓ_i)/c` for `X ~ Bin(t+1, c)`. After a loss, wealth
/// below `α` futility-stops suffixes `i..M` (retracting their rejections
/// unless configured otherwise); after a win, wealth at or above `1/α`
/// rejects hypothesis `i`.
///
/// # Errors
///
/// Unsorted or non-finite `observed`, a source width mismatch, parameters
/// outside their ranges, or source exhaustion.
pub fn maxt_sequential(
    observed: &[f64],
    source: &mut dyn StatSource,
    config: &MaxtConfig,
) -> Result<MaxtResult> {
    config.validate()?;
    let m = observed.len();
    if m == 0 {
        return Err(Error::InvalidParameter(
            "maxt_sequential needs at least one hypothesis".into(),
        ));
    }
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "observed statistics must be finite".into(),
        ));
    }
    if observed.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "observed statistics must be sorted in nonincreasing order".into(),
        ));
    }
    if source.num_hypotheses() != m {
        return Err(Error::InvalidParameter(format!(
            "source produces {} statistics per round but {m} hypotheses were observed",
            source.num_hypotheses()
        )));
    }

    let mut tau: Vec<Option<u64>> = vec![None; m];
    let mut losses = vec![0u64; m];
    let mut in_r = vec![false; m];
    let mut active = vec![true; m];
    let mut num_active = m;
    let mut suffix = vec![0.0f64; m];
    let mut t: u64 = 0;

    while num_active > 0 {
        if config.max_rounds.is_some_and(|cap| t >= cap) {
            break;
        }
        t += 1;
        let row = source.next_round()?;
        if row.len() != m {
            return Err(Error::InvalidState(format!(
                "source produced a round of width {} at t={t}, expected {m}",
                row.len()
            )));
        }
        let mut running = f64::NEG_INFINITY;
        for j in (0..m).rev() {
            let y = row[j];
            if !y.is_finite() {
                return Err(Error::Data(format!(
                    "source produced a non-finite statistic at t={t}, column {j}"
                )));
            }
            running = running.max(y);
            suffix[j] = running;
        }

        for i in 0..m {
            if !active[i] {
                continue;
            }
            if suffix[i] >= observed[i] {
                losses[i] += 1;
                let wealth = binmix_wealth(
                    LossState {
                        t,
                        losses: losses[i],
                    },
                    config.c,
                )?;
                if wealth < config.alpha {
                    // Futility cascade over {i, …, M}, exactly as printed:
                    // stopping times are min-updated and rejections swept
                    // away (unless the keep flag opts out).
                    for j in i..m {
                        tau[j] = Some(tau[j].map_or(t, |old| old.min(t)));
                        if active[j] {
                            active[j] = false;
                            num_active -= 1;
                        }
                        if !config.keep_rejections_on_futility {
                            in_r[j] = false;
                        }
                    }
                    break; // nothing at or past i is active any more
                }
            } else {
                let wealth = binmix_wealth(
                    LossState {
                        t,
                        losses: losses[i],
                    },
                    config.c,
                )?;
                if wealth >= 1.0 / config.alpha {
                    tau[i] = Some(t);
                    in_r[i] = true;
                    active[i] = false;
                    num_active -= 1;
                }
            }
        }
    }

    let indices: Vec<usize> = (0..m).filter(|&i| in_r[i]).collect();
    Ok(MaxtResult {
        rejections: RejectionSet {
            indices,
            m_star: None,
        },
        stopping_times: tau,
        rounds_used: t,
        resolved: num_active == 0,
    })
}

// ---------------------------------------------------------------------------
// Wealth thresholds (shared by the closure runner)
// ---------------------------------------------------------------------------

/// Per-round loss-count boundaries of the binomial mixture wealth at fixed
/// `(c, α)`. The wealth is strictly decreasing in the loss count, so at
/// round `t` the rejection region `{wealth ≥ 1/α}` is a prefix
/// `ℓ ≤ reject_max` (−1: empty) and the futility region `{wealth < α}` a
/// suffix `ℓ ≥ futile_min` (`t + 1`: empty). Rows are grown lazily;
/// each costs `O(log t)` tail evaluations.
struct WealthThresholds {
    c: f64,
    alpha: f64,
    reject_max: Vec<i64>,
    futile_min: Vec<u64>,
}

impl WealthThresholds {
    fn new(c: f64, alpha: f64) -> WealthThresholds {
        WealthThresholds {
            c,
            alpha,
            reject_max: Vec::new(),
            futile_min: Vec::new(),
        }
    }

    fn at(&mut self, t: u64) -> Result<(i64, u64)> {
        while (self.reject_max.len() as u64) < t {
            self.push_round()?;
        }
        let i = (t - 1) as usize;
        Ok((self.reject_max[i], self.futile_min[i]))
    }

    fn push_round(&mut self) -> Result<()> {
        let t = self.reject_max.len() as u64 + 1;
        let wealth = |l: u64| binmix_wealth(LossState { t, losses: l }, self.c);
        let reject_max = if wealth(0)? < 1.0 / self.alpha {
            -1
        } else {
            // Largest ℓ in [0, t] with wealth ≥ 1/α; the anchor ℓ = 0 holds.
            let (mut lo, mut hi) = (0u64, t);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if wealth(mid)? >= 1.0 / self.alpha {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lo as i64
        };
        let futile_min = if wealth(t)? >= self.alpha {
            t + 1
        } else {
            // Smallest ℓ with wealth < α. ℓ = 0 is never futile (its wealth
            // is at least 1 > α), so bisect on (0, t].
            let (mut lo, mut hi) = (0u64, t);
            while lo + 1 < hi {
                let mid = (lo + hi) / 2;
                if wealth(mid)? < self.alpha {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        self.reject_max.push(reject_max);
        self.futile_min.push(futile_min);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generic closed testing
// ---------------------------------------------------------------------------

/// Simultaneous true-discovery lower bound extracted from a closed-testing
/// run: `d(S) = min{|S \ I| : φ_I = 0}`, the minimum taken over all
/// intersections the closure failed to reject (always including the empty
/// one, so `0 ≤ d(S) ≤ |S|`). With probability at least `1 − α`, every
/// query set `S` contains at least `d(S)` false hypotheses simultaneously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueDiscoveryBound {
    num_hypotheses: usize,
    /// Masks of all non-rejected intersections, the empty mask included.
    accepted_masks: Vec<u32>,
}

impl TrueDiscoveryBound {
    pub fn num_hypotheses(&self) -> usize {
        self.num_hypotheses
    }

    /// `d(S)` for a query set given as hypothesis indices (duplicates
    /// collapse).
    ///
    /// # Errors
    ///
    /// An index at or beyond the number of hypotheses is invalid.
    pub fn evaluate(&self, query: &[usize]) -> Result<usize> {
        let mut qmask: u32 = 0;
        for &i in query {
            if i >= self.num_hypotheses {
                return Err(Error::InvalidParameter(format!(
                    "query index {i} out of range for {} hypotheses",
                    self.num_hypotheses
                )));
            }
            qmask |= 1 << i;
        }
        let d = self
            .accepted_masks
            .iter()
            .map(|&acc| (qmask & !acc).count_ones())
            .min()
            .expect("the empty intersection is always present");
        Ok(d as usize)
    }
}

/// Closure-principle multiple testing over a replayed matrix of permuted
/// statistic vectors: every nonempty intersection `I` is tested at level
/// `alpha` by running `strategy`'s sequential permutation test on the
/// combined statistics `C_I(Y_0), C_I(Y_1), …` (ties count as losses), and
/// hypothesis `i` is rejected when every intersection containing it was.
///
/// Strategy semantics per intersection:
///
/// - `AnytimeBc { h }`: reject the moment the anytime-valid p-value drops
///   to `alpha`; accept when the `h`-th loss freezes it above `alpha`;
///   accept at replay end otherwise (the running p-value never crossed).
/// - `BesagClifford { h, budget }` / `Classical { budget }`: the stopped
///   test on its own schedule (the replay must hold at least `budget`
///   rows); classical decisions are taken early when the pending rounds
///   can no longer change them.
/// - `BinomialMixture { b }`: bet with mixture parameter `c = b·alpha`;
///   reject at wealth `1/alpha`, accept at wealth below `alpha` or at
///   replay end — the same thresholds as [`maxt_sequential`], which is the
///   max-combiner shortcut of exactly this closure.
///
/// Returns the rejection set (FWER-controlling under joint exchangeability
/// of the true hypotheses' statistic vectors) and the true-discovery bound
/// carrying all accepted intersections.
///
/// # Errors
///
/// More than [`MAX_CLOSURE_HYPOTHESES`] hypotheses, malformed inputs, a
/// replay shorter than a fixed-budget strategy requires, or invalid
/// strategy/combiner parameters.
pub fn closed_testing(
    observed: &[f64],
    permuted: &[Vec<f64>],
    combiner: &Combiner,
    strategy: Strategy,
    alpha: f64,
) -> Result<(RejectionSet, TrueDiscoveryBound)> {
    let m = observed.len();
    if m == 0 {
        return Err(Error::InvalidParameter(
            "closed testing needs at least one hypothesis".into(),
        ));
    }
    if m > MAX_CLOSURE_HYPOTHESES {
        return Err(Error::InvalidParameter(format!(
            "closed testing enumerates 2^M - 1 intersections and refuses M = {m} > \
             {MAX_CLOSURE_HYPOTHESES}; use the max-statistic shortcut for larger M"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "observed statistics must be finite".into(),
        ));
    }
    if permuted.is_empty() {
        return Err(Error::InvalidParameter(
            "closed testing needs at least one permuted round".into(),
        ));
    }
    for (t, row) in permuted.iter().enumerate() {
        if row.len() != m {
            return Err(Error::InvalidParameter(format!(
                "permuted round {t} has {} statistics, expected {m}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "permuted round {t} contains a non-finite value"
            )));
        }
    }
    combiner.validate(m)?;
    let mixture_c = match strategy {
        Strategy::Classical { budget } | Strategy::BesagClifford { budget, .. } => {
            if budget == 0 {
                return Err(Error::InvalidParameter("budget must be at least 1".into()));
            }
            if (permuted.len() as u64) < budget {
                return Err(Error::InvalidParameter(format!(
                    "strategy needs a budget of {budget} rounds but only {} were replayed",
                    permuted.len()
                )));
            }
            if let Strategy::BesagClifford { h, .. } = strategy {
                if h == 0 {
                    return Err(Error::InvalidParameter("h must be at least 1".into()));
                }
            }
            None
        }
        Strategy::AnytimeBc { h } => {
            if h == 0 {
                return Err(Error::InvalidParameter("h must be at least 1".into()));
            }
            None
        }
        Strategy::BinomialMixture { b } => {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "binomial mixture parameter b must lie in (0, 1), got {b}"
                )));
            }
            Some(b * alpha)
        }
    };

    const UNDECIDED: u8 = 0;
    const REJECTED: u8 = 1;
    const ACCEPTED: u8 = 2;

    let size = 1usize << m;
    let mut losses = vec![0u64; size];
    let mut decision = vec![UNDECIDED; size];
    decision[0] = ACCEPTED; // the empty intersection is never rejected
    let mut undecided = size - 1;
    let mut observed_c = vec![0.0f64; size];
    combiner.combine_all(observed, &mut observed_c);
    let mut round_c = vec![0.0f64; size];
    let mut thresholds = mixture_c.map(|c| WealthThresholds::new(c, alpha));

    for (idx, row) in permuted.iter().enumerate() {
        if undecided == 0 {
            break;
        }
        let t = idx as u64 + 1;
        combiner.combine_all(row, &mut round_c);
        let (reject_max, futile_min) = match thresholds.as_mut() {
            Some(th) => th.at(t)?,
            None => (0, 0),
        };
        for mask in 1..size {
            if decision[mask] != UNDECIDED {
                continue;
            }
            if round_c[mask] >= observed_c[mask] {
                losses[mask] += 1;
            }
            let l = losses[mask];
            match strategy {
                Strategy::AnytimeBc { h } => {
                    let p = avbc_pvalue(LossState { t, losses: l }, h);
                    if p <= alpha {
                        decision[mask] = REJECTED;
                        undecided -= 1;
                    } else if l >= h {
                        decision[mask] = ACCEPTED; // frozen above alpha
                        undecided -= 1;
                    }
                }
                Strategy::BesagClifford { h, budget } => {
                    if l >= h || t >= budget {
                        let p = bc_pvalue(LossState { t, losses: l }, h, budget)?;
                        decision[mask] = if p <= alpha { REJECTED } else { ACCEPTED };
                        undecided -= 1;
                    }
                }
                Strategy::Classical { budget } => {
                    // Exact early decisions: (l+1)/(B+1) is the smallest the
                    // final p-value can be, the all-loss projection the
                    // largest.
                    let floor = (l + 1) as f64 / (budget + 1) as f64;
                    let ceil = (l + 1 + budget - t) as f64 / (budget + 1) as f64;
                    if floor > alpha {
                        decision[mask] = ACCEPTED;
                        undecided -= 1;
                    } else if ceil <= alpha {
                        decision[mask] = REJECTED;
                        undecided -= 1;
                    }
                }
                Strategy::BinomialMixture { .. } => {
                    if (l as i64) <= reject_max {
                        decision[mask] = REJECTED;
                        undecided -= 1;
                    } else if l >= futile_min {
                        decision[mask] = ACCEPTED;
                        undecided -= 1;
                    }
                }
            }
        }
    }

    // Intersections the replay could not decide were never rejected.
    for d in decision.iter_mut().skip(1) {
        if *d == UNDECIDED {
            *d = ACCEPTED;
        }
    }

    let mut covered = vec![false; m];
    let mut accepted_masks = vec![0u32];
    for (mask, &d) in decision.iter().enumerate().skip(1) {
        if d == ACCEPTED {
            accepted_masks.push(mask as u32);
            let mut bits = mask;
            while bits != 0 {
                covered[bits.trailing_zeros() as usize] = true;
                bits &= bits - 1;
            }
        }
    }
    let indices: Vec<usize> = (0..m).filter(|&i| !covered[i]).collect();
    Ok((
        RejectionSet {
            indices,
            m_star: None,
        },
        TrueDiscoveryBound {
            num_hypotheses: m,
            accepted_masks,
        },
    ))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
