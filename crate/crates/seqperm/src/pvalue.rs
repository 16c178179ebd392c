//! Sequential permutation p-value processes.
//!
//! Every strategy here watches the same sufficient statistic: after `t`
//! permutation draws, the loss count `L_t` is the number of permuted
//! statistics that were at least as extreme as the observed one. The
//! strategies differ in how they turn `(t, L_t)` into a p-value and in when
//! they stop:
//!
//! - **Classical**: draw exactly `B` permutations, report
//!   `(1 + L_B) / (1 + B)`. The running value reported before `t = B` is
//!   the conservative projection `(L_t + 1 + B - t)/(1 + B)` (the final
//!   p-value if every remaining draw were a loss), which is nonincreasing
//!   and always an upper bound for the final value.
//! - **Stopped sequential (Besag–Clifford)**: stop at
//!   `γ(h, B) = min(first t with L_t = h, B)`; report `h/γ` when the loss
//!   budget `h` was exhausted, `(L + 1)/(B + 1)` otherwise. Only valid *at*
//!   the stopping time, so the running report before `γ` is 1.
//! - **Anytime-valid sequential** ([`avbc_pvalue`]): `h/(t + h - L_t)`,
//!   frozen at `h/γ(h)` once the `h`-th loss arrives. Valid at *any*
//!   stopping time, which is what lets a multiple-testing engine stop on
//!   data-dependent rules. `h = 1` is the *aggressive* strategy
//!   `1/(t + 1)` (until the first loss).
//! - **Binomial mixture betting**: the wealth
//!   `W_t = P(X > L_t)/c`, `X ~ Bin(t+1, c)`, is a nonnegative
//!   supermartingale under the null; a level-`α'` rejection is
//!   `W_t ≥ 1/α'` with the mixture parameter calibrated as `c = b·α'`.
//!   The calibrated p-value is the running infimum over levels at which
//!   the process would have rejected.
//!
//! Ties count as losses (the comparison is `Y_t >= Y_0`), which is the
//! conservative convention.

use serde::{Deserialize, Serialize};

use crate::binom::binom_sf;
use crate::error::{Error, Result};

/// Bisection tolerance (absolute, in the α scale) for the calibrated
/// binomial-mixture p-value. Far below any practical per-hypothesis
/// threshold granularity `α/M`.
pub const CALIBRATION_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Loss state
// ---------------------------------------------------------------------------

/// Running permutation count `t` and loss count `L_t` for one hypothesis —
/// the sufficient statistic of every strategy.
///
/// Invariant: `losses <= t`; [`LossState::update`] increments `t` by exactly
/// one and `losses` by zero or one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossState {
    /// Permutations drawn so far.
    pub t: u64,
    /// `L_t`: how many drawn statistics were `>=` the observed one.
    pub losses: u64,
}

impl LossState {
    /// Fresh state with no draws.
    pub fn new() -> LossState {
        LossState::default()
    }

    /// Record one more permutation draw.
    pub fn update(&mut self, loss: bool) {
        self.t += 1;
        if loss {
            self.losses += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Strategy
// ---------------------------------------------------------------------------

/// A sequential p-value strategy with its parameters.
///
/// Use the constructor functions ([`Strategy::classical`], …) to get
/// parameter validation; the variants are public so engines can match on
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Fixed budget of `budget` permutations.
    Classical { budget: u64 },
    /// Stop at `γ(h, budget)`; interim p-value is 1.
    BesagClifford { h: u64, budget: u64 },
    /// Anytime-valid `h/(t + h - L_t)`; no budget of its own (engines cap).
    AnytimeBc { h: u64 },
    /// Betting with mixture parameter `c = b·α'`.
    BinomialMixture { b: f64 },
}

impl Strategy {
    /// Classical permutation p-value with a fixed budget `B >= 1`.
    pub fn classical(budget: u64) -> Result<Strategy> {
        if budget == 0 {
            return Err(Error::InvalidParameter(
                "classical strategy needs a budget of at least 1".into(),
            ));
        }
        Ok(Strategy::Classical { budget })
    }

    /// Stopped sequential p-value with loss budget `h >= 1` and permutation
    /// budget `B >= 1`.
    pub fn besag_clifford(h: u64, budget: u64) -> Result<Strategy> {
        if h == 0 || budget == 0 {
            return Err(Error::InvalidParameter(
                "sequential strategy needs h >= 1 and a budget of at least 1".into(),
            ));
        }
        Ok(Strategy::BesagClifford { h, budget })
    }

    /// Anytime-valid sequential p-value with loss budget `h >= 1`.
    pub fn anytime_bc(h: u64) -> Result<Strategy> {
        if h == 0 {
            return Err(Error::InvalidParameter(
                "anytime-valid strategy needs h >= 1".into(),
            ));
        }
        Ok(Strategy::AnytimeBc { h })
    }

    /// The aggressive strategy: anytime-valid with `h = 1`, i.e. the
    /// p-value `1/(t+1)` until the first loss.
    pub fn aggressive() -> Strategy {
        Strategy::AnytimeBc { h: 1 }
    }

    /// Binomial mixture betting strategy with `0 < b < 1` (the mixture
    /// parameter used when probing level `α'` is `c = b·α'`).
    pub fn binomial_mixture(b: f64) -> Result<Strategy> {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "binomial mixture parameter b must lie in (0, 1), got {b}"
            )));
        }
        Ok(Strategy::BinomialMixture { b })
    }
}

// ---------------------------------------------------------------------------
// P-value formulas (free functions shared by the process and the engine)
// ---------------------------------------------------------------------------

/// Classical permutation p-value `(1 + losses)/(1 + B)`.
///
/// # Errors
///
/// `losses > B` or `B = 0` is an invalid argument.
pub fn perm_pvalue(losses: u64, b: u64) -> Result<f64> {
    if b == 0 || losses > b {
        return Err(Error::InvalidParameter(format!(
            "classical p-value needs 0 <= losses <= B with B >= 1, got losses={losses}, B={b}"
        )));
    }
    Ok((1 + losses) as f64 / (1 + b) as f64)
}

/// Stopped sequential p-value, evaluated at the stopping time
/// `γ(h, B) = min(first t with L_t = h, B)`: `h/γ` if the loss budget was
/// hit, `(L + 1)/(B + 1)` otherwise.
///
/// # Errors
///
/// A state that cannot be at the stopping time (`L < h` with `t < B`,
/// `L > h`, or `t > B`) is an invalid state. Whether `t` is the *first*
/// time `L_t = h` cannot be checked from the state alone; that part of the
/// contract is the caller's.
pub fn bc_pvalue(state: LossState, h: u64, b: u64) -> Result<f64> {
    if h == 0 || b == 0 {
        return Err(Error::InvalidParameter(
            "bc_pvalue needs h >= 1 and B >= 1".into(),
        ));
    }
    if state.losses == h && state.t <= b {
        Ok(h as f64 / state.t as f64)
    } else if state.losses < h && state.t == b {
        Ok((state.losses + 1) as f64 / (b + 1) as f64)
    } else {
        Err(Error::InvalidState(format!(
            "loss state (t={}, L={}) is not at the stopping time for h={h}, B={b}",
            state.t, state.losses
        )))
    }
}

/// Anytime-valid sequential p-value `h/(t + h - L_t)`, valid at any `t`.
///
/// For `losses >= h` the process has stopped; the value is `h/t`, which at
/// the stopping time `t = γ(h)` is the frozen value `h/γ(h)`.
pub fn avbc_pvalue(state: LossState, h: u64) -> f64 {
    assert!(h >= 1, "avbc_pvalue needs h >= 1");
    if state.losses >= h {
        h as f64 / state.t as f64
    } else {
        h as f64 / (state.t + h - state.losses) as f64
    }
}

/// Betting wealth of the binomial mixture strategy:
/// `P(X > L_t)/c` for `X ~ Bin(t+1, c)`. Equals 1 at `t = 0` and is a
/// nonnegative supermartingale under the null.
///
/// # Errors
///
/// `c` outside `(0, 1)` is an invalid argument.
pub fn binmix_wealth(state: LossState, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mixture parameter c must lie in (0, 1), got {c}"
        )));
    }
    Ok(binom_sf(state.losses, state.t + 1, c)? / c)
}

/// Whether the α-calibrated binomial mixture (mixture parameter `c = b·α'`)
/// rejects at level `alpha_prime`: wealth `>= 1/α'`, equivalently
/// `P(X > L_t) >= b` for `X ~ Bin(t+1, b·α')`.
///
/// Monotone in `alpha_prime`: rejection regions are nested, so a rejection
/// at `α₁'` implies rejection at every `α₂' > α₁'`.
pub fn binmix_rejects_at(state: LossState, b: f64, alpha_prime: f64) -> bool {
    assert!(b > 0.0 && b < 1.0, "b must lie in (0, 1)");
    assert!(
        alpha_prime > 0.0 && alpha_prime < 1.0,
        "alpha_prime must lie in (0, 1)"
    );
    rejects_at_level(state, b, alpha_prime)
}

/// Same predicate with the level allowed to touch 1 (used internally by the
/// calibration, whose running minimum starts at 1).
fn rejects_at_level(state: LossState, b: f64, alpha: f64) -> bool {
    let c = b * alpha;
    binom_sf(state.losses, state.t + 1, c).expect("c = b*alpha lies in (0,1)") >= b
}

/// One lazy refinement step of the calibrated p-value: returns
/// `min(current, inf{α : rejects at α})` for this state, to within
/// [`CALIBRATION_TOL`].
///
/// By monotonicity the infimum can undercut `current` only if the process
/// rejects at `current` itself, so the common no-improvement case costs a
/// single tail evaluation.
pub(crate) fn refine_calibrated_pvalue(state: LossState, b: f64, current: f64) -> f64 {
    if !rejects_at_level(state, b, current) {
        return current;
    }
    let mut lo = 0.0f64;
    let mut hi = current;
    while hi - lo > CALIBRATION_TOL {
        let mid = 0.5 * (lo + hi);
        if rejects_at_level(state, b, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Calibrated p-value of the binomial mixture strategy over a loss
/// trajectory: the running infimum of levels at which any state so far
/// would have been rejected (1 if none). Bisection per improving step,
/// absolute tolerance [`CALIBRATION_TOL`].
pub fn binmix_calibrated_pvalue(history: &[LossState], b: f64) -> f64 {
    assert!(b > 0.0 && b < 1.0, "b must lie in (0, 1)");
    let mut p = 1.0;
    for &state in history {
        p = refine_calibrated_pvalue(state, b, p);
    }
    p
}

// ---------------------------------------------------------------------------
// The process state machine
// ---------------------------------------------------------------------------

/// A running sequential p-value for one hypothesis.
///
/// Wraps a [`Strategy`] with its [`LossState`] and enforces each variant's
/// stopping semantics:
///
/// - `Classical` and `BesagClifford` stop at their own stopping times;
///   updating past the stop is a contract violation
///   ([`Error::InvalidState`]).
/// - `AnytimeBc` freezes when the `h`-th loss arrives; further updates are
///   accepted as no-ops (this keeps shared-stream engines simple).
/// - `BinomialMixture` never stops by itself.
///
/// The reported p-value is a running minimum, hence nonincreasing, and
/// always lies in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueProcess {
    strategy: Strategy,
    state: LossState,
    running_min_p: f64,
}

impl PValueProcess {
    pub fn new(strategy: Strategy) -> PValueProcess {
        PValueProcess {
            strategy,
            state: LossState::new(),
            running_min_p: 1.0,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn state(&self) -> LossState {
        self.state
    }

    /// Whether the strategy's own stopping rule has fired (budget reached
    /// or loss budget exhausted). Binomial mixture never self-stops.
    pub fn is_stopped(&self) -> bool {
        match self.strategy {
            Strategy::Classical { budget } => self.state.t >= budget,
            Strategy::BesagClifford { h, budget } => {
                self.state.losses >= h || self.state.t >= budget
            }
            Strategy::AnytimeBc { h } => self.state.losses >= h,
            Strategy::BinomialMixture { .. } => false,
        }
    }

    /// Advance the process by one permutation draw.
    ///
    /// # Errors
    ///
    /// Updating a stopped `Classical` or `BesagClifford` process is an
    /// invalid state. A stopped `AnytimeBc` process ignores updates.
    pub fn update(&mut self, loss: bool) -> Result<()> {
        match self.strategy {
            Strategy::Classical { budget } => {
                if self.state.t >= budget {
                    return Err(Error::InvalidState(format!(
                        "classical process is frozen at its budget B={budget}"
                    )));
                }
                self.state.update(loss);
                // Final p-value if every remaining draw were a loss.
                let proj =
                    (self.state.losses + 1 + budget - self.state.t) as f64 / (budget + 1) as f64;
                self.running_min_p = self.running_min_p.min(proj);
            }
            Strategy::BesagClifford { h, budget } => {
                if self.state.losses >= h || self.state.t >= budget {
                    return Err(Error::InvalidState(format!(
                        "sequential process is frozen at its stopping time γ(h={h}, B={budget})"
                    )));
                }
                self.state.update(loss);
                if self.state.losses >= h || self.state.t >= budget {
                    self.running_min_p = self
                        .running_min_p
                        .min(bc_pvalue(self.state, h, budget).expect("state is at γ"));
                }
            }
            Strategy::AnytimeBc { h } => {
                if self.state.losses >= h {
                    return Ok(()); // frozen: no-op
                }
                self.state.update(loss);
                self.running_min_p = self.running_min_p.min(avbc_pvalue(self.state, h));
            }
            Strategy::BinomialMixture { b } => {
                self.state.update(loss);
                self.running_min_p = refine_calibrated_pvalue(self.state, b, self.running_min_p);
            }
        }
        Ok(())
    }

    /// The current (running-minimum) p-value, in `(0, 1]`. Valid at any
    /// stopping time for the anytime-valid variants; for `Classical` and
    /// `BesagClifford` the interim value is a conservative bound and the
    /// exact value is reached at their own stopping times.
    pub fn p_value(&self) -> f64 {
        self.running_min_p
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
