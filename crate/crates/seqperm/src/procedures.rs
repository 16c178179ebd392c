//! Multiple testing procedures on fixed p-value vectors.
//!
//! All procedures here are *monotone*: lowering any p-value can only grow
//! the rejection set. That property is what lets the sequential engine call
//! them on running (nonincreasing) p-values and stop hypotheses early
//! without invalidating the final decisions, so it is tested explicitly.
//!
//! Indices are 0-based throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of applying a procedure: the rejected indices (ascending) and,
/// for the BH family, the threshold index `m*`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionSet {
    /// Rejected hypothesis indices, sorted ascending.
    pub indices: Vec<usize>,
    /// For BH-type procedures, the threshold index `m*` (0 when nothing is
    /// rejectable); `None` for procedures without one.
    pub m_star: Option<usize>,
}

impl RejectionSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

fn validate(p: &[f64], alpha: f64) {
    assert!(!p.is_empty(), "need at least one p-value");
    assert!(
        alpha > 0.0 && alpha < 1.0,
        "alpha must lie in (0, 1), got {alpha}"
    );
    for (i, &v) in p.iter().enumerate() {
        assert!(
            v > 0.0 && v <= 1.0,
            "p-value {v} at index {i} outside (0, 1]"
        );
    }
}

/// The BH threshold index
/// `m* = max{m in 1..=M : #{i : p_i <= m*alpha/M} >= m}` (0 if the set is
/// empty), computed with a single sort and one reverse scan: with sorted
/// p-values, the count condition at `m` is simply `p_(m) <= m*alpha/M`.
pub fn bh_threshold(p: &[f64], alpha: f64) -> usize {
    validate(p, alpha);
    let m_total = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("p-values are not NaN"));
    for m in (1..=m_total).rev() {
        if sorted[m - 1] <= (m as f64) * alpha / (m_total as f64) {
            return m;
        }
    }
    0
}

/// Benjamini–Hochberg: rejects `{i : p_i <= m* * alpha / M}`.
pub fn bh_reject(p: &[f64], alpha: f64) -> RejectionSet {
    let m_star = bh_threshold(p, alpha);
    let cutoff = (m_star as f64) * alpha / (p.len() as f64);
    let indices = p
        .iter()
        .enumerate()
        .filter(|&(_, &v)| m_star > 0 && v <= cutoff)
        .map(|(i, _)| i)
        .collect();
    RejectionSet {
        indices,
        m_star: Some(m_star),
    }
}

/// Harmonic number `H_M = 1 + 1/2 + ... + 1/M`.
fn harmonic(m: usize) -> f64 {
    (1..=m).map(|k| 1.0 / k as f64).sum()
}

/// Benjamini–Yekutieli: BH at the corrected level `alpha / H_M`, which
/// keeps FDR control under arbitrary dependence.
pub fn by_reject(p: &[f64], alpha: f64) -> RejectionSet {
    validate(p, alpha);
    bh_reject(p, alpha / harmonic(p.len()))
}

/// Holm step-down: with sorted p-values, reject prefixes while
/// `p_(k) <= alpha / (M - k)` (0-based `k`); FWER control under arbitrary
/// dependence.
pub fn holm_reject(p: &[f64], alpha: f64) -> RejectionSet {
    validate(p, alpha);
    let m_total = p.len();
    let mut order: Vec<usize> = (0..m_total).collect();
    order.sort_unstable_by(|&a, &b| p[a].partial_cmp(&p[b]).expect("p-values are not NaN"));
    let mut indices = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if p[i] <= alpha / ((m_total - k) as f64) {
            indices.push(i);
        } else {
            break;
        }
    }
    indices.sort_unstable();
    RejectionSet {
        indices,
        m_star: None,
    }
}

/// Bonferroni: reject `{i : p_i <= alpha / M}`.
pub fn bonferroni_reject(p: &[f64], alpha: f64) -> RejectionSet {
    validate(p, alpha);
    let cutoff = alpha / (p.len() as f64);
    let indices = p
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v <= cutoff)
        .map(|(i, _)| i)
        .collect();
    RejectionSet {
        indices,
        m_star: None,
    }
}

/// Max-p shortcut for BH on a partially stopped run: returns true iff every
/// active p-value clears the BH cutoff at the rank reached when the whole
/// active set is rejected on top of the `m_so_far` existing rejections,
/// i.e. `max(active) <= (|A| + m_so_far) * alpha / M`. When true the caller
/// may move the entire active set into the rejection set at once instead of
/// re-running the full procedure.
pub fn bh_maxp_shortcut_check(
    active_pvalues: &[f64],
    a_size: usize,
    m_so_far: usize,
    alpha: f64,
    m_total: usize,
) -> bool {
    assert!(!active_pvalues.is_empty(), "active set must be nonempty");
    assert_eq!(
        active_pvalues.len(),
        a_size,
        "a_size must match the active p-values"
    );
    let max_p = active_pvalues.iter().cloned().fold(f64::MIN, f64::max);
    max_p <= (a_size + m_so_far) as f64 * alpha / (m_total as f64)
}

/// The shared monotone-procedure interface used by the sequential engine:
/// any of these can be plugged into the adaptive-stopping loop because each
/// is monotone (pointwise-smaller p-values never shrink the rejection set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Procedure {
    /// Benjamini–Hochberg (FDR under positive dependence).
    BenjaminiHochberg,
    /// Benjamini–Yekutieli (FDR under arbitrary dependence).
    BenjaminiYekutieli,
    /// Holm step-down (FWER under arbitrary dependence).
    Holm,
    /// Bonferroni (FWER, single-step).
    Bonferroni,
}

impl Procedure {
    pub fn reject(self, p: &[f64], alpha: f64) -> RejectionSet {
        match self {
            Procedure::BenjaminiHochberg => bh_reject(p, alpha),
            Procedure::BenjaminiYekutieli => by_reject(p, alpha),
            Procedure::Holm => holm_reject(p, alpha),
            Procedure::Bonferroni => bonferroni_reject(p, alpha),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "bh" => Ok(Procedure::BenjaminiHochberg),
            "by" => Ok(Procedure::BenjaminiYekutieli),
            "holm" => Ok(Procedure::Holm),
            "bonferroni" => Ok(Procedure::Bonferroni),
            other => Err(Error::InvalidParameter(format!(
                "unknown procedure '{other}' (expected bh, by, holm, or bonferroni)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Procedure::BenjaminiHochberg => "bh",
            Procedure::BenjaminiYekutieli => "by",
            Procedure::Holm => "holm",
            Procedure::Bonferroni => "bonferroni",
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    /// Literal count-definition oracle for the BH threshold:
    /// the largest m whose cutoff is met by at least m p-values.
    fn bh_threshold_oracle(p: &[f64], alpha: f64) -> usize {
        let m_total = p.len();
        for m in (1..=m_total).rev() {
            let cutoff = (m as f64) * alpha / (m_total as f64);
            if p.iter().filter(|&&v| v <= cutoff).count() >= m {
                return m;
            }
        }
        0
    }

    /// One-at-a-time step-down oracle for Holm: repeatedly reject the
    /// smallest remaining p-value while it clears alpha / (#remaining).
    fn holm_oracle(p: &[f64], alpha: f64) -> Vec<usize> {
        let mut rejected = vec![false; p.len()];
        loop {
            let remaining = rejected.iter().filter(|&&r| !r).count();
            if remaining == 0 {
                break;
            }
            let best = (0..p.len())
                .filter(|&i| !rejected[i])
                .min_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap())
                .unwrap();
            if p[best] <= alpha / remaining as f64 {
                rejected[best] = true;
            } else {
                break;
            }
        }
        (0..p.len()).filter(|&i| rejected[i]).collect()
    }

    #[test]
    fn maxp_shortcut_examples() {
        // All active at level alpha with |A| = M: full rejection.
        assert!(bh_maxp_shortcut_check(&[0.05, 0.04, 0.01], 3, 0, 0.05, 3));
        // A p-value of 1 can never pass a nontrivial threshold.
        assert!(!bh_maxp_shortcut_check(&[0.01, 1.0], 2, 5, 0.1, 20));
        // Prior rejections raise the effective rank.
        assert!(bh_maxp_shortcut_check(&[0.03], 1, 5, 0.1, 20));
        assert!(!bh_maxp_shortcut_check(&[0.03], 1, 0, 0.1, 20));
    }

    #[test]
    fn bh_threshold_examples() {
        assert_eq!(bh_threshold(&[1.0, 1.0, 1.0], 0.1), 0);
        assert_eq!(bh_threshold(&[0.01, 0.02, 0.5], 0.1), 2);
        assert_eq!(bh_threshold(&[0.05, 0.1, 0.02, 0.08], 0.1), 4);
        assert_eq!(bh_threshold_oracle(&[0.01, 0.02, 0.5], 0.1), 2);
    }

    #[test]
    fn bh_reject_examples() {
        let r = bh_reject(&[0.01, 0.02, 0.5], 0.1);
        assert_eq!(r.indices, vec![0, 1]);
        assert_eq!(r.m_star, Some(2));
        assert!(bh_reject(&[1.0, 1.0, 1.0], 0.1).is_empty());
        // Single hypothesis: level-alpha test.
        assert_eq!(bh_reject(&[0.04], 0.05).indices, vec![0]);
        assert!(bh_reject(&[0.06], 0.05).is_empty());
    }

    #[test]
    fn by_reject_examples() {
        // M = 1 reduces to the level-alpha test.
        assert_eq!(by_reject(&[0.04], 0.05).indices, vec![0]);
        // M = 3: BH at alpha / (1 + 1/2 + 1/3).
        let r = by_reject(&[0.01, 0.02, 0.5], 0.1);
        let corrected = 0.1 / (1.0 + 0.5 + 1.0 / 3.0);
        assert_eq!(r, bh_reject(&[0.01, 0.02, 0.5], corrected));
        assert_eq!(r.indices, vec![0, 1]);
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_reject(&[0.04], 0.05).indices, vec![0]);
        // Bonferroni step: only the first index clears alpha/M.
        let eps = 1e-6;
        let p = [0.05 / 4.0 - eps, 1.0, 1.0, 1.0];
        assert_eq!(holm_reject(&p, 0.05).indices, vec![0]);
        // After rejecting index 0 the bar relaxes to alpha/(M-1) = 0.025,
        // which 0.02 clears even though it misses alpha/M ~ 0.0167.
        let p = [0.001, 0.02, 0.9];
        assert_eq!(holm_reject(&p, 0.05).indices, vec![0, 1]);
        assert_eq!(bonferroni_reject(&p, 0.05).indices, vec![0]);
    }

    proptest! {
        #[test]
        fn bh_threshold_matches_count_oracle(
            p in proptest::collection::vec(0.0001f64..=1.0, 1..40),
            alpha in 0.01f64..0.5,
        ) {
            prop_assert_eq!(bh_threshold(&p, alpha), bh_threshold_oracle(&p, alpha));
        }

        #[test]
        fn bh_rejection_count_equals_threshold(
            p in proptest::collection::vec(0.0001f64..=1.0, 1..40),
            alpha in 0.01f64..0.5,
        ) {
            let r = bh_reject(&p, alpha);
            prop_assert_eq!(r.len(), r.m_star.unwrap());
        }

        #[test]
        fn holm_matches_step_down_oracle(
            p in proptest::collection::vec(0.0001f64..=1.0, 1..12),
            alpha in 0.01f64..0.5,
        ) {
            prop_assert_eq!(holm_reject(&p, alpha).indices, holm_oracle(&p, alpha));
        }

        #[test]
        fn procedures_are_monotone(
            pairs in proptest::collection::vec((0.0001f64..=1.0, 0.0f64..1.0), 1..12),
            alpha in 0.01f64..0.5,
        ) {
            // Build p' >= p coordinatewise, then check reject(p) ⊇ reject(p').
            let p: Vec<f64> = pairs.iter().map(|&(v, _)| v).collect();
            let p_hi: Vec<f64> = pairs
                .iter()
                .map(|&(v, frac)| v + frac * (1.0 - v))
                .collect();
            for proc in [
                Procedure::BenjaminiHochberg,
                Procedure::BenjaminiYekutieli,
                Procedure::Holm,
                Procedure::Bonferroni,
            ] {
                let lo = proc.reject(&p, alpha);
                let hi = proc.reject(&p_hi, alpha);
                for &i in &hi.indices {
                    prop_assert!(
                        lo.contains(i),
                        "{proc:?} not monotone: index {i} rejected at larger p only"
                    );
                }
            }
        }

        #[test]
        fn by_subset_of_bh(
            p in proptest::collection::vec(0.0001f64..=1.0, 1..20),
            alpha in 0.01f64..0.5,
        ) {
            let by = by_reject(&p, alpha);
            let bh = bh_reject(&p, alpha);
            for &i in &by.indices {
                prop_assert!(bh.contains(i));
            }
        }

        #[test]
        fn bh_self_consistent_and_maximal(
            p in proptest::collection::vec(0.0001f64..=1.0, 1..10),
            alpha in 0.01f64..0.5,
        ) {
            // Exhaustive subset scan: the BH set satisfies
            // "every member p-value <= |S| alpha / M" and no strict superset
            // does.
            let m_total = p.len();
            let r = bh_reject(&p, alpha);
            let satisfies = |s: &[usize]| {
                s.iter().all(|&i| p[i] <= (s.len() as f64) * alpha / (m_total as f64))
            };
            prop_assert!(satisfies(&r.indices));
            for mask in 0u32..(1 << m_total) {
                let s: Vec<usize> = (0..m_total).filter(|&i| mask & (1 << i) != 0).collect();
                if s.len() > r.len() && r.indices.iter().all(|i| s.contains(i)) && satisfies(&s) {
                    prop_assert!(false, "superset {s:?} beats BH set {:?}", r.indices);
                }
            }
        }

        #[test]
        fn bh_threshold_nondecreasing_when_pvalue_drops(
            p in proptest::collection::vec(0.0001f64..=1.0, 1..20),
            alpha in 0.01f64..0.5,
            idx in 0usize..20,
            shrink in 0.0f64..1.0,
        ) {
            let idx = idx % p.len();
            let mut lower = p.clone();
            lower[idx] = (p[idx] * shrink).max(1e-6);
            prop_assert!(bh_threshold(&lower, alpha) >= bh_threshold(&p, alpha));
        }
    }
}
