//! Test statistics and loss indicators.
//!
//! Statistics map a data column plus binary group labels to a real number;
//! orientation is "larger means group 1 larger" throughout so the loss
//! indicator `y_t >= y_0` composes uniformly. Mann–Whitney uses mid-ranks
//! for ties; the indicator's non-strict `>=` already treats statistic ties
//! conservatively (a tie counts as a loss).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statistic selected by name from the CLI/config layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    /// Rank-sum based Mann–Whitney U with mid-ranks for ties.
    MannWhitney,
    /// mean(group 1) − mean(group 0).
    MeanDiff,
    /// Sum of group-1 values: with one treated sample this is the raw value
    /// itself (pre-computed statistic column mode); for fixed group sizes it
    /// is an increasing affine function of `MeanDiff`, so both induce the
    /// same permutation ordering.
    Identity,
}

impl Statistic {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mann-whitney" => Ok(Statistic::MannWhitney),
            "mean-diff" => Ok(Statistic::MeanDiff),
            "identity" => Ok(Statistic::Identity),
            other => Err(Error::InvalidParameter(format!(
                "unknown statistic '{other}' (expected mann-whitney, mean-diff, or identity)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Statistic::MannWhitney => "mann-whitney",
            Statistic::MeanDiff => "mean-diff",
            Statistic::Identity => "identity",
        }
    }

    pub fn evaluate(&self, column: &[f64], labels: &[u8]) -> Result<f64> {
        match self {
            Statistic::MannWhitney => mann_whitney_u(column, labels),
            Statistic::MeanDiff => mean_diff(column, labels),
            Statistic::Identity => group1_sum(column, labels),
        }
    }
}

fn check_two_groups(column: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if column.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "column length {} != labels length {}",
            column.len(),
            labels.len()
        )));
    }
    let n1 = labels.iter().filter(|&&w| w == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidParameter(
            "both label groups must be nonempty".into(),
        ));
    }
    Ok((n0, n1))
}

/// 1-based mid-ranks of a column: tied runs receive the average of the ranks
/// they span, so rank sums are invariant to tie-breaking order.
pub fn mid_ranks(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| column[a].partial_cmp(&column[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && column[order[end]] == column[order[start]] {
            end += 1;
        }
        // Positions start..end (0-based) hold ranks start+1..=end; average them.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney U for group 1 vs group 0 from the rank sum:
/// `U = R_1 − n_1(n_1+1)/2`, equal to the number of (group-1, group-0) pairs
/// won by group 1, counting ties 1/2. Larger U ⇒ group 1 stochastically
/// larger.
pub fn mann_whitney_u(column: &[f64], labels: &[u8]) -> Result<f64> {
    let (_, n1) = check_two_groups(column, labels)?;
    let ranks = mid_ranks(column);
    let r1: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|&(_, &w)| w == 1)
        .map(|(&r, _)| r)
        .sum();
    Ok(mw_u_from_rank_sum(r1, n1))
}

/// Converts a group-1 rank sum into the U statistic. Split out so callers
/// holding precomputed mid-ranks can evaluate permutations by subset sums.
pub fn mw_u_from_rank_sum(rank_sum: f64, n1: usize) -> f64 {
    rank_sum - (n1 * (n1 + 1)) as f64 / 2.0
}

/// mean(group 1) − mean(group 0).
pub fn mean_diff(column: &[f64], labels: &[u8]) -> Result<f64> {
    let (n0, n1) = check_two_groups(column, labels)?;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for (&v, &w) in column.iter().zip(labels) {
        if w == 1 {
            s1 += v;
        } else {
            s0 += v;
        }
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

fn group1_sum(column: &[f64], labels: &[u8]) -> Result<f64> {
    check_two_groups(column, labels)?;
    Ok(column
        .iter()
        .zip(labels)
        .filter(|&(_, &w)| w == 1)
        .map(|(&v, _)| v)
        .sum())
}

/// Loss indicator `1{y_t >= y_0}`: a permuted statistic at least as large as
/// the observed one is evidence against the alternative, and ties count as
/// losses so the resulting p-values stay conservative.
pub fn loss_indicator(y_t: f64, y_0: f64) -> Result<bool> {
    if y_t.is_nan() || y_0.is_nan() {
        return Err(Error::InvalidParameter(
            "loss_indicator received NaN".into(),
        ));
    }
    Ok(y_t >= y_0)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pair-count oracle: U = #{(i,j) : w_i=1, w_j=0, v_i > v_j}
    /// + ties counted 1/2.
    fn mw_pair_count(column: &[f64], labels: &[u8]) -> f64 {
        let mut u = 0.0;
        for (i, &vi) in column.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &vj) in column.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                if vi > vj {
                    u += 1.0;
                } else if vi == vj {
                    u += 0.5;
                }
            }
        }
        u
    }

    #[test]
    fn mann_whitney_examples() {
        assert_eq!(mann_whitney_u(&[1.0, 2.0, 3.0], &[0, 0, 1]).unwrap(), 2.0);
        // Complete ties: U = n0 * n1 / 2.
        assert_eq!(mann_whitney_u(&[5.0; 6], &[0, 0, 0, 1, 1, 1]).unwrap(), 4.5);
        assert_eq!(mann_whitney_u(&[7.0; 5], &[1, 0, 0, 0, 0]).unwrap(), 2.0);
    }

    #[test]
    fn mann_whitney_matches_pair_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let n = rng.random_range(2..12);
            // Small integer support so ties actually occur.
            let column: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let fast = mann_whitney_u(&column, &labels).unwrap();
            let slow = mw_pair_count(&column, &labels);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn mid_rank_ties() {
        assert_eq!(
            mid_ranks(&[10.0, 20.0, 20.0, 30.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(mid_ranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(mid_ranks(&[5.0, 1.0]), vec![2.0, 1.0]);
    }

    #[test]
    fn mean_diff_examples() {
        assert_eq!(mean_diff(&[1.0, 2.0, 3.0], &[0, 0, 1]).unwrap(), 1.5);
        assert_eq!(mean_diff(&[4.0, 4.0], &[0, 1]).unwrap(), 0.0);
        // Antisymmetry under label swap.
        let column = [1.0, 5.0, 2.0, 8.0];
        let labels = [0u8, 1, 0, 1];
        let flipped: Vec<u8> = labels.iter().map(|&w| 1 - w).collect();
        let d = mean_diff(&column, &labels).unwrap();
        let d_flip = mean_diff(&column, &flipped).unwrap();
        assert_eq!(d, -d_flip);
    }

    #[test]
    fn identity_is_affine_in_mean_diff() {
        // For fixed group sizes: sum1 = (mean_diff + total/n0) / (1/n1 + 1/n0).
        let column = [2.0, 7.0, 1.0, 4.0, 9.0];
        let total: f64 = column.iter().sum();
        for labels in [[1u8, 0, 0, 1, 0], [0, 1, 1, 0, 0], [1, 1, 0, 0, 1]] {
            let n1 = labels.iter().filter(|&&w| w == 1).count() as f64;
            let n0 = labels.len() as f64 - n1;
            let sum1 = Statistic::Identity.evaluate(&column, &labels).unwrap();
            let md = mean_diff(&column, &labels).unwrap();
            let expected = (md + total / n0) / (1.0 / n1 + 1.0 / n0);
            assert!((sum1 - expected).abs() < 1e-12);
        }
        // Single treated sample: identity returns the raw value.
        assert_eq!(
            Statistic::Identity.evaluate(&[3.0, 9.0], &[0, 1]).unwrap(),
            9.0
        );
    }

    #[test]
    fn single_group_inputs_error() {
        assert!(mann_whitney_u(&[1.0, 2.0], &[0, 0]).is_err());
        assert!(mean_diff(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(Statistic::Identity.evaluate(&[1.0, 2.0], &[0, 0]).is_err());
        assert!(mann_whitney_u(&[1.0, 2.0], &[0]).is_err());
    }

    #[test]
    fn loss_indicator_examples() {
        assert!(loss_indicator(3.0, 3.0).unwrap());
        assert!(!loss_indicator(2.0, 3.0).unwrap());
        assert!(loss_indicator(4.0, 3.0).unwrap());
        assert!(loss_indicator(f64::NAN, 3.0).is_err());
        assert!(loss_indicator(3.0, f64::NAN).is_err());
    }

    #[test]
    fn statistic_names_round_trip() {
        for s in [
            Statistic::MannWhitney,
            Statistic::MeanDiff,
            Statistic::Identity,
        ] {
            assert_eq!(Statistic::from_name(s.name()).unwrap(), s);
        }
        assert!(Statistic::from_name("t-test").is_err());
    }
}
