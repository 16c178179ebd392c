//! Datasets and reproducible permutation streams.
//!
//! A [`PermutationStream`] hands out label permutations for each hypothesis
//! deterministically from a single master seed. In `Independent` mode every
//! hypothesis owns a disjoint substream (seeded from the master seed and the
//! hypothesis index), so distinct hypotheses see independent permutations and
//! each substream can be driven by a separate worker without shared state.
//! In `Shared` mode the permutation is keyed by the round number alone, so
//! all hypotheses at round `t` see the *same* relabeling — permuting the
//! treatment indicators once per round.
//!
//! Since every statistic here depends on the labels only through which
//! samples land in group 1, a permutation draw is realized as a uniformly
//! random group-1 subset: the first `n1` steps of an unbiased Fisher–Yates
//! shuffle (the remaining steps could not change the subset). Permutations
//! are sampled with replacement across rounds — repeats are allowed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stats::Statistic;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// A samples-by-hypotheses numeric matrix (stored column-major so each
/// hypothesis' data is contiguous) plus a binary group-label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    labels: Vec<u8>,
    names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from per-hypothesis columns. Requires n >= 2 samples,
    /// both label values present, all entries finite, and equal column
    /// lengths. `names` may be empty (auto-named `h0`, `h1`, ...).
    pub fn new(columns: Vec<Vec<f64>>, labels: Vec<u8>, names: Vec<String>) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 samples, got {n}")));
        }
        if labels.iter().any(|&w| w > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        let n1 = labels.iter().filter(|&&w| w == 1).count();
        if n1 == 0 || n1 == n {
            return Err(Error::Data(
                "both label groups must be present (labels are all equal)".into(),
            ));
        }
        if columns.is_empty() {
            return Err(Error::Data("need at least one hypothesis column".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "column {j} has {} entries, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite entry at sample {i}, column {j}"
                )));
            }
        }
        let names = if names.is_empty() {
            (0..columns.len()).map(|j| format!("h{j}")).collect()
        } else if names.len() == columns.len() {
            names
        } else {
            return Err(Error::Data(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        };
        Ok(Dataset {
            columns,
            labels,
            names,
        })
    }

    /// Builds from row-major data (one row per sample), as parsed from files.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>, names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let m = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Data(format!(
                    "row {i} has {} fields, expected {m}",
                    row.len()
                )));
            }
        }
        let columns = (0..m)
            .map(|j| rows.iter().map(|row| row[j]).collect())
            .collect();
        Dataset::new(columns, labels, names)
    }

    /// Number of samples n.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of hypotheses M.
    pub fn num_hypotheses(&self) -> usize {
        self.columns.len()
    }

    /// Number of group-1 samples.
    pub fn n_group1(&self) -> usize {
        self.labels.iter().filter(|&&w| w == 1).count()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

// ---------------------------------------------------------------------------
// Permutation stream
// ---------------------------------------------------------------------------

/// How permutations are shared across hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StreamMode {
    /// Disjoint substream per hypothesis: permutations are independent
    /// across hypotheses.
    Independent,
    /// One permutation per round, broadcast to every hypothesis.
    Shared,
}

impl StreamMode {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "independent" => Ok(StreamMode::Independent),
            "shared" => Ok(StreamMode::Shared),
            other => Err(Error::InvalidParameter(format!(
                "unknown stream mode '{other}' (expected independent or shared)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StreamMode::Independent => "independent",
            StreamMode::Shared => "shared",
        }
    }
}

const TAG_HYP_STREAM: u64 = 0x7365_7170_6879_7073; // distinct substream domains
const TAG_SHARED_ROUND: u64 = 0x7365_7170_7368_6172;

/// Expands (master seed, two indices, domain tag) into a 32-byte generator
/// seed; distinct tuples give unrelated substreams.
pub(crate) fn derive_seed(master: u64, a: u64, b: u64, tag: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&a.to_le_bytes());
    seed[16..24].copy_from_slice(&b.to_le_bytes());
    seed[24..32].copy_from_slice(&tag.to_le_bytes());
    seed
}

/// Deterministic per-hypothesis source of label permutations.
#[derive(Debug, Clone)]
pub struct PermutationStream {
    master_seed: u64,
    mode: StreamMode,
    n: usize,
    n_group1: usize,
    /// Substream state, one per hypothesis (`Independent` mode only).
    rngs: Vec<ChaCha8Rng>,
    /// Next round number per hypothesis.
    rounds: Vec<u64>,
    /// Identity array for the partial Fisher–Yates shuffle; restored after
    /// each draw by undoing the swaps, so draws cost O(n_group1) not O(n).
    scratch: Vec<u32>,
    swap_buf: Vec<usize>,
    subset_buf: Vec<u32>,
    label_buf: Vec<u8>,
}

impl PermutationStream {
    /// Creates a stream for `num_hypotheses` hypotheses over samples with the
    /// given labels. Same (seed, mode) ⇒ identical permutation sequences.
    pub fn new(
        master_seed: u64,
        mode: StreamMode,
        num_hypotheses: usize,
        labels: &[u8],
    ) -> Result<Self> {
        let n = labels.len();
        let n_group1 = labels.iter().filter(|&&w| w == 1).count();
        if n < 2 || n_group1 == 0 || n_group1 == n {
            return Err(Error::InvalidParameter(
                "labels must contain both groups over at least 2 samples".into(),
            ));
        }
        if num_hypotheses == 0 {
            return Err(Error::InvalidParameter(
                "need at least one hypothesis".into(),
            ));
        }
        let rngs = match mode {
            StreamMode::Independent => (0..num_hypotheses)
                .map(|j| {
                    ChaCha8Rng::from_seed(derive_seed(master_seed, j as u64, 0, TAG_HYP_STREAM))
                })
                .collect(),
            StreamMode::Shared => Vec::new(),
        };
        Ok(PermutationStream {
            master_seed,
            mode,
            n,
            n_group1,
            rngs,
            rounds: vec![0; num_hypotheses],
            scratch: (0..n as u32).collect(),
            swap_buf: Vec::with_capacity(n_group1),
            subset_buf: Vec::with_capacity(n_group1),
            label_buf: vec![0; n],
        })
    }

    /// Convenience constructor from a dataset.
    pub fn for_dataset(master_seed: u64, mode: StreamMode, dataset: &Dataset) -> Result<Self> {
        PermutationStream::new(
            master_seed,
            mode,
            dataset.num_hypotheses(),
            dataset.labels(),
        )
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_group1(&self) -> usize {
        self.n_group1
    }

    /// Rounds drawn so far for hypothesis `hyp`.
    pub fn round(&self, hyp: usize) -> u64 {
        self.rounds[hyp]
    }

    fn fill_subset(
        rng: &mut ChaCha8Rng,
        scratch: &mut [u32],
        swaps: &mut Vec<usize>,
        out: &mut Vec<u32>,
        k: usize,
    ) {
        out.clear();
        swaps.clear();
        let n = scratch.len();
        for i in 0..k {
            let j = rng.random_range(i..n);
            scratch.swap(i, j);
            out.push(scratch[i]);
            swaps.push(j);
        }
        // Undo the swaps in reverse order to restore the identity array.
        for i in (0..k).rev() {
            scratch.swap(i, swaps[i]);
        }
    }

    /// Draws the next permutation for `hyp` and returns its group-1 subset
    /// (sample indices assigned label 1).
    pub fn next_group1_subset(&mut self, hyp: usize) -> &[u32] {
        let round = self.rounds[hyp];
        self.rounds[hyp] = round + 1;
        match self.mode {
            StreamMode::Independent => {
                Self::fill_subset(
                    &mut self.rngs[hyp],
                    &mut self.scratch,
                    &mut self.swap_buf,
                    &mut self.subset_buf,
                    self.n_group1,
                );
            }
            StreamMode::Shared => {
                let mut rng = ChaCha8Rng::from_seed(derive_seed(
                    self.master_seed,
                    round,
                    0,
                    TAG_SHARED_ROUND,
                ));
                Self::fill_subset(
                    &mut rng,
                    &mut self.scratch,
                    &mut self.swap_buf,
                    &mut self.subset_buf,
                    self.n_group1,
                );
            }
        }
        &self.subset_buf
    }

    /// Shared-mode broadcast access: the group-1 subset of round `round`,
    /// identical for all hypotheses and recomputable at any time.
    pub fn shared_subset_for_round(&mut self, round: u64) -> Result<&[u32]> {
        if self.mode != StreamMode::Shared {
            return Err(Error::InvalidState(
                "shared_subset_for_round requires shared mode".into(),
            ));
        }
        let mut rng =
            ChaCha8Rng::from_seed(derive_seed(self.master_seed, round, 0, TAG_SHARED_ROUND));
        Self::fill_subset(
            &mut rng,
            &mut self.scratch,
            &mut self.swap_buf,
            &mut self.subset_buf,
            self.n_group1,
        );
        Ok(&self.subset_buf)
    }

    /// Draws the next permutation for `hyp` and evaluates `statistic` on the
    /// permuted labels of the dataset column.
    pub fn next_permuted_statistic(
        &mut self,
        dataset: &Dataset,
        hyp: usize,
        statistic: Statistic,
    ) -> Result<f64> {
        if dataset.n() != self.n {
            return Err(Error::InvalidParameter(format!(
                "dataset has {} samples but stream was built for {}",
                dataset.n(),
                self.n
            )));
        }
        self.next_group1_subset(hyp);
        self.label_buf.fill(0);
        for &i in &self.subset_buf {
            self.label_buf[i as usize] = 1;
        }
        statistic.evaluate(dataset.column(hyp), &self.label_buf)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
