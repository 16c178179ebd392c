//! Sequential permutation testing with anytime-valid p-values.
//!
//! Permutation p-values are usually computed with a fixed number of draws
//! chosen in advance; stopping early because a hypothesis already looks
//! hopeless (or already looks significant) silently breaks validity. This
//! crate implements p-value processes that stay valid at *any* stopping
//! time — so a multiple-testing procedure can poll them while permutations
//! are still being drawn, stop each hypothesis the moment its fate is
//! sealed, and still control FDR or FWER exactly.
//!
//! The pieces:
//!
//! - [`pvalue`]: per-hypothesis sequential p-value strategies — the
//!   classical fixed-budget estimate, Besag–Clifford sampling until `h`
//!   exceedances, its anytime-valid variant (valid at every round, not
//!   just at the stopping time), an aggressive curtailment variant, and a
//!   binomial mixture betting martingale.
//! - [`procedures`]: step-up/step-down multiple-testing procedures
//!   (Benjamini–Hochberg, Benjamini–Yekutieli, Holm, Bonferroni) applied
//!   to vectors of stopped p-values.
//! - [`engine`]: the sequential loop joining the two — batched permutation
//!   streams, adaptive per-rank budgets, early stopping, and a max-p
//!   shortcut that skips redundant BH passes.
//! - [`maxt`]: step-down max-statistic testing as a closed testing
//!   procedure with a sequential shortcut, plus true-discovery lower
//!   bounds for arbitrary subsets.
//! - [`binom`]: exact binomial tail utilities used by the betting
//!   strategies (stable log-space implementations).
//! - [`stats`], [`stream`]: test statistics, datasets, label-permutation
//!   streams with deterministic per-hypothesis substreams.
//! - [`sim`]: simulation harness — correlated Gaussian instances, common
//!   random numbers across methods, power/FDR/stopping-time metrics, and
//!   worst-case bound checks.
//! - [`io`]: matrix ingestion (TSV/CSV), count normalization, results
//!   tables, and JSON run manifests that make runs reproducible.
//!
//! Everything is deterministic given a seed: identical configurations
//! produce byte-identical outputs, regardless of thread count.

pub mod binom;
pub mod engine;
pub mod error;
pub mod io;
pub mod maxt;
pub mod procedures;
pub mod pvalue;
pub mod sim;
pub mod stats;
pub mod stream;

pub use engine::{
    adaptive_budget, run_bh_avbc, run_bh_binmix, run_general, worst_case_avg_bound, AvbcMode,
    DatasetSource, EngineConfig, HypothesisResult, IndicatorSource, Orientation, ReplaySource,
    RunResult,
};
pub use error::{Error, Result};
pub use io::{
    execute_on_dataset, filter_zero_genes, ingest_matrix, library_versions, normalize_library_size,
    results_tsv, two_sided_from_runs, LabelSource, ManifestRecord, MatrixFormat, RunFlavor,
    RunManifest,
};
pub use maxt::{
    closed_testing, maxt_sequential, Combiner, DatasetStatSource, MaxtConfig, MaxtResult,
    ReplayStatSource, StatSource, TrueDiscoveryBound, MAX_CLOSURE_HYPOTHESES,
};
pub use procedures::{Procedure, RejectionSet};
pub use pvalue::Strategy;
pub use sim::{
    adversarial_bound_check, metrics_csv, run_experiment, simulate_gaussian, worker_count,
    worst_bound_figure, BoundRow, GaussianIndicatorSource, GaussianSimConfig, Method,
    MetricsRecord, SimInstance, STANDARD_B, STANDARD_CAP, STANDARD_H,
};
pub use stats::Statistic;
pub use stream::{Dataset, PermutationStream, StreamMode};
