//! Data ingestion, preprocessing, and result serialization.
//!
//! The file surface mirrors a genomics toolchain: a samples-by-hypotheses
//! TSV/CSV matrix with a header of hypothesis (gene) names and group labels
//! either in a designated column or in a sidecar file, optional library-size
//! normalization and all-zero-column filtering, and — on the way out — a
//! per-hypothesis results table (TSV) plus a JSON [`RunManifest`] that
//! echoes enough configuration to re-execute the run and reproduce the
//! table byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{
    run_bh_avbc, run_bh_binmix, run_general, AvbcMode, DatasetSource, EngineConfig, Orientation,
    RunResult,
};
use crate::error::{Error, Result};
use crate::procedures::Procedure;
use crate::stats::Statistic;
use crate::stream::Dataset;

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Input matrix format (delimiter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixFormat {
    Tsv,
    Csv,
}

impl MatrixFormat {
    /// Guesses from the file extension: `.csv` is comma-separated,
    /// everything else tab-separated.
    pub fn from_path(path: &Path) -> MatrixFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Tsv,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            MatrixFormat::Tsv => b'\t',
            MatrixFormat::Csv => b',',
        }
    }
}

/// Where the group labels come from.
#[derive(Debug, Clone, Copy)]
pub enum LabelSource<'a> {
    /// A column of the matrix itself, by header name; it is excluded from
    /// the hypothesis columns.
    Column(&'a str),
    /// A sidecar file with one `0`/`1` per line (blank lines ignored),
    /// aligned with the data rows.
    File(&'a Path),
}

fn parse_label(raw: &str, where_: &str) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Data(format!(
            "{where_}: label must be 0 or 1, got '{other}'"
        ))),
    }
}

/// Parses a samples-by-hypotheses matrix with a header row of hypothesis
/// names. Numeric cells only; a bad cell is reported with its data row
/// (1-based) and column name. CRLF and LF files parse identically.
pub fn ingest_matrix(path: &Path, format: MatrixFormat, labels: LabelSource) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() {
        return Err(Error::Data("header row is empty".into()));
    }

    let label_col = match labels {
        LabelSource::Column(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("no column named '{name}' in the header")))?,
        ),
        LabelSource::File(_) => None,
    };
    let gene_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| Some(j) != label_col)
        .collect();
    if gene_cols.is_empty() {
        return Err(Error::Data(
            "the matrix has no hypothesis columns besides the label column".into(),
        ));
    }
    let names: Vec<String> = gene_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut column_labels: Vec<u8> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 1; // 1-based data row for diagnostics
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {row_no} has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(gene_cols.len());
        for &j in &gene_cols {
            let cell = &record[j];
            let value: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "row {row_no}, column '{}': cannot parse '{cell}' as a number",
                    headers[j]
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "row {row_no}, column '{}': value '{cell}' is not finite",
                    headers[j]
                )));
            }
            row.push(value);
        }
        rows.push(row);
        if let Some(lc) = label_col {
            column_labels.push(parse_label(
                &record[lc],
                &format!("row {row_no}, column '{}'", headers[lc]),
            )?);
        }
    }

    let label_vec = match labels {
        LabelSource::Column(_) => column_labels,
        LabelSource::File(label_path) => {
            let text = std::fs::read_to_string(label_path)
                .map_err(|e| Error::Data(format!("label file {}: {e}", label_path.display())))?;
            let parsed: Vec<u8> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(i, l)| parse_label(l, &format!("label file line {}", i + 1)))
                .collect::<Result<_>>()?;
            if parsed.len() != rows.len() {
                return Err(Error::Data(format!(
                    "label file has {} labels for {} data rows",
                    parsed.len(),
                    rows.len()
                )));
            }
            parsed
        }
    };

    Dataset::from_rows(&rows, label_vec, names)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Divides every entry by its sample's library size (the row sum), the
/// plain count-normalization used for expression matrices.
///
/// # Errors
///
/// A nonpositive row sum, reported with the offending sample's row number.
pub fn normalize_library_size(dataset: &Dataset) -> Result<Dataset> {
    let n = dataset.n();
    let m = dataset.num_hypotheses();
    let mut sums = vec![0.0f64; n];
    for j in 0..m {
        for (i, &v) in dataset.column(j).iter().enumerate() {
            sums[i] += v;
        }
    }
    if let Some(i) = sums.iter().position(|&s| s <= 0.0) {
        return Err(Error::Data(format!(
            "sample {} (data row {}) has library size {}, cannot normalize",
            i,
            i + 1,
            sums[i]
        )));
    }
    let columns: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            dataset
                .column(j)
                .iter()
                .zip(&sums)
                .map(|(&v, &s)| v / s)
                .collect()
        })
        .collect();
    Dataset::new(columns, dataset.labels().to_vec(), dataset.names().to_vec())
}

/// Drops columns that are zero in every sample, returning the filtered
/// dataset (or `None` when *all* columns were zero — nothing left to test)
/// together with the removed column names.
pub fn filter_zero_genes(dataset: &Dataset) -> (Option<Dataset>, Vec<String>) {
    let m = dataset.num_hypotheses();
    let keep: Vec<usize> = (0..m)
        .filter(|&j| dataset.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let removed: Vec<String> = (0..m)
        .filter(|j| !keep.contains(j))
        .map(|j| dataset.name(j).to_owned())
        .collect();
    if keep.is_empty() {
        return (None, removed);
    }
    if removed.is_empty() {
        return (Some(dataset.clone()), removed);
    }
    let columns = keep.iter().map(|&j| dataset.column(j).to_vec()).collect();
    let names = keep.iter().map(|&j| dataset.name(j).to_owned()).collect();
    let filtered = Dataset::new(columns, dataset.labels().to_vec(), names)
        .expect("filtering columns preserves dataset validity");
    (Some(filtered), removed)
}

// ---------------------------------------------------------------------------
// Run flavors (the dataset-to-run glue shared by CLI and manifests)
// ---------------------------------------------------------------------------

/// Which engine loop a run used; recorded in the manifest so the run can be
/// re-executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunFlavor {
    /// Generic loop: any strategy, any procedure.
    General,
    /// BH + anytime-valid stopped p-values, checked every batch.
    AvbcPerRound,
    /// BH + anytime-valid stopped p-values on the adaptive budget schedule.
    AvbcAdaptive,
    /// BH via the max-p shortcut.
    AvbcMaxpShortcut,
    /// BH + binomial mixture betting.
    BhBinmix,
}

impl RunFlavor {
    pub fn name(&self) -> &'static str {
        match self {
            RunFlavor::General => "general",
            RunFlavor::AvbcPerRound => "avbc-per-round",
            RunFlavor::AvbcAdaptive => "avbc-adaptive",
            RunFlavor::AvbcMaxpShortcut => "avbc-maxp-shortcut",
            RunFlavor::BhBinmix => "bh-binmix",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "general" => Ok(RunFlavor::General),
            "avbc-per-round" => Ok(RunFlavor::AvbcPerRound),
            "avbc-adaptive" => Ok(RunFlavor::AvbcAdaptive),
            "avbc-maxp-shortcut" => Ok(RunFlavor::AvbcMaxpShortcut),
            "bh-binmix" => Ok(RunFlavor::BhBinmix),
            other => Err(Error::InvalidParameter(format!(
                "unknown run flavor '{other}'"
            ))),
        }
    }
}

/// Runs the configured engine loop on a dataset with live permutations.
pub fn execute_on_dataset(
    config: &EngineConfig,
    flavor: RunFlavor,
    dataset: &Dataset,
    statistic: Statistic,
    orientation: Orientation,
) -> Result<RunResult> {
    let mut source = DatasetSource::new(
        dataset,
        statistic,
        config.seed,
        config.stream_mode,
        orientation,
    )?;
    match flavor {
        RunFlavor::General => run_general(config, &mut source, None),
        RunFlavor::AvbcPerRound => run_bh_avbc(config, &mut source, AvbcMode::PerRound),
        RunFlavor::AvbcAdaptive => run_bh_avbc(config, &mut source, AvbcMode::Adaptive),
        RunFlavor::AvbcMaxpShortcut => run_bh_avbc(config, &mut source, AvbcMode::MaxpShortcut),
        RunFlavor::BhBinmix => run_bh_binmix(config, &mut source),
    }
}

/// Conservative two-sided composition: run both orientations, double the
/// smaller per-hypothesis p-value (capped at 1), and apply the procedure
/// once to the composed vector. Stopping times add (both runs draw their
/// own permutations); rejection times are not defined for the composition.
pub fn two_sided_from_runs(
    upper: &RunResult,
    lower: &RunResult,
    procedure: Procedure,
    alpha: f64,
) -> Result<RunResult> {
    if upper.hypotheses.len() != lower.hypotheses.len() {
        return Err(Error::InvalidParameter(format!(
            "orientation runs cover {} vs {} hypotheses",
            upper.hypotheses.len(),
            lower.hypotheses.len()
        )));
    }
    let composed: Vec<f64> = upper
        .hypotheses
        .iter()
        .zip(&lower.hypotheses)
        .map(|(u, l)| (2.0 * u.p_value.min(l.p_value)).min(1.0))
        .collect();
    let rejections = procedure.reject(&composed, alpha);
    let hypotheses: Vec<crate::engine::HypothesisResult> = upper
        .hypotheses
        .iter()
        .zip(&lower.hypotheses)
        .enumerate()
        .map(|(i, (u, l))| crate::engine::HypothesisResult {
            index: i,
            tau: u.tau + l.tau,
            p_value: composed[i],
            rejected: rejections.contains(i),
            rejection_time: None,
        })
        .collect();
    let total_permutations = hypotheses.iter().map(|h| h.tau).sum();
    Ok(RunResult {
        rejections,
        hypotheses,
        total_permutations,
        timeline: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

/// Renders the per-hypothesis results table: one TSV row per hypothesis
/// with `name, tau, p_value, rejected, rejection_time` (missing rejection
/// times as `NA`). Output is byte-deterministic for a given run.
pub fn results_tsv(run: &RunResult, names: &[String]) -> Result<String> {
    if names.len() != run.hypotheses.len() {
        return Err(Error::InvalidParameter(format!(
            "{} names for {} hypotheses",
            names.len(),
            run.hypotheses.len()
        )));
    }
    let mut out = String::from("name\ttau\tp_value\trejected\trejection_time\n");
    for h in &run.hypotheses {
        let time = h
            .rejection_time
            .map_or_else(|| "NA".to_owned(), |t| t.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            names[h.index], h.tau, h.p_value, h.rejected, time
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// One hypothesis' outcome as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub name: String,
    pub tau: u64,
    pub p_value: f64,
    pub rejected: bool,
    pub rejection_time: Option<u64>,
}

/// Everything needed to audit and re-execute a run: configuration echo,
/// library versions, seed, wall-clock duration, and per-hypothesis
/// outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: EngineConfig,
    pub flavor: RunFlavor,
    pub statistic: String,
    pub two_sided: bool,
    pub normalized: bool,
    pub filtered_genes: Vec<String>,
    /// Input path as given on the command line, if any.
    pub input: Option<String>,
    pub library_versions: BTreeMap<String, String>,
    pub seed: u64,
    /// Wall-clock duration of the run in seconds.
    pub duration_seconds: f64,
    pub hypotheses: Vec<ManifestRecord>,
}

/// Version map recorded in manifests.
pub fn library_versions() -> BTreeMap<String, String> {
    BTreeMap::from([(
        env!("CARGO_PKG_NAME").to_owned(),
        env!("CARGO_PKG_VERSION").to_owned(),
    )])
}

impl RunManifest {
    /// Assembles a manifest from a finished run.
    pub fn new(
        config: &EngineConfig,
        flavor: RunFlavor,
        statistic: Statistic,
        run: &RunResult,
        names: &[String],
        duration_seconds: f64,
    ) -> Result<RunManifest> {
        if names.len() != run.hypotheses.len() {
            return Err(Error::InvalidParameter(format!(
                "{} names for {} hypotheses",
                names.len(),
                run.hypotheses.len()
            )));
        }
        let hypotheses = run
            .hypotheses
            .iter()
            .map(|h| ManifestRecord {
                index: h.index,
                name: names[h.index].clone(),
                tau: h.tau,
                p_value: h.p_value,
                rejected: h.rejected,
                rejection_time: h.rejection_time,
            })
            .collect();
        let manifest = RunManifest {
            config: *config,
            flavor,
            statistic: statistic.name().to_owned(),
            two_sided: false,
            normalized: false,
            filtered_genes: Vec::new(),
            input: None,
            library_versions: library_versions(),
            seed: config.seed,
            duration_seconds,
            hypotheses,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Structural invariants: one record per hypothesis, indices in order,
    /// nonnegative duration.
    pub fn validate(&self) -> Result<()> {
        if self.duration_seconds < 0.0 || self.duration_seconds.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "duration must be >= 0, got {}",
                self.duration_seconds
            )));
        }
        for (i, record) in self.hypotheses.iter().enumerate() {
            if record.index != i {
                return Err(Error::InvalidParameter(format!(
                    "manifest record {i} carries index {}",
                    record.index
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        let manifest: RunManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// The results table implied by the manifest records alone; matches
    /// [`results_tsv`] of the original run byte for byte.
    pub fn results_tsv(&self) -> String {
        let mut out = String::from("name\ttau\tp_value\trejected\trejection_time\n");
        for h in &self.hypotheses {
            let time = h
                .rejection_time
                .map_or_else(|| "NA".to_owned(), |t| t.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                h.name, h.tau, h.p_value, h.rejected, time
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ReplaySource;
    use crate::pvalue::Strategy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write as _;

    fn write_temp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file.flush().unwrap();
        file
    }

    // -- ingestion -----------------------------------------------------------

    #[test]
    fn ingest_toy_tsv_with_label_column() {
        let file = write_temp(
            "geneA\tgeneB\tgroup\n1.0\t2.0\t0\n3.5\t4.0\t0\n5.0\t6.5\t1\n",
            ".tsv",
        );
        let dataset =
            ingest_matrix(file.path(), MatrixFormat::Tsv, LabelSource::Column("group")).unwrap();
        assert_eq!(dataset.n(), 3);
        assert_eq!(dataset.num_hypotheses(), 2);
        assert_eq!(dataset.names(), &["geneA".to_owned(), "geneB".to_owned()]);
        assert_eq!(dataset.column(0), &[1.0, 3.5, 5.0]);
        assert_eq!(dataset.column(1), &[2.0, 4.0, 6.5]);
        assert_eq!(dataset.labels(), &[0, 0, 1]);
    }

    #[test]
    fn ingest_csv_with_label_file() {
        let matrix = write_temp("geneA,geneB\n1,2\n3,4\n5,6\n", ".csv");
        let labels = write_temp("1\n\n0\n1\n", ".txt");
        let dataset = ingest_matrix(
            matrix.path(),
            MatrixFormat::Csv,
            LabelSource::File(labels.path()),
        )
        .unwrap();
        assert_eq!(dataset.n(), 3);
        assert_eq!(dataset.num_hypotheses(), 2);
        assert_eq!(dataset.labels(), &[1, 0, 1]);
    }

    #[test]
    fn ingest_crlf_equals_lf() {
        let lf = write_temp("a\tb\tw\n1\t2\t0\n3\t4\t1\n", ".tsv");
        let crlf = write_temp("a\tb\tw\r\n1\t2\t0\r\n3\t4\t1\r\n", ".tsv");
        let d1 = ingest_matrix(lf.path(), MatrixFormat::Tsv, LabelSource::Column("w")).unwrap();
        let d2 = ingest_matrix(crlf.path(), MatrixFormat::Tsv, LabelSource::Column("w")).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn ingest_diagnostics_name_row_and_column() {
        let file = write_temp("geneA\tgeneB\tgroup\n1\t2\t0\n3\toops\t1\n", ".tsv");
        let err = ingest_matrix(file.path(), MatrixFormat::Tsv, LabelSource::Column("group"))
            .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("row 2"), "missing row: {message}");
        assert!(message.contains("geneB"), "missing column: {message}");
        assert!(message.contains("oops"), "missing cell: {message}");

        // Non-finite numerics are rejected with the same diagnostics.
        let file = write_temp("geneA\tgroup\ninf\t0\n2\t1\n", ".tsv");
        let err = ingest_matrix(file.path(), MatrixFormat::Tsv, LabelSource::Column("group"))
            .unwrap_err();
        assert!(err.to_string().contains("not finite"), "{err}");

        // Unknown label column.
        let file = write_temp("geneA\tgroup\n1\t0\n2\t1\n", ".tsv");
        let err = ingest_matrix(
            file.path(),
            MatrixFormat::Tsv,
            LabelSource::Column("missing"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");

        // Bad label value.
        let file = write_temp("geneA\tgroup\n1\t2\n2\t1\n", ".tsv");
        let err = ingest_matrix(file.path(), MatrixFormat::Tsv, LabelSource::Column("group"))
            .unwrap_err();
        assert!(err.to_string().contains("label must be 0 or 1"), "{err}");

        // Label file with the wrong count.
        let matrix = write_temp("geneA\n1\n2\n", ".tsv");
        let labels = write_temp("1\n", ".txt");
        let err = ingest_matrix(
            matrix.path(),
            MatrixFormat::Tsv,
            LabelSource::File(labels.path()),
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("1 labels for 2 data rows"),
            "{err}"
        );

        // Missing input file maps to an I/O error.
        let err = ingest_matrix(
            Path::new("/nonexistent/matrix.tsv"),
            MatrixFormat::Tsv,
            LabelSource::Column("w"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Csv(_) | Error::Io(_)));
    }

    #[test]
    fn format_guess_from_extension() {
        assert_eq!(
            MatrixFormat::from_path(Path::new("x.csv")),
            MatrixFormat::Csv
        );
        assert_eq!(
            MatrixFormat::from_path(Path::new("x.CSV")),
            MatrixFormat::Csv
        );
        assert_eq!(
            MatrixFormat::from_path(Path::new("x.tsv")),
            MatrixFormat::Tsv
        );
        assert_eq!(
            MatrixFormat::from_path(Path::new("x.txt")),
            MatrixFormat::Tsv
        );
        assert_eq!(MatrixFormat::from_path(Path::new("x")), MatrixFormat::Tsv);
    }

    // -- preprocessing -------------------------------------------------------

    fn toy_dataset(columns: Vec<Vec<f64>>) -> Dataset {
        let n = columns[0].len();
        let mut labels = vec![0u8; n];
        labels[n - 1] = 1;
        Dataset::new(columns, labels, Vec::new()).unwrap()
    }

    #[test]
    fn normalize_rows_to_unit_sums() {
        let dataset = toy_dataset(vec![vec![2.0, 1.0], vec![2.0, 3.0]]);
        let normalized = normalize_library_size(&dataset).unwrap();
        assert_eq!(normalized.column(0), &[0.5, 0.25]);
        assert_eq!(normalized.column(1), &[0.5, 0.75]);

        // Row sums after normalization are all one.
        for i in 0..normalized.n() {
            let sum: f64 = (0..normalized.num_hypotheses())
                .map(|j| normalized.column(j)[i])
                .sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }

        // Proportional rows coincide after normalization.
        let dataset = toy_dataset(vec![vec![1.0, 10.0], vec![3.0, 30.0]]);
        let normalized = normalize_library_size(&dataset).unwrap();
        for j in 0..2 {
            assert!((normalized.column(j)[0] - normalized.column(j)[1]).abs() < 1e-15);
        }

        // Zero library size errors with the sample named.
        let dataset = toy_dataset(vec![vec![0.0, 1.0], vec![0.0, 2.0]]);
        let err = normalize_library_size(&dataset).unwrap_err();
        assert!(err.to_string().contains("sample 0"), "{err}");
    }

    #[test]
    fn filter_zero_columns() {
        let dataset = Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![0.0, 0.0]],
            vec![0, 1],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let (filtered, removed) = filter_zero_genes(&dataset);
        let filtered = filtered.unwrap();
        assert_eq!(filtered.num_hypotheses(), 1);
        assert_eq!(filtered.names(), &["b".to_owned()]);
        assert_eq!(removed, vec!["a".to_owned(), "c".to_owned()]);

        // No all-zero columns: identity.
        let (kept, removed) = filter_zero_genes(&filtered);
        assert_eq!(kept.unwrap(), filtered);
        assert!(removed.is_empty());

        // Everything zero: nothing left.
        let dataset = Dataset::new(vec![vec![0.0, 0.0]], vec![0, 1], vec!["only".into()]).unwrap();
        let (none, removed) = filter_zero_genes(&dataset);
        assert!(none.is_none());
        assert_eq!(removed, vec!["only".to_owned()]);
    }

    // -- tables and manifests -------------------------------------------------

    fn demo_dataset(seed: u64, n: usize, m: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let columns = (0..m)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let labels = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        Dataset::new(columns, labels, Vec::new()).unwrap()
    }

    fn demo_config() -> EngineConfig {
        let mut config = EngineConfig::new(0.2, Strategy::anytime_bc(2).unwrap()).unwrap();
        config.seed = 42;
        config.max_permutations = Some(500);
        config
    }

    #[test]
    fn results_table_golden() {
        let rows = vec![
            vec![true, true, true, false],
            vec![false, false, false, false],
        ];
        let mut config = EngineConfig::new(0.4, Strategy::classical(4).unwrap()).unwrap();
        config.batch_size = 4;
        let mut source = ReplaySource::new(rows);
        let run = run_general(&config, &mut source, None).unwrap();
        let names = vec!["geneA".to_owned(), "geneB".to_owned()];
        let table = results_tsv(&run, &names).unwrap();
        let expected = "name\ttau\tp_value\trejected\trejection_time\n\
                        geneA\t4\t0.8\tfalse\tNA\n\
                        geneB\t4\t0.2\ttrue\t4\n";
        assert_eq!(table, expected);

        // Name-count mismatch is rejected.
        assert!(results_tsv(&run, &names[..1]).is_err());
    }

    #[test]
    fn deterministic_outputs_for_identical_config() {
        let dataset = demo_dataset(7, 12, 6);
        let config = demo_config();
        let run1 = execute_on_dataset(
            &config,
            RunFlavor::AvbcAdaptive,
            &dataset,
            Statistic::MannWhitney,
            Orientation::Upper,
        )
        .unwrap();
        let run2 = execute_on_dataset(
            &config,
            RunFlavor::AvbcAdaptive,
            &dataset,
            Statistic::MannWhitney,
            Orientation::Upper,
        )
        .unwrap();
        let t1 = results_tsv(&run1, dataset.names()).unwrap();
        let t2 = results_tsv(&run2, dataset.names()).unwrap();
        assert_eq!(t1, t2, "same seed and config must give identical bytes");
    }

    #[test]
    fn manifest_round_trip_reexecutes_the_run() {
        let dataset = demo_dataset(11, 14, 5);
        let config = demo_config();
        let flavor = RunFlavor::AvbcAdaptive;
        let statistic = Statistic::MannWhitney;
        let run =
            execute_on_dataset(&config, flavor, &dataset, statistic, Orientation::Upper).unwrap();
        let manifest =
            RunManifest::new(&config, flavor, statistic, &run, dataset.names(), 0.25).unwrap();

        // JSON round trip preserves the manifest exactly.
        let json = manifest.to_json().unwrap();
        let back = RunManifest::from_json(&json).unwrap();
        assert_eq!(back, manifest);

        // The manifest alone reproduces the results table...
        let table = results_tsv(&run, dataset.names()).unwrap();
        assert_eq!(manifest.results_tsv(), table);

        // ...and re-executing from its config echo reproduces it again.
        let rerun = execute_on_dataset(
            &back.config,
            back.flavor,
            &dataset,
            Statistic::from_name(&back.statistic).unwrap(),
            Orientation::Upper,
        )
        .unwrap();
        assert_eq!(results_tsv(&rerun, dataset.names()).unwrap(), table);
    }

    #[test]
    fn manifest_validation() {
        let dataset = demo_dataset(3, 8, 3);
        let config = demo_config();
        let run = execute_on_dataset(
            &config,
            RunFlavor::AvbcPerRound,
            &dataset,
            Statistic::MeanDiff,
            Orientation::Upper,
        )
        .unwrap();
        // Negative duration rejected.
        assert!(RunManifest::new(
            &config,
            RunFlavor::AvbcPerRound,
            Statistic::MeanDiff,
            &run,
            dataset.names(),
            -1.0,
        )
        .is_err());
        // Record count must match the hypothesis count.
        assert!(RunManifest::new(
            &config,
            RunFlavor::AvbcPerRound,
            Statistic::MeanDiff,
            &run,
            &dataset.names()[..2],
            1.0,
        )
        .is_err());
        // Flavor names round-trip.
        for flavor in [
            RunFlavor::General,
            RunFlavor::AvbcPerRound,
            RunFlavor::AvbcAdaptive,
            RunFlavor::AvbcMaxpShortcut,
            RunFlavor::BhBinmix,
        ] {
            assert_eq!(RunFlavor::from_name(flavor.name()).unwrap(), flavor);
        }
        assert!(RunFlavor::from_name("nope").is_err());
    }

    // -- two-sided composition -------------------------------------------------

    #[test]
    fn two_sided_composition_doubles_the_smaller_side() {
        let dataset = demo_dataset(19, 16, 4);
        let config = demo_config();
        let upper = execute_on_dataset(
            &config,
            RunFlavor::AvbcAdaptive,
            &dataset,
            Statistic::MannWhitney,
            Orientation::Upper,
        )
        .unwrap();
        let lower = execute_on_dataset(
            &config,
            RunFlavor::AvbcAdaptive,
            &dataset,
            Statistic::MannWhitney,
            Orientation::Lower,
        )
        .unwrap();
        let two = two_sided_from_runs(&upper, &lower, Procedure::BenjaminiHochberg, config.alpha)
            .unwrap();
        for (i, h) in two.hypotheses.iter().enumerate() {
            let expect =
                (2.0 * upper.hypotheses[i].p_value.min(lower.hypotheses[i].p_value)).min(1.0);
            assert_eq!(h.p_value, expect);
            assert_eq!(h.tau, upper.hypotheses[i].tau + lower.hypotheses[i].tau);
            assert!(h.p_value <= 1.0);
        }
        let direct = Procedure::BenjaminiHochberg.reject(
            &two.hypotheses.iter().map(|h| h.p_value).collect::<Vec<_>>(),
            config.alpha,
        );
        assert_eq!(two.rejections, direct);

        // Mismatched runs are rejected.
        let short = execute_on_dataset(
            &demo_config(),
            RunFlavor::AvbcAdaptive,
            &demo_dataset(19, 16, 3),
            Statistic::MannWhitney,
            Orientation::Lower,
        )
        .unwrap();
        assert!(two_sided_from_runs(&upper, &short, Procedure::BenjaminiHochberg, 0.1).is_err());
    }

    // -- shortcut equivalence ---------------------------------------------------

    #[test]
    fn maxp_shortcut_equals_per_round_bh() {
        // The max-p acceleration and the per-round full BH pass must agree
        // on the final rejection set, instance for instance.
        let mut rng = ChaCha8Rng::seed_from_u64(2718);
        for trial in 0..300 {
            let m = rng.random_range(1..=50usize);
            let h = rng.random_range(1..=3u64);
            let alpha = [0.05, 0.1, 0.2][rng.random_range(0..3usize)];
            let budget = crate::engine::adaptive_budget(1, m, h, alpha) as usize + 8;
            let rows: Vec<Vec<bool>> = (0..m)
                .map(|_| {
                    let rate: f64 = rng.random::<f64>() * rng.random::<f64>();
                    (0..budget).map(|_| rng.random::<f64>() < rate).collect()
                })
                .collect();
            let config = EngineConfig::new(alpha, Strategy::anytime_bc(h).unwrap()).unwrap();

            let mut shortcut_source = ReplaySource::new(rows.clone());
            let shortcut =
                run_bh_avbc(&config, &mut shortcut_source, AvbcMode::MaxpShortcut).unwrap();
            let mut full_source = ReplaySource::new(rows);
            let full = run_bh_avbc(&config, &mut full_source, AvbcMode::PerRound).unwrap();
            assert_eq!(
                shortcut.rejections.indices, full.rejections.indices,
                "trial {trial}: shortcut diverges from the full BH path"
            );
        }
    }
}
