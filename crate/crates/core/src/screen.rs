//! Statistical cell-level outlier screening.
//!
//! Each column runs the detectors suited to its type: IQR fences and
//! z-scores for numeric columns, relative-frequency checks for categorical
//! columns, and embedding-distance checks for free text. Flagged cells are
//! counted per row and rows at or above the threshold become outliers.
//! Null cells are never flagged here; missingness is handled by rules.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedder, HashingEmbedder};
use crate::error::{DqError, Result};
use crate::table::{parse_float, ColumnType, Table};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// IQR fence multiplier.
    pub k_iqr: f64,
    /// Z-score and embedding-distance threshold, in standard deviations.
    pub k_sd: f64,
    /// Minimum relative frequency for categorical values.
    pub f_min: f64,
    /// Numeric columns with fewer parseable values are skipped.
    pub min_numeric: usize,
    pub use_iqr: bool,
    pub use_zscore: bool,
    pub use_frequency: bool,
    pub use_embedding: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            k_iqr: 1.5,
            k_sd: 3.0,
            f_min: 0.01,
            min_numeric: 4,
            use_iqr: true,
            use_zscore: true,
            use_frequency: true,
            use_embedding: true,
        }
    }
}

/// Default row-outlier threshold: flagged cells per row.
pub const DEFAULT_ROW_THRESHOLD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    IqrFence,
    ZScore,
    RareCategory,
    EmbeddingDistance,
}

/// Per-cell detector flags; dimensions always match the screened table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFlagMatrix {
    pub columns: Vec<String>,
    pub flags: Vec<Vec<Option<DetectorKind>>>,
}

impl CellFlagMatrix {
    fn empty(table: &Table) -> Self {
        CellFlagMatrix {
            columns: table.column_names(),
            flags: vec![vec![None; table.columns.len()]; table.row_count()],
        }
    }

    pub fn row_count(&self) -> usize {
        self.flags.len()
    }

    pub fn is_flagged(&self, row: usize, col: usize) -> bool {
        self.flags[row][col].is_some()
    }

    pub fn flags_in_row(&self, row: usize) -> usize {
        self.flags[row].iter().filter(|f| f.is_some()).count()
    }

    pub fn flagged_cells(&self) -> Vec<(usize, usize, DetectorKind)> {
        let mut out = Vec::new();
        for (r, row) in self.flags.iter().enumerate() {
            for (c, flag) in row.iter().enumerate() {
                if let Some(kind) = flag {
                    out.push((r, c, *kind));
                }
            }
        }
        out
    }
}

/// Row partition produced by screening. Inliers and outliers are sorted,
/// disjoint, and together cover every row index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub inliers: Vec<usize>,
    pub outliers: Vec<usize>,
}

impl Partition {
    /// All rows treated as inliers (screening disabled).
    pub fn all_inliers(row_count: usize) -> Self {
        Partition { inliers: (0..row_count).collect(), outliers: Vec::new() }
    }

    pub fn is_outlier(&self, row: usize) -> bool {
        self.outliers.binary_search(&row).is_ok()
    }
}

/// Optional second screening stage over whole rows. The default
/// implementation passes the partition through unchanged.
pub trait MultivariateScreen {
    fn refine(&self, table: &Table, partition: Partition) -> Result<Partition>;
}

pub struct IdentityScreen;

impl MultivariateScreen for IdentityScreen {
    fn refine(&self, _table: &Table, partition: Partition) -> Result<Partition> {
        Ok(partition)
    }
}

/// Runs the per-type detectors over every cell.
pub fn detect_cell_outliers(
    table: &Table,
    config: &DetectorConfig,
    embedder: Option<&dyn Embedder>,
) -> Result<CellFlagMatrix> {
    let mut matrix = CellFlagMatrix::empty(table);
    let fallback = HashingEmbedder::default();
    let embedder = embedder.unwrap_or(&fallback);

    for (col, column) in table.columns.iter().enumerate() {
        match column.ctype {
            ColumnType::Integer | ColumnType::Real => {
                flag_numeric(table, col, config, &mut matrix);
            }
            ColumnType::Categorical => {
                if config.use_frequency {
                    flag_rare_categories(table, col, config, &mut matrix);
                }
            }
            ColumnType::Text => {
                if config.use_embedding {
                    flag_text_outliers(table, col, config, embedder, &mut matrix)?;
                }
            }
            ColumnType::Datetime => {}
        }
    }
    Ok(matrix)
}

fn flag_numeric(table: &Table, col: usize, config: &DetectorConfig, matrix: &mut CellFlagMatrix) {
    let parsed: Vec<(usize, f64)> = table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(r, row)| row[col].as_deref().and_then(parse_float).map(|v| (r, v)))
        .collect();
    if parsed.len() < config.min_numeric {
        return;
    }
    let values: Vec<f64> = parsed.iter().map(|(_, v)| *v).collect();

    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - config.k_iqr * iqr, q3 + config.k_iqr * iqr);

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();

    for (r, v) in parsed {
        if config.use_iqr && (v < lo || v > hi) {
            matrix.flags[r][col] = Some(DetectorKind::IqrFence);
        } else if config.use_zscore && sd > 0.0 && ((v - mean) / sd).abs() > config.k_sd {
            matrix.flags[r][col] = Some(DetectorKind::ZScore);
        }
    }
}

/// Linear-interpolation quantile over a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn flag_rare_categories(
    table: &Table,
    col: usize,
    config: &DetectorConfig,
    matrix: &mut CellFlagMatrix,
) {
    let values: Vec<(usize, &str)> = table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(r, row)| row[col].as_deref().map(|v| (r, v)))
        .collect();
    if values.is_empty() {
        return;
    }
    let total = values.len() as f64;
    let mut counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (_, v) in &values {
        *counts.entry(v).or_insert(0) += 1;
    }
    for (r, v) in values {
        if (counts[v] as f64) / total < config.f_min {
            matrix.flags[r][col] = Some(DetectorKind::RareCategory);
        }
    }
}

fn flag_text_outliers(
    table: &Table,
    col: usize,
    config: &DetectorConfig,
    embedder: &dyn Embedder,
    matrix: &mut CellFlagMatrix,
) -> Result<()> {
    let cells: Vec<(usize, String)> = table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(r, row)| row[col].as_ref().map(|v| (r, v.clone())))
        .collect();
    if cells.len() < config.min_numeric {
        return Ok(());
    }
    let texts: Vec<String> = cells.iter().map(|(_, v)| v.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    if vectors.iter().any(|v| v.len() != embedder.dim()) {
        return Err(DqError::Gateway("embedding dimension mismatch".to_string()));
    }

    let dim = embedder.dim();
    let mut centroid = vec![0.0; dim];
    for v in &vectors {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= vectors.len() as f64;
    }

    let dists: Vec<f64> = vectors.iter().map(|v| 1.0 - cosine(v, &centroid)).collect();
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let sd = (dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Ok(());
    }
    for ((r, _), d) in cells.iter().zip(&dists) {
        if *d > mean + config.k_sd * sd {
            matrix.flags[*r][col] = Some(DetectorKind::EmbeddingDistance);
        }
    }
    Ok(())
}

/// Splits rows into inliers and outliers: a row with at least `tau`
/// flagged cells is an outlier.
pub fn screen_rows(flags: &CellFlagMatrix, tau: usize) -> Partition {
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for row in 0..flags.row_count() {
        if flags.flags_in_row(row) >= tau {
            outliers.push(row);
        } else {
            inliers.push(row);
        }
    }
    Partition { inliers, outliers }
}

/// Draws up to `k` distinct values of `column` from inlier rows and up to
/// `k` from outlier rows, keeping the two lists disjoint where possible.
/// Deterministic for a fixed seed.
pub fn contrast_samples(
    table: &Table,
    partition: &Partition,
    column: &str,
    k: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    let col = table
        .column_index(column)
        .ok_or_else(|| DqError::UnknownColumn(column.to_string()))?;

    let distinct_from = |rows: &[usize]| -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for &r in rows {
            if let Some(v) = table.cell(r, col) {
                if seen.insert(v.to_string()) {
                    out.push(v.to_string());
                }
            }
        }
        out
    };

    let mut rng = StdRng::seed_from_u64(seed);
    let mut clean_pool = distinct_from(&partition.inliers);
    clean_pool.shuffle(&mut rng);
    let clean: Vec<String> = clean_pool.into_iter().take(k).collect();

    let mut noise_pool = distinct_from(&partition.outliers);
    noise_pool.shuffle(&mut rng);
    let clean_set: std::collections::HashSet<&String> = clean.iter().collect();
    let (fresh, overlapping): (Vec<String>, Vec<String>) =
        noise_pool.into_iter().partition(|v| !clean_set.contains(v));
    let noise: Vec<String> = fresh.into_iter().chain(overlapping).take(k).collect();

    Ok((clean, noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Table;

    fn s(v: &str) -> Option<String> {
        Some(v.to_string())
    }

    fn numeric_table(values: &[&str]) -> Table {
        Table::from_rows("t", &["x"], values.iter().map(|v| vec![s(v)]).collect()).unwrap()
    }

    #[test]
    fn iqr_fence_flags_clear_outlier_only() {
        let table = numeric_table(&["1", "2", "3", "4", "100"]);
        let flags =
            detect_cell_outliers(&table, &DetectorConfig::default(), None).unwrap();
        let flagged = flags.flagged_cells();
        assert_eq!(flagged, vec![(4, 0, DetectorKind::IqrFence)]);
    }

    #[test]
    fn rare_category_below_f_min_is_flagged() {
        let mut rows: Vec<Vec<Option<String>>> = (0..99).map(|_| vec![s("A")]).collect();
        rows.push(vec![s("B")]);
        let table = Table::from_rows("t", &["c"], rows).unwrap();
        let config = DetectorConfig { f_min: 0.05, ..DetectorConfig::default() };
        let flags = detect_cell_outliers(&table, &config, None).unwrap();
        let flagged = flags.flagged_cells();
        assert_eq!(flagged, vec![(99, 0, DetectorKind::RareCategory)]);
    }

    #[test]
    fn constant_column_yields_no_flags() {
        let table = numeric_table(&["7", "7", "7", "7", "7", "7"]);
        let flags =
            detect_cell_outliers(&table, &DetectorConfig::default(), None).unwrap();
        assert!(flags.flagged_cells().is_empty());
    }

    #[test]
    fn short_numeric_columns_are_skipped() {
        let table = numeric_table(&["1", "2", "1000"]);
        let flags =
            detect_cell_outliers(&table, &DetectorConfig::default(), None).unwrap();
        assert!(flags.flagged_cells().is_empty());
    }

    #[test]
    fn nulls_are_never_flagged() {
        let mut rows: Vec<Vec<Option<String>>> =
            (0..20).map(|i| vec![s(&i.to_string())]).collect();
        rows.push(vec![None]);
        rows.push(vec![s("10000")]);
        let table = Table::from_rows("t", &["x"], rows).unwrap();
        let flags =
            detect_cell_outliers(&table, &DetectorConfig::default(), None).unwrap();
        assert!(flags.flagged_cells().iter().all(|&(r, _, _)| r != 20));
        assert!(flags.is_flagged(21, 0));
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        let table = numeric_table(&["1", "2", "3", "4", "100"]);
        let flags =
            detect_cell_outliers(&table, &DetectorConfig::default(), None).unwrap();
        let p = screen_rows(&flags, 1);
        let mut all: Vec<usize> =
            p.inliers.iter().chain(p.outliers.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..5).collect::<Vec<_>>());
        assert_eq!(p.outliers, vec![4]);
    }

    #[test]
    fn raising_tau_never_adds_outliers() {
        let rows: Vec<Vec<Option<String>>> = (0..30)
            .map(|i| {
                let a = if i == 0 { "9999" } else { "10" };
                let b = if i <= 1 { "8888" } else { "20" };
                vec![s(a), s(b)]
            })
            .collect();
        let table = Table::from_rows("t", &["a", "b"], rows).unwrap();
        let flags =
            detect_cell_outliers(&table, &DetectorConfig::default(), None).unwrap();
        let loose = screen_rows(&flags, 1);
        let strict = screen_rows(&flags, 2);
        for r in &strict.outliers {
            assert!(loose.outliers.contains(r));
        }
    }

    #[test]
    fn partition_json_shape_is_stable() {
        let p = Partition { inliers: vec![0, 2], outliers: vec![1] };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"inliers":[0,2],"outliers":[1]}"#);
    }

    #[test]
    fn contrast_samples_prefer_disjoint_lists() {
        let rows: Vec<Vec<Option<String>>> = (0..10)
            .map(|i| vec![s(if i < 8 { "common" } else { "weird" })])
            .collect();
        let table = Table::from_rows("t", &["x"], rows).unwrap();
        let partition = Partition { inliers: (0..8).collect(), outliers: vec![8, 9] };
        let (clean, noise) = contrast_samples(&table, &partition, "x", 3, 1).unwrap();
        assert_eq!(clean, vec!["common".to_string()]);
        assert_eq!(noise, vec!["weird".to_string()]);
        let again = contrast_samples(&table, &partition, "x", 3, 1).unwrap();
        assert_eq!((clean, noise), again);
    }

    #[test]
    fn identity_screen_passes_partition_through() {
        let table = numeric_table(&["1", "2"]);
        let p = Partition::all_inliers(2);
        let refined = IdentityScreen.refine(&table, p.clone()).unwrap();
        assert_eq!(refined, p);
    }
}
