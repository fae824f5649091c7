//! Scoring, coverage, confidence, and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DqError, Result};
use crate::mask::{CellRef, ErrorMask, GroundTruthMask};
use crate::rules::RuleCard;
use crate::table::Table;

/// Cell-level confusion counts and derived metrics. Zero denominators
/// yield zero metrics rather than NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalResult {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> EvalResult {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalResult {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Compares a predicted mask against ground truth cell-by-cell.
pub fn score_masks(predicted: &ErrorMask, truth: &GroundTruthMask) -> EvalResult {
    score_cell_sets(&predicted.cell_set(), &truth.cell_set())
}

pub fn score_cell_sets(predicted: &BTreeSet<CellRef>, truth: &BTreeSet<CellRef>) -> EvalResult {
    let tp = predicted.intersection(truth).count();
    let fp = predicted.len() - tp;
    let fn_ = truth.len() - tp;
    EvalResult::from_counts(tp, fp, fn_)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: Vec<String>,
    pub uncovered: Vec<String>,
    pub score: f64,
}

/// Share of table columns targeted by at least one rule card.
pub fn coverage(cards: &[RuleCard], columns: &[String]) -> CoverageReport {
    let targets: BTreeSet<String> = cards
        .iter()
        .flat_map(|c| c.target_columns.iter().cloned())
        .collect();
    let all: BTreeSet<String> = columns.iter().cloned().collect();
    coverage_sets(&targets, &all)
}

/// `|X ∩ Y| / |Y|` where X are targeted columns and Y the table columns.
/// Column names are case-sensitive. An empty Y scores zero.
pub fn coverage_sets(targets: &BTreeSet<String>, columns: &BTreeSet<String>) -> CoverageReport {
    let covered: Vec<String> = columns.intersection(targets).cloned().collect();
    let uncovered: Vec<String> =
        columns.difference(targets).cloned().collect();
    let score = if columns.is_empty() {
        0.0
    } else {
        covered.len() as f64 / columns.len() as f64
    };
    CoverageReport { covered, uncovered, score }
}

/// Token logprobs for one generated rule, tagged with its rule type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceEntry {
    pub rule_name: String,
    pub rule_type: String,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub per_rule: BTreeMap<String, f64>,
    pub per_type: BTreeMap<String, f64>,
    /// Macro average: mean over rule types of their per-type means.
    pub overall: f64,
    /// Rules without token logprobs, excluded from the averages.
    pub excluded: Vec<String>,
}

/// Linear-probability confidence: per rule, 100 times the mean of
/// `exp(logprob)` over its tokens; then macro-averaged per rule type.
pub fn confidence(entries: &[ConfidenceEntry]) -> ConfidenceReport {
    let mut per_rule = BTreeMap::new();
    let mut by_type: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut excluded = Vec::new();

    for entry in entries {
        if entry.logprobs.is_empty() {
            excluded.push(entry.rule_name.clone());
            continue;
        }
        let mean_p = entry.logprobs.iter().map(|lp| lp.exp()).sum::<f64>()
            / entry.logprobs.len() as f64;
        let score = 100.0 * mean_p;
        per_rule.insert(entry.rule_name.clone(), score);
        by_type.entry(entry.rule_type.clone()).or_default().push(score);
    }

    let per_type: BTreeMap<String, f64> = by_type
        .into_iter()
        .map(|(t, scores)| {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            (t, mean)
        })
        .collect();
    let overall = if per_type.is_empty() {
        0.0
    } else {
        per_type.values().sum::<f64>() / per_type.len() as f64
    };

    ConfidenceReport { per_rule, per_type, overall, excluded }
}

/// How a rule was enforced, for report provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatorProvenance {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    pub row: usize,
    pub column: String,
    pub value: Option<String>,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityReport {
    pub dataset: String,
    pub row_count: usize,
    pub flagged_cell_count: usize,
    pub findings: Vec<Finding>,
    pub per_rule_counts: BTreeMap<String, usize>,
    pub per_column_counts: BTreeMap<String, usize>,
    pub provenance: BTreeMap<String, ValidatorProvenance>,
}

/// Builds the human-readable assessment: every flagged cell with its
/// value and triggering rules, plus per-rule and per-column tallies.
/// Findings are ordered by row, then column, then rule name.
pub fn render_report(
    table: &Table,
    mask: &ErrorMask,
    provenance: &BTreeMap<String, ValidatorProvenance>,
) -> QualityReport {
    let mut findings = Vec::new();
    let mut per_rule: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_column: BTreeMap<String, usize> = BTreeMap::new();

    for (cell, rules) in &mask.cells {
        let value = table
            .column_index(&cell.column)
            .and_then(|c| table.rows.get(cell.row).map(|row| row[c].clone()))
            .flatten();
        for rule in rules {
            *per_rule.entry(rule.clone()).or_insert(0) += 1;
        }
        *per_column.entry(cell.column.clone()).or_insert(0) += 1;
        findings.push(Finding {
            row: cell.row,
            column: cell.column.clone(),
            value,
            rules: rules.iter().cloned().collect(),
        });
    }
    findings.sort_by(|a, b| (a.row, &a.column).cmp(&(b.row, &b.column)));

    QualityReport {
        dataset: table.name.clone(),
        row_count: table.row_count(),
        flagged_cell_count: mask.len(),
        findings,
        per_rule_counts: per_rule,
        per_column_counts: per_column,
        provenance: provenance.clone(),
    }
}

impl QualityReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset: {}", self.dataset);
        let _ = writeln!(
            out,
            "rows: {}, flagged cells: {}",
            self.row_count, self.flagged_cell_count
        );
        let _ = writeln!(out, "\nper rule:");
        for (rule, count) in &self.per_rule_counts {
            let kind = self
                .provenance
                .get(rule)
                .map(|p| p.kind.as_str())
                .unwrap_or("dsl");
            let _ = writeln!(out, "  {rule} [{kind}]: {count}");
        }
        let _ = writeln!(out, "\nper column:");
        for (column, count) in &self.per_column_counts {
            let _ = writeln!(out, "  {column}: {count}");
        }
        let _ = writeln!(out, "\nfindings:");
        for f in &self.findings {
            let value = f.value.as_deref().unwrap_or("<null>");
            let _ = writeln!(
                out,
                "  row {}, {} = {value}: {}",
                f.row,
                f.column,
                f.rules.join("; ")
            );
        }
        out
    }
}

/// Appends one `(dataset, noise level, precision, recall, f1)` line,
/// writing the header first on a fresh file.
pub fn append_results_csv(
    path: &Path,
    dataset: &str,
    noise_level: f64,
    result: &EvalResult,
) -> Result<()> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DqError::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(["dataset", "noise_level", "precision", "recall", "f1"])?;
    }
    w.write_record([
        dataset.to_string(),
        format!("{noise_level}"),
        format!("{:.6}", result.precision),
        format!("{:.6}", result.recall),
        format!("{:.6}", result.f1),
    ])?;
    w.flush().map_err(|e| DqError::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(spec: &[(usize, &str)]) -> BTreeSet<CellRef> {
        spec.iter().map(|(r, c)| CellRef::new(*r, *c)).collect()
    }

    #[test]
    fn empty_masks_score_zero_not_nan() {
        let r = score_cell_sets(&BTreeSet::new(), &BTreeSet::new());
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identical_masks_score_one() {
        let m = cells(&[(0, "a"), (3, "b")]);
        let r = score_cell_sets(&m, &m);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn confusion_counts_match_hand_computation() {
        let predicted = cells(&[(0, "a"), (1, "a"), (2, "a")]);
        let truth = cells(&[(1, "a"), (2, "a"), (3, "a"), (4, "a")]);
        let r = score_cell_sets(&predicted, &truth);
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (2, 1, 2)
        );
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coverage_counts_targeted_columns() {
        let targets: BTreeSet<String> =
            ["a", "b"].iter().map(|s| s.to_string()).collect();
        let columns: BTreeSet<String> =
            ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let report = coverage_sets(&targets, &columns);
        assert_eq!(report.score, 0.5);
        assert_eq!(report.uncovered, vec!["c".to_string(), "d".to_string()]);
    }

    #[test]
    fn confidence_of_certain_tokens_is_exactly_one_hundred() {
        let report = confidence(&[ConfidenceEntry {
            rule_name: "r".to_string(),
            rule_type: "Format Compliance".to_string(),
            logprobs: vec![0.0; 12],
        }]);
        assert_eq!(report.per_rule["r"], 100.0);
        assert_eq!(report.overall, 100.0);
    }

    #[test]
    fn confidence_of_half_probability_tokens_is_fifty() {
        let lp = 0.5_f64.ln();
        let report = confidence(&[ConfidenceEntry {
            rule_name: "r".to_string(),
            rule_type: "Range Constraints".to_string(),
            logprobs: vec![lp; 7],
        }]);
        assert!((report.per_rule["r"] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn confidence_macro_averages_rule_types_not_rules() {
        let entries = vec![
            ConfidenceEntry {
                rule_name: "a".to_string(),
                rule_type: "T1".to_string(),
                logprobs: vec![0.0],
            },
            ConfidenceEntry {
                rule_name: "b".to_string(),
                rule_type: "T2".to_string(),
                logprobs: vec![0.5_f64.ln()],
            },
            ConfidenceEntry {
                rule_name: "c".to_string(),
                rule_type: "T2".to_string(),
                logprobs: vec![f64::NEG_INFINITY],
            },
        ];
        let report = confidence(&entries);
        // T1 = 100, T2 = (50 + 0) / 2 = 25; macro overall = 62.5.
        assert!((report.overall - 62.5).abs() < 1e-9);
    }

    #[test]
    fn rules_without_logprobs_are_excluded_not_zeroed() {
        let entries = vec![
            ConfidenceEntry {
                rule_name: "silent".to_string(),
                rule_type: "T".to_string(),
                logprobs: vec![],
            },
            ConfidenceEntry {
                rule_name: "loud".to_string(),
                rule_type: "T".to_string(),
                logprobs: vec![0.0],
            },
        ];
        let report = confidence(&entries);
        assert_eq!(report.excluded, vec!["silent".to_string()]);
        assert_eq!(report.overall, 100.0);
    }

    #[test]
    fn report_orders_findings_and_counts_rules() {
        let table = Table::from_rows(
            "demo",
            &["x", "y"],
            vec![
                vec![Some("1".to_string()), Some("a".to_string())],
                vec![None, Some("b".to_string())],
            ],
        )
        .unwrap();
        let mut mask = ErrorMask::default();
        mask.insert(CellRef::new(1, "y"), "r2");
        mask.insert(CellRef::new(0, "x"), "r1");
        mask.insert(CellRef::new(0, "x"), "r2");
        let report = render_report(&table, &mask, &BTreeMap::new());
        assert_eq!(report.findings.len(), 2);
        assert_eq!(report.findings[0].row, 0);
        assert_eq!(report.findings[0].rules, vec!["r1", "r2"]);
        assert_eq!(report.per_rule_counts["r2"], 2);
        assert_eq!(report.per_column_counts["x"], 1);
        let text = report.to_text();
        assert!(text.contains("row 1, y = b: r2"));
    }
}
