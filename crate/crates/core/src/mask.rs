//! Cell-level error masks shared by the injector, validators, and scorer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corrupt::ErrorType;
use crate::error::{DqError, Result};
use crate::table::Table;

/// One table cell, addressed by row index and column name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellRef {
    pub row: usize,
    pub column: String,
}

impl CellRef {
    pub fn new(row: usize, column: impl Into<String>) -> Self {
        CellRef { row, column: column.into() }
    }
}

/// Cells flagged by one validator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskFragment {
    pub rule_name: String,
    pub cells: BTreeSet<CellRef>,
}

/// Union of validator fragments, retaining which rules flagged each cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMask {
    pub cells: BTreeMap<CellRef, BTreeSet<String>>,
}

impl ErrorMask {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: &CellRef) -> bool {
        self.cells.contains_key(cell)
    }

    pub fn cell_set(&self) -> BTreeSet<CellRef> {
        self.cells.keys().cloned().collect()
    }

    pub fn insert(&mut self, cell: CellRef, rule: impl Into<String>) {
        self.cells.entry(cell).or_default().insert(rule.into());
    }
}

/// Merges fragments by set union; a cell flagged by several rules lists
/// them all. Order-insensitive and idempotent.
pub fn aggregate_masks(fragments: &[MaskFragment]) -> ErrorMask {
    let mut mask = ErrorMask::default();
    for fragment in fragments {
        for cell in &fragment.cells {
            mask.insert(cell.clone(), fragment.rule_name.clone());
        }
    }
    mask
}

/// Injected corruption ground truth: each corrupted cell with its error type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMask {
    pub cells: BTreeMap<CellRef, ErrorType>,
}

impl GroundTruthMask {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_set(&self) -> BTreeSet<CellRef> {
        self.cells.keys().cloned().collect()
    }

    pub fn count_for(&self, error_type: ErrorType) -> usize {
        self.cells.values().filter(|t| **t == error_type).count()
    }

    /// Writes `row_index,column_name,error_type` rows, sorted by cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row_index", "column_name", "error_type"])?;
        for (cell, error_type) in &self.cells {
            w.write_record([
                cell.row.to_string(),
                cell.column.clone(),
                error_type.tag().to_string(),
            ])?;
        }
        w.flush().map_err(|e| DqError::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Reads a mask written by [`GroundTruthMask::write_csv`], validating
    /// cells against the table shape when one is supplied.
    pub fn read_csv(path: &Path, table: Option<&Table>) -> Result<GroundTruthMask> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut cells = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let row: usize = record
                .get(0)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| DqError::ShapeMismatch("bad row_index".to_string()))?;
            let column = record.get(1).unwrap_or("").to_string();
            let error_type = ErrorType::from_tag(record.get(2).unwrap_or(""))
                .ok_or_else(|| {
                    DqError::ShapeMismatch(format!(
                        "unknown error_type `{}`",
                        record.get(2).unwrap_or("")
                    ))
                })?;
            if let Some(table) = table {
                if row >= table.row_count() {
                    return Err(DqError::ShapeMismatch(format!(
                        "row {row} out of range for {} rows",
                        table.row_count()
                    )));
                }
                if table.column_index(&column).is_none() {
                    return Err(DqError::UnknownColumn(column));
                }
            }
            cells.insert(CellRef { row, column }, error_type);
        }
        Ok(GroundTruthMask { cells })
    }
}

/// Reads a mask written by [`write_error_mask_csv`].
pub fn read_error_mask_csv(path: &Path) -> Result<ErrorMask> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut mask = ErrorMask::default();
    for record in reader.records() {
        let record = record?;
        let row: usize = record
            .get(0)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| DqError::ShapeMismatch("bad row_index".to_string()))?;
        let column = record.get(1).unwrap_or("").to_string();
        for rule in record.get(2).unwrap_or("").split("; ") {
            if !rule.is_empty() {
                mask.insert(CellRef::new(row, column.clone()), rule);
            }
        }
    }
    Ok(mask)
}

/// Writes a predicted mask with the rules that flagged each cell.
pub fn write_error_mask_csv(mask: &ErrorMask, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row_index", "column_name", "rules"])?;
    for (cell, rules) in &mask.cells {
        let rules: Vec<&str> = rules.iter().map(|r| r.as_str()).collect();
        w.write_record([cell.row.to_string(), cell.column.clone(), rules.join("; ")])?;
    }
    w.flush().map_err(|e| DqError::io(path.display().to_string(), e))?;
    Ok(())
}
