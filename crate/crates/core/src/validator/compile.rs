//! Spec compilation and deterministic evaluation.
//!
//! `compile_spec` resolves columns against the schema, compiles regexes, and
//! loads reference files once; `run_validator` applies the clauses row by
//! row with OR-of-violations semantics and expands violating rows to one
//! cell per target column.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{DqError, Result};
use crate::mask::{CellRef, MaskFragment};
use crate::table::{parse_datetime, parse_float, parse_int, Table};

use super::parse::normalize_name;
use super::{
    normalize_value, CaseFold, Clause, CompareOp, Normalization, Operand, TypeTag, ValidatorSpec,
};

/// A spec bound to compiled regexes and loaded reference sets. Evaluation is
/// a pure function of the table, so identical inputs give identical masks.
#[derive(Debug, Clone)]
pub struct CompiledSpec {
    /// The source spec with column names resolved against the schema.
    pub spec: ValidatorSpec,
    clauses: Vec<CompiledClause>,
}

#[derive(Debug, Clone)]
enum CompiledClause {
    NotNull {
        column: String,
    },
    Regex {
        column: String,
        re: regex::Regex,
    },
    Range {
        column: String,
        lower: Option<f64>,
        upper: Option<f64>,
        lower_open: bool,
        upper_open: bool,
    },
    ValueSet {
        column: String,
        allowed: BTreeSet<String>,
        fold: CaseFold,
    },
    TypeIs {
        column: String,
        tag: TypeTag,
    },
    Length {
        column: String,
        exact: Option<usize>,
        min: Option<usize>,
        max: Option<usize>,
    },
    Compare {
        left: String,
        op: CompareOp,
        right: Operand,
    },
    Implies {
        guard: Box<CompiledClause>,
        consequent: Box<CompiledClause>,
    },
    RefLookup {
        column: String,
        values: BTreeSet<String>,
        normalization: Vec<Normalization>,
    },
    Unique {
        column: String,
    },
}

/// Compiles `spec` against the schema. Reference lookups are resolved from
/// `ref_dir` eagerly so a missing file or column fails here, not per row.
pub fn compile_spec(
    spec: &ValidatorSpec,
    schema: &[String],
    ref_dir: Option<&Path>,
) -> Result<CompiledSpec> {
    let mut resolved_clauses = Vec::with_capacity(spec.clauses.len());
    let mut compiled = Vec::with_capacity(spec.clauses.len());
    for clause in &spec.clauses {
        let resolved = resolve_clause(clause.clone(), schema)?;
        compiled.push(compile_clause(&resolved, ref_dir)?);
        resolved_clauses.push(resolved);
    }
    let target_columns = spec
        .target_columns
        .iter()
        .map(|c| resolve_schema_column(c, schema))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompiledSpec {
        spec: ValidatorSpec {
            target_columns,
            clauses: resolved_clauses,
        },
        clauses: compiled,
    })
}

/// Maps a referenced name onto a schema column, tolerating case and
/// punctuation drift; anything unresolvable is an error.
fn resolve_schema_column(name: &str, schema: &[String]) -> Result<String> {
    if let Some(col) = schema.iter().find(|c| *c == name) {
        return Ok(col.clone());
    }
    let norm = normalize_name(name);
    schema
        .iter()
        .find(|c| normalize_name(c) == norm)
        .cloned()
        .ok_or_else(|| DqError::UnknownColumn(name.to_string()))
}

fn resolve_clause(clause: Clause, schema: &[String]) -> Result<Clause> {
    Ok(match clause {
        Clause::NotNull { column } => Clause::NotNull {
            column: resolve_schema_column(&column, schema)?,
        },
        Clause::Regex { column, pattern } => Clause::Regex {
            column: resolve_schema_column(&column, schema)?,
            pattern,
        },
        Clause::Range {
            column,
            lower,
            upper,
            lower_open,
            upper_open,
        } => Clause::Range {
            column: resolve_schema_column(&column, schema)?,
            lower,
            upper,
            lower_open,
            upper_open,
        },
        Clause::ValueSet {
            column,
            allowed,
            fold,
        } => Clause::ValueSet {
            column: resolve_schema_column(&column, schema)?,
            allowed,
            fold,
        },
        Clause::TypeIs { column, tag } => Clause::TypeIs {
            column: resolve_schema_column(&column, schema)?,
            tag,
        },
        Clause::Length {
            column,
            exact,
            min,
            max,
        } => Clause::Length {
            column: resolve_schema_column(&column, schema)?,
            exact,
            min,
            max,
        },
        Clause::Compare { left, op, right } => Clause::Compare {
            left: resolve_schema_column(&left, schema)?,
            op,
            right: match right {
                Operand::Column(c) => Operand::Column(resolve_schema_column(&c, schema)?),
                constant => constant,
            },
        },
        Clause::Implies { guard, consequent } => Clause::Implies {
            guard: Box::new(resolve_clause(*guard, schema)?),
            consequent: Box::new(resolve_clause(*consequent, schema)?),
        },
        Clause::RefLookup {
            column,
            file,
            ref_column,
            normalization,
        } => Clause::RefLookup {
            column: resolve_schema_column(&column, schema)?,
            file,
            ref_column,
            normalization,
        },
        Clause::Unique { column } => Clause::Unique {
            column: resolve_schema_column(&column, schema)?,
        },
    })
}

fn compile_clause(clause: &Clause, ref_dir: Option<&Path>) -> Result<CompiledClause> {
    Ok(match clause {
        Clause::NotNull { column } => CompiledClause::NotNull {
            column: column.clone(),
        },
        Clause::Regex { column, pattern } => CompiledClause::Regex {
            column: column.clone(),
            re: compile_anchored(pattern)?,
        },
        Clause::Range {
            column,
            lower,
            upper,
            lower_open,
            upper_open,
        } => {
            if lower.is_none() && upper.is_none() {
                return Err(DqError::Precondition(format!(
                    "range clause on `{column}` has no bound"
                )));
            }
            CompiledClause::Range {
                column: column.clone(),
                lower: *lower,
                upper: *upper,
                lower_open: *lower_open,
                upper_open: *upper_open,
            }
        }
        Clause::ValueSet {
            column,
            allowed,
            fold,
        } => CompiledClause::ValueSet {
            column: column.clone(),
            allowed: allowed.iter().map(|v| fold.apply(v)).collect(),
            fold: *fold,
        },
        Clause::TypeIs { column, tag } => CompiledClause::TypeIs {
            column: column.clone(),
            tag: tag.clone(),
        },
        Clause::Length {
            column,
            exact,
            min,
            max,
        } => CompiledClause::Length {
            column: column.clone(),
            exact: *exact,
            min: *min,
            max: *max,
        },
        Clause::Compare { left, op, right } => CompiledClause::Compare {
            left: left.clone(),
            op: *op,
            right: right.clone(),
        },
        Clause::Implies { guard, consequent } => CompiledClause::Implies {
            guard: Box::new(compile_clause(guard, ref_dir)?),
            consequent: Box::new(compile_clause(consequent, ref_dir)?),
        },
        Clause::RefLookup {
            column,
            file,
            ref_column,
            normalization,
        } => CompiledClause::RefLookup {
            column: column.clone(),
            values: load_reference_values(file, ref_column, normalization, ref_dir)?,
            normalization: normalization.clone(),
        },
        Clause::Unique { column } => CompiledClause::Unique {
            column: column.clone(),
        },
    })
}

/// Compiles a pattern anchored at the start of the value, so `^a$`-style
/// patterns behave unchanged and unanchored ones must match from the first
/// character. Mirrors how the generated snippets call their regex engine.
fn compile_anchored(pattern: &str) -> Result<regex::Regex> {
    regex::Regex::new(&format!("^(?:{pattern})")).map_err(|e| DqError::BadRegex {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })
}

/// Loads the distinct normalized values of `ref_column` from a CSV file in
/// the knowledge-base directory. Loaded once per compile, not per row.
fn load_reference_values(
    file: &str,
    ref_column: &str,
    normalization: &[Normalization],
    ref_dir: Option<&Path>,
) -> Result<BTreeSet<String>> {
    let dir = ref_dir.ok_or_else(|| {
        DqError::Config(format!(
            "rule references `{file}` but no external knowledge base directory is configured"
        ))
    })?;
    let path = dir.join(file);
    if !path.is_file() {
        return Err(DqError::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing reference file"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(&path)?;
    let headers = reader.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h == ref_column || normalize_name(h) == normalize_name(ref_column))
        .ok_or_else(|| DqError::MissingRefColumn {
            file: file.to_string(),
            column: ref_column.to_string(),
        })?;
    let mut values = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        if let Some(value) = record.get(idx) {
            if !value.trim().is_empty() {
                values.insert(normalize_value(value, normalization));
            }
        }
    }
    Ok(values)
}

/// Counts of non-null values for every column a `Unique` clause watches.
type UniqueCounts = HashMap<String, HashMap<String, usize>>;

fn collect_unique_columns(clause: &CompiledClause, out: &mut BTreeSet<String>) {
    match clause {
        CompiledClause::Unique { column } => {
            out.insert(column.clone());
        }
        CompiledClause::Implies { guard, consequent } => {
            collect_unique_columns(guard, out);
            collect_unique_columns(consequent, out);
        }
        _ => {}
    }
}

/// Runs a compiled validator over `table`: the violating rows, expanded to
/// one cell per target column, sorted and deduplicated.
pub fn run_validator(rule_name: &str, compiled: &CompiledSpec, table: &Table) -> Result<MaskFragment> {
    for target in &compiled.spec.target_columns {
        if table.column_index(target).is_none() {
            return Err(DqError::UnknownColumn(target.clone()));
        }
    }

    let mut unique_columns = BTreeSet::new();
    for clause in &compiled.clauses {
        collect_unique_columns(clause, &mut unique_columns);
    }
    let mut unique_counts: UniqueCounts = HashMap::new();
    for column in unique_columns {
        let idx = table
            .column_index(&column)
            .ok_or_else(|| DqError::UnknownColumn(column.clone()))?;
        let mut counts = HashMap::new();
        for row in 0..table.row_count() {
            if let Some(value) = table.cell(row, idx) {
                *counts.entry(value.to_string()).or_insert(0) += 1;
            }
        }
        unique_counts.insert(column, counts);
    }

    let mut cells = BTreeSet::new();
    for row in 0..table.row_count() {
        let violates = compiled
            .clauses
            .iter()
            .map(|clause| clause_violates(clause, table, row, &unique_counts))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .any(|v| v);
        if violates {
            for target in &compiled.spec.target_columns {
                cells.insert(CellRef::new(row, target.clone()));
            }
        }
    }
    Ok(MaskFragment {
        rule_name: rule_name.to_string(),
        cells,
    })
}

fn cell_value<'t>(table: &'t Table, row: usize, column: &str) -> Result<Option<&'t str>> {
    let idx = table
        .column_index(column)
        .ok_or_else(|| DqError::UnknownColumn(column.to_string()))?;
    Ok(table.cell(row, idx))
}

fn clause_violates(
    clause: &CompiledClause,
    table: &Table,
    row: usize,
    uniques: &UniqueCounts,
) -> Result<bool> {
    Ok(match clause {
        CompiledClause::NotNull { column } => cell_value(table, row, column)?.is_none(),
        CompiledClause::Regex { column, re } => match cell_value(table, row, column)? {
            Some(value) => !re.is_match(value),
            None => false,
        },
        CompiledClause::Range {
            column,
            lower,
            upper,
            lower_open,
            upper_open,
        } => match cell_value(table, row, column)? {
            // A non-numeric cell cannot satisfy a numeric interval.
            Some(value) => match parse_float(value) {
                Some(v) => {
                    let below = match lower {
                        Some(b) => {
                            if *lower_open {
                                v <= *b
                            } else {
                                v < *b
                            }
                        }
                        None => false,
                    };
                    let above = match upper {
                        Some(b) => {
                            if *upper_open {
                                v >= *b
                            } else {
                                v > *b
                            }
                        }
                        None => false,
                    };
                    below || above
                }
                None => true,
            },
            None => false,
        },
        CompiledClause::ValueSet {
            column,
            allowed,
            fold,
        } => match cell_value(table, row, column)? {
            Some(value) => !allowed.contains(&fold.apply(value)),
            None => false,
        },
        CompiledClause::TypeIs { column, tag } => match cell_value(table, row, column)? {
            Some(value) => !type_matches(value, tag),
            None => false,
        },
        CompiledClause::Length {
            column,
            exact,
            min,
            max,
        } => match cell_value(table, row, column)? {
            Some(value) => {
                let n = value.chars().count();
                exact.map(|e| n != e).unwrap_or(false)
                    || min.map(|m| n < m).unwrap_or(false)
                    || max.map(|m| n > m).unwrap_or(false)
            }
            None => false,
        },
        CompiledClause::Compare { left, op, right } => {
            let lhs = cell_value(table, row, left)?;
            let rhs = match right {
                Operand::Column(c) => cell_value(table, row, c)?,
                Operand::Constant(v) => Some(v.as_str()),
            };
            match (lhs, rhs) {
                (Some(a), Some(b)) => !op.holds(coerced_cmp(a, b)),
                _ => false,
            }
        }
        CompiledClause::Implies { guard, consequent } => {
            // The guard holds when it would not flag the row itself.
            !clause_violates(guard, table, row, uniques)?
                && clause_violates(consequent, table, row, uniques)?
        }
        CompiledClause::RefLookup {
            column,
            values,
            normalization,
        } => match cell_value(table, row, column)? {
            Some(value) => !values.contains(&normalize_value(value, normalization)),
            None => false,
        },
        CompiledClause::Unique { column } => match cell_value(table, row, column)? {
            Some(value) => uniques
                .get(column)
                .and_then(|counts| counts.get(value))
                .map(|&n| n >= 2)
                .unwrap_or(false),
            None => false,
        },
    })
}

/// Numeric comparison when both sides parse as numbers, lexical otherwise.
fn coerced_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    match (parse_float(a), parse_float(b)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
        _ => a.cmp(b),
    }
}

fn type_matches(value: &str, tag: &TypeTag) -> bool {
    match tag {
        TypeTag::Integer => parse_int(value).is_some(),
        TypeTag::Float => parse_float(value).is_some(),
        TypeTag::Date { format: None } => parse_datetime(value),
        TypeTag::Date {
            format: Some(fmt),
        } => {
            NaiveDateTime::parse_from_str(value, fmt).is_ok()
                || NaiveDate::parse_from_str(value, fmt).is_ok()
        }
    }
}
