//! Shared generators and oracles for the integration suites.
//!
//! The brute-force evaluator here re-derives clause semantics from their
//! documented meaning, cell by cell, with no shared state or precompiled
//! caches. It exists to disagree with the production interpreter whenever
//! the two drift apart.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use dqkit::table::{parse_datetime, parse_float, parse_int};
use dqkit::validator::{CaseFold, Clause, CompareOp, Normalization, Operand, TypeTag};
use dqkit::{CellRef, Table, ValidatorSpec};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Synthetic tables

/// Columns mix the shapes the pipeline cares about: monotone integers,
/// spread floats, short words, and a low-cardinality code column. Values
/// are distinct within the numeric and word columns so cell swaps always
/// find a visibly different partner.
pub fn random_table(rng: &mut StdRng, rows: usize, null_rate: f64) -> Table {
    let codes = ["ae", "bx", "ck", "dr", "el", "fn"];
    let mut data: Vec<Vec<Option<String>>> = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(5);
        let jitter = rng.gen_range(0..3);
        row.push(some_unless(rng, null_rate, format!("{}", 100 + 7 * r + jitter)));
        row.push(some_unless(
            rng,
            null_rate,
            format!("{:.2}", 3.0 + 0.37 * r as f64 + rng.gen_range(0.0..0.09)),
        ));
        row.push(some_unless(rng, null_rate, format!("w{r}-{}", rng.gen_range(10..99))));
        row.push(some_unless(rng, null_rate, codes[r % codes.len()].to_string()));
        row.push(some_unless(rng, null_rate, format!("2024-0{}-1{}", 1 + r % 9, r % 10)));
        data.push(row);
    }
    Table::from_rows("synthetic", &["count", "measure", "label", "code", "day"], data)
        .expect("synthetic table is well formed")
}

fn some_unless(rng: &mut StdRng, null_rate: f64, value: String) -> Option<String> {
    if rng.gen_bool(null_rate) {
        None
    } else {
        Some(value)
    }
}

/// A random cell set over an `n_rows` by `columns` grid.
pub fn random_cells(
    rng: &mut StdRng,
    n_rows: usize,
    columns: &[&str],
    density: f64,
) -> BTreeSet<CellRef> {
    let mut out = BTreeSet::new();
    for row in 0..n_rows {
        for col in columns {
            if rng.gen_bool(density) {
                out.insert(CellRef::new(row, *col));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random validator specs

pub struct SpecCase {
    pub spec: ValidatorSpec,
    /// Raw (unnormalized) reference values per file name, mirroring what the
    /// compile step will read back from the reference directory.
    pub ref_values: BTreeMap<String, Vec<String>>,
}

/// Valid regexes only; compile failures are a different test's business.
const PATTERNS: [&str; 6] = [
    "^[a-z]+[0-9]*$",
    "w[0-9]+-[0-9]{2}$",
    "^[0-9]{3}$",
    "[a-z]{2}",
    "^2024-[0-9]{2}-[0-9]{2}$",
    "^[0-9]+\\.[0-9]{2}$",
];

pub fn random_spec(rng: &mut StdRng, table: &Table) -> SpecCase {
    let columns = table.column_names();
    let mut ref_values = BTreeMap::new();
    let n_clauses = rng.gen_range(1..=4);
    let mut clauses = Vec::with_capacity(n_clauses);
    for _ in 0..n_clauses {
        clauses.push(random_clause(rng, table, &columns, &mut ref_values, true));
    }
    let mut targets: Vec<String> = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let c = columns[rng.gen_range(0..columns.len())].clone();
        if !targets.contains(&c) {
            targets.push(c);
        }
    }
    SpecCase {
        spec: ValidatorSpec {
            target_columns: targets,
            clauses,
        },
        ref_values,
    }
}

fn pick(rng: &mut StdRng, columns: &[String]) -> String {
    columns[rng.gen_range(0..columns.len())].clone()
}

fn random_clause(
    rng: &mut StdRng,
    table: &Table,
    columns: &[String],
    ref_values: &mut BTreeMap<String, Vec<String>>,
    allow_implies: bool,
) -> Clause {
    let kind_count = if allow_implies { 10 } else { 9 };
    match rng.gen_range(0..kind_count) {
        0 => Clause::NotNull { column: pick(rng, columns) },
        1 => Clause::Regex {
            column: pick(rng, columns),
            pattern: PATTERNS[rng.gen_range(0..PATTERNS.len())].to_string(),
        },
        2 => {
            let lower = rng.gen_bool(0.7).then(|| rng.gen_range(-50.0..150.0));
            let upper = if lower.is_none() || rng.gen_bool(0.7) {
                Some(rng.gen_range(-50.0..150.0))
            } else {
                None
            };
            Clause::Range {
                column: pick(rng, columns),
                lower,
                upper,
                lower_open: rng.gen_bool(0.5),
                upper_open: rng.gen_bool(0.5),
            }
        }
        3 => {
            let column = pick(rng, columns);
            let allowed = sampled_values(rng, table, &column, 4);
            Clause::ValueSet {
                column,
                allowed,
                fold: match rng.gen_range(0..3) {
                    0 => CaseFold::None,
                    1 => CaseFold::Upper,
                    _ => CaseFold::Lower,
                },
            }
        }
        4 => Clause::TypeIs {
            column: pick(rng, columns),
            tag: match rng.gen_range(0..4) {
                0 => TypeTag::Integer,
                1 => TypeTag::Float,
                2 => TypeTag::Date { format: None },
                _ => TypeTag::Date {
                    format: Some("%Y-%m-%d".to_string()),
                },
            },
        },
        5 => {
            if rng.gen_bool(0.4) {
                Clause::Length {
                    column: pick(rng, columns),
                    exact: Some(rng.gen_range(1..8)),
                    min: None,
                    max: None,
                }
            } else {
                let min = rng.gen_bool(0.7).then(|| rng.gen_range(0..4));
                let max = if min.is_none() || rng.gen_bool(0.7) {
                    Some(rng.gen_range(4..10))
                } else {
                    None
                };
                Clause::Length {
                    column: pick(rng, columns),
                    exact: None,
                    min,
                    max,
                }
            }
        }
        6 => {
            let right = if rng.gen_bool(0.5) {
                Operand::Column(pick(rng, columns))
            } else if rng.gen_bool(0.5) {
                Operand::Constant(format!("{}", rng.gen_range(50..400)))
            } else {
                Operand::Constant("w5-no".to_string())
            };
            Clause::Compare {
                left: pick(rng, columns),
                op: match rng.gen_range(0..6) {
                    0 => CompareOp::Lt,
                    1 => CompareOp::Le,
                    2 => CompareOp::Eq,
                    3 => CompareOp::Ge,
                    4 => CompareOp::Gt,
                    _ => CompareOp::Ne,
                },
                right,
            }
        }
        7 => {
            let column = pick(rng, columns);
            let mut values = sampled_values(rng, table, &column, 6);
            values.push("  extra ".to_string());
            let file = format!("ref{}.csv", ref_values.len());
            ref_values.insert(file.clone(), values);
            let mut normalization = vec![Normalization::Trim];
            if rng.gen_bool(0.5) {
                normalization.push(if rng.gen_bool(0.5) {
                    Normalization::Upper
                } else {
                    Normalization::Lower
                });
            }
            Clause::RefLookup {
                column,
                file,
                ref_column: "value".to_string(),
                normalization,
            }
        }
        8 => Clause::Unique { column: pick(rng, columns) },
        _ => Clause::Implies {
            guard: Box::new(random_clause(rng, table, columns, ref_values, false)),
            consequent: Box::new(random_clause(rng, table, columns, ref_values, false)),
        },
    }
}

/// A few real values from the column plus one stranger, so membership tests
/// exercise both outcomes.
fn sampled_values(rng: &mut StdRng, table: &Table, column: &str, k: usize) -> Vec<String> {
    let idx = table
        .column_names()
        .iter()
        .position(|c| c == column)
        .expect("column came from the schema");
    let mut values: Vec<String> = Vec::new();
    for _ in 0..k {
        let row = rng.gen_range(0..table.row_count());
        if let Some(v) = table.cell(row, idx) {
            if !values.iter().any(|x| x == v) {
                values.push(v.to_string());
            }
        }
    }
    values.push("no-such-value".to_string());
    values
}

// ---------------------------------------------------------------------------
// Brute-force evaluation

/// Flags per the DSL's documented semantics: a row violates when any clause
/// flags it, violating rows expand to one cell per target column, and every
/// clause except NotNull skips null cells.
pub fn brute_force_flags(
    spec: &ValidatorSpec,
    table: &Table,
    ref_values: &BTreeMap<String, Vec<String>>,
) -> BTreeSet<CellRef> {
    let mut out = BTreeSet::new();
    for row in 0..table.row_count() {
        let violates = spec
            .clauses
            .iter()
            .any(|clause| clause_flags(clause, table, row, ref_values));
        if violates {
            for target in &spec.target_columns {
                out.insert(CellRef::new(row, target.clone()));
            }
        }
    }
    out
}

fn cell<'t>(table: &'t Table, row: usize, column: &str) -> Option<&'t str> {
    let idx = table
        .column_names()
        .iter()
        .position(|c| c == column)
        .unwrap_or_else(|| panic!("unknown column {column}"));
    table.cell(row, idx)
}

fn clause_flags(
    clause: &Clause,
    table: &Table,
    row: usize,
    ref_values: &BTreeMap<String, Vec<String>>,
) -> bool {
    match clause {
        Clause::NotNull { column } => cell(table, row, column).is_none(),
        Clause::Regex { column, pattern } => match cell(table, row, column) {
            Some(v) => {
                let re = regex::Regex::new(&format!("^(?:{pattern})")).expect("valid pattern");
                !re.is_match(v)
            }
            None => false,
        },
        Clause::Range {
            column,
            lower,
            upper,
            lower_open,
            upper_open,
        } => match cell(table, row, column) {
            Some(v) => match parse_float(v) {
                Some(x) => {
                    let low_bad = lower.map_or(false, |b| if *lower_open { x <= b } else { x < b });
                    let high_bad = upper.map_or(false, |b| if *upper_open { x >= b } else { x > b });
                    low_bad || high_bad
                }
                None => true,
            },
            None => false,
        },
        Clause::ValueSet {
            column,
            allowed,
            fold,
        } => match cell(table, row, column) {
            Some(v) => !allowed.iter().any(|a| fold.apply(a) == fold.apply(v)),
            None => false,
        },
        Clause::TypeIs { column, tag } => match cell(table, row, column) {
            Some(v) => match tag {
                TypeTag::Integer => parse_int(v).is_none(),
                TypeTag::Float => parse_float(v).is_none(),
                TypeTag::Date { format: None } => !parse_datetime(v),
                TypeTag::Date { format: Some(f) } => {
                    chrono::NaiveDate::parse_from_str(v, f).is_err()
                        && chrono::NaiveDateTime::parse_from_str(v, f).is_err()
                }
            },
            None => false,
        },
        Clause::Length {
            column,
            exact,
            min,
            max,
        } => match cell(table, row, column) {
            Some(v) => {
                let n = v.chars().count();
                exact.map_or(false, |e| n != e)
                    || min.map_or(false, |m| n < m)
                    || max.map_or(false, |m| n > m)
            }
            None => false,
        },
        Clause::Compare { left, op, right } => {
            let lhs = cell(table, row, left);
            let rhs = match right {
                Operand::Column(c) => cell(table, row, c),
                Operand::Constant(v) => Some(v.as_str()),
            };
            match (lhs, rhs) {
                (Some(a), Some(b)) => {
                    let ord = match (parse_float(a), parse_float(b)) {
                        (Some(x), Some(y)) => {
                            x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal)
                        }
                        _ => a.cmp(b),
                    };
                    !op.holds(ord)
                }
                _ => false,
            }
        }
        Clause::Implies { guard, consequent } => {
            !clause_flags(guard, table, row, ref_values)
                && clause_flags(consequent, table, row, ref_values)
        }
        Clause::RefLookup {
            column,
            file,
            ref_column: _,
            normalization,
        } => match cell(table, row, column) {
            Some(v) => {
                let raw = ref_values.get(file).expect("reference file was generated");
                let needle = normalize(v, normalization);
                !raw.iter().any(|r| normalize(r, normalization) == needle)
            }
            None => false,
        },
        Clause::Unique { column } => match cell(table, row, column) {
            Some(v) => {
                let idx = table
                    .column_names()
                    .iter()
                    .position(|c| c == column)
                    .expect("known column");
                let occurrences = (0..table.row_count())
                    .filter(|&r| table.cell(r, idx) == Some(v))
                    .count();
                occurrences >= 2
            }
            None => false,
        },
    }
}

fn normalize(s: &str, steps: &[Normalization]) -> String {
    let mut out = s.to_string();
    for step in steps {
        out = match step {
            Normalization::Trim => out.trim().to_string(),
            Normalization::Upper => out.to_uppercase(),
            Normalization::Lower => out.to_lowercase(),
        };
    }
    out
}
