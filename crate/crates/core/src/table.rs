//! Table loading, column profiling, and schema rendering.
//!
//! Tables are loaded from RFC 4180 CSV with a header row. Cells are kept
//! as raw strings with configurable null markers mapped to `None`; column
//! types are inferred by majority vote over the non-null cells.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{DqError, Result};

/// Fraction of non-null cells that must parse as a type for the column to
/// take that type.
pub const TYPE_VOTE_THRESHOLD: f64 = 0.9;

/// Cap on the `Unique Values` listing in a profile.
pub const UNIQUE_VALUES_CAP: usize = 30;

/// Distinct-count ceiling below which a non-numeric column is treated as
/// categorical rather than free text.
pub const CATEGORICAL_MAX_DISTINCT: usize = 30;

/// Columns with at most this many distinct values render as an explicit
/// value set in the schema block; wider columns show example values.
const SCHEMA_VALUE_SET_MAX: usize = 10;

/// Example values shown per column in the schema block.
const SCHEMA_EXAMPLE_VALUES: usize = 5;

const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y"];
const DATETIME_FORMATS: &[&str] = &["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    #[serde(rename = "int")]
    Integer,
    #[serde(rename = "float")]
    Real,
    #[serde(rename = "str")]
    Text,
    #[serde(rename = "categorical")]
    Categorical,
    #[serde(rename = "datetime")]
    Datetime,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Integer | ColumnType::Real)
    }

    pub fn sql_name(self) -> &'static str {
        match self {
            ColumnType::Integer => "INTEGER",
            ColumnType::Real => "DOUBLE",
            ColumnType::Text | ColumnType::Categorical => "TEXT",
            ColumnType::Datetime => "DATETIME",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ColumnType::Integer => "int",
            ColumnType::Real => "float",
            ColumnType::Text => "str",
            ColumnType::Categorical => "categorical",
            ColumnType::Datetime => "datetime",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ctype: ColumnType,
}

/// An in-memory table: named columns plus rows of nullable string cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Option<String>>>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Cell values treated as null, compared case-insensitively after trim.
    pub null_markers: Vec<String>,
    /// Overrides for inferred column types.
    pub type_hints: BTreeMap<String, ColumnType>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            null_markers: ["", "na", "n/a", "null"].iter().map(|s| s.to_string()).collect(),
            type_hints: BTreeMap::new(),
        }
    }
}

impl Table {
    /// Builds a table from literal rows, inferring column types. Intended
    /// for fixtures and tests.
    pub fn from_rows<S: Into<String>>(
        name: S,
        columns: &[&str],
        rows: Vec<Vec<Option<String>>>,
    ) -> Result<Table> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(DqError::RaggedRows { lines: vec![i as u64 + 2] });
            }
        }
        let mut table = Table {
            name: name.into(),
            columns: columns
                .iter()
                .map(|c| Column { name: c.to_string(), ctype: ColumnType::Text })
                .collect(),
            rows,
        };
        infer_types(&mut table, &BTreeMap::new());
        Ok(table)
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_type(&self, name: &str) -> Option<ColumnType> {
        self.column_index(name).map(|i| self.columns[i].ctype)
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows.get(row).and_then(|r| r.get(col)).and_then(|c| c.as_deref())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Non-null values of one column, in row order.
    pub fn column_values(&self, col: usize) -> Vec<&str> {
        self.rows.iter().filter_map(|r| r[col].as_deref()).collect()
    }

    /// Writes the table as CSV; null cells become empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
        }
        w.flush().map_err(|e| DqError::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Renders selected rows as a CSV block (header included), for prompts.
    pub fn csv_block(&self, indices: &[usize]) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for &i in indices {
            let cells: Vec<&str> =
                self.rows[i].iter().map(|c| c.as_deref().unwrap_or("")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Loads a CSV table. The header row is required; ragged rows are an
/// error listing the offending line numbers.
pub fn load_table(path: &Path, options: &LoadOptions) -> Result<Table> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".to_string());
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| DqError::Csv(e))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DqError::EmptyTable(path.display().to_string()));
    }

    let markers: Vec<String> =
        options.null_markers.iter().map(|m| m.trim().to_lowercase()).collect();
    let is_null = |cell: &str| markers.iter().any(|m| m == &cell.trim().to_lowercase());

    let mut rows = Vec::new();
    let mut ragged = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            ragged.push(record.position().map(|p| p.line()).unwrap_or(0));
            continue;
        }
        let row: Vec<Option<String>> = record
            .iter()
            .map(|cell| if is_null(cell) { None } else { Some(cell.to_string()) })
            .collect();
        rows.push(row);
    }
    if !ragged.is_empty() {
        return Err(DqError::RaggedRows { lines: ragged });
    }

    let mut table = Table {
        name,
        columns: headers
            .into_iter()
            .map(|name| Column { name, ctype: ColumnType::Text })
            .collect(),
        rows,
    };
    infer_types(&mut table, &options.type_hints);
    Ok(table)
}

pub fn parse_int(s: &str) -> Option<i64> {
    s.trim().parse::<i64>().ok()
}

pub fn parse_float(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_datetime(s: &str) -> bool {
    let t = s.trim();
    DATE_FORMATS.iter().any(|f| chrono::NaiveDate::parse_from_str(t, f).is_ok())
        || DATETIME_FORMATS
            .iter()
            .any(|f| chrono::NaiveDateTime::parse_from_str(t, f).is_ok())
}

fn infer_types(table: &mut Table, hints: &BTreeMap<String, ColumnType>) {
    for col in 0..table.columns.len() {
        if let Some(&hint) = hints.get(&table.columns[col].name) {
            table.columns[col].ctype = hint;
            continue;
        }
        let values: Vec<&str> =
            table.rows.iter().filter_map(|r| r[col].as_deref()).collect();
        table.columns[col].ctype = infer_column_type(&values);
    }
}

fn infer_column_type(values: &[&str]) -> ColumnType {
    if values.is_empty() {
        return ColumnType::Text;
    }
    let total = values.len() as f64;
    let share = |pred: fn(&str) -> bool| {
        values.iter().filter(|v| pred(v)).count() as f64 / total
    };
    if share(|v| parse_int(v).is_some()) >= TYPE_VOTE_THRESHOLD {
        return ColumnType::Integer;
    }
    if share(|v| parse_float(v).is_some()) >= TYPE_VOTE_THRESHOLD {
        return ColumnType::Real;
    }
    if share(parse_datetime) >= TYPE_VOTE_THRESHOLD {
        return ColumnType::Datetime;
    }
    let distinct: HashSet<&str> = values.iter().copied().collect();
    if distinct.len() <= CATEGORICAL_MAX_DISTINCT && distinct.len() * 2 <= values.len() {
        ColumnType::Categorical
    } else {
        ColumnType::Text
    }
}

/// Summary statistics for one column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnProfile {
    #[serde(rename = "Name")]
    pub name: String,
    #[serde(rename = "Expected Type")]
    pub expected_type: ColumnType,
    #[serde(rename = "Unique Values")]
    pub unique_values: Vec<serde_json::Value>,
    pub distinct_count: usize,
    #[serde(rename = "Min Value", skip_serializing_if = "Option::is_none")]
    pub min_value: Option<f64>,
    #[serde(rename = "Max Value", skip_serializing_if = "Option::is_none")]
    pub max_value: Option<f64>,
    #[serde(rename = "Duplicates Fraction")]
    pub duplicates_fraction: f64,
    #[serde(rename = "Null Fraction")]
    pub null_fraction: f64,
}

/// Profiles one column: distinct values (exact count, capped listing in
/// first-occurrence order), numeric min/max, duplicate and null shares.
pub fn profile_column(table: &Table, column: &str) -> Result<ColumnProfile> {
    profile_column_with_cap(table, column, UNIQUE_VALUES_CAP)
}

pub fn profile_column_with_cap(
    table: &Table,
    column: &str,
    cap: usize,
) -> Result<ColumnProfile> {
    let col = table
        .column_index(column)
        .ok_or_else(|| DqError::UnknownColumn(column.to_string()))?;
    let ctype = table.columns[col].ctype;
    let values = table.column_values(col);

    let mut seen = HashSet::new();
    let mut listed = Vec::new();
    for v in &values {
        if seen.insert(*v) && listed.len() < cap {
            listed.push(render_value(v, ctype));
        }
    }
    let distinct = seen.len();
    let total = values.len();

    let (min_value, max_value) = if ctype.is_numeric() {
        let nums: Vec<f64> = values.iter().filter_map(|v| parse_float(v)).collect();
        (
            nums.iter().copied().reduce(f64::min),
            nums.iter().copied().reduce(f64::max),
        )
    } else {
        (None, None)
    };

    let duplicates_fraction = if total == 0 {
        0.0
    } else {
        1.0 - distinct as f64 / total as f64
    };
    let null_fraction = if table.row_count() == 0 {
        0.0
    } else {
        (table.row_count() - total) as f64 / table.row_count() as f64
    };

    Ok(ColumnProfile {
        name: column.to_string(),
        expected_type: ctype,
        unique_values: listed,
        distinct_count: distinct,
        min_value,
        max_value,
        duplicates_fraction,
        null_fraction,
    })
}

pub fn profile_table(table: &Table) -> Result<Vec<ColumnProfile>> {
    table
        .columns
        .iter()
        .map(|c| profile_column(table, &c.name))
        .collect()
}

fn render_value(v: &str, ctype: ColumnType) -> serde_json::Value {
    match ctype {
        ColumnType::Integer => parse_int(v)
            .map(serde_json::Value::from)
            .unwrap_or_else(|| serde_json::Value::from(v)),
        ColumnType::Real => parse_float(v)
            .map(serde_json::Value::from)
            .unwrap_or_else(|| serde_json::Value::from(v)),
        _ => serde_json::Value::from(v),
    }
}

/// A rendered `CREATE TABLE`-style schema block with per-column glosses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaDescription {
    pub table_name: String,
    pub text: String,
    pub glosses: BTreeMap<String, String>,
}

impl fmt::Display for SchemaDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Supplies one-line natural-language glosses for columns. Implementations
/// may call out to a language model; failures degrade to templated text.
pub trait GlossSource {
    fn glosses(
        &self,
        table: &Table,
        profiles: &[ColumnProfile],
    ) -> Result<BTreeMap<String, String>>;
}

fn fallback_gloss(profile: &ColumnProfile) -> String {
    format!(
        "column {} holding {} values",
        profile.name,
        profile.expected_type.tag()
    )
}

/// Renders the schema as a SQL-like block: one line per column with its
/// type, a gloss, and either the full value set (small columns) or example
/// values. Deterministic for a fixed table; gloss failures fall back to a
/// templated description per column.
pub fn render_schema(
    table: &Table,
    gloss_source: Option<&dyn GlossSource>,
) -> Result<SchemaDescription> {
    let profiles = profile_table(table)?;
    let provided = gloss_source
        .and_then(|s| match s.glosses(table, &profiles) {
            Ok(map) => Some(map),
            Err(e) => {
                log::warn!("schema gloss source failed, using fallback: {e}");
                None
            }
        })
        .unwrap_or_default();

    let mut glosses = BTreeMap::new();
    let mut lines = Vec::new();
    for profile in &profiles {
        let gloss = provided
            .get(&profile.name)
            .cloned()
            .unwrap_or_else(|| fallback_gloss(profile));
        let values = if profile.distinct_count <= SCHEMA_VALUE_SET_MAX {
            format!(
                "Belongs to the set: [{}]",
                join_values(&profile.unique_values, profile.distinct_count)
            )
        } else {
            format!(
                "Eg. {}",
                join_values(&profile.unique_values, SCHEMA_EXAMPLE_VALUES)
            )
        };
        lines.push(format!(
            "    {} {} -- {}. {}",
            profile.name,
            profile.expected_type.sql_name(),
            gloss.trim_end_matches('.'),
            values
        ));
        glosses.insert(profile.name.clone(), gloss);
    }

    let text = format!("CREATE TABLE {} (\n{}\n)", table.name, lines.join("\n"));
    Ok(SchemaDescription { table_name: table.name.clone(), text, glosses })
}

fn join_values(values: &[serde_json::Value], limit: usize) -> String {
    values
        .iter()
        .take(limit)
        .map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Samples `n` distinct row indices uniformly without replacement,
/// reproducibly for a fixed seed. `n >= row_count` returns all rows in
/// index order.
pub fn sample_rows(table: &Table, n: usize, seed: u64) -> Vec<usize> {
    let rows = table.row_count();
    if n >= rows {
        return (0..rows).collect();
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, rows, n).into_vec();
    picked.sort_unstable();
    picked
}
