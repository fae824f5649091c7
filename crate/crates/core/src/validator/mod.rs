//! Stage 3: turning enriched rule cards into executable validators.
//!
//! Two engines exist. The deterministic path parses a card's pseudocode into
//! a [`ValidatorSpec`] of flag-clauses and compiles it against the schema and
//! reference directory. Cards whose pseudocode falls outside the clause
//! grammar fall back to generated Python run under a subprocess sandbox with
//! a bounded repair loop. Either way the result evaluates to the same shape:
//! violating rows expanded to one cell per target column.

pub mod codegen;
pub mod compile;
pub mod parse;
pub mod sandbox;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::MaskFragment;
use crate::rules::RuleCard;
use crate::table::Table;

pub use codegen::{build_validator, codegen_external, BuildOutcome, CodegenOptions};
pub use compile::{compile_spec, run_validator, CompiledSpec};
pub use parse::{parse_pseudocode, ParsedPseudocode};
pub use sandbox::{run_external, run_script, ExternalScript, SandboxConfig, SandboxResult};

/// Case folding applied before a set-membership test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseFold {
    None,
    Upper,
    Lower,
}

impl CaseFold {
    pub fn apply(self, s: &str) -> String {
        match self {
            CaseFold::None => s.to_string(),
            CaseFold::Upper => s.to_uppercase(),
            CaseFold::Lower => s.to_lowercase(),
        }
    }
}

/// Normalization steps applied, in order, before a reference lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Trim,
    Upper,
    Lower,
}

pub(crate) fn normalize_value(s: &str, steps: &[Normalization]) -> String {
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

/// Expected lexical type for a `TypeIs` clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeTag {
    Integer,
    Float,
    /// Optional chrono format string; `None` accepts the common ISO forms.
    Date { format: Option<String> },
}

/// Relation a `Compare` clause requires between its operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Ne,
}

impl CompareOp {
    /// Whether `left <op> right` holds given `left.cmp(right)`.
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ge => ord != Ordering::Less,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ne => ord != Ordering::Equal,
        }
    }

    /// The relation whose violation the flag-op describes: a clause written
    /// "if a < b -> flag" means the data is valid when `a >= b`.
    pub fn negate(self) -> CompareOp {
        match self {
            CompareOp::Lt => CompareOp::Ge,
            CompareOp::Le => CompareOp::Gt,
            CompareOp::Eq => CompareOp::Ne,
            CompareOp::Ge => CompareOp::Lt,
            CompareOp::Gt => CompareOp::Le,
            CompareOp::Ne => CompareOp::Eq,
        }
    }
}

/// Right-hand side of a `Compare` clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Column(String),
    Constant(String),
}

/// One flag-clause. A row violates the spec iff any clause flags it.
///
/// Null handling: `NotNull` flags null cells; every other clause skips them,
/// so "column must look like X" rules never double-count missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Clause {
    NotNull {
        column: String,
    },
    /// Cell must match `pattern` anchored at the start of the value.
    Regex {
        column: String,
        pattern: String,
    },
    /// Valid numeric interval; unparseable non-null cells are violations.
    Range {
        column: String,
        lower: Option<f64>,
        upper: Option<f64>,
        lower_open: bool,
        upper_open: bool,
    },
    ValueSet {
        column: String,
        allowed: Vec<String>,
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
    /// Required relation between a column and another column or constant.
    Compare {
        left: String,
        op: CompareOp,
        right: Operand,
    },
    /// Flags a row when the guard holds and the consequent is violated.
    Implies {
        guard: Box<Clause>,
        consequent: Box<Clause>,
    },
    RefLookup {
        column: String,
        file: String,
        ref_column: String,
        normalization: Vec<Normalization>,
    },
    Unique {
        column: String,
    },
}

impl Clause {
    /// Every table column the clause reads.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            Clause::NotNull { column }
            | Clause::Regex { column, .. }
            | Clause::Range { column, .. }
            | Clause::ValueSet { column, .. }
            | Clause::TypeIs { column, .. }
            | Clause::Length { column, .. }
            | Clause::RefLookup { column, .. }
            | Clause::Unique { column } => vec![column.as_str()],
            Clause::Compare { left, right, .. } => {
                let mut cols = vec![left.as_str()];
                if let Operand::Column(c) = right {
                    cols.push(c.as_str());
                }
                cols
            }
            Clause::Implies { guard, consequent } => {
                let mut cols = guard.columns();
                cols.extend(consequent.columns());
                cols
            }
        }
    }
}

/// Executable form of a rule card's pseudocode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorSpec {
    pub target_columns: Vec<String>,
    pub clauses: Vec<Clause>,
}

/// A rule card bound to the engine that evaluates it.
#[derive(Debug, Clone)]
pub struct Validator {
    pub card: RuleCard,
    pub engine: ValidatorEngine,
}

#[derive(Debug, Clone)]
pub enum ValidatorEngine {
    Compiled(CompiledSpec),
    External(ExternalScript),
}

impl Validator {
    pub fn origin(&self) -> &'static str {
        match self.engine {
            ValidatorEngine::Compiled(_) => "compiled-dsl",
            ValidatorEngine::External(_) => "external-script",
        }
    }

    /// Evaluates the validator over `table`, producing the violating rows
    /// expanded to one cell per target column.
    pub fn run(&self, table: &Table, sandbox: &SandboxConfig) -> Result<MaskFragment> {
        match &self.engine {
            ValidatorEngine::Compiled(spec) => run_validator(&self.card.rule_name, spec, table),
            ValidatorEngine::External(script) => run_external(
                &self.card.rule_name,
                &self.card.target_columns,
                script,
                table,
                sandbox,
            ),
        }
    }
}
