//! Prompt assembly. Templates are checked-in text assets with `{SLOT}`
//! placeholders; builders fill the slots and wrap the result in a
//! [`PromptRequest`].

use crate::gateway::PromptRequest;
use crate::rules::{RuleCard, RuleType};
use crate::table::ColumnProfile;
use serde::{Deserialize, Serialize};

const RULE_TEMPLATE: &str = include_str!("../../templates/rule_prompt.txt");
const ENRICH_TEMPLATE: &str = include_str!("../../templates/enrich_prompt.txt");
const CONFLICT_TEMPLATE: &str = include_str!("../../templates/conflict_prompt.txt");
const RUBRIC_TEMPLATE: &str = include_str!("../../templates/rubric_prompt.txt");
const CODEGEN_TEMPLATE: &str = include_str!("../../templates/codegen_prompt.txt");
const GLOSS_TEMPLATE: &str = include_str!("../../templates/gloss_prompt.txt");

const SYSTEM_TEXT: &str =
    "You are a meticulous data quality engineer. Answer with exactly the requested \
     JSON or code block and nothing else.";

/// Worked example schema shown in every generation prompt, paired with the
/// per-rule-type example cards stored under `templates/types/`.
pub const EXAMPLE_SCHEMA: &str = "\
CREATE TABLE employees (
    employee_id INTEGER -- surrogate key, one row per employee. Eg. 1001, 1002, 1003
    first_name TEXT -- given name. Eg. Ana, Raj, Wei
    email TEXT -- work mailbox. Eg. ana.silva@example.com, raj.patel@example.com
    department TEXT -- organizational unit. Belongs to the set: [engineering, sales, finance, hr]
    country_code TEXT -- two-letter country code. Eg. BR, IN, CN, US
    age INTEGER -- age in years at hire. Eg. 34, 29, 41
    hire_date DATETIME -- first working day. Eg. 2019-03-14, 2021-07-01
    termination_date DATETIME -- last working day, empty while employed. Eg. 2022-11-30
    monthly_salary DOUBLE -- gross pay per month. Eg. 5200.0, 7100.5
    annual_salary DOUBLE -- gross pay per year, twelve monthly payments. Eg. 62400.0, 85206.0
)";

const TYPE_ASSETS: [(RuleType, &str); 13] = [
    (
        RuleType::ReferenceTableVerification,
        include_str!("../../templates/types/reference_table_verification.txt"),
    ),
    (
        RuleType::FormatCompliance,
        include_str!("../../templates/types/format_compliance.txt"),
    ),
    (
        RuleType::DataTypeValidation,
        include_str!("../../templates/types/data_type_validation.txt"),
    ),
    (
        RuleType::MissingValueIdentification,
        include_str!("../../templates/types/missing_value_identification.txt"),
    ),
    (
        RuleType::ValueSetConstraint,
        include_str!("../../templates/types/value_set_constraint.txt"),
    ),
    (
        RuleType::CrossColumnValidation,
        include_str!("../../templates/types/cross_column_validation.txt"),
    ),
    (
        RuleType::PatternMatching,
        include_str!("../../templates/types/pattern_matching.txt"),
    ),
    (
        RuleType::BusinessRuleValidation,
        include_str!("../../templates/types/business_rule_validation.txt"),
    ),
    (
        RuleType::ComputationConsistency,
        include_str!("../../templates/types/computation_consistency.txt"),
    ),
    (
        RuleType::DependencyConstraints,
        include_str!("../../templates/types/dependency_constraints.txt"),
    ),
    (
        RuleType::RangeConstraints,
        include_str!("../../templates/types/range_constraints.txt"),
    ),
    (
        RuleType::TemporalConsistency,
        include_str!("../../templates/types/temporal_consistency.txt"),
    ),
    (
        RuleType::UniquenessConstraint,
        include_str!("../../templates/types/uniqueness_constraint.txt"),
    ),
];

/// Returns the (definition, example cards JSON) halves of a rule type's
/// template asset. The halves are separated by a `---` line in the file.
pub(crate) fn type_asset(rule_type: RuleType) -> (&'static str, &'static str) {
    let raw = TYPE_ASSETS
        .iter()
        .find(|(t, _)| *t == rule_type)
        .map(|(_, text)| *text)
        .expect("every rule type ships a template asset");
    match raw.split_once("\n---\n") {
        Some((definition, examples)) => (definition.trim(), examples.trim()),
        None => (raw.trim(), "[]"),
    }
}

/// Replaces each `{SLOT}` token exactly, leaving all other braces (regex
/// quantifiers in example patterns, JSON bodies) untouched.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (slot, value) in slots {
        out = out.replace(&format!("{{{slot}}}"), value);
    }
    out
}

fn cards_json(cards: &[RuleCard]) -> String {
    serde_json::to_string_pretty(cards).expect("rule cards serialize")
}

fn profiles_json(profiles: &[ColumnProfile]) -> String {
    serde_json::to_string_pretty(profiles).expect("profiles serialize")
}

/// Everything a generation prompt is assembled from. One prompt covers one
/// rule type over one schema fragment.
#[derive(Debug, Clone)]
pub struct RulePromptInputs<'a> {
    pub rule_type: RuleType,
    /// Rendered schema of the fragment under test.
    pub test_schema: &'a str,
    /// Few-shot cards retrieved from the nearest domain; empty omits the block.
    pub domain_examples: &'a [RuleCard],
    /// Accepted cards from earlier iterations; empty omits the block.
    pub prior_cards: &'a [RuleCard],
    /// Optional free-text background knowledge.
    pub knowledge: Option<&'a str>,
    pub min_rules: usize,
    pub model: &'a str,
    pub temperature: f64,
    pub seed: Option<u64>,
}

pub fn build_rule_prompt(inputs: &RulePromptInputs<'_>) -> PromptRequest {
    let (definition, examples) = type_asset(inputs.rule_type);
    let domain_block = if inputs.domain_examples.is_empty() {
        String::new()
    } else {
        format!(
            "Example {} rules from a related domain:\n\n```json\n{}\n```\n\n",
            inputs.rule_type,
            cards_json(inputs.domain_examples)
        )
    };
    let prior_block = if inputs.prior_cards.is_empty() {
        String::new()
    } else {
        format!(
            "Rules already accepted in earlier iterations. Write rules that cover \
             different constraints:\n\n```json\n{}\n```\n\n",
            cards_json(inputs.prior_cards)
        )
    };
    let knowledge_block = match inputs.knowledge {
        Some(text) if !text.trim().is_empty() => {
            format!("Background knowledge:\n\n{}\n\n", text.trim())
        }
        _ => String::new(),
    };
    let type_name = inputs.rule_type.display_name();
    let min_rules = inputs.min_rules.to_string();
    let user = fill(
        RULE_TEMPLATE,
        &[
            ("RULE_TYPE", type_name),
            ("TYPE_DEFINITION", definition),
            ("EXAMPLE_SCHEMA", EXAMPLE_SCHEMA),
            ("TYPE_EXAMPLES", examples),
            ("DOMAIN_BLOCK", &domain_block),
            ("PRIOR_BLOCK", &prior_block),
            ("KNOWLEDGE_BLOCK", &knowledge_block),
            ("TEST_SCHEMA", inputs.test_schema),
            ("MIN_RULES", &min_rules),
        ],
    );
    let mut req =
        PromptRequest::new(inputs.model, SYSTEM_TEXT, user).with_temperature(inputs.temperature);
    req.seed = inputs.seed;
    req
}

/// Clean/noise value samples per target column, shown to the enrichment
/// prompt as a compare table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastSamples {
    pub columns: Vec<ColumnContrast>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnContrast {
    pub column: String,
    pub clean: Vec<String>,
    pub noise: Vec<String>,
}

impl ContrastSamples {
    fn render(&self) -> String {
        if self.columns.is_empty() {
            return "(no samples)\n".to_string();
        }
        let mut out = String::new();
        for col in &self.columns {
            out.push_str(&format!("Column {}:\n", col.column));
            out.push_str("| Correct | Noise |\n| ------- | ----- |\n");
            let rows = col.clean.len().max(col.noise.len()).max(1);
            for i in 0..rows {
                out.push_str(&format!(
                    "| {} | {} |\n",
                    col.clean.get(i).map(|s| s.as_str()).unwrap_or(""),
                    col.noise.get(i).map(|s| s.as_str()).unwrap_or("")
                ));
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_enrich_prompt(
    card: &RuleCard,
    profiles: &[ColumnProfile],
    contrast: &ContrastSamples,
    retry_note: Option<&str>,
    model: &str,
    temperature: f64,
) -> PromptRequest {
    let card_json = serde_json::to_string_pretty(card).expect("rule card serializes");
    let retry_block = match retry_note {
        Some(note) => format!(
            "\nA previous review marked this rule incomplete: {}\nResolve that gap this time.\n",
            note.trim()
        ),
        None => String::new(),
    };
    let user = fill(
        ENRICH_TEMPLATE,
        &[
            ("PROFILES", &profiles_json(profiles)),
            ("COMPARE_TABLES", &contrast.render()),
            ("RULE_CARD", &card_json),
            ("RETRY_NOTE", &retry_block),
        ],
    );
    PromptRequest::new(model, SYSTEM_TEXT, user).with_temperature(temperature)
}

pub fn build_conflict_prompt(cards: &[RuleCard], model: &str, temperature: f64) -> PromptRequest {
    let user = fill(CONFLICT_TEMPLATE, &[("RULES", &cards_json(cards))]);
    PromptRequest::new(model, SYSTEM_TEXT, user).with_temperature(temperature)
}

pub fn build_rubric_prompt(
    cards: &[RuleCard],
    schema: &str,
    sample_rows: &str,
    model: &str,
    temperature: f64,
) -> PromptRequest {
    let user = fill(
        RUBRIC_TEMPLATE,
        &[
            ("SCHEMA", schema),
            ("RULES", &cards_json(cards)),
            ("SAMPLE_ROWS", sample_rows),
        ],
    );
    PromptRequest::new(model, SYSTEM_TEXT, user).with_temperature(temperature)
}

pub fn build_codegen_prompt(
    card: &RuleCard,
    schema: &str,
    profiles: &[ColumnProfile],
    sample_rows: &str,
    snippets: &[String],
    repairs: &[String],
    model: &str,
    temperature: f64,
) -> PromptRequest {
    let card_json = serde_json::to_string_pretty(card).expect("rule card serializes");
    let snippet_block = if snippets.is_empty() {
        String::new()
    } else {
        let joined = snippets.join("\n\n");
        format!("\nExample scripts for similar rules:\n\n```python\n{joined}\n```\n")
    };
    let repair_block: String = repairs
        .iter()
        .map(|stderr| {
            format!(
                "\nYour previous script failed with:\n{}\nReturn the complete corrected script.\n",
                stderr.trim()
            )
        })
        .collect();
    let user = fill(
        CODEGEN_TEMPLATE,
        &[
            ("RULE_CARD", &card_json),
            ("SCHEMA", schema),
            ("PROFILES", &profiles_json(profiles)),
            ("SAMPLE_ROWS", sample_rows),
            ("SNIPPET_BLOCK", &snippet_block),
            ("REPAIR_BLOCK", &repair_block),
        ],
    );
    PromptRequest::new(model, SYSTEM_TEXT, user).with_temperature(temperature)
}

pub fn build_gloss_prompt(
    table_name: &str,
    profiles: &[ColumnProfile],
    sample_rows: &str,
    model: &str,
    temperature: f64,
) -> PromptRequest {
    let user = fill(
        GLOSS_TEMPLATE,
        &[
            ("TABLE_NAME", table_name),
            ("PROFILES", &profiles_json(profiles)),
            ("SAMPLE_ROWS", sample_rows),
        ],
    );
    PromptRequest::new(model, SYSTEM_TEXT, user).with_temperature(temperature)
}
