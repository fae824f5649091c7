//! Rule cards: the declarative quality constraints drafted by the model.
//!
//! A card names a rule, its taxonomy type, and its target columns; after
//! enrichment it also carries an enforcement specification and pseudocode.
//! The JSON field names follow the wire format the prompts request, so
//! model output deserializes directly.

mod enrich;
mod generate;
mod prompts;
mod repo;
mod taxonomy;

pub use enrich::{enrich_rules, DroppedCard, EnrichOptions, EnrichOutcome};
pub use generate::{generate_rules, schema_fragments, GenOptions, GenOutcome};
pub use prompts::{
    build_codegen_prompt, build_conflict_prompt, build_enrich_prompt, build_gloss_prompt,
    build_rubric_prompt, build_rule_prompt, ColumnContrast, ContrastSamples, RulePromptInputs,
    EXAMPLE_SCHEMA,
};
pub use repo::{select_code_snippets, select_domain_examples, DomainExample, DomainExampleRepo};
pub use taxonomy::RuleType;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Verdicts the enrichment pass can assign to a draft card.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentStatus {
    Correct,
    Incomplete,
    IncorrectFixable,
    IncorrectNotFixable,
    Irrelevant,
    Redundant,
    Unimplementable,
}

impl EnrichmentStatus {
    /// Statuses whose cards stay in the rule set (with enrichment applied).
    pub fn keeps_card(self) -> bool {
        matches!(self, EnrichmentStatus::Correct | EnrichmentStatus::IncorrectFixable)
    }

    /// Statuses that earn one retry with the model's note attached.
    pub fn retries_once(self) -> bool {
        matches!(self, EnrichmentStatus::Incomplete)
    }

    pub fn parse_lenient(s: &str) -> Option<EnrichmentStatus> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "correct" => Some(EnrichmentStatus::Correct),
            "incomplete" => Some(EnrichmentStatus::Incomplete),
            "incorrectfixable" | "correctfixable" => Some(EnrichmentStatus::IncorrectFixable),
            "incorrectnotfixable" => Some(EnrichmentStatus::IncorrectNotFixable),
            "irrelevant" => Some(EnrichmentStatus::Irrelevant),
            "redundant" => Some(EnrichmentStatus::Redundant),
            "unimplementable" => Some(EnrichmentStatus::Unimplementable),
            _ => None,
        }
    }
}

/// Enforcement details attached by enrichment: a natural-language
/// contract plus pseudocode clauses, each ending in `-> flag` or serving
/// as a `-> pass` guard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditionalInfo {
    #[serde(rename = "Specification", default)]
    pub specification: String,
    #[serde(rename = "Pseudocode", default, deserialize_with = "string_or_list")]
    pub pseudocode: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCard {
    #[serde(rename = "Rule Type")]
    pub rule_type: RuleType,
    #[serde(rename = "Rule Name")]
    pub rule_name: String,
    #[serde(rename = "Rule Description", default)]
    pub rule_description: String,
    #[serde(rename = "Target Columns", deserialize_with = "string_or_list")]
    pub target_columns: Vec<String>,
    #[serde(
        rename = "Reference Table",
        default,
        deserialize_with = "string_or_list",
        serialize_with = "compact_list",
        skip_serializing_if = "Vec::is_empty"
    )]
    pub reference_tables: Vec<String>,
    #[serde(
        rename = "Additional Information",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub additional_information: Option<AdditionalInfo>,
    #[serde(rename = "Status", default, skip_serializing_if = "Option::is_none")]
    pub status: Option<EnrichmentStatus>,
    #[serde(rename = "Reason", default, skip_serializing_if = "Option::is_none")]
    pub status_reason: Option<String>,
}

impl RuleCard {
    pub fn new(rule_type: RuleType, name: impl Into<String>, targets: &[&str]) -> Self {
        RuleCard {
            rule_type,
            rule_name: name.into(),
            rule_description: String::new(),
            target_columns: targets.iter().map(|t| t.to_string()).collect(),
            reference_tables: Vec::new(),
            additional_information: None,
            status: None,
            status_reason: None,
        }
    }

    pub fn reference_table(&self) -> Option<&str> {
        self.reference_tables.first().map(|s| s.as_str())
    }

    pub fn pseudocode(&self) -> &[String] {
        self.additional_information
            .as_ref()
            .map(|a| a.pseudocode.as_slice())
            .unwrap_or(&[])
    }

    pub fn specification(&self) -> &str {
        self.additional_information
            .as_ref()
            .map(|a| a.specification.as_str())
            .unwrap_or("")
    }

    /// Identity for de-duplication: name plus sorted target columns.
    pub fn dedup_key(&self) -> (String, Vec<String>) {
        let mut targets = self.target_columns.clone();
        targets.sort();
        (self.rule_name.clone(), targets)
    }

    /// A card is schema-valid when it has at least one target column and
    /// every target exists in the table. Column matching is exact.
    pub fn validate_against(&self, columns: &[String]) -> std::result::Result<(), String> {
        if self.target_columns.is_empty() {
            return Err(format!("rule `{}` has no target columns", self.rule_name));
        }
        for target in &self.target_columns {
            if !columns.contains(target) {
                return Err(format!(
                    "rule `{}` targets unknown column `{target}`",
                    self.rule_name
                ));
            }
        }
        Ok(())
    }

    /// Every pseudocode clause must end in `-> flag` or be a `-> pass`
    /// guard (either arrow spelling).
    pub fn pseudocode_well_formed(&self) -> bool {
        self.pseudocode().iter().all(|clause| {
            let c = clause.trim().trim_end_matches('.').trim_end();
            c.ends_with("flag") || c.ends_with("pass")
        })
    }
}

/// Removes cards whose `(rule_name, sorted target columns)` identity was
/// already seen, preserving first occurrences in order.
pub fn dedup_cards(cards: Vec<RuleCard>) -> Vec<RuleCard> {
    let mut seen = std::collections::BTreeSet::new();
    cards.into_iter().filter(|c| seen.insert(c.dedup_key())).collect()
}

pub(crate) fn string_or_list<'de, D>(deserializer: D) -> std::result::Result<Vec<String>, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match Option::<OneOrMany>::deserialize(deserializer)? {
        None => Vec::new(),
        Some(OneOrMany::One(s)) => vec![s],
        Some(OneOrMany::Many(v)) => v,
    })
}

/// Serializes a single-element list as a bare string, mirroring how the
/// cards appear in prompts and fixtures.
fn compact_list<S>(list: &[String], serializer: S) -> std::result::Result<S::Ok, S::Error>
where
    S: Serializer,
{
    match list {
        [only] => serializer.serialize_str(only),
        many => many.serialize(serializer),
    }
}
