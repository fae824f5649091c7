//! Iterative draft-rule generation: one prompt per (rule type, schema
//! fragment) per iteration, with prior accepted cards fed back as
//! exemplars.

use crate::error::{DqError, Result};
use crate::gateway::{ChatGateway, PromptRequest};
use crate::rules::prompts::{build_rule_prompt, RulePromptInputs};
use crate::rules::{dedup_cards, RuleCard, RuleType};
use crate::table::{render_schema, GlossSource, Table};
use rand::rngs::StdRng;
use rand::SeedableRng;

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub iterations: usize,
    pub min_rules: usize,
    /// Columns per schema fragment; wide tables are split so each prompt
    /// stays focused.
    pub schema_batch: usize,
    /// How many prior accepted cards are replayed into later iterations.
    pub prior_subset: usize,
    pub temperature: f64,
    pub model: String,
    pub seed: u64,
    pub knowledge: Option<String>,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            iterations: 1,
            min_rules: 15,
            schema_batch: 20,
            prior_subset: 3,
            temperature: 0.7,
            model: "rule-model".to_string(),
            seed: 0,
            knowledge: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenOutcome {
    pub cards: Vec<RuleCard>,
    /// Every prompt sent, in order, for audit artifacts.
    pub prompts: Vec<PromptRequest>,
    /// Per-prompt parse problems and dropped-card reasons.
    pub diagnostics: Vec<String>,
}

/// Renders the table schema in fragments of at most `batch` columns.
/// Fragments cover disjoint column sets whose union is the whole schema.
pub fn schema_fragments(
    table: &Table,
    batch: usize,
    gloss_source: Option<&dyn GlossSource>,
) -> Result<Vec<String>> {
    if table.columns.is_empty() {
        return Err(DqError::EmptyTable(table.name.clone()));
    }
    let batch = if batch == 0 { table.columns.len() } else { batch };
    let mut fragments = Vec::new();
    for chunk in (0..table.columns.len()).collect::<Vec<_>>().chunks(batch) {
        let projected = Table {
            name: table.name.clone(),
            columns: chunk.iter().map(|&i| table.columns[i].clone()).collect(),
            rows: table
                .rows
                .iter()
                .map(|row| chunk.iter().map(|&i| row[i].clone()).collect())
                .collect(),
        };
        fragments.push(render_schema(&projected, gloss_source)?.text);
    }
    Ok(fragments)
}

/// Runs the generation loop for one rule type and returns the
/// deduplicated union of schema-valid draft cards.
///
/// Every prompt failure is a diagnostic, not an error: when all prompts
/// fail the outcome is an empty card set and the pipeline moves on to the
/// other rule types.
pub fn generate_rules(
    gateway: &ChatGateway,
    table: &Table,
    rule_type: RuleType,
    domain_examples: &[RuleCard],
    gloss_source: Option<&dyn GlossSource>,
    opts: &GenOptions,
) -> Result<GenOutcome> {
    if opts.iterations == 0 {
        return Err(DqError::Precondition("generation needs at least one iteration".into()));
    }
    let fragments = schema_fragments(table, opts.schema_batch, gloss_source)?;
    let columns = table.column_names();

    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut outcome = GenOutcome::default();
    let mut accepted: Vec<RuleCard> = Vec::new();

    for iteration in 0..opts.iterations {
        let prior = if iteration == 0 {
            Vec::new()
        } else {
            sample_prior(&accepted, opts.prior_subset, &mut rng)
        };
        for fragment in &fragments {
            let request = build_rule_prompt(&RulePromptInputs {
                rule_type,
                test_schema: fragment,
                domain_examples,
                prior_cards: &prior,
                knowledge: opts.knowledge.as_deref(),
                min_rules: opts.min_rules,
                model: &opts.model,
                temperature: opts.temperature,
                seed: Some(opts.seed),
            });
            outcome.prompts.push(request.clone());
            let value = match gateway.chat_json(&request) {
                Ok((value, _)) => value,
                Err(e) => {
                    outcome
                        .diagnostics
                        .push(format!("{rule_type} iteration {iteration}: {e}"));
                    continue;
                }
            };
            accepted.extend(parse_draft_cards(
                value,
                rule_type,
                &columns,
                &mut outcome.diagnostics,
            ));
            accepted = dedup_cards(accepted);
        }
    }

    outcome.cards = accepted;
    if outcome.cards.is_empty() && !outcome.diagnostics.is_empty() {
        log::warn!(
            "no {rule_type} rules generated; first problem: {}",
            outcome.diagnostics[0]
        );
    }
    Ok(outcome)
}

fn sample_prior(accepted: &[RuleCard], subset: usize, rng: &mut StdRng) -> Vec<RuleCard> {
    if accepted.is_empty() || subset == 0 {
        return Vec::new();
    }
    let amount = subset.min(accepted.len());
    rand::seq::index::sample(rng, accepted.len(), amount)
        .into_iter()
        .map(|i| accepted[i].clone())
        .collect()
}

/// Parses a model response into schema-valid cards. The response must be a
/// JSON array of card objects; a card missing its "Rule Type" inherits the
/// type that was asked for.
fn parse_draft_cards(
    value: serde_json::Value,
    rule_type: RuleType,
    columns: &[String],
    diagnostics: &mut Vec<String>,
) -> Vec<RuleCard> {
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => {
            diagnostics.push(format!(
                "{rule_type}: expected a JSON array of rules, got {}",
                kind_of(&other)
            ));
            return Vec::new();
        }
    };
    let mut cards = Vec::new();
    for mut item in items {
        if let Some(obj) = item.as_object_mut() {
            let needs_type = !matches!(
                obj.get("Rule Type"),
                Some(serde_json::Value::String(s))
                    if s.parse::<RuleType>().is_ok()
            );
            if needs_type {
                obj.insert(
                    "Rule Type".to_string(),
                    serde_json::Value::String(rule_type.display_name().to_string()),
                );
            }
        }
        match serde_json::from_value::<RuleCard>(item) {
            Ok(card) => match card.validate_against(columns) {
                Ok(()) => cards.push(card),
                Err(reason) => diagnostics.push(reason),
            },
            Err(e) => diagnostics.push(format!("{rule_type}: unparseable rule object: {e}")),
        }
    }
    cards
}

fn kind_of(value: &serde_json::Value) -> &'static str {
    match value {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "a boolean",
        serde_json::Value::Number(_) => "a number",
        serde_json::Value::String(_) => "a string",
        serde_json::Value::Array(_) => "an array",
        serde_json::Value::Object(_) => "an object",
    }
}
