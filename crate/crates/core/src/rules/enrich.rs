//! Enrichment: each draft card is reviewed against the actual data and
//! either gains an enforcement specification plus pseudocode or is dropped
//! with a recorded reason.

use crate::error::Result;
use crate::eval::ConfidenceEntry;
use crate::gateway::{ChatGateway, PromptRequest};
use crate::rules::prompts::{build_enrich_prompt, ColumnContrast, ContrastSamples};
use crate::rules::{AdditionalInfo, EnrichmentStatus, RuleCard, RuleType};
use crate::table::{sample_rows, ColumnProfile, ColumnType, Table};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct EnrichOptions {
    pub model: String,
    pub temperature: f64,
    /// Rows sampled for the multi-column co-occurrence gate.
    pub sample_size: usize,
    pub sample_seed: u64,
    /// Multi-column cards survive only when their targets are jointly
    /// non-null in at least this share of sampled rows.
    pub min_cooccurrence: f64,
    /// Explicit allowed-value lists are only kept for columns with at most
    /// this many distinct values.
    pub value_set_max_distinct: usize,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        EnrichOptions {
            model: "rule-model".to_string(),
            temperature: 0.0,
            sample_size: 100,
            sample_seed: 0,
            min_cooccurrence: 0.9,
            value_set_max_distinct: 30,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DroppedCard {
    pub card: RuleCard,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct EnrichOutcome {
    pub kept: Vec<RuleCard>,
    pub dropped: Vec<DroppedCard>,
    pub prompts: Vec<PromptRequest>,
    /// Token logprobs of each kept card's enrichment completion, the
    /// per-rule signal the confidence report is computed from.
    pub confidence: Vec<ConfidenceEntry>,
}

/// Reviews draft cards one at a time. Cards judged `correct` or
/// `incorrect_fixable` are kept with specification and pseudocode filled;
/// `incomplete` earns one retry with the reviewer's note attached; every
/// other status drops the card with its reason recorded.
pub fn enrich_rules(
    gateway: &ChatGateway,
    table: &Table,
    profiles: &[ColumnProfile],
    contrast: &BTreeMap<String, (Vec<String>, Vec<String>)>,
    drafts: Vec<RuleCard>,
    opts: &EnrichOptions,
) -> Result<EnrichOutcome> {
    let mut outcome = EnrichOutcome::default();
    let gate_rows = sample_rows(table, opts.sample_size, opts.sample_seed);

    for mut card in drafts {
        if let Some(share) = cooccurrence_below_gate(table, &card, &gate_rows, opts) {
            card.status = Some(EnrichmentStatus::Incomplete);
            outcome.dropped.push(DroppedCard {
                card,
                reason: format!(
                    "target columns jointly non-null in only {:.0}% of sampled rows",
                    share * 100.0
                ),
            });
            continue;
        }

        let card_profiles = target_profiles(profiles, &card);
        let card_contrast = target_contrast(contrast, &card);
        let request = build_enrich_prompt(
            &card,
            &card_profiles,
            &card_contrast,
            None,
            &opts.model,
            opts.temperature,
        );
        outcome.prompts.push(request.clone());

        match review_once(gateway, &request, &card) {
            Review::Keep(enriched, logprobs) => {
                finish_keep(&mut outcome, enriched, logprobs, profiles, opts);
            }
            Review::Retry(note) => {
                let retry = build_enrich_prompt(
                    &card,
                    &card_profiles,
                    &card_contrast,
                    Some(&note),
                    &opts.model,
                    opts.temperature,
                );
                outcome.prompts.push(retry.clone());
                match review_once(gateway, &retry, &card) {
                    Review::Keep(enriched, logprobs) => {
                        finish_keep(&mut outcome, enriched, logprobs, profiles, opts);
                    }
                    Review::Retry(note) => {
                        card.status = Some(EnrichmentStatus::Incomplete);
                        outcome.dropped.push(DroppedCard {
                            card,
                            reason: format!("still incomplete after retry: {note}"),
                        });
                    }
                    Review::Drop(card, reason) => {
                        outcome.dropped.push(DroppedCard { card, reason });
                    }
                }
            }
            Review::Drop(card, reason) => {
                outcome.dropped.push(DroppedCard { card, reason });
            }
        }
    }
    Ok(outcome)
}

enum Review {
    /// Card kept, with the completion's token logprobs.
    Keep(RuleCard, Vec<f64>),
    /// Status incomplete: retry once with this note.
    Retry(String),
    Drop(RuleCard, String),
}

fn review_once(gateway: &ChatGateway, request: &PromptRequest, card: &RuleCard) -> Review {
    let (value, completion) = match gateway.chat_json(request) {
        Ok(pair) => pair,
        Err(e) => {
            log::warn!("enrichment of `{}` unparseable: {e}", card.rule_name);
            return Review::Drop(card.clone(), format!("enrichment response unusable: {e}"));
        }
    };
    let status_text = value
        .get("Status")
        .and_then(|s| s.as_str())
        .unwrap_or_default();
    let Some(status) = EnrichmentStatus::parse_lenient(status_text) else {
        return Review::Drop(
            card.clone(),
            format!("enrichment returned no recognizable status (got `{status_text}`)"),
        );
    };
    let reason = value
        .get("Reason")
        .and_then(|r| r.as_str())
        .unwrap_or_default()
        .to_string();

    if status.retries_once() {
        return Review::Retry(if reason.is_empty() { "unspecified gap".to_string() } else { reason });
    }
    if !status.keeps_card() {
        let mut dropped = card.clone();
        dropped.status = Some(status);
        dropped.status_reason = Some(reason.clone());
        return Review::Drop(
            dropped,
            format!("status {}: {reason}", status_tag(status)),
        );
    }

    let mut enriched = card.clone();
    enriched.status = Some(status);
    enriched.status_reason = if reason.is_empty() { None } else { Some(reason) };
    let fresh: Option<AdditionalInfo> = value
        .get("Additional Information")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    match fresh {
        Some(info) if !info.pseudocode.is_empty() => {
            enriched.additional_information = Some(info);
        }
        // A card confirmed correct may keep the pseudocode it already had.
        _ if !enriched.pseudocode().is_empty() => {}
        _ => {
            return Review::Drop(
                enriched,
                "enrichment kept the rule but supplied no pseudocode".to_string(),
            );
        }
    }
    Review::Keep(enriched, completion.token_logprobs)
}

fn finish_keep(
    outcome: &mut EnrichOutcome,
    mut card: RuleCard,
    logprobs: Vec<f64>,
    profiles: &[ColumnProfile],
    opts: &EnrichOptions,
) {
    sanitize_pseudocode(&mut card, profiles, opts);
    if card.pseudocode().is_empty() {
        outcome.dropped.push(DroppedCard {
            card,
            reason: "no enforceable pseudocode clauses after sanitizing".to_string(),
        });
        return;
    }
    if !card.pseudocode_well_formed() {
        let bad = card
            .pseudocode()
            .iter()
            .find(|c| {
                let t = c.trim().trim_end_matches('.').trim_end();
                !(t.ends_with("flag") || t.ends_with("pass"))
            })
            .cloned()
            .unwrap_or_default();
        outcome.dropped.push(DroppedCard {
            card,
            reason: format!("malformed pseudocode clause `{bad}`"),
        });
        return;
    }
    outcome.confidence.push(ConfidenceEntry {
        rule_name: card.rule_name.clone(),
        rule_type: card.rule_type.display_name().to_string(),
        logprobs,
    });
    outcome.kept.push(card);
}

/// Drops clauses the enrichment prompt forbids: explicit value lists over
/// high-cardinality columns, and regular expressions over numeric columns
/// for pattern-matching cards. Format rules may still pin the written shape
/// of a numeric column (a ratio like "0.045" is a format, not a pattern).
fn sanitize_pseudocode(card: &mut RuleCard, profiles: &[ColumnProfile], opts: &EnrichOptions) {
    let Some(info) = card.additional_information.as_mut() else {
        return;
    };
    let wide_columns: Vec<&str> = profiles
        .iter()
        .filter(|p| p.distinct_count > opts.value_set_max_distinct)
        .map(|p| p.name.as_str())
        .collect();
    let numeric_columns: Vec<&str> = profiles
        .iter()
        .filter(|p| matches!(p.expected_type, ColumnType::Integer | ColumnType::Real))
        .map(|p| p.name.as_str())
        .collect();
    let pattern_card = card.rule_type == RuleType::PatternMatching;
    let rule_name = card.rule_name.clone();

    info.pseudocode.retain(|clause| {
        let lists_values = clause.contains(" not in [");
        if lists_values && wide_columns.iter().any(|c| clause.contains(c)) {
            log::warn!(
                "rule `{rule_name}`: dropped value-list clause over a high-cardinality column"
            );
            return false;
        }
        let is_regex = clause.contains("re_match(") || clause.contains("does not match");
        if pattern_card && is_regex && numeric_columns.iter().any(|c| clause.contains(c)) {
            log::warn!("rule `{rule_name}`: dropped regex clause over a numeric column");
            return false;
        }
        true
    });
}

/// For multi-column cards: the share of sampled rows where all target
/// columns are non-null, when that share fails the gate.
fn cooccurrence_below_gate(
    table: &Table,
    card: &RuleCard,
    gate_rows: &[usize],
    opts: &EnrichOptions,
) -> Option<f64> {
    if card.target_columns.len() < 2 || gate_rows.is_empty() {
        return None;
    }
    let indices: Vec<usize> = card
        .target_columns
        .iter()
        .filter_map(|c| table.column_index(c))
        .collect();
    if indices.len() != card.target_columns.len() {
        return None; // Unknown columns were already rejected at parse time.
    }
    let joint = gate_rows
        .iter()
        .filter(|&&r| indices.iter().all(|&c| table.cell(r, c).is_some()))
        .count();
    let share = joint as f64 / gate_rows.len() as f64;
    (share < opts.min_cooccurrence).then_some(share)
}

fn target_profiles(profiles: &[ColumnProfile], card: &RuleCard) -> Vec<ColumnProfile> {
    profiles
        .iter()
        .filter(|p| card.target_columns.contains(&p.name))
        .cloned()
        .collect()
}

fn target_contrast(
    contrast: &BTreeMap<String, (Vec<String>, Vec<String>)>,
    card: &RuleCard,
) -> ContrastSamples {
    ContrastSamples {
        columns: card
            .target_columns
            .iter()
            .filter_map(|name| {
                contrast.get(name).map(|(clean, noise)| ColumnContrast {
                    column: name.clone(),
                    clean: clean.clone(),
                    noise: noise.clone(),
                })
            })
            .collect(),
    }
}

fn status_tag(status: EnrichmentStatus) -> String {
    serde_json::to_value(status)
        .ok()
        .and_then(|v| v.as_str().map(|s| s.to_string()))
        .unwrap_or_else(|| format!("{status:?}"))
}
