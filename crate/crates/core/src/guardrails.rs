//! Guardrails between enrichment and compilation: a conflict-resolution
//! pass that removes mutually contradictory rules, then a rubric pass that
//! grades each survivor and keeps only rules worth enforcing.
//!
//! The two passes fail differently on purpose. Conflict detection fails
//! open (a missed conflict only risks duplicate flags); the rubric fails
//! closed into all-`ambiguous` verdicts, parking the rules for human
//! review instead of shipping unvetted validators.

use crate::gateway::{ChatGateway, PromptRequest};
use crate::rules::{build_conflict_prompt, build_rubric_prompt, string_or_list, RuleCard};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// One conflicting pair and the verdict on which side to drop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictEntry {
    pub rule_names: Vec<String>,
    #[serde(deserialize_with = "string_or_list")]
    pub target_column: Vec<String>,
    pub conflict_reason: String,
    pub remove_rule: String,
    pub removal_reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub conflicts: Vec<ConflictEntry>,
}

#[derive(Debug, Default)]
pub struct ConflictOutcome {
    pub report: ConflictReport,
    pub prompts: Vec<PromptRequest>,
    pub diagnostics: Vec<String>,
}

/// Groups cards by overlapping target columns and asks the model, one
/// prompt per group of two or more, which pairs contradict each other.
///
/// Entries violating the report invariants (a pair of known rule names,
/// `remove_rule` one of the pair, each pair listed once) are discarded
/// with a diagnostic. A group whose response cannot be parsed contributes
/// nothing: missing a conflict is recoverable, losing rules to a parse
/// accident is not.
pub fn detect_conflicts(
    gateway: &ChatGateway,
    cards: &[RuleCard],
    model: &str,
    temperature: f64,
) -> ConflictOutcome {
    let mut outcome = ConflictOutcome::default();
    if cards.len() < 2 {
        return outcome;
    }

    let known: BTreeSet<&str> = cards.iter().map(|c| c.rule_name.as_str()).collect();
    let mut seen_pairs: BTreeSet<(String, String)> = BTreeSet::new();

    for group in column_overlap_groups(cards) {
        if group.len() < 2 {
            continue;
        }
        let members: Vec<RuleCard> = group.iter().map(|&i| cards[i].clone()).collect();
        let request = build_conflict_prompt(&members, model, temperature);
        outcome.prompts.push(request.clone());
        let value = match gateway.chat_json(&request) {
            Ok((value, _)) => value,
            Err(e) => {
                outcome.diagnostics.push(format!("conflict group unreadable, skipped: {e}"));
                continue;
            }
        };
        let report: ConflictReport = match serde_json::from_value(value) {
            Ok(report) => report,
            Err(e) => {
                outcome.diagnostics.push(format!("conflict report malformed, skipped: {e}"));
                continue;
            }
        };
        for entry in report.conflicts {
            match validate_entry(&entry, &known, &mut seen_pairs) {
                Ok(()) => outcome.report.conflicts.push(entry),
                Err(why) => outcome.diagnostics.push(why),
            }
        }
    }
    for d in &outcome.diagnostics {
        log::warn!("{d}");
    }
    outcome
}

fn validate_entry(
    entry: &ConflictEntry,
    known: &BTreeSet<&str>,
    seen_pairs: &mut BTreeSet<(String, String)>,
) -> Result<(), String> {
    if entry.rule_names.len() != 2 {
        return Err(format!(
            "conflict entry names {} rules instead of a pair",
            entry.rule_names.len()
        ));
    }
    for name in &entry.rule_names {
        if !known.contains(name.as_str()) {
            return Err(format!("conflict entry names unknown rule `{name}`"));
        }
    }
    if !entry.rule_names.contains(&entry.remove_rule) {
        return Err(format!(
            "conflict entry removes `{}`, which is not in the pair",
            entry.remove_rule
        ));
    }
    let mut pair = [entry.rule_names[0].clone(), entry.rule_names[1].clone()];
    pair.sort();
    let [a, b] = pair;
    if !seen_pairs.insert((a, b)) {
        return Err(format!(
            "duplicate conflict listing for `{}` / `{}`",
            entry.rule_names[0], entry.rule_names[1]
        ));
    }
    Ok(())
}

/// Connected components over "shares a target column", each component in
/// first-appearance order.
fn column_overlap_groups(cards: &[RuleCard]) -> Vec<Vec<usize>> {
    let mut by_column: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, card) in cards.iter().enumerate() {
        for col in &card.target_columns {
            by_column.entry(col.as_str()).or_default().push(i);
        }
    }
    let mut component = vec![usize::MAX; cards.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..cards.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut frontier = vec![start];
        let mut members = Vec::new();
        component[start] = id;
        while let Some(i) = frontier.pop() {
            members.push(i);
            for col in &cards[i].target_columns {
                for &j in &by_column[col.as_str()] {
                    if component[j] == usize::MAX {
                        component[j] = id;
                        frontier.push(j);
                    }
                }
            }
        }
        members.sort();
        groups.push(members);
    }
    groups
}

/// Deletes every card whose title the report marks for removal; everything
/// else passes through untouched, in order. Titles that match no card are
/// ignored with a warning.
pub fn apply_conflict_removals(cards: Vec<RuleCard>, report: &ConflictReport) -> Vec<RuleCard> {
    let removals: BTreeSet<&str> =
        report.conflicts.iter().map(|e| e.remove_rule.as_str()).collect();
    let present: BTreeSet<&str> = cards.iter().map(|c| c.rule_name.as_str()).collect();
    for name in &removals {
        if !present.contains(name) {
            log::warn!("conflict removal names unknown rule `{name}`, ignored");
        }
    }
    cards.into_iter().filter(|c| !removals.contains(c.rule_name.as_str())).collect()
}

/// The rubric's label vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricLabel {
    Duplicate,
    Redundant,
    Trivial,
    RiskFalsePositive,
    Miscategorized,
    Ambiguous,
    HallucinatedOverlySpecific,
    HighValue,
    Correct,
    IncorrectFixable,
}

impl RubricLabel {
    /// At least one of these must be present for a card to survive.
    pub const KEEP: [RubricLabel; 3] =
        [RubricLabel::HighValue, RubricLabel::Correct, RubricLabel::IncorrectFixable];
    /// Any of these vetoes the card regardless of positive labels.
    pub const VETO: [RubricLabel; 5] = [
        RubricLabel::Duplicate,
        RubricLabel::Redundant,
        RubricLabel::Trivial,
        RubricLabel::HallucinatedOverlySpecific,
        RubricLabel::Miscategorized,
    ];

    /// Accepts spelling variants the model produces: hyphens, spaces,
    /// British `-ised`, and the `correct_fixable` shorthand.
    pub fn parse_lenient(s: &str) -> Option<RubricLabel> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Some(match norm.as_str() {
            "duplicate" => RubricLabel::Duplicate,
            "redundant" => RubricLabel::Redundant,
            "trivial" => RubricLabel::Trivial,
            "riskfalsepositive" => RubricLabel::RiskFalsePositive,
            "miscategorized" | "miscategorised" => RubricLabel::Miscategorized,
            "ambiguous" => RubricLabel::Ambiguous,
            "hallucinatedoverlyspecific" => RubricLabel::HallucinatedOverlySpecific,
            "highvalue" => RubricLabel::HighValue,
            "correct" => RubricLabel::Correct,
            "incorrectfixable" | "correctfixable" => RubricLabel::IncorrectFixable,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricVerdict {
    pub rule_name: String,
    pub labels: BTreeSet<RubricLabel>,
    pub rationale: String,
}

#[derive(Debug, Default)]
pub struct RubricOutcome {
    /// One verdict per input card, in input order.
    pub verdicts: Vec<RubricVerdict>,
    pub prompt: Option<PromptRequest>,
    pub diagnostics: Vec<String>,
}

fn ambiguous_verdict(rule_name: &str, rationale: &str) -> RubricVerdict {
    RubricVerdict {
        rule_name: rule_name.to_string(),
        labels: BTreeSet::from([RubricLabel::Ambiguous]),
        rationale: rationale.to_string(),
    }
}

/// Grades the whole batch with one prompt. Every input card gets exactly
/// one verdict: cards the response skips are `ambiguous` with rationale
/// "no verdict returned", and an unusable response makes the entire batch
/// `ambiguous` so nothing unvetted slips through.
pub fn rubric_evaluate(
    gateway: &ChatGateway,
    cards: &[RuleCard],
    schema: &str,
    sample_rows: &str,
    model: &str,
    temperature: f64,
) -> RubricOutcome {
    let mut outcome = RubricOutcome::default();
    if cards.is_empty() {
        return outcome;
    }
    let request = build_rubric_prompt(cards, schema, sample_rows, model, temperature);
    outcome.prompt = Some(request.clone());

    let items = match gateway.chat_json(&request) {
        Ok((serde_json::Value::Array(items), _)) => items,
        Ok((other, _)) => {
            outcome.diagnostics.push(format!(
                "rubric response was not a JSON array (got {other})"
            ));
            Vec::new()
        }
        Err(e) => {
            outcome.diagnostics.push(format!("rubric response unusable: {e}"));
            Vec::new()
        }
    };

    let known: BTreeSet<&str> = cards.iter().map(|c| c.rule_name.as_str()).collect();
    let mut by_name: BTreeMap<String, RubricVerdict> = BTreeMap::new();
    for item in items {
        let Some(verdict) = parse_verdict(&item, &mut outcome.diagnostics) else {
            continue;
        };
        if !known.contains(verdict.rule_name.as_str()) {
            outcome
                .diagnostics
                .push(format!("verdict for unknown rule `{}` discarded", verdict.rule_name));
            continue;
        }
        if by_name.contains_key(&verdict.rule_name) {
            outcome.diagnostics.push(format!(
                "second verdict for `{}` ignored",
                verdict.rule_name
            ));
            continue;
        }
        by_name.insert(verdict.rule_name.clone(), verdict);
    }

    for card in cards {
        let verdict = by_name.remove(&card.rule_name).unwrap_or_else(|| {
            ambiguous_verdict(&card.rule_name, "no verdict returned")
        });
        outcome.verdicts.push(verdict);
    }
    for d in &outcome.diagnostics {
        log::warn!("{d}");
    }
    outcome
}

fn parse_verdict(item: &serde_json::Value, diagnostics: &mut Vec<String>) -> Option<RubricVerdict> {
    let Some(rule_name) = item.get("rule_name").and_then(|v| v.as_str()) else {
        diagnostics.push("verdict without rule_name discarded".to_string());
        return None;
    };
    let mut labels = BTreeSet::new();
    if let Some(raw) = item.get("labels").and_then(|v| v.as_array()) {
        for label in raw {
            let Some(text) = label.as_str() else { continue };
            match RubricLabel::parse_lenient(text) {
                Some(label) => {
                    labels.insert(label);
                }
                None => diagnostics.push(format!(
                    "unknown rubric label `{text}` on `{rule_name}` ignored"
                )),
            }
        }
    }
    let rationale = item
        .get("rationale")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    Some(RubricVerdict { rule_name: rule_name.to_string(), labels, rationale })
}

/// A card the rubric filtered out, with the grades that sank it.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedCard {
    pub card: RuleCard,
    pub labels: BTreeSet<RubricLabel>,
    pub rationale: String,
}

/// Keeps a card iff it earned at least one keep label and no veto label.
/// Verdicts pair with cards by rule name; a card without a verdict is
/// dropped as ambiguous.
pub fn filter_keep_set(
    cards: Vec<RuleCard>,
    verdicts: &[RubricVerdict],
) -> (Vec<RuleCard>, Vec<RejectedCard>) {
    let by_name: BTreeMap<&str, &RubricVerdict> =
        verdicts.iter().map(|v| (v.rule_name.as_str(), v)).collect();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for card in cards {
        let (labels, rationale) = match by_name.get(card.rule_name.as_str()) {
            Some(v) => (v.labels.clone(), v.rationale.clone()),
            None => (BTreeSet::from([RubricLabel::Ambiguous]), "no verdict returned".to_string()),
        };
        let keeps = RubricLabel::KEEP.iter().any(|l| labels.contains(l));
        let vetoed = RubricLabel::VETO.iter().any(|l| labels.contains(l));
        if keeps && !vetoed {
            kept.push(card);
        } else {
            rejected.push(RejectedCard { card, labels, rationale });
        }
    }
    (kept, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedStub;
    use crate::rules::RuleType;

    fn card(name: &str, targets: &[&str]) -> RuleCard {
        RuleCard::new(RuleType::FormatCompliance, name, targets)
    }

    fn conflict_json(a: &str, b: &str, remove: &str) -> String {
        format!(
            r#"{{"conflicts": [{{"rule_names": ["{a}", "{b}"], "target_column": "state",
                "conflict_reason": "encodings disagree", "remove_rule": "{remove}",
                "removal_reason": "dataset uses uppercase codes"}}]}}"#
        )
    }

    #[test]
    fn cards_group_by_overlapping_columns_and_only_groups_are_prompted() {
        let cards = vec![
            card("Upper State", &["state"]),
            card("ABV Decimal", &["abv"]),
            card("Lower State", &["state"]),
        ];
        let stub = ScriptedStub::new().route(
            &["Upper State", "Lower State"],
            format!("```json\n{}\n```", conflict_json("Upper State", "Lower State", "Lower State")),
        );
        let out = detect_conflicts(&ChatGateway::stub(stub), &cards, "m", 0.0);
        // The abv card is alone on its column: one prompt, for the state group.
        assert_eq!(out.prompts.len(), 1);
        assert!(out.prompts[0].user.contains("Upper State"));
        assert!(!out.prompts[0].user.contains("ABV Decimal"));
        assert_eq!(out.report.conflicts.len(), 1);
        assert_eq!(out.report.conflicts[0].remove_rule, "Lower State");
    }

    #[test]
    fn invalid_entries_are_discarded_with_diagnostics() {
        let cards = vec![card("A", &["x"]), card("B", &["x"]), card("C", &["x"])];
        let response = r#"```json
{"conflicts": [
  {"rule_names": ["A", "B"], "target_column": "x", "conflict_reason": "r",
   "remove_rule": "C", "removal_reason": "not in the pair"},
  {"rule_names": ["A", "Ghost"], "target_column": "x", "conflict_reason": "r",
   "remove_rule": "A", "removal_reason": "unknown partner"},
  {"rule_names": ["A", "B"], "target_column": "x", "conflict_reason": "r",
   "remove_rule": "B", "removal_reason": "valid"},
  {"rule_names": ["B", "A"], "target_column": "x", "conflict_reason": "r",
   "remove_rule": "A", "removal_reason": "duplicate pair"}
]}
```"#;
        let stub = ScriptedStub::new().route(&["conflicts"], response);
        let out = detect_conflicts(&ChatGateway::stub(stub), &cards, "m", 0.0);
        assert_eq!(out.report.conflicts.len(), 1);
        assert_eq!(out.report.conflicts[0].remove_rule, "B");
        assert_eq!(out.diagnostics.len(), 3);
    }

    #[test]
    fn unreadable_conflict_response_fails_open() {
        let cards = vec![card("A", &["x"]), card("B", &["x"])];
        let stub = ScriptedStub::new().route(&["conflicts"], "no json in sight");
        let out = detect_conflicts(&ChatGateway::stub(stub), &cards, "m", 0.0);
        assert!(out.report.conflicts.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn single_card_yields_empty_report_without_prompting() {
        let out = detect_conflicts(
            &ChatGateway::stub(ScriptedStub::new()),
            &[card("Only", &["x"])],
            "m",
            0.0,
        );
        assert!(out.report.conflicts.is_empty());
        assert!(out.prompts.is_empty());
    }

    #[test]
    fn removals_preserve_order_and_tolerate_unknown_titles() {
        let cards: Vec<RuleCard> =
            ["A", "B", "C", "D", "E"].iter().map(|n| card(n, &["x"])).collect();
        let report = ConflictReport {
            conflicts: vec![
                ConflictEntry {
                    rule_names: vec!["A".into(), "B".into()],
                    target_column: vec!["x".into()],
                    conflict_reason: "r".into(),
                    remove_rule: "B".into(),
                    removal_reason: "r".into(),
                },
                ConflictEntry {
                    rule_names: vec!["C".into(), "D".into()],
                    target_column: vec!["x".into()],
                    conflict_reason: "r".into(),
                    remove_rule: "D".into(),
                    removal_reason: "r".into(),
                },
                ConflictEntry {
                    rule_names: vec!["D".into(), "E".into()],
                    target_column: vec!["x".into()],
                    conflict_reason: "r".into(),
                    remove_rule: "D".into(),
                    removal_reason: "already gone".into(),
                },
            ],
        };
        let survivors = apply_conflict_removals(cards.clone(), &report);
        let names: Vec<&str> = survivors.iter().map(|c| c.rule_name.as_str()).collect();
        assert_eq!(names, ["A", "C", "E"]);

        let untouched = apply_conflict_removals(cards.clone(), &ConflictReport::default());
        assert_eq!(untouched.len(), 5);

        let ghost = ConflictReport {
            conflicts: vec![ConflictEntry {
                rule_names: vec!["A".into(), "B".into()],
                target_column: vec!["x".into()],
                conflict_reason: "r".into(),
                remove_rule: "Ghost".into(),
                removal_reason: "r".into(),
            }],
        };
        assert_eq!(apply_conflict_removals(cards, &ghost).len(), 5);
    }

    #[test]
    fn rubric_parses_verdicts_and_fills_missing_cards_as_ambiguous() {
        let cards = vec![card("ABV Decimal", &["abv"]), card("Silent Rule", &["x"])];
        let stub = ScriptedStub::new().route(
            &["Candidate rules"],
            r#"```json
[{"rule_name": "ABV Decimal", "labels": ["high_value", "Correct-fixable", "mis-categorised"],
  "rationale": "solid"},
 {"rule_name": "Phantom", "labels": ["correct"], "rationale": "not an input"}]
```"#,
        );
        let out = rubric_evaluate(&ChatGateway::stub(stub), &cards, "schema", "rows", "m", 0.0);
        assert_eq!(out.verdicts.len(), 2);
        assert_eq!(
            out.verdicts[0].labels,
            BTreeSet::from([
                RubricLabel::HighValue,
                RubricLabel::IncorrectFixable,
                RubricLabel::Miscategorized
            ])
        );
        assert_eq!(out.verdicts[1].labels, BTreeSet::from([RubricLabel::Ambiguous]));
        assert_eq!(out.verdicts[1].rationale, "no verdict returned");
        // The phantom verdict was discarded.
        assert!(out.diagnostics.iter().any(|d| d.contains("Phantom")));
    }

    #[test]
    fn unusable_rubric_response_fails_closed_to_all_ambiguous() {
        let cards = vec![card("A", &["x"]), card("B", &["y"])];
        let stub = ScriptedStub::new().route(&["Candidate rules"], "total garbage");
        let out = rubric_evaluate(&ChatGateway::stub(stub), &cards, "schema", "rows", "m", 0.0);
        assert_eq!(out.verdicts.len(), 2);
        assert!(out
            .verdicts
            .iter()
            .all(|v| v.labels == BTreeSet::from([RubricLabel::Ambiguous])));
    }

    #[test]
    fn keep_set_requires_a_keep_label_and_no_veto() {
        let cards = vec![
            card("Keeper", &["a"]),
            card("Trivial One", &["b"]),
            card("Mixed", &["c"]),
            card("Risky Keeper", &["d"]),
            card("Unlabeled", &["e"]),
        ];
        let verdicts = vec![
            RubricVerdict {
                rule_name: "Keeper".into(),
                labels: BTreeSet::from([RubricLabel::HighValue, RubricLabel::Correct]),
                rationale: "good".into(),
            },
            RubricVerdict {
                rule_name: "Trivial One".into(),
                labels: BTreeSet::from([RubricLabel::Trivial]),
                rationale: "schema already enforces".into(),
            },
            RubricVerdict {
                rule_name: "Mixed".into(),
                labels: BTreeSet::from([RubricLabel::Correct, RubricLabel::Redundant]),
                rationale: "negative label wins".into(),
            },
            RubricVerdict {
                rule_name: "Risky Keeper".into(),
                labels: BTreeSet::from([RubricLabel::HighValue, RubricLabel::RiskFalsePositive]),
                rationale: "risk alone is not a veto".into(),
            },
        ];
        let (kept, rejected) = filter_keep_set(cards, &verdicts);
        let kept_names: Vec<&str> = kept.iter().map(|c| c.rule_name.as_str()).collect();
        assert_eq!(kept_names, ["Keeper", "Risky Keeper"]);
        assert_eq!(rejected.len(), 3);
        assert_eq!(rejected[2].rationale, "no verdict returned");

        // Idempotent: refiltering the survivors changes nothing.
        let (again, none) = filter_keep_set(kept.clone(), &verdicts);
        assert_eq!(again, kept);
        assert!(none.is_empty());
    }
}
