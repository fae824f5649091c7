//! Pseudocode-to-spec parser.
//!
//! Enriched cards carry one flag-clause per line in a small fixed grammar
//! ("if abv is null -> flag", "if len(state) != 2 -> flag", ...). Each line
//! is matched against the grammar; a line that matches nothing makes the
//! whole card unsupported, carrying the offending clause verbatim so the
//! code-generation fallback can report why the deterministic path declined.

use std::sync::OnceLock;

use regex::Regex;

use crate::rules::RuleCard;

use super::{CaseFold, Clause, CompareOp, Normalization, Operand, TypeTag, ValidatorSpec};

/// Outcome of matching a card's pseudocode against the clause grammar.
/// Unsupported is a value, not an error: it routes the card to codegen.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedPseudocode {
    Supported(ValidatorSpec),
    Unsupported { clause: String },
}

/// Parses every pseudocode line of `card`. Lines ending in `-> pass` are
/// null-guards restating the default null-skip semantics and compile to
/// nothing; any unmatched `-> flag` line yields `Unsupported` naming it.
pub fn parse_pseudocode(card: &RuleCard) -> ParsedPseudocode {
    let mut clauses = Vec::new();
    for raw in card.pseudocode() {
        let line = normalize_line(raw);
        let Some((condition, flags)) = split_verdict(&line) else {
            return unsupported(raw);
        };
        if !flags {
            // "if X is null -> pass": a no-op guard. Anything else behind
            // "pass" is outside the grammar.
            if null_test_column(&condition, card).is_some() {
                continue;
            }
            return unsupported(raw);
        }
        match parse_condition(&condition, card) {
            Some(mut parsed) => clauses.append(&mut parsed),
            None => return unsupported(raw),
        }
    }
    ParsedPseudocode::Supported(ValidatorSpec {
        target_columns: card.target_columns.clone(),
        clauses,
    })
}

fn unsupported(raw: &str) -> ParsedPseudocode {
    ParsedPseudocode::Unsupported {
        clause: raw.trim().to_string(),
    }
}

/// Collapses whitespace, unifies the arrow spelling, and strips the leading
/// "if " and trailing punctuation.
fn normalize_line(raw: &str) -> String {
    let mut s = raw.replace(['\u{2192}', '\u{21d2}'], "->");
    s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    s.trim().trim_end_matches('.').trim().to_string()
}

/// Splits "if <condition> -> flag|pass" into the condition and whether the
/// line flags. Returns `None` when the line has no recognizable verdict.
fn split_verdict(line: &str) -> Option<(String, bool)> {
    let (body, verdict) = line.rsplit_once("->")?;
    let flags = match verdict.trim().to_lowercase().as_str() {
        "flag" => true,
        "pass" => false,
        _ => return None,
    };
    let body = body.trim();
    let condition = body
        .strip_prefix("if ")
        .or_else(|| body.strip_prefix("If "))
        .or_else(|| body.strip_prefix("IF "))?
        .trim()
        .to_string();
    Some((condition, flags))
}

/// Parses one flag condition into clauses. Most conditions produce a single
/// clause; "or"-joined numeric bounds on one column merge into one `Range`.
fn parse_condition(cond: &str, card: &RuleCard) -> Option<Vec<Clause>> {
    if let Some(column) = null_test_column(cond, card) {
        return Some(vec![Clause::NotNull { column }]);
    }
    if let Some(clause) = parse_implies(cond, card) {
        return Some(vec![clause]);
    }
    if let Some(clause) = parse_regex(cond, card) {
        return Some(vec![clause]);
    }
    if let Some(clause) = parse_unique(cond, card) {
        return Some(vec![clause]);
    }
    if let Some(clause) = parse_type_test(cond, card) {
        return Some(vec![clause]);
    }
    if let Some(clause) = parse_length(cond, card) {
        return Some(vec![clause]);
    }
    if let Some(clause) = parse_membership(cond, card) {
        return Some(vec![clause]);
    }
    parse_comparisons(cond, card)
}

/// "<col> is null" (or missing/empty/blank). Returns the resolved column.
/// Byte offsets are taken on the ASCII-lowercased copy so they stay valid
/// in the original string.
fn null_test_column(cond: &str, card: &RuleCard) -> Option<String> {
    let lower = cond.to_ascii_lowercase();
    let idx = lower.find(" is ")?;
    let tail = lower[idx + 4..].trim();
    if !matches!(tail, "null" | "missing" | "empty" | "blank" | "none" | "nan") {
        return None;
    }
    let (token, _) = unwrap_expr(&cond[..idx])?;
    Some(resolve_column(&token, card))
}

/// "<A> is not null and <B> is null": flag rows where the guard column is
/// present but the dependent column is missing.
fn parse_implies(cond: &str, card: &RuleCard) -> Option<Clause> {
    let lower = cond.to_ascii_lowercase();
    let and_idx = lower.find(" and ")?;
    let left = &cond[..and_idx];
    let right = &cond[and_idx + 5..];
    let left_lower = left.to_ascii_lowercase();
    let not_null = left_lower
        .strip_suffix("is not null")
        .or_else(|| left_lower.strip_suffix("is present"))?;
    let (guard_token, _) = unwrap_expr(&left[..not_null.len()])?;
    let dependent = null_test_column(right, card)?;
    Some(Clause::Implies {
        guard: Box::new(Clause::NotNull {
            column: resolve_column(&guard_token, card),
        }),
        consequent: Box::new(Clause::NotNull { column: dependent }),
    })
}

/// "not re_match(<pattern>, <col>)" or "<col> does not match <pattern>".
fn parse_regex(cond: &str, card: &RuleCard) -> Option<Clause> {
    if let Some(rest) = cond
        .strip_prefix("not re_match(")
        .or_else(|| cond.strip_prefix("not re.match("))
    {
        let inner = rest.strip_suffix(')')?;
        // The column is the last comma-separated argument; the pattern is
        // everything before it (patterns may themselves contain commas).
        let (pattern, col_expr) = inner.rsplit_once(',')?;
        let (token, _) = unwrap_expr(col_expr.trim())?;
        return Some(Clause::Regex {
            column: resolve_column(&token, card),
            pattern: strip_quotes(pattern.trim()).to_string(),
        });
    }
    let lower = cond.to_ascii_lowercase();
    for marker in [" does not match ", " doesn't match "] {
        if let Some(idx) = lower.find(marker) {
            let (token, _) = unwrap_expr(&cond[..idx])?;
            let mut pattern = cond[idx + marker.len()..].trim();
            for noise in ["regex ", "pattern ", "the pattern ", "format "] {
                if let Some(stripped) = pattern.strip_prefix(noise) {
                    pattern = stripped.trim();
                }
            }
            return Some(Clause::Regex {
                column: resolve_column(&token, card),
                pattern: strip_quotes(pattern).to_string(),
            });
        }
    }
    None
}

/// "<col> is duplicated" / "is not unique" / "appears more than once".
fn parse_unique(cond: &str, card: &RuleCard) -> Option<Clause> {
    let lower = cond.to_ascii_lowercase();
    let idx = [" is duplicated", " is not unique", " appears more than once"]
        .iter()
        .find_map(|suffix| lower.strip_suffix(suffix).map(|head| head.len()))?;
    let (token, _) = unwrap_expr(&cond[..idx])?;
    Some(Clause::Unique {
        column: resolve_column(&token, card),
    })
}

/// "<col> is not an integer" and friends.
fn parse_type_test(cond: &str, card: &RuleCard) -> Option<Clause> {
    let lower = cond.to_ascii_lowercase();
    let idx = lower.find(" is not a ").map(|i| (i, i + 10)).or_else(|| {
        lower.find(" is not an ").map(|i| (i, i + 11))
    })?;
    let (head_end, tail_start) = idx;
    let mut tail = lower[tail_start..].trim();
    tail = tail.strip_prefix("valid ").unwrap_or(tail);
    let mut format = None;
    // Optional "(YYYY-MM-DD)" or "in format YYYY-MM-DD" suffix for dates.
    if let Some(open) = tail.find('(') {
        let close = tail.rfind(')')?;
        format = date_format(tail[open + 1..close].trim());
        tail = tail[..open].trim_end();
    } else if let Some(pos) = tail.find(" in format ") {
        format = date_format(tail[pos + 11..].trim());
        tail = tail[..pos].trim_end();
    }
    let tag = match tail {
        "integer" | "int" => TypeTag::Integer,
        "float" | "number" | "numeric" | "real" | "double" | "decimal" => TypeTag::Float,
        "date" | "datetime" | "timestamp" => TypeTag::Date { format },
        _ => return None,
    };
    let (token, _) = unwrap_expr(&cond[..head_end])?;
    Some(Clause::TypeIs {
        column: resolve_column(&token, card),
        tag,
    })
}

/// Translates spreadsheet-style date tokens ("YYYY-MM-DD HH:MM:SS") into a
/// chrono format string. Unknown tokens make the format unusable.
fn date_format(spec: &str) -> Option<String> {
    let mut out = String::new();
    let mut rest = spec.to_uppercase();
    while !rest.is_empty() {
        let (token, width) = if rest.starts_with("YYYY") {
            ("%Y", 4)
        } else if rest.starts_with("DD") {
            ("%d", 2)
        } else if rest.starts_with("HH") {
            ("%H", 2)
        } else if rest.starts_with("MM") {
            // Month before any HH, minutes after.
            if out.contains("%H") { ("%M", 2) } else { ("%m", 2) }
        } else if rest.starts_with("SS") {
            ("%S", 2)
        } else {
            let c = rest.chars().next().unwrap();
            if c.is_ascii_alphanumeric() {
                return None;
            }
            out.push(c);
            rest.remove(0);
            continue;
        };
        out.push_str(token);
        rest.drain(..width);
    }
    Some(out)
}

/// "len(<col>) != n" and the one-sided variants.
fn parse_length(cond: &str, card: &RuleCard) -> Option<Clause> {
    let rest = cond
        .strip_prefix("len(")
        .or_else(|| cond.strip_prefix("length("))?;
    let close = rest.find(')')?;
    let (token, _) = unwrap_expr(&rest[..close])?;
    let column = resolve_column(&token, card);
    let (op, rhs) = split_operator(rest[close + 1..].trim())?;
    let n: usize = rhs.trim().parse().ok()?;
    let (exact, min, max) = match op {
        CompareOp::Ne => (Some(n), None, None),
        // The flag-op describes the invalid region; bounds store the valid one.
        CompareOp::Lt => (None, Some(n), None),
        CompareOp::Le => (None, Some(n.checked_add(1)?), None),
        CompareOp::Gt => (None, None, Some(n)),
        CompareOp::Ge => (None, None, Some(n.checked_sub(1)?)),
        CompareOp::Eq => return None,
    };
    Some(Clause::Length {
        column,
        exact,
        min,
        max,
    })
}

/// "<col> not in [a, b, c]" or "<col> not in <reference file>".
fn parse_membership(cond: &str, card: &RuleCard) -> Option<Clause> {
    let lower = cond.to_ascii_lowercase();
    let idx = lower.find(" not in ")?;
    let (token, folds) = unwrap_expr(&cond[..idx])?;
    let column = resolve_column(&token, card);
    let rhs = cond[idx + 8..].trim();

    if let Some(body) = rhs.strip_prefix('[') {
        let body = body.strip_suffix(']')?;
        let fold = last_fold(&folds);
        let allowed: Vec<String> = body
            .split(',')
            .map(|item| strip_quotes(item.trim()).to_string())
            .filter(|item| !item.is_empty())
            .collect();
        return Some(Clause::ValueSet {
            column,
            allowed,
            fold,
        });
    }

    // Reference lookup. The file is either named inline ("not in file
    // countries.csv") or implied by the card's reference table.
    let mut file_token = strip_quotes(rhs.strip_prefix("file ").unwrap_or(rhs)).to_string();
    if !file_token.to_lowercase().ends_with(".csv") {
        file_token = card.reference_table()?.to_string();
    }
    // Lookups trim by default; CSV reference values often carry stray space.
    let mut normalization = vec![Normalization::Trim];
    match last_fold(&folds) {
        CaseFold::Upper => normalization.push(Normalization::Upper),
        CaseFold::Lower => normalization.push(Normalization::Lower),
        CaseFold::None => {}
    }
    Some(Clause::RefLookup {
        column: column.clone(),
        file: file_token,
        ref_column: ref_column_hint(card).unwrap_or(column),
        normalization,
    })
}

/// Pulls the reference column out of the card's Specification text, which
/// conventionally names it as "<name> field" or "<name> column".
fn ref_column_hint(card: &RuleCard) -> Option<String> {
    static HINT: OnceLock<Regex> = OnceLock::new();
    let re = HINT.get_or_init(|| Regex::new(r"`?(\w+)`?\s+(?:field|column)").expect("static regex"));
    re.captures(card.specification())
        .map(|c| c[1].to_string())
}

/// Numeric bounds and column/constant relations, possibly "or"-joined.
/// Bounds on the same column merge into a single `Range` whose valid
/// interval is the complement of the union of flagged regions.
fn parse_comparisons(cond: &str, card: &RuleCard) -> Option<Vec<Clause>> {
    #[derive(Default)]
    struct RangeAcc {
        lower: Option<(f64, bool)>,
        upper: Option<(f64, bool)>,
    }
    let mut ranges: Vec<(String, RangeAcc)> = Vec::new();
    let mut compares = Vec::new();

    for part in cond.split(" or ") {
        let (op, lhs, rhs) = split_comparison(part.trim())?;
        let (token, _) = unwrap_expr(lhs)?;
        let column = resolve_column(&token, card);
        let rhs = rhs.trim();

        if let Some(value) = parse_number(rhs) {
            // Flagged region -> valid complement bound.
            let acc = match ranges.iter_mut().find(|(c, _)| *c == column) {
                Some((_, acc)) => acc,
                None => {
                    ranges.push((column.clone(), RangeAcc::default()));
                    &mut ranges.last_mut().unwrap().1
                }
            };
            match op {
                CompareOp::Lt => tighten_lower(&mut acc.lower, value, false),
                CompareOp::Le => tighten_lower(&mut acc.lower, value, true),
                CompareOp::Gt => tighten_upper(&mut acc.upper, value, false),
                CompareOp::Ge => tighten_upper(&mut acc.upper, value, true),
                CompareOp::Eq | CompareOp::Ne => compares.push(Clause::Compare {
                    left: column.clone(),
                    op: op.negate(),
                    right: Operand::Constant(strip_quotes(rhs).to_string()),
                }),
            }
            continue;
        }

        let right = if is_quoted(rhs) {
            Operand::Constant(strip_quotes(rhs).to_string())
        } else if let Some((rtoken, _)) = unwrap_expr(rhs) {
            if is_identifier(&rtoken) {
                Operand::Column(resolve_column(&rtoken, card))
            } else {
                Operand::Constant(rtoken)
            }
        } else {
            return None;
        };
        compares.push(Clause::Compare {
            left: column,
            op: op.negate(),
            right,
        });
    }

    let mut clauses = Vec::new();
    for (column, acc) in ranges {
        clauses.push(Clause::Range {
            column,
            lower: acc.lower.map(|(v, _)| v),
            upper: acc.upper.map(|(v, _)| v),
            lower_open: acc.lower.map(|(_, open)| open).unwrap_or(false),
            upper_open: acc.upper.map(|(_, open)| open).unwrap_or(false),
        });
    }
    clauses.extend(compares);
    if clauses.is_empty() {
        None
    } else {
        Some(clauses)
    }
}

/// Keeps the tighter of two lower bounds; at equal values open beats closed.
fn tighten_lower(slot: &mut Option<(f64, bool)>, value: f64, open: bool) {
    let tighter = match slot {
        None => true,
        Some((cur, cur_open)) => value > *cur || (value == *cur && open && !*cur_open),
    };
    if tighter {
        *slot = Some((value, open));
    }
}

fn tighten_upper(slot: &mut Option<(f64, bool)>, value: f64, open: bool) {
    let tighter = match slot {
        None => true,
        Some((cur, cur_open)) => value < *cur || (value == *cur && open && !*cur_open),
    };
    if tighter {
        *slot = Some((value, open));
    }
}

/// Splits "<lhs> <op> <rhs>" on the first comparison operator.
fn split_comparison(part: &str) -> Option<(CompareOp, &str, &str)> {
    for (text, op) in [
        (">=", CompareOp::Ge),
        ("<=", CompareOp::Le),
        ("!=", CompareOp::Ne),
        ("==", CompareOp::Eq),
        (">", CompareOp::Gt),
        ("<", CompareOp::Lt),
        ("=", CompareOp::Eq),
    ] {
        if let Some(idx) = part.find(text) {
            let lhs = part[..idx].trim();
            let rhs = part[idx + text.len()..].trim();
            if lhs.is_empty() || rhs.is_empty() {
                return None;
            }
            return Some((op, lhs, rhs));
        }
    }
    None
}

/// Splits "<op> <rhs>" for the `len(col) != n` tail.
fn split_operator(tail: &str) -> Option<(CompareOp, &str)> {
    for (text, op) in [
        (">=", CompareOp::Ge),
        ("<=", CompareOp::Le),
        ("!=", CompareOp::Ne),
        ("==", CompareOp::Eq),
        (">", CompareOp::Gt),
        ("<", CompareOp::Lt),
        ("=", CompareOp::Eq),
    ] {
        if let Some(rest) = tail.strip_prefix(text) {
            return Some((op, rest));
        }
    }
    None
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_quoted(s: &str) -> bool {
    (s.starts_with('"') && s.ends_with('"') && s.len() >= 2)
        || (s.starts_with('\'') && s.ends_with('\'') && s.len() >= 2)
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    if is_quoted(s) {
        &s[1..s.len() - 1]
    } else {
        s.trim_matches('`')
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with(|c: char| c.is_ascii_digit())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Peels wrapper calls off a column expression: `float(x)`, `upper(trim(x))`,
/// `x.upper()`, `x.strip()`. Coercion wrappers (`float`, `int`, `str`) carry
/// no normalization; case and trim wrappers are collected in application
/// order for lookup clauses.
fn unwrap_expr(expr: &str) -> Option<(String, Vec<CaseFold>)> {
    let mut cur = strip_quotes(expr.trim()).trim().to_string();
    let mut folds = Vec::new();
    loop {
        let lower = cur.to_ascii_lowercase();
        let mut advanced = false;
        for (prefix, fold) in [
            ("float(", None),
            ("int(", None),
            ("str(", None),
            ("abs(", None),
            ("trim(", None),
            ("strip(", None),
            ("upper(", Some(CaseFold::Upper)),
            ("lower(", Some(CaseFold::Lower)),
        ] {
            if lower.starts_with(prefix) && cur.ends_with(')') {
                cur = cur[prefix.len()..cur.len() - 1].trim().to_string();
                if let Some(f) = fold {
                    folds.push(f);
                }
                advanced = true;
                break;
            }
        }
        if advanced {
            continue;
        }
        for (suffix, fold) in [
            (".upper()", Some(CaseFold::Upper)),
            (".lower()", Some(CaseFold::Lower)),
            (".strip()", None),
            (".trim()", None),
        ] {
            if lower.ends_with(suffix) {
                cur = cur[..cur.len() - suffix.len()].trim().to_string();
                if let Some(f) = fold {
                    folds.push(f);
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
        cur = strip_quotes(&cur).trim().to_string();
    }
    if cur.is_empty() || cur.contains(['(', ')', '*', '+', '/', ' ']) {
        return None;
    }
    Some((cur, folds))
}

fn last_fold(folds: &[CaseFold]) -> CaseFold {
    folds
        .iter()
        .rev()
        .find(|f| !matches!(f, CaseFold::None))
        .copied()
        .unwrap_or(CaseFold::None)
}

/// Maps a pseudocode token onto a card target column, tolerating case and
/// punctuation drift. Tokens that match nothing are kept verbatim so that
/// compilation can still resolve them against the full schema.
fn resolve_column(token: &str, card: &RuleCard) -> String {
    if card.target_columns.iter().any(|c| c == token) {
        return token.to_string();
    }
    let norm = normalize_name(token);
    card.target_columns
        .iter()
        .find(|c| normalize_name(c) == norm)
        .cloned()
        .unwrap_or_else(|| token.to_string())
}

pub(crate) fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_lowercase()
}
