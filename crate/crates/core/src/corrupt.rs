//! Seeded error injection with exact cell-level ground truth.
//!
//! Five error types model common data-entry faults: keyboard typos,
//! explicit and implicit missing values, same-column cell swaps, and
//! additive Gaussian noise on numeric cells. Each requested type corrupts
//! exactly `floor(rate * eligible_cells)` cells, sampled without
//! replacement and disjointly across types, so the returned mask is both
//! the per-type budget and the exact clean/dirty diff.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DqError, Result};
use crate::mask::{CellRef, GroundTruthMask};
use crate::table::{parse_float, Table};

/// Attempts to find a value-changing swap or placeholder before giving up.
const REDRAW_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    TypoKeyboard,
    MissingExplicit,
    MissingImplicit,
    CellSwap,
    GaussianNoise,
}

impl ErrorType {
    pub const ALL: [ErrorType; 5] = [
        ErrorType::TypoKeyboard,
        ErrorType::MissingExplicit,
        ErrorType::MissingImplicit,
        ErrorType::CellSwap,
        ErrorType::GaussianNoise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ErrorType::TypoKeyboard => "typo_keyboard",
            ErrorType::MissingExplicit => "missing_explicit",
            ErrorType::MissingImplicit => "missing_implicit",
            ErrorType::CellSwap => "cell_swap",
            ErrorType::GaussianNoise => "gaussian_noise",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ErrorType> {
        ErrorType::ALL.into_iter().find(|t| t.tag() == tag.trim())
    }
}

impl std::str::FromStr for ErrorType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ErrorType::from_tag(s).ok_or_else(|| format!("unknown error type `{s}`"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub error_types: Vec<ErrorType>,
    /// Fraction of eligible cells corrupted per type.
    pub rate: f64,
    pub seed: u64,
    /// When set, `rate` is a total budget split evenly across the
    /// requested types instead of applying to each independently.
    #[serde(default)]
    pub total_budget: bool,
    /// Gaussian noise scale, as a multiple of the column's standard deviation.
    #[serde(default = "default_multiplier")]
    pub gaussian_multiplier: f64,
    /// Values standing in for implicit missing data.
    #[serde(default = "default_placeholders")]
    pub placeholders: Vec<String>,
}

fn default_multiplier() -> f64 {
    1.0
}

fn default_placeholders() -> Vec<String> {
    vec!["N/A".to_string(), "-".to_string(), "99999".to_string()]
}

impl CorruptionSpec {
    pub fn new(error_types: Vec<ErrorType>, rate: f64, seed: u64) -> Self {
        CorruptionSpec {
            error_types,
            rate,
            seed,
            total_budget: false,
            gaussian_multiplier: default_multiplier(),
            placeholders: default_placeholders(),
        }
    }

    fn per_type_rate(&self) -> f64 {
        if self.total_budget && !self.error_types.is_empty() {
            self.rate / self.error_types.len() as f64
        } else {
            self.rate
        }
    }
}

/// Corrupts a copy of `clean` per the spec and returns it with the exact
/// ground-truth mask. The mask holds precisely the cells whose values
/// changed; each requested type contributes `floor(rate * eligible)` cells.
pub fn inject(clean: &Table, spec: &CorruptionSpec) -> Result<(Table, GroundTruthMask)> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(DqError::Precondition(format!("rate {} outside [0, 1]", spec.rate)));
    }
    let mut requested = Vec::new();
    for t in &spec.error_types {
        if !requested.contains(t) {
            requested.push(*t);
        }
    }

    let mut dirty = clean.clone();
    let mut mask = BTreeMap::new();
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let rate = spec.per_type_rate();

    for error_type in requested {
        let eligible = eligible_cells(clean, error_type);
        if eligible.is_empty() {
            return Err(DqError::Precondition(format!(
                "no eligible cells for {}",
                error_type.tag()
            )));
        }
        let target = (rate * eligible.len() as f64).floor() as usize;
        if target == 0 {
            log::warn!(
                "{}: rate {} yields no target cells ({} eligible), skipping",
                error_type.tag(),
                rate,
                eligible.len()
            );
            continue;
        }
        let pool: Vec<(usize, usize)> =
            eligible.into_iter().filter(|c| !used.contains(c)).collect();
        if pool.len() < target {
            return Err(DqError::Precondition(format!(
                "{} needs {} cells but only {} remain uncorrupted",
                error_type.tag(),
                target,
                pool.len()
            )));
        }

        let changed = match error_type {
            ErrorType::CellSwap => apply_swaps(clean, &mut dirty, &pool, target, &mut rng),
            _ => {
                let picked = sample_cells(&pool, target, &mut rng);
                apply_pointwise(clean, &mut dirty, error_type, &picked, spec, &mut rng)
            }
        };
        for cell in changed {
            used.insert(cell);
            mask.insert(
                CellRef::new(cell.0, clean.columns[cell.1].name.clone()),
                error_type,
            );
        }
    }

    Ok((dirty, GroundTruthMask { cells: mask }))
}

/// Cells whose values differ between two same-shaped tables.
pub fn diff_mask(clean: &Table, dirty: &Table) -> Result<BTreeSet<CellRef>> {
    if clean.row_count() != dirty.row_count()
        || clean.column_names() != dirty.column_names()
    {
        return Err(DqError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            clean.row_count(),
            clean.columns.len(),
            dirty.row_count(),
            dirty.columns.len()
        )));
    }
    let mut out = BTreeSet::new();
    for (r, (a, b)) in clean.rows.iter().zip(&dirty.rows).enumerate() {
        for (c, (x, y)) in a.iter().zip(b).enumerate() {
            if x != y {
                out.insert(CellRef::new(r, clean.columns[c].name.clone()));
            }
        }
    }
    Ok(out)
}

fn eligible_cells(table: &Table, error_type: ErrorType) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match error_type {
        ErrorType::GaussianNoise => {
            for (c, column) in table.columns.iter().enumerate() {
                if !column.ctype.is_numeric() || column_sd(table, c).unwrap_or(0.0) <= 0.0 {
                    continue;
                }
                for (r, row) in table.rows.iter().enumerate() {
                    if row[c].as_deref().and_then(parse_float).is_some() {
                        out.push((r, c));
                    }
                }
            }
        }
        ErrorType::CellSwap => {
            if table.row_count() < 2 {
                return out;
            }
            for c in 0..table.columns.len() {
                let cells: Vec<(usize, usize)> = table
                    .rows
                    .iter()
                    .enumerate()
                    .filter(|(_, row)| row[c].is_some())
                    .map(|(r, _)| (r, c))
                    .collect();
                if cells.len() >= 2 {
                    out.extend(cells);
                }
            }
            out.sort_unstable();
        }
        _ => {
            for (r, row) in table.rows.iter().enumerate() {
                for c in 0..table.columns.len() {
                    if row[c].is_some() {
                        out.push((r, c));
                    }
                }
            }
        }
    }
    out
}

fn column_sd(table: &Table, col: usize) -> Option<f64> {
    let values: Vec<f64> = table
        .rows
        .iter()
        .filter_map(|row| row[col].as_deref().and_then(parse_float))
        .collect();
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

fn sample_cells(
    pool: &[(usize, usize)],
    target: usize,
    rng: &mut StdRng,
) -> Vec<(usize, usize)> {
    let mut picked: Vec<(usize, usize)> = rand::seq::index::sample(rng, pool.len(), target)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn apply_pointwise(
    clean: &Table,
    dirty: &mut Table,
    error_type: ErrorType,
    cells: &[(usize, usize)],
    spec: &CorruptionSpec,
    rng: &mut StdRng,
) -> Vec<(usize, usize)> {
    let mut changed = Vec::new();
    for &(r, c) in cells {
        let original = clean.rows[r][c].clone().expect("eligible cells are non-null");
        let replacement = match error_type {
            ErrorType::TypoKeyboard => Some(keyboard_typo(&original, rng)),
            ErrorType::MissingExplicit => None,
            ErrorType::MissingImplicit => Some(pick_placeholder(
                &original,
                clean.columns[c].ctype.is_numeric(),
                &spec.placeholders,
                rng,
            )),
            ErrorType::GaussianNoise => {
                let sd = column_sd(clean, c).unwrap_or(0.0);
                Some(gaussian_shift(
                    &original,
                    sd * spec.gaussian_multiplier,
                    clean.columns[c].ctype == crate::table::ColumnType::Integer,
                    rng,
                ))
            }
            ErrorType::CellSwap => unreachable!("swaps handled separately"),
        };
        if replacement.as_deref() != Some(original.as_str()) {
            dirty.rows[r][c] = replacement;
            changed.push((r, c));
        } else {
            log::warn!(
                "{} left ({r}, {c}) unchanged after redraws, skipping cell",
                error_type.tag()
            );
        }
    }
    changed
}

/// Swaps values between sampled cells of the same column. Targets are
/// paired among themselves (with one three-cycle when the budget is odd)
/// so that exactly `target` cells change.
fn apply_swaps(
    clean: &Table,
    dirty: &mut Table,
    pool: &[(usize, usize)],
    target: usize,
    rng: &mut StdRng,
) -> Vec<(usize, usize)> {
    let mut available: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(r, c) in pool {
        available.entry(c).or_default().push(r);
    }

    let mut changed = Vec::new();
    let mut remaining = target;
    if remaining == 1 {
        log::warn!("cell_swap budget of 1 cannot be met by a swap, skipping");
        return changed;
    }
    while remaining >= 2 {
        // A three-cycle burns the odd cell; plain swaps handle the rest.
        let group = if remaining % 2 == 1 { 3 } else { 2 };
        let Some((col, rows)) = pick_swap_group(clean, &available, group, rng) else {
            log::warn!("cell_swap could not place {remaining} remaining cells, stopping");
            break;
        };
        if group == 2 {
            let a = dirty.rows[rows[0]][col].take();
            let b = dirty.rows[rows[1]][col].take();
            dirty.rows[rows[0]][col] = b;
            dirty.rows[rows[1]][col] = a;
        } else {
            let a = dirty.rows[rows[0]][col].take();
            let b = dirty.rows[rows[1]][col].take();
            let c = dirty.rows[rows[2]][col].take();
            dirty.rows[rows[0]][col] = c;
            dirty.rows[rows[1]][col] = a;
            dirty.rows[rows[2]][col] = b;
        }
        available.get_mut(&col).unwrap().retain(|r| !rows.contains(r));
        changed.extend(rows.iter().map(|&r| (r, col)));
        remaining -= group;
    }
    changed
}

/// Finds `group` rows in one column whose values are cyclically distinct,
/// so that swapping (or rotating) them changes every participating cell.
/// Tries random draws first, then falls back to an exhaustive scan.
fn pick_swap_group(
    clean: &Table,
    available: &BTreeMap<usize, Vec<usize>>,
    group: usize,
    rng: &mut StdRng,
) -> Option<(usize, Vec<usize>)> {
    let viable: Vec<usize> = available
        .iter()
        .filter(|(_, rows)| rows.len() >= group)
        .map(|(c, _)| *c)
        .collect();
    if viable.is_empty() {
        return None;
    }
    let distinct = |rows: &[usize], c: usize| {
        (0..rows.len()).all(|i| {
            clean.rows[rows[i]][c].as_deref()
                != clean.rows[rows[(i + 1) % rows.len()]][c].as_deref()
        })
    };

    for _ in 0..REDRAW_LIMIT {
        let col = viable[rng.gen_range(0..viable.len())];
        let rows = &available[&col];
        let picked: Vec<usize> = rand::seq::index::sample(rng, rows.len(), group)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        if distinct(&picked, col) {
            return Some((col, picked));
        }
    }
    for &col in &viable {
        let rows = &available[&col];
        match group {
            2 => {
                for i in 0..rows.len() {
                    for j in i + 1..rows.len() {
                        if distinct(&[rows[i], rows[j]], col) {
                            return Some((col, vec![rows[i], rows[j]]));
                        }
                    }
                }
            }
            _ => {
                for i in 0..rows.len() {
                    for j in i + 1..rows.len() {
                        for k in j + 1..rows.len() {
                            if distinct(&[rows[i], rows[j], rows[k]], col) {
                                return Some((col, vec![rows[i], rows[j], rows[k]]));
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

fn keyboard_typo(value: &str, rng: &mut StdRng) -> String {
    let chars: Vec<char> = value.chars().collect();
    let idx = rng.gen_range(0..chars.len());
    let replacement = adjacent_key(chars[idx], rng);
    chars
        .iter()
        .enumerate()
        .map(|(i, &c)| if i == idx { replacement } else { c })
        .collect()
}

/// QWERTY neighbors for letters and digits; anything else falls back to a
/// random letter. Never returns the input character.
fn adjacent_key(c: char, rng: &mut StdRng) -> char {
    const MAP: &[(char, &str)] = &[
        ('q', "wa12"),
        ('w', "qase23"),
        ('e', "wsdr34"),
        ('r', "edft45"),
        ('t', "rfgy56"),
        ('y', "tghu67"),
        ('u', "yhji78"),
        ('i', "ujko89"),
        ('o', "iklp90"),
        ('p', "ol0"),
        ('a', "qwsz"),
        ('s', "awedxz"),
        ('d', "serfcx"),
        ('f', "drtgvc"),
        ('g', "ftyhbv"),
        ('h', "gyujnb"),
        ('j', "huikmn"),
        ('k', "jiolm"),
        ('l', "kop"),
        ('z', "asx"),
        ('x', "zsdc"),
        ('c', "xdfv"),
        ('v', "cfgb"),
        ('b', "vghn"),
        ('n', "bhjm"),
        ('m', "njk"),
        ('0', "9op"),
        ('1', "2q"),
        ('2', "13qw"),
        ('3', "24we"),
        ('4', "35er"),
        ('5', "46rt"),
        ('6', "57ty"),
        ('7', "68yu"),
        ('8', "79ui"),
        ('9', "80io"),
    ];
    let lower = c.to_ascii_lowercase();
    if let Some((_, neighbors)) = MAP.iter().find(|(k, _)| *k == lower) {
        let bytes = neighbors.as_bytes();
        let pick = bytes[rng.gen_range(0..bytes.len())] as char;
        if c.is_ascii_uppercase() {
            pick.to_ascii_uppercase()
        } else {
            pick
        }
    } else {
        loop {
            let pick = (b'a' + rng.gen_range(0..26u8)) as char;
            if pick != c {
                return pick;
            }
        }
    }
}

fn pick_placeholder(
    original: &str,
    numeric: bool,
    placeholders: &[String],
    rng: &mut StdRng,
) -> String {
    let candidates: Vec<&String> = if numeric {
        placeholders.iter().filter(|p| parse_float(p).is_some()).collect()
    } else {
        placeholders.iter().filter(|p| parse_float(p).is_none()).collect()
    };
    let candidates: Vec<&String> =
        candidates.into_iter().filter(|p| p.as_str() != original).collect();
    match candidates.as_slice() {
        [] => {
            // Fall back to any placeholder different from the original.
            placeholders
                .iter()
                .find(|p| p.as_str() != original)
                .cloned()
                .unwrap_or_else(|| "99999".to_string())
        }
        picks => picks[rng.gen_range(0..picks.len())].clone(),
    }
}

fn gaussian_shift(original: &str, scale: f64, integer: bool, rng: &mut StdRng) -> String {
    let value = parse_float(original).expect("eligible gaussian cells parse as numbers");
    for attempt in 0..=REDRAW_LIMIT {
        let noise: f64 = {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        };
        let shifted = value + noise;
        let rendered = if integer {
            format!("{}", shifted.round() as i64)
        } else {
            format!("{shifted}")
        };
        if rendered != original {
            return rendered;
        }
        if attempt == REDRAW_LIMIT {
            break;
        }
    }
    // Rounding kept swallowing the noise; step one whole unit instead.
    let step = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * scale.abs().ceil().max(1.0);
    if integer {
        format!("{}", (value + step).round() as i64)
    } else {
        format!("{}", value + step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> Option<String> {
        Some(v.to_string())
    }

    fn sample_table(rows: usize) -> Table {
        let data: Vec<Vec<Option<String>>> = (0..rows)
            .map(|i| {
                vec![
                    s(&format!("{}", i + 1)),
                    s(&format!("name {i}")),
                    s(&format!("{}", 10.0 + i as f64 * 0.25)),
                ]
            })
            .collect();
        Table::from_rows("t", &["id", "label", "score"], data).unwrap()
    }

    #[test]
    fn per_type_counts_match_floor_of_rate_times_eligible() {
        let table = sample_table(40);
        for error_type in ErrorType::ALL {
            let spec = CorruptionSpec::new(vec![error_type], 0.2, 11);
            let (dirty, mask) = inject(&table, &spec).unwrap();
            let eligible = eligible_cells(&table, error_type).len();
            let expected = (0.2 * eligible as f64).floor() as usize;
            assert_eq!(
                mask.count_for(error_type),
                expected,
                "type {}",
                error_type.tag()
            );
            assert_eq!(mask.cell_set(), diff_mask(&table, &dirty).unwrap());
        }
    }

    #[test]
    fn mask_is_exactly_the_diff_with_all_types() {
        let table = sample_table(60);
        let spec = CorruptionSpec::new(ErrorType::ALL.to_vec(), 0.1, 7);
        let (dirty, mask) = inject(&table, &spec).unwrap();
        assert_eq!(mask.cell_set(), diff_mask(&table, &dirty).unwrap());
        let total: usize = ErrorType::ALL.iter().map(|t| mask.count_for(*t)).sum();
        assert_eq!(total, mask.len());
    }

    #[test]
    fn injection_is_deterministic_per_seed() {
        let table = sample_table(30);
        let spec = CorruptionSpec::new(vec![ErrorType::TypoKeyboard], 0.3, 99);
        let (d1, m1) = inject(&table, &spec).unwrap();
        let (d2, m2) = inject(&table, &spec).unwrap();
        assert_eq!(d1.rows, d2.rows);
        assert_eq!(m1, m2);
        let other = CorruptionSpec::new(vec![ErrorType::TypoKeyboard], 0.3, 100);
        let (_, m3) = inject(&table, &other).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn zero_target_skips_with_clean_output() {
        let table = sample_table(5);
        let spec = CorruptionSpec::new(vec![ErrorType::MissingExplicit], 0.01, 3);
        let (dirty, mask) = inject(&table, &spec).unwrap();
        assert!(mask.is_empty());
        assert_eq!(dirty.rows, table.rows);
    }

    #[test]
    fn gaussian_requires_numeric_cells() {
        let table =
            Table::from_rows("t", &["w"], vec![vec![s("ab")], vec![s("cd")]]).unwrap();
        let spec = CorruptionSpec::new(vec![ErrorType::GaussianNoise], 0.5, 3);
        assert!(matches!(inject(&table, &spec), Err(DqError::Precondition(_))));
    }

    #[test]
    fn gaussian_keeps_integer_columns_integer() {
        let table = sample_table(50);
        let spec = CorruptionSpec::new(vec![ErrorType::GaussianNoise], 0.4, 5);
        let (dirty, mask) = inject(&table, &spec).unwrap();
        let id = dirty.column_index("id").unwrap();
        for cell in mask.cells.keys() {
            if cell.column == "id" {
                let v = dirty.rows[cell.row][id].as_deref().unwrap();
                assert!(v.parse::<i64>().is_ok(), "not an integer: {v}");
            }
        }
    }

    #[test]
    fn typo_changes_exactly_one_character() {
        let table = sample_table(30);
        let spec = CorruptionSpec::new(vec![ErrorType::TypoKeyboard], 0.5, 21);
        let (dirty, mask) = inject(&table, &spec).unwrap();
        for cell in mask.cells.keys() {
            let c = table.column_index(&cell.column).unwrap();
            let before: Vec<char> =
                table.rows[cell.row][c].as_deref().unwrap().chars().collect();
            let after: Vec<char> =
                dirty.rows[cell.row][c].as_deref().unwrap().chars().collect();
            assert_eq!(before.len(), after.len());
            let delta =
                before.iter().zip(&after).filter(|(a, b)| a != b).count();
            assert_eq!(delta, 1);
        }
    }

    #[test]
    fn implicit_placeholders_differ_from_originals_and_match_type() {
        let table = sample_table(40);
        let spec = CorruptionSpec::new(vec![ErrorType::MissingImplicit], 0.3, 2);
        let (dirty, mask) = inject(&table, &spec).unwrap();
        for cell in mask.cells.keys() {
            let c = table.column_index(&cell.column).unwrap();
            let v = dirty.rows[cell.row][c].as_deref().unwrap();
            assert!(["N/A", "-", "99999"].contains(&v));
            if table.columns[c].ctype.is_numeric() {
                assert_eq!(v, "99999");
            }
            assert_ne!(Some(v), table.rows[cell.row][c].as_deref());
        }
    }

    #[test]
    fn swaps_stay_within_columns_and_mark_all_changed_cells() {
        let table = sample_table(40);
        let spec = CorruptionSpec::new(vec![ErrorType::CellSwap], 0.25, 13);
        let (dirty, mask) = inject(&table, &spec).unwrap();
        let eligible = eligible_cells(&table, ErrorType::CellSwap).len();
        assert_eq!(mask.len(), (0.25 * eligible as f64).floor() as usize);
        assert_eq!(mask.cell_set(), diff_mask(&table, &dirty).unwrap());
        // Every dirty value must still exist somewhere in its clean column.
        for cell in mask.cells.keys() {
            let c = table.column_index(&cell.column).unwrap();
            let v = dirty.rows[cell.row][c].as_deref().unwrap();
            assert!(table.column_values(c).contains(&v));
        }
    }

    #[test]
    fn overlapping_budgets_that_exceed_supply_error() {
        let table = sample_table(10);
        let mut spec = CorruptionSpec::new(
            vec![ErrorType::MissingExplicit, ErrorType::MissingImplicit],
            0.7,
            1,
        );
        assert!(inject(&table, &spec).is_err());
        spec.total_budget = true;
        assert!(inject(&table, &spec).is_ok());
    }
}
