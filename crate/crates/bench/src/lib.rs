//! Synthetic data builders shared by the benchmarks.

use dqkit::{CellRef, Table};

/// A plausible mixed-type table: id, three numeric measures, two
/// categorical columns, and a short free-text column.
pub fn synthetic_table(rows: usize, seed: u64) -> Table {
    let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let categories = ["red", "green", "blue", "amber"];
    let states = ["TX", "CA", "NY", "WA", "OR", "CO"];

    let mut table_rows = Vec::with_capacity(rows);
    for i in 0..rows {
        let a = (next() % 1000) as f64 / 10.0;
        let b = (next() % 500) as f64 / 7.0;
        let c = (next() % 90) as i64 + 10;
        table_rows.push(vec![
            Some((i + 1).to_string()),
            Some(format!("{a:.1}")),
            Some(format!("{b:.2}")),
            Some(c.to_string()),
            Some(categories[(next() % 4) as usize].to_string()),
            Some(states[(next() % 6) as usize].to_string()),
            Some(format!("unit-{}", next() % 50)),
        ]);
    }
    Table::from_rows(
        "synthetic",
        &["id", "measure_a", "measure_b", "count", "color", "state", "unit"],
        table_rows,
    )
    .expect("synthetic rows are rectangular")
}

/// Two overlapping cell sets over an `n`-row, 7-column grid.
pub fn mask_pair(n: usize) -> (Vec<CellRef>, Vec<CellRef>) {
    let columns = ["id", "measure_a", "measure_b", "count", "color", "state", "unit"];
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for row in 0..n {
        let column = columns[row % columns.len()];
        if row % 3 != 0 {
            predicted.push(CellRef::new(row, column));
        }
        if row % 2 == 0 {
            truth.push(CellRef::new(row, column));
        }
    }
    (predicted, truth)
}
