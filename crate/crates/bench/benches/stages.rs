use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dqkit::corrupt::inject;
use dqkit::eval::score_cell_sets;
use dqkit::screen::{detect_cell_outliers, screen_rows};
use dqkit::table::profile_table;
use dqkit::validator::{compile_spec, run_validator, CaseFold, Clause};
use dqkit::{CorruptionSpec, DetectorConfig, ErrorType, ValidatorSpec};

use dqkit_bench::{mask_pair, synthetic_table};

fn bench_profiling(c: &mut Criterion) {
    let mut group = c.benchmark_group("profiling");
    for rows in [200usize, 1000] {
        let table = synthetic_table(rows, 11);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &table, |b, table| {
            b.iter(|| profile_table(table).unwrap());
        });
    }
    group.finish();
}

fn bench_screening(c: &mut Criterion) {
    let mut group = c.benchmark_group("screening");
    let config = DetectorConfig::default();
    for rows in [200usize, 1000] {
        let table = synthetic_table(rows, 11);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &table, |b, table| {
            b.iter(|| {
                let flags = detect_cell_outliers(table, &config, None).unwrap();
                screen_rows(&flags, 2)
            });
        });
    }
    group.finish();
}

fn bench_injection(c: &mut Criterion) {
    let mut group = c.benchmark_group("injection");
    let spec = CorruptionSpec::new(ErrorType::ALL.to_vec(), 0.1, 9);
    for rows in [200usize, 1000] {
        let table = synthetic_table(rows, 11);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &table, |b, table| {
            b.iter(|| inject(table, &spec).unwrap());
        });
    }
    group.finish();
}

fn bench_scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("scoring");
    for cells in [1000usize, 10_000] {
        let (predicted, truth) = mask_pair(cells);
        let predicted: BTreeSet<_> = predicted.into_iter().collect();
        let truth: BTreeSet<_> = truth.into_iter().collect();
        group.bench_with_input(
            BenchmarkId::from_parameter(cells),
            &(predicted, truth),
            |b, (predicted, truth)| {
                b.iter(|| score_cell_sets(predicted, truth));
            },
        );
    }
    group.finish();
}

fn bench_validators(c: &mut Criterion) {
    let mut group = c.benchmark_group("validators");
    let spec = ValidatorSpec {
        target_columns: vec!["measure_a".to_string(), "state".to_string()],
        clauses: vec![
            Clause::NotNull {
                column: "measure_a".to_string(),
            },
            Clause::Range {
                column: "measure_a".to_string(),
                lower: Some(0.0),
                upper: Some(100.0),
                lower_open: false,
                upper_open: false,
            },
            Clause::Regex {
                column: "state".to_string(),
                pattern: "[A-Z]{2}$".to_string(),
            },
            Clause::ValueSet {
                column: "color".to_string(),
                allowed: ["red", "green", "blue", "amber"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                fold: CaseFold::Lower,
            },
            Clause::Unique {
                column: "id".to_string(),
            },
        ],
    };
    for rows in [200usize, 1000] {
        let table = synthetic_table(rows, 11);
        let compiled = compile_spec(&spec, &table.column_names(), None).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(rows),
            &(compiled, table),
            |b, (compiled, table)| {
                b.iter(|| run_validator("bench rule", compiled, table).unwrap());
            },
        );
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_profiling,
    bench_screening,
    bench_injection,
    bench_scoring,
    bench_validators
);
criterion_main!(benches);
