//! `dqkit` command line: runs the data-quality pipeline end to end or one
//! stage at a time. Stages write artifacts with stable names under the
//! output directory, and any stage whose inputs are missing computes them
//! first, so the subcommands compose in any order.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dqkit::pipeline::{
    run_e2e, stage_assess, stage_compile_rules, stage_corrupt, stage_gen_rules, stage_guard,
    stage_profile, stage_screen, stage_score, ScoreStage,
};
use dqkit::table::{load_table, LoadOptions};
use dqkit::{DqError, PipelineConfig, Result};

#[derive(Parser)]
#[command(
    name = "dqkit",
    about = "Data-quality pipeline: screen, draft rules, compile validators, assess",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// CSV dataset to work on.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Gateway mode: live, replay, or stub.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Master seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Corruption rate for `corrupt` and `e2e`.
    #[arg(long, global = true)]
    noise: Option<f64>,

    /// Comma-separated rule types to run (default: all).
    #[arg(long, global = true, value_delimiter = ',')]
    rule_types: Option<Vec<String>>,

    /// Feed all rows to rule generation instead of screened inliers.
    #[arg(long, global = true)]
    no_inlier_filter: bool,

    /// Skip retrieved few-shot examples in prompts.
    #[arg(long, global = true)]
    no_domain_fewshot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Profile columns and render the schema description.
    Profile,
    /// Screen cells statistically and partition rows into inliers/outliers.
    Screen,
    /// Generate and enrich rule cards.
    GenRules,
    /// Run conflict detection and the rubric audit over enriched cards.
    Guard,
    /// Compile final cards into validators (DSL first, code generation fallback).
    CompileRules,
    /// Run all validators and write the error mask and quality report.
    Assess,
    /// Inject synthetic errors, writing the dirty CSV and truth mask.
    Corrupt,
    /// Score the predicted mask against the truth mask.
    Score,
    /// Corrupt, run the full pipeline on the dirty copy, and score it.
    E2e,
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dataset) = &cli.dataset {
        cfg.dataset = Some(dataset.clone());
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(mode) = &cli.mode {
        cfg.gateway.mode = mode.parse().map_err(DqError::Config)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(noise) = cli.noise {
        cfg.corruption.rate = noise;
    }
    if let Some(types) = &cli.rule_types {
        cfg.rule_types = types.clone();
    }
    if cli.no_inlier_filter {
        cfg.inlier_filter = false;
    }
    if cli.no_domain_fewshot {
        cfg.domain_fewshot = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_score(score: &ScoreStage) {
    println!(
        "dataset {} at noise {:.2}: precision {:.4} recall {:.4} f1 {:.4}",
        score.dataset,
        score.noise_level,
        score.eval.precision,
        score.eval.recall,
        score.eval.f1
    );
    if let Some(cov) = &score.coverage {
        println!(
            "coverage {:.4} ({} of {} columns)",
            cov.score,
            cov.covered.len(),
            cov.covered.len() + cov.uncovered.len()
        );
    }
    if let Some(conf) = &score.confidence {
        println!("confidence {:.1}", conf.overall);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    match cli.command {
        Command::Profile => {
            let gateway = cfg.build_gateway()?;
            let stage = stage_profile(&cfg, Some(&gateway))?;
            println!(
                "profiled {} columns of {}; schema and profiles in {}",
                stage.profiles.len(),
                stage.table.name,
                cfg.out_dir.display()
            );
        }
        Command::Screen => {
            let gateway = cfg.build_gateway()?;
            let table = load_table(cfg.dataset_path()?, &LoadOptions::default())?;
            let stage = stage_screen(&cfg, &table, Some(&gateway))?;
            println!(
                "flagged {} of {} rows as outliers (tau {})",
                stage.partition.outliers.len(),
                table.row_count(),
                cfg.tau
            );
        }
        Command::GenRules => {
            let gateway = cfg.build_gateway()?;
            let stage = stage_gen_rules(&cfg, &gateway)?;
            println!(
                "kept {} enriched rules ({} diagnostics)",
                stage.cards.len(),
                stage.diagnostics.len()
            );
        }
        Command::Guard => {
            let gateway = cfg.build_gateway()?;
            let stage = stage_guard(&cfg, &gateway)?;
            println!(
                "final rule set: {} cards ({} conflict pairs, {} rubric verdicts)",
                stage.cards.len(),
                stage.conflict_report.conflicts.len(),
                stage.verdicts.len()
            );
        }
        Command::CompileRules => {
            let gateway = cfg.build_gateway()?;
            let stage = stage_compile_rules(&cfg, &gateway)?;
            let compiled = stage
                .records
                .iter()
                .filter(|r| r.origin == "compiled-dsl")
                .count();
            let external = stage
                .records
                .iter()
                .filter(|r| r.origin == "external-script")
                .count();
            let failed = stage.records.len() - compiled - external;
            println!(
                "validators: {compiled} compiled, {external} external scripts, {failed} failed"
            );
        }
        Command::Assess => {
            let gateway = cfg.build_gateway()?;
            let stage = stage_assess(&cfg, &gateway)?;
            println!(
                "flagged {} cells across {} findings; report in {}",
                stage.report.flagged_cell_count,
                stage.report.findings.len(),
                cfg.out_dir.display()
            );
            for line in &stage.diagnostics {
                eprintln!("warning: {line}");
            }
        }
        Command::Corrupt => {
            let stage = stage_corrupt(&cfg)?;
            println!(
                "injected {} cells at rate {:.2}; wrote {} and {}",
                stage.truth.len(),
                cfg.corruption.rate,
                stage.dirty_path.display(),
                stage.truth_path.display()
            );
        }
        Command::Score => {
            let stage = stage_score(&cfg)?;
            print_score(&stage);
        }
        Command::E2e => {
            let gateway = cfg.build_gateway()?;
            let outcome = run_e2e(&cfg, &gateway)?;
            println!(
                "{} final rules, {} validator failures, {} cells flagged of {} injected",
                outcome.final_rule_count,
                outcome.validator_failures,
                outcome.flagged_cells,
                outcome.injected_cells
            );
            print_score(&outcome.score);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
