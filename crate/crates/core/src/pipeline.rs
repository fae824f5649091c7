//! Stage orchestration. Each stage reads what it needs, writes artifacts
//! under the output directory with stable names, and returns its product,
//! so the command line can run the whole flow or any slice of it. A stage
//! whose inputs are missing computes them first; artifacts already on disk
//! are reused, which is what makes runs resumable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corrupt::inject;
use crate::embed::{Embedder, HashingEmbedder};
use crate::error::{DqError, Result};
use crate::eval::{
    append_results_csv, confidence, coverage, render_report, score_masks, ConfidenceEntry,
    ConfidenceReport, CoverageReport, EvalResult, QualityReport, ValidatorProvenance,
};
use crate::gateway::{ChatGateway, GatewayMode};
use crate::guardrails::{
    apply_conflict_removals, detect_conflicts, filter_keep_set, rubric_evaluate, ConflictReport,
    RubricVerdict,
};
use crate::mask::{
    aggregate_masks, read_error_mask_csv, write_error_mask_csv, ErrorMask, GroundTruthMask,
};
use crate::rules::{
    build_gloss_prompt, dedup_cards, enrich_rules, generate_rules, select_code_snippets,
    select_domain_examples, DomainExampleRepo, RuleCard,
};
use crate::screen::{
    contrast_samples, detect_cell_outliers, screen_rows, CellFlagMatrix, Partition,
};
use crate::table::{
    load_table, profile_table, render_schema, sample_rows, ColumnProfile, GlossSource,
    LoadOptions, SchemaDescription, Table,
};
use crate::validator::{
    build_validator, compile_spec, BuildOutcome, ExternalScript, Validator, ValidatorEngine,
    ValidatorSpec,
};

/// Rows of table context shown in guardrail and code prompts.
const PROMPT_SAMPLE_ROWS: usize = 10;

// ------------------------------------------------------------ artifacts

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| DqError::io(path.display().to_string(), e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| DqError::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| DqError::io(cfg.out_dir.display().to_string(), e))
}

fn artifact(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

// ------------------------------------------------------------ glosses

/// Asks the chat model for one-line column glosses. Any failure (including
/// a replay miss or an unrouted stub) falls back to templated glosses
/// inside `render_schema`, so schema rendering never hard-fails on this.
struct LlmGlossSource<'a> {
    gateway: &'a ChatGateway,
    model: String,
    temperature: f64,
    seed: u64,
}

impl GlossSource for LlmGlossSource<'_> {
    fn glosses(
        &self,
        table: &Table,
        profiles: &[ColumnProfile],
    ) -> Result<BTreeMap<String, String>> {
        let rows = sample_rows(table, PROMPT_SAMPLE_ROWS, self.seed);
        let request = build_gloss_prompt(
            &table.name,
            profiles,
            &table.csv_block(&rows),
            &self.model,
            self.temperature,
        );
        let (value, _) = self.gateway.chat_json(&request)?;
        let map: BTreeMap<String, String> = serde_json::from_value(value)?;
        Ok(map)
    }
}

// ------------------------------------------------------------ stages

pub struct ProfileStage {
    pub table: Table,
    pub profiles: Vec<ColumnProfile>,
    pub schema: SchemaDescription,
}

/// Loads the dataset, profiles every column, and renders the schema
/// description used by all later prompts.
pub fn stage_profile(cfg: &PipelineConfig, gateway: Option<&ChatGateway>) -> Result<ProfileStage> {
    ensure_out_dir(cfg)?;
    let table = load_table(cfg.dataset_path()?, &LoadOptions::default())?;
    let profiles = profile_table(&table)?;
    let gloss_source = gateway.map(|g| LlmGlossSource {
        gateway: g,
        model: cfg.gateway.rule_model.clone(),
        temperature: 0.0,
        seed: cfg.seed,
    });
    let schema = render_schema(
        &table,
        gloss_source.as_ref().map(|s| s as &dyn GlossSource),
    )?;
    write_json(&artifact(cfg, "profiles.json"), &profiles)?;
    fs::write(artifact(cfg, "schema.txt"), &schema.text)
        .map_err(|e| DqError::io("schema.txt", e))?;
    Ok(ProfileStage {
        table,
        profiles,
        schema,
    })
}

pub struct ScreenStage {
    pub flags: CellFlagMatrix,
    pub partition: Partition,
}

/// Statistical cell screening and the row partition the later stages use.
/// With the inlier filter disabled, the flag matrix is still computed and
/// written but every row is kept as an inlier.
pub fn stage_screen(
    cfg: &PipelineConfig,
    table: &Table,
    gateway: Option<&ChatGateway>,
) -> Result<ScreenStage> {
    ensure_out_dir(cfg)?;
    let embedder: Option<&dyn Embedder> = match gateway {
        Some(g) if cfg.gateway.mode == GatewayMode::Live => Some(g),
        _ => None,
    };
    let flags = detect_cell_outliers(table, &cfg.detector, embedder)?;
    let partition = if cfg.inlier_filter {
        screen_rows(&flags, cfg.tau)
    } else {
        Partition::all_inliers(table.row_count())
    };
    write_json(&artifact(cfg, "cell_flags.json"), &flags)?;
    write_json(&artifact(cfg, "partition.json"), &partition)?;
    Ok(ScreenStage { flags, partition })
}

fn load_partition(cfg: &PipelineConfig, table: &Table) -> Result<Partition> {
    let path = artifact(cfg, "partition.json");
    if path.is_file() {
        return read_json(&path);
    }
    Ok(stage_screen(cfg, table, None)?.partition)
}

/// Copies the named rows into a standalone table.
fn project_rows(table: &Table, rows: &[usize]) -> Table {
    let names = table.column_names();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let picked: Vec<Vec<Option<String>>> = rows
        .iter()
        .filter_map(|&r| table.rows.get(r).cloned())
        .collect();
    Table::from_rows(&table.name, &name_refs, picked)
        .expect("projection keeps the original column set")
}

pub struct GenStage {
    pub cards: Vec<RuleCard>,
    pub diagnostics: Vec<String>,
}

/// Rule generation plus enrichment: drafts come from the inlier rows only,
/// the enrichment review sees clean/noise contrast samples drawn with the
/// full table's row partition.
pub fn stage_gen_rules(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<GenStage> {
    let profile = stage_profile(cfg, Some(gateway))?;
    let table = &profile.table;
    let partition = load_partition(cfg, table)?;
    let inlier_table = project_rows(table, &partition.inliers);
    if inlier_table.row_count() == 0 {
        return Err(DqError::Precondition(
            "screening left no inlier rows to generate rules from".into(),
        ));
    }

    let hashing = HashingEmbedder::default();
    let embedder: &dyn Embedder = if cfg.gateway.mode == GatewayMode::Live {
        gateway
    } else {
        &hashing
    };
    let repo = match (&cfg.example_repo_dir, cfg.domain_fewshot) {
        (Some(dir), true) => Some(DomainExampleRepo::load(dir)?),
        _ => None,
    };

    let gloss_source = LlmGlossSource {
        gateway,
        model: cfg.gateway.rule_model.clone(),
        temperature: 0.0,
        seed: cfg.seed,
    };
    let gen_opts = cfg.gen_options();
    let mut drafts = Vec::new();
    let mut prompts = Vec::new();
    let mut diagnostics = Vec::new();
    for rule_type in cfg.enabled_rule_types()? {
        let examples = match &repo {
            Some(repo) if !repo.is_empty() => select_domain_examples(
                &profile.schema.text,
                repo,
                rule_type,
                cfg.fewshot_k,
                embedder,
            )?,
            _ => Vec::new(),
        };
        let outcome = generate_rules(
            gateway,
            &inlier_table,
            rule_type,
            &examples,
            Some(&gloss_source as &dyn GlossSource),
            &gen_opts,
        )?;
        drafts.extend(outcome.cards);
        prompts.extend(outcome.prompts);
        diagnostics.extend(outcome.diagnostics);
    }
    let drafts = dedup_cards(drafts);
    write_json(&artifact(cfg, "draft_cards.json"), &drafts)?;
    write_json(&artifact(cfg, "generation_prompts.json"), &prompts)?;

    let mut contrast = BTreeMap::new();
    for name in table.column_names() {
        contrast.insert(
            name.clone(),
            contrast_samples(table, &partition, &name, cfg.contrast_k, cfg.seed)?,
        );
    }
    // Profile the inlier view: the review describes the clean distribution,
    // so screened-out noise must not inflate its distinct counts or moments.
    let inlier_profiles = profile_table(&inlier_table)?;
    let enriched = enrich_rules(
        gateway,
        &inlier_table,
        &inlier_profiles,
        &contrast,
        drafts,
        &cfg.enrich_options(),
    )?;
    diagnostics.extend(
        enriched
            .dropped
            .iter()
            .map(|d| format!("enrichment dropped `{}`: {}", d.card.rule_name, d.reason)),
    );
    write_json(&artifact(cfg, "enriched_cards.json"), &enriched.kept)?;
    write_json(&artifact(cfg, "enrichment_dropped.json"), &enriched.dropped)?;
    write_json(&artifact(cfg, "enrichment_prompts.json"), &enriched.prompts)?;
    write_json(
        &artifact(cfg, "confidence_entries.json"),
        &enriched.confidence,
    )?;
    write_json(&artifact(cfg, "generation_diagnostics.json"), &diagnostics)?;
    Ok(GenStage {
        cards: enriched.kept,
        diagnostics,
    })
}

fn load_enriched_cards(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<Vec<RuleCard>> {
    let path = artifact(cfg, "enriched_cards.json");
    if path.is_file() {
        return read_json(&path);
    }
    Ok(stage_gen_rules(cfg, gateway)?.cards)
}

pub struct GuardStage {
    pub cards: Vec<RuleCard>,
    pub conflict_report: ConflictReport,
    pub verdicts: Vec<RubricVerdict>,
    pub diagnostics: Vec<String>,
}

/// Conflict detection then the rubric audit, producing the final rule set.
pub fn stage_guard(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<GuardStage> {
    let cards = load_enriched_cards(cfg, gateway)?;
    let profile = stage_profile(cfg, Some(gateway))?;
    let sample = profile
        .table
        .csv_block(&sample_rows(&profile.table, PROMPT_SAMPLE_ROWS, cfg.seed));

    let conflicts = detect_conflicts(gateway, &cards, &cfg.gateway.rule_model, 0.0);
    write_json(&artifact(cfg, "conflict_report.json"), &conflicts.report)?;
    let survivors = apply_conflict_removals(cards, &conflicts.report);

    let rubric = rubric_evaluate(
        gateway,
        &survivors,
        &profile.schema.text,
        &sample,
        &cfg.gateway.rule_model,
        0.0,
    );
    write_json(&artifact(cfg, "rubric_verdicts.json"), &rubric.verdicts)?;
    let (kept, rejected) = filter_keep_set(survivors, &rubric.verdicts);
    write_json(&artifact(cfg, "rubric_rejected.json"), &rejected)?;
    write_json(&artifact(cfg, "final_cards.json"), &kept)?;

    let mut prompts = conflicts.prompts;
    prompts.extend(rubric.prompt.clone());
    write_json(&artifact(cfg, "guard_prompts.json"), &prompts)?;
    let mut diagnostics = conflicts.diagnostics;
    diagnostics.extend(rubric.diagnostics);
    write_json(&artifact(cfg, "guard_diagnostics.json"), &diagnostics)?;
    Ok(GuardStage {
        cards: kept,
        conflict_report: conflicts.report,
        verdicts: rubric.verdicts,
        diagnostics,
    })
}

fn load_final_cards(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<Vec<RuleCard>> {
    let path = artifact(cfg, "final_cards.json");
    if path.is_file() {
        return read_json(&path);
    }
    Ok(stage_guard(cfg, gateway)?.cards)
}

/// One compiled (or failed) rule, serialized so assessment can rebuild the
/// validator without another model call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatorRecord {
    pub rule_name: String,
    /// "compiled-dsl", "external-script", or "failed".
    pub origin: String,
    pub card: RuleCard,
    pub spec: Option<ValidatorSpec>,
    pub script: Option<ExternalScript>,
    pub diagnostic: Option<String>,
}

pub struct CompileStage {
    pub records: Vec<ValidatorRecord>,
}

/// Compiles every final card: pseudocode that fits the clause grammar
/// becomes a compiled validator, the rest go through code generation with
/// the repair loop. Failures are recorded, never dropped silently.
pub fn stage_compile_rules(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<CompileStage> {
    let cards = load_final_cards(cfg, gateway)?;
    let profile = stage_profile(cfg, Some(gateway))?;
    let table = &profile.table;
    let sample = table.csv_block(&sample_rows(table, PROMPT_SAMPLE_ROWS, cfg.seed));
    let sandbox = cfg.sandbox_config();
    let opts = cfg.codegen_options();

    let hashing = HashingEmbedder::default();
    let embedder: &dyn Embedder = if cfg.gateway.mode == GatewayMode::Live {
        gateway
    } else {
        &hashing
    };
    let repo = match (&cfg.example_repo_dir, cfg.domain_fewshot) {
        (Some(dir), true) => Some(DomainExampleRepo::load(dir)?),
        _ => None,
    };

    let mut records = Vec::new();
    let mut prompts = Vec::new();
    for card in cards {
        let snippets = match &repo {
            Some(repo) if !repo.is_empty() => select_code_snippets(
                &profile.schema.text,
                repo,
                card.rule_type,
                cfg.fewshot_k,
                embedder,
            )?,
            _ => Vec::new(),
        };
        let outcome = build_validator(
            gateway,
            &card,
            table,
            &profile.schema.text,
            &profile.profiles,
            &sample,
            &snippets,
            &sandbox,
            &opts,
        );
        let record = match outcome {
            BuildOutcome::Built {
                validator,
                prompts: used,
            } => {
                prompts.extend(used);
                let (spec, script) = match &validator.engine {
                    ValidatorEngine::Compiled(compiled) => (Some(compiled.spec.clone()), None),
                    ValidatorEngine::External(script) => (None, Some(script.clone())),
                };
                ValidatorRecord {
                    rule_name: validator.card.rule_name.clone(),
                    origin: validator.origin().to_string(),
                    card: validator.card,
                    spec,
                    script,
                    diagnostic: None,
                }
            }
            BuildOutcome::Failed {
                card,
                diagnostic,
                prompts: used,
            } => {
                prompts.extend(used);
                ValidatorRecord {
                    rule_name: card.rule_name.clone(),
                    origin: "failed".to_string(),
                    card,
                    spec: None,
                    script: None,
                    diagnostic: Some(diagnostic),
                }
            }
        };
        records.push(record);
    }
    write_json(&artifact(cfg, "validators.json"), &records)?;
    write_json(&artifact(cfg, "codegen_prompts.json"), &prompts)?;
    Ok(CompileStage { records })
}

fn load_validator_records(
    cfg: &PipelineConfig,
    gateway: &ChatGateway,
) -> Result<Vec<ValidatorRecord>> {
    let path = artifact(cfg, "validators.json");
    if path.is_file() {
        return read_json(&path);
    }
    Ok(stage_compile_rules(cfg, gateway)?.records)
}

/// Rebuilds a runnable validator from its serialized record.
fn revive(record: &ValidatorRecord, table: &Table, cfg: &PipelineConfig) -> Result<Validator> {
    let engine = match (&record.spec, &record.script) {
        (Some(spec), _) => ValidatorEngine::Compiled(compile_spec(
            spec,
            &table.column_names(),
            cfg.ref_dir.as_deref(),
        )?),
        (None, Some(script)) => ValidatorEngine::External(script.clone()),
        (None, None) => {
            return Err(DqError::Precondition(format!(
                "validator `{}` has no engine",
                record.rule_name
            )))
        }
    };
    Ok(Validator {
        card: record.card.clone(),
        engine,
    })
}

pub struct AssessStage {
    pub mask: ErrorMask,
    pub report: QualityReport,
    pub diagnostics: Vec<String>,
}

/// Runs every compiled validator over the full table and aggregates the
/// flagged cells. A validator that errors at runtime is reported and
/// skipped; the rest still contribute.
pub fn stage_assess(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<AssessStage> {
    let records = load_validator_records(cfg, gateway)?;
    let profile = stage_profile(cfg, Some(gateway))?;
    let table = &profile.table;
    let sandbox = cfg.sandbox_config();

    let mut fragments = Vec::new();
    let mut provenance = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for record in &records {
        if record.origin == "failed" {
            diagnostics.push(format!(
                "rule `{}` has no validator: {}",
                record.rule_name,
                record.diagnostic.as_deref().unwrap_or("build failed")
            ));
            continue;
        }
        let validator = match revive(record, table, cfg) {
            Ok(v) => v,
            Err(e) => {
                diagnostics.push(format!("rule `{}` failed to rebuild: {e}", record.rule_name));
                continue;
            }
        };
        match validator.run(table, &sandbox) {
            Ok(fragment) => {
                provenance.insert(
                    record.rule_name.clone(),
                    ValidatorProvenance {
                        kind: record.origin.clone(),
                        script: record.script.as_ref().map(|s| s.source.clone()),
                    },
                );
                fragments.push(fragment);
            }
            Err(e) => {
                diagnostics.push(format!("rule `{}` failed at runtime: {e}", record.rule_name));
            }
        }
    }

    let mask = aggregate_masks(&fragments);
    write_error_mask_csv(&mask, &artifact(cfg, "error_mask.csv"))?;
    let report = render_report(table, &mask, &provenance);
    write_json(&artifact(cfg, "quality_report.json"), &report)?;
    fs::write(artifact(cfg, "quality_report.txt"), report.to_text())
        .map_err(|e| DqError::io("quality_report.txt", e))?;
    write_json(&artifact(cfg, "assess_diagnostics.json"), &diagnostics)?;
    Ok(AssessStage {
        mask,
        report,
        diagnostics,
    })
}

pub struct CorruptStage {
    pub dirty: Table,
    pub truth: GroundTruthMask,
    pub dirty_path: PathBuf,
    pub truth_path: PathBuf,
}

/// Injects synthetic errors into the clean dataset, writing the corrupted
/// CSV and its ground-truth mask.
pub fn stage_corrupt(cfg: &PipelineConfig) -> Result<CorruptStage> {
    ensure_out_dir(cfg)?;
    let table = load_table(cfg.dataset_path()?, &LoadOptions::default())?;
    let spec = cfg.corruption_spec();
    let (dirty, truth) = inject(&table, &spec)?;
    let dirty_path = artifact(cfg, "dirty.csv");
    let truth_path = artifact(cfg, "truth_mask.csv");
    dirty.write_csv(&dirty_path)?;
    truth.write_csv(&truth_path)?;
    Ok(CorruptStage {
        dirty,
        truth,
        dirty_path,
        truth_path,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreStage {
    pub dataset: String,
    pub noise_level: f64,
    pub eval: EvalResult,
    pub coverage: Option<CoverageReport>,
    pub confidence: Option<ConfidenceReport>,
}

/// Scores the predicted mask in `error_mask.csv` against the ground truth
/// in `truth_mask.csv`, adding coverage and confidence when the rule
/// artifacts are present.
pub fn stage_score(cfg: &PipelineConfig) -> Result<ScoreStage> {
    ensure_out_dir(cfg)?;
    let predicted = read_error_mask_csv(&artifact(cfg, "error_mask.csv"))?;
    let truth = GroundTruthMask::read_csv(&artifact(cfg, "truth_mask.csv"), None)?;
    let eval = score_masks(&predicted, &truth);

    let dataset = cfg
        .dataset
        .as_deref()
        .and_then(Path::file_stem)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string());

    let cards_path = artifact(cfg, "final_cards.json");
    let cov = if cards_path.is_file() {
        let cards: Vec<RuleCard> = read_json(&cards_path)?;
        let table = load_table(cfg.dataset_path()?, &LoadOptions::default())?;
        Some(coverage(&cards, &table.column_names()))
    } else {
        None
    };
    let entries_path = artifact(cfg, "confidence_entries.json");
    let conf = if entries_path.is_file() {
        let entries: Vec<ConfidenceEntry> = read_json(&entries_path)?;
        Some(confidence(&entries))
    } else {
        None
    };

    let stage = ScoreStage {
        dataset: dataset.clone(),
        noise_level: cfg.corruption.rate,
        eval: eval.clone(),
        coverage: cov,
        confidence: conf,
    };
    write_json(&artifact(cfg, "eval.json"), &stage)?;
    append_results_csv(
        &artifact(cfg, "results.csv"),
        &dataset,
        cfg.corruption.rate,
        &eval,
    )?;
    Ok(stage)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E2eOutcome {
    pub score: ScoreStage,
    pub final_rule_count: usize,
    pub validator_failures: usize,
    pub flagged_cells: usize,
    pub injected_cells: usize,
}

/// Full loop: corrupt the clean dataset, run the whole pipeline over the
/// corrupted copy, and score the predicted mask against the ground truth.
pub fn run_e2e(cfg: &PipelineConfig, gateway: &ChatGateway) -> Result<E2eOutcome> {
    let corrupt = stage_corrupt(cfg)?;

    let mut dirty_cfg = cfg.clone();
    dirty_cfg.dataset = Some(corrupt.dirty_path.clone());
    stage_profile(&dirty_cfg, Some(gateway))?;
    stage_screen(&dirty_cfg, &corrupt.dirty, Some(gateway))?;
    stage_gen_rules(&dirty_cfg, gateway)?;
    let guard = stage_guard(&dirty_cfg, gateway)?;
    let compile = stage_compile_rules(&dirty_cfg, gateway)?;
    let assess = stage_assess(&dirty_cfg, gateway)?;
    let score = stage_score(&dirty_cfg)?;

    write_json(&artifact(cfg, "e2e.json"), &score)?;
    Ok(E2eOutcome {
        score,
        final_rule_count: guard.cards.len(),
        validator_failures: compile
            .records
            .iter()
            .filter(|r| r.origin == "failed")
            .count(),
        flagged_cells: assess.mask.len(),
        injected_cells: corrupt.truth.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrupt::ErrorType;
    use crate::gateway::ScriptedStub;

    fn write_dataset(dir: &Path) -> PathBuf {
        let path = dir.join("readings.csv");
        let mut body = String::from("id,reading\n");
        for i in 0..30 {
            body.push_str(&format!("{},{}\n", i + 1, 10 + (i % 5)));
        }
        fs::write(&path, body).unwrap();
        path
    }

    fn test_config(dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.dataset = Some(write_dataset(dir));
        cfg.out_dir = dir.join("out");
        cfg.rule_types = vec!["Range Constraints".to_string()];
        cfg
    }

    /// Stub covering every prompt the single-type pipeline emits.
    fn scripted_pipeline_stub() -> ScriptedStub {
        let card = r#"[{
            "Rule Type": "Range Constraints",
            "Rule Name": "reading bounds",
            "Rule Description": "readings stay within the observed band",
            "Target Columns": ["reading"]
        }]"#;
        let enriched = r#"{
            "Status": "correct",
            "Rule Type": "Range Constraints",
            "Rule Name": "reading bounds",
            "Rule Description": "readings stay within the observed band",
            "Target Columns": ["reading"],
            "Additional Information": {
                "Specification": "reading must be between 0 and 100",
                "Pseudocode": ["if reading < 0 or reading > 100 -> flag"]
            }
        }"#;
        let rubric = r#"[{"rule_name": "reading bounds", "labels": ["high_value"], "rationale": "guards the only measure column"}]"#;
        // Most specific marker first: the card's type name appears in the
        // enrichment and rubric prompts too, so the generation route goes last.
        ScriptedStub::new()
            .route(&["one-line gloss"], r#"{"id": "row identifier", "reading": "sensor value"}"#)
            .route(&["COMPARE_TABLE"], enriched)
            .route(&["rubric"], rubric)
            .route(&["Range Constraints"], card)
    }

    fn stub_gateway() -> ChatGateway {
        ChatGateway::stub(scripted_pipeline_stub())
    }

    #[test]
    fn stages_compose_through_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let gateway = stub_gateway();

        let gen = stage_gen_rules(&cfg, &gateway).unwrap();
        assert_eq!(gen.cards.len(), 1);
        assert!(artifact(&cfg, "enriched_cards.json").is_file());
        assert!(artifact(&cfg, "partition.json").is_file());

        let guard = stage_guard(&cfg, &gateway).unwrap();
        assert_eq!(guard.cards.len(), 1);

        let compile = stage_compile_rules(&cfg, &gateway).unwrap();
        assert_eq!(compile.records.len(), 1);
        assert_eq!(compile.records[0].origin, "compiled-dsl");
        assert!(compile.records[0].spec.is_some());

        let assess = stage_assess(&cfg, &gateway).unwrap();
        assert!(assess.mask.is_empty());
        assert!(assess.diagnostics.is_empty());
        assert_eq!(assess.report.row_count, 30);
    }

    #[test]
    fn assess_cascades_from_nothing_when_generation_is_scripted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let assess = stage_assess(&cfg, &stub_gateway()).unwrap();
        assert!(assess.report.findings.is_empty());
        for name in [
            "profiles.json",
            "schema.txt",
            "cell_flags.json",
            "partition.json",
            "draft_cards.json",
            "enriched_cards.json",
            "final_cards.json",
            "validators.json",
            "error_mask.csv",
            "quality_report.json",
            "quality_report.txt",
        ] {
            assert!(artifact(&cfg, name).is_file(), "missing artifact {name}");
        }
    }

    #[test]
    fn assess_with_zero_rules_is_an_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        ensure_out_dir(&cfg).unwrap();
        write_json::<Vec<ValidatorRecord>>(&artifact(&cfg, "validators.json"), &Vec::new())
            .unwrap();
        let gateway = ChatGateway::stub(ScriptedStub::new());
        let assess = stage_assess(&cfg, &gateway).unwrap();
        assert!(assess.mask.is_empty());
        assert_eq!(assess.report.flagged_cell_count, 0);
    }

    #[test]
    fn corrupt_then_score_on_identical_masks_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.corruption.error_types = vec![ErrorType::MissingExplicit];
        cfg.corruption.rate = 0.2;
        let corrupt = stage_corrupt(&cfg).unwrap();
        assert!(corrupt.truth.len() > 0);

        let mut predicted = ErrorMask::default();
        for cell in corrupt.truth.cell_set() {
            predicted.insert(cell, "oracle");
        }
        write_error_mask_csv(&predicted, &artifact(&cfg, "error_mask.csv")).unwrap();
        let score = stage_score(&cfg).unwrap();
        assert_eq!(score.eval.f1, 1.0);
        assert_eq!(score.eval.precision, 1.0);
        assert_eq!(score.eval.recall, 1.0);
        assert!(artifact(&cfg, "results.csv").is_file());
    }

    #[test]
    fn e2e_runs_the_whole_loop_on_the_dirty_copy() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.corruption.error_types = vec![ErrorType::MissingExplicit];
        cfg.corruption.rate = 0.1;
        let outcome = run_e2e(&cfg, &stub_gateway()).unwrap();
        assert_eq!(outcome.final_rule_count, 1);
        assert_eq!(outcome.validator_failures, 0);
        assert!(outcome.injected_cells > 0);
        assert!(artifact(&cfg, "dirty.csv").is_file());
        assert!(artifact(&cfg, "e2e.json").is_file());
        // Clean readings all sit inside the range rule, so anything flagged
        // must be an injected cell.
        let predicted =
            read_error_mask_csv(&cfg.out_dir.join("error_mask.csv")).unwrap();
        let truth_cells = corrupt_truth_cells(&cfg);
        for cell in predicted.cell_set() {
            assert!(truth_cells.contains(&cell), "false positive at {cell:?}");
        }
    }

    fn corrupt_truth_cells(cfg: &PipelineConfig) -> std::collections::BTreeSet<crate::CellRef> {
        GroundTruthMask::read_csv(&cfg.out_dir.join("truth_mask.csv"), None)
            .unwrap()
            .cell_set()
    }

    #[test]
    fn disabling_the_inlier_filter_keeps_every_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.inlier_filter = false;
        let table = load_table(cfg.dataset_path().unwrap(), &LoadOptions::default()).unwrap();
        let screen = stage_screen(&cfg, &table, None).unwrap();
        assert_eq!(screen.partition.inliers.len(), 30);
        assert!(screen.partition.outliers.is_empty());
    }

    #[test]
    fn validator_records_revive_into_runnable_validators() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let gateway = stub_gateway();
        stage_compile_rules(&cfg, &gateway).unwrap();
        let records: Vec<ValidatorRecord> =
            read_json(&artifact(&cfg, "validators.json")).unwrap();
        let table = load_table(cfg.dataset_path().unwrap(), &LoadOptions::default()).unwrap();
        let validator = revive(&records[0], &table, &cfg).unwrap();
        let fragment = validator.run(&table, &cfg.sandbox_config()).unwrap();
        assert!(fragment.cells.is_empty());
    }
}
