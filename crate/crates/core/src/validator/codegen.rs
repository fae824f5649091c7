//! Code-generation fallback for cards the clause grammar cannot express.
//!
//! The prompt stacks the schema, the target columns' summaries, the enriched
//! card, sample rows, and similarity-ranked example scripts. The returned
//! script is smoke-run on a few rows; a failing run feeds its stderr back
//! into the next prompt, up to a bounded number of attempts.

use crate::error::{DqError, Result};
use crate::gateway::{extract_code_block, ChatGateway, PromptRequest};
use crate::rules::{build_codegen_prompt, RuleCard};
use crate::table::{ColumnProfile, Table};

use super::compile::compile_spec;
use super::parse::{parse_pseudocode, ParsedPseudocode};
use super::sandbox::{parse_row_indices, run_script, ExternalScript, SandboxConfig};
use super::{Validator, ValidatorEngine};

#[derive(Debug, Clone)]
pub struct CodegenOptions {
    pub model: String,
    pub temperature: f64,
    /// Generate/repair attempts before the rule is recorded as failed.
    pub max_attempts: usize,
    /// Rows used for the smoke run.
    pub smoke_rows: usize,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        CodegenOptions {
            model: "code-model".to_string(),
            temperature: 0.2,
            max_attempts: 3,
            smoke_rows: 5,
        }
    }
}

/// Generates an external-script validator for `card`. Returns the prompts
/// alongside the outcome so failed attempts stay auditable.
#[allow(clippy::too_many_arguments)]
pub fn codegen_external(
    gateway: &ChatGateway,
    card: &RuleCard,
    schema: &str,
    profiles: &[ColumnProfile],
    sample_rows: &str,
    snippets: &[String],
    table: &Table,
    sandbox: &SandboxConfig,
    opts: &CodegenOptions,
) -> (Result<ExternalScript>, Vec<PromptRequest>) {
    let mut prompts = Vec::new();
    let outcome = codegen_loop(
        gateway,
        card,
        schema,
        profiles,
        sample_rows,
        snippets,
        table,
        sandbox,
        opts,
        &mut prompts,
    );
    (outcome, prompts)
}

#[allow(clippy::too_many_arguments)]
fn codegen_loop(
    gateway: &ChatGateway,
    card: &RuleCard,
    schema: &str,
    profiles: &[ColumnProfile],
    sample_rows: &str,
    snippets: &[String],
    table: &Table,
    sandbox: &SandboxConfig,
    opts: &CodegenOptions,
    prompts: &mut Vec<PromptRequest>,
) -> Result<ExternalScript> {
    if opts.max_attempts == 0 {
        return Err(DqError::Precondition(
            "codegen requires at least one attempt".to_string(),
        ));
    }
    let smoke = smoke_table(table, opts.smoke_rows);
    let mut repairs: Vec<String> = Vec::new();

    for attempt in 1..=opts.max_attempts {
        let request = build_codegen_prompt(
            card,
            schema,
            profiles,
            sample_rows,
            snippets,
            &repairs,
            &opts.model,
            opts.temperature,
        );
        prompts.push(request.clone());
        let completion = gateway.chat(&request)?;
        let Some(code) = extract_code_block(&completion.text, "python") else {
            return Err(DqError::Compile {
                rule: card.rule_name.clone(),
                message: "no code block in completion".to_string(),
            });
        };

        match run_script(&code, &smoke, sandbox) {
            Ok(result) if result.success() => {
                // The smoke run also has to honor the stdout protocol, so a
                // structurally broken script is repaired here instead of
                // being rejected later at assessment time.
                match parse_row_indices(&result.stdout, smoke.row_count()) {
                    Ok(_) => {
                        return Ok(ExternalScript {
                            source: code,
                            attempts: attempt,
                        })
                    }
                    Err(e) => repairs.push(e.to_string()),
                }
            }
            Ok(result) => {
                let stderr = result.stderr.trim();
                repairs.push(if stderr.is_empty() {
                    format!(
                        "script exited with status {}",
                        result
                            .exit_code
                            .map(|c| c.to_string())
                            .unwrap_or_else(|| "unknown".to_string())
                    )
                } else {
                    stderr.to_string()
                });
            }
            Err(DqError::SandboxTimeout { seconds }) => {
                repairs.push(format!("script timed out after {seconds}s"));
            }
            Err(other) => return Err(other),
        }
    }

    Err(DqError::Compile {
        rule: card.rule_name.clone(),
        message: format!(
            "all {} attempts failed; last error: {}",
            opts.max_attempts,
            repairs.last().map(String::as_str).unwrap_or("none")
        ),
    })
}

fn smoke_table(table: &Table, rows: usize) -> Table {
    let mut smoke = table.clone();
    smoke.rows.truncate(rows);
    smoke
}

/// How a card ended up executable, or why it did not.
#[derive(Debug, Clone)]
pub enum BuildOutcome {
    Built {
        validator: Validator,
        prompts: Vec<PromptRequest>,
    },
    Failed {
        card: RuleCard,
        diagnostic: String,
        prompts: Vec<PromptRequest>,
    },
}

/// Builds the executable form of one card: deterministic DSL first, code
/// generation for grammar misses, a recorded failure otherwise. A regex the
/// native engine cannot compile also falls back to generated code, which
/// may still express it.
#[allow(clippy::too_many_arguments)]
pub fn build_validator(
    gateway: &ChatGateway,
    card: &RuleCard,
    table: &Table,
    schema: &str,
    profiles: &[ColumnProfile],
    sample_rows: &str,
    snippets: &[String],
    sandbox: &SandboxConfig,
    opts: &CodegenOptions,
) -> BuildOutcome {
    match parse_pseudocode(card) {
        ParsedPseudocode::Supported(spec) => {
            match compile_spec(&spec, &table.column_names(), sandbox.ref_dir.as_deref()) {
                Ok(compiled) => {
                    return BuildOutcome::Built {
                        validator: Validator {
                            card: card.clone(),
                            engine: ValidatorEngine::Compiled(compiled),
                        },
                        prompts: Vec::new(),
                    }
                }
                Err(DqError::BadRegex { .. }) => {}
                Err(e) => {
                    return BuildOutcome::Failed {
                        card: card.clone(),
                        diagnostic: format!("compile error: {e}"),
                        prompts: Vec::new(),
                    }
                }
            }
        }
        ParsedPseudocode::Unsupported { .. } => {}
    }
    let (outcome, prompts) = codegen_external(
        gateway,
        card,
        schema,
        profiles,
        sample_rows,
        snippets,
        table,
        sandbox,
        opts,
    );
    match outcome {
        Ok(script) => BuildOutcome::Built {
            validator: Validator {
                card: card.clone(),
                engine: ValidatorEngine::External(script),
            },
            prompts,
        },
        Err(e) => BuildOutcome::Failed {
            card: card.clone(),
            diagnostic: e.to_string(),
            prompts,
        },
    }
}
