//! Domain example repository and nearest-domain retrieval.
//!
//! The repository is a directory of JSON files, one per domain. Each file
//! holds a free-text domain descriptor plus worked example rule cards and
//! code snippets keyed by rule type. Retrieval embeds the target table's
//! description and every descriptor, then picks the closest domain by
//! cosine similarity.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedder};
use crate::error::{DqError, Result};
use crate::rules::{RuleCard, RuleType};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainExample {
    /// Natural-language descriptor of the domain, used for retrieval.
    pub domain: String,
    #[serde(default)]
    pub rule_cards: BTreeMap<String, Vec<RuleCard>>,
    #[serde(default)]
    pub code_snippets: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default)]
pub struct DomainExampleRepo {
    /// `(file stem, example)` pairs in filename order.
    pub entries: Vec<(String, DomainExample)>,
}

impl DomainExampleRepo {
    /// Loads every `*.json` file in the directory, sorted by filename so
    /// retrieval tie-breaks are stable. Example cards must carry target
    /// columns; a file that fails to parse is an error.
    pub fn load(dir: &Path) -> Result<DomainExampleRepo> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| DqError::io(dir.display().to_string(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
            .collect();
        paths.sort();

        let mut entries = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| DqError::io(path.display().to_string(), e))?;
            let example: DomainExample = serde_json::from_str(&text).map_err(|e| {
                DqError::Config(format!("bad domain file {}: {e}", path.display()))
            })?;
            for cards in example.rule_cards.values() {
                for card in cards {
                    if card.target_columns.is_empty() {
                        return Err(DqError::Config(format!(
                            "domain file {}: example rule `{}` has no target columns",
                            path.display(),
                            card.rule_name
                        )));
                    }
                }
            }
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            entries.push((stem, example));
        }
        Ok(DomainExampleRepo { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Closest domain to the description by embedding cosine; ties keep
    /// the earliest entry. Scaling all vectors by a positive constant
    /// cannot change the winner since cosine is scale-invariant.
    pub fn best_domain(
        &self,
        description: &str,
        embedder: &dyn Embedder,
    ) -> Result<Option<&DomainExample>> {
        if self.entries.is_empty() {
            return Ok(None);
        }
        let mut texts = vec![description.to_string()];
        texts.extend(self.entries.iter().map(|(_, e)| e.domain.clone()));
        let vectors = embedder.embed(&texts)?;
        let (query, rest) = vectors.split_first().expect("at least the query");

        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, v) in rest.iter().enumerate() {
            let score = cosine(query, v);
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        Ok(Some(&self.entries[best].1))
    }
}

/// Up to `k` example cards of `rule_type` from the repository domain
/// closest to `description`. Missing repo, domain, or rule type entries
/// yield an empty list rather than an error.
pub fn select_domain_examples(
    description: &str,
    repo: &DomainExampleRepo,
    rule_type: RuleType,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<RuleCard>> {
    let Some(domain) = repo.best_domain(description, embedder)? else {
        return Ok(Vec::new());
    };
    Ok(domain
        .rule_cards
        .get(rule_type.display_name())
        .map(|cards| cards.iter().take(k).cloned().collect())
        .unwrap_or_default())
}

/// Code snippets of `rule_type` from the closest domain, for codegen
/// few-shots.
pub fn select_code_snippets(
    description: &str,
    repo: &DomainExampleRepo,
    rule_type: RuleType,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<String>> {
    let Some(domain) = repo.best_domain(description, embedder)? else {
        return Ok(Vec::new());
    };
    Ok(domain
        .code_snippets
        .get(rule_type.display_name())
        .map(|snips| snips.iter().take(k).cloned().collect())
        .unwrap_or_default())
}
