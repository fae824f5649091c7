//! Data-quality pipeline toolkit.

pub mod config;
pub mod corrupt;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod guardrails;
pub mod mask;
pub mod pipeline;
pub mod rules;
pub mod screen;
pub mod table;
pub mod validator;

pub use config::PipelineConfig;
pub use corrupt::{CorruptionSpec, ErrorType};
pub use error::{DqError, Result};
pub use eval::{CoverageReport, EvalResult, QualityReport};
pub use gateway::{ChatGateway, Completion, GatewayMode, PromptRequest};
pub use mask::{CellRef, ErrorMask, GroundTruthMask, MaskFragment};
pub use rules::{RuleCard, RuleType};
pub use screen::{CellFlagMatrix, DetectorConfig, Partition};
pub use table::{ColumnProfile, ColumnType, SchemaDescription, Table};
pub use validator::{SandboxConfig, Validator, ValidatorSpec};
