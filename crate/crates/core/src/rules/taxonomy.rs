//! The rule-type taxonomy drafted rules are organized under.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleType {
    #[serde(rename = "Reference Table Verification")]
    ReferenceTableVerification,
    #[serde(rename = "Format Compliance")]
    FormatCompliance,
    #[serde(rename = "Data Type Validation")]
    DataTypeValidation,
    #[serde(rename = "Missing Value Identification")]
    MissingValueIdentification,
    #[serde(rename = "Value Set Constraint")]
    ValueSetConstraint,
    #[serde(rename = "Cross-Column Validation")]
    CrossColumnValidation,
    #[serde(rename = "Pattern Matching")]
    PatternMatching,
    #[serde(rename = "Business Rule Validation")]
    BusinessRuleValidation,
    #[serde(rename = "Computation Consistency")]
    ComputationConsistency,
    #[serde(rename = "Dependency Constraints")]
    DependencyConstraints,
    #[serde(rename = "Range Constraints")]
    RangeConstraints,
    #[serde(rename = "Temporal Consistency")]
    TemporalConsistency,
    #[serde(rename = "Uniqueness Constraint")]
    UniquenessConstraint,
}

impl RuleType {
    pub const ALL: [RuleType; 13] = [
        RuleType::ReferenceTableVerification,
        RuleType::FormatCompliance,
        RuleType::DataTypeValidation,
        RuleType::MissingValueIdentification,
        RuleType::ValueSetConstraint,
        RuleType::CrossColumnValidation,
        RuleType::PatternMatching,
        RuleType::BusinessRuleValidation,
        RuleType::ComputationConsistency,
        RuleType::DependencyConstraints,
        RuleType::RangeConstraints,
        RuleType::TemporalConsistency,
        RuleType::UniquenessConstraint,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            RuleType::ReferenceTableVerification => "Reference Table Verification",
            RuleType::FormatCompliance => "Format Compliance",
            RuleType::DataTypeValidation => "Data Type Validation",
            RuleType::MissingValueIdentification => "Missing Value Identification",
            RuleType::ValueSetConstraint => "Value Set Constraint",
            RuleType::CrossColumnValidation => "Cross-Column Validation",
            RuleType::PatternMatching => "Pattern Matching",
            RuleType::BusinessRuleValidation => "Business Rule Validation",
            RuleType::ComputationConsistency => "Computation Consistency",
            RuleType::DependencyConstraints => "Dependency Constraints",
            RuleType::RangeConstraints => "Range Constraints",
            RuleType::TemporalConsistency => "Temporal Consistency",
            RuleType::UniquenessConstraint => "Uniqueness Constraint",
        }
    }
}

impl std::fmt::Display for RuleType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.display_name())
    }
}

impl std::str::FromStr for RuleType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let needle = normalize(s);
        RuleType::ALL
            .into_iter()
            .find(|t| normalize(t.display_name()) == needle)
            .ok_or_else(|| format!("unknown rule type `{s}`"))
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_names_round_trip_through_serde_and_fromstr() {
        for t in RuleType::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.display_name()));
            let back: RuleType = serde_json::from_str(&json).unwrap();
            assert_eq!(back, t);
            assert_eq!(t.display_name().parse::<RuleType>().unwrap(), t);
        }
    }

    #[test]
    fn fromstr_tolerates_case_and_separators() {
        assert_eq!(
            "format-compliance".parse::<RuleType>().unwrap(),
            RuleType::FormatCompliance
        );
        assert_eq!(
            "cross column validation".parse::<RuleType>().unwrap(),
            RuleType::CrossColumnValidation
        );
        assert!("no such type".parse::<RuleType>().is_err());
    }
}
