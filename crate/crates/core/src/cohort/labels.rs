//! Binary abnormality labels: one (lab item, direction, threshold) triple per
//! task, with the inclusive threshold rule that decides abnormality.

use super::CohortError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Which side of the threshold counts as abnormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Low,
    High,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Low => "LOW",
            Direction::High => "HIGH",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Direction> {
        match s {
            "LOW" => Some(Direction::Low),
            "HIGH" => Some(Direction::High),
            _ => None,
        }
    }

    /// Comparison symbol used when rendering a threshold, e.g. "≥353 pg/mL".
    pub fn symbol(&self) -> &'static str {
        match self {
            Direction::Low => "≤",
            Direction::High => "≥",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Clinical grouping tag attached to each label for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelCategory {
    Cardiac,
    Renal,
    Hematological,
    Metabolic,
    Immunological,
    Coagulation,
}

impl LabelCategory {
    pub const ALL: [LabelCategory; 6] = [
        LabelCategory::Cardiac,
        LabelCategory::Renal,
        LabelCategory::Hematological,
        LabelCategory::Metabolic,
        LabelCategory::Immunological,
        LabelCategory::Coagulation,
    ];

    /// Two-letter code used in threshold tables.
    pub fn code(&self) -> &'static str {
        match self {
            LabelCategory::Cardiac => "Ca",
            LabelCategory::Renal => "Re",
            LabelCategory::Hematological => "He",
            LabelCategory::Metabolic => "Me",
            LabelCategory::Immunological => "Im",
            LabelCategory::Coagulation => "Co",
        }
    }

    /// Abbreviation rendered in report rows, e.g. "NTproBNP [Ca.]".
    pub fn tag(&self) -> &'static str {
        match self {
            LabelCategory::Cardiac => "Ca.",
            LabelCategory::Renal => "Re.",
            LabelCategory::Hematological => "He.",
            LabelCategory::Metabolic => "Me.",
            LabelCategory::Immunological => "Im.",
            LabelCategory::Coagulation => "Co.",
        }
    }

    pub fn from_code(s: &str) -> Option<LabelCategory> {
        Self::ALL.iter().copied().find(|c| c.code() == s)
    }
}

/// One binary prediction task: is the lab value on the abnormal side of the
/// threshold?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityLabel {
    pub label_id: String,
    pub item_id: String,
    pub display_name: String,
    pub direction: Direction,
    /// Threshold in the item's native units; the boundary itself is abnormal.
    pub threshold: f64,
    pub unit: String,
    pub category: LabelCategory,
}

impl AbnormalityLabel {
    /// Render the threshold with its direction symbol, e.g. "≥353 pg/mL".
    pub fn threshold_display(&self) -> String {
        format!("{}{} {}", self.direction.symbol(), self.threshold, self.unit)
    }

    /// Display name with the category tag, e.g. "NTproBNP [Ca.]".
    pub fn tagged_name(&self) -> String {
        format!("{} [{}]", self.display_name, self.category.tag())
    }
}

/// Inclusive threshold rule: LOW → abnormal iff value ≤ threshold,
/// HIGH → abnormal iff value ≥ threshold.
pub fn is_abnormal(value: f64, label: &AbnormalityLabel) -> bool {
    match label.direction {
        Direction::Low => value <= label.threshold,
        Direction::High => value >= label.threshold,
    }
}

/// Validate a set of label definitions and fix their ordering.
///
/// Rejects duplicate `label_id`s and duplicate `(item_id, direction)` pairs;
/// returns the labels sorted by `label_id` so downstream column order is
/// deterministic.
pub fn build_label_space(
    mut labels: Vec<AbnormalityLabel>,
) -> Result<Vec<AbnormalityLabel>, CohortError> {
    let mut ids = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for label in &labels {
        assert!(
            label.threshold.is_finite(),
            "label {} has a non-finite threshold",
            label.label_id
        );
        if !ids.insert(label.label_id.clone()) {
            return Err(CohortError::DuplicateLabel {
                detail: format!("label_id {:?} defined twice", label.label_id),
            });
        }
        if !pairs.insert((label.item_id.clone(), label.direction)) {
            return Err(CohortError::DuplicateLabel {
                detail: format!(
                    "item {:?} direction {} defined twice",
                    label.item_id, label.direction
                ),
            });
        }
    }
    labels.sort_by(|a, b| a.label_id.cmp(&b.label_id));
    Ok(labels)
}
