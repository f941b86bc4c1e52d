//! Threshold-based smell rules over a language-agnostic code model.
//!
//! Six rules are supported: three localized ones (long method, large class,
//! long parameter list) and three scattered ones (deep inheritance, high
//! coupling, many children). A rule fires when the measured metric is
//! strictly greater than its threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("unknown rule id `{0}`")]
    UnknownRule(String),
    #[error("threshold for {rule} must be positive")]
    NonPositiveThreshold { rule: RuleId },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    ExcessiveMethodLength,
    ExcessiveClassLength,
    ExcessiveParameterList,
    DepthOfInheritance,
    CouplingBetweenObjects,
    NumberOfChildren,
}

impl RuleId {
    pub const ALL: [RuleId; 6] = [
        RuleId::ExcessiveMethodLength,
        RuleId::ExcessiveClassLength,
        RuleId::ExcessiveParameterList,
        RuleId::DepthOfInheritance,
        RuleId::CouplingBetweenObjects,
        RuleId::NumberOfChildren,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::ExcessiveMethodLength => "ExcessiveMethodLength",
            RuleId::ExcessiveClassLength => "ExcessiveClassLength",
            RuleId::ExcessiveParameterList => "ExcessiveParameterList",
            RuleId::DepthOfInheritance => "DepthOfInheritance",
            RuleId::CouplingBetweenObjects => "CouplingBetweenObjects",
            RuleId::NumberOfChildren => "NumberOfChildren",
        }
    }

    pub fn scope(self) -> Scope {
        scope_of(self)
    }

    /// The measured quantity this rule thresholds.
    pub fn metric(self) -> Metric {
        match self {
            RuleId::ExcessiveMethodLength | RuleId::ExcessiveClassLength => Metric::Loc,
            RuleId::ExcessiveParameterList => Metric::ParameterCount,
            RuleId::DepthOfInheritance => Metric::DepthOfInheritance,
            RuleId::CouplingBetweenObjects => Metric::Coupling,
            RuleId::NumberOfChildren => Metric::ChildrenCount,
        }
    }

    pub fn default_threshold(self) -> u64 {
        match self {
            RuleId::ExcessiveMethodLength => 100,
            RuleId::ExcessiveClassLength => 1000,
            RuleId::ExcessiveParameterList => 10,
            RuleId::DepthOfInheritance => 10,
            RuleId::CouplingBetweenObjects => 13,
            RuleId::NumberOfChildren => 15,
        }
    }

    fn applies_to(self, kind: EntityKind) -> bool {
        match self {
            RuleId::ExcessiveMethodLength | RuleId::ExcessiveParameterList => {
                matches!(kind, EntityKind::Method | EntityKind::Function)
            }
            _ => kind == EntityKind::Class,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleId {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| RuleError::UnknownRule(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Localized,
    Scattered,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Localized => "localized",
            Scope::Scattered => "scattered",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Localized smells live inside one method, class or file; scattered ones
/// span several classes.
pub fn scope_of(rule: RuleId) -> Scope {
    match rule {
        RuleId::ExcessiveMethodLength
        | RuleId::ExcessiveClassLength
        | RuleId::ExcessiveParameterList => Scope::Localized,
        RuleId::DepthOfInheritance | RuleId::CouplingBetweenObjects | RuleId::NumberOfChildren => {
            Scope::Scattered
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Loc,
    ParameterCount,
    DepthOfInheritance,
    Coupling,
    ChildrenCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Class,
    Method,
    Function,
}

/// A class, method or function together with its measured metrics.
///
/// Metrics that do not apply to the entity kind default to zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntity {
    pub kind: EntityKind,
    pub name: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default)]
    pub loc: u64,
    #[serde(default)]
    pub parameter_count: u64,
    #[serde(default)]
    pub depth_of_inheritance: u64,
    #[serde(default)]
    pub coupling: u64,
    #[serde(default)]
    pub children_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub begin_line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_line: Option<u32>,
}

impl CodeEntity {
    pub fn metric(&self, metric: Metric) -> u64 {
        match metric {
            Metric::Loc => self.loc,
            Metric::ParameterCount => self.parameter_count,
            Metric::DepthOfInheritance => self.depth_of_inheritance,
            Metric::Coupling => self.coupling,
            Metric::ChildrenCount => self.children_count,
        }
    }

    /// `Parent/name` for methods with a known class, the bare name otherwise.
    pub fn entity_path(&self) -> String {
        match (&self.kind, &self.parent) {
            (EntityKind::Method, Some(p)) if !p.is_empty() => format!("{p}/{}", self.name),
            _ => self.name.clone(),
        }
    }
}

/// One smell of one rule at one location in one version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmellOccurrence {
    pub rule: RuleId,
    pub file: String,
    #[serde(default)]
    pub entity_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub begin_line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_line: Option<u32>,
    pub version_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmellRule {
    pub id: RuleId,
    pub scope: Scope,
    pub metric: Metric,
    pub threshold: u64,
}

/// Threshold per rule. `u64::MAX` disables a rule since no metric can exceed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    thresholds: BTreeMap<RuleId, u64>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            thresholds: RuleId::ALL
                .into_iter()
                .map(|r| (r, r.default_threshold()))
                .collect(),
        }
    }
}

impl RuleSet {
    /// A ruleset in which no rule can ever fire.
    pub fn unbounded() -> Self {
        RuleSet {
            thresholds: RuleId::ALL.into_iter().map(|r| (r, u64::MAX)).collect(),
        }
    }

    pub fn with_threshold(mut self, rule: RuleId, threshold: u64) -> Result<Self, RuleError> {
        if threshold == 0 {
            return Err(RuleError::NonPositiveThreshold { rule });
        }
        self.thresholds.insert(rule, threshold);
        Ok(self)
    }

    pub fn threshold(&self, rule: RuleId) -> u64 {
        self.thresholds[&rule]
    }

    pub fn rules(&self) -> impl Iterator<Item = SmellRule> + '_ {
        self.thresholds.iter().map(|(&id, &threshold)| SmellRule {
            id,
            scope: id.scope(),
            metric: id.metric(),
            threshold,
        })
    }

    /// Applies overrides from a JSON object of `{"RuleName": threshold}`.
    /// Rules not mentioned keep their default thresholds.
    pub fn from_overrides_json(text: &str) -> Result<Self, RuleError> {
        let raw: BTreeMap<String, u64> =
            serde_json::from_str(text).map_err(|e| RuleError::Schema {
                path: "<rules>".into(),
                message: e.to_string(),
            })?;
        let mut set = RuleSet::default();
        for (name, threshold) in raw {
            let id: RuleId = name.parse()?;
            set = set.with_threshold(id, threshold)?;
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_overrides_json(&text).map_err(|e| match e {
            RuleError::Schema { message, .. } => RuleError::Schema {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Evaluates every rule against every entity. An occurrence is emitted when
/// the metric value is strictly greater than the threshold.
///
/// Output is sorted by (file, entity_path, rule, begin_line).
pub fn evaluate_rules(
    entities: &[CodeEntity],
    rules: &RuleSet,
    version_id: &str,
) -> Vec<SmellOccurrence> {
    let mut out: Vec<SmellOccurrence> = entities
        .iter()
        .flat_map(|entity| {
            rules
                .rules()
                .filter(move |rule| {
                    rule.id.applies_to(entity.kind) && entity.metric(rule.metric) > rule.threshold
                })
                .map(move |rule| SmellOccurrence {
                    rule: rule.id,
                    file: entity.file.clone(),
                    entity_path: entity.entity_path(),
                    begin_line: entity.begin_line,
                    end_line: entity.end_line,
                    version_id: version_id.to_string(),
                })
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.file, &a.entity_path, a.rule, a.begin_line).cmp(&(
            &b.file,
            &b.entity_path,
            b.rule,
            b.begin_line,
        ))
    });
    out
}

/// On-disk code model: one document per version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeModel {
    #[serde(default)]
    pub entities: Vec<CodeEntity>,
}

impl CodeModel {
    pub fn parse(text: &str, path: &str) -> Result<Self, RuleError> {
        if text.trim().is_empty() {
            return Ok(CodeModel::default());
        }
        let model: CodeModel = serde_json::from_str(text).map_err(|e| RuleError::Schema {
            path: path.to_string(),
            message: format!("line {}, column {}: {}", e.line(), e.column(), e),
        })?;
        for (i, e) in model.entities.iter().enumerate() {
            if let (Some(b), Some(end)) = (e.begin_line, e.end_line) {
                if b > end {
                    return Err(RuleError::Schema {
                        path: path.to_string(),
                        message: format!("entity {i} (`{}`): begin_line > end_line", e.name),
                    });
                }
            }
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}
