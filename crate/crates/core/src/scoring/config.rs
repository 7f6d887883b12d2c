use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ScoreError;
use crate::ingest::CategoryTaxonomy;

/// Decay rate presets, named by how many overlapping amenities it takes to
/// reach half of the maximum contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayPreset {
    /// Half-life 2.
    Expansive,
    /// Half-life 1.
    Balanced,
    /// Half-life 0.5.
    Focused,
}

impl DecayPreset {
    pub const ALL: [DecayPreset; 3] = [
        DecayPreset::Expansive,
        DecayPreset::Balanced,
        DecayPreset::Focused,
    ];

    pub fn lambda(self) -> f64 {
        std::f64::consts::LN_2 / self.half_life()
    }

    pub fn half_life(self) -> f64 {
        match self {
            DecayPreset::Expansive => 2.0,
            DecayPreset::Balanced => 1.0,
            DecayPreset::Focused => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Standard,
    Preferred,
    /// Weight 1; a cell without any member amenity scores 0.
    Required,
}

impl Tier {
    pub fn weight(self) -> f64 {
        match self {
            Tier::Preferred => 2.0,
            Tier::Standard | Tier::Required => 1.0,
        }
    }

    pub fn is_gate(self) -> bool {
        self == Tier::Required
    }
}

/// One selected category, or a substitute group of categories whose counts
/// are pooled before decay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEntry {
    pub members: Vec<String>,
    pub tier: Tier,
    pub decay: DecayPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ConfigEntry {
    pub fn new<S: Into<String>>(
        members: impl IntoIterator<Item = S>,
        tier: Tier,
        decay: DecayPreset,
    ) -> Self {
        Self {
            members: members.into_iter().map(Into::into).collect(),
            tier,
            decay,
            label: None,
        }
    }

    pub fn display_name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.members.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub entries: Vec<ConfigEntry>,
}

/// A validation problem tied to a location in the config document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl UserConfig {
    pub fn new(entries: Vec<ConfigEntry>) -> Self {
        Self { entries }
    }

    /// Parses a config document, reporting every malformed entry by index.
    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ScoreError::InvalidConfig(vec![ConfigIssue::new("$", e.to_string())]))?;
        Self::from_value(value)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScoreError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn from_value(value: Value) -> Result<Self, ScoreError> {
        let invalid =
            |field: &str, msg: &str| ScoreError::InvalidConfig(vec![ConfigIssue::new(field, msg)]);
        let Value::Object(mut obj) = value else {
            return Err(invalid("$", "expected an object with an \"entries\" array"));
        };
        let mut issues = Vec::new();
        for key in obj.keys().filter(|k| *k != "entries") {
            issues.push(ConfigIssue::new(
                key.clone(),
                "unknown field, expected `entries`",
            ));
        }
        let raw = match obj.remove("entries") {
            Some(Value::Array(a)) => a,
            Some(_) => return Err(invalid("entries", "expected an array")),
            None => return Err(invalid("entries", "missing field")),
        };
        let mut entries = Vec::with_capacity(raw.len());
        for (i, v) in raw.into_iter().enumerate() {
            if let Some(members) = v.get("members").and_then(Value::as_array) {
                if let Some(j) = members.iter().position(|m| !m.is_string()) {
                    issues.push(ConfigIssue::new(
                        format!("entries[{i}].members[{j}]"),
                        "group members are plain category ids; tier and decay apply to the whole entry",
                    ));
                    continue;
                }
            }
            match serde_json::from_value::<ConfigEntry>(v) {
                Ok(e) => entries.push(e),
                Err(e) => issues.push(ConfigIssue::new(format!("entries[{i}]"), e.to_string())),
            }
        }
        if !issues.is_empty() {
            return Err(ScoreError::InvalidConfig(issues));
        }
        let config = Self { entries };
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that do not need a taxonomy.
    pub fn validate(&self) -> Result<(), ScoreError> {
        let issues = self.structural_issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScoreError::InvalidConfig(issues))
        }
    }

    /// Structural checks plus category membership in `taxonomy`.
    pub fn validate_against(&self, taxonomy: &CategoryTaxonomy) -> Result<(), ScoreError> {
        let mut issues = self.structural_issues();
        for (i, e) in self.entries.iter().enumerate() {
            for (j, m) in e.members.iter().enumerate() {
                if !taxonomy.contains(m) {
                    issues.push(ConfigIssue::new(
                        format!("entries[{i}].members[{j}]"),
                        format!("unknown category {m:?}"),
                    ));
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScoreError::InvalidConfig(issues))
        }
    }

    fn structural_issues(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.entries.is_empty() {
            issues.push(ConfigIssue::new(
                "entries",
                "at least one entry is required",
            ));
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.members.is_empty() {
                issues.push(ConfigIssue::new(
                    format!("entries[{i}].members"),
                    "must name at least one category",
                ));
            }
            for (j, m) in e.members.iter().enumerate() {
                match seen.get(m.as_str()) {
                    Some(&prev) if prev == i => issues.push(ConfigIssue::new(
                        format!("entries[{i}].members[{j}]"),
                        format!("{m:?} is listed twice in this entry"),
                    )),
                    Some(&prev) => issues.push(ConfigIssue::new(
                        format!("entries[{i}].members[{j}]"),
                        format!("{m:?} already appears in entries[{prev}]"),
                    )),
                    None => {
                        seen.insert(m, i);
                    }
                }
            }
        }
        issues
    }

    /// Hex SHA-256 of a canonical form: entry order kept, members sorted,
    /// labels ignored.
    pub fn fingerprint(&self) -> String {
        let canonical: Vec<Value> = self
            .entries
            .iter()
            .map(|e| {
                let mut members = e.members.clone();
                members.sort();
                serde_json::json!({ "members": members, "tier": e.tier, "decay": e.decay })
            })
            .collect();
        let bytes = serde_json::to_vec(&canonical).expect("json");
        hex::encode(Sha256::digest(&bytes))
    }
}
