use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatewayError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: u32,
    pub description: String,
    #[serde(default)]
    pub short_description: Option<String>,
}

impl CatalogEntry {
    /// The short description when asked for and present, else the long one.
    pub fn text(&self, prefer_short: bool) -> &str {
        match (&self.short_description, prefer_short) {
            (Some(s), true) if !s.trim().is_empty() => s,
            _ => &self.description,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCatalog {
    pub category: String,
    #[serde(rename = "keypoints")]
    pub entries: Vec<CatalogEntry>,
}

impl PromptCatalog {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id) {
                return Err(GatewayError::Catalog(format!("{}: duplicate keypoint id {}", self.category, e.id)));
            }
            if e.description.trim().is_empty() {
                return Err(GatewayError::Catalog(format!("{}: keypoint {} has no description", self.category, e.id)));
            }
        }
        Ok(())
    }
}

/// Parses a JSON array of catalogs (a single object is also accepted).
pub fn parse_catalogs(text: &str) -> Result<Vec<PromptCatalog>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<PromptCatalog>),
        One(PromptCatalog),
    }
    let catalogs = match serde_json::from_str(text).map_err(|e| GatewayError::Catalog(e.to_string()))? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(c) => vec![c],
    };
    for c in &catalogs {
        c.validate()?;
    }
    Ok(catalogs)
}

pub fn load_catalogs(path: &Path) -> Result<Vec<PromptCatalog>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Catalog(format!("{}: {e}", path.display())))?;
    parse_catalogs(&text)
}
