use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;

use super::remote::{decode, WireClient};
use super::{GatewayError, PromptCatalog, RemoteConfig, Result};
use crate::render::RenderedView;

pub const LIST_KEYPOINTS_PROMPT: &str = "List possible salient key points (in text).";
pub const DESCRIBE_MARKER_PROMPT: &str = "Give a short name for the point marked in red.";

/// Anything that can name points in an image.
pub trait NamerBackend: Send + Sync {
    fn describe(&self, view: &RenderedView, prompt: &str, category: Option<&str>) -> Result<Vec<String>>;
}

/// Candidate keypoint names for `view`, deduplicated case-insensitively with
/// first-seen order kept.
pub fn list_candidate_keypoints(
    backend: &dyn NamerBackend,
    view: &RenderedView,
    category: Option<&str>,
) -> Result<Vec<String>> {
    let names = backend.describe(view, LIST_KEYPOINTS_PROMPT, category)?;
    let mut seen = HashSet::new();
    let out: Vec<String> = names
        .into_iter()
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty() && seen.insert(n.to_lowercase()))
        .collect();
    if out.is_empty() {
        return Err(GatewayError::EmptyResponse);
    }
    Ok(out)
}

/// Most frequent answer; ties go to the lexicographically smallest.
pub fn majority_label(answers: &[String]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        let a = a.trim();
        if !a.is_empty() {
            *counts.entry(a).or_default() += 1;
        }
    }
    // BTreeMap iterates in ascending key order, so max_by keeping the first
    // maximum needs the reversed comparison on keys
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.to_string())
}

/// Serves catalog descriptions verbatim.
#[derive(Debug, Clone)]
pub struct FileNamer {
    catalogs: Vec<PromptCatalog>,
    prefer_short: bool,
}

impl FileNamer {
    pub fn new(catalogs: Vec<PromptCatalog>, prefer_short: bool) -> Self {
        Self { catalogs, prefer_short }
    }
}

impl NamerBackend for FileNamer {
    fn describe(&self, _: &RenderedView, _: &str, category: Option<&str>) -> Result<Vec<String>> {
        Ok(self
            .catalogs
            .iter()
            .filter(|c| category.is_none_or(|h| c.category.eq_ignore_ascii_case(h)))
            .flat_map(|c| c.entries.iter().map(|e| e.text(self.prefer_short).to_string()))
            .collect())
    }
}

/// Answers each call with the next label of a fixed script, cycling.
#[derive(Debug)]
pub struct MockNamer {
    labels: Vec<String>,
    next: AtomicUsize,
}

impl MockNamer {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            next: AtomicUsize::new(0),
        }
    }

    pub fn fixed(label: &str) -> Self {
        Self::new(vec![label.to_string()])
    }
}

impl NamerBackend for MockNamer {
    fn describe(&self, _: &RenderedView, _: &str, _: Option<&str>) -> Result<Vec<String>> {
        if self.labels.is_empty() {
            return Ok(Vec::new());
        }
        let i = self.next.fetch_add(1, Ordering::SeqCst) % self.labels.len();
        Ok(vec![self.labels[i].clone()])
    }
}

/// Namer over HTTP: same request body as the point endpoint, response
/// `{"names":[...]}`; default path `/describe`.
#[derive(Debug, Clone)]
pub struct RemoteNamer {
    client: WireClient,
}

impl RemoteNamer {
    pub fn new(config: &RemoteConfig) -> Result<Self> {
        Ok(Self {
            client: WireClient::new(config)?,
        })
    }
}

#[derive(Deserialize)]
struct NamesBody {
    names: Vec<String>,
}

impl NamerBackend for RemoteNamer {
    fn describe(&self, view: &RenderedView, prompt: &str, category: Option<&str>) -> Result<Vec<String>> {
        let prompt = match category {
            Some(c) => format!("{prompt} The object is a {c}."),
            None => prompt.to_string(),
        };
        let body: NamesBody = decode(&self.client.post(view, &prompt)?)?;
        Ok(body.names)
    }
}
