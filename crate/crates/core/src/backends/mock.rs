//! Offline backends: a scripted text generator and a digest-seeded embedder.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::schema::SchemaId;
use super::{BackendError, Embedder, GenRequest, TemplateId, TextGenerator};

/// One scripted response. An entry matches a request with the same
/// template whose prompt contains `match_key` (an empty key matches every
/// prompt). The first matching entry with uses left answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub template_id: TemplateId,
    #[serde(default)]
    pub match_key: String,
    /// A JSON value is sent as its serialization; a JSON string is sent verbatim,
    /// which allows scripting malformed replies.
    pub response: Value,
    /// Number of times the entry may answer; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<usize>,
}

impl FixtureEntry {
    pub fn new(template_id: TemplateId, match_key: impl Into<String>, response: Value) -> Self {
        FixtureEntry { template_id, match_key: match_key.into(), response, times: None }
    }

    pub fn times(mut self, n: usize) -> Self {
        self.times = Some(n);
        self
    }
}

/// What to do when no scripted entry matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Fail with [`BackendError::Unscripted`].
    #[default]
    None,
    /// Answer with a schema-valid reply derived from the prompt digest.
    Synthetic,
}

pub struct MockGenerator {
    entries: Vec<FixtureEntry>,
    used: Mutex<Vec<usize>>,
    fallback: Fallback,
}

impl MockGenerator {
    pub fn new(entries: Vec<FixtureEntry>, fallback: Fallback) -> Self {
        let used = Mutex::new(vec![0; entries.len()]);
        MockGenerator { entries, used, fallback }
    }

    /// Reads a fixture file: a JSON array of [`FixtureEntry`].
    pub fn from_file(path: &Path, fallback: Fallback) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("reading fixture {}: {e}", path.display())))?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("parsing fixture {}: {e}", path.display())))?;
        Ok(Self::new(entries, fallback))
    }

    pub fn entries(&self) -> &[FixtureEntry] {
        &self.entries
    }
}

impl TextGenerator for MockGenerator {
    fn complete(&self, req: &GenRequest) -> Result<String, BackendError> {
        {
            let mut used = self.used.lock().expect("fixture counter poisoned");
            for (i, e) in self.entries.iter().enumerate() {
                if e.template_id != req.template_id || !req.filled_prompt.contains(&e.match_key) {
                    continue;
                }
                if e.times.is_some_and(|n| used[i] >= n) {
                    continue;
                }
                used[i] += 1;
                return Ok(match &e.response {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                });
            }
        }
        match self.fallback {
            Fallback::None => Err(BackendError::Unscripted { template: req.template_id }),
            Fallback::Synthetic => Ok(synthetic_response(req).to_string()),
        }
    }
}

fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Deterministic, schema-valid reply chosen from the prompt digest.
pub fn synthetic_response(req: &GenRequest) -> Value {
    let h = digest(&req.filled_prompt);
    let tag = hex::encode(&h[..4]);
    let pick = h[0] as usize;
    match req.expected_schema {
        SchemaId::Extraction => json!({ "events": [] }),
        SchemaId::Recalibration => json!({ "corrections": [] }),
        SchemaId::Merge => json!({ "events": [{}] }),
        SchemaId::TrackLink => json!({ "predecessor": if pick.is_multiple_of(3) { 0 } else { 1 } }),
        SchemaId::TrackDelta => {
            let polarity = ["more positive", "more negative", "neutral"][pick % 3];
            json!({
                "incremental_information": format!("development {tag} relative to earlier coverage"),
                "polarity": polarity,
            })
        }
        SchemaId::Reason => json!({
            "Reason for price movement": format!("reaction {tag} to the recent event sequence"),
            "Events causing the impact": format!("key events {tag}"),
        }),
        SchemaId::RetrieveFilter => json!({ "selected": [1] }),
        SchemaId::Predict => json!({
            "Reason for price movement": format!("assessment {tag}"),
            "Price movement": if h[1].is_multiple_of(2) { "up" } else { "down" },
        }),
    }
}

/// Embedder returning a pseudo-random unit vector seeded by the text digest.
/// Similar strings are not similar vectors; only identical strings coincide.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        MockEmbedder { dim }
    }
}

/// The vector [`MockEmbedder`] assigns to `text` before normalization.
pub fn digest_seeded_vector(text: &str, dim: usize) -> Vec<f32> {
    let h = digest(text);
    let seed = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| digest_seeded_vector(t, self.dim)).collect())
    }
}

/// Embedder serving fixed vectors for known texts, for tests that need
/// controlled similarity. Unknown texts fall back to [`MockEmbedder`].
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    table: Vec<(String, Vec<f32>)>,
    fallback: MockEmbedder,
}

impl TableEmbedder {
    pub fn new(dim: usize, table: Vec<(String, Vec<f32>)>) -> Self {
        TableEmbedder { table, fallback: MockEmbedder::new(dim) }
    }
}

impl Embedder for TableEmbedder {
    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts
            .iter()
            .map(|t| match self.table.iter().find(|(k, _)| k == t) {
                Some((_, v)) => v.clone(),
                None => digest_seeded_vector(t, self.fallback.dim),
            })
            .collect())
    }
}
