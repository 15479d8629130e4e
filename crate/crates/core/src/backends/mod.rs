//! Text-generation and embedding providers.
//!
//! [`Llm`] wraps any [`TextGenerator`] with schema validation, bounded
//! repair retries and an audit log of every call. [`EmbeddingService`]
//! wraps any [`Embedder`] with dimension and normalization checks.

pub mod mock;
pub mod remote;
pub mod schema;

use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest_hex;
use crate::domain::Embedding;
use crate::prompts::unresolved_placeholders;

pub use mock::{Fallback, FixtureEntry, MockEmbedder, MockGenerator, TableEmbedder};
pub use schema::SchemaId;

/// Default number of repair retries after a malformed reply.
pub const DEFAULT_RETRY_BUDGET: usize = 2;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("{template} reply violated {schema:?} after {attempts} attempts: {last_error}")]
    SchemaViolation { template: TemplateId, schema: SchemaId, attempts: usize, last_error: String },
    #[error("no scripted response for a {template} request")]
    Unscripted { template: TemplateId },
    #[error("prompt for {template} still has placeholders {names:?}")]
    UnresolvedPrompt { template: TemplateId, names: Vec<String> },
    #[error("embedding request with no texts")]
    EmptyInput,
    #[error("embedding dimension {got} does not match configured {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend configuration: {0}")]
    Config(String),
}

/// The six model roles of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Extract,
    Merge,
    Track,
    Reason,
    RetrieveFilter,
    Predict,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateId::Extract => "extract",
            TemplateId::Merge => "merge",
            TemplateId::Track => "track",
            TemplateId::Reason => "reason",
            TemplateId::RetrieveFilter => "retrieve_filter",
            TemplateId::Predict => "predict",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenRequest {
    pub template_id: TemplateId,
    pub filled_prompt: String,
    pub expected_schema: SchemaId,
}

impl GenRequest {
    pub fn new(template_id: TemplateId, expected_schema: SchemaId, filled_prompt: String) -> Result<Self, BackendError> {
        let names = unresolved_placeholders(&filled_prompt);
        if !names.is_empty() {
            return Err(BackendError::UnresolvedPrompt { template: template_id, names });
        }
        Ok(GenRequest { template_id, filled_prompt, expected_schema })
    }

    pub fn digest(&self) -> String {
        digest_hex(&self.filled_prompt)
    }
}

/// Raw completion provider.
pub trait TextGenerator: Send + Sync {
    fn complete(&self, req: &GenRequest) -> Result<String, BackendError>;
}

/// Raw embedding provider; vectors need not be normalized.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

/// One generation attempt, kept for audit and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLogEntry {
    pub template_id: TemplateId,
    pub schema: SchemaId,
    pub attempt: usize,
    pub prompt_digest: String,
    pub response: String,
    pub accepted: bool,
}

const REPAIR_NOTE: &str = "\n\nYour previous reply could not be used";

/// Schema-checked generation with repair retries.
pub struct Llm {
    inner: Box<dyn TextGenerator>,
    retry_budget: usize,
    log: Mutex<Vec<GenLogEntry>>,
}

impl Llm {
    pub fn new(inner: Box<dyn TextGenerator>, retry_budget: usize) -> Self {
        Llm { inner, retry_budget, log: Mutex::new(Vec::new()) }
    }

    pub fn retry_budget(&self) -> usize {
        self.retry_budget
    }

    /// Returns the validated JSON reply.
    pub fn generate(&self, req: &GenRequest) -> Result<Value, BackendError> {
        self.generate_with(req, |v| Ok(v.clone()))
    }

    /// Validates the reply against the request schema, then hands it to
    /// `parse`, which may reject it with a message (for example a selection
    /// outside the offered candidates). Rejections are retried with a repair
    /// note up to the retry budget.
    pub fn generate_with<T>(
        &self,
        req: &GenRequest,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, BackendError> {
        let mut prompt_req = req.clone();
        let mut last_error = String::new();
        let attempts = self.retry_budget + 1;
        for attempt in 0..attempts {
            let reply = match self.inner.complete(&prompt_req) {
                Ok(r) => r,
                Err(BackendError::RateLimited) => {
                    last_error = "rate limited".into();
                    continue;
                }
                Err(e) => return Err(e),
            };
            let outcome = schema::extract_json(&reply)
                .and_then(|v| schema::validate(req.expected_schema, &v).map(|_| v))
                .and_then(|v| parse(&v));
            self.record(&prompt_req, attempt, &reply, outcome.is_ok());
            match outcome {
                Ok(t) => return Ok(t),
                Err(e) => {
                    log::debug!("{} reply rejected on attempt {}: {e}", req.template_id, attempt + 1);
                    last_error = e;
                    prompt_req.filled_prompt = format!(
                        "{}{REPAIR_NOTE}: {}. Reply again with only a JSON object in the required format.",
                        req.filled_prompt, last_error
                    );
                }
            }
        }
        if last_error == "rate limited" {
            return Err(BackendError::RateLimited);
        }
        Err(BackendError::SchemaViolation {
            template: req.template_id,
            schema: req.expected_schema,
            attempts,
            last_error,
        })
    }

    fn record(&self, req: &GenRequest, attempt: usize, response: &str, accepted: bool) {
        self.log.lock().expect("generation log poisoned").push(GenLogEntry {
            template_id: req.template_id,
            schema: req.expected_schema,
            attempt,
            prompt_digest: req.digest(),
            response: response.to_string(),
            accepted,
        });
    }

    pub fn log(&self) -> Vec<GenLogEntry> {
        self.log.lock().expect("generation log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("generation log poisoned").len()
    }
}

/// Normalizing, dimension-checked embedding front end.
pub struct EmbeddingService {
    inner: Box<dyn Embedder>,
}

impl EmbeddingService {
    pub fn new(inner: Box<dyn Embedder>) -> Self {
        EmbeddingService { inner }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let raw = self.inner.embed_raw(texts)?;
        if raw.len() != texts.len() {
            return Err(BackendError::Transport(format!("asked for {} embeddings, got {}", texts.len(), raw.len())));
        }
        raw.into_iter()
            .map(|v| {
                if v.len() != self.dim() {
                    return Err(BackendError::DimensionMismatch { expected: self.dim(), got: v.len() });
                }
                Ok(Embedding::new(v))
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, BackendError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

/// Backend settings. Credentials come from the environment variable named
/// by `api_key_env`, never from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub embedding_endpoint: Option<String>,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub retry_budget: usize,
    pub temperature: f64,
    pub api_key_env: String,
    /// Mock only: fixture file, relative to the config file.
    pub fixture: Option<String>,
    pub fallback: Fallback,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: "https://api.deepseek.com/v1".into(),
            model: "deepseek-chat".into(),
            embedding_endpoint: None,
            embedding_model: "bge-m3".into(),
            embedding_dim: 64,
            retry_budget: DEFAULT_RETRY_BUDGET,
            temperature: 0.0,
            api_key_env: "STOCKMEM_API_KEY".into(),
            fixture: None,
            fallback: Fallback::Synthetic,
        }
    }
}

pub struct Backends {
    pub llm: Llm,
    pub embedder: EmbeddingService,
}

impl Backends {
    pub fn new(generator: Box<dyn TextGenerator>, embedder: Box<dyn Embedder>, retry_budget: usize) -> Self {
        Backends { llm: Llm::new(generator, retry_budget), embedder: EmbeddingService::new(embedder) }
    }

    /// Builds backends from config; relative fixture paths resolve against `base_dir`.
    pub fn from_config(cfg: &BackendConfig, base_dir: &Path) -> Result<Self, BackendError> {
        match cfg.kind {
            BackendKind::Mock => {
                let generator = match &cfg.fixture {
                    Some(path) => MockGenerator::from_file(&base_dir.join(path), cfg.fallback)?,
                    None => MockGenerator::new(Vec::new(), cfg.fallback),
                };
                Ok(Self::new(Box::new(generator), Box::new(MockEmbedder::new(cfg.embedding_dim)), cfg.retry_budget))
            }
            BackendKind::Remote => {
                let key = std::env::var(&cfg.api_key_env).ok();
                let generator = remote::RemoteGenerator::new(&cfg.endpoint, &cfg.model, cfg.temperature, key.clone())?;
                let embed_url = cfg.embedding_endpoint.as_deref().unwrap_or(&cfg.endpoint);
                let embedder = remote::RemoteEmbedder::new(embed_url, &cfg.embedding_model, cfg.embedding_dim, key)?;
                Ok(Self::new(Box::new(generator), Box::new(embedder), cfg.retry_budget))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn predict_req() -> GenRequest {
        GenRequest::new(TemplateId::Predict, SchemaId::Predict, "predict".into()).unwrap()
    }

    #[test]
    fn scripted_prediction_echoes() {
        let mock = MockGenerator::new(
            vec![FixtureEntry::new(TemplateId::Predict, "", json!({"Price movement": "up", "Reason for price movement": "r"}))],
            Fallback::None,
        );
        let llm = Llm::new(Box::new(mock), 2);
        let v = llm.generate(&predict_req()).unwrap();
        assert_eq!(v["Price movement"], "up");
        assert_eq!(llm.call_count(), 1);
    }

    #[test]
    fn malformed_reply_exhausts_budget() {
        let bad = json!({"Reason for price movement": "r"});
        let mock = MockGenerator::new(vec![FixtureEntry::new(TemplateId::Predict, "", bad).times(3)], Fallback::None);
        let llm = Llm::new(Box::new(mock), 2);
        match llm.generate(&predict_req()) {
            Err(BackendError::SchemaViolation { attempts, last_error, .. }) => {
                assert_eq!(attempts, 3);
                assert!(last_error.contains("Price movement"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let log = llm.log();
        assert_eq!(log.len(), 3);
        assert!(log.iter().all(|e| !e.accepted));
        // repair attempts carry a different prompt
        assert_ne!(log[0].prompt_digest, log[1].prompt_digest);
    }

    #[test]
    fn one_repair_then_success() {
        let mock = MockGenerator::new(
            vec![
                FixtureEntry::new(TemplateId::Predict, "", json!("garbage")).times(1),
                FixtureEntry::new(TemplateId::Predict, "could not be used", json!({"Price movement": "down", "Reason for price movement": "r"})),
            ],
            Fallback::None,
        );
        let llm = Llm::new(Box::new(mock), 2);
        assert_eq!(llm.generate(&predict_req()).unwrap()["Price movement"], "down");
        assert_eq!(llm.call_count(), 2);
    }

    #[test]
    fn semantic_rejection_is_retried() {
        let mock = MockGenerator::new(vec![FixtureEntry::new(TemplateId::Predict, "", json!({"Price movement": "sideways", "Reason for price movement": "r"}))], Fallback::None);
        let llm = Llm::new(Box::new(mock), 1);
        let out = llm.generate_with(&predict_req(), |v| match v["Price movement"].as_str() {
            Some("up") | Some("down") => Ok(()),
            _ => Err("direction must be up or down".into()),
        });
        assert!(matches!(out, Err(BackendError::SchemaViolation { attempts: 2, .. })));
    }

    struct Flaky(Mutex<usize>);

    impl TextGenerator for Flaky {
        fn complete(&self, _: &GenRequest) -> Result<String, BackendError> {
            let mut n = self.0.lock().unwrap();
            *n += 1;
            if *n == 1 {
                Err(BackendError::RateLimited)
            } else {
                Ok(r#"{"Price movement": "up", "Reason for price movement": "r"}"#.into())
            }
        }
    }

    #[test]
    fn rate_limit_is_retryable() {
        let llm = Llm::new(Box::new(Flaky(Mutex::new(0))), 2);
        assert!(llm.generate(&predict_req()).is_ok());
        let llm = Llm::new(Box::new(Flaky(Mutex::new(0))), 0);
        assert_eq!(llm.generate(&predict_req()), Err(BackendError::RateLimited));
    }

    #[test]
    fn unresolved_prompt_rejected() {
        assert!(matches!(
            GenRequest::new(TemplateId::Predict, SchemaId::Predict, "{stock} x".into()),
            Err(BackendError::UnresolvedPrompt { .. })
        ));
    }

    #[test]
    fn embedding_service_contract() {
        let svc = EmbeddingService::new(Box::new(MockEmbedder::new(32)));
        assert_eq!(svc.embed(&[]), Err(BackendError::EmptyInput));
        let out = svc.embed(&["abc".into(), "abc".into()]).unwrap();
        assert!((out[0].norm() - 1.0).abs() < 1e-6);
        assert!((out[0].cosine(&out[1]) - 1.0).abs() < 1e-6);

        struct Wrong;
        impl Embedder for Wrong {
            fn dim(&self) -> usize {
                4
            }
            fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
                Ok(texts.iter().map(|_| vec![1.0; 3]).collect())
            }
        }
        let svc = EmbeddingService::new(Box::new(Wrong));
        assert_eq!(svc.embed(&["x".into()]), Err(BackendError::DimensionMismatch { expected: 4, got: 3 }));
    }
}
