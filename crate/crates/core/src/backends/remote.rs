//! HTTP backends speaking the OpenAI-compatible chat-completions and
//! embeddings protocol (served by DeepSeek, vLLM, Ollama and most gateways).

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendError, Embedder, GenRequest, TextGenerator};

fn client(timeout_secs: u64) -> Result<Client, BackendError> {
    Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

fn post(client: &Client, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    if status == StatusCode::TOO_MANY_REQUESTS {
        return Err(BackendError::RateLimited);
    }
    let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(BackendError::Transport(format!("{url}: HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Transport(format!("{url}: bad JSON body: {e}")))
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

pub struct RemoteGenerator {
    client: Client,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl RemoteGenerator {
    pub fn new(base_url: &str, model: &str, temperature: f64, api_key: Option<String>) -> Result<Self, BackendError> {
        Ok(RemoteGenerator {
            client: client(300)?,
            url: endpoint(base_url, "chat/completions"),
            model: model.to_string(),
            temperature,
            api_key,
        })
    }
}

pub fn chat_body(model: &str, temperature: f64, prompt: &str) -> Value {
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [{ "role": "user", "content": prompt }],
    })
}

pub fn parse_chat_response(v: &Value) -> Result<String, BackendError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Transport("chat response has no choices[0].message.content".into()))
}

impl TextGenerator for RemoteGenerator {
    fn complete(&self, req: &GenRequest) -> Result<String, BackendError> {
        let body = chat_body(&self.model, self.temperature, &req.filled_prompt);
        parse_chat_response(&post(&self.client, &self.url, self.api_key.as_deref(), &body)?)
    }
}

pub struct RemoteEmbedder {
    client: Client,
    url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, model: &str, dim: usize, api_key: Option<String>) -> Result<Self, BackendError> {
        Ok(RemoteEmbedder {
            client: client(120)?,
            url: endpoint(base_url, "embeddings"),
            model: model.to_string(),
            dim,
            api_key,
        })
    }
}

pub fn parse_embedding_response(v: &Value, expected: usize) -> Result<Vec<Vec<f32>>, BackendError> {
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Transport("embedding response has no data list".into()))?;
    if data.len() != expected {
        return Err(BackendError::Transport(format!("asked for {expected} embeddings, got {}", data.len())));
    }
    let mut rows: Vec<(usize, Vec<f32>)> = data
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let index = item.get("index").and_then(Value::as_u64).map_or(i, |n| n as usize);
            let vector = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| BackendError::Transport("embedding item without vector".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| BackendError::Transport("non-numeric embedding component".into()))?;
            Ok((index, vector))
        })
        .collect::<Result<_, BackendError>>()?;
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        parse_embedding_response(&post(&self.client, &self.url, self.api_key.as_deref(), &body)?, texts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_round_trip_shapes() {
        let body = chat_body("m", 0.0, "hello");
        assert_eq!(body["messages"][0]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        let resp = json!({"choices": [{"message": {"role": "assistant", "content": "{\"a\":1}"}}]});
        assert_eq!(parse_chat_response(&resp).unwrap(), "{\"a\":1}");
        assert!(parse_chat_response(&json!({})).is_err());
    }

    #[test]
    fn embedding_rows_follow_index() {
        let resp = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]},
        ]});
        let rows = parse_embedding_response(&resp, 2).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(parse_embedding_response(&resp, 3).is_err());
    }

    #[test]
    fn endpoint_join() {
        assert_eq!(endpoint("http://h/v1/", "embeddings"), "http://h/v1/embeddings");
    }
}
