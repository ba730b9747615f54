use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::EmbedError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 4, initial_backoff: Duration::from_millis(250), timeout: Duration::from_secs(60) }
    }
}

/// Client for a frozen code encoder served over HTTP.
///
/// `GET /info` returns `{"dim", "model"?}`, `POST /embed` takes
/// `{"texts", "mode": "cls"}` and returns `{"vectors"}`, and
/// `POST /tokenize` takes `{"text"}` and returns `{"tokens"}`.
#[derive(Debug, Clone)]
pub struct EncoderClient {
    agent: Agent,
    base: String,
    retry: RetryPolicy,
    dim: usize,
    model: String,
}

#[derive(Deserialize)]
struct Info {
    dim: usize,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    mode: &'static str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<String>,
}

const BATCH: usize = 64;

impl EncoderClient {
    /// Connects and checks the advertised width against `expected_dim`.
    pub fn connect(endpoint: &str, expected_dim: usize, retry: RetryPolicy) -> Result<Self, EmbedError> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(retry.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let base = endpoint.trim_end_matches('/').to_string();
        let mut client = EncoderClient { agent, base, retry, dim: expected_dim, model: String::new() };
        let info: Info = client.with_retry(|c| {
            c.agent
                .get(format!("{}/info", c.base))
                .call()?
                .body_mut()
                .read_json::<Info>()
        })?;
        if info.dim != expected_dim {
            return Err(EmbedError::DimMismatch { expected: expected_dim, got: info.dim });
        }
        client.model = info.model.unwrap_or_else(|| "encoder".into());
        Ok(client)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Identity used to namespace cached vectors.
    pub fn model_tag(&self) -> String {
        format!("{}@{}/{}", self.model, self.base, self.dim)
    }

    fn with_retry<T>(&self, mut call: impl FnMut(&Self) -> Result<T, ureq::Error>) -> Result<T, EmbedError> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match call(self) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    let retriable = !matches!(e, ureq::Error::StatusCode(c) if (400..500).contains(&c) && c != 429);
                    last = e.to_string();
                    if !retriable {
                        return Err(EmbedError::Transport { attempts: attempt, message: last });
                    }
                    if attempt < attempts {
                        log::warn!("encoder request failed ({last}), retrying in {backoff:?}");
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(EmbedError::Transport { attempts, message: last })
    }

    /// One vector per input text, in order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(BATCH) {
            let resp: EmbedResponse = self.with_retry(|c| {
                c.agent
                    .post(format!("{}/embed", c.base))
                    .send_json(EmbedRequest { texts: chunk, mode: "cls" })?
                    .body_mut()
                    .read_json::<EmbedResponse>()
            })?;
            if resp.vectors.len() != chunk.len() {
                return Err(EmbedError::Protocol(format!(
                    "sent {} texts, received {} vectors",
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch { expected: self.dim, got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::Protocol("non-finite value in vector".into()));
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<String>, EmbedError> {
        let resp: TokenizeResponse = self.with_retry(|c| {
            c.agent
                .post(format!("{}/tokenize", c.base))
                .send_json(TokenizeRequest { text })?
                .body_mut()
                .read_json::<TokenizeResponse>()
        })?;
        Ok(resp.tokens)
    }
}
