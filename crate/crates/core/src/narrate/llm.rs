use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{NarrateError, NarrationRecord, PromptPayload, Provenance};

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "HOD_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Full URL of an OpenAI-compatible chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub seed: u64,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff: Duration::from_millis(250),
            max_in_flight: 4,
            seed: 0,
        }
    }
}

pub struct LlmClient {
    cfg: LlmConfig,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Attempt {
    Retry(NarrateError),
    Fatal(NarrateError),
}

impl LlmClient {
    pub fn new(cfg: LlmConfig) -> Result<Self, NarrateError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| NarrateError::Transport {
                endpoint: cfg.endpoint.clone(),
                message: e.to_string(),
            })?;
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self { cfg, http, api_key })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    fn attempt(&self, prompt: &str) -> Result<String, Attempt> {
        let endpoint = &self.cfg.endpoint;
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "seed": self.cfg.seed,
        });
        let mut req = self.http.post(endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            Attempt::Retry(NarrateError::Transport {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })
        })?;
        let status = resp.status();
        if !status.is_success() {
            let err = NarrateError::Endpoint {
                endpoint: endpoint.clone(),
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let completion: Completion = resp.json().map_err(|e| {
            Attempt::Fatal(NarrateError::Transport {
                endpoint: endpoint.clone(),
                message: format!("malformed completion: {e}"),
            })
        })?;
        let text = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        if text.is_empty() {
            return Err(Attempt::Fatal(NarrateError::EmptyResponse(endpoint.clone())));
        }
        Ok(text)
    }

    /// Sends the flat prompt as one user message, retrying transport
    /// failures and 5xx/429 responses with exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<String, NarrateError> {
        let mut delay = self.cfg.backoff;
        let mut tries = 0;
        loop {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if tries >= self.cfg.max_retries {
                        return Err(e);
                    }
                    log::warn!("llm request failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
            }
        }
    }

    pub fn rephrase(&self, p: &PromptPayload) -> Result<NarrationRecord, NarrateError> {
        let enriched = self.complete(&p.flat)?;
        Ok(NarrationRecord {
            clip_id: p.clip_id.clone(),
            original: p.original_narration.clone(),
            enriched,
            provenance: Provenance::ExternalLlm(self.cfg.endpoint.clone()),
            generator_seed: self.cfg.seed,
        })
    }

    /// Runs up to `max_in_flight` requests concurrently; results come back
    /// in input order.
    pub fn rephrase_all(&self, payloads: &[PromptPayload]) -> Vec<Result<NarrationRecord, NarrateError>> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.max_in_flight.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| payloads.par_iter().map(|p| self.rephrase(p)).collect())
    }
}

/// One-shot convenience wrapper around [`LlmClient`].
pub fn rephrase_llm(p: &PromptPayload, cfg: &LlmConfig) -> Result<NarrationRecord, NarrateError> {
    LlmClient::new(cfg.clone())?.rephrase(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves canned HTTP responses, one per connection, and counts hits.
    fn serve(responses: Vec<(u16, String, Duration)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { break };
                counter.fetch_add(1, Ordering::SeqCst);
                let (status, body, delay) = responses[i.min(responses.len() - 1)].clone();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut buf = vec![0; len];
                let _ = reader.read_exact(&mut buf);
                std::thread::sleep(delay);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (url, hits)
    }

    fn payload() -> PromptPayload {
        PromptPayload {
            clip_id: "c1".into(),
            system_prompt: String::new(),
            category_lines: vec![],
            original_narration: "C takes a cup".into(),
            closing_instruction: String::new(),
            left_contact: vec![],
            right_contact: vec![],
            flat: "prompt".into(),
        }
    }

    fn cfg(url: &str) -> LlmConfig {
        let mut c = LlmConfig::new(url, "mock");
        c.backoff = Duration::from_millis(5);
        c.timeout = Duration::from_secs(5);
        c
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    #[test]
    fn mock_round_trip() {
        let (url, _) = serve(vec![(200, ok_body("The left hand moves up."), Duration::ZERO)]);
        let p = payload();
        let before = p.clone();
        let r = rephrase_llm(&p, &cfg(&url)).unwrap();
        assert_eq!(r.enriched, "The left hand moves up.");
        assert_eq!(r.provenance, Provenance::ExternalLlm(url));
        assert_eq!(r.original, "C takes a cup");
        assert_eq!(p, before);
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let (url, hits) = serve(vec![(500, "boom".into(), Duration::ZERO)]);
        let err = rephrase_llm(&payload(), &cfg(&url)).unwrap_err();
        assert!(matches!(err, NarrateError::Endpoint { status: 500, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let (url, hits) = serve(vec![
            (503, "busy".into(), Duration::ZERO),
            (200, ok_body("done"), Duration::ZERO),
        ]);
        assert_eq!(rephrase_llm(&payload(), &cfg(&url)).unwrap().enriched, "done");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = serve(vec![(401, "no".into(), Duration::ZERO)]);
        assert!(matches!(
            rephrase_llm(&payload(), &cfg(&url)),
            Err(NarrateError::Endpoint { status: 401, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_completion() {
        let (url, _) = serve(vec![(200, ok_body("  "), Duration::ZERO)]);
        assert!(matches!(
            rephrase_llm(&payload(), &cfg(&url)),
            Err(NarrateError::EmptyResponse(_))
        ));
    }

    #[test]
    fn timeout_is_a_transport_error() {
        let (url, _) = serve(vec![(200, ok_body("late"), Duration::from_millis(800))]);
        let mut c = cfg(&url);
        c.timeout = Duration::from_millis(100);
        c.max_retries = 0;
        assert!(matches!(
            rephrase_llm(&payload(), &c),
            Err(NarrateError::Transport { .. })
        ));
    }

    #[test]
    fn batch_preserves_input_order() {
        let responses = (0..6)
            .map(|i| (200, ok_body("ok"), Duration::from_millis(((6 - i) * 10) as u64)))
            .collect();
        let (url, _) = serve(responses);
        let client = LlmClient::new(cfg(&url)).unwrap();
        let payloads: Vec<_> = (0..6)
            .map(|i| PromptPayload {
                clip_id: format!("c{i}"),
                ..payload()
            })
            .collect();
        let ids: Vec<_> = client
            .rephrase_all(&payloads)
            .into_iter()
            .map(|r| r.unwrap().clip_id)
            .collect();
        assert_eq!(ids, ["c0", "c1", "c2", "c3", "c4", "c5"]);
    }
}
