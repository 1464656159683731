//! Transport seam: how request documents reach a teacher endpoint.
//!
//! The wire format is the common chat-completions JSON schema with
//! `logprobs`/`top_logprobs` enabled, because that is how hosted
//! multimodal judges expose token likelihoods. Everything above this
//! module works against the [`Transport`] trait, so tests and the bundled
//! deterministic mock never touch the network.

use crate::template::{render_pair_prompt, render_point_prompt};
use crate::TeacherError;
use qdistill_core::seed;
use qdistill_core::signals::QualityToken;
use serde_json::{json, Value};
use std::collections::HashSet;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::time::Duration;

/// Transport failures, split by whether a retry can help.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Timeouts, connection resets, 408/429/5xx: retry per policy.
    Transient(String),
    /// Anything a retry cannot fix (auth, bad request, 4xx).
    Permanent(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Transient(m) => write!(f, "transient: {m}"),
            TransportError::Permanent(m) => write!(f, "permanent: {m}"),
        }
    }
}

/// One round trip: a request document in, a response document out.
pub trait Transport: Send + Sync {
    fn send(&self, request: &Value) -> Result<Value, TransportError>;
}

/// How many alternatives to request at the answer position. The five
/// quality words must fit with headroom for formatting variants.
const TOP_LOGPROBS: u32 = 20;

/// Build the point-judgment request: one image part, a text prompt listing
/// the five candidate words, a single answer token with logprobs.
pub fn build_point_request(
    image_ref: &str,
    template: &str,
    model: &str,
) -> Result<Value, TeacherError> {
    let parts = render_point_prompt(template, image_ref)?;
    Ok(request_doc(model, &parts))
}

/// Build the pair-preference request: two image parts (A then B), a text
/// prompt demanding a single A/B token, logprobs enabled.
pub fn build_pair_request(
    image_a: &str,
    image_b: &str,
    template: &str,
    model: &str,
) -> Result<Value, TeacherError> {
    let parts = render_pair_prompt(template, image_a, image_b)?;
    Ok(request_doc(model, &parts))
}

fn request_doc(model: &str, parts: &[(String, bool)]) -> Value {
    let content: Vec<Value> = parts
        .iter()
        .map(|(v, is_image)| {
            if *is_image {
                json!({"type": "image_url", "image_url": {"url": v}})
            } else {
                json!({"type": "text", "text": v})
            }
        })
        .collect();
    json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": 1,
        "temperature": 0,
        "logprobs": true,
        "top_logprobs": TOP_LOGPROBS,
    })
}

/// Environment variable holding the bearer token for the endpoint.
pub const TOKEN_ENV_VAR: &str = "TEACHER_API_TOKEN";

/// Blocking HTTP transport against a chat-completions endpoint.
pub struct HttpTransport {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// Connect to `url`, reading the auth token from `TEACHER_API_TOKEN`
    /// if present.
    pub fn from_env(url: &str, timeout: Duration) -> Result<HttpTransport, TeacherError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TeacherError::Transport(e.to_string()))?;
        Ok(HttpTransport {
            url: url.to_string(),
            token: std::env::var(TOKEN_ENV_VAR).ok(),
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &Value) -> Result<Value, TransportError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            // Connection-level failures are worth retrying.
            TransportError::Transient(e.to_string())
        })?;
        let status = resp.status();
        if status.is_success() {
            resp.json::<Value>()
                .map_err(|e| TransportError::Permanent(format!("response is not JSON: {e}")))
        } else if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            Err(TransportError::Transient(format!("HTTP {status}")))
        } else {
            Err(TransportError::Permanent(format!("HTTP {status}")))
        }
    }
}

/// Deterministic in-process teacher for tests and offline runs.
///
/// Responses are a pure function of the image references inside the
/// request, so repeated harvests produce byte-identical signal files. The
/// mock also tracks how many requests were in flight simultaneously, which
/// lets tests assert the concurrency bound, and can be scripted to fail on
/// chosen image refs.
#[derive(Default)]
pub struct MockTransport {
    delay: Option<Duration>,
    fail_refs: HashSet<String>,
    malformed_refs: HashSet<String>,
    transient_failures_first: u64,
    calls: AtomicU64,
    in_flight: AtomicI64,
    max_in_flight: AtomicI64,
}

impl MockTransport {
    pub fn new() -> MockTransport {
        MockTransport::default()
    }

    /// Sleep this long per request so that parallelism becomes observable.
    pub fn with_delay(mut self, delay: Duration) -> MockTransport {
        self.delay = Some(delay);
        self
    }

    /// Fail permanently on any request whose images include this ref.
    pub fn fail_on(mut self, image_ref: &str) -> MockTransport {
        self.fail_refs.insert(image_ref.to_string());
        self
    }

    /// Return a syntactically valid but unparseable response for this ref.
    pub fn malformed_on(mut self, image_ref: &str) -> MockTransport {
        self.malformed_refs.insert(image_ref.to_string());
        self
    }

    /// Answer the first `n` requests with a transient error, then succeed.
    pub fn transient_failures_first(mut self, n: u64) -> MockTransport {
        self.transient_failures_first = n;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of requests observed in flight at the same time.
    pub fn max_in_flight(&self) -> i64 {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Deterministic pseudo-quality in [1, 5] for an image reference.
    fn quality_of(image_ref: &str) -> f64 {
        let h = seed::derive(0x6d6f636b, image_ref);
        1.0 + 4.0 * ((h % 100_000) as f64 / 99_999.0)
    }
}

fn image_refs(request: &Value) -> Vec<String> {
    let mut refs = Vec::new();
    if let Some(messages) = request["messages"].as_array() {
        for m in messages {
            if let Some(content) = m["content"].as_array() {
                for part in content {
                    if part["type"] == "image_url" {
                        if let Some(url) = part["image_url"]["url"].as_str() {
                            refs.push(url.to_string());
                        }
                    }
                }
            }
        }
    }
    refs
}

fn chat_response(token: &str, top: &[(String, f64)]) -> Value {
    let alts: Vec<Value> = top
        .iter()
        .map(|(t, lp)| json!({"token": t, "logprob": lp}))
        .collect();
    json!({
        "choices": [{
            "message": {"role": "assistant", "content": token},
            "logprobs": {"content": [{
                "token": token,
                "logprob": top.iter().find(|(t, _)| t == token).map(|(_, lp)| *lp).unwrap_or(0.0),
                "top_logprobs": alts,
            }]},
        }]
    })
}

impl Transport for MockTransport {
    fn send(&self, request: &Value) -> Result<Value, TransportError> {
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(current, Ordering::SeqCst);
        let result = self.respond(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

impl MockTransport {
    fn respond(&self, request: &Value) -> Result<Value, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        if n < self.transient_failures_first {
            return Err(TransportError::Transient("scripted transient failure".into()));
        }
        let refs = image_refs(request);
        if refs.iter().any(|r| self.fail_refs.contains(r)) {
            return Err(TransportError::Permanent("scripted permanent failure".into()));
        }
        if refs.iter().any(|r| self.malformed_refs.contains(r)) {
            return Ok(json!({"choices": [{"message": {"content": "Good"}}]}));
        }
        match refs.len() {
            1 => {
                // Point judgment: peaked logprobs around the pseudo-quality.
                let m = Self::quality_of(&refs[0]);
                let mut top: Vec<(String, f64)> = QualityToken::ALL
                    .iter()
                    .map(|t| {
                        let v = t.value() as f64;
                        (t.word().to_string(), -2.0 * (v - m) * (v - m) - 0.05)
                    })
                    .collect();
                top.push(("the".to_string(), -11.5));
                let answer = top
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(t, _)| t.clone())
                    .expect("non-empty");
                Ok(chat_response(&answer, &top))
            }
            2 => {
                let gap = Self::quality_of(&refs[0]) - Self::quality_of(&refs[1]);
                let (la, lb) = (0.75 * gap - 0.35, -0.75 * gap - 0.35);
                let top = vec![("A".to_string(), la), ("B".to_string(), lb)];
                let answer = if la >= lb { "A" } else { "B" };
                Ok(chat_response(answer, &top))
            }
            k => Err(TransportError::Permanent(format!(
                "expected 1 or 2 image parts, got {k}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::PromptTemplates;

    #[test]
    fn point_request_structure() {
        let t = PromptTemplates::default();
        let req = build_point_request("img://1", &t.point, "judge-v1").unwrap();
        let refs = image_refs(&req);
        assert_eq!(refs, vec!["img://1"]);
        assert_eq!(req["max_tokens"], 1);
        assert_eq!(req["logprobs"], true);
        let text = req["messages"][0]["content"]
            .as_array()
            .unwrap()
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        for w in ["excellent", "good", "fair", "poor", "bad"] {
            assert!(text.contains(w));
        }
    }

    #[test]
    fn same_template_different_images_differ_only_in_image_part() {
        let t = PromptTemplates::default();
        let mut r1 = build_point_request("img://1", &t.point, "m").unwrap();
        let mut r2 = build_point_request("img://2", &t.point, "m").unwrap();
        // Blank out the image parts; the rest must be identical.
        for r in [&mut r1, &mut r2] {
            for part in r["messages"][0]["content"].as_array_mut().unwrap() {
                if part["type"] == "image_url" {
                    part["image_url"]["url"] = json!("X");
                }
            }
        }
        assert_eq!(r1, r2);
    }

    #[test]
    fn pair_request_has_two_images_in_order() {
        let t = PromptTemplates::default();
        let req = build_pair_request("img://a", "img://b", &t.pair, "m").unwrap();
        assert_eq!(image_refs(&req), vec!["img://a", "img://b"]);
    }

    #[test]
    fn mock_is_deterministic_per_image() {
        let mock = MockTransport::new();
        let t = PromptTemplates::default();
        let req = build_point_request("img://42", &t.point, "m").unwrap();
        let a = mock.send(&req).unwrap();
        let b = mock.send(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn mock_scripted_failures() {
        let mock = MockTransport::new().fail_on("img://bad");
        let t = PromptTemplates::default();
        let req = build_point_request("img://bad", &t.point, "m").unwrap();
        assert!(matches!(
            mock.send(&req),
            Err(TransportError::Permanent(_))
        ));

        let flaky = MockTransport::new().transient_failures_first(1);
        let req2 = build_point_request("img://ok", &t.point, "m").unwrap();
        assert!(matches!(flaky.send(&req2), Err(TransportError::Transient(_))));
        assert!(flaky.send(&req2).is_ok());
    }
}
