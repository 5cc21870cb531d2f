//! Black-box scoring over HTTP.
//!
//! Request: `POST <endpoint>` with JSON body `{"image": "<base64 PNG>"}`.
//! Reply: `{"score": <number in [0,1]>}` or `{"error": "no_face"}`.

use std::io::Cursor;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::Deserialize;

use super::{Classifier, GenderScore, ModelError, Result};
use crate::imaging::RasterImage;

/// Environment variable holding the default scoring endpoint.
pub const ENDPOINT_ENV: &str = "SKIN_AUDIT_ENDPOINT";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Total attempts per image, including the first.
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            max_attempts: 4,
            base_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(2),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(ENDPOINT_ENV).ok().map(Self::new)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.base_backoff
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_backoff)
    }
}

#[derive(Deserialize)]
struct Reply {
    score: Option<f64>,
    error: Option<String>,
}

/// Counting semaphore bounding concurrent requests.
struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

pub struct RemoteClassifier {
    config: RemoteConfig,
    agent: ureq::Agent,
    permits: Permits,
}

enum Attempt {
    Retry(ModelError),
    Fatal(ModelError),
}

impl RemoteClassifier {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits {
            free: Mutex::new(config.max_in_flight.max(1)),
            cond: Condvar::new(),
        };
        Self {
            config,
            agent,
            permits,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn encode(img: &RasterImage) -> Result<String> {
        let mut png = Vec::new();
        img.to_rgb8()
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| ModelError::Transport(format!("png encode: {e}")))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        Ok(serde_json::json!({ "image": b64 }).to_string())
    }

    fn attempt(&self, body: &str) -> std::result::Result<GenderScore, Attempt> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(ModelError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(ModelError::Transport(e.to_string())))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(ModelError::Transport(format!(
                "HTTP {status}"
            ))));
        }
        parse_reply(status, &text).map_err(Attempt::Fatal)
    }
}

/// Interprets a non-retryable reply.
pub(crate) fn parse_reply(status: u16, text: &str) -> Result<GenderScore> {
    let reply: Reply = serde_json::from_str(text)
        .map_err(|e| ModelError::MalformedReply(format!("HTTP {status}: {e}")))?;
    match (reply.score, reply.error.as_deref()) {
        (_, Some("no_face")) => Err(ModelError::NoFace),
        (_, Some(other)) => Err(ModelError::MalformedReply(format!(
            "HTTP {status}: error {other:?}"
        ))),
        (Some(s), None) if status < 300 => {
            GenderScore::new(s).map_err(|_| ModelError::MalformedReply(format!("score {s}")))
        }
        _ => Err(ModelError::MalformedReply(format!(
            "HTTP {status}: no score"
        ))),
    }
}

impl Classifier for RemoteClassifier {
    fn score(&self, img: &RasterImage) -> Result<GenderScore> {
        let body = Self::encode(img)?;
        let _permit = self.permits.acquire();
        let mut last = ModelError::Transport("no attempt made".into());
        for attempt in 0..self.config.max_attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.config.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(s) => return Ok(s),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => last = e,
            }
        }
        Err(last)
    }
}
