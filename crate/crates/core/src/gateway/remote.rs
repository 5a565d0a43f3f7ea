use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{DetectorBackend, DetectorTag, GatewayError, PointResponse, Result, WireRequest};
use crate::render::RenderedView;

pub const DETECTOR_URL_ENV: &str = "ZEROKEY_DETECTOR_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL; falls back to `ZEROKEY_DETECTOR_URL` when empty.
    pub url: String,
    pub path: String,
    pub bearer_token: Option<String>,
    pub timeout_secs: f64,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            path: "/point".into(),
            bearer_token: None,
            timeout_secs: 60.0,
            attempts: 3,
            backoff_ms: 250,
            max_in_flight: 8,
        }
    }
}

impl RemoteConfig {
    pub fn endpoint(&self) -> Result<String> {
        let base = if self.url.is_empty() {
            std::env::var(DETECTOR_URL_ENV)
                .map_err(|_| GatewayError::EndpointUnreachable(format!("no detector URL configured and {DETECTOR_URL_ENV} unset")))?
        } else {
            self.url.clone()
        };
        Ok(join_url(&base, &self.path))
    }
}

fn join_url(base: &str, path: &str) -> String {
    if path.is_empty() {
        return base.to_string();
    }
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// Blocking HTTP client shared by the detector and the namer.
#[derive(Debug, Clone)]
pub(crate) struct WireClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    timeout: Duration,
    attempts: u32,
    backoff: Duration,
}

impl WireClient {
    pub(crate) fn new(config: &RemoteConfig) -> Result<Self> {
        let timeout = Duration::from_secs_f64(config.timeout_secs.max(0.001));
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::EndpointUnreachable(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint()?,
            token: config.bearer_token.clone(),
            timeout,
            attempts: config.attempts.max(1),
            backoff: Duration::from_millis(config.backoff_ms),
        })
    }

    /// POSTs `{image, prompt}` and returns the raw body of a 2xx response.
    /// Connection failures, timeouts and 5xx answers are retried with
    /// exponential backoff.
    pub(crate) fn post(&self, view: &RenderedView, prompt: &str) -> Result<String> {
        let body = WireRequest {
            image: base64::engine::general_purpose::STANDARD.encode(view.png_bytes()),
            prompt: prompt.to_string(),
        };
        let mut last = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.post_once(&body) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() => {
                    log::warn!("detector attempt {} of {} failed: {e}", attempt + 1, self.attempts);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn post_once(&self, body: &WireRequest) -> Result<String> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| self.classify(e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| self.classify(e))?;
        if status.is_server_error() {
            return Err(GatewayError::EndpointUnreachable(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(GatewayError::ProtocolError {
                reason: format!("HTTP {status}"),
                payload: text,
            });
        }
        Ok(text)
    }

    fn classify(&self, e: reqwest::Error) -> GatewayError {
        if e.is_timeout() {
            GatewayError::Timeout(self.timeout)
        } else {
            GatewayError::EndpointUnreachable(e.to_string())
        }
    }
}

pub(crate) fn decode<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| GatewayError::ProtocolError {
        reason: e.to_string(),
        payload: text.to_string(),
    })
}

/// Detector speaking the JSON point protocol over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    client: WireClient,
}

impl RemoteDetector {
    pub fn new(config: &RemoteConfig) -> Result<Self> {
        Ok(Self {
            client: WireClient::new(config)?,
        })
    }
}

impl DetectorBackend for RemoteDetector {
    fn point(&self, view: &RenderedView, prompt: &str) -> Result<PointResponse> {
        decode(&self.client.post(view, prompt)?)
    }

    fn tag(&self) -> DetectorTag {
        DetectorTag::Remote
    }
}
