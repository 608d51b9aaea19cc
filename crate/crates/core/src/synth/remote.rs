use std::sync::{Condvar, Mutex};
use std::time::Duration;

use image::RgbaImage;

use super::wire::{decode_png_b64, encode_request, SynthesizeReply};
use super::{SynthError, SynthesisRequest, TextureSynthesizer};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/synthesize`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Maximum concurrent requests from this client.
    pub max_in_flight: usize,
    pub bearer_token: Option<String>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(120),
            max_in_flight: 2,
            bearer_token: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// Client for an external depth-conditioned inpainting service.
///
/// Not deterministic: outputs depend on the remote model.
pub struct RemoteBackend {
    config: RemoteConfig,
    url: String,
    client: reqwest::blocking::Client,
    slots: Mutex<usize>,
    freed: Condvar,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("url", &self.url).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Must not be called from inside an async runtime.
    pub fn new(config: RemoteConfig) -> Result<Self, SynthError> {
        let base = reqwest::Url::parse(&config.endpoint)
            .map_err(|e| SynthError::InvalidRequest(format!("endpoint {:?}: {e}", config.endpoint)))?;
        let url = format!("{}/synthesize", base.as_str().trim_end_matches('/'));
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .connect_timeout(config.timeout)
            .build()
            .map_err(|e| SynthError::BackendUnavailable(e.to_string()))?;
        let slots = config.max_in_flight.max(1);
        Ok(RemoteBackend { config, url, client, slots: Mutex::new(slots), freed: Condvar::new() })
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard { backend: self }
    }

    fn classify(&self, e: reqwest::Error) -> SynthError {
        if e.is_timeout() {
            SynthError::Timeout(self.config.timeout.as_millis() as u64)
        } else if e.is_connect() || e.is_request() {
            SynthError::BackendUnavailable(e.to_string())
        } else {
            SynthError::ProtocolError(e.to_string())
        }
    }
}

struct SlotGuard<'a> {
    backend: &'a RemoteBackend,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.backend.slots.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.backend.freed.notify_one();
    }
}

impl TextureSynthesizer for RemoteBackend {
    fn backend_id(&self) -> &str {
        "remote"
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn generate(&self, request: &SynthesisRequest) -> Result<RgbaImage, SynthError> {
        let body = encode_request(request);
        let _slot = self.acquire();
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.config.bearer_token {
            call = call.bearer_auth(token);
        }
        let resp = call.send().map_err(|e| self.classify(e))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            let text = resp.text().unwrap_or_default();
            return Err(SynthError::ProtocolError(format!("status {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let bytes = resp.bytes().map_err(|e| self.classify(e))?;
        let reply: SynthesizeReply =
            serde_json::from_slice(&bytes).map_err(|e| SynthError::ProtocolError(format!("reply body: {e}")))?;
        decode_png_b64(&reply.image_png_b64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_endpoint() {
        assert!(matches!(
            RemoteBackend::new(RemoteConfig::new("not a url")),
            Err(SynthError::InvalidRequest(_))
        ));
    }

    #[test]
    fn unreachable_server() {
        // nothing listens on the discard port of localhost in the sandbox
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let b = RemoteBackend::new(RemoteConfig::new(format!("http://127.0.0.1:{port}")).with_timeout(Duration::from_millis(500)))
            .unwrap();
        let req = super::super::test_support::request(4, 4, vec![1; 16], "x", 0);
        let err = b.generate(&req).unwrap_err();
        assert!(matches!(err, SynthError::BackendUnavailable(_)), "{err:?}");
    }
}
