//! Minimal JSON-over-HTTP plumbing shared by the remote embedder and the
//! remote chat backend.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Environment variable holding the bearer token for remote services.
pub const API_KEY_ENV: &str = "TRAFFIC_RAG_API_KEY";

/// Default cap on concurrent requests to one remote service.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("request timed out")]
    Timeout,
}

/// Sends a JSON POST and returns the raw reply. Non-2xx statuses are
/// replies, not errors; only transport-level failures are errors.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &serde_json::Value, bearer: Option<&str>)
        -> Result<HttpReply, TransportError>;
}

/// Blocking transport backed by `ureq`.
#[derive(Clone)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        UreqTransport { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
        bearer: Option<&str>,
    ) -> Result<HttpReply, TransportError> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let payload = body.to_string();
        match req.send_string(&payload) {
            Ok(resp) => {
                let status = resp.status();
                let body = resp
                    .into_string()
                    .map_err(|e| TransportError::Connection(e.to_string()))?;
                Ok(HttpReply { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(HttpReply {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Connection(msg))
                }
            }
        }
    }
}

/// Reads the API key from the environment, ignoring empty values.
pub fn api_key_from_env() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|s| !s.is_empty())
}

pub(crate) fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}{}", endpoint.trim_end_matches('/'), path)
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        InFlightLimit {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.limit.active.lock().unwrap();
        *active -= 1;
        self.limit.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn limit_caps_concurrency() {
        let limit = Arc::new(InFlightLimit::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limit, current, peak) = (limit.clone(), current.clone(), peak.clone());
                s.spawn(move || {
                    let _g = limit.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn join_url_strips_trailing_slash() {
        assert_eq!(join_url("http://h:1/", "/embed"), "http://h:1/embed");
        assert_eq!(join_url("http://h:1", "/v1/chat"), "http://h:1/v1/chat");
    }
}
