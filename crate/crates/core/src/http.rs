//! Blocking JSON-over-HTTP with bounded exponential backoff, shared by the
//! remote embedding and annotation providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_s: 0.5,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts < 1 {
            return Err(Error::Config("retry.max_attempts must be >= 1".into()));
        }
        if !(self.base_backoff_s >= 0.0 && self.base_backoff_s.is_finite()) {
            return Err(Error::Config("retry.base_backoff_s must be >= 0".into()));
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2f64.powi(attempt.saturating_sub(1).min(16) as i32);
        Duration::from_secs_f64(self.base_backoff_s * factor)
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
    retry: RetryPolicy,
}

impl JsonClient {
    pub(crate) fn new(endpoint: String, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        JsonClient {
            agent,
            endpoint,
            retry,
        }
    }

    /// POSTs `body` and decodes the response, retrying transport failures and
    /// non-2xx statuses. A response that fails to decode is not retried.
    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.agent.post(&self.endpoint).send_json(body) {
                Ok(mut response) => {
                    return response
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| Error::Protocol(format!("malformed response body: {e}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Provider {
            attempts: self.retry.max_attempts,
            message: last,
        })
    }
}
