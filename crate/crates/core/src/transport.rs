//! One-shot JSON request/response over HTTP, shared by every remote provider.

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

/// Posts a JSON body to an endpoint and returns the decoded JSON response.
///
/// Implementations must be safe to call from several threads at once.
pub trait JsonTransport: Send + Sync {
    fn post_json(&self, endpoint: &str, body: &Value, bearer: Option<&str>) -> Result<Value>;
}

/// Blocking HTTP client, built on first use.
///
/// The underlying client owns a private runtime, so it must be created and
/// dropped outside async contexts; deferring construction lets an idle
/// transport live anywhere.
pub struct HttpTransport {
    timeout: Duration,
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport { timeout, client: OnceLock::new() }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let built = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        Ok(self.client.get_or_init(|| built))
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(120))
    }
}

impl JsonTransport for HttpTransport {
    fn post_json(&self, endpoint: &str, body: &Value, bearer: Option<&str>) -> Result<Value> {
        let mut req = self.client()?.post(endpoint).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Error::ProviderUnavailable(format!("{endpoint}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::ProviderUnavailable(format!("{endpoint}: HTTP {status}")));
        }
        resp.json::<Value>()
            .map_err(|e| Error::ProviderUnavailable(format!("{endpoint}: bad response body: {e}")))
    }
}
