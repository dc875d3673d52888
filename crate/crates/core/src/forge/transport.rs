use std::time::Duration;

use super::ForgeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    /// Header names are lowercase.
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn json(status: u16, body: &serde_json::Value) -> Self {
        HttpResponse { status, headers: Vec::new(), body: serde_json::to_vec(body).expect("json value serializes") }
    }
}

/// Performs one GET request. `url` is absolute.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, ForgeError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ForgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("commitshield/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| ForgeError::Transport(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, ForgeError> {
        let mut req = self
            .client
            .get(url)
            .header("Accept", "application/vnd.github+json")
            .header("X-GitHub-Api-Version", "2022-11-28");
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| ForgeError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_ascii_lowercase(), v.to_str().ok()?.to_string())))
            .collect();
        let body = resp.bytes().map_err(|e| ForgeError::Transport(e.to_string()))?.to_vec();
        Ok(HttpResponse { status, headers, body })
    }
}

/// Fails every request. Installed in offline mode so an accidental network
/// path surfaces as an error instead of a connection.
pub struct NoNetwork;

impl Transport for NoNetwork {
    fn get(&self, url: &str, _token: Option<&str>) -> Result<HttpResponse, ForgeError> {
        Err(ForgeError::NetworkAttempted(url.to_string()))
    }
}
