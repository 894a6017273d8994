use std::io::{BufRead, BufReader};
use std::time::Duration;

use reqwest::blocking::{Client as Http, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use sre_core::lifecycle::RuleRecord;
use sre_core::Scalar;
use thiserror::Error;

use crate::problem::Problem;
use crate::server::InstallView;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{}: {}", problem.code, problem.message)]
    Api { status: u16, problem: Problem },
    #[error("cannot reach gateway: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Problem code for API errors.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { problem, .. } => Some(&problem.code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

fn transport(e: reqwest::Error) -> ClientError {
    ClientError::Transport(e.to_string())
}

/// Blocking client for the gateway HTTP API.
#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    /// `addr` is `host:port` or a full `http://` URL.
    pub fn new(addr: &str) -> Self {
        let base = if addr.contains("://") { addr.to_owned() } else { format!("http://{addr}") };
        Self {
            base: base.trim_end_matches('/').to_owned(),
            http: Http::builder().timeout(None).build().expect("http client builds"),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().map_err(transport)?;
        let problem = serde_json::from_str(&text).unwrap_or_else(|_| Problem {
            code: format!("Http{}", status.as_u16()),
            message: text,
            detail: Value::Null,
        });
        Err(ClientError::Api { status: status.as_u16(), problem })
    }

    fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        let resp = Self::check(resp)?;
        let text = resp.text().map_err(transport)?;
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)).send().map_err(transport)?)
    }

    fn post_json<T: DeserializeOwned>(&self, path: &str, body: &Value) -> Result<T, ClientError> {
        let req = self
            .http
            .post(self.url(path))
            .header("content-type", "application/json")
            .body(body.to_string());
        Self::decode(req.send().map_err(transport)?)
    }

    pub fn install(&self, package: Vec<u8>) -> Result<InstallView, ClientError> {
        let req = self
            .http
            .post(self.url("/rules"))
            .header("content-type", "application/zip")
            .body(package);
        Self::decode(req.send().map_err(transport)?)
    }

    pub fn rules(&self) -> Result<Vec<RuleRecord>, ClientError> {
        self.get("/rules")
    }

    pub fn rule(&self, name: &str) -> Result<RuleRecord, ClientError> {
        self.get(&format!("/rules/{name}"))
    }

    pub fn start(&self, name: &str) -> Result<RuleRecord, ClientError> {
        self.post_json(&format!("/rules/{name}/start"), &Value::Null)
    }

    pub fn stop(&self, name: &str) -> Result<RuleRecord, ClientError> {
        self.post_json(&format!("/rules/{name}/stop"), &Value::Null)
    }

    pub fn uninstall(&self, name: &str) -> Result<(), ClientError> {
        let resp = self.http.delete(self.url(&format!("/rules/{name}"))).send().map_err(transport)?;
        Self::check(resp).map(|_| ())
    }

    pub fn set_param(&self, name: &str, key: &str, value: &Scalar) -> Result<RuleRecord, ClientError> {
        let req = self
            .http
            .put(self.url(&format!("/rules/{name}/params/{key}")))
            .header("content-type", "application/json")
            .body(serde_json::to_string(value).expect("scalar serializes"));
        Self::decode(req.send().map_err(transport)?)
    }

    /// Raw query result: `{"things": [...]}`, `{"number": x}` or `{"count": n}`.
    pub fn query(&self, q: &str) -> Result<Value, ClientError> {
        self.post_json("/query", &json!({ "q": q }))
    }

    pub fn things(&self) -> Result<Vec<Value>, ClientError> {
        self.get("/things")
    }

    pub fn thing(&self, id: &str) -> Result<Value, ClientError> {
        self.get(&format!("/things/{id}"))
    }

    /// Opens the event stream. `query` is appended as is, e.g. `devices=false`.
    pub fn events(&self, query: &str) -> Result<EventStream, ClientError> {
        let mut url = self.url("/events");
        if !query.is_empty() {
            url.push('?');
            url.push_str(query);
        }
        let resp = self.http.get(url).send().map_err(transport)?;
        let resp = Self::check(resp)?;
        if resp.status() != StatusCode::OK {
            return Err(ClientError::Decode(format!("event stream answered {}", resp.status())));
        }
        Ok(EventStream { reader: BufReader::new(resp), data: String::new() })
    }

    /// Polls until the gateway answers or `timeout` passes.
    pub fn wait_ready(&self, timeout: Duration) -> Result<(), ClientError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            match self.rules() {
                Ok(_) => return Ok(()),
                Err(e) if std::time::Instant::now() >= deadline => return Err(e),
                Err(_) => std::thread::sleep(Duration::from_millis(25)),
            }
        }
    }
}

/// Server-sent events as JSON values. Heartbeats are skipped.
pub struct EventStream {
    reader: BufReader<Response>,
    data: String,
}

impl Iterator for EventStream {
    type Item = Result<Value, ClientError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut line = String::new();
        loop {
            line.clear();
            match self.reader.read_line(&mut line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(ClientError::Transport(e.to_string()))),
            }
            let l = line.trim_end_matches(['\r', '\n']);
            if let Some(d) = l.strip_prefix("data:") {
                if !self.data.is_empty() {
                    self.data.push('\n');
                }
                self.data.push_str(d.strip_prefix(' ').unwrap_or(d));
            } else if l.is_empty() && !self.data.is_empty() {
                let data = std::mem::take(&mut self.data);
                return Some(serde_json::from_str(&data).map_err(|e| ClientError::Decode(format!("{e}: {data}"))));
            }
        }
    }
}
