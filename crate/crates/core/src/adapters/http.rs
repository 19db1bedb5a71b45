//! Chat-completion backend over HTTP.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{estimate_tokens, Backend, BackendError, BackendReply, BackendRequest, HttpBackendConfig};

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: String,
    agent: Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Done(Result<BackendReply, BackendError>),
    Transient(BackendError),
}

impl HttpBackend {
    /// Reads the credential from the configured environment variable; no
    /// network traffic happens here.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.endpoint.trim().is_empty() {
            return Err(BackendError::Config("endpoint is empty".into()));
        }
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| {
                BackendError::Config(format!("credential variable `{}` is not set", config.api_key_env))
            })?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend { config, api_key, agent })
    }

    fn body(&self, req: &BackendRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        body[self.config.fields.max_tokens_field.as_str()] = json!(req.max_output_tokens);
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn attempt(&self, req: &BackendRequest, body: &Value) -> Attempt {
        let sent = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut resp = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Transient(BackendError::Timeout),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                return Attempt::Transient(BackendError::Transport(e.to_string()))
            }
            Err(e) => return Attempt::Done(Err(BackendError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Done(Err(BackendError::Auth { status })),
            429 => return Attempt::Done(Err(BackendError::RateLimit)),
            500..=599 => return Attempt::Transient(BackendError::Transport(format!("server status {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Attempt::Done(Err(BackendError::Protocol(format!("status {status}: {text}"))));
            }
        }
        let value: Value = match resp.body_mut().read_json() {
            Ok(v) => v,
            Err(ureq::Error::Timeout(_)) => return Attempt::Transient(BackendError::Timeout),
            Err(e) => return Attempt::Done(Err(BackendError::Protocol(format!("response is not JSON: {e}")))),
        };
        Attempt::Done(self.parse(req, &value))
    }

    fn parse(&self, req: &BackendRequest, value: &Value) -> Result<BackendReply, BackendError> {
        let f = &self.config.fields;
        let text = value
            .pointer(&f.content)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol(format!("response has no string at `{}`", f.content)))?
            .to_string();
        let tokens_in = value
            .pointer(&f.tokens_in)
            .and_then(Value::as_u64)
            .unwrap_or_else(|| estimate_tokens(&req.prompt));
        let tokens_out = value
            .pointer(&f.tokens_out)
            .and_then(Value::as_u64)
            .unwrap_or_else(|| estimate_tokens(&text));
        let finish = value.pointer(&f.finish_reason).and_then(Value::as_str);
        let truncated = finish == Some(f.truncated_value.as_str())
            || tokens_out > u64::from(req.max_output_tokens);
        Ok(BackendReply { text, tokens_in, tokens_out, truncated })
    }
}

impl Backend for HttpBackend {
    /// One retry on connection failures, timeouts and 5xx statuses.
    fn complete(&mut self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        let body = self.body(req);
        let mut last = None;
        for _ in 0..2 {
            match self.attempt(req, &body) {
                Attempt::Done(r) => return r,
                Attempt::Transient(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
