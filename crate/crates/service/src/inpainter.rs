use std::time::Duration;

use convcurate::uttgen::{
    InpaintError, InpaintRequest, InpaintResponse, Inpainter, OneShotRequest, OneShotResponse,
};
use serde::de::DeserializeOwned;

pub const TIMEOUT_ENV: &str = "INPAINT_TIMEOUT_MS";
pub const RETRIES_ENV: &str = "INPAINT_RETRIES";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InpainterSettings {
    /// Per-attempt limit on the whole request.
    pub timeout: Duration,
    /// Extra attempts after a timeout or transport failure.
    pub retries: usize,
}

impl Default for InpainterSettings {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

impl InpainterSettings {
    /// Parses the two environment values, falling back to the defaults for
    /// unset ones.
    pub fn parse(timeout_ms: Option<&str>, retries: Option<&str>) -> Result<Self, String> {
        let mut out = Self::default();
        if let Some(t) = timeout_ms {
            let ms: u64 = t
                .trim()
                .parse()
                .map_err(|_| format!("{TIMEOUT_ENV}: `{t}` is not a whole number"))?;
            if ms == 0 {
                return Err(format!("{TIMEOUT_ENV} must be positive"));
            }
            out.timeout = Duration::from_millis(ms);
        }
        if let Some(r) = retries {
            out.retries = r
                .trim()
                .parse()
                .map_err(|_| format!("{RETRIES_ENV}: `{r}` is not a whole number"))?;
        }
        Ok(out)
    }

    pub fn from_env() -> Result<Self, String> {
        let t = std::env::var(TIMEOUT_ENV).ok();
        let r = std::env::var(RETRIES_ENV).ok();
        Self::parse(t.as_deref(), r.as_deref())
    }
}

/// Blocking JSON-over-HTTP inpainter client. Both modes POST to the same
/// endpoint; the number of null slots tells the server which one is meant.
#[derive(Debug, Clone)]
pub struct HttpInpainter {
    endpoint: String,
    settings: InpainterSettings,
    agent: ureq::Agent,
}

enum Failure {
    Retryable(InpaintError),
    Final(InpaintError),
}

impl HttpInpainter {
    pub fn new(endpoint: impl Into<String>, settings: InpainterSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            settings,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn settings(&self) -> InpainterSettings {
        self.settings
    }

    fn attempt<T: DeserializeOwned>(
        &self,
        body: &InpaintRequest,
        attempts: usize,
    ) -> Result<T, Failure> {
        let transport = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => Failure::Retryable(InpaintError::Timeout { attempts }),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                Failure::Retryable(InpaintError::Timeout { attempts })
            }
            other => Failure::Retryable(InpaintError::Transport {
                attempts,
                message: other.to_string(),
            }),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(transport)?;
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Final(InpaintError::Malformed(e.to_string())))
    }

    fn call<T: DeserializeOwned>(&self, body: &InpaintRequest) -> Result<T, InpaintError> {
        let total = self.settings.retries + 1;
        let mut last = None;
        for attempt in 1..=total {
            match self.attempt(body, attempt) {
                Ok(v) => return Ok(v),
                Err(Failure::Final(e)) => return Err(e),
                Err(Failure::Retryable(e)) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

impl Inpainter for HttpInpainter {
    fn fill(&self, request: &InpaintRequest) -> Result<InpaintResponse, InpaintError> {
        self.call(request)
    }

    fn fill_all(&self, request: &OneShotRequest) -> Result<OneShotResponse, InpaintError> {
        self.call(request)
    }
}
