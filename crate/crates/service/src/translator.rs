//! Translation over HTTP: POST `{text, from, to}`, read `{text}`.

use std::time::Duration;

use penwise::datapipe::{TranslateRequest, TranslateResponse, TranslationClient};
use penwise::Error;

pub struct HttpTranslator {
    endpoint: String,
    retries: usize,
    client: reqwest::blocking::Client,
}

impl HttpTranslator {
    /// `retries` extra attempts follow a failed call.
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: usize) -> penwise::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            retries,
            client,
        })
    }

    fn once(&self, req: &TranslateRequest) -> Result<TranslateResponse, String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(req)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("{} answered {status}", self.endpoint));
        }
        resp.json().map_err(|e| e.to_string())
    }
}

impl TranslationClient for HttpTranslator {
    fn translate(&self, req: &TranslateRequest) -> penwise::Result<TranslateResponse> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.once(req) {
                Ok(r) => return Ok(r),
                Err(e) => last = e,
            }
        }
        Err(Error::Transport(format!("{} attempts failed, last: {last}", self.retries + 1)))
    }
}
