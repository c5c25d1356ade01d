use std::io::Write;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{TranslationRequest, CORE_TRANSLATION_PROMPT};

/// A failure to obtain any translation from the backend.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// Maps one request to translated text.
pub trait TranslationBackend: Send + Sync {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError>;
}

impl<T: TranslationBackend + ?Sized> TranslationBackend for &T {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        (**self).translate(request)
    }
}

impl<T: TranslationBackend + ?Sized> TranslationBackend for Box<T> {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        (**self).translate(request)
    }
}

/// Returns the source text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

impl TranslationBackend for IdentityBackend {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        Ok(request.text.clone())
    }
}

/// Runs an external program per request: source text on stdin, translation on stdout.
///
/// The rendered instruction and language codes are passed as
/// `HALDETECT_INSTRUCTION`, `HALDETECT_SOURCE_LANG`, `HALDETECT_TARGET_LANG`
/// and `HALDETECT_KIND`. A non-zero exit is a backend failure.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    program: String,
    args: Vec<String>,
}

impl CommandBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Splits a command line on whitespace; no shell quoting.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

impl TranslationBackend for CommandBackend {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .env("HALDETECT_INSTRUCTION", request.instruction())
            .env("HALDETECT_SOURCE_LANG", &request.source_lang)
            .env("HALDETECT_TARGET_LANG", &request.target_lang)
            .env("HALDETECT_KIND", request.kind.as_str())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| BackendError(format!("cannot spawn {:?}: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let text = request.text.clone();
        let writer = std::thread::spawn(move || stdin.write_all(text.as_bytes()));
        let output = child
            .wait_with_output()
            .map_err(|e| BackendError(format!("{:?}: {e}", self.program)))?;
        let _ = writer.join();
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(BackendError(format!(
                "{:?} exited with {}: {}",
                self.program,
                output.status,
                stderr.trim()
            )));
        }
        String::from_utf8(output.stdout)
            .map_err(|_| BackendError(format!("{:?} wrote non-UTF-8 output", self.program)))
    }
}

/// Transport settings for an OpenAI-compatible chat-completions server (e.g. vLLM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    /// Full URL of the chat completions route, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
    /// Environment variable holding a bearer token, if the server wants one.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError(format!("http client: {e}")))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }
}

impl TranslationBackend for HttpBackend {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.instruction()},
                {"role": "user", "content": request.text},
            ],
        });
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req
            .send()
            .map_err(|e| BackendError(format!("{}: {e}", self.config.endpoint)))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(BackendError(format!(
                "{} returned {status}: {}",
                self.config.endpoint,
                text.chars().take(200).collect::<String>()
            )));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| BackendError(format!("unreadable response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError("response has no message content".into()))?;
        // chat models pad their output with newlines; keep the source's own edges
        if request.text.trim() == request.text {
            Ok(content.trim().to_string())
        } else {
            Ok(content)
        }
    }
}

/// Template text used by the built-in backends.
pub(crate) fn instruction_for(source_lang: &str, target_lang: &str) -> String {
    CORE_TRANSLATION_PROMPT.render(source_lang, target_lang)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagproto::TextKind;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;

    fn request(text: &str) -> TranslationRequest {
        TranslationRequest::new(text, "en", "tr", TextKind::Answer).unwrap()
    }

    #[test]
    fn identity_returns_input() {
        assert_eq!(IdentityBackend.translate(&request("a<HAL>b</HAL>")).unwrap(), "a<HAL>b</HAL>");
    }

    #[cfg(unix)]
    #[test]
    fn command_backend_pipes_text() {
        let b = CommandBackend::from_command_line("tr a-z A-Z").unwrap();
        assert_eq!(b.translate(&request("ab<HAL>c</HAL>")).unwrap(), "AB<HAL>C</HAL>");
        let b = CommandBackend::from_command_line("false").unwrap();
        assert!(b.translate(&request("x")).is_err());
        let b = CommandBackend::from_command_line("/nonexistent/translator").unwrap();
        assert!(b.translate(&request("x")).is_err());
    }

    fn serve_once(status: &'static str, body: String) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
            }
            let mut req_body = vec![0; content_length];
            reader.read_exact(&mut req_body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8(req_body).unwrap()
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    #[test]
    fn http_backend_posts_chat_request() {
        let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "\nMerhaba <HAL>dünya</HAL>\n"}}]}).to_string();
        let (endpoint, server) = serve_once("200 OK", body);
        let backend = HttpBackend::new(HttpBackendConfig {
            endpoint,
            model: "translator".into(),
            timeout_secs: 10,
            temperature: 0.0,
            api_key_env: None,
        })
        .unwrap();
        let out = backend.translate(&request("Hello <HAL>world</HAL>")).unwrap();
        assert_eq!(out, "Merhaba <HAL>dünya</HAL>");
        let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()).unwrap();
        assert_eq!(sent["model"], "translator");
        assert_eq!(sent["messages"][1]["content"], "Hello <HAL>world</HAL>");
        assert!(sent["messages"][0]["content"]
            .as_str()
            .unwrap()
            .starts_with("Translate the following text from en to tr."));
    }

    #[test]
    fn http_backend_surfaces_server_errors() {
        let (endpoint, server) = serve_once("503 Service Unavailable", "{\"error\":\"busy\"}".into());
        let backend = HttpBackend::new(HttpBackendConfig {
            endpoint,
            model: "m".into(),
            timeout_secs: 10,
            temperature: 0.0,
            api_key_env: None,
        })
        .unwrap();
        let err = backend.translate(&request("x")).unwrap_err();
        assert!(err.0.contains("503"), "{err}");
        server.join().unwrap();
    }

    #[test]
    fn http_backend_unreachable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let backend = HttpBackend::new(HttpBackendConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            model: "m".into(),
            timeout_secs: 5,
            temperature: 0.0,
            api_key_env: None,
        })
        .unwrap();
        assert!(backend.translate(&request("x")).is_err());
    }

    #[test]
    fn missing_api_key_env_is_error() {
        let err = HttpBackend::new(HttpBackendConfig {
            endpoint: "http://127.0.0.1:1/".into(),
            model: "m".into(),
            timeout_secs: 5,
            temperature: 0.0,
            api_key_env: Some("HALDETECT_TEST_SURELY_UNSET_KEY".into()),
        })
        .unwrap_err();
        assert!(err.0.contains("HALDETECT_TEST_SURELY_UNSET_KEY"));
    }
}
