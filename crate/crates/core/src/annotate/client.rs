//! Text-generation service clients. Real adapters are thin: a local command
//! reading the prompt on stdin, and (feature `http-client`) a JSON endpoint.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::review::rule_based_check;
use crate::data::Quality;
use crate::error::{EfaError, Result};

/// What is sent to a client. `context` carries the structured inputs the
/// prompt was built from; network adapters ignore it, the offline mock uses it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Media reference for video-conditioned endpoints.
    pub media: Option<String>,
    pub context: BTreeMap<String, String>,
}

impl GenerationRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), ..Self::default() }
    }
}

pub trait GenerationClient: Send + Sync {
    /// Stable identifier recorded in provenance logs.
    fn id(&self) -> String;
    fn generate(&self, request: &GenerationRequest) -> Result<String>;
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Returns the same payload for every request.
pub struct EchoClient {
    pub payload: String,
}

impl GenerationClient for EchoClient {
    fn id(&self) -> String {
        "echo".into()
    }

    fn generate(&self, _: &GenerationRequest) -> Result<String> {
        Ok(self.payload.clone())
    }
}

/// Replays queued responses in order and keeps every request it saw.
#[derive(Default)]
pub struct ScriptedClient {
    responses: Mutex<VecDeque<Result<String>>>,
    seen: Mutex<Vec<GenerationRequest>>,
}

impl ScriptedClient {
    pub fn new(responses: impl IntoIterator<Item = Result<String>>) -> Self {
        Self { responses: Mutex::new(responses.into_iter().collect()), seen: Mutex::default() }
    }

    pub fn ok<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.seen.lock().expect("lock").clone()
    }
}

impl GenerationClient for ScriptedClient {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        self.seen.lock().expect("lock").push(request.clone());
        self.responses
            .lock()
            .expect("lock")
            .pop_front()
            .unwrap_or_else(|| Err(EfaError::Transport { client: self.id(), message: "script exhausted".into() }))
    }
}

/// Every call fails at the transport level.
pub struct FailingClient;

impl GenerationClient for FailingClient {
    fn id(&self) -> String {
        "failing".into()
    }

    fn generate(&self, _: &GenerationRequest) -> Result<String> {
        Err(EfaError::Transport { client: self.id(), message: "connection refused".into() })
    }
}

/// Deterministic offline stand-in for all three roles, keyed by `context["task"]`.
/// Output depends only on the request.
pub struct MockClient;

const MOCK_PARTS: [&str; 8] = ["feet", "hips", "spine", "shoulders", "elbows", "grip", "knees", "core"];
const MOCK_ACTIONS: [&str; 5] = ["set", "brace", "align", "lock", "control"];

impl MockClient {
    fn pick(hash: &[u8], i: usize, n: usize) -> usize {
        hash[i % hash.len()] as usize % n
    }

    fn steps(request: &GenerationRequest) -> String {
        let category = request.context.get("category").map_or("the exercise", String::as_str);
        let hash = Sha256::digest(request.prompt.as_bytes());
        let mut out = String::from("STEPS:\n");
        for i in 0..5 {
            let part = MOCK_PARTS[Self::pick(&hash, i, MOCK_PARTS.len())];
            let action = MOCK_ACTIONS[i];
            out.push_str(&format!(
                "{}. {}{} the {part} during phase {} of the {category}.\n",
                i + 1,
                action[..1].to_uppercase(),
                &action[1..],
                i + 1
            ));
        }
        out.push_str(&format!("INSTRUCTION: Move through the {category} with a steady tempo.\n"));
        out
    }

    fn explanation(request: &GenerationRequest) -> String {
        let category = request.context.get("category").map_or("exercise", String::as_str);
        let steps: Vec<&str> = request.context.get("steps").map_or(Vec::new(), |s| s.lines().collect());
        let hash = Sha256::digest(request.prompt.as_bytes());
        let step = steps.get(Self::pick(&hash, 0, steps.len().max(1))).map_or("keep control", |s| s.trim_end_matches('.')).to_lowercase();
        match request.context.get("quality").and_then(|q| q.parse::<Quality>().ok()) {
            Some(Quality::NonStandard) => format!(
                "This {category} repetition is non-standard. The performer does not {step}. As a result the load moves away from the working muscles. The performer should focus on the instruction to {step} on the next repetition."
            ),
            _ => format!(
                "This {category} repetition is standard. The performer follows the instruction to {step} because it keeps the movement stable and controlled."
            ),
        }
    }

    fn check(request: &GenerationRequest) -> String {
        let get = |k: &str| request.context.get(k).cloned().unwrap_or_default();
        let steps: Vec<String> = get("steps").lines().map(str::to_string).collect();
        let quality = get("quality").parse::<Quality>().unwrap_or(Quality::Standard);
        let (pass, why) = rule_based_check(&get("explanation"), &steps, quality);
        format!("VERDICT: {}\n{why}\n", if pass { "pass" } else { "fail" })
    }
}

impl GenerationClient for MockClient {
    fn id(&self) -> String {
        "mock".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        match request.context.get("task").map(String::as_str) {
            Some("steps") => Ok(Self::steps(request)),
            Some("explanation") => Ok(Self::explanation(request)),
            Some("check") => Ok(Self::check(request)),
            other => Err(EfaError::Transport { client: self.id(), message: format!("mock cannot serve task {other:?}") }),
        }
    }
}

/// Runs a local program per request: the prompt is written to stdin, the
/// response is read from stdout. `EFA_MEDIA` holds the media reference.
pub struct CommandClient {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl GenerationClient for CommandClient {
    fn id(&self) -> String {
        format!("command:{}", self.program)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let fail = |message: String| EfaError::Transport { client: self.id(), message };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .env("EFA_MEDIA", request.media.as_deref().unwrap_or(""))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| fail(format!("cannot start: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let prompt = request.prompt.clone();
        let writer = std::thread::spawn(move || stdin.write_all(prompt.as_bytes()));
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait().map_err(|e| fail(e.to_string()))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(fail(format!("timed out after {:?}", self.timeout)));
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        };
        // A program that exits without reading its input is not an error.
        let _ = writer.join();
        let out = reader.join().map_err(|_| fail("reader panicked".into()))?.map_err(|e| fail(e.to_string()))?;
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        Ok(out)
    }
}

#[cfg(feature = "http-client")]
pub struct HttpClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

#[cfg(feature = "http-client")]
impl GenerationClient for HttpClient {
    fn id(&self) -> String {
        format!("http:{}#{}", self.endpoint, self.model)
    }

    /// POSTs `{model, prompt, media}` and reads `text`, `response` or
    /// `choices[0].message.content` from the JSON reply.
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let fail = |message: String| EfaError::Transport { client: self.id(), message };
        let client = reqwest::blocking::Client::builder().timeout(self.timeout).build().map_err(|e| fail(e.to_string()))?;
        let mut req = client.post(&self.endpoint).json(&serde_json::json!({
            "model": self.model,
            "prompt": request.prompt,
            "media": request.media,
        }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("status {}", resp.status())));
        }
        let body: serde_json::Value = resp.json().map_err(|e| fail(e.to_string()))?;
        body.get("text")
            .or_else(|| body.get("response"))
            .or_else(|| body.pointer("/choices/0/message/content"))
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| fail("reply has no text field".into()))
    }
}

/// Client selection for one role. Credentials live here and nowhere else.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientConfig {
    #[default]
    Mock,
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
    },
}

fn default_timeout() -> u64 {
    60
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Command { program, timeout_s, .. } if program.is_empty() || *timeout_s == 0 => {
                Err(EfaError::Config("command client needs a program and a positive timeout_s".into()))
            }
            Self::Http { endpoint, timeout_s, .. } if endpoint.is_empty() || *timeout_s == 0 => {
                Err(EfaError::Config("http client needs an endpoint and a positive timeout_s".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn GenerationClient>> {
        self.validate()?;
        match self {
            Self::Mock => Ok(Box::new(MockClient)),
            Self::Command { program, args, timeout_s } => {
                Ok(Box::new(CommandClient { program: program.clone(), args: args.clone(), timeout: Duration::from_secs(*timeout_s) }))
            }
            #[cfg(feature = "http-client")]
            Self::Http { endpoint, model, api_key, timeout_s } => Ok(Box::new(HttpClient {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key: api_key.clone(),
                timeout: Duration::from_secs(*timeout_s),
            })),
            #[cfg(not(feature = "http-client"))]
            Self::Http { .. } => Err(EfaError::Config("http clients need the `http-client` feature".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_returns_payload_verbatim() {
        let c = EchoClient { payload: "  exact payload\n".into() };
        assert_eq!(c.generate(&GenerationRequest::text("anything")).unwrap(), "  exact payload\n");
    }

    #[test]
    fn scripted_replays_then_fails() {
        let c = ScriptedClient::ok(["a", "b"]);
        assert_eq!(c.generate(&GenerationRequest::text("1")).unwrap(), "a");
        assert_eq!(c.generate(&GenerationRequest::text("2")).unwrap(), "b");
        assert!(matches!(c.generate(&GenerationRequest::text("3")), Err(EfaError::Transport { .. })));
        assert_eq!(c.requests().len(), 3);
    }

    #[test]
    fn mock_is_deterministic() {
        let mut r = GenerationRequest::text("prompt");
        r.context.insert("task".into(), "steps".into());
        r.context.insert("category".into(), "squat".into());
        assert_eq!(MockClient.generate(&r).unwrap(), MockClient.generate(&r).unwrap());
        assert!(MockClient.generate(&GenerationRequest::text("x")).is_err());
    }

    #[test]
    fn command_client_pipes_prompt() {
        let c = CommandClient { program: "cat".into(), args: vec![], timeout: Duration::from_secs(10) };
        assert_eq!(c.generate(&GenerationRequest::text("hello")).unwrap(), "hello");
        let slow = CommandClient { program: "sleep".into(), args: vec!["5".into()], timeout: Duration::from_millis(50) };
        assert!(matches!(slow.generate(&GenerationRequest::text("")), Err(EfaError::Transport { .. })));
        let missing = CommandClient { program: "/nonexistent/efa-tool".into(), args: vec![], timeout: Duration::from_secs(1) };
        assert!(missing.generate(&GenerationRequest::text("")).is_err());
    }

    #[test]
    fn config_parses_and_builds() {
        let c: ClientConfig = toml::from_str("kind = \"command\"\nprogram = \"cat\"\n").unwrap();
        assert_eq!(c.build().unwrap().id(), "command:cat");
        assert!(toml::from_str::<ClientConfig>("kind = \"command\"\nprogram = \"x\"\nextra = 1\n").is_err());
        assert_eq!(ClientConfig::default().build().unwrap().id(), "mock");
    }
}
