use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::normalize_confidence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonRequest {
    pub case_id: String,
    pub documents: Vec<String>,
    pub demographics: BTreeMap<String, String>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPayload {
    pub prediction: bool,
    #[serde(default)]
    pub explanation: String,
    #[serde(default)]
    pub l_true: Option<f64>,
    #[serde(default)]
    pub l_false: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonResponse {
    pub paths: Vec<PathPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub case_id: String,
    pub documents: Vec<String>,
    pub path: PathPayload,
}

/// Either a ready confidence or the verifier's raw probabilities for its
/// "correct" and "incorrect" answer tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_correct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_incorrect: Option<f64>,
}

impl VerifyResponse {
    pub fn confidence(&self) -> Result<f64> {
        match (self.confidence, self.p_correct, self.p_incorrect) {
            (Some(c), _, _) if (0.0..=1.0).contains(&c) => Ok(c),
            (Some(c), _, _) => Err(Error::Backend(format!("verifier confidence {c} outside [0,1]"))),
            (None, Some(a), Some(b)) => normalize_confidence(a, b),
            _ => Err(Error::Backend("verifier response has no confidence".into())),
        }
    }
}

/// One recorded exchange. `key` is the hex SHA-256 of `kind` and the
/// request's JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub kind: String,
    pub request: serde_json::Value,
    pub response: serde_json::Value,
}

pub fn request_key<T: Serialize>(kind: &str, request: &T) -> String {
    let json = serde_json::to_string(request).expect("request serializes");
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update(b"\n");
    h.update(json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub enum Backend {
    /// Same answer for every request.
    Constant { prediction: bool, confidence: f64 },
    /// Exact replay of recorded exchanges, keyed by request hash.
    Scripted { entries: BTreeMap<String, serde_json::Value> },
    /// Spawn `program args...` per request; JSON request on stdin, JSON
    /// response on stdout.
    ExternalCommand { program: String, args: Vec<String> },
    /// Pass through to another backend and keep every exchange.
    Recording(Recorder),
}

#[derive(Debug)]
pub struct Recorder {
    inner: Box<Backend>,
    entries: RefCell<Vec<ReplayEntry>>,
}

impl Recorder {
    pub fn new(inner: Backend) -> Self {
        Self {
            inner: Box::new(inner),
            entries: RefCell::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.entries.borrow().clone()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in self.entries.borrow().iter() {
            writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes")).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

impl Backend {
    pub fn scripted_from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        Backend::Scripted {
            entries: entries.into_iter().map(|e| (e.key, e.response)).collect(),
        }
    }

    /// Load a JSON-lines replay file.
    pub fn load_replay(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ReplayEntry>(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::scripted_from_entries(entries))
    }

    pub fn reason(&self, req: &ReasonRequest) -> Result<ReasonResponse> {
        match self {
            Backend::Constant { prediction, .. } => Ok(ReasonResponse {
                paths: (0..req.n_samples)
                    .map(|_| PathPayload {
                        prediction: *prediction,
                        explanation: String::new(),
                        l_true: None,
                        l_false: None,
                    })
                    .collect(),
            }),
            _ => self.exchange("reason", req),
        }
    }

    pub fn verify(&self, req: &VerifyRequest) -> Result<VerifyResponse> {
        match self {
            Backend::Constant { confidence, .. } => Ok(VerifyResponse {
                confidence: Some(*confidence),
                p_correct: None,
                p_incorrect: None,
            }),
            _ => self.exchange("verify", req),
        }
    }

    fn exchange<Q: Serialize, R: Serialize + DeserializeOwned>(&self, kind: &str, req: &Q) -> Result<R> {
        match self {
            Backend::Constant { .. } => unreachable!("constant answers directly"),
            Backend::Scripted { entries } => {
                let key = request_key(kind, req);
                let value = entries
                    .get(&key)
                    .ok_or_else(|| Error::Backend(format!("no recorded {kind} response for key {key}")))?;
                serde_json::from_value(value.clone()).map_err(|e| Error::Backend(format!("bad recorded {kind} response: {e}")))
            }
            Backend::ExternalCommand { program, args } => {
                let body = serde_json::to_vec(req).expect("request serializes");
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Backend(format!("cannot start {program}: {e}")))?;
                child
                    .stdin
                    .take()
                    .expect("piped stdin")
                    .write_all(&body)
                    .map_err(|e| Error::Backend(format!("{program}: {e}")))?;
                let out = child.wait_with_output().map_err(|e| Error::Backend(format!("{program}: {e}")))?;
                if !out.status.success() {
                    return Err(Error::Backend(format!("{program} exited with {}", out.status)));
                }
                serde_json::from_slice(&out.stdout).map_err(|e| Error::Backend(format!("{program}: bad response: {e}")))
            }
            Backend::Recording(rec) => {
                let response: R = match kind {
                    "reason" => {
                        let r: ReasonRequest = roundtrip(req)?;
                        roundtrip(&rec.inner.reason(&r)?)?
                    }
                    _ => {
                        let r: VerifyRequest = roundtrip(req)?;
                        roundtrip(&rec.inner.verify(&r)?)?
                    }
                };
                rec.entries.borrow_mut().push(ReplayEntry {
                    key: request_key(kind, req),
                    kind: kind.to_string(),
                    request: serde_json::to_value(req).expect("request serializes"),
                    response: serde_json::to_value(&response).expect("response serializes"),
                });
                Ok(response)
            }
        }
    }
}

fn roundtrip<A: Serialize, B: DeserializeOwned>(a: &A) -> Result<B> {
    serde_json::from_value(serde_json::to_value(a).expect("serializes")).map_err(|e| Error::Backend(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::super::{run_reveal, RevealCase, RevealConfig};
    use super::*;

    fn cases() -> Vec<RevealCase> {
        (0..4)
            .map(|i| RevealCase {
                case_id: format!("c{i}"),
                documents: vec![format!("note {i}")],
                demographics: BTreeMap::new(),
                y_true: Some(1),
            })
            .collect()
    }

    #[test]
    fn record_then_replay_is_identical() {
        let reasoner = Backend::Recording(Recorder::new(Backend::Constant {
            prediction: false,
            confidence: 0.7,
        }));
        let verifier = Backend::Recording(Recorder::new(Backend::Constant {
            prediction: false,
            confidence: 0.7,
        }));
        let cfg = RevealConfig { n_samples: 4, k: 3 };
        let first = run_reveal(&cases(), &reasoner, &verifier, cfg).unwrap();
        let (Backend::Recording(r), Backend::Recording(v)) = (&reasoner, &verifier) else {
            unreachable!()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let mut all = r.entries();
        all.extend(v.entries());
        let mut f = fs::File::create(&path).unwrap();
        for e in &all {
            writeln!(f, "{}", serde_json::to_string(e).unwrap()).unwrap();
        }
        drop(f);
        let replay = Backend::load_replay(&path).unwrap();
        let second = run_reveal(&cases(), &replay, &replay, cfg).unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        first.write_audit(&a).unwrap();
        second.write_audit(&b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn verify_response_forms() {
        let raw = VerifyResponse {
            confidence: None,
            p_correct: Some(0.6),
            p_incorrect: Some(0.2),
        };
        assert!((raw.confidence().unwrap() - 0.75).abs() < 1e-15);
        let bad = VerifyResponse {
            confidence: Some(1.5),
            p_correct: None,
            p_incorrect: None,
        };
        assert!(bad.confidence().is_err());
    }

    #[test]
    fn keys_differ_by_kind_and_content() {
        let r = ReasonRequest {
            case_id: "a".into(),
            documents: vec![],
            demographics: BTreeMap::new(),
            n_samples: 1,
        };
        assert_ne!(request_key("reason", &r), request_key("verify", &r));
        assert_eq!(request_key("reason", &r), request_key("reason", &r.clone()));
    }

    #[cfg(unix)]
    #[test]
    fn external_command_round_trip() {
        let backend = Backend::ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), "cat >/dev/null; echo '{\"confidence\": 0.25}'".into()],
        };
        let req = VerifyRequest {
            case_id: "x".into(),
            documents: vec![],
            path: PathPayload {
                prediction: true,
                explanation: String::new(),
                l_true: None,
                l_false: None,
            },
        };
        assert_eq!(backend.verify(&req).unwrap().confidence().unwrap(), 0.25);
        let failing = Backend::ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), "exit 3".into()],
        };
        assert!(matches!(failing.verify(&req), Err(Error::Backend(_))));
    }
}
