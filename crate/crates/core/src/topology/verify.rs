//! Short-range relation verification against a pluggable backend.
//!
//! HTTP backend contract: a `POST` to the configured chat-completions URL
//! with one user message whose `content` holds a text part (the relation
//! question) and, when a panorama is attached, an `image_url` part carrying a
//! base64 data URL. The model is asked to answer `{"confidence": p}`; the
//! first number found in the reply is accepted as a fallback.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::chat::{parse_confidence, ChatClient, ChatEndpoint, ChatError};
use crate::dsg::{NodeId, ObjectNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("no confidence value in reply: {0:?}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RelationQuery<'a> {
    pub subject: &'a ObjectNode,
    pub object: &'a ObjectNode,
    pub relation: &'a str,
}

impl RelationQuery<'_> {
    pub fn distance(&self) -> f64 {
        (self.subject.centroid - self.object.centroid).norm()
    }

    pub fn prompt(&self) -> String {
        format!(
            "In this panorama, is the {} (#{}: {}) {} the {} (#{}: {})? Answer only with JSON {{\"confidence\": p}} where p is between 0 and 1.",
            self.subject.label,
            self.subject.id.index,
            self.subject.caption,
            self.relation,
            self.object.label,
            self.object.id.index,
            self.object.caption
        )
    }
}

pub trait RelationVerifier: Send + Sync {
    fn name(&self) -> &str;
    /// Confidence in [0, 1] that the queried relation holds.
    fn confidence(&self, query: &RelationQuery) -> Result<f64, VerifierError>;
}

fn inverse_relation(rel: &str) -> Option<&'static str> {
    match rel {
        "above" => Some("below"),
        "below" => Some("above"),
        "near" => Some("near"),
        _ => None,
    }
}

/// Answers from a ground-truth relation set: 1.0 if present, else 0.0.
/// `above`/`below` are mutual inverses and `near` is symmetric.
#[derive(Debug, Clone, Default)]
pub struct ScriptedVerifier {
    truths: BTreeSet<(NodeId, NodeId, String)>,
}

impl ScriptedVerifier {
    pub fn new(truths: impl IntoIterator<Item = (NodeId, NodeId, String)>) -> Self {
        Self { truths: truths.into_iter().collect() }
    }

    pub fn holds(&self, a: NodeId, b: NodeId, rel: &str) -> bool {
        self.truths.contains(&(a, b, rel.to_owned()))
            || inverse_relation(rel).is_some_and(|inv| self.truths.contains(&(b, a, inv.to_owned())))
    }
}

impl RelationVerifier for ScriptedVerifier {
    fn name(&self) -> &str {
        "scripted"
    }

    fn confidence(&self, q: &RelationQuery) -> Result<f64, VerifierError> {
        Ok(if self.holds(q.subject.id, q.object.id, q.relation) { 1.0 } else { 0.0 })
    }
}

pub struct HttpVerifier {
    client: ChatClient,
    /// Encoded image and its MIME type, attached to every query.
    panorama: Option<(Vec<u8>, String)>,
}

impl HttpVerifier {
    pub fn new(endpoint: ChatEndpoint) -> Result<Self, VerifierError> {
        Ok(Self { client: ChatClient::new(endpoint)?, panorama: None })
    }

    pub fn with_panorama(mut self, bytes: Vec<u8>, mime: impl Into<String>) -> Self {
        self.panorama = Some((bytes, mime.into()));
        self
    }

    pub fn message(&self, q: &RelationQuery) -> serde_json::Value {
        let mut parts = vec![json!({ "type": "text", "text": q.prompt() })];
        if let Some((bytes, mime)) = &self.panorama {
            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
            parts.push(json!({ "type": "image_url", "image_url": { "url": format!("data:{mime};base64,{b64}") } }));
        }
        json!({ "role": "user", "content": parts })
    }
}

impl RelationVerifier for HttpVerifier {
    fn name(&self) -> &str {
        "http"
    }

    fn confidence(&self, q: &RelationQuery) -> Result<f64, VerifierError> {
        let reply = self.client.complete_raw(&[self.message(q)])?;
        parse_confidence(&reply).map(|c| c.clamp(0.0, 1.0)).ok_or(VerifierError::Unparseable(reply))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Keep when confidence is strictly above this.
    pub tau: f64,
    /// Pairs at or beyond this centroid distance skip the verifier.
    pub short_range: f64,
    /// Keep (flagged unverified) rather than drop when the backend fails.
    pub fail_open: bool,
    pub max_in_flight: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { tau: 0.5, short_range: 1.0, fail_open: true, max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeVerdict {
    Bypassed,
    Verified,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub keep: bool,
    pub confidence: Option<f64>,
    pub verdict: EdgeVerdict,
}

pub fn verify_edge(q: &RelationQuery, verifier: &dyn RelationVerifier, cfg: &VerifyConfig) -> Verification {
    if q.distance() >= cfg.short_range {
        return Verification { keep: true, confidence: None, verdict: EdgeVerdict::Bypassed };
    }
    match verifier.confidence(q) {
        Ok(c) => Verification { keep: c > cfg.tau, confidence: Some(c), verdict: EdgeVerdict::Verified },
        Err(e) => {
            log::warn!(
                "{} verifier failed on {} {} {}: {e}; edge {}",
                verifier.name(),
                q.subject.id,
                q.relation,
                q.object.id,
                if cfg.fail_open { "kept unverified" } else { "dropped" }
            );
            Verification { keep: cfg.fail_open, confidence: None, verdict: EdgeVerdict::Unverified }
        }
    }
}

/// Verifies a batch with at most `cfg.max_in_flight` concurrent backend
/// calls; output order matches `queries`.
pub fn verify_edges(queries: &[RelationQuery], verifier: &dyn RelationVerifier, cfg: &VerifyConfig) -> Vec<Verification> {
    let workers = cfg.max_in_flight.max(1).min(queries.len());
    if workers <= 1 {
        return queries.iter().map(|q| verify_edge(q, verifier, cfg)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Verification>> = vec![None; queries.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(q) = queries.get(i) else { break };
                        done.push((i, verify_edge(q, verifier, cfg)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("verifier worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|v| v.expect("every query verified")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::mock;
    use crate::geometry::Vec3;
    use std::sync::Mutex;

    fn obj(i: u32, label: &str, p: [f64; 3]) -> ObjectNode {
        let mut o = ObjectNode::new(label, format!("a {label}"), Vec3::from(p), Vec3::repeat(0.2));
        o.id = NodeId::object(i);
        o
    }

    struct Counting {
        calls: AtomicUsize,
        live: AtomicUsize,
        peak: Mutex<usize>,
    }

    impl RelationVerifier for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn confidence(&self, _: &RelationQuery) -> Result<f64, VerifierError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
            {
                let mut p = self.peak.lock().unwrap();
                *p = (*p).max(now);
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
            self.live.fetch_sub(1, Ordering::SeqCst);
            Ok(0.9)
        }
    }

    struct Down;
    impl RelationVerifier for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn confidence(&self, _: &RelationQuery) -> Result<f64, VerifierError> {
            Err(ChatError::Transport("connection refused".into()).into())
        }
    }

    #[test]
    fn scripted_true_and_false() {
        let cup = obj(0, "cup", [1.0, 1.0, 1.0]);
        let table = obj(1, "table", [1.0, 1.2, 0.5]);
        let v = ScriptedVerifier::new([(NodeId::object(0), NodeId::object(1), "above".to_string())]);
        let cfg = VerifyConfig::default();
        let yes = verify_edge(&RelationQuery { subject: &cup, object: &table, relation: "above" }, &v, &cfg);
        assert_eq!(yes, Verification { keep: true, confidence: Some(1.0), verdict: EdgeVerdict::Verified });
        let inv = verify_edge(&RelationQuery { subject: &table, object: &cup, relation: "below" }, &v, &cfg);
        assert!(inv.keep);
        let no = verify_edge(&RelationQuery { subject: &cup, object: &table, relation: "below" }, &v, &cfg);
        assert_eq!(no, Verification { keep: false, confidence: Some(0.0), verdict: EdgeVerdict::Verified });
    }

    #[test]
    fn long_edges_bypass_the_backend() {
        let a = obj(0, "chair", [0.0, 0.0, 0.5]);
        let b = obj(1, "chair", [1.2, 0.0, 0.5]);
        let v = Counting { calls: AtomicUsize::new(0), live: AtomicUsize::new(0), peak: Mutex::new(0) };
        let r = verify_edge(&RelationQuery { subject: &a, object: &b, relation: "near" }, &v, &VerifyConfig::default());
        assert_eq!(r.verdict, EdgeVerdict::Bypassed);
        assert!(r.keep);
        assert_eq!(v.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn outage_fails_open_or_closed() {
        let a = obj(0, "cup", [0.0, 0.0, 1.0]);
        let b = obj(1, "table", [0.0, 0.1, 0.5]);
        let q = RelationQuery { subject: &a, object: &b, relation: "above" };
        let open = verify_edge(&q, &Down, &VerifyConfig::default());
        assert_eq!(open, Verification { keep: true, confidence: None, verdict: EdgeVerdict::Unverified });
        let closed = verify_edge(&q, &Down, &VerifyConfig { fail_open: false, ..Default::default() });
        assert!(!closed.keep);
    }

    #[test]
    fn threshold_is_strict() {
        struct Fixed(f64);
        impl RelationVerifier for Fixed {
            fn name(&self) -> &str {
                "fixed"
            }
            fn confidence(&self, _: &RelationQuery) -> Result<f64, VerifierError> {
                Ok(self.0)
            }
        }
        let a = obj(0, "cup", [0.0, 0.0, 1.0]);
        let b = obj(1, "table", [0.0, 0.1, 0.5]);
        let q = RelationQuery { subject: &a, object: &b, relation: "above" };
        assert!(!verify_edge(&q, &Fixed(0.5), &VerifyConfig::default()).keep);
        assert!(verify_edge(&q, &Fixed(0.51), &VerifyConfig::default()).keep);
    }

    #[test]
    fn batch_is_bounded_and_ordered() {
        let objs: Vec<ObjectNode> = (0..20).map(|i| obj(i, "box", [i as f64 * 0.1, 0.0, 0.5])).collect();
        let queries: Vec<RelationQuery> =
            (0..19).map(|i| RelationQuery { subject: &objs[i], object: &objs[i + 1], relation: "near" }).collect();
        let v = Counting { calls: AtomicUsize::new(0), live: AtomicUsize::new(0), peak: Mutex::new(0) };
        let cfg = VerifyConfig { max_in_flight: 3, ..Default::default() };
        let out = verify_edges(&queries, &v, &cfg);
        assert_eq!(out.len(), 19);
        assert!(out.iter().all(|r| r.keep && r.confidence == Some(0.9)));
        assert_eq!(v.calls.load(Ordering::SeqCst), 19);
        assert!(*v.peak.lock().unwrap() <= 3);
        let serial = verify_edges(&queries, &v, &VerifyConfig { max_in_flight: 1, ..Default::default() });
        assert_eq!(serial, out);
    }

    #[test]
    fn http_backend_sends_image_and_parses_confidence() {
        let server = mock::serve(vec![(200, mock::completion("{\"confidence\": 0.8}"))]);
        let ep = ChatEndpoint { url: server.url.clone(), api_key_env: None, retries: 0, timeout_secs: 5.0, ..Default::default() };
        let v = HttpVerifier::new(ep).unwrap().with_panorama(vec![1, 2, 3], "image/png");
        let a = obj(0, "cup", [0.0, 0.0, 1.0]);
        let b = obj(1, "table", [0.0, 0.1, 0.5]);
        let r = verify_edge(&RelationQuery { subject: &a, object: &b, relation: "above" }, &v, &VerifyConfig::default());
        assert_eq!(r, Verification { keep: true, confidence: Some(0.8), verdict: EdgeVerdict::Verified });
        let req = server.requests.lock().unwrap()[0].clone();
        let body: serde_json::Value = serde_json::from_str(req.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        let parts = &body["messages"][0]["content"];
        assert_eq!(parts[0]["type"], "text");
        assert!(parts[0]["text"].as_str().unwrap().contains("cup"));
        assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AQID");
    }

    #[test]
    fn http_backend_unreachable_is_unverified() {
        let ep = ChatEndpoint {
            url: "http://127.0.0.1:9/v1/chat/completions".into(),
            api_key_env: None,
            retries: 0,
            timeout_secs: 2.0,
            ..Default::default()
        };
        let v = HttpVerifier::new(ep).unwrap();
        let a = obj(0, "cup", [0.0, 0.0, 1.0]);
        let b = obj(1, "table", [0.0, 0.1, 0.5]);
        let r = verify_edge(&RelationQuery { subject: &a, object: &b, relation: "above" }, &v, &VerifyConfig::default());
        assert_eq!(r.verdict, EdgeVerdict::Unverified);
        assert!(r.keep);
    }
}
