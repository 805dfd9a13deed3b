#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use drilldown_core::clock::ManualClock;
use drilldown_core::llm::{LlmError, LlmTransport, MockTransport, PromptDocument, ProviderConfig};
use drilldown_service::{router, AppState, ServiceConfig};

pub const SLEEP_CSV: &str = "\
Person,Gender,Age,Occupation,Sleep Duration,Stress Level,BMI Category
1,Male,27,Engineer,6.1,6,Overweight
2,Female,28,Doctor,6.2,8,Normal
3,Female,29,Nurse,6.5,7,Normal
4,Male,31,Doctor,7.8,4,Normal
5,Female,35,Nurse,6.0,8,Overweight
6,Male,38,Lawyer,7.3,5,Normal
7,Female,41,Teacher,6.9,6,Normal
8,Male,44,Engineer,7.9,3,Normal
9,Female,48,Nurse,6.1,8,Obese
10,Male,50,Engineer,8.1,3,Normal
11,Female,52,Teacher,7.2,4,Normal
12,Female,55,Nurse,6.4,7,Overweight
13,Male,57,Lawyer,7.6,4,Normal
14,Female,59,Nurse,8.0,3,Normal
";

/// Counts calls and remembers the provider settings of each.
pub struct Recording<T> {
    pub inner: T,
    pub calls: AtomicUsize,
    pub configs: Mutex<Vec<ProviderConfig>>,
}

impl<T> Recording<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            configs: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: LlmTransport> LlmTransport for Recording<T> {
    fn send(&self, config: &ProviderConfig, prompt: &PromptDocument) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.configs.lock().unwrap().push(config.clone());
        self.inner.send(config, prompt)
    }
}

pub struct Api {
    pub app: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

impl Api {
    pub fn new(transport: Arc<dyn LlmTransport>) -> Self {
        Self::with_config(transport, ServiceConfig::default())
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockTransport::new()))
    }

    pub fn with_config(transport: Arc<dyn LlmTransport>, config: ServiceConfig) -> Self {
        let state = AppState::new(config, transport, Arc::new(ManualClock::new(1_700_000_000_000, 1_000)));
        Self {
            app: router(Arc::new(state)),
        }
    }

    pub async fn raw(&self, method: Method, uri: &str, content_type: Option<&str>, body: Vec<u8>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(ct) = content_type {
            req = req.header("content-type", ct);
        }
        let resp = self.app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
        let status = resp.status();
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, body }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> Reply {
        let bytes = body.map(|b| serde_json::to_vec(&b).unwrap()).unwrap_or_default();
        self.raw(method, uri, Some("application/json"), bytes).await
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn put(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::PUT, uri, Some(body)).await
    }

    pub async fn session(&self) -> String {
        let r = self.post("/sessions", Value::Null).await;
        assert_eq!(r.status, StatusCode::CREATED);
        r.json()["session_id"].as_str().unwrap().to_string()
    }

    pub async fn upload(&self, sid: &str, name: &str, csv: &str) -> Reply {
        self.raw(
            Method::POST,
            &format!("/sessions/{sid}/datasets?name={name}"),
            Some("text/csv"),
            csv.as_bytes().to_vec(),
        )
        .await
    }

    /// A session with the sleep dataset loaded.
    pub async fn sleep_session(&self) -> String {
        let sid = self.session().await;
        let r = self.upload(&sid, "sleep_health", SLEEP_CSV).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
        sid
    }
}
