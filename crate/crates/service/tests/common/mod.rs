#![allow(dead_code)]

use std::path::Path;

use nss_core::features::CounterSnapshot;
use nss_lab::{generate_trace, Scenario, ScenarioKind};
use nss_service::{ClassConfig, ServiceConfig, ServiceHandle};
use serde_json::Value;

pub const CLASSES: [&str; 4] = ["Normal", "Congestion", "ErrorBurst", "BroadcastStorm"];

pub fn config(data_dir: &Path) -> ServiceConfig {
    let classes = CLASSES
        .iter()
        .map(|n| ClassConfig { name: n.to_string(), color: "#000000".into(), strategy: format!("handle-{n}") })
        .collect();
    let mut cfg = ServiceConfig::with_classes(classes);
    cfg.listen = "127.0.0.1:0".parse().unwrap();
    cfg.data_dir = data_dir.to_path_buf();
    cfg
}

pub async fn start(cfg: ServiceConfig) -> ServiceHandle {
    nss_service::start(cfg).await.expect("service starts")
}

/// Snapshots of one preset scenario, renamed to `target`.
pub fn trace(target: &str, kind: ScenarioKind, snapshots: u64, seed: u64) -> Vec<CounterSnapshot> {
    let interval = 10;
    let trace = generate_trace(&Scenario::preset(kind, snapshots * interval, seed), interval).unwrap();
    trace
        .snapshots
        .into_iter()
        .map(|mut s| {
            s.target = target.to_string();
            s
        })
        .collect()
}

pub struct Api {
    pub base: String,
    pub client: reqwest::Client,
}

impl Api {
    pub fn new(handle: &ServiceHandle) -> Self {
        Self { base: format!("{}/api/v1", handle.url()), client: reqwest::Client::new() }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        decode(r).await
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(body).send().await.unwrap();
        decode(r).await
    }

    pub async fn delete(&self, path: &str) -> (u16, Value) {
        let r = self.client.delete(format!("{}{path}", self.base)).send().await.unwrap();
        decode(r).await
    }

    /// Ingests snapshots and returns the ids of the records created.
    pub async fn ingest(&self, snaps: &[CounterSnapshot]) -> Vec<u64> {
        let (status, body) = self.post("/snapshots", &serde_json::to_value(snaps).unwrap()).await;
        assert_eq!(status, 200, "{body}");
        body.as_array()
            .unwrap()
            .iter()
            .filter_map(|r| r["record"]["id"].as_u64())
            .collect()
    }
}

async fn decode(r: reqwest::Response) -> (u16, Value) {
    let status = r.status().as_u16();
    let text = r.text().await.unwrap();
    let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
    (status, body)
}
