#![allow(dead_code)]

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

use sdrec_core::data::{PlayerId, SyntheticConfig};
use sdrec_service::api::router;
use sdrec_service::config::Config;
use sdrec_service::state::AppState;

pub struct Harness {
    pub dir: TempDir,
    pub app: Router,
}

impl Harness {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let app = Self::open(&dir);
        Harness { dir, app }
    }

    fn open(dir: &TempDir) -> Router {
        let config = Config {
            data_dir: dir.path().to_path_buf(),
            ..Config::default()
        };
        router(AppState::open(config).expect("state"))
    }

    /// A fresh server over the same data directory, as after a restart.
    pub fn restart(&mut self) {
        self.app = Self::open(&self.dir);
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .expect("request");
        let resp = self.app.clone().oneshot(req).await.expect("response");
        let status = resp.status();
        let bytes = resp.into_body().collect().await.expect("body").to_bytes();
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).expect("json body") };
        (status, v)
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", uri, Some(body)).await
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None).await
    }

    pub async fn wait_job(&self, job_id: &str) -> Value {
        for _ in 0..6000 {
            let (s, v) = self.get(&format!("/api/v1/jobs/{job_id}")).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            if v["status"] != "running" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("job {job_id} did not finish");
    }

    /// Loads a synthetic dataset and returns its id.
    pub async fn load(&self, cfg: &SyntheticConfig) -> String {
        let (s, v) = self.post("/api/v1/datasets", json!({ "synthetic": cfg })).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let job = self.wait_job(v["job_id"].as_str().unwrap()).await;
        assert_eq!(job["status"], "done", "{job}");
        v["dataset_id"].as_str().unwrap().to_string()
    }

    pub async fn session(&self, dataset_id: &str) -> String {
        let (s, v) = self.post("/api/v1/sessions", json!({ "dataset_id": dataset_id, "seed": 1 })).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    /// Every bin of one channel, i.e. the whole population.
    pub async fn all_bins(&self, dataset_id: &str, channel: &str) -> Vec<Value> {
        let (s, v) = self.get(&format!("/api/v1/datasets/{dataset_id}/projection")).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let ch = v["channels"].as_array().unwrap().iter().find(|c| c["channel"] == channel).unwrap();
        ch["hexbin"]["bins"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| json!({ "channel": channel, "q": b["q"], "r": b["r"] }))
            .collect()
    }
}

pub fn diversity_ratio() -> Value {
    json!({
        "intra": { "social": [0.3, 0.3, 0.3, 0.8], "avatar": [1.0, 1.0, 1.0, 1.0] },
        "inter": { "social": 0.7, "avatar": 0.3 },
    })
}

pub fn baseline_ratio() -> Value {
    json!({ "baseline": true })
}

fn merge(mut a: Value, b: Value) -> Value {
    for (k, v) in b.as_object().unwrap() {
        a[k] = v.clone();
    }
    a
}

pub struct WalkOutcome {
    pub session_id: String,
    pub dataset_id: String,
    pub representatives: [PlayerId; 2],
    pub rows: [String; 2],
    pub first_counts: Value,
    pub remediated: PlayerId,
    pub mean_max_probability: [f64; 2],
    pub history: Value,
    /// Share of each planted cluster given its own representative's ratio.
    pub agreement: f64,
}

fn checked(what: &str, (s, v): (StatusCode, Value)) -> Result<Value, String> {
    if s.is_success() {
        Ok(v)
    } else {
        Err(format!("{what}: {s} {v}"))
    }
}

/// The full two-step loop over a two-cluster population: one representative
/// per cluster tuned and assigned, propagation, remediation of the least
/// certain player, and a second propagation round.
pub async fn walk(h: &Harness, cfg: &SyntheticConfig) -> Result<WalkOutcome, String> {
    let dataset_id = h.load(cfg).await;
    let sid = h.session(&dataset_id).await;
    let url = |op: &str| format!("/api/v1/sessions/{sid}/{op}");
    let bins = h.all_bins(&dataset_id, "social").await;
    let group = checked("group", h.post(&url("group"), json!({ "bins": bins })).await)?;
    if group["group_size"] != json!(cfg.n_players) {
        return Err(format!("group size {} != {}", group["group_size"], cfg.n_players));
    }

    // one representative per planted cluster
    let reps = [PlayerId(0), PlayerId(cfg.n_players as u32 - 1)];
    if cfg.group_of(reps[0]) == cfg.group_of(reps[1]) {
        return Err("representatives share a cluster".into());
    }
    let ratios = [diversity_ratio(), baseline_ratio()];
    let mut rows = Vec::new();
    for (rep, ratio) in reps.iter().zip(&ratios) {
        checked("representative", h.post(&url("representative"), json!({ "player": rep })).await)?;
        checked(
            "sample",
            h.post(&url("sample"), json!({ "channel": "social", "freqs": [0.3, 0.3, 0.3, 0.8] })).await,
        )?;
        checked("fuse", h.post(&url("fuse"), ratio.clone()).await)?;
        // the baseline row first, for comparison, then the chosen ratio
        checked("rank baseline", h.post(&url("rank"), baseline_ratio()).await)?;
        let ranked = checked("rank", h.post(&url("rank"), merge(ratio.clone(), json!({ "n": 10 }))).await)?;
        if ranked["lineup"]["rows"].as_array().map_or(0, Vec::len) > 10 {
            return Err("lineup longer than N".into());
        }
        let row = ranked["row_id"].as_str().unwrap().to_string();
        checked("assign", h.post(&url("assign"), json!({ "representative": rep, "row_id": row })).await)?;
        rows.push(row);
    }

    let first = checked("propagate", h.post(&url("propagate"), json!({})).await)?;
    let all = checked("uncertain", h.get(&format!("{}?k={}", url("uncertain"), cfg.n_players)).await)?;
    let all = all["rows"].as_array().unwrap().clone();
    let mut agree = 0usize;
    for r in &all {
        let p = PlayerId(r["player"].as_u64().unwrap() as u32);
        let want = &rows[if cfg.group_of(p) == cfg.group_of(reps[0]) { 0 } else { 1 }];
        agree += usize::from(r["assigned"] == json!(want));
    }
    let agreement = agree as f64 / all.len() as f64;

    let top = checked("uncertain", h.get(&format!("{}?k=5", url("uncertain"))).await)?;
    let top = top["rows"].as_array().unwrap().clone();
    if top.len() != 5 {
        return Err(format!("uncertain returned {} rows", top.len()));
    }
    for w in top.windows(2) {
        if w[0]["uncertainty"].as_f64() < w[1]["uncertainty"].as_f64() {
            return Err("uncertain rows not sorted by descending uncertainty".into());
        }
    }
    let worst = PlayerId(top[0]["player"].as_u64().unwrap() as u32);
    let fix = &rows[if cfg.group_of(worst) == cfg.group_of(reps[0]) { 0 } else { 1 }];
    checked("remediate", h.post(&url("remediate"), json!({ "player": worst, "row_id": fix })).await)?;
    let second = checked("propagate again", h.post(&url("propagate"), json!({})).await)?;
    let history = checked("history", h.get(&url("history")).await)?;

    Ok(WalkOutcome {
        session_id: sid,
        dataset_id,
        representatives: reps,
        rows: [rows[0].clone(), rows[1].clone()],
        first_counts: first["counts"].clone(),
        remediated: worst,
        mean_max_probability: [
            first["mean_max_probability"].as_f64().unwrap(),
            second["mean_max_probability"].as_f64().unwrap(),
        ],
        history,
        agreement,
    })
}

pub fn snapshot_path(h: &Harness, sid: &str) -> std::path::PathBuf {
    h.dir.path().join("sessions").join(format!("{sid}.json"))
}
