use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use ews_core::artifacts::{predictions_to_csv, COHORT_DIR, EVENTS_DIR, PREDICTIONS_DIR};
use ews_core::cohort::{generate_synthetic_cohort, save_cohort, ScenarioConfig};
use ews_core::features::FeatureConfig;
use ews_core::labeler::{events_to_json, Label, LabelerConfig};
use ews_core::pf::{Fio2Table, Pao2Estimator};
use ews_core::pipeline::{cohort_matrix, prepare_cohort, score_series, PreparedStay};
use ews_monitor::{bind, router, AppState, MonitorConfig, MonitorError};
use serde_json::{json, Value};
use tower::ServiceExt;

/// Three synthetic stays with events and predictions written the way the
/// pipeline writes them.
fn fixture(root: &Path) -> Vec<PreparedStay> {
    let scenario = ScenarioConfig { failure_fraction: 1.0, near_miss_fraction: 0.0, min_los_h: 20.0, max_los_h: 30.0, ..Default::default() };
    let cohort = generate_synthetic_cohort(7, 3, &scenario).unwrap();
    save_cohort(&cohort, &root.join(COHORT_DIR)).unwrap();
    let prepared = prepare_cohort(&cohort.stays, &Pao2Estimator::Pnl, &Fio2Table::default(), &LabelerConfig::default()).unwrap();
    let refs: Vec<&PreparedStay> = prepared.iter().collect();
    let matrix = cohort_matrix(&refs, &FeatureConfig::default()).unwrap();
    let scores: Vec<f64> = (0..matrix.n_rows()).map(|r| (r % 97) as f64 / 97.0).collect();
    std::fs::create_dir_all(root.join(EVENTS_DIR)).unwrap();
    std::fs::create_dir_all(root.join(PREDICTIONS_DIR)).unwrap();
    for (p, s) in prepared.iter().zip(score_series(&refs, &matrix, &scores)) {
        let id = &p.stay.stay_id;
        std::fs::write(root.join(EVENTS_DIR).join(format!("{id}.json")), events_to_json(&p.labels.events).unwrap()).unwrap();
        std::fs::write(root.join(PREDICTIONS_DIR).join(format!("{id}.csv")), predictions_to_csv(&s)).unwrap();
    }
    prepared
}

fn config(root: &Path) -> MonitorConfig {
    MonitorConfig { data_dir: root.to_path_buf(), port: 0, ..Default::default() }
}

fn app(root: &Path) -> Router {
    router(AppState::open(&config(root)).unwrap())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

fn review(start: i64, end: i64) -> Value {
    json!({"type": "event_review", "start_s": start, "end_s": end, "label": "hypoxemia", "metadata": {"verdict": "confirmed", "confidence": 0.9}})
}

#[tokio::test]
async fn lists_three_patients_with_channels() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let app = app(dir.path());
    let (status, body) = get(&app, "/api/patients").await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 3);
    for (d, p) in list.iter().zip(&prepared) {
        assert_eq!(d["stay_id"], p.stay.stay_id.as_str());
        let channels: Vec<&str> = d["channels"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
        let expected: Vec<&str> = p.stay.raw.keys().map(String::as_str).collect();
        assert_eq!(channels, expected);
        assert!(channels.contains(&"spo2"));
        assert_eq!(d["has_predictions"], true);
        assert_eq!(d["n_events"], p.labels.events.len());
    }
}

#[tokio::test]
async fn unknown_stay_is_404_with_error_body() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let app = app(dir.path());
    for uri in ["/api/patients/nope/series", "/api/patients/nope", "/api/patients/nope/predictions", "/api/patients/..%2Fx/events"] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["error"]["code"], "not_found", "{uri}");
    }
    let (status, _) = get(&app, "/api/annotations/ann-999999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn prediction_gaps_match_undefined_labels() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let app = app(dir.path());
    let mut total_events = 0;
    for p in &prepared {
        let (status, body) = get(&app, &format!("/api/patients/{}/predictions", p.stay.stay_id)).await;
        assert_eq!(status, StatusCode::OK);
        let mut runs: Vec<(i64, i64)> = Vec::new();
        for (i, l) in p.labels.labels.iter().enumerate() {
            if *l != Label::Undefined {
                continue;
            }
            let t = p.stay.grid_time(i);
            match runs.last_mut() {
                Some((_, end)) if *end == t - p.stay.grid_step => *end = t,
                _ => runs.push((t, t)),
            }
        }
        let gaps: Vec<(i64, i64)> = body["gaps"]
            .as_array()
            .unwrap()
            .iter()
            .map(|g| (g["start_s"].as_i64().unwrap(), g["end_s"].as_i64().unwrap()))
            .collect();
        assert_eq!(gaps, runs, "stay {}", p.stay.stay_id);
        for (e, g) in p.labels.events.iter().zip(&gaps) {
            assert!(g.0 >= e.start_s && g.1 <= e.end_s && e.end_s - g.1 < p.stay.grid_step && g.0 - e.start_s < p.stay.grid_step);
        }
        total_events += p.labels.events.len();
    }
    assert!(total_events > 0);
}

#[tokio::test]
async fn series_decimation_and_range() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let app = app(dir.path());
    let id = &prepared[0].stay.stay_id;
    let (status, body) = get(&app, &format!("/api/patients/{id}/series?channels=spo2,resp_rate&from_s=3600&to_s=36000&max_points=50")).await;
    assert_eq!(status, StatusCode::OK);
    let series = body.as_array().unwrap();
    assert_eq!(series.len(), 2);
    let spo2 = &series[0];
    assert_eq!(spo2["id"], "spo2");
    let points = spo2["points"].as_array().unwrap();
    assert!(points.len() <= 50 && spo2["decimated"] == true);
    let times: Vec<i64> = points.iter().map(|p| p["time_s"].as_i64().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] < w[1]) && times[0] >= 3600 && *times.last().unwrap() <= 36000);
    assert!(points[0]["time"].as_str().unwrap().starts_with("2100-01-01T01:"));
    let (status, _) = get(&app, &format!("/api/patients/{id}/series?from_s=10&to_s=5")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, &format!("/api/patients/{id}/series?channels=no_such_channel")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotation_crud_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let app = app(dir.path());
    let id = &prepared[0].stay.stay_id;
    let (status, created) = call(&app, Method::POST, &format!("/api/patients/{id}/annotations"), Some(review(600, 1200))).await;
    assert_eq!(status, StatusCode::CREATED);
    let ann = created["annotation_id"].as_str().unwrap().to_string();
    assert_eq!(created["version"], 1);
    assert_eq!(created["metadata"], json!({"verdict": "confirmed", "confidence": 0.9}));
    assert_eq!(created["color"], "#d62728");

    let (status, read) = get(&app, &format!("/api/annotations/{ann}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(read, created);

    let mut edit = review(600, 1800);
    edit["version"] = json!(1);
    edit["color"] = json!("#00ff00");
    let (status, updated) = call(&app, Method::PUT, &format!("/api/annotations/{ann}"), Some(edit.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(updated["version"], 2);
    assert_eq!(updated["end_s"], 1800);
    assert_eq!(updated["created_at"], created["created_at"]);

    let (status, body) = call(&app, Method::PUT, &format!("/api/annotations/{ann}"), Some(edit)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "version_conflict");

    let (status, _) = call(&app, Method::DELETE, &format!("/api/annotations/{ann}?version=1"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, Method::DELETE, &format!("/api/annotations/{ann}?version=2"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = get(&app, &format!("/api/annotations/{ann}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::DELETE, &format!("/api/annotations/{ann}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_annotations_are_422_with_fields() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let app = app(dir.path());
    let uri = format!("/api/patients/{}/annotations", prepared[0].stay.stay_id);
    let (status, body) = call(&app, Method::POST, &uri, Some(review(1200, 600))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["fields"][0]["path"], "/end_s");

    let bad = json!({"type": "event_review", "start_s": 0, "end_s": 0, "metadata": {"verdict": "perhaps", "confidence": 3}});
    let (status, body) = call(&app, Method::POST, &uri, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let paths: Vec<&str> = body["error"]["fields"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(paths.contains(&"/metadata/verdict") && paths.contains(&"/metadata/confidence"), "{paths:?}");

    let unknown = json!({"type": "mystery", "start_s": 0, "end_s": 0});
    let (status, _) = call(&app, Method::POST, &uri, Some(unknown)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, &uri, Some(json!({"start_s": 0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = get(&app, "/api/export/annotations").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn list_filters_and_export_order() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let app = app(dir.path());
    let (a, b) = (&prepared[0].stay.stay_id, &prepared[1].stay.stay_id);
    call(&app, Method::POST, &format!("/api/patients/{b}/annotations"), Some(review(100, 200))).await;
    call(&app, Method::POST, &format!("/api/patients/{a}/annotations"), Some(review(5000, 6000))).await;
    let note = json!({"type": "note", "start_s": 300, "end_s": 300, "label": "suction", "metadata": {"free": "text"}});
    call(&app, Method::POST, &format!("/api/patients/{a}/annotations"), Some(note)).await;

    let (_, export) = get(&app, "/api/export/annotations").await;
    let keys: Vec<(String, i64)> = export
        .as_array()
        .unwrap()
        .iter()
        .map(|x| (x["stay_id"].as_str().unwrap().to_string(), x["start_s"].as_i64().unwrap()))
        .collect();
    assert_eq!(keys, vec![(a.clone(), 300), (a.clone(), 5000), (b.clone(), 100)]);

    let (_, only_notes) = get(&app, &format!("/api/patients/{a}/annotations?type=note")).await;
    assert_eq!(only_notes.as_array().unwrap().len(), 1);
    let (_, overlap) = get(&app, &format!("/api/patients/{a}/annotations?from_s=5500&to_s=9000")).await;
    assert_eq!(overlap[0]["start_s"], 5000);
    assert_eq!(overlap.as_array().unwrap().len(), 1);
    let (_, desc) = get(&app, &format!("/api/patients/{a}/annotations?sort=start_s&order=desc")).await;
    assert_eq!(desc[0]["start_s"], 5000);
    let (status, _) = get(&app, &format!("/api/patients/{a}/annotations?sort=bogus")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, types) = get(&app, "/api/annotation-types").await;
    assert_eq!(types.as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn annotations_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let id = &prepared[2].stay.stay_id;
    let first = app(dir.path());
    let mut ids = Vec::new();
    for k in 0..3 {
        let (_, c) = call(&first, Method::POST, &format!("/api/patients/{id}/annotations"), Some(review(k * 600, k * 600 + 60))).await;
        ids.push(c["annotation_id"].as_str().unwrap().to_string());
    }
    let (_, before) = get(&first, "/api/export/annotations").await;
    drop(first);

    let second = app(dir.path());
    let (_, after) = get(&second, "/api/export/annotations").await;
    assert_eq!(before, after);
    let (_, c) = call(&second, Method::POST, &format!("/api/patients/{id}/annotations"), Some(review(0, 0))).await;
    assert!(!ids.contains(&c["annotation_id"].as_str().unwrap().to_string()));
    assert!(!dir.path().join("annotations").join(format!("{id}.json.tmp")).exists());
}

#[tokio::test]
async fn reads_are_pure_over_files() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = fixture(dir.path());
    let id = &prepared[1].stay.stay_id;
    let uris = [
        "/api/patients".to_string(),
        format!("/api/patients/{id}"),
        format!("/api/patients/{id}/series?max_points=20"),
        format!("/api/patients/{id}/predictions"),
        format!("/api/patients/{id}/events"),
    ];
    let copy = tempfile::tempdir().unwrap();
    fixture(copy.path());
    let (a, b) = (app(dir.path()), app(copy.path()));
    for uri in &uris {
        let first = get(&a, uri).await;
        assert_eq!(first, get(&a, uri).await, "{uri}");
        assert_eq!(first, get(&b, uri).await, "{uri}");
    }
}

#[tokio::test]
async fn startup_errors() {
    let missing = tempfile::tempdir().unwrap();
    let cfg = config(&missing.path().join("absent"));
    assert!(matches!(bind(&cfg).await, Err(MonitorError::DataDir { .. })));

    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let server = bind(&config(dir.path())).await.unwrap();
    let port = server.local_addr().unwrap().port();
    let busy = MonitorConfig { port, ..config(dir.path()) };
    assert!(matches!(bind(&busy).await, Err(MonitorError::Bind { .. })));

    std::fs::write(dir.path().join("annotation_types.json"), r##"[{"type":"x","schema":{"type":5},"color":"#000"}]"##).unwrap();
    assert!(matches!(bind(&config(dir.path())).await, Err(MonitorError::AnnotationTypes(_))));
}
