use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use crisis_service::{router, AppState, Config, Pipeline, Store};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/camp_fire").join(name)
}

fn app(root: &std::path::Path) -> Router {
    let mut config = Config::load(&fixture("config.toml")).unwrap();
    config.store_root = Some(root.to_path_buf());
    let store = Store::open(root).unwrap();
    let pipeline = Pipeline::new(config, true).unwrap();
    router(AppState::new(pipeline, store).unwrap())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    send(app, req).await
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn upload(app: &Router, id: &str, content: &[u8]) -> (StatusCode, Value) {
    let boundary = "XBOUNDARYX";
    let mut body = Vec::new();
    let mut part = |name: &str, filename: Option<&str>, data: &[u8]| {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: application/octet-stream\r\n\r\n").as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    };
    part("id", None, id.as_bytes());
    part("field_map", None, br#"{"id":"id","text":"text","created_at":"created_at","author_id":"author_id","labels":{"disaster_event":"class_label"}}"#);
    part("file", Some("posts.jsonl"), content);
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    let req = Request::post("/datasets")
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

async fn wait_job(app: &Router, job: &Value) -> Value {
    let id = job["job_id"].as_str().unwrap();
    for _ in 0..2000 {
        let (status, job) = get(app, &format!("/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if job["status"] == "done" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

fn fixture_bytes() -> Vec<u8> {
    std::fs::read(fixture("posts.jsonl")).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_counts_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let (status, body) = upload(&app, "camp-fire", &fixture_bytes()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body, json!({"id": "camp-fire", "posts": 200, "dropped": 3}));

    let dup = b"{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
    let (status, body) = upload(&app, "dup", dup).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");
    assert!(body["detail"].as_str().unwrap().contains("`a`"), "{body}");

    let (status, body) = upload(&app, "empty", b"").await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["posts"], 0);

    let (status, _) = upload(&app, "camp-fire", b"{\"id\":\"z\",\"text\":\"other\"}\n").await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, list) = get(&app, "/datasets").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 2);

    let (status, body) = post_json(&app, "/corpora/nope/enrich", json!({})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    assert!(body["message"].is_string() && body["detail"].is_string());

    let (status, body) = get(&app, "/no/such/route").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test(flavor = "multi_thread")]
async fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    upload(&app, "camp-fire", &fixture_bytes()).await;

    let request = |mode: &str| {
        json!({
            "corpus_id": "camp-fire",
            "request": {
                "mode": mode, "report_kind": "topics", "event": "Camp Fire",
                "area": "Butte County, California", "date_range": "November 2018", "word_limit": 150
            }
        })
    };

    let (status, body) = post_json(&app, "/reports", request("advanced")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["code"], "unprocessable");

    let (status, job) = post_json(&app, "/corpora/camp-fire/enrich", json!({})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["kind"], "enrich");
    let job = wait_job(&app, &job).await;
    assert_eq!(job["status"], "done", "{job}");
    let (_, enrichment) = get(&app, &format!("/{}", job["output_ref"].as_str().unwrap())).await;
    assert_eq!(enrichment["posts"].as_array().unwrap().len(), 200);

    let (_, job) = post_json(&app, "/corpora/camp-fire/topics", json!({"k_grid": [3, 4, 5]})).await;
    let job = wait_job(&app, &job).await;
    assert_eq!(job["status"], "done", "{job}");

    let bad = json!({"dimensions": [{"dimension": "sentiment", "classes": ["ecstatic"]}], "target_size": 20});
    let (_, job) = post_json(&app, "/corpora/camp-fire/samples", bad).await;
    let job = wait_job(&app, &job).await;
    assert_eq!(job["status"], "failed");
    assert!(job["error"]["detail"].as_str().unwrap().contains("ecstatic"), "{job}");

    let good = json!({"dimensions": [{"dimension": "sentiment", "classes": ["negative", "positive"]}], "target_size": 20});
    let (status, first) = post_json(&app, "/corpora/camp-fire/samples", good.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, second) = post_json(&app, "/corpora/camp-fire/samples", good).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["job_id"], second["job_id"]);
    let job = wait_job(&app, &first).await;
    let sample_ref = job["output_ref"].as_str().unwrap().to_string();
    let (_, sample) = get(&app, &format!("/{sample_ref}")).await;
    assert_eq!(sample["sample"]["members"].as_array().unwrap().len(), 20);

    let mut adv = request("advanced");
    adv["sample_id"] = json!(sample_ref.trim_start_matches("samples/"));
    let (status, advanced) = post_json(&app, "/reports", adv).await;
    assert_eq!(status, StatusCode::CREATED, "{advanced}");
    assert!(!advanced["body"].as_str().unwrap().is_empty());
    assert_eq!(advanced["input_manifest"]["post_ids"], sample["sample"]["members"]);

    let (status, basic) = post_json(&app, "/reports", request("basic")).await;
    assert_eq!(status, StatusCode::CREATED, "{basic}");
    assert_eq!(basic["input_manifest"]["mode"], "basic");
    assert_ne!(basic["input_manifest"], advanced["input_manifest"]);

    let (status, fetched) = get(&app, &format!("/reports/{}", advanced["id"].as_str().unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, advanced);
    let (_, listed) = get(&app, "/corpora/camp-fire/reports").await;
    assert_eq!(listed.as_array().unwrap().len(), 2);

    let (status, chat) = post_json(&app, "/chats", json!({"report_id": advanced["id"]})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(chat["turns"], 0);
    let uri = format!("/chats/{}/messages", chat["id"].as_str().unwrap());
    let (status, reply) = post_json(&app, &uri, json!({"question": "Which roads are closed?"})).await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    assert_eq!(reply["turns"], 1);
    assert!(!reply["answer"].as_str().unwrap().is_empty());
    let (status, _) = post_json(&app, "/chats/nope/messages", json!({"question": "q"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, job) =
        post_json(&app, "/evals", json!({"basic_report_id": basic["id"], "advanced_report_id": advanced["id"]})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = wait_job(&app, &job).await;
    assert_eq!(job["status"], "done", "{job}");
    let (_, eval) = get(&app, &format!("/{}", job["output_ref"].as_str().unwrap())).await;
    let metrics: Vec<&str> = eval["table"]["rows"].as_array().unwrap().iter().map(|r| r["metric"].as_str().unwrap()).collect();
    for m in ["rouge1", "rouge2", "rougeL", "tfidf_cosine", "embedding_cosine", "coverage"] {
        assert!(metrics.contains(&m), "{metrics:?}");
    }

    let (_, summary) = get(&app, "/datasets/camp-fire").await;
    assert_eq!(summary["posts"], 200);
    assert_eq!(summary["enrichments"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_bodies_are_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = Request::post("/reports").header("content-type", "application/json").body(Body::from("{not json")).unwrap();
    let (status, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");
    let (status, _) = post_json(&app, "/chats", json!({"report_id": "missing"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
