mod common;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use refmix_pipeline::backend::{parse_backend, BackendRequest, HttpJudge, Task, BACKEND_TOKEN_ENV, JUDGE_BASE_URL_ENV, JUDGE_KEY_ENV};
use refmix_pipeline::PipelineError;

// Env vars are process-wide, so everything touching them lives in one test.
#[test]
fn http_backend_and_judge() {
    let png = refmix_pipeline::image_io::encode_png(&refmix_pipeline::image_io::render_scene(1, None)).unwrap();
    let encoded = STANDARD.encode(&png);
    let (url, log) = common::serve(move |body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        if v["prompt"] == "boom" {
            (500, "{}".into())
        } else if v["task"] == "t2i" {
            (200, format!("{{\"status\":\"ok\",\"images\":[\"{encoded}\"]}}"))
        } else if v["task"] == "edit" {
            (200, "{\"status\":\"overloaded\"}".into())
        } else {
            (200, "{\"text\":\"YES\"}".into())
        }
    });

    std::env::set_var(BACKEND_TOKEN_ENV, "secret");
    let backend = parse_backend(&format!("http:{url}")).unwrap();
    let resp = backend.call(&BackendRequest::new(Task::T2i, "a red bag", 9).element("bag")).unwrap();
    assert_eq!(resp.images, vec![png.clone()]);
    {
        let log = log.lock().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&log[0].body).unwrap();
        assert_eq!(sent["task"], "t2i");
        assert_eq!(sent["seed"], 9);
        assert_eq!(sent["element"], "bag");
        assert_eq!(log[0].auth.as_deref(), Some("Bearer secret"));
    }
    assert!(backend.call(&BackendRequest::new(Task::T2i, "boom", 0)).unwrap_err().is_backend());
    let err = backend.call(&BackendRequest::new(Task::Edit, "x", 0)).unwrap_err();
    assert!(err.to_string().contains("overloaded"), "{err}");
    assert!(matches!(parse_backend("http:ftp://nope"), Err(PipelineError::Config(_))));

    std::env::remove_var(JUDGE_BASE_URL_ENV);
    std::env::remove_var(JUDGE_KEY_ENV);
    let err = HttpJudge::from_env("vlm-a").err().unwrap();
    assert!(matches!(err, PipelineError::Config(_)));
    assert!(err.to_string().contains(JUDGE_BASE_URL_ENV) && err.to_string().contains(JUDGE_KEY_ENV));
    std::env::set_var(JUDGE_BASE_URL_ENV, &url);
    assert!(HttpJudge::from_env("vlm-a").err().unwrap().to_string().contains(JUDGE_KEY_ENV));
    std::env::set_var(JUDGE_KEY_ENV, "k");
    let judge = HttpJudge::from_env("vlm-a").unwrap();
    use refmix_pipeline::backend::Backend;
    let resp = judge.call(&BackendRequest::new(Task::Judge, "did it work", 0).images(vec![png])).unwrap();
    assert_eq!(resp.text.as_deref(), Some("YES"));
    assert_eq!(log.lock().unwrap().last().unwrap().auth.as_deref(), Some("Bearer k"));
    assert!(judge.call(&BackendRequest::new(Task::T2i, "x", 0)).is_err());
}
