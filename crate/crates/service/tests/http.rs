mod common;

use common::{config, start};

#[tokio::test(flavor = "multi_thread")]
async fn token_guards_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.api_token = Some("s3cret".into());
    let svc = start(cfg).await;
    let client = reqwest::Client::new();
    let url = format!("{}/api/v1/state", svc.url());

    let r = client.get(&url).send().await.unwrap();
    assert_eq!(r.status(), 401);
    let body: serde_json::Value = r.json().await.unwrap();
    assert_eq!(body["code"], "unauthorized");
    assert_eq!(client.get(&url).bearer_auth("wrong").send().await.unwrap().status(), 401);
    assert_eq!(client.get(&url).bearer_auth("s3cret").send().await.unwrap().status(), 200);
    assert_eq!(client.get(format!("{url}?token=s3cret")).send().await.unwrap().status(), 200);
    // the dashboard itself is public
    assert_eq!(client.get(format!("{}/ui/", svc.url())).send().await.unwrap().status(), 200);
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn placeholder_without_dashboard() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(config(dir.path())).await;
    let client = reqwest::Client::builder().redirect(reqwest::redirect::Policy::none()).build().unwrap();

    let r = client.get(svc.url()).send().await.unwrap();
    assert!(r.status().is_redirection());
    assert_eq!(r.headers()["location"], "/ui/");
    let r = client.get(format!("{}/ui/", svc.url())).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert!(r.text().await.unwrap().contains("/api/v1"));
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn serves_dashboard_files() {
    let dir = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>dashboard</html>").unwrap();
    std::fs::create_dir(ui.path().join("assets")).unwrap();
    std::fs::write(ui.path().join("assets/app.js"), "console.log(1)").unwrap();
    let mut cfg = config(dir.path());
    cfg.ui_dir = Some(ui.path().to_path_buf());
    let svc = start(cfg).await;
    let client = reqwest::Client::new();

    let index = client.get(format!("{}/ui/", svc.url())).send().await.unwrap();
    assert_eq!(index.text().await.unwrap(), "<html>dashboard</html>");
    let js = client.get(format!("{}/ui/assets/app.js", svc.url())).send().await.unwrap();
    assert_eq!(js.status(), 200);
    assert!(js.headers()["content-type"].to_str().unwrap().contains("javascript"));
    // client-side routes fall back to the index
    let deep = client.get(format!("{}/ui/history/42", svc.url())).send().await.unwrap();
    assert_eq!(deep.text().await.unwrap(), "<html>dashboard</html>");
    svc.shutdown().await;
}
