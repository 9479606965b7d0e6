mod common;

use std::time::{Duration, Instant};

use common::*;
use pathquant_server::ServeError;

#[test]
fn shutdown_drains_in_flight_requests() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.api.pool_size = 1;
    let server = start(cfg);
    let base = server.api_url();
    let png = fixture_png(1400, 1400, 60, 20, 3);
    let request = {
        let base = base.clone();
        std::thread::spawn(move || {
            let resp = client()
                .post(format!("{base}/api/infer?resolution=10x"))
                .multipart(img_form("img", png))
                .send()
                .unwrap();
            (resp.status().as_u16(), json(resp)["scoring"]["num_total"].as_u64())
        })
    };
    let c = client();
    let deadline = Instant::now() + Duration::from_secs(60);
    while json(c.get(format!("{base}/api/metrics")).send().unwrap())["jobs_running"] != 1 {
        assert!(Instant::now() < deadline, "job never started");
        std::thread::sleep(Duration::from_millis(5));
    }
    drop(c);
    server.stop().unwrap();
    assert_eq!(request.join().unwrap(), (200, Some(60)));
    assert!(client().get(format!("{base}/api/health")).send().is_err(), "still accepting after shutdown");
}

#[test]
fn occupied_port_is_a_bind_error() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = config(dir.path());
    cfg.web.port = taken.local_addr().unwrap().port();
    match pathquant_server::spawn(cfg) {
        Err(ServeError::Bind { addr, .. }) => assert_eq!(addr, taken.local_addr().unwrap()),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("bound an occupied port"),
    }
}

#[test]
fn retention_sweep_runs_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let id = pathquant_server::records::new_id();
    {
        let store = pathquant_store::LocalStore::open(dir.path()).unwrap();
        let put = |k: String, v: &str| {
            pathquant_store::ObjectStore::put(
                &store,
                &pathquant_store::ObjectKey::new(k).unwrap(),
                v.as_bytes(),
                "application/json",
            )
            .unwrap()
        };
        put(format!("results/{id}/record.json"), r#"{"created_at": 0}"#);
        put(format!("results/{id}/seg.png"), "x");
    }
    let mut cfg = config(dir.path());
    cfg.web.ttl_secs = 3600;
    let server = start(cfg);
    let deadline = Instant::now() + Duration::from_secs(10);
    while dir.path().join("objects/results").exists() {
        assert!(Instant::now() < deadline, "expired result survived startup");
        std::thread::sleep(Duration::from_millis(10));
    }
    let mut web = WebClient::new(server.web_url());
    assert_eq!(web.get(&format!("/results/{id}")).status(), 404);
}
