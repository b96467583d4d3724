mod common;

use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};

use peershare::{Daemon, PermissionMode};

use common::*;

#[tokio::test]
async fn share_lifecycle_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let d = start(&tmp.path().join("data"), "alice").await;
    let http = Http::new(d.api_addr());
    let f = tmp.path().join("report.pdf");
    std::fs::write(&f, b"pdf").unwrap();

    let (status, body) = http
        .post("/v1/shares", json!({ "path": f, "mode": "read" }))
        .await;
    assert_eq!(status, 201);
    assert_eq!(body["entry"]["display_name"], "report.pdf");
    assert_eq!(body["feedback"]["severity"], "info");
    let tags: Vec<_> = body["feedback"]["capabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["tag"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(tags, ["list", "get"]);
    let id = body["entry"]["share_id"].as_str().unwrap().to_owned();

    let (status, _) = http.post("/v1/shares", json!({ "path": f })).await;
    assert_eq!(status, 409);
    let (status, _) = http.post("/v1/shares", json!({ "path": tmp.path() })).await;
    assert_eq!(status, 400);
    let (status, _) = http
        .post("/v1/shares", json!({ "path": tmp.path().join("nope") }))
        .await;
    assert_eq!(status, 404);
    let (status, _) = http
        .post("/v1/shares", json!({ "path": f, "mode": "admin" }))
        .await;
    assert_eq!(status, 400);
    let (status, _) = http.post("/v1/shares", json!("not an object")).await;
    assert_eq!(status, 400);

    let (status, body) = http
        .patch(&format!("/v1/shares/{id}"), json!({ "mode": "full" }))
        .await;
    assert_eq!(status, 200);
    assert_eq!(body["entry"]["mode"], "full");
    assert_eq!(body["feedback"]["severity"], "danger");
    let (status, _) = http
        .patch("/v1/shares/missing", json!({ "mode": "full" }))
        .await;
    assert_eq!(status, 404);

    let (status, _) = http.delete(&format!("/v1/shares/{id}")).await;
    assert_eq!(status, 428);
    let (status, _) = http.delete(&format!("/v1/shares/{id}?confirm=true")).await;
    assert_eq!(status, 200);
    assert!(f.exists());
    let (_, shares) = http.get("/v1/shares").await;
    assert_eq!(shares, json!([]));

    let (_, events) = http.get("/v1/events?since=0").await;
    let kinds: Vec<_> = events
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["what"].clone())
        .collect();
    assert_eq!(kinds, ["share_added", "mode_changed", "share_removed"]);
    let seqs: Vec<_> = events
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, [1, 2, 3]);
    let (_, filtered) = http.get("/v1/events?what=mode_changed").await;
    assert_eq!(filtered.as_array().unwrap().len(), 1);
    let (status, _) = http.get("/v1/events?what=bogus").await;
    assert_eq!(status, 400);
    d.shutdown().await;
}

#[tokio::test]
async fn transfers_between_two_daemons() {
    let tmp = tempfile::tempdir().unwrap();
    let a = start(&tmp.path().join("a"), "alice").await;
    let b = start(&tmp.path().join("b"), "bob").await;
    let f = tmp.path().join("doc.txt");
    std::fs::write(&f, b"hello").unwrap();
    let share = a
        .node()
        .registry
        .add_share(&f, PermissionMode::Read)
        .unwrap();
    introduce(&b, &a);
    let http = Http::new(b.api_addr());
    let alice = a.identity().peer_id.clone();

    let (status, peers) = http.get("/v1/peers").await;
    assert_eq!(status, 200);
    assert_eq!(peers[0]["display_name"], "alice");
    assert_eq!(peers[0]["share_count"], 1);

    let (status, files) = http.get(&format!("/v1/peers/{alice}/files")).await;
    assert_eq!(status, 200);
    assert_eq!(files[0]["share_id"], share.share_id);
    assert!(files[0].get("path").is_none());
    // By display name as well.
    let (status, _) = http.get("/v1/peers/alice/files").await;
    assert_eq!(status, 200);

    let dest = tmp.path().join("copy.txt");
    let (status, body) = http
        .post(
            "/v1/transfers",
            json!({ "peer_id": alice, "action": "get", "share_id": share.share_id, "local_path": dest }),
        )
        .await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["bytes"], 5);
    assert_eq!(std::fs::read(&dest).unwrap(), b"hello");

    let (status, body) = http
        .post(
            "/v1/transfers",
            json!({ "peer_id": alice, "action": "put", "share_id": share.share_id,
                    "local_path": dest, "confirm": true }),
        )
        .await;
    assert_eq!(status, 502);
    assert_eq!(body["error"], "denied");

    let (status, body) = http
        .post(
            "/v1/transfers",
            json!({ "peer_id": alice, "action": "delete", "share_id": "nope", "confirm": true }),
        )
        .await;
    assert_eq!(status, 502);
    assert_eq!(body["error"], "unknown_share");

    let (status, _) = http
        .post(
            "/v1/transfers",
            json!({ "peer_id": "ghost", "action": "get", "share_id": "x", "local_path": dest }),
        )
        .await;
    assert_eq!(status, 404);
    let (status, _) = http
        .post(
            "/v1/transfers",
            json!({ "peer_id": alice, "action": "get", "share_id": "x" }),
        )
        .await;
    assert_eq!(status, 400);

    a.shutdown().await;
    b.shutdown().await;
}

async fn read_lines(resp: reqwest::Response, n: usize) -> Vec<Value> {
    let mut body = resp.bytes_stream();
    let mut buf = Vec::new();
    let mut out = Vec::new();
    while out.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(5), body.next())
            .await
            .expect("stream stalled")
            .expect("stream ended")
            .unwrap();
        buf.extend_from_slice(&chunk);
        while let Some(pos) = buf.iter().position(|b| *b == b'\n') {
            let line: Vec<u8> = buf.drain(..=pos).collect();
            if line[0] != b':' {
                out.push(serde_json::from_slice(&line[..line.len() - 1]).unwrap());
            }
        }
    }
    out
}

#[tokio::test]
async fn event_stream_history_then_live_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let a = start(&tmp.path().join("a"), "alice").await;
    let http = Http::new(a.api_addr());
    let files: Vec<_> = (0..3)
        .map(|i| {
            let p = tmp.path().join(format!("f{i}"));
            std::fs::write(&p, [i]).unwrap();
            p
        })
        .collect();
    let s0 = a
        .node()
        .registry
        .add_share(&files[0], PermissionMode::Read)
        .unwrap();
    a.node()
        .registry
        .add_share(&files[1], PermissionMode::Read)
        .unwrap();

    let resp = http.raw("/v1/events/stream?since=0").await;
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let other = http.raw("/v1/events/stream?since=0").await;

    let reader = tokio::spawn(read_lines(resp, 4));
    let reader2 = tokio::spawn(read_lines(other, 4));
    tokio::time::sleep(Duration::from_millis(100)).await;
    let out = tmp.path().join("got");
    peershare::wire::client::perform_remote(
        a.wire_addr(),
        &identity("bob"),
        peershare::Action::Get,
        &s0.share_id,
        Some(&out),
    )
    .await
    .unwrap();
    a.node()
        .registry
        .add_share(&files[2], PermissionMode::Full)
        .unwrap();

    let got = reader.await.unwrap();
    let got2 = reader2.await.unwrap();
    assert_eq!(got, got2);
    let seqs: Vec<_> = got.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, [1, 2, 3, 4]);
    assert_eq!(got[2]["what"], "get");
    assert_eq!(got[2]["peer_name"], "bob");

    // Resume after the last seen seq: nothing repeated, nothing skipped.
    let resumed = read_lines(http.raw("/v1/events/stream?since=2").await, 2).await;
    assert_eq!(
        resumed
            .iter()
            .map(|e| e["seq"].as_u64().unwrap())
            .collect::<Vec<_>>(),
        [3, 4]
    );
    a.shutdown().await;
}

#[tokio::test]
async fn status_reports_identity_and_counters() {
    let tmp = tempfile::tempdir().unwrap();
    let a = start(&tmp.path().join("a"), "alice").await;
    let (status, body) = Http::new(a.api_addr()).get("/v1/status").await;
    assert_eq!(status, 200);
    assert_eq!(body["peer_id"], a.identity().peer_id);
    assert_eq!(body["name"], "alice");
    assert_eq!(body["wire_port"], a.wire_addr().port());
    assert_eq!(body["degraded_audit"], false);
    assert_eq!(body["counters"]["shares"], 0);

    let (status, _) = Http::new(a.api_addr()).get("/").await;
    assert_eq!(status, 200);
    a.shutdown().await;
}

#[tokio::test]
async fn peer_id_survives_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("a");
    let a = start(&dir, "alice").await;
    let id = a.identity().peer_id.clone();
    a.shutdown().await;
    let a = start(&dir, "alice").await;
    assert_eq!(a.identity().peer_id, id);
    a.shutdown().await;
}

fn non_loopback_ip() -> Option<IpAddr> {
    let s = UdpSocket::bind("0.0.0.0:0").ok()?;
    s.connect("10.255.255.255:9").ok()?;
    let ip = s.local_addr().ok()?.ip();
    (!ip.is_loopback() && !ip.is_unspecified()).then_some(ip)
}

#[tokio::test]
async fn api_is_loopback_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(&tmp.path().join("a"), "alice");
    cfg.api_bind = SocketAddr::from(([0, 0, 0, 0], 0));
    assert!(matches!(
        Daemon::start(cfg).await,
        Err(peershare::daemon::DaemonError::NonLoopbackApi(_))
    ));

    let a = start(&tmp.path().join("b"), "alice").await;
    assert!(a.api_addr().ip().is_loopback());
    match non_loopback_ip() {
        Some(ip) => {
            let r = tokio::net::TcpStream::connect(SocketAddr::new(ip, a.api_addr().port())).await;
            assert!(r.is_err(), "API reachable via {ip}");
        }
        None => eprintln!("no non-loopback interface; bind check only"),
    }
    a.shutdown().await;
}
