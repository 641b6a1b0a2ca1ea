mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use campus_bus::TerminalId;
use campus_coordinator::{Coordinator, ReportFormat, ReportQuery, Role, UserAction, CSV_HEADER};
use campus_service::scenario::{CardSpec, HolderSpec, ScheduleSpec};
use campus_service::site::card_record;
use campus_service::{ApiError, ManualClock, Service, Site};
use campus_tag::{v1, verify_card, TagImage};
use campus_terminal::{DenyReason, TerminalMode};
use chrono::NaiveDate;
use common::*;
use http_body_util::BodyExt;
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

#[tokio::test]
async fn login_failures_yield_no_token() {
    let w = World::new(SITE);
    for (user, pw) in [(ADMIN, "wrong"), ("ghost", "x")] {
        let r = w
            .send(
                Method::POST,
                "/v1/login",
                None,
                Some(json!({ "username": user, "password": pw })),
            )
            .await;
        assert_eq!(r.status, StatusCode::UNAUTHORIZED);
        assert!(r.json().get("token").is_none());
    }
    let token = w.login(ADMIN).await;
    assert_eq!(token.len(), 64);
    assert_eq!(w.get("/v1/doors", &token).await.status, StatusCode::OK);
}

#[tokio::test]
async fn bad_unknown_and_expired_tokens_are_rejected() {
    let w = World::new(SITE);
    let r = w.send(Method::GET, "/v1/doors", None, None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.headers["www-authenticate"], "Bearer");
    assert_eq!(w.get("/v1/doors", "deadbeef").await.status, StatusCode::UNAUTHORIZED);

    let token = w.login(VIEWER).await;
    w.clock.advance(8 * 3600 - 1);
    assert_eq!(w.get("/v1/doors", &token).await.status, StatusCode::OK);
    w.clock.advance(1);
    assert_eq!(w.get("/v1/doors", &token).await.status, StatusCode::UNAUTHORIZED);

    let token = w.login(VIEWER).await;
    let r = w.send(Method::POST, "/v1/logout", Some(&token), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert_eq!(w.get("/v1/doors", &token).await.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn role_gates() {
    let w = World::new(SITE);
    let viewer = w.login(VIEWER).await;
    let operator = w.login(OPERATOR).await;
    let ana = w.svc.with_site(|s| s.card_uid("ana").unwrap());

    for uri in ["/v1/doors", "/v1/cards", "/v1/alarms", "/v1/events"] {
        assert_eq!(w.get(uri, &viewer).await.status, StatusCode::OK, "{uri}");
    }
    let lock = format!("/v1/cards/{ana}/lock");
    assert_eq!(w.post(&lock, &viewer, json!({})).await.status, StatusCode::FORBIDDEN);
    assert_eq!(
        w.post("/v1/poll", &viewer, json!({})).await.status,
        StatusCode::FORBIDDEN
    );
    let present = json!({ "terminal": "lobby", "cards": [{ "card": "ana" }] });
    assert_eq!(
        w.post("/v1/sim/present", &viewer, present).await.status,
        StatusCode::FORBIDDEN
    );
    let brief = "/v1/terminals/vault/unlock-brief";
    assert_eq!(w.post(brief, &viewer, json!({})).await.status, StatusCode::FORBIDDEN);
    assert_eq!(w.get("/v1/users", &operator).await.status, StatusCode::FORBIDDEN);
    let user = json!({ "username": "x", "role": "VIEWER", "password": "x" });
    assert_eq!(w.post("/v1/users", &operator, user).await.status, StatusCode::FORBIDDEN);
    assert_eq!(
        w.post("/v1/backup", &operator, json!({})).await.status,
        StatusCode::FORBIDDEN
    );

    // the 403s changed nothing
    assert!(!w.svc.with_coordinator(|c| c.card(ana).unwrap().locked));
    let r = w.post(&lock, &operator, json!({})).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["changed"], true);
    assert!(w.svc.with_coordinator(|c| c.card(ana).unwrap().locked));
}

#[tokio::test]
async fn unknown_ids_are_404_and_malformed_input_400() {
    let w = World::new(SITE);
    let admin = w.login(ADMIN).await;
    for uri in ["/v1/doors/0:09", "/v1/doors/garage", "/v1/cards/E000000000000001"] {
        assert_eq!(w.get(uri, &admin).await.status, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(
        w.post("/v1/alarms/99/ack", &admin, json!({})).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        w.post("/v1/cards/E000000000000001/lock", &admin, json!({}))
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    let r = w.send(Method::DELETE, "/v1/users/ghost", Some(&admin), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    assert_eq!(
        w.get("/v1/cards/not-a-uid", &admin).await.status,
        StatusCode::BAD_REQUEST
    );
    for q in [
        "from=100&to=50",
        "gate=abc",
        "gate=99",
        "kind=NOPE",
        "sort=colour",
        "format=xml",
        "bogus=1",
        "from=yesterday",
    ] {
        let r = w.get(&format!("/v1/events?{q}"), &admin).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{q}: {}", r.text());
        assert!(r.json()["error"].is_string());
    }
    let rights = json!({ "gates": [64], "schedule": "all" });
    let ana = w.svc.with_site(|s| s.card_uid("ana").unwrap());
    let r = w.post(&format!("/v1/cards/{ana}/rights"), &admin, rights).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = w
        .post(
            &format!("/v1/cards/{ana}/rights"),
            &admin,
            json!({ "gates": [1], "schedule": "sometimes" }),
        )
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unlock_brief_on_gate_three_releases_within_one_poll() {
    let w = World::new(SITE);
    let op = w.login(OPERATOR).await;
    let vault = w.svc.resolve_terminal("vault").unwrap();
    assert_eq!(w.svc.with_coordinator(|c| c.terminal(vault).unwrap().gate_id), 3);

    let r = w.post("/v1/terminals/vault/unlock-brief", &op, json!({})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let door = w.get("/v1/doors/0:03", &op).await.json();
    assert_eq!(door["live"]["door"], "RELEASED");

    let polled = w.post("/v1/poll", &op, json!({})).await.json();
    assert!(polled["ingested"].as_u64().unwrap() >= 1);
    let door = w.get("/v1/doors/vault", &op).await.json();
    assert_eq!(door["status"], "RELEASED");
    assert_eq!(door["last_event"]["kind"], "MODE_CHANGED");

    // relocks by itself after the configured strike time
    w.clock.advance(5);
    let door = w.get("/v1/doors/vault", &op).await.json();
    assert_eq!(door["live"]["door"], "LOCKED");
}

#[tokio::test]
async fn door_left_open_marks_gate_alarmed() {
    let w = World::new(SITE);
    let op = w.login(OPERATOR).await;
    let reads = w
        .post(
            "/v1/sim/present",
            &op,
            json!({ "terminal": "lobby", "cards": [{ "card": "ben" }] }),
        )
        .await
        .json();
    assert_eq!(reads[0]["decision"], "GRANT");
    w.clock.advance(1);
    let r = w
        .post("/v1/sim/door", &op, json!({ "terminal": "lobby", "state": "open" }))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    w.clock.advance(30);
    w.post("/v1/poll", &op, json!({})).await;

    let doors = w.get("/v1/doors", &op).await.json();
    let lobby = doors.as_array().unwrap().iter().find(|d| d["name"] == "lobby").unwrap();
    assert_eq!(lobby["status"], "ALARMED");
    assert_eq!(lobby["last_event"]["kind"], "DOOR_LEFT_OPEN");
    assert_eq!(lobby["last_event"]["ts"], START + 31);
    for other in doors.as_array().unwrap().iter().filter(|d| d["name"] != "lobby") {
        assert_eq!(other["status"], "LOCKED");
    }

    let alarms = w.get("/v1/alarms", &op).await.json();
    assert_eq!(alarms.as_array().unwrap().len(), 1);
    let id = alarms[0]["id"].as_u64().unwrap();
    let acked = w.post(&format!("/v1/alarms/{id}/ack"), &op, json!({})).await.json();
    assert_eq!(acked["acknowledged_by"], OPERATOR);
    assert_eq!(acked["acknowledged_at"], START + 31);
}

#[tokio::test]
async fn events_endpoint_returns_report_bytes() {
    let w = World::new(SITE);
    let op = w.login(OPERATOR).await;
    for (t, card) in [("lobby", "ana"), ("lab", "cy"), ("vault", "ana"), ("vault", "ben")] {
        w.post(
            "/v1/sim/present",
            &op,
            json!({ "terminal": t, "cards": [{ "card": card }] }),
        )
        .await;
        w.clock.advance(7);
    }
    w.post("/v1/poll", &op, json!({})).await;

    let r = w.get("/v1/events", &op).await;
    assert_eq!(r.headers["content-type"], "text/csv; charset=utf-8");
    let direct = w
        .svc
        .with_coordinator(|c| c.query_report(&ReportQuery::default()).unwrap());
    assert_eq!(r.body, direct);
    assert_eq!(r.text().lines().next(), Some(CSV_HEADER));
    assert_eq!(r.text().lines().count(), 5);

    let r = w.get("/v1/events?gate=3&kind=ACCESS_DENIED&format=jsonl", &op).await;
    assert_eq!(r.headers["content-type"], "application/x-ndjson");
    let q = ReportQuery {
        gates: Some([3].into()),
        kinds: Some([campus_terminal::EventKind::AccessDenied].into()),
        format: ReportFormat::JsonLines,
        ..ReportQuery::default()
    };
    let direct = w.svc.with_coordinator(|c| c.query_report(&q).unwrap());
    assert_eq!(r.body, direct);
    let lines: Vec<Value> = r.text().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["personal_id"], 100);
    assert_eq!(lines[0]["detail"], DenyReason::GateNotAllowed.code());

    let r = w
        .get("/v1/events?person=101&sort=ts&desc=true&from=2026-10-12T08:00:00Z", &op)
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.text().lines().count(), 2);
}

#[tokio::test]
async fn card_issue_rights_and_write_on_sight() {
    let w = World::new(SITE);
    let admin = w.login(ADMIN).await;
    let new = json!({
        "name": "dee", "personal_id": 555, "holder": "personnel", "expiry": "2031-01-31",
        "gates": [2], "schedule": "weekdays 07:00-19:00", "meal_plan": 1
    });
    let r = w.post("/v1/cards", &admin, new.clone()).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    let issued = r.json();
    let uid = issued["uid"].as_str().unwrap().to_owned();
    let image = TagImage::from_file_bytes(&hex::decode(issued["image"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(image.uid().to_string(), uid);
    assert!(verify_card(&w.svc.with_coordinator(|c| c.system_key()), &image));
    // one active card per person
    assert_eq!(w.post("/v1/cards", &admin, new).await.status, StatusCode::CONFLICT);

    let card = w.get(&format!("/v1/cards/{uid}"), &admin).await.json();
    assert_eq!(card["personal_id"], 555);
    let all = w.get("/v1/cards", &admin).await.json();
    assert_eq!(all.as_array().unwrap().len(), 4);

    let present = |t: &str| json!({ "terminal": t, "cards": [{ "card": "dee" }] });
    let r = w.post("/v1/sim/present", &admin, present("vault")).await.json();
    assert_eq!(r[0]["decision"], "DENY(GATE_NOT_ALLOWED)");

    let plan = w
        .post(
            &format!("/v1/cards/{uid}/rights"),
            &admin,
            json!({ "gates": [2, 3], "schedule": "all" }),
        )
        .await
        .json();
    assert_eq!(plan["plan"], "queued");
    let writes = plan["writes"].as_array().unwrap();
    assert!(writes.iter().all(|w| w["delivery"] == "delivered"), "{plan}");
    let gates: Vec<u64> = writes.iter().map(|w| w["gate"].as_u64().unwrap()).collect();
    assert!(gates.contains(&2) && gates.contains(&3));

    // decided on the card as presented; the new rights are written on the way out
    w.clock.advance(1);
    let r = w.post("/v1/sim/present", &admin, present("vault")).await.json();
    assert_eq!(r[0]["decision"], "DENY(GATE_NOT_ALLOWED)");
    w.clock.advance(1);
    let r = w.post("/v1/sim/present", &admin, present("vault")).await.json();
    assert_eq!(r[0]["decision"], "GRANT");
    let written = w
        .svc
        .with_site(|s| v1::gates(s.card_image(uid.parse().unwrap()).unwrap()));
    assert_eq!(written, 0b1100);

    let lock = w.post(&format!("/v1/cards/{uid}/lock"), &admin, json!({})).await.json();
    assert_eq!(lock["changed"], true);
    assert_eq!(lock["delivered"].as_array().unwrap().len(), 3);
    w.clock.advance(10);
    let r = w.post("/v1/sim/present", &admin, present("lab")).await.json();
    assert_eq!(r[0]["decision"], "DENY(REVOKED)");
    // locking again pushes the revocation again
    let again = w.post(&format!("/v1/cards/{uid}/lock"), &admin, json!({})).await.json();
    assert_eq!(again["delivered"].as_array().unwrap().len(), 3);
    let unlock = format!("/v1/cards/{uid}/unlock");
    assert_eq!(w.post(&unlock, &admin, json!({})).await.json()["changed"], true);
    assert_eq!(w.post(&unlock, &admin, json!({})).await.json()["changed"], false);
}

#[tokio::test]
async fn terminal_mode_endpoints() {
    let w = World::new(SITE);
    let op = w.login(OPERATOR).await;
    let present = |t: &str, c: &str| json!({ "terminal": t, "cards": [{ "card": c }] });
    let r = w.post("/v1/sim/present", &op, present("vault", "cy")).await.json();
    assert_eq!(r[0]["decision"], "DENY(GATE_NOT_ALLOWED)");

    let r = w
        .post(
            "/v1/terminals/0:03/mode",
            &op,
            json!({ "mode": "category", "holders": ["visitor"] }),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let r = w.post("/v1/sim/present", &op, present("vault", "cy")).await.json();
    assert_eq!(r[0]["decision"], "GRANT");

    w.post("/v1/terminals/vault/mode", &op, json!({ "mode": "normal" }))
        .await;
    let until = START + 600;
    let r = w
        .post("/v1/terminals/lab/unlock-until", &op, json!({ "until": until }))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    w.clock.advance(10);
    let r = w.post("/v1/sim/present", &op, present("lab", "cy")).await.json();
    assert_eq!(r[0]["decision"], "GRANT");
    let lab = w.svc.resolve_terminal("lab").unwrap();
    assert_eq!(
        w.svc.with_coordinator(|c| c.terminal(lab).unwrap().mode),
        TerminalMode::UnlockedUntil(until)
    );
    w.clock.set(until + 1);
    let r = w.post("/v1/sim/present", &op, present("lab", "cy")).await.json();
    assert_eq!(r[0]["decision"], "DENY(GATE_NOT_ALLOWED)");
}

#[tokio::test]
async fn users_crud() {
    let w = World::new(SITE);
    let admin = w.login(ADMIN).await;
    let r = w
        .post(
            "/v1/users",
            &admin,
            json!({ "username": "pat", "role": "OPERATOR", "password": "pat-pw" }),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = w
        .post(
            "/v1/users",
            &admin,
            json!({ "username": "pat", "role": "VIEWER", "password": "x" }),
        )
        .await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let list = w.get("/v1/users", &admin).await;
    assert!(!list.text().contains("argon2"), "hashes leaked: {}", list.text());
    let roles: BTreeMap<String, String> = list
        .json()
        .as_array()
        .unwrap()
        .iter()
        .map(|u| {
            (
                u["username"].as_str().unwrap().into(),
                u["role"].as_str().unwrap().into(),
            )
        })
        .collect();
    assert_eq!(roles["pat"], "OPERATOR");
    assert_eq!(roles.len(), 4);

    let pat = w.login("pat").await;
    assert_eq!(w.post("/v1/poll", &pat, json!({})).await.status, StatusCode::OK);
    let r = w
        .send(
            Method::PATCH,
            "/v1/users/pat",
            Some(&admin),
            Some(json!({ "role": "VIEWER" })),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(w.post("/v1/poll", &pat, json!({})).await.status, StatusCode::FORBIDDEN);

    let r = w
        .send(
            Method::PATCH,
            "/v1/users/pat",
            Some(&admin),
            Some(json!({ "password": "fresh" })),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let r = w
        .send(
            Method::POST,
            "/v1/login",
            None,
            Some(json!({ "username": "pat", "password": "fresh" })),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let r = w
        .send(Method::PATCH, "/v1/users/pat", Some(&admin), Some(json!({})))
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = w.send(Method::DELETE, "/v1/users/pat", Some(&admin), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert_eq!(w.get("/v1/doors", &pat).await.status, StatusCode::UNAUTHORIZED);
    let r = w.send(Method::DELETE, "/v1/users/admin", Some(&admin), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn backup_writes_a_restorable_store() {
    let dir = tempfile::tempdir().unwrap();
    let (c, site) = build(SITE);
    let clock = Arc::new(ManualClock::new(START));
    let svc = Arc::new(Service::new(c, site, clock.clone()).with_backups(dir.path().join("bk"), "bk-pass".into()));
    let w = World::around(svc, clock);
    let admin = w.login(ADMIN).await;
    w.post(
        "/v1/sim/present",
        &admin,
        json!({ "terminal": "lab", "cards": [{ "card": "ana" }] }),
    )
    .await;
    w.post("/v1/poll", &admin, json!({})).await;

    let r = w.post("/v1/backup", &admin, json!({})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let path = std::path::PathBuf::from(r.json()["path"].as_str().unwrap());
    assert_eq!(path.file_name().unwrap(), "campus-20261012T080000Z.cgdb");
    let restored = Coordinator::restore(&path, "bk-pass").unwrap();
    assert_eq!(restored.state_bytes(), w.svc.with_coordinator(|c| c.state_bytes()));
    assert_eq!(restored.events().len(), 1);

    let plain = World::new(SITE);
    let admin = plain.login(ADMIN).await;
    assert_eq!(
        plain.post("/v1/backup", &admin, json!({})).await.status,
        StatusCode::BAD_REQUEST
    );
}

// --- live stream ---------------------------------------------------------------

/// Reads server-sent events until `want` items of kind `event` have arrived.
async fn read_sse(body: &mut Body, want: usize) -> Vec<(String, Value)> {
    let mut buf = String::new();
    let mut items = Vec::new();
    while items.iter().filter(|(k, _): &&(String, Value)| k == "event").count() < want {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .expect("stream stalled")
            .expect("stream ended")
            .unwrap();
        if let Ok(data) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut kind = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(k) = line.strip_prefix("event: ") {
                    kind = Some(k.to_owned());
                } else if let Some(d) = line.strip_prefix("data: ") {
                    data = Some(serde_json::from_str(d).unwrap());
                }
            }
            if let (Some(k), Some(d)) = (kind, data) {
                items.push((k, d));
            }
        }
    }
    items
}

#[tokio::test]
async fn sse_stream_carries_events_and_alarms() {
    let w = World::new(SITE);
    let viewer = w.login(VIEWER).await;
    let op = w.login(OPERATOR).await;

    // ingested before the subscription: never shown
    w.post(
        "/v1/sim/present",
        &op,
        json!({ "terminal": "lab", "cards": [{ "card": "ana" }] }),
    )
    .await;
    w.post("/v1/poll", &op, json!({})).await;

    let req = Request::get(format!("/v1/stream?token={viewer}"))
        .body(Body::empty())
        .unwrap();
    let resp = w.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();

    w.post(
        "/v1/sim/present",
        &op,
        json!({ "terminal": "lobby", "cards": [{ "card": "ben" }] }),
    )
    .await;
    w.post("/v1/sim/door", &op, json!({ "terminal": "lobby", "state": "open" }))
        .await;
    w.clock.advance(40);
    w.post(
        "/v1/sim/present",
        &op,
        json!({ "terminal": "vault", "cards": [{ "card": "cy" }] }),
    )
    .await;
    w.post("/v1/poll", &op, json!({})).await;

    let items = read_sse(&mut body, 4).await;
    let kinds: Vec<String> = items
        .iter()
        .map(|(k, d)| format!("{k}:{}", d["kind"].as_str().unwrap_or("")))
        .collect();
    assert_eq!(
        kinds,
        [
            "event:ACCESS_GRANTED",
            "event:DOOR_OPENED",
            "event:DOOR_LEFT_OPEN",
            "alarm:",
            "event:ACCESS_DENIED"
        ]
    );
    assert_eq!(items[3].1["event"]["kind"], "DOOR_LEFT_OPEN");
    assert_eq!(items[0].1["terminal"], "0:01");

    let r = w.send(Method::GET, "/v1/stream?token=nope", None, None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn lagging_subscriber_is_dropped_without_blocking_ingestion() {
    let w = World::new(SITE);
    let admin = w.login(ADMIN).await;
    let req = Request::get("/v1/stream")
        .header("authorization", format!("Bearer {admin}"))
        .body(Body::empty())
        .unwrap();
    let mut body = w.app.clone().oneshot(req).await.unwrap().into_body();

    // more than the stream buffer, never read meanwhile
    let mut total = 0;
    while total < 1500 {
        for t in ["lobby", "lab", "vault"] {
            let r = w
                .post(
                    "/v1/sim/present",
                    &admin,
                    json!({ "terminal": t, "cards": [{ "card": "ana" }] }),
                )
                .await;
            assert_eq!(r.status, StatusCode::OK);
            w.clock.advance(1);
        }
        total += w.post("/v1/poll", &admin, json!({})).await.json()["ingested"]
            .as_u64()
            .unwrap();
    }
    assert_eq!(w.svc.with_coordinator(|c| c.events().len()), total as usize);

    // the stream ends rather than skipping ahead
    let mut seen = 0;
    loop {
        match tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .unwrap()
        {
            Some(Ok(frame)) => {
                if let Ok(d) = frame.into_data() {
                    seen += std::str::from_utf8(&d).unwrap().matches("event: event").count();
                }
            }
            Some(Err(e)) => panic!("{e}"),
            None => break,
        }
    }
    assert!(seen < total as usize, "seen {seen} of {total}");
}

/// Events published on a stream receiver since it subscribed.
fn drain(rx: &mut tokio::sync::broadcast::Receiver<campus_service::StreamItem>) -> Vec<Value> {
    let mut out = Vec::new();
    while let Ok(item) = rx.try_recv() {
        if item.kind == "event" {
            out.push(item.data);
        }
    }
    out
}

fn assert_per_terminal_order(items: &[Value]) {
    let mut last: BTreeMap<String, u64> = BTreeMap::new();
    for e in items {
        let t = e["terminal"].as_str().unwrap().to_owned();
        let seq = e["seq"].as_u64().unwrap();
        let prev = last.insert(t.clone(), seq).unwrap_or(0);
        assert!(seq > prev, "terminal {t}: {seq} after {prev}");
    }
}

#[test]
fn stream_is_complete_under_concurrent_writers() {
    let lossy = SITE.replace("seed: 7", "seed: 7\nbuses: [{loss_prob: 0.2}]");
    let w = World::new(&lossy);
    let mut rx = w.svc.subscribe(VIEWER).unwrap();
    let workers: Vec<_> = ["lobby", "lab", "vault"]
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let svc = w.svc.clone();
            let clock = w.clock.clone();
            std::thread::spawn(move || {
                let id = svc.resolve_terminal(t).unwrap();
                for n in 0..150 {
                    let card = ["ana", "ben", "cy"][(n + i) % 3];
                    let c = campus_service::service::PresentCard {
                        card: card.into(),
                        distance_cm: 5,
                    };
                    svc.sim_present(OPERATOR, id, &[c]).unwrap();
                    if n % 10 == 0 {
                        clock.advance(1);
                        svc.poll_all();
                    }
                }
            })
        })
        .collect();
    let mut got = Vec::new();
    for h in workers {
        h.join().unwrap();
        got.extend(drain(&mut rx));
    }
    // drain what is left on the lossy bus
    for _ in 0..50 {
        w.svc.poll_all();
    }
    got.extend(drain(&mut rx));

    let stored: Vec<Value> = w
        .svc
        .with_coordinator(|c| c.events().iter().map(|e| serde_json::to_value(e).unwrap()).collect());
    assert_eq!(stored.len(), 450);
    assert_eq!(got, stored);
    assert_per_terminal_order(&got);
}

// --- properties ----------------------------------------------------------------

#[derive(Debug, Clone)]
enum StreamOp {
    Present(u8, u8),
    Door(u8, bool),
    Advance(u8),
    Poll,
    Subscribe,
}

fn stream_op() -> impl Strategy<Value = StreamOp> {
    prop_oneof![
        4 => (0u8..3, 0u8..3).prop_map(|(t, c)| StreamOp::Present(t, c)),
        2 => (0u8..3, any::<bool>()).prop_map(|(t, o)| StreamOp::Door(t, o)),
        2 => (0u8..45).prop_map(StreamOp::Advance),
        3 => Just(StreamOp::Poll),
        1 => Just(StreamOp::Subscribe),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn subscriber_sees_each_later_event_once_in_order(ops in prop::collection::vec(stream_op(), 1..80)) {
        let lossy = SITE.replace("seed: 7", "seed: 7\nbuses: [{loss_prob: 0.3, corrupt_prob: 0.05}]");
        let w = World::new(&lossy);
        let names = ["lobby", "lab", "vault"];
        let cards = ["ana", "ben", "cy"];
        let mut subs = Vec::new();
        for op in ops {
            match op {
                StreamOp::Present(t, c) => {
                    let id = w.svc.resolve_terminal(names[t as usize]).unwrap();
                    let c = campus_service::service::PresentCard { card: cards[c as usize].into(), distance_cm: 5 };
                    w.svc.sim_present(ADMIN, id, &[c]).unwrap();
                }
                StreamOp::Door(t, open) => {
                    let id = w.svc.resolve_terminal(names[t as usize]).unwrap();
                    let s = if open { campus_service::scenario::DoorSpec::Open } else { campus_service::scenario::DoorSpec::Closed };
                    w.svc.sim_door(ADMIN, id, s).unwrap();
                }
                StreamOp::Advance(dt) => w.clock.advance(dt as u64),
                StreamOp::Poll => { w.svc.poll_all(); }
                StreamOp::Subscribe => {
                    let from = w.svc.with_coordinator(|c| c.events().len());
                    subs.push((from, w.svc.subscribe(VIEWER).unwrap(), Vec::new()));
                }
            }
            for (_, rx, got) in &mut subs {
                got.extend(drain(rx));
            }
        }
        let stored: Vec<Value> = w.svc.with_coordinator(|c| c.events().iter().map(|e| serde_json::to_value(e).unwrap()).collect());
        for (from, _, got) in &subs {
            prop_assert_eq!(got, &stored[*from..].to_vec());
            assert_per_terminal_order(got);
        }
    }
}

#[derive(Debug, Clone)]
enum Mutation {
    Register(u8, u8),
    Lock(u8, bool),
    Rights(u8, u8, bool),
    UnlockUntil(u8, u16),
    Mode(u8, bool),
    AddUser(u8, u8),
    SetRole(u8, u8),
    RemoveUser(u8),
    Present(u8, u8),
    Poll,
    Ack(u8),
}

fn mutation() -> impl Strategy<Value = (u8, u8, Mutation)> {
    let m = prop_oneof![
        (0u8..6, 1u8..16).prop_map(|(p, g)| Mutation::Register(p, g)),
        (0u8..8, any::<bool>()).prop_map(|(i, l)| Mutation::Lock(i, l)),
        (0u8..8, 0u8..16, any::<bool>()).prop_map(|(i, g, all)| Mutation::Rights(i, g, all)),
        (0u8..4, 0u16..900).prop_map(|(t, s)| Mutation::UnlockUntil(t, s)),
        (0u8..4, any::<bool>()).prop_map(|(t, c)| Mutation::Mode(t, c)),
        (0u8..3, 0u8..3).prop_map(|(u, r)| Mutation::AddUser(u, r)),
        (0u8..3, 0u8..3).prop_map(|(u, r)| Mutation::SetRole(u, r)),
        (0u8..3).prop_map(Mutation::RemoveUser),
        (0u8..8, 0u8..3).prop_map(|(c, t)| Mutation::Present(c, t)),
        Just(Mutation::Poll),
        (0u8..4).prop_map(Mutation::Ack),
    ];
    (0u8..3, 0u8..30, m)
}

const ROLES: [Role; 3] = [Role::Viewer, Role::Operator, Role::Admin];

fn role_name(r: u8) -> &'static str {
    ROLES[r as usize].name()
}

/// Applies one mutation straight to a coordinator, the way the API would.
fn direct(
    c: &mut Coordinator,
    site: &mut Site,
    actor: &str,
    m: &Mutation,
    uids: &[campus_tag::TagUid],
    now: u64,
) -> Result<(), ApiError> {
    let uid = |i: u8| {
        uids.get(i as usize)
            .copied()
            .unwrap_or(campus_tag::TagUid::from_serial(1))
    };
    let term = |t: u8| TerminalId::new(0, t + 1);
    match m {
        Mutation::Register(p, g) => {
            let spec = CardSpec {
                name: format!("p{p}"),
                personal_id: 900 + *p as u32,
                holder: HolderSpec::Student,
                expiry: NaiveDate::from_ymd_opt(2030, 1, 1).unwrap(),
                gates: (0..4).filter(|b| g & (1 << b) != 0).collect(),
                schedule: ScheduleSpec::default(),
                meal_plan: 0,
                restaurant_cents: 0,
                service_cents: 0,
            };
            let (uid, image) = c.register_card(actor, &card_record(&spec).unwrap(), v1::LAYOUT_ID, now)?;
            site.add_card(&spec.name, uid, image);
        }
        Mutation::Lock(i, true) => drop(c.lock_card(actor, uid(*i), site.network_mut(), now)?),
        Mutation::Lock(i, false) => drop(c.unlock_card(actor, uid(*i), site.network_mut(), now)?),
        Mutation::Rights(i, g, all) => {
            let spec = if *all {
                ScheduleSpec::default()
            } else {
                ScheduleSpec::Keyword("weekdays 08:00-17:00".into())
            };
            let gates = campus_service::scenario::gate_mask(&(0..4).filter(|b| g & (1 << b) != 0).collect::<Vec<u8>>())
                .unwrap();
            drop(c.assign_rights(
                actor,
                uid(*i),
                gates,
                &spec.to_schedule().unwrap(),
                None,
                site.network_mut(),
                now,
            )?);
        }
        Mutation::UnlockUntil(t, s) => c.unlock_until(actor, term(*t), START + *s as u64, site.network_mut(), now)?,
        Mutation::Mode(t, cat) => {
            let mode = if *cat {
                TerminalMode::Category(campus_terminal::HolderSet::of(&[campus_tag::v1::HolderType::Visitor]))
            } else {
                TerminalMode::Normal
            };
            c.set_mode(actor, term(*t), mode, site.network_mut(), now)?
        }
        Mutation::AddUser(u, r) => c.manage_user(
            actor,
            UserAction::Add {
                username: format!("u{u}"),
                role: ROLES[*r as usize],
                password: "pw".into(),
            },
            now,
        )?,
        Mutation::SetRole(u, r) => c.manage_user(
            actor,
            UserAction::SetRole {
                username: format!("u{u}"),
                role: ROLES[*r as usize],
            },
            now,
        )?,
        Mutation::RemoveUser(u) => c.manage_user(
            actor,
            UserAction::Remove {
                username: format!("u{u}"),
            },
            now,
        )?,
        Mutation::Present(i, t) => {
            c.require(actor, Role::Operator)?;
            site.present(term(*t), &[(uid(*i), 5)])?;
        }
        Mutation::Poll => {
            c.require(actor, Role::Operator)?;
            let ids: Vec<TerminalId> = c.terminals().map(|t| t.id).collect();
            for id in ids {
                let _ = c.poll_terminal(site.network_mut(), id, now);
            }
        }
        Mutation::Ack(a) => c.acknowledge_alarm(actor, *a as u64 + 1, now)?,
    }
    Ok(())
}

/// The same mutation over HTTP.
async fn via_api(w: &World, token: &str, m: &Mutation, uids: &[campus_tag::TagUid]) -> StatusCode {
    let uid = |i: u8| {
        uids.get(i as usize)
            .copied()
            .unwrap_or(campus_tag::TagUid::from_serial(1))
    };
    let gates = |g: u8| (0..4u8).filter(|b| g & (1 << b) != 0).collect::<Vec<_>>();
    let r = match m {
        Mutation::Register(p, g) => {
            let body = json!({
                "name": format!("p{p}"), "personal_id": 900 + *p as u32, "holder": "student",
                "expiry": "2030-01-01", "gates": gates(*g),
            });
            w.post("/v1/cards", token, body).await
        }
        Mutation::Lock(i, l) => {
            let verb = if *l { "lock" } else { "unlock" };
            w.post(&format!("/v1/cards/{}/{verb}", uid(*i)), token, json!({})).await
        }
        Mutation::Rights(i, g, all) => {
            let schedule = if *all { "all" } else { "weekdays 08:00-17:00" };
            w.post(
                &format!("/v1/cards/{}/rights", uid(*i)),
                token,
                json!({ "gates": gates(*g), "schedule": schedule }),
            )
            .await
        }
        Mutation::UnlockUntil(t, s) => {
            w.post(
                &format!("/v1/terminals/0:{:02}/unlock-until", t + 1),
                token,
                json!({ "until": START + *s as u64 }),
            )
            .await
        }
        Mutation::Mode(t, cat) => {
            let body = if *cat {
                json!({ "mode": "category", "holders": ["visitor"] })
            } else {
                json!({ "mode": "normal" })
            };
            w.post(&format!("/v1/terminals/0:{:02}/mode", t + 1), token, body).await
        }
        Mutation::AddUser(u, r) => {
            w.post(
                "/v1/users",
                token,
                json!({ "username": format!("u{u}"), "role": role_name(*r), "password": "pw" }),
            )
            .await
        }
        Mutation::SetRole(u, r) => {
            w.send(
                Method::PATCH,
                &format!("/v1/users/u{u}"),
                Some(token),
                Some(json!({ "role": role_name(*r) })),
            )
            .await
        }
        Mutation::RemoveUser(u) => {
            w.send(Method::DELETE, &format!("/v1/users/u{u}"), Some(token), None)
                .await
        }
        Mutation::Present(i, t) => {
            let body = json!({ "terminal": format!("0:{:02}", t + 1), "cards": [{ "card": uid(*i).to_string() }] });
            w.post("/v1/sim/present", token, body).await
        }
        Mutation::Poll => w.post("/v1/poll", token, json!({})).await,
        Mutation::Ack(a) => {
            w.post(&format!("/v1/alarms/{}/ack", *a as u64 + 1), token, json!({}))
                .await
        }
    };
    r.status
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn api_mutations_match_direct_coordinator_calls(ops in prop::collection::vec(mutation(), 1..30)) {
        let lossy = SITE.replace("seed: 7", "seed: 7\nbuses: [{loss_prob: 0.15}]");
        let w = World::new(&lossy);
        let (mut c, mut site) = build(&lossy);
        let rt = rt();
        let tokens: Vec<String> = [VIEWER, OPERATOR, ADMIN].iter().map(|u| rt.block_on(w.login(u))).collect();
        let mut now = START;
        for (actor, dt, m) in ops {
            now += dt as u64;
            w.clock.set(now);
            site.advance_to(now);
            site.take_events();
            let uids: Vec<campus_tag::TagUid> = c.cards().map(|e| e.uid).collect();
            let actor_name = [VIEWER, OPERATOR, ADMIN][actor as usize];
            let want = direct(&mut c, &mut site, actor_name, &m, &uids, now);
            let got = rt.block_on(via_api(&w, &tokens[actor as usize], &m, &uids));
            match &want {
                Ok(()) => prop_assert!(got.is_success(), "{m:?} as {actor_name}: direct ok, api {got}"),
                Err(e) => prop_assert_eq!(got, e.status(), "{:?} as {}: {}", m, actor_name, e),
            }
            prop_assert_eq!(w.svc.with_coordinator(|c| comparable_state(c.state())), comparable_state(c.state()));
        }
    }
}
