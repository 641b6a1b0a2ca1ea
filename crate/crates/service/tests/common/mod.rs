#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use campus_coordinator::{Coordinator, Role, State, UserAction};
use campus_service::{router, scenario_key, ManualClock, Scenario, Service, Site};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// Monday 2026-10-12 08:00 UTC.
pub const START: u64 = 1_791_792_000;
pub const ADMIN: &str = "admin";
pub const ADMIN_PW: &str = "admin-pw";
pub const OPERATOR: &str = "olga";
pub const VIEWER: &str = "vic";

pub const SITE: &str = "
seed: 7
terminals:
  - {name: lobby, address: 1, gate: 1, door_open_timeout_s: 30}
  - {name: lab, address: 2, gate: 2}
  - {name: vault, address: 3, gate: 3, strike_release_s: 5}
cards:
  - {name: ana, personal_id: 100, holder: student, expiry: 2030-01-01, gates: [1, 2], schedule: all}
  - {name: ben, personal_id: 101, holder: personnel, expiry: 2030-01-01, gates: [1, 2, 3]}
  - {name: cy, personal_id: 102, holder: visitor, expiry: 2030-01-01, gates: [1], schedule: 'weekdays 09:00-10:00'}
";

pub fn password(user: &str) -> String {
    if user == ADMIN {
        ADMIN_PW.into()
    } else {
        format!("{user}-pw")
    }
}

/// A coordinator with one account per role and the site from `yaml`.
pub fn build(yaml: &str) -> (Coordinator, Site) {
    let s = Scenario::parse(yaml).unwrap();
    let mut c = Coordinator::create(scenario_key(s.seed), ADMIN, ADMIN_PW, START).unwrap();
    for (username, role) in [(OPERATOR, Role::Operator), (VIEWER, Role::Viewer)] {
        let action = UserAction::Add {
            username: username.into(),
            role,
            password: password(username),
        };
        c.manage_user(ADMIN, action, START).unwrap();
    }
    let (site, _) = Site::build(&s, &mut c, ADMIN, START).unwrap();
    (c, site)
}

pub struct World {
    pub svc: Arc<Service>,
    pub app: Router,
    pub clock: Arc<ManualClock>,
}

impl World {
    pub fn new(yaml: &str) -> Self {
        let (c, site) = build(yaml);
        let clock = Arc::new(ManualClock::new(START));
        let svc = Arc::new(Service::new(c, site, clock.clone()));
        Self::around(svc, clock)
    }

    pub fn around(svc: Arc<Service>, clock: Arc<ManualClock>) -> Self {
        let app = router(svc.clone());
        Self { svc, app, clock }
    }

    pub async fn send(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, headers, body }
    }

    pub async fn get(&self, uri: &str, token: &str) -> Reply {
        self.send(Method::GET, uri, Some(token), None).await
    }

    pub async fn post(&self, uri: &str, token: &str, body: Value) -> Reply {
        self.send(Method::POST, uri, Some(token), Some(body)).await
    }

    pub async fn login(&self, user: &str) -> String {
        let r = self
            .send(
                Method::POST,
                "/v1/login",
                None,
                Some(serde_json::json!({ "username": user, "password": password(user) })),
            )
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        r.json()["token"].as_str().unwrap().to_owned()
    }
}

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// State as JSON with password hashes blanked (their salts are random).
pub fn comparable_state(state: &State) -> Value {
    let mut v = serde_json::to_value(state).unwrap();
    if let Some(users) = v["users"].as_object_mut() {
        for u in users.values_mut() {
            u["password_hash"] = Value::Null;
        }
    }
    v
}
