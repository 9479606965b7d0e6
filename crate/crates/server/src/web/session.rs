//! In-memory sessions keyed by the `pq_session` cookie.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Request, State};
use axum::http::header::{ACCEPT, COOKIE, LOCATION, SET_COOKIE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};

use crate::error::ApiError;
use crate::records::{is_valid_id, new_id};

pub const COOKIE_NAME: &str = "pq_session";

#[derive(Clone, Copy, Debug)]
struct Session {
    terms_accepted: bool,
    last_seen: Instant,
}

#[derive(Clone, Debug, Default)]
pub struct Sessions {
    inner: Arc<Mutex<HashMap<String, Session>>>,
}

/// The caller's session token, inserted by [`session_layer`].
#[derive(Clone, Debug)]
pub struct SessionId(pub String);

impl Sessions {
    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Session>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Returns the live token from `headers`, or a fresh one and `true`.
    fn resolve(&self, headers: &HeaderMap) -> (String, bool) {
        let mut map = self.lock();
        if let Some(token) = cookie_value(headers, COOKIE_NAME).filter(|t| is_valid_id(t)) {
            if let Some(s) = map.get_mut(&token) {
                s.last_seen = Instant::now();
                return (token, false);
            }
        }
        let token = new_id();
        map.insert(token.clone(), Session { terms_accepted: false, last_seen: Instant::now() });
        (token, true)
    }

    pub fn accept_terms(&self, id: &SessionId) {
        if let Some(s) = self.lock().get_mut(&id.0) {
            s.terms_accepted = true;
        }
    }

    pub fn terms_accepted(&self, id: &SessionId) -> bool {
        self.lock().get(&id.0).is_some_and(|s| s.terms_accepted)
    }

    /// Drops sessions idle for longer than `max_idle`.
    pub fn prune(&self, max_idle: Duration) -> usize {
        let mut map = self.lock();
        let before = map.len();
        map.retain(|_, s| s.last_seen.elapsed() <= max_idle);
        before - map.len()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn cookie_value(headers: &HeaderMap, name: &str) -> Option<String> {
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(k, _)| *k == name)
        .map(|(_, v)| v.to_string())
}

/// Attaches a [`SessionId`] to every request, issuing a cookie when the
/// caller has none. The cookie has no expiry, so it lasts for the browser
/// session.
pub async fn session_layer(State(sessions): State<Sessions>, mut req: Request, next: Next) -> Response {
    let (token, fresh) = sessions.resolve(req.headers());
    req.extensions_mut().insert(SessionId(token.clone()));
    let mut resp = next.run(req).await;
    if fresh {
        let cookie = format!("{COOKIE_NAME}={token}; Path=/; HttpOnly; SameSite=Lax");
        resp.headers_mut().append(SET_COOKIE, HeaderValue::from_str(&cookie).expect("token is header-safe"));
    }
    resp
}

pub fn wants_html(headers: &HeaderMap) -> bool {
    headers.get(ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("text/html"))
}

/// Passes when terms were accepted. Otherwise browsers are redirected to
/// the terms page and API clients get a 403.
#[allow(clippy::result_large_err)]
pub fn require_terms(sessions: &Sessions, id: &SessionId, headers: &HeaderMap) -> Result<(), Response> {
    if sessions.terms_accepted(id) {
        return Ok(());
    }
    if wants_html(headers) {
        return Err((StatusCode::SEE_OTHER, [(LOCATION, "/terms")]).into_response());
    }
    Err(ApiError::new(
        StatusCode::FORBIDDEN,
        "terms_not_accepted",
        "accept the terms of use first via POST /terms/accept",
    )
    .into_response())
}
