//! HTTP services for IHC quantification.
//!
//! * The API service (default port 8000) is stateless: multipart upload in,
//!   Base64 PNGs and scoring out, behind a bounded job pool.
//! * The web service (default port 8001) adds sessions, a terms-of-use gate,
//!   persisted uploads and results, ZIP export, adjustment and feedback.

pub mod api;
pub mod config;
pub mod error;
pub mod params;
pub mod pool;
pub mod records;
pub mod web;

use std::future::{Future, IntoFuture};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use pathquant_core::{Engine, InferOptions, ReferenceBackend};
use pathquant_store::ObjectStore;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

pub use api::{ApiState, InferResponse};
pub use config::{Config, ConfigError, PipelineMode};
pub use error::{ApiError, ErrorBody};
pub use pool::{JobPool, PoolMetrics};

/// How long in-flight requests may run on after shutdown is requested.
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
    #[error("server thread failed: {0}")]
    Thread(String),
}

/// Both services, bound and ready to run.
pub struct Server {
    api_listener: TcpListener,
    web_listener: TcpListener,
    api: Router,
    web: Router,
    store: Arc<dyn ObjectStore>,
    sessions: web::session::Sessions,
    ttl: Duration,
    sweep_interval: Duration,
    grace: Duration,
}

async fn listen(host: IpAddr, port: u16) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::new(host, port);
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// A client-usable address for a listener bound to `addr`.
fn reachable(addr: SocketAddr) -> SocketAddr {
    match addr.ip() {
        IpAddr::V4(ip) if ip.is_unspecified() => SocketAddr::new(Ipv4Addr::LOCALHOST.into(), addr.port()),
        IpAddr::V6(ip) if ip.is_unspecified() => SocketAddr::new(Ipv6Addr::LOCALHOST.into(), addr.port()),
        _ => addr,
    }
}

impl Server {
    pub async fn bind(config: &Config) -> Result<Self, ServeError> {
        config.validate()?;
        let api_listener = listen(config.host, config.api.port).await?;
        let web_listener = listen(config.host, config.web.port).await?;

        let open = config.clone();
        let store = tokio::task::spawn_blocking(move || open.open_store())
            .await
            .map_err(|e| ServeError::Thread(e.to_string()))??;
        let engine = Engine::new(
            Arc::new(ReferenceBackend::new(config.stain_matrix()?)),
            config.limits()?,
            InferOptions::default(),
        );
        // One pool for both services: they compete for the same cores.
        let pool = JobPool::new(config.api.pool_size, config.api.queue_capacity());
        let max_body = config.api.max_upload_bytes;

        let api = api::router(
            ApiState { engine: engine.clone(), pool: pool.clone(), results: Some(store.clone()) },
            max_body,
        );
        let compute = match config.web.pipeline_mode {
            PipelineMode::InProcess => web::compute::Compute::InProcess { engine: engine.clone(), pool: pool.clone() },
            PipelineMode::Loopback => {
                let base_url = match &config.web.api_url {
                    Some(url) => url.trim_end_matches('/').to_string(),
                    None => format!("http://{}", reachable(api_listener.local_addr()?)),
                };
                web::compute::Compute::Loopback { client: reqwest::Client::new(), base_url }
            }
        };
        let sessions = web::session::Sessions::default();
        let web = web::router(
            web::WebState {
                store: store.clone(),
                engine,
                pool,
                compute,
                sessions: sessions.clone(),
                locks: web::ResultLocks::default(),
                sample_dir: config.web.sample_dir.clone(),
            },
            max_body,
        );
        Ok(Self {
            api_listener,
            web_listener,
            api,
            web,
            store,
            sessions,
            ttl: config.web.ttl(),
            sweep_interval: Duration::from_secs(config.web.sweep_interval_secs),
            grace: SHUTDOWN_GRACE,
        })
    }

    pub fn api_addr(&self) -> SocketAddr {
        reachable(self.api_listener.local_addr().expect("bound listener has an address"))
    }

    pub fn web_addr(&self) -> SocketAddr {
        reachable(self.web_listener.local_addr().expect("bound listener has an address"))
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    /// Serves until `shutdown` resolves, then stops accepting connections
    /// and waits up to the grace period for in-flight requests.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        let (tx, rx) = watch::channel(false);
        let stopped = |mut rx: watch::Receiver<bool>| async move {
            let _ = rx.wait_for(|stop| *stop).await;
        };
        let mut api = tokio::spawn(
            axum::serve(self.api_listener, self.api).with_graceful_shutdown(stopped(rx.clone())).into_future(),
        );
        let mut web =
            tokio::spawn(axum::serve(self.web_listener, self.web).with_graceful_shutdown(stopped(rx)).into_future());
        let sweeper = tokio::spawn(sweep_loop(self.store, self.sessions, self.ttl, self.sweep_interval));

        let early = tokio::select! {
            () = shutdown => None,
            r = &mut api => Some(r),
            r = &mut web => Some(r),
        };
        let _ = tx.send(true);
        sweeper.abort();
        if let Some(r) = early {
            api.abort();
            web.abort();
            return r.map_err(|e| ServeError::Thread(e.to_string()))?.map_err(ServeError::Io);
        }
        tracing::info!("shutting down; draining in-flight requests");
        let drain = async {
            let (a, w) = tokio::join!(&mut api, &mut web);
            for r in [a, w] {
                r.map_err(|e| ServeError::Thread(e.to_string()))??;
            }
            Ok::<_, ServeError>(())
        };
        match tokio::time::timeout(self.grace, drain).await {
            Ok(r) => r,
            Err(_) => {
                tracing::warn!("grace period elapsed; abandoning remaining requests");
                api.abort();
                web.abort();
                Ok(())
            }
        }
    }
}

async fn sweep_loop(store: Arc<dyn ObjectStore>, sessions: web::session::Sessions, ttl: Duration, every: Duration) {
    let mut ticks = tokio::time::interval(every);
    ticks.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        // The first tick fires at once, giving the startup sweep.
        ticks.tick().await;
        let store = store.clone();
        let swept =
            tokio::task::spawn_blocking(move || web::sweep::sweep(store.as_ref(), ttl, records::now_secs())).await;
        match swept {
            Ok(Ok(report)) => tracing::info!(?report, "retention sweep"),
            Ok(Err(e)) => tracing::warn!("retention sweep failed: {e}"),
            Err(e) => tracing::warn!("retention sweep panicked: {e}"),
        }
        sessions.prune(ttl);
    }
}

/// A server running on its own thread and runtime, for synchronous callers.
pub struct ServerHandle {
    api_addr: SocketAddr,
    web_addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServeError>>>,
}

impl ServerHandle {
    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn web_addr(&self) -> SocketAddr {
        self.web_addr
    }

    pub fn api_url(&self) -> String {
        format!("http://{}", self.api_addr)
    }

    pub fn web_url(&self) -> String {
        format!("http://{}", self.web_addr)
    }

    /// Requests shutdown and waits for the drain to finish.
    pub fn stop(mut self) -> Result<(), ServeError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| ServeError::Thread("server thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Binds and starts both services on a background thread. Returns once
/// the listeners accept connections.
pub fn spawn(config: Config) -> Result<ServerHandle, ServeError> {
    let (ready_tx, ready_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("pathquant-server".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(async move {
            let server = match Server::bind(&config).await {
                Ok(s) => s,
                Err(e) => {
                    let _ = ready_tx.send(Err(e.to_string()));
                    return Err(e);
                }
            };
            let _ = ready_tx.send(Ok((server.api_addr(), server.web_addr())));
            server
                .run(async move {
                    let _ = stop_rx.await;
                })
                .await
        })
    })?;
    match ready_rx.recv() {
        Ok(Ok((api_addr, web_addr))) => {
            Ok(ServerHandle { api_addr, web_addr, stop: Some(stop_tx), thread: Some(thread) })
        }
        _ => Err(thread
            .join()
            .map_err(|_| ServeError::Thread("server thread panicked".into()))?
            .err()
            .unwrap_or_else(|| ServeError::Thread("server exited before binding".into()))),
    }
}
