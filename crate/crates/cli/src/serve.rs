use pathquant_server::{Config, ServeError, Server};

use crate::{Failure, Outcome, ServeArgs};

pub fn run(mut config: Config, args: ServeArgs) -> Outcome {
    if let Some(host) = args.host {
        config.host = host;
    }
    if let Some(port) = args.api_port {
        config.api.port = port;
    }
    if let Some(port) = args.web_port {
        config.web.port = port;
    }
    if let Some(root) = args.storage {
        config.storage.root = root;
    }
    if let Some(n) = args.pool {
        config.api.pool_size = n;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let server = Server::bind(&config).await.map_err(failure)?;
        eprintln!("pq: api on http://{}, web on http://{}", server.api_addr(), server.web_addr());
        server.run(interrupted()).await.map_err(failure)
    })
}

fn failure(e: ServeError) -> Failure {
    match e {
        ServeError::Config(e) => Failure::usage(e.to_string()),
        other => Failure { code: 1, message: other.to_string() },
    }
}

async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}
