//! HTTP session service for the concept design pipeline.
//!
//! Sessions persist as JSON documents with content-addressed image blobs;
//! provider work runs in the background and reports progress on a per-session
//! server-sent event stream. See `docs/api.md` for the endpoint reference.

mod api;
mod app;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use app::{App, AppError, EditRequest, ServerConfig};
pub use store::{EventKind, EventMessage, Job, SessionDoc, Store};

/// Serve `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Arc<App>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Bind `addr`, report the bound address through `on_bound`, then serve.
pub async fn run(
    addr: SocketAddr,
    config: ServerConfig,
    on_bound: impl FnOnce(SocketAddr),
) -> anyhow::Result<()> {
    let app = App::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    serve(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
