//! Running the API: the full router, a foreground server for the CLI, and a
//! background server for embedding and tests.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::api;
use crate::mock_services;
use crate::service::SessionManager;

/// The API, plus the mock services under `/mock` when requested.
pub fn app(manager: Arc<SessionManager>, mock_services: bool) -> Router {
    let router = api::router(manager);
    if mock_services {
        router.nest("/mock", mock_services::router())
    } else {
        router
    }
}

pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread; stopped on drop.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `bind` (use port 0 for an ephemeral port) and serves `app` from a
/// dedicated runtime.
pub fn spawn_background(app: Router, bind: &str) -> std::io::Result<BackgroundServer> {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(TcpListener::bind(bind))?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name(format!("api-{addr}")).spawn(move || {
        runtime.block_on(async move {
            if let Err(err) = serve(listener, app, async move {
                let _ = stopped.await;
            })
            .await
            {
                tracing::error!(%err, "server stopped with an error");
            }
        });
    })?;
    Ok(BackgroundServer { addr, stop: Some(stop), thread: Some(thread) })
}
