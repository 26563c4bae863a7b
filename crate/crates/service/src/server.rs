use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle as ThreadHandle;

use nss_snmp::{Clock, PollEvent, Scheduler, SnmpPoller};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::api::{router, AppState};
use crate::config::ServiceConfig;
use crate::engine::{Engine, PipelineInput, ServiceError, Shared};

const PIPELINE_BUFFER: usize = 4096;
const GRACE: std::time::Duration = std::time::Duration::from_secs(2);

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
}

/// A running service: pollers, processing thread and HTTP server.
pub struct ServiceHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    scheduler: Arc<Scheduler<SnmpPoller>>,
    stop: Option<oneshot::Sender<()>>,
    server: Option<JoinHandle<std::io::Result<()>>>,
    forwarder: JoinHandle<()>,
    pipeline: Option<ThreadHandle<()>>,
}

/// Starts with a clock running at `config.clock_scale`.
pub async fn start(config: ServiceConfig) -> Result<ServiceHandle, StartError> {
    let clock = Clock::scaled(config.clock_scale);
    start_with_clock(config, clock).await
}

pub async fn start_with_clock(config: ServiceConfig, clock: Clock) -> Result<ServiceHandle, StartError> {
    let listen = config.listen;
    let ui_dir = config.ui_dir.clone();
    let targets = config.targets.clone();
    let poller = SnmpPoller { options: config.poll.options() };
    let sched_cfg = config.poll.scheduler();
    let shared = tokio::task::spawn_blocking(move || Shared::open(config, clock))
        .await
        .expect("open task")?;

    let (tx, mut rx) = mpsc::channel::<PipelineInput>(PIPELINE_BUFFER);
    let pipeline = {
        let shared = shared.clone();
        std::thread::Builder::new()
            .name("nss-pipeline".into())
            .spawn(move || {
                let mut engine = Engine::new(shared);
                while let Some(input) = rx.blocking_recv() {
                    engine.handle(input);
                }
            })
            .expect("spawn pipeline thread")
    };

    let (poll_tx, mut poll_rx) = mpsc::channel::<PollEvent>(PIPELINE_BUFFER);
    let forwarder = {
        let tx = tx.clone();
        tokio::spawn(async move {
            while let Some(e) = poll_rx.recv().await {
                if tx.send(PipelineInput::Poll(e)).await.is_err() {
                    break;
                }
            }
        })
    };
    let scheduler = Arc::new(Scheduler::new(poller, clock, sched_cfg, poll_tx));
    for t in targets {
        scheduler
            .add_target(t)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
    }

    let listener = TcpListener::bind(listen)
        .await
        .map_err(|source| StartError::Bind { addr: listen, source })?;
    let addr = listener.local_addr().map_err(|source| StartError::Bind { addr: listen, source })?;
    let app = router(
        AppState { shared: shared.clone(), scheduler: scheduler.clone(), pipeline: tx },
        ui_dir.as_deref(),
    );
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, "service listening");
    Ok(ServiceHandle {
        addr,
        shared,
        scheduler,
        stop: Some(stop),
        server: Some(server),
        forwarder,
        pipeline: Some(pipeline),
    })
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    pub fn scheduler(&self) -> &Arc<Scheduler<SnmpPoller>> {
        &self.scheduler
    }

    /// Resolves when the HTTP server exits on its own.
    pub async fn wait(&mut self) -> std::io::Result<()> {
        match self.server.as_mut() {
            Some(s) => {
                let r = s.await.unwrap_or_else(|e| Err(std::io::Error::other(e)));
                self.server = None;
                r
            }
            None => Ok(()),
        }
    }

    /// Stops polling, drains the pipeline and closes the server.
    pub async fn shutdown(mut self) {
        self.scheduler.shutdown();
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(mut server) = self.server.take() {
            // open event streams keep the graceful shutdown waiting
            if tokio::time::timeout(GRACE, &mut server).await.is_err() {
                server.abort();
            }
        }
        self.forwarder.abort();
        let _ = (&mut self.forwarder).await;
        // connections still open hold a pipeline sender; records are written
        // synchronously, so leaving the thread behind loses nothing
        if let Some(p) = self.pipeline.take() {
            let join = tokio::task::spawn_blocking(move || p.join());
            let _ = tokio::time::timeout(GRACE, join).await;
        }
    }
}
