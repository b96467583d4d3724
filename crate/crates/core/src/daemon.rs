//! Wires the registry, event log, discovery, wire server and control API
//! into one running node.

use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::discovery::{
    self, make_announcement, DiscoveryConfig, DiscoveryStats, LocalIdentity, PeerDirectory,
};
use crate::events::{EventLog, EventLogError};
use crate::registry::{RegistryError, ShareRegistry};
use crate::wire::server::WireServer;
use crate::{api, fsutil};

pub const DEFAULT_API_PORT: u16 = 40480;
pub const DEFAULT_WIRE_PORT: u16 = 40440;
pub const EVENTS_FILE: &str = "events.log";
const IDENTITY_FILE: &str = "identity.json";

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub data_dir: PathBuf,
    pub name: String,
    /// Wire protocol listener; port 0 picks a free one.
    pub wire_bind: SocketAddr,
    /// Control API listener. Must be a loopback address.
    pub api_bind: SocketAddr,
    /// `None` disables discovery entirely.
    pub discovery: Option<DiscoveryConfig>,
    /// Directory holding the dashboard's static files.
    pub ui_dir: Option<PathBuf>,
}

impl DaemonConfig {
    pub fn new(data_dir: impl Into<PathBuf>, name: impl Into<String>) -> Self {
        Self {
            data_dir: data_dir.into(),
            name: name.into(),
            wire_bind: SocketAddr::from((Ipv4Addr::UNSPECIFIED, DEFAULT_WIRE_PORT)),
            api_bind: SocketAddr::from((Ipv4Addr::LOCALHOST, DEFAULT_API_PORT)),
            discovery: Some(DiscoveryConfig::default()),
            ui_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DaemonError {
    #[error("control API must bind a loopback address, not {0}")]
    NonLoopbackApi(SocketAddr),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: SocketAddr,
        source: io::Error,
    },
    #[error(transparent)]
    Events(#[from] EventLogError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("data directory: {0}")]
    Io(#[from] io::Error),
}

/// Everything request handlers need. Shared by the API and the wire server.
pub struct Node {
    pub identity: LocalIdentity,
    pub registry: Arc<ShareRegistry>,
    pub events: EventLog,
    pub peers: Arc<PeerDirectory>,
    pub discovery_stats: Arc<DiscoveryStats>,
    pub api_port: u16,
    pub ui_dir: Option<PathBuf>,
    pub started: Instant,
}

#[derive(Serialize, Deserialize)]
struct StoredIdentity {
    peer_id: String,
}

fn load_or_create_peer_id(data_dir: &Path) -> io::Result<String> {
    let path = data_dir.join(IDENTITY_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => {
            let stored: StoredIdentity =
                serde_json::from_slice(&bytes).map_err(io::Error::other)?;
            Ok(stored.peer_id)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let peer_id = fsutil::random_id();
            let json = serde_json::to_vec(&StoredIdentity {
                peer_id: peer_id.clone(),
            })
            .expect("identity serializes");
            fsutil::write_atomic(&path, &json)?;
            Ok(peer_id)
        }
        Err(e) => Err(e),
    }
}

pub struct Daemon {
    node: Arc<Node>,
    wire_addr: SocketAddr,
    api_addr: SocketAddr,
    discovery_addr: Option<SocketAddr>,
    shutdown: watch::Sender<bool>,
    say_bye: Arc<AtomicBool>,
    tasks: Vec<JoinHandle<()>>,
    api_task: JoinHandle<()>,
}

impl Daemon {
    pub async fn start(cfg: DaemonConfig) -> Result<Self, DaemonError> {
        if !cfg.api_bind.ip().is_loopback() {
            return Err(DaemonError::NonLoopbackApi(cfg.api_bind));
        }
        std::fs::create_dir_all(&cfg.data_dir)?;
        let peer_id = load_or_create_peer_id(&cfg.data_dir)?;
        let events = EventLog::open(&cfg.data_dir.join(EVENTS_FILE))?;
        let registry = Arc::new(ShareRegistry::open(&cfg.data_dir, events.clone())?);

        let wire_listener =
            TcpListener::bind(cfg.wire_bind)
                .await
                .map_err(|source| DaemonError::Bind {
                    what: "wire listener",
                    addr: cfg.wire_bind,
                    source,
                })?;
        let wire_addr = wire_listener.local_addr()?;
        let api_listener =
            TcpListener::bind(cfg.api_bind)
                .await
                .map_err(|source| DaemonError::Bind {
                    what: "control API",
                    addr: cfg.api_bind,
                    source,
                })?;
        let api_addr = api_listener.local_addr()?;

        let identity = LocalIdentity {
            peer_id: peer_id.clone(),
            display_name: cfg.name.clone(),
            port: wire_addr.port(),
        };
        let node = Arc::new(Node {
            identity: identity.clone(),
            registry: Arc::clone(&registry),
            events: events.clone(),
            peers: Arc::new(PeerDirectory::new(&peer_id, events.clone())),
            discovery_stats: Arc::default(),
            api_port: api_addr.port(),
            ui_dir: cfg.ui_dir.clone(),
            started: Instant::now(),
        });

        let (shutdown, shutdown_rx) = watch::channel(false);
        let say_bye = Arc::new(AtomicBool::new(false));
        let mut tasks = Vec::new();

        let server = Arc::new(WireServer {
            identity: identity.clone(),
            registry: Arc::clone(&registry),
            events: events.clone(),
        });
        tasks.push(tokio::spawn(
            server.serve(wire_listener, shutdown_rx.clone()),
        ));

        let mut discovery_addr = None;
        if let Some(dcfg) = cfg.discovery.clone() {
            let socket = discovery::bind_socket(&dcfg).map_err(|source| DaemonError::Bind {
                what: "discovery socket",
                addr: dcfg.bind,
                source,
            })?;
            discovery_addr = Some(socket.local_addr()?);
            let registry = Arc::clone(&registry);
            let me = identity.clone();
            let bye = Arc::clone(&say_bye);
            tasks.push(tokio::spawn(discovery::run(
                socket,
                dcfg,
                Arc::clone(&node.peers),
                Arc::clone(&node.discovery_stats),
                move |kind| make_announcement(&me, registry.len(), kind),
                shutdown_rx.clone(),
                move || bye.load(Ordering::SeqCst),
            )));
        }

        let app = api::router(Arc::clone(&node));
        let api_task = tokio::spawn(async move {
            let svc = app.into_make_service_with_connect_info::<SocketAddr>();
            if let Err(e) = axum::serve(api_listener, svc).await {
                tracing::error!(error = %e, "control API stopped");
            }
        });

        tracing::info!(
            peer_id = %identity.peer_id,
            name = %identity.display_name,
            %wire_addr,
            %api_addr,
            "daemon started"
        );
        Ok(Self {
            node,
            wire_addr,
            api_addr,
            discovery_addr,
            shutdown,
            say_bye,
            tasks,
            api_task,
        })
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn identity(&self) -> &LocalIdentity {
        &self.node.identity
    }

    pub fn wire_addr(&self) -> SocketAddr {
        self.wire_addr
    }

    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn discovery_addr(&self) -> Option<SocketAddr> {
        self.discovery_addr
    }

    /// Orderly stop: announces goodbye, then stops all listeners.
    pub async fn shutdown(self) {
        self.say_bye.store(true, Ordering::SeqCst);
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
        self.api_task.abort();
        let _ = self.api_task.await;
    }

    /// Stops everything at once without a goodbye, like a crash would.
    pub async fn abort(self) {
        for t in &self.tasks {
            t.abort();
        }
        self.api_task.abort();
        for t in self.tasks {
            let _ = t.await;
        }
        let _ = self.api_task.await;
    }
}
