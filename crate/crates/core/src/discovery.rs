//! LAN presence: periodic JSON announcements over UDP and a liveness table of
//! the peers heard from.
//!
//! Announcements go to the multicast group and to any configured unicast
//! targets; the receiver accepts both. A peer that has not announced for
//! longer than the timeout is expired.

use std::collections::HashMap;
use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::net::UdpSocket;
use tokio::sync::watch;

use crate::events::{EventKind, EventLog, NewEvent};

pub const PROTO: &str = "peershare/1";
pub const MULTICAST_GROUP: Ipv4Addr = Ipv4Addr::new(239, 255, 77, 77);
pub const DISCOVERY_PORT: u16 = 40404;
pub const ANNOUNCE_INTERVAL: Duration = Duration::from_secs(5);
pub const PEER_TIMEOUT: Duration = Duration::from_secs(15);
pub const MAX_DATAGRAM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnounceKind {
    Alive,
    Bye,
}

/// Datagram payload. Field names are part of the wire format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub proto: String,
    pub peer_id: String,
    pub name: String,
    pub port: u16,
    pub shares: u64,
    pub kind: AnnounceKind,
}

#[derive(Debug, thiserror::Error)]
#[error("announcement is {0} bytes, limit is {MAX_DATAGRAM}")]
pub struct OversizeAnnouncement(pub usize);

impl Announcement {
    pub fn encode(&self) -> Result<Vec<u8>, OversizeAnnouncement> {
        let bytes = serde_json::to_vec(self).expect("announcement serializes");
        if bytes.len() > MAX_DATAGRAM {
            return Err(OversizeAnnouncement(bytes.len()));
        }
        Ok(bytes)
    }

    /// `None` for anything that is not a well-formed announcement of our protocol.
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() > MAX_DATAGRAM {
            return None;
        }
        let a: Announcement = serde_json::from_slice(bytes).ok()?;
        (a.proto == PROTO).then_some(a)
    }
}

/// Who this daemon is on the LAN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalIdentity {
    pub peer_id: String,
    pub display_name: String,
    /// TCP port of the wire protocol listener.
    pub port: u16,
}

pub fn make_announcement(
    me: &LocalIdentity,
    share_count: usize,
    kind: AnnounceKind,
) -> Announcement {
    Announcement {
        proto: PROTO.to_owned(),
        peer_id: me.peer_id.clone(),
        name: me.display_name.clone(),
        port: me.port,
        shares: share_count as u64,
        kind,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerInfo {
    pub peer_id: String,
    pub display_name: String,
    /// Source address of the last datagram, never the payload.
    pub address: IpAddr,
    pub port: u16,
    pub last_seen: Instant,
    pub share_count: u64,
}

impl PeerInfo {
    pub fn socket_addr(&self) -> SocketAddr {
        SocketAddr::new(self.address, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgnoreReason {
    Malformed,
    OwnAnnouncement,
    UnknownBye,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableDelta {
    Added(PeerInfo),
    Refreshed(PeerInfo),
    Removed(PeerInfo),
    Ignored(IgnoreReason),
}

/// The bare liveness table. Pure state; see [`PeerDirectory`] for the
/// event-emitting wrapper.
#[derive(Debug)]
pub struct PeerTable {
    own_id: String,
    peers: HashMap<String, PeerInfo>,
    malformed: u64,
}

impl PeerTable {
    pub fn new(own_id: impl Into<String>) -> Self {
        Self {
            own_id: own_id.into(),
            peers: HashMap::new(),
            malformed: 0,
        }
    }

    pub fn apply_datagram(&mut self, bytes: &[u8], source: IpAddr, now: Instant) -> TableDelta {
        let Some(a) = Announcement::decode(bytes) else {
            self.malformed += 1;
            return TableDelta::Ignored(IgnoreReason::Malformed);
        };
        if a.peer_id == self.own_id {
            return TableDelta::Ignored(IgnoreReason::OwnAnnouncement);
        }
        match a.kind {
            AnnounceKind::Bye => match self.peers.remove(&a.peer_id) {
                Some(p) => TableDelta::Removed(p),
                None => TableDelta::Ignored(IgnoreReason::UnknownBye),
            },
            AnnounceKind::Alive => match self.peers.get_mut(&a.peer_id) {
                Some(p) => {
                    p.display_name = a.name;
                    p.address = source;
                    p.port = a.port;
                    p.share_count = a.shares;
                    p.last_seen = p.last_seen.max(now);
                    TableDelta::Refreshed(p.clone())
                }
                None => {
                    let p = PeerInfo {
                        peer_id: a.peer_id.clone(),
                        display_name: a.name,
                        address: source,
                        port: a.port,
                        last_seen: now,
                        share_count: a.shares,
                    };
                    self.peers.insert(a.peer_id, p.clone());
                    TableDelta::Added(p)
                }
            },
        }
    }

    /// Removes every peer silent for strictly longer than `timeout`.
    pub fn expire(&mut self, now: Instant, timeout: Duration) -> Vec<PeerInfo> {
        let stale: Vec<String> = self
            .peers
            .values()
            .filter(|p| now.saturating_duration_since(p.last_seen) > timeout)
            .map(|p| p.peer_id.clone())
            .collect();
        let mut removed: Vec<PeerInfo> = stale
            .iter()
            .filter_map(|id| self.peers.remove(id))
            .collect();
        removed.sort_by(|a, b| a.peer_id.cmp(&b.peer_id));
        removed
    }

    pub fn get(&self, peer_id: &str) -> Option<&PeerInfo> {
        self.peers.get(peer_id)
    }

    /// Peers sorted by display name, then id.
    pub fn snapshot(&self) -> Vec<PeerInfo> {
        let mut v: Vec<_> = self.peers.values().cloned().collect();
        v.sort_by(|a, b| (&a.display_name, &a.peer_id).cmp(&(&b.display_name, &b.peer_id)));
        v
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn malformed_count(&self) -> u64 {
        self.malformed
    }
}

/// Shared peer table that records joins and leaves in the event log.
pub struct PeerDirectory {
    table: Mutex<PeerTable>,
    events: EventLog,
}

impl PeerDirectory {
    pub fn new(own_id: &str, events: EventLog) -> Self {
        Self {
            table: Mutex::new(PeerTable::new(own_id)),
            events,
        }
    }

    pub fn apply_datagram(&self, bytes: &[u8], source: IpAddr, now: Instant) -> TableDelta {
        let mut table = self.lock();
        let delta = table.apply_datagram(bytes, source, now);
        match &delta {
            TableDelta::Added(p) => {
                self.events.record(NewEvent::peer(
                    EventKind::PeerJoined,
                    &p.peer_id,
                    &p.display_name,
                    format!("at {}", p.socket_addr()),
                ));
            }
            TableDelta::Removed(p) => {
                self.events.record(NewEvent::peer(
                    EventKind::PeerLeft,
                    &p.peer_id,
                    &p.display_name,
                    "said goodbye",
                ));
            }
            _ => {}
        }
        delta
    }

    pub fn expire(&self, now: Instant, timeout: Duration) -> Vec<PeerInfo> {
        let mut table = self.lock();
        let removed = table.expire(now, timeout);
        for p in &removed {
            self.events.record(NewEvent::peer(
                EventKind::PeerLeft,
                &p.peer_id,
                &p.display_name,
                format!("silent for more than {}s", timeout.as_secs()),
            ));
        }
        removed
    }

    pub fn peers(&self) -> Vec<PeerInfo> {
        self.lock().snapshot()
    }

    pub fn get(&self, peer_id: &str) -> Option<PeerInfo> {
        self.lock().get(peer_id).cloned()
    }

    /// Looks a peer up by id, falling back to an exact display-name match.
    pub fn resolve(&self, id_or_name: &str) -> Option<PeerInfo> {
        let table = self.lock();
        table.get(id_or_name).cloned().or_else(|| {
            table
                .snapshot()
                .into_iter()
                .find(|p| p.display_name == id_or_name)
        })
    }

    pub fn malformed_count(&self) -> u64 {
        self.lock().malformed_count()
    }

    fn lock(&self) -> MutexGuard<'_, PeerTable> {
        self.table.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone)]
pub struct DiscoveryConfig {
    /// Where to listen for announcements.
    pub bind: SocketAddr,
    /// Join [`MULTICAST_GROUP`] and announce to it.
    pub multicast: bool,
    /// Extra unicast destinations for announcements.
    pub targets: Vec<SocketAddr>,
    pub interval: Duration,
    pub timeout: Duration,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from((Ipv4Addr::UNSPECIFIED, DISCOVERY_PORT)),
            multicast: true,
            targets: Vec::new(),
            interval: ANNOUNCE_INTERVAL,
            timeout: PEER_TIMEOUT,
        }
    }
}

impl DiscoveryConfig {
    fn destinations(&self) -> Vec<SocketAddr> {
        let mut out = self.targets.clone();
        if self.multicast {
            out.push(SocketAddr::from((MULTICAST_GROUP, self.bind.port())));
        }
        out
    }
}

/// Binds the announcement socket, shared with other daemons on the same host.
pub fn bind_socket(cfg: &DiscoveryConfig) -> io::Result<UdpSocket> {
    use socket2::{Domain, Protocol, Socket, Type};

    let socket = Socket::new(
        Domain::for_address(cfg.bind),
        Type::DGRAM,
        Some(Protocol::UDP),
    )?;
    socket.set_reuse_address(true)?;
    socket.set_nonblocking(true)?;
    socket.bind(&cfg.bind.into())?;
    if cfg.multicast {
        if let Err(e) = socket
            .join_multicast_v4(&MULTICAST_GROUP, &Ipv4Addr::UNSPECIFIED)
            .and_then(|_| socket.set_multicast_loop_v4(true))
        {
            tracing::warn!(error = %e, "multicast unavailable; relying on unicast targets");
        }
    }
    UdpSocket::from_std(socket.into())
}

/// Counters for the status endpoint.
#[derive(Debug, Default)]
pub struct DiscoveryStats {
    pub sent: AtomicU64,
    pub received: AtomicU64,
}

/// Runs announce, receive and expiry loops until `shutdown` flips to true,
/// then sends a goodbye when `say_bye` returns true.
pub async fn run(
    socket: UdpSocket,
    cfg: DiscoveryConfig,
    directory: Arc<PeerDirectory>,
    stats: Arc<DiscoveryStats>,
    announcement: impl Fn(AnnounceKind) -> Announcement,
    mut shutdown: watch::Receiver<bool>,
    say_bye: impl Fn() -> bool,
) {
    let destinations = cfg.destinations();
    let mut announce = tokio::time::interval(cfg.interval);
    let mut sweep = tokio::time::interval(Duration::from_secs(1).min(cfg.interval));
    let mut buf = [0u8; 2048];

    let send = |kind: AnnounceKind| {
        let a = announcement(kind);
        let socket = &socket;
        let destinations = &destinations;
        let stats = &stats;
        async move {
            let bytes = match a.encode() {
                Ok(b) => b,
                Err(e) => {
                    tracing::warn!(error = %e, "not sending announcement");
                    return;
                }
            };
            for dest in destinations {
                match socket.send_to(&bytes, dest).await {
                    Ok(_) => {
                        stats.sent.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => tracing::debug!(%dest, error = %e, "announce failed"),
                }
            }
        }
    };

    loop {
        tokio::select! {
            _ = announce.tick() => send(AnnounceKind::Alive).await,
            _ = sweep.tick() => {
                directory.expire(Instant::now(), cfg.timeout);
            }
            r = socket.recv_from(&mut buf) => match r {
                Ok((n, from)) => {
                    stats.received.fetch_add(1, Ordering::Relaxed);
                    directory.apply_datagram(&buf[..n], from.ip(), Instant::now());
                }
                Err(e) => tracing::debug!(error = %e, "discovery recv failed"),
            },
            changed = shutdown.changed() => {
                if changed.is_err() || *shutdown.borrow() {
                    break;
                }
            }
        }
    }
    if say_bye() {
        send(AnnounceKind::Bye).await;
    }
}
