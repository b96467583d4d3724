#![allow(dead_code)]

pub mod gen;

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr, TcpListener, UdpSocket};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde_json::Value;
use sha2::{Digest, Sha256};

use peershare::discovery::{make_announcement, AnnounceKind, DiscoveryConfig, LocalIdentity};
use peershare::{Daemon, DaemonConfig};

pub fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from((Ipv4Addr::LOCALHOST, port))
}

pub fn free_tcp_port() -> u16 {
    TcpListener::bind(loopback(0))
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

pub fn free_udp_port() -> u16 {
    UdpSocket::bind(loopback(0))
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

/// Loopback-only config with ephemeral ports and no discovery.
pub fn config(data_dir: &Path, name: &str) -> DaemonConfig {
    let mut cfg = DaemonConfig::new(data_dir, name);
    cfg.wire_bind = loopback(0);
    cfg.api_bind = loopback(0);
    cfg.discovery = None;
    cfg
}

pub async fn start(data_dir: &Path, name: &str) -> Daemon {
    Daemon::start(config(data_dir, name))
        .await
        .expect("daemon starts")
}

/// Makes `observer` see `peer` as if its announcement had arrived.
pub fn introduce(observer: &Daemon, peer: &Daemon) {
    let bytes = make_announcement(
        peer.identity(),
        peer.node().registry.len(),
        AnnounceKind::Alive,
    )
    .encode()
    .unwrap();
    observer
        .node()
        .peers
        .apply_datagram(&bytes, peer.wire_addr().ip(), Instant::now());
}

pub fn unicast_discovery(own: u16, target: u16) -> DiscoveryConfig {
    DiscoveryConfig {
        bind: loopback(own),
        multicast: false,
        targets: vec![loopback(target)],
        ..DiscoveryConfig::default()
    }
}

pub fn random_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    StdRng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

pub fn sha256(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> String {
    sha256(&std::fs::read(path).unwrap())
}

/// Relative path → content digest for every file under `root`.
pub fn digest_tree(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let p = entry.path();
            if entry.file_type().unwrap().is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), file_digest(&p));
            }
        }
    }
    out
}

pub fn identity(name: &str) -> LocalIdentity {
    LocalIdentity {
        peer_id: peershare::fsutil::random_id(),
        display_name: name.to_owned(),
        port: 0,
    }
}

/// Thin JSON client for the control API.
pub struct Http {
    base: String,
    client: reqwest::Client,
}

impl Http {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            base: format!("http://{addr}"),
            client: reqwest::Client::new(),
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        Self::finish(self.client.get(format!("{}{path}", self.base))).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        Self::finish(self.client.post(format!("{}{path}", self.base)).json(&body)).await
    }

    pub async fn patch(&self, path: &str, body: Value) -> (u16, Value) {
        Self::finish(
            self.client
                .patch(format!("{}{path}", self.base))
                .json(&body),
        )
        .await
    }

    pub async fn delete(&self, path: &str) -> (u16, Value) {
        Self::finish(self.client.delete(format!("{}{path}", self.base))).await
    }

    pub async fn raw(&self, path: &str) -> reqwest::Response {
        self.client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap()
    }

    async fn finish(req: reqwest::RequestBuilder) -> (u16, Value) {
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let body = resp.json().await.unwrap_or(Value::Null);
        (status, body)
    }
}
