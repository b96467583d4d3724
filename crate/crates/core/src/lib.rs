//! LAN peer-to-peer file sharing that keeps the owner aware of what is
//! happening to their files.
//!
//! * [`mode`]: the read/write/full permission lattice and [`mode::authorize`].
//! * [`registry`]: locally shared files, persisted to `shares.json`.
//! * [`events`]: the append-only what/when/where/who log (`events.log`).
//! * [`feedback`]: human-readable consequences of a share mode.
//! * [`discovery`]: UDP announcements and the peer liveness table.
//! * [`wire`]: the framed daemon-to-daemon protocol, server and client.
//! * [`api`]: the loopback HTTP control plane.
//! * [`daemon`]: everything above, started together.
//!
//! Peers are trusted: requester identity is whatever the peer says in its
//! hello, and transfers are not encrypted.

pub mod api;
pub mod daemon;
pub mod discovery;
pub mod events;
pub mod feedback;
pub mod fsutil;
pub mod mode;
pub mod registry;
pub mod wire;

pub use daemon::{Daemon, DaemonConfig};
pub use events::{EventKind, EventLog, EventRecord, Outcome};
pub use feedback::{FeedbackMessage, Severity};
pub use mode::{authorize, Action, Decision, PermissionMode};
pub use registry::{ShareEntry, ShareRegistry};
