//! Append-only security event log.
//!
//! Every access attempt, configuration change and peer join/leave becomes an
//! [`EventRecord`] carrying what happened, when, where (which share) and who
//! did it. Records are persisted one JSON object per line and fanned out to
//! live subscribers.

use std::collections::VecDeque;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::mode::Action;

/// Actor id used for acts performed by the daemon's owner.
pub const LOCAL_ACTOR: &str = "local";

/// Share id and name recorded for requests that concern every share (list).
pub const ALL_SHARES: &str = "*";

const SUBSCRIBER_BUFFER: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ShareAdded,
    ShareRemoved,
    ModeChanged,
    List,
    Get,
    Put,
    Delete,
    PeerJoined,
    PeerLeft,
    Malformed,
}

impl From<Action> for EventKind {
    fn from(action: Action) -> Self {
        match action {
            Action::List => Self::List,
            Action::Get => Self::Get,
            Action::Put => Self::Put,
            Action::Delete => Self::Delete,
        }
    }
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ShareAdded => "share_added",
            Self::ShareRemoved => "share_removed",
            Self::ModeChanged => "mode_changed",
            Self::List => "list",
            Self::Get => "get",
            Self::Put => "put",
            Self::Delete => "delete",
            Self::PeerJoined => "peer_joined",
            Self::PeerLeft => "peer_left",
            Self::Malformed => "malformed",
        }
    }

    pub fn is_access(self) -> bool {
        matches!(self, Self::List | Self::Get | Self::Put | Self::Delete)
    }

    pub fn is_config(self) -> bool {
        matches!(
            self,
            Self::ShareAdded | Self::ShareRemoved | Self::ModeChanged
        )
    }

    pub fn is_peer(self) -> bool {
        matches!(self, Self::PeerJoined | Self::PeerLeft)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EventKind {
    type Err = serde_json::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Allowed,
    Denied,
    Info,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Allowed => "allowed",
            Self::Denied => "denied",
            Self::Info => "info",
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = serde_json::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
    }
}

/// One line of `events.log`.
///
/// `share_id`/`share_name` are empty for peer events. `peer_id`/`peer_name`
/// are [`LOCAL_ACTOR`] for owner-initiated configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub when: DateTime<Utc>,
    pub what: EventKind,
    pub outcome: Outcome,
    pub share_id: String,
    pub share_name: String,
    pub peer_id: String,
    pub peer_name: String,
    pub detail: String,
}

impl EventRecord {
    pub fn is_local(&self) -> bool {
        self.peer_id == LOCAL_ACTOR
    }
}

/// An event before the log has assigned its sequence number and timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewEvent {
    pub what: EventKind,
    pub outcome: Outcome,
    pub share_id: String,
    pub share_name: String,
    pub peer_id: String,
    pub peer_name: String,
    pub detail: String,
}

impl NewEvent {
    /// Owner-initiated configuration act on a share.
    pub fn config(
        what: EventKind,
        share_id: &str,
        share_name: &str,
        detail: impl Into<String>,
    ) -> Self {
        debug_assert!(what.is_config());
        Self {
            what,
            outcome: Outcome::Info,
            share_id: share_id.to_owned(),
            share_name: share_name.to_owned(),
            peer_id: LOCAL_ACTOR.to_owned(),
            peer_name: LOCAL_ACTOR.to_owned(),
            detail: detail.into(),
        }
    }

    /// A remote peer's request, allowed or denied.
    pub fn access(
        what: EventKind,
        allowed: bool,
        peer_id: &str,
        peer_name: &str,
        share_id: &str,
        share_name: &str,
        detail: impl Into<String>,
    ) -> Self {
        debug_assert!(what.is_access());
        Self {
            what,
            outcome: if allowed {
                Outcome::Allowed
            } else {
                Outcome::Denied
            },
            share_id: share_id.to_owned(),
            share_name: share_name.to_owned(),
            peer_id: peer_id.to_owned(),
            peer_name: peer_name.to_owned(),
            detail: detail.into(),
        }
    }

    pub fn peer(
        what: EventKind,
        peer_id: &str,
        peer_name: &str,
        detail: impl Into<String>,
    ) -> Self {
        debug_assert!(what.is_peer());
        Self {
            what,
            outcome: Outcome::Info,
            share_id: String::new(),
            share_name: String::new(),
            peer_id: peer_id.to_owned(),
            peer_name: peer_name.to_owned(),
            detail: detail.into(),
        }
    }

    pub fn malformed(peer_id: &str, peer_name: &str, detail: impl Into<String>) -> Self {
        Self {
            what: EventKind::Malformed,
            outcome: Outcome::Info,
            share_id: String::new(),
            share_name: String::new(),
            peer_id: peer_id.to_owned(),
            peer_name: peer_name.to_owned(),
            detail: detail.into(),
        }
    }

    fn well_formed(&self) -> bool {
        if self.what.is_access() {
            self.peer_id != LOCAL_ACTOR && self.outcome != Outcome::Info
        } else if self.what.is_config() {
            self.outcome == Outcome::Info
        } else {
            true
        }
    }
}

/// Predicates for [`EventLog::read`]. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct EventFilter {
    pub what: Option<EventKind>,
    pub outcome: Option<Outcome>,
    pub share_id: Option<String>,
    pub peer_id: Option<String>,
}

impl EventFilter {
    pub fn matches(&self, r: &EventRecord) -> bool {
        self.what.is_none_or(|w| w == r.what)
            && self.outcome.is_none_or(|o| o == r.outcome)
            && self.share_id.as_deref().is_none_or(|s| s == r.share_id)
            && self.peer_id.as_deref().is_none_or(|p| p == r.peer_id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EventLogError {
    #[error("cannot read event log: {0}")]
    Unreadable(#[from] io::Error),
    #[error("event log line {line} is corrupt: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// The record was kept in memory and delivered to subscribers, but could not
/// be persisted. The log is now in degraded-audit mode.
#[derive(Debug, thiserror::Error)]
#[error("event {} not persisted: {source}", record.seq)]
pub struct AppendError {
    pub record: Box<EventRecord>,
    #[source]
    pub source: io::Error,
}

#[derive(Debug, thiserror::Error)]
pub enum SubscriptionError {
    /// The subscriber fell too far behind and was dropped. Resubscribe with
    /// `since = last_seq`.
    #[error("subscriber lagged behind after seq {last_seq}")]
    Lagged { last_seq: u64 },
}

struct State {
    records: Vec<EventRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

struct Shared {
    state: Mutex<State>,
    tx: broadcast::Sender<EventRecord>,
    degraded: AtomicBool,
}

/// Handle to the log. Cheap to clone; all clones share one appender.
#[derive(Clone)]
pub struct EventLog {
    shared: Arc<Shared>,
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog")
            .field("last_seq", &self.last_seq())
            .field("degraded", &self.is_degraded())
            .finish()
    }
}

impl EventLog {
    /// Opens (creating if needed) a persistent log, replaying what is on disk.
    pub fn open(path: &Path) -> Result<Self, EventLogError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let replayed = replay_from(&mut file)?;
        let len = file.metadata()?.len();
        if replayed.valid_len < len {
            tracing::warn!(
                path = %path.display(),
                dropped = len - replayed.valid_len,
                "discarding partial trailing line in event log"
            );
            file.set_len(replayed.valid_len)?;
        }
        if replayed.missing_newline {
            file.write_all(b"\n")?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self::from_parts(replayed.records, Some(Box::new(file))))
    }

    /// A log that is never persisted.
    pub fn in_memory() -> Self {
        Self::from_parts(Vec::new(), None)
    }

    pub(crate) fn from_parts(
        records: Vec<EventRecord>,
        sink: Option<Box<dyn Write + Send>>,
    ) -> Self {
        let (tx, _) = broadcast::channel(SUBSCRIBER_BUFFER);
        Self {
            shared: Arc::new(Shared {
                state: Mutex::new(State { records, sink }),
                tx,
                degraded: AtomicBool::new(false),
            }),
        }
    }

    /// Assigns the next seq, persists the line, then notifies subscribers.
    pub fn append(&self, new: NewEvent) -> Result<EventRecord, AppendError> {
        debug_assert!(new.well_formed(), "ill-formed event {new:?}");
        let mut state = self.lock();
        let seq = state.records.last().map_or(1, |r| r.seq + 1);
        let record = EventRecord {
            seq,
            when: Utc::now(),
            what: new.what,
            outcome: new.outcome,
            share_id: new.share_id,
            share_name: new.share_name,
            peer_id: new.peer_id,
            peer_name: new.peer_name,
            detail: new.detail,
        };

        let mut failure = None;
        if let Some(sink) = state.sink.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("event records always serialize");
            line.push(b'\n');
            if let Err(e) = sink.write_all(&line).and_then(|_| sink.flush()) {
                // Stop writing so the file stays a gap-free prefix.
                state.sink = None;
                self.shared.degraded.store(true, Ordering::SeqCst);
                failure = Some(e);
            }
        }
        state.records.push(record.clone());
        let _ = self.shared.tx.send(record.clone());
        drop(state);

        match failure {
            None => Ok(record),
            Some(source) => Err(AppendError {
                record: Box::new(record),
                source,
            }),
        }
    }

    /// Appends and reports a persistence failure to the diagnostics log instead
    /// of the caller. Guarded operations use this: they succeed regardless.
    pub fn record(&self, new: NewEvent) -> EventRecord {
        match self.append(new) {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(error = %e, "audit log degraded");
                *e.record
            }
        }
    }

    /// Records with `seq > since` matching `filter`, in seq order.
    pub fn read(&self, since: u64, filter: &EventFilter, limit: Option<usize>) -> Vec<EventRecord> {
        let state = self.lock();
        let start = state.records.partition_point(|r| r.seq <= since);
        state.records[start..]
            .iter()
            .filter(|r| filter.matches(r))
            .take(limit.unwrap_or(usize::MAX))
            .cloned()
            .collect()
    }

    /// Everything after `since` that exists now, followed by everything
    /// appended later, with no gap or duplicate between the two.
    pub fn subscribe(&self, since: u64) -> Subscription {
        let state = self.lock();
        let rx = self.shared.tx.subscribe();
        let start = state.records.partition_point(|r| r.seq <= since);
        let backlog: VecDeque<_> = state.records[start..].iter().cloned().collect();
        Subscription {
            backlog,
            rx,
            last_seq: since,
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().records.last().map_or(0, |r| r.seq)
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True once a write to disk has failed. Sticky for the daemon lifetime.
    pub fn is_degraded(&self) -> bool {
        self.shared.degraded.load(Ordering::SeqCst)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct Subscription {
    backlog: VecDeque<EventRecord>,
    rx: broadcast::Receiver<EventRecord>,
    last_seq: u64,
}

impl Subscription {
    /// Next record in seq order. `Ok(None)` once the log is gone.
    pub async fn next(&mut self) -> Result<Option<EventRecord>, SubscriptionError> {
        if let Some(r) = self.backlog.pop_front() {
            self.last_seq = r.seq;
            return Ok(Some(r));
        }
        loop {
            match self.rx.recv().await {
                Ok(r) if r.seq <= self.last_seq => continue,
                Ok(r) => {
                    self.last_seq = r.seq;
                    return Ok(Some(r));
                }
                Err(broadcast::error::RecvError::Closed) => return Ok(None),
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    return Err(SubscriptionError::Lagged {
                        last_seq: self.last_seq,
                    })
                }
            }
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }
}

struct Replayed {
    records: Vec<EventRecord>,
    valid_len: u64,
    missing_newline: bool,
}

/// Parses a log file. A final line that does not parse is treated as a torn
/// write and excluded from `valid_len`; any other bad line is an error.
pub fn replay(path: &Path) -> Result<Vec<EventRecord>, EventLogError> {
    let mut f = File::open(path)?;
    Ok(replay_from(&mut f)?.records)
}

fn replay_from<R: Read + Seek>(src: &mut R) -> Result<Replayed, EventLogError> {
    src.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(src);
    let mut records: Vec<EventRecord> = Vec::new();
    let mut valid_len = 0u64;
    let mut missing_newline = false;
    let mut pending_error: Option<(usize, String)> = None;
    let mut buf = Vec::new();
    let mut line_no = 0;

    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if let Some((line, reason)) = pending_error.take() {
            // A bad line followed by more data is not a torn tail.
            return Err(EventLogError::Corrupt { line, reason });
        }
        let terminated = buf.last() == Some(&b'\n');
        let body = if terminated {
            &buf[..buf.len() - 1]
        } else {
            &buf[..]
        };
        if body.iter().all(u8::is_ascii_whitespace) {
            valid_len += n as u64;
            continue;
        }
        match serde_json::from_slice::<EventRecord>(body) {
            Ok(r) => {
                if let Some(prev) = records.last() {
                    if r.seq != prev.seq + 1 {
                        return Err(EventLogError::Corrupt {
                            line: line_no,
                            reason: format!("seq {} follows {}", r.seq, prev.seq),
                        });
                    }
                }
                records.push(r);
                valid_len += n as u64;
                missing_newline = !terminated;
            }
            Err(e) => pending_error = Some((line_no, e.to_string())),
        }
    }
    if let Some((line, reason)) = pending_error {
        tracing::warn!(line, %reason, "ignoring torn final line of event log");
    }
    Ok(Replayed {
        records,
        valid_len,
        missing_newline,
    })
}
