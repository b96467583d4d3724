//! The set of locally shared files and their modes.
//!
//! Owner-initiated mutations (`add_share`, `set_mode`, `remove_share`) each
//! emit exactly one configuration event. Mutations caused by remote requests
//! (content replacement, remote delete) are recorded by the wire server as
//! the access event for that request instead.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::events::{EventKind, EventLog, NewEvent};
use crate::fsutil;
use crate::mode::PermissionMode;

pub const SHARES_FILE: &str = "shares.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareEntry {
    pub share_id: String,
    pub path: PathBuf,
    pub display_name: String,
    pub mode: PermissionMode,
    pub size_bytes: u64,
    pub created_at: DateTime<Utc>,
    pub modified_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("{} does not exist", .0.display())]
    NotFound(PathBuf),
    #[error("{} is not a regular file", .0.display())]
    NotAFile(PathBuf),
    #[error("{} is already shared as {share_id}", path.display())]
    AlreadyShared { path: PathBuf, share_id: String },
    #[error("no share with id {0}")]
    UnknownShare(String),
    #[error("invalid shares file: {0}")]
    BadStore(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Inner {
    entries: Vec<ShareEntry>,
    store: Option<PathBuf>,
}

impl Inner {
    fn position(&self, share_id: &str) -> Result<usize, RegistryError> {
        self.entries
            .iter()
            .position(|e| e.share_id == share_id)
            .ok_or_else(|| RegistryError::UnknownShare(share_id.to_owned()))
    }

    /// Persists `next` and only then makes it the live state.
    fn commit(&mut self, next: Vec<ShareEntry>) -> Result<(), RegistryError> {
        if let Some(store) = &self.store {
            let json = serde_json::to_vec_pretty(&next)?;
            fsutil::write_atomic(store, &json)?;
        }
        self.entries = next;
        Ok(())
    }
}

pub struct ShareRegistry {
    inner: Mutex<Inner>,
    events: EventLog,
}

impl ShareRegistry {
    /// Loads `<data_dir>/shares.json` if present.
    pub fn open(data_dir: &Path, events: EventLog) -> Result<Self, RegistryError> {
        let store = data_dir.join(SHARES_FILE);
        let entries = match fs::read(&store) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            inner: Mutex::new(Inner {
                entries,
                store: Some(store),
            }),
            events,
        })
    }

    pub fn in_memory(events: EventLog) -> Self {
        Self {
            inner: Mutex::new(Inner {
                entries: Vec::new(),
                store: None,
            }),
            events,
        }
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn add_share(
        &self,
        path: &Path,
        mode: PermissionMode,
    ) -> Result<ShareEntry, RegistryError> {
        let path = fs::canonicalize(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => RegistryError::NotFound(path.to_path_buf()),
            _ => RegistryError::Io(e),
        })?;
        let meta = fs::metadata(&path)?;
        if !meta.is_file() {
            return Err(RegistryError::NotAFile(path));
        }
        // Readability check; the handle is dropped immediately.
        fs::File::open(&path)?;

        let mut inner = self.lock();
        if let Some(existing) = inner.entries.iter().find(|e| e.path == path) {
            return Err(RegistryError::AlreadyShared {
                path,
                share_id: existing.share_id.clone(),
            });
        }
        let now = Utc::now();
        let entry = ShareEntry {
            share_id: fsutil::random_id(),
            display_name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            path,
            mode,
            size_bytes: meta.len(),
            created_at: now,
            modified_at: meta.modified().map(DateTime::<Utc>::from).unwrap_or(now),
        };
        let mut next = inner.entries.clone();
        next.push(entry.clone());
        inner.commit(next)?;
        self.events.record(NewEvent::config(
            EventKind::ShareAdded,
            &entry.share_id,
            &entry.display_name,
            format!("shared with mode {}", entry.mode),
        ));
        Ok(entry)
    }

    /// Changes the mode. Setting the current mode again still records an event.
    pub fn set_mode(
        &self,
        share_id: &str,
        mode: PermissionMode,
    ) -> Result<ShareEntry, RegistryError> {
        let mut inner = self.lock();
        let idx = inner.position(share_id)?;
        let mut next = inner.entries.clone();
        let old = next[idx].mode;
        next[idx].mode = mode;
        let entry = next[idx].clone();
        inner.commit(next)?;
        self.events.record(NewEvent::config(
            EventKind::ModeChanged,
            &entry.share_id,
            &entry.display_name,
            format!("mode {old}→{mode}"),
        ));
        Ok(entry)
    }

    /// Stops sharing. The file itself stays on disk.
    pub fn remove_share(&self, share_id: &str) -> Result<ShareEntry, RegistryError> {
        let mut inner = self.lock();
        let idx = inner.position(share_id)?;
        let mut next = inner.entries.clone();
        let entry = next.remove(idx);
        inner.commit(next)?;
        self.events.record(NewEvent::config(
            EventKind::ShareRemoved,
            &entry.share_id,
            &entry.display_name,
            "no longer shared",
        ));
        Ok(entry)
    }

    /// Snapshot ordered by `created_at`, then `share_id`.
    pub fn list_shares(&self) -> Vec<ShareEntry> {
        let mut entries = self.lock().entries.clone();
        entries.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.share_id.cmp(&b.share_id))
        });
        entries
    }

    pub fn get(&self, share_id: &str) -> Option<ShareEntry> {
        self.lock()
            .entries
            .iter()
            .find(|e| e.share_id == share_id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Moves a fully written temp file over the shared file and refreshes the
    /// entry's size and modification time. No event is emitted here.
    pub(crate) fn replace_content(
        &self,
        share_id: &str,
        staged: &Path,
    ) -> Result<ShareEntry, RegistryError> {
        let mut inner = self.lock();
        let idx = inner.position(share_id)?;
        let target = inner.entries[idx].path.clone();
        if !target.is_file() {
            return Err(RegistryError::NotFound(target));
        }
        fs::rename(staged, &target)?;
        fsutil::sync_parent(&target);
        let size = fs::metadata(&target)?.len();
        let mut next = inner.entries.clone();
        next[idx].size_bytes = size;
        next[idx].modified_at = Utc::now();
        let entry = next[idx].clone();
        inner.commit(next)?;
        Ok(entry)
    }

    /// Deletes the shared file from disk and drops its entry. No event is
    /// emitted here.
    pub(crate) fn delete_content(&self, share_id: &str) -> Result<ShareEntry, RegistryError> {
        let mut inner = self.lock();
        let idx = inner.position(share_id)?;
        fs::remove_file(&inner.entries[idx].path)?;
        let mut next = inner.entries.clone();
        let entry = next.remove(idx);
        inner.commit(next)?;
        Ok(entry)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EventFilter, Outcome};

    fn setup() -> (tempfile::TempDir, ShareRegistry) {
        let dir = tempfile::tempdir().unwrap();
        let reg = ShareRegistry::in_memory(EventLog::in_memory());
        (dir, reg)
    }

    fn file(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn add_share_fills_fields_and_emits() {
        let (dir, reg) = setup();
        let p = file(&dir, "report.pdf", b"12345");
        let e = reg.add_share(&p, PermissionMode::Read).unwrap();
        assert_eq!(e.mode, PermissionMode::Read);
        assert_eq!(e.display_name, "report.pdf");
        assert_eq!(e.size_bytes, 5);
        assert_eq!(e.share_id.len(), 32);
        assert!(e.path.is_absolute());

        let evs = reg.events().read(0, &EventFilter::default(), None);
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].what, EventKind::ShareAdded);
        assert_eq!(evs[0].outcome, Outcome::Info);
        assert!(evs[0].is_local());
    }

    #[test]
    fn add_share_errors() {
        let (dir, reg) = setup();
        let p = file(&dir, "report.pdf", b"x");
        reg.add_share(&p, PermissionMode::Read).unwrap();
        assert!(matches!(
            reg.add_share(&p, PermissionMode::Read),
            Err(RegistryError::AlreadyShared { .. })
        ));
        // Same file through a non-canonical path is still a duplicate.
        let indirect = dir.path().join(".").join("report.pdf");
        assert!(matches!(
            reg.add_share(&indirect, PermissionMode::Full),
            Err(RegistryError::AlreadyShared { .. })
        ));
        assert!(matches!(
            reg.add_share(dir.path(), PermissionMode::Full),
            Err(RegistryError::NotAFile(_))
        ));
        assert!(matches!(
            reg.add_share(&dir.path().join("nope"), PermissionMode::Read),
            Err(RegistryError::NotFound(_))
        ));
        assert_eq!(reg.events().len(), 1);
    }

    #[test]
    fn set_mode_records_old_and_new() {
        let (dir, reg) = setup();
        let s = reg
            .add_share(&file(&dir, "a", b""), PermissionMode::Read)
            .unwrap();
        let e = reg.set_mode(&s.share_id, PermissionMode::Full).unwrap();
        assert_eq!(e.mode, PermissionMode::Full);
        let last = reg.events().read(1, &EventFilter::default(), None);
        assert_eq!(last[0].what, EventKind::ModeChanged);
        assert_eq!(last[0].detail, "mode read→full");

        reg.set_mode(&s.share_id, PermissionMode::Full).unwrap();
        assert_eq!(reg.events().len(), 3);
        assert!(matches!(
            reg.set_mode("missing", PermissionMode::Write),
            Err(RegistryError::UnknownShare(_))
        ));
    }

    #[test]
    fn remove_keeps_file_and_order() {
        let (dir, reg) = setup();
        let ids: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|n| {
                reg.add_share(&file(&dir, n, b"x"), PermissionMode::Read)
                    .unwrap()
            })
            .collect();
        assert!(reg
            .list_shares()
            .iter()
            .map(|e| &e.share_id)
            .eq(ids.iter().map(|e| &e.share_id)));

        let removed = reg.remove_share(&ids[1].share_id).unwrap();
        assert!(removed.path.exists());
        let names: Vec<_> = reg
            .list_shares()
            .into_iter()
            .map(|e| e.display_name)
            .collect();
        assert_eq!(names, ["a", "c"]);
        assert!(matches!(
            reg.remove_share(&ids[1].share_id),
            Err(RegistryError::UnknownShare(_))
        ));
        assert!(ShareRegistry::in_memory(EventLog::in_memory())
            .list_shares()
            .is_empty());
    }

    #[test]
    fn persisted_json_shape_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        fs::create_dir(&data).unwrap();
        let reg = ShareRegistry::open(&data, EventLog::in_memory()).unwrap();
        let s = reg
            .add_share(&file(&dir, "f.txt", b"abc"), PermissionMode::Write)
            .unwrap();

        let raw: serde_json::Value =
            serde_json::from_slice(&fs::read(data.join(SHARES_FILE)).unwrap()).unwrap();
        let obj = raw.as_array().unwrap()[0].as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "created_at",
                "display_name",
                "mode",
                "modified_at",
                "path",
                "share_id",
                "size_bytes"
            ]
        );
        assert_eq!(obj["mode"], "write");

        let again = ShareRegistry::open(&data, EventLog::in_memory()).unwrap();
        assert_eq!(again.list_shares(), vec![s]);
    }
}
