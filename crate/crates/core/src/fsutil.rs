//! Small filesystem helpers: temp-file + rename replacement and random ids.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// 128-bit random identifier rendered as 32 lowercase hex digits.
pub fn random_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

/// A hidden sibling of `target` that no other writer in this process will pick.
pub fn temp_path_for(target: &Path) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".to_owned());
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    target.with_file_name(format!(".{name}.{}.{n}.tmp", std::process::id()))
}

/// Replaces `target` with `contents` so readers see either the old or the new file.
pub fn write_atomic(target: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = temp_path_for(target);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, target)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result?;
    sync_parent(target);
    Ok(())
}

/// Best-effort fsync of the containing directory after a rename.
pub fn sync_parent(path: &Path) {
    if let Some(parent) = path.parent() {
        if let Ok(dir) = File::open(parent) {
            let _ = dir.sync_all();
        }
    }
}
