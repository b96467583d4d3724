//! Share modes and the authorization decision.
//!
//! Modes form a total order `Read < Write < Full`, and the set of actions a
//! remote peer may perform grows strictly with the mode:
//!
//! | mode  | list | get | put | delete |
//! |-------|------|-----|-----|--------|
//! | read  | yes  | yes | no  | no     |
//! | write | yes  | yes | yes | no     |
//! | full  | yes  | yes | yes | yes    |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Permission level attached to a shared file. Applies to every peer alike.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum PermissionMode {
    /// Peers may see and copy the file.
    #[default]
    Read,
    /// Read, plus replace the file's content.
    Write,
    /// Write, plus delete the file from the owner's machine.
    Full,
}

impl PermissionMode {
    pub const ALL: [PermissionMode; 3] = [Self::Read, Self::Write, Self::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Read => "read",
            Self::Write => "write",
            Self::Full => "full",
        }
    }

    /// Actions permitted under this mode, in canonical order.
    pub fn allowed(self) -> &'static [Action] {
        match self {
            Self::Read => &[Action::List, Action::Get],
            Self::Write => &[Action::List, Action::Get, Action::Put],
            Self::Full => &[Action::List, Action::Get, Action::Put, Action::Delete],
        }
    }

    pub fn permits(self, action: Action) -> bool {
        authorize(action, self) == Decision::Allow
    }
}

impl fmt::Display for PermissionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown share mode {0:?} (expected read, write or full)")]
pub struct ParseModeError(pub String);

impl FromStr for PermissionMode {
    type Err = ParseModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Self::Read),
            "write" => Ok(Self::Write),
            "full" => Ok(Self::Full),
            other => Err(ParseModeError(other.to_owned())),
        }
    }
}

/// Something a remote peer asks to do with a share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    List,
    Get,
    Put,
    Delete,
}

impl Action {
    pub const ALL: [Action; 4] = [Self::List, Self::Get, Self::Put, Self::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::List => "list",
            Self::Get => "get",
            Self::Put => "put",
            Self::Delete => "delete",
        }
    }

    pub fn is_mutating(self) -> bool {
        matches!(self, Self::Put | Self::Delete)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Allow,
    Deny,
}

/// The single authorization rule. Every enforcement point goes through here.
pub fn authorize(action: Action, mode: PermissionMode) -> Decision {
    let allowed = match action {
        Action::List | Action::Get => true,
        Action::Put => mode >= PermissionMode::Write,
        Action::Delete => mode >= PermissionMode::Full,
    };
    if allowed {
        Decision::Allow
    } else {
        Decision::Deny
    }
}
