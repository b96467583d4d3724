//! Plain-language descriptions of what a share mode lets other people do,
//! and one-line summaries of events.
//!
//! All user-facing English lives in this module.

use serde::{Deserialize, Serialize};

use crate::events::{EventKind, EventRecord, Outcome};
use crate::mode::{Action, PermissionMode};
use crate::registry::ShareEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Caution,
    Danger,
}

impl Severity {
    pub fn for_mode(mode: PermissionMode) -> Self {
        match mode {
            PermissionMode::Read => Self::Info,
            PermissionMode::Write => Self::Caution,
            PermissionMode::Full => Self::Danger,
        }
    }
}

/// One thing other people can now do, with a stable machine-readable tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub tag: Action,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    pub headline: String,
    pub capabilities: Vec<Capability>,
    pub severity: Severity,
}

impl FeedbackMessage {
    pub fn tags(&self) -> Vec<Action> {
        self.capabilities.iter().map(|c| c.tag).collect()
    }
}

fn capability_text(action: Action, name: &str) -> String {
    match action {
        Action::List => format!("Anyone on your network can see \"{name}\" in your shared files."),
        Action::Get => {
            format!("Anyone on your network can view and copy \"{name}\" to their own machine.")
        }
        Action::Put => format!(
            "Anyone on your network can replace the content of \"{name}\" with a file of their own."
        ),
        Action::Delete => {
            format!("Anyone on your network can delete \"{name}\" from your machine.")
        }
    }
}

fn headline(mode: PermissionMode, name: &str) -> String {
    match mode {
        PermissionMode::Read => format!("\"{name}\" is shared read-only. Others can copy it but cannot change it."),
        PermissionMode::Write => {
            format!("\"{name}\" is shared with write access. Others can overwrite its content.")
        }
        PermissionMode::Full => format!(
            "\"{name}\" is shared with full access. Others can overwrite it or delete it from your machine."
        ),
    }
}

/// What sharing `display_name` under `mode` means, before or after the fact.
pub fn describe_mode(display_name: &str, mode: PermissionMode) -> FeedbackMessage {
    FeedbackMessage {
        headline: headline(mode, display_name),
        capabilities: mode
            .allowed()
            .iter()
            .map(|a| Capability {
                tag: *a,
                text: capability_text(*a, display_name),
            })
            .collect(),
        severity: Severity::for_mode(mode),
    }
}

pub fn describe_share(entry: &ShareEntry) -> FeedbackMessage {
    describe_mode(&entry.display_name, entry.mode)
}

fn verb(what: EventKind) -> &'static str {
    match what {
        EventKind::ShareAdded => "shared",
        EventKind::ShareRemoved => "stopped sharing",
        EventKind::ModeChanged => "changed the share mode of",
        EventKind::List => "listed your shared files",
        EventKind::Get => "copied",
        EventKind::Put => "replaced the content of",
        EventKind::Delete => "deleted",
        EventKind::PeerJoined => "joined the network",
        EventKind::PeerLeft => "left the network",
        EventKind::Malformed => "sent a malformed request",
    }
}

fn attempt_verb(what: EventKind) -> &'static str {
    match what {
        EventKind::List => "list your shared files",
        EventKind::Get => "copy",
        EventKind::Put => "replace the content of",
        EventKind::Delete => "delete",
        _ => verb(what),
    }
}

/// One line suitable for a live feed.
pub fn describe_event(event: &EventRecord) -> String {
    let who = if event.is_local() {
        "You".to_owned()
    } else if event.peer_name.is_empty() {
        event.peer_id.clone()
    } else {
        event.peer_name.clone()
    };
    let target = if event.share_name.is_empty() || event.what == EventKind::List {
        String::new()
    } else {
        format!(" \"{}\"", event.share_name)
    };

    let mut line = match (event.what, event.outcome) {
        (w, Outcome::Denied) if w.is_access() => {
            format!(
                "BLOCKED: {who} tried to {}{target} (denied)",
                attempt_verb(w)
            )
        }
        (w, Outcome::Allowed) if w.is_access() => format!("{who} {}{target} (allowed)", verb(w)),
        (EventKind::ModeChanged, _) => {
            let change = event
                .detail
                .strip_prefix("mode ")
                .unwrap_or(&event.detail)
                .replace("→", " to ");
            format!("{who} changed the share mode of{target} from {change}")
        }
        (w, _) => format!("{who} {}{target}", verb(w)),
    };
    if !event.detail.is_empty()
        && !matches!(
            event.what,
            EventKind::ModeChanged | EventKind::ShareAdded | EventKind::ShareRemoved
        )
    {
        line.push_str(&format!(": {}", event.detail));
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::LOCAL_ACTOR;
    use chrono::Utc;
    use std::collections::BTreeSet;

    fn record(
        what: EventKind,
        outcome: Outcome,
        who: &str,
        share: &str,
        detail: &str,
    ) -> EventRecord {
        EventRecord {
            seq: 1,
            when: Utc::now(),
            what,
            outcome,
            share_id: if share.is_empty() {
                String::new()
            } else {
                "s1".into()
            },
            share_name: share.into(),
            peer_id: if who == LOCAL_ACTOR {
                LOCAL_ACTOR.into()
            } else {
                "p1".into()
            },
            peer_name: who.into(),
            detail: detail.into(),
        }
    }

    #[test]
    fn capability_tags_equal_allowed_set() {
        for mode in PermissionMode::ALL {
            let msg = describe_mode("f", mode);
            assert_eq!(msg.tags(), mode.allowed());
            assert_eq!(msg.capabilities.len(), mode.allowed().len());
            assert_eq!(msg.severity, Severity::for_mode(mode));
        }
    }

    #[test]
    fn read_mentions_copy_only() {
        let msg = describe_mode("report.pdf", PermissionMode::Read);
        assert_eq!(msg.severity, Severity::Info);
        let all = msg
            .capabilities
            .iter()
            .map(|c| c.text.as_str())
            .collect::<String>();
        assert!(all.contains("copy"));
        assert!(!all.contains("delete") && !all.contains("replace"));
    }

    #[test]
    fn full_warns_about_deletion() {
        let msg = describe_mode("report.pdf", PermissionMode::Full);
        assert_eq!(msg.severity, Severity::Danger);
        assert!(msg.capabilities.iter().any(|c| c.tag == Action::Delete
            && c.text.contains("delete")
            && c.text.contains("your machine")));
    }

    #[test]
    fn write_is_subset_of_full() {
        let w: BTreeSet<_> = describe_mode("f", PermissionMode::Write)
            .tags()
            .into_iter()
            .collect();
        let f: BTreeSet<_> = describe_mode("f", PermissionMode::Full)
            .tags()
            .into_iter()
            .collect();
        assert!(w.is_subset(&f) && w != f);
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            describe_mode("x", PermissionMode::Write),
            describe_mode("x", PermissionMode::Write)
        );
    }

    #[test]
    fn serialized_shape() {
        let v = serde_json::to_value(describe_mode("f", PermissionMode::Read)).unwrap();
        assert_eq!(v["severity"], "info");
        assert_eq!(v["capabilities"][0]["tag"], "list");
        assert_eq!(v["capabilities"][1]["tag"], "get");
        assert!(v["headline"].is_string());
    }

    #[test]
    fn event_lines() {
        let line = describe_event(&record(
            EventKind::Get,
            Outcome::Allowed,
            "bob",
            "report.pdf",
            "",
        ));
        assert!(line.contains("bob") && line.contains("report.pdf") && line.contains("copied"));
        assert!(line.contains("allowed"));

        let line = describe_event(&record(
            EventKind::Delete,
            Outcome::Denied,
            "eve",
            "report.pdf",
            "",
        ));
        assert!(line.starts_with("BLOCKED") && line.contains("denied") && line.contains("delete"));

        let line = describe_event(&record(
            EventKind::ModeChanged,
            Outcome::Info,
            LOCAL_ACTOR,
            "report.pdf",
            "mode read→full",
        ));
        assert!(line.contains("read") && line.contains("full") && line.contains("You"));

        let line = describe_event(&record(
            EventKind::PeerJoined,
            Outcome::Info,
            "carol",
            "",
            "",
        ));
        assert_eq!(line, "carol joined the network");
    }
}
