//! Generators for wire messages.

use chrono::{DateTime, Utc};
use proptest::prelude::*;

use peershare::wire::{ErrorCode, Hello, PublicShare, WireMessage};
use peershare::PermissionMode;

pub fn mode() -> impl Strategy<Value = PermissionMode> {
    prop_oneof![
        Just(PermissionMode::Read),
        Just(PermissionMode::Write),
        Just(PermissionMode::Full)
    ]
}

pub fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
    (0i64..4_000_000_000, 0u32..1_000_000_000)
        .prop_map(|(s, n)| DateTime::from_timestamp(s, n).unwrap())
}

pub fn public_share() -> impl Strategy<Value = PublicShare> {
    ("[0-9a-f]{32}", ".{0,40}", mode(), any::<u64>(), timestamp()).prop_map(
        |(share_id, display_name, mode, size_bytes, modified_at)| PublicShare {
            share_id,
            display_name,
            mode,
            size_bytes,
            modified_at,
        },
    )
}

pub fn message() -> impl Strategy<Value = WireMessage> {
    let code = prop_oneof![
        Just(ErrorCode::Denied),
        Just(ErrorCode::UnknownShare),
        Just(ErrorCode::Malformed),
        Just(ErrorCode::IoError)
    ];
    prop_oneof![
        (".*", ".*", ".*").prop_map(|(peer_id, display_name, proto)| WireMessage::Hello(Hello {
            peer_id,
            display_name,
            proto
        })),
        Just(WireMessage::ListReq),
        prop::collection::vec(public_share(), 0..8)
            .prop_map(|entries| WireMessage::ListResp { entries }),
        ".*".prop_map(|share_id| WireMessage::GetReq { share_id }),
        any::<u64>().prop_map(|size_bytes| WireMessage::GetResp { size_bytes }),
        (".*", any::<u64>()).prop_map(|(share_id, size_bytes)| WireMessage::PutReq {
            share_id,
            size_bytes
        }),
        Just(WireMessage::PutResp),
        ".*".prop_map(|share_id| WireMessage::DeleteReq { share_id }),
        Just(WireMessage::DeleteResp),
        (code, ".*").prop_map(|(code, message)| WireMessage::ErrResp { code, message }),
    ]
}
