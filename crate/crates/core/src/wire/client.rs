//! Requesting side of the protocol.

use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use tokio::fs::File;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use super::{read_frame, write_frame, ErrorCode, FrameError, Hello, PublicShare, WireMessage};
use crate::discovery::{LocalIdentity, PROTO};
use crate::fsutil;
use crate::mode::Action;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("cannot reach peer: {0}")]
    ConnectFailed(io::Error),
    #[error("peer denied the request: {0}")]
    Denied(String),
    #[error("peer has no such share: {0}")]
    UnknownShare(String),
    #[error("protocol violation: {0}")]
    Malformed(String),
    #[error("peer reported an I/O error: {0}")]
    RemoteIo(String),
    #[error("local file error: {0}")]
    Local(io::Error),
    #[error("{0} needs a local path")]
    MissingPath(Action),
}

impl RemoteError {
    /// The protocol error code this maps to, as carried in API responses.
    pub fn code(&self) -> &'static str {
        match self {
            Self::ConnectFailed(_) => "connect_failed",
            Self::Denied(_) => ErrorCode::Denied.as_str(),
            Self::UnknownShare(_) => ErrorCode::UnknownShare.as_str(),
            Self::Malformed(_) => ErrorCode::Malformed.as_str(),
            Self::RemoteIo(_) | Self::Local(_) => ErrorCode::IoError.as_str(),
            Self::MissingPath(_) => "malformed",
        }
    }

    fn from_err_resp(code: ErrorCode, message: String) -> Self {
        match code {
            ErrorCode::Denied => Self::Denied(message),
            ErrorCode::UnknownShare => Self::UnknownShare(message),
            ErrorCode::Malformed => Self::Malformed(message),
            ErrorCode::IoError => Self::RemoteIo(message),
        }
    }
}

impl From<FrameError> for RemoteError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Io(e) => Self::Malformed(format!("connection lost: {e}")),
            other => Self::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteReply {
    Listing(Vec<PublicShare>),
    Fetched { bytes: u64 },
    Replaced { bytes: u64 },
    Deleted,
}

/// Performs `action` on a peer's share. `local_path` is the destination for
/// `Get` and the source for `Put`; it is ignored otherwise.
pub async fn perform_remote(
    peer: SocketAddr,
    me: &LocalIdentity,
    action: Action,
    share_id: &str,
    local_path: Option<&Path>,
) -> Result<RemoteReply, RemoteError> {
    // Validate local inputs before touching the network.
    let path = || local_path.ok_or(RemoteError::MissingPath(action));
    let upload = match action {
        Action::Put => {
            let p = path()?;
            let f = File::open(p).await.map_err(RemoteError::Local)?;
            let len = f.metadata().await.map_err(RemoteError::Local)?.len();
            Some((f, len))
        }
        Action::Get => {
            path()?;
            None
        }
        _ => None,
    };

    let mut stream = connect(peer, me).await?;
    match action {
        Action::List => {
            write_frame(&mut stream, &WireMessage::ListReq).await?;
            match read_frame(&mut stream).await? {
                WireMessage::ListResp { entries } => Ok(RemoteReply::Listing(entries)),
                other => Err(unexpected(other)),
            }
        }
        Action::Get => {
            let dest = path()?;
            write_frame(
                &mut stream,
                &WireMessage::GetReq {
                    share_id: share_id.to_owned(),
                },
            )
            .await?;
            match read_frame(&mut stream).await? {
                WireMessage::GetResp { size_bytes } => {
                    receive_to(&mut stream, dest, size_bytes).await?;
                    Ok(RemoteReply::Fetched { bytes: size_bytes })
                }
                other => Err(unexpected(other)),
            }
        }
        Action::Put => {
            let (file, len) = upload.expect("opened above");
            write_frame(
                &mut stream,
                &WireMessage::PutReq {
                    share_id: share_id.to_owned(),
                    size_bytes: len,
                },
            )
            .await?;
            let sent = tokio::io::copy(&mut file.take(len), &mut stream)
                .await
                .map_err(|e| RemoteError::Malformed(format!("connection lost: {e}")))?;
            if sent != len {
                return Err(RemoteError::Local(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "source file shrank during upload",
                )));
            }
            stream
                .flush()
                .await
                .map_err(|e| RemoteError::Malformed(e.to_string()))?;
            match read_frame(&mut stream).await? {
                WireMessage::PutResp => Ok(RemoteReply::Replaced { bytes: len }),
                other => Err(unexpected(other)),
            }
        }
        Action::Delete => {
            write_frame(
                &mut stream,
                &WireMessage::DeleteReq {
                    share_id: share_id.to_owned(),
                },
            )
            .await?;
            match read_frame(&mut stream).await? {
                WireMessage::DeleteResp => Ok(RemoteReply::Deleted),
                other => Err(unexpected(other)),
            }
        }
    }
}

pub async fn list_remote(
    peer: SocketAddr,
    me: &LocalIdentity,
) -> Result<Vec<PublicShare>, RemoteError> {
    match perform_remote(peer, me, Action::List, "", None).await? {
        RemoteReply::Listing(entries) => Ok(entries),
        _ => unreachable!("list always yields a listing"),
    }
}

async fn connect(peer: SocketAddr, me: &LocalIdentity) -> Result<TcpStream, RemoteError> {
    let mut stream = tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(peer))
        .await
        .map_err(|_| {
            RemoteError::ConnectFailed(io::Error::new(io::ErrorKind::TimedOut, "connect timed out"))
        })?
        .map_err(RemoteError::ConnectFailed)?;
    let _ = stream.set_nodelay(true);
    write_frame(
        &mut stream,
        &WireMessage::Hello(Hello {
            peer_id: me.peer_id.clone(),
            display_name: me.display_name.clone(),
            proto: PROTO.to_owned(),
        }),
    )
    .await?;
    match read_frame(&mut stream).await? {
        WireMessage::Hello(h) if h.proto == PROTO => Ok(stream),
        other => Err(unexpected(other)),
    }
}

fn unexpected(msg: WireMessage) -> RemoteError {
    match msg {
        WireMessage::ErrResp { code, message } => RemoteError::from_err_resp(code, message),
        other => RemoteError::Malformed(format!(
            "unexpected message type 0x{:02x}",
            other.type_code()
        )),
    }
}

async fn receive_to(stream: &mut TcpStream, dest: &Path, size: u64) -> Result<(), RemoteError> {
    let staged = fsutil::temp_path_for(dest);
    let result = async {
        let mut out = File::create(&staged).await.map_err(RemoteError::Local)?;
        let got = tokio::io::copy(&mut stream.take(size), &mut out)
            .await
            .map_err(|e| RemoteError::Malformed(format!("connection lost: {e}")))?;
        if got != size {
            return Err(RemoteError::Malformed(format!(
                "expected {size} content bytes, got {got}"
            )));
        }
        out.sync_all().await.map_err(RemoteError::Local)?;
        tokio::fs::rename(&staged, dest)
            .await
            .map_err(RemoteError::Local)
    }
    .await;
    if result.is_err() {
        let _ = tokio::fs::remove_file(&staged).await;
    }
    result
}
