//! Serving side: one request per connection, every request enforced through
//! [`authorize`] and recorded as exactly one event.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use tokio::fs::File;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use super::{read_frame, write_frame, ErrorCode, FrameError, Hello, PublicShare, WireMessage};
use crate::discovery::{LocalIdentity, PROTO};
use crate::events::{EventKind, EventLog, NewEvent, ALL_SHARES};
use crate::fsutil;
use crate::mode::{authorize, Action, Decision};
use crate::registry::{RegistryError, ShareRegistry};

pub struct WireServer {
    pub identity: LocalIdentity,
    pub registry: Arc<ShareRegistry>,
    pub events: EventLog,
}

/// The requester as it introduced itself. Self-asserted; not authenticated.
#[derive(Debug, Clone)]
pub struct Requester {
    pub peer_id: String,
    pub display_name: String,
}

impl WireServer {
    pub async fn serve(
        self: Arc<Self>,
        listener: TcpListener,
        mut shutdown: watch::Receiver<bool>,
    ) {
        loop {
            tokio::select! {
                accepted = listener.accept() => match accepted {
                    Ok((stream, addr)) => {
                        let this = Arc::clone(&self);
                        tokio::spawn(async move { this.handle_connection(stream, addr).await });
                    }
                    Err(e) => tracing::warn!(error = %e, "accept failed"),
                },
                changed = shutdown.changed() => {
                    if changed.is_err() || *shutdown.borrow() {
                        break;
                    }
                }
            }
        }
    }

    pub async fn handle_connection(&self, mut stream: TcpStream, addr: SocketAddr) {
        let _ = stream.set_nodelay(true);
        self.handle_stream(&mut stream, addr).await;
        let _ = stream.shutdown().await;
    }

    /// Runs one session over any byte stream.
    pub async fn handle_stream<S>(&self, stream: &mut S, addr: SocketAddr)
    where
        S: AsyncRead + AsyncWrite + Unpin,
    {
        let requester = match read_frame(stream).await {
            Ok(WireMessage::Hello(h)) if h.proto == PROTO => Requester {
                peer_id: h.peer_id,
                display_name: h.display_name,
            },
            Ok(WireMessage::Hello(h)) => {
                return self
                    .reject(
                        stream,
                        None,
                        addr,
                        format!("unsupported protocol {:?}", h.proto),
                    )
                    .await;
            }
            Ok(other) => {
                return self
                    .reject(
                        stream,
                        None,
                        addr,
                        format!("expected hello, got type 0x{:02x}", other.type_code()),
                    )
                    .await;
            }
            Err(e) => return self.reject(stream, None, addr, e.to_string()).await,
        };

        let hello = WireMessage::Hello(Hello {
            peer_id: self.identity.peer_id.clone(),
            display_name: self.identity.display_name.clone(),
            proto: PROTO.to_owned(),
        });
        if write_frame(stream, &hello).await.is_err() {
            return;
        }

        let request = match read_frame(stream).await {
            Ok(r) => r,
            Err(e) => {
                return self
                    .reject(stream, Some(&requester), addr, e.to_string())
                    .await
            }
        };
        if let Err(e) = self.serve_request(request, &requester, addr, stream).await {
            tracing::debug!(%addr, error = %e, "connection ended with error");
        }
        let _ = stream.flush().await;
    }

    async fn reject<S>(
        &self,
        stream: &mut S,
        who: Option<&Requester>,
        addr: SocketAddr,
        reason: String,
    ) where
        S: AsyncWrite + Unpin,
    {
        let (id, name) = match who {
            Some(r) => (r.peer_id.clone(), r.display_name.clone()),
            None => ("unknown".to_owned(), addr.to_string()),
        };
        self.events.record(NewEvent::malformed(
            &id,
            &name,
            format!("{reason} (from {addr})"),
        ));
        let _ = write_frame(stream, &WireMessage::err(ErrorCode::Malformed, reason)).await;
    }

    fn access_event(
        &self,
        what: EventKind,
        allowed: bool,
        who: &Requester,
        share_id: &str,
        share_name: &str,
        detail: impl Into<String>,
    ) {
        self.events.record(NewEvent::access(
            what,
            allowed,
            &who.peer_id,
            &who.display_name,
            share_id,
            share_name,
            detail,
        ));
    }

    /// Dispatches a single request and writes its response.
    pub async fn serve_request<S>(
        &self,
        request: WireMessage,
        who: &Requester,
        addr: SocketAddr,
        stream: &mut S,
    ) -> Result<(), FrameError>
    where
        S: AsyncRead + AsyncWrite + Unpin,
    {
        match request {
            WireMessage::ListReq => {
                let entries: Vec<PublicShare> = self
                    .registry
                    .list_shares()
                    .iter()
                    .map(PublicShare::from)
                    .collect();
                self.access_event(
                    EventKind::List,
                    true,
                    who,
                    ALL_SHARES,
                    ALL_SHARES,
                    format!("{} shares listed", entries.len()),
                );
                write_frame(stream, &WireMessage::ListResp { entries }).await
            }
            WireMessage::GetReq { share_id } => self.serve_get(&share_id, who, stream).await,
            WireMessage::PutReq {
                share_id,
                size_bytes,
            } => self.serve_put(&share_id, size_bytes, who, stream).await,
            WireMessage::DeleteReq { share_id } => self.serve_delete(&share_id, who, stream).await,
            other => {
                let reason = format!("type 0x{:02x} is not a request", other.type_code());
                // Content that would follow a misplaced GetResp is left unread;
                // the connection is closed right after.
                self.reject(stream, Some(who), addr, reason).await;
                Ok(())
            }
        }
    }

    async fn serve_get<S>(
        &self,
        share_id: &str,
        who: &Requester,
        stream: &mut S,
    ) -> Result<(), FrameError>
    where
        S: AsyncWrite + Unpin,
    {
        let Some(entry) = self.registry.get(share_id) else {
            self.access_event(EventKind::Get, false, who, share_id, "", "unknown share");
            return write_frame(
                stream,
                &WireMessage::err(ErrorCode::UnknownShare, "no such share"),
            )
            .await;
        };
        if authorize(Action::Get, entry.mode) == Decision::Deny {
            self.access_event(
                EventKind::Get,
                false,
                who,
                share_id,
                &entry.display_name,
                format!("mode {}", entry.mode),
            );
            return write_frame(
                stream,
                &WireMessage::err(ErrorCode::Denied, "copying is not permitted"),
            )
            .await;
        }
        // The open handle pins the current content even if a Put renames over it.
        let opened = async {
            let f = File::open(&entry.path).await?;
            let len = f.metadata().await?.len();
            Ok::<_, std::io::Error>((f, len))
        }
        .await;
        let (file, len) = match opened {
            Ok(v) => v,
            Err(e) => {
                self.access_event(
                    EventKind::Get,
                    true,
                    who,
                    share_id,
                    &entry.display_name,
                    format!("io error: {e}"),
                );
                return write_frame(stream, &WireMessage::err(ErrorCode::IoError, e.to_string()))
                    .await;
            }
        };
        self.access_event(
            EventKind::Get,
            true,
            who,
            share_id,
            &entry.display_name,
            format!("{len} bytes"),
        );
        write_frame(stream, &WireMessage::GetResp { size_bytes: len }).await?;
        let sent = tokio::io::copy(&mut file.take(len), stream).await?;
        if sent != len {
            // File shrank underneath us; closing short tells the client.
            return Err(FrameError::Truncated);
        }
        Ok(())
    }

    async fn serve_put<S>(
        &self,
        share_id: &str,
        size: u64,
        who: &Requester,
        stream: &mut S,
    ) -> Result<(), FrameError>
    where
        S: AsyncRead + AsyncWrite + Unpin,
    {
        let Some(entry) = self.registry.get(share_id) else {
            drain(stream, size).await?;
            self.access_event(EventKind::Put, false, who, share_id, "", "unknown share");
            return write_frame(
                stream,
                &WireMessage::err(ErrorCode::UnknownShare, "no such share"),
            )
            .await;
        };
        if authorize(Action::Put, entry.mode) == Decision::Deny {
            drain(stream, size).await?;
            self.access_event(
                EventKind::Put,
                false,
                who,
                share_id,
                &entry.display_name,
                format!("mode {}", entry.mode),
            );
            return write_frame(
                stream,
                &WireMessage::err(ErrorCode::Denied, "replacing content is not permitted"),
            )
            .await;
        }

        let staged = fsutil::temp_path_for(&entry.path);
        match receive_into(stream, &staged, size).await {
            Ok(()) => {}
            Err(ReceiveError::Stream(e)) => {
                let _ = tokio::fs::remove_file(&staged).await;
                self.events.record(NewEvent::malformed(
                    &who.peer_id,
                    &who.display_name,
                    format!("incomplete upload to {}: {e}", entry.display_name),
                ));
                return Err(e);
            }
            Err(ReceiveError::Local(e)) => {
                let _ = tokio::fs::remove_file(&staged).await;
                self.access_event(
                    EventKind::Put,
                    true,
                    who,
                    share_id,
                    &entry.display_name,
                    format!("io error: {e}"),
                );
                return write_frame(stream, &WireMessage::err(ErrorCode::IoError, e.to_string()))
                    .await;
            }
        }

        match self.registry.replace_content(share_id, &staged) {
            Ok(updated) => {
                self.access_event(
                    EventKind::Put,
                    true,
                    who,
                    share_id,
                    &updated.display_name,
                    format!("{size} bytes written"),
                );
                write_frame(stream, &WireMessage::PutResp).await
            }
            Err(e) => {
                let _ = tokio::fs::remove_file(&staged).await;
                let (allowed, code) = match e {
                    RegistryError::UnknownShare(_) => (false, ErrorCode::UnknownShare),
                    _ => (true, ErrorCode::IoError),
                };
                self.access_event(
                    EventKind::Put,
                    allowed,
                    who,
                    share_id,
                    &entry.display_name,
                    e.to_string(),
                );
                write_frame(stream, &WireMessage::err(code, e.to_string())).await
            }
        }
    }

    async fn serve_delete<S>(
        &self,
        share_id: &str,
        who: &Requester,
        stream: &mut S,
    ) -> Result<(), FrameError>
    where
        S: AsyncWrite + Unpin,
    {
        let Some(entry) = self.registry.get(share_id) else {
            self.access_event(EventKind::Delete, false, who, share_id, "", "unknown share");
            return write_frame(
                stream,
                &WireMessage::err(ErrorCode::UnknownShare, "no such share"),
            )
            .await;
        };
        if authorize(Action::Delete, entry.mode) == Decision::Deny {
            self.access_event(
                EventKind::Delete,
                false,
                who,
                share_id,
                &entry.display_name,
                format!("mode {}", entry.mode),
            );
            return write_frame(
                stream,
                &WireMessage::err(ErrorCode::Denied, "deleting is not permitted"),
            )
            .await;
        }
        match self.registry.delete_content(share_id) {
            Ok(removed) => {
                self.access_event(
                    EventKind::Delete,
                    true,
                    who,
                    share_id,
                    &removed.display_name,
                    "file deleted",
                );
                write_frame(stream, &WireMessage::DeleteResp).await
            }
            Err(RegistryError::UnknownShare(_)) => {
                self.access_event(
                    EventKind::Delete,
                    false,
                    who,
                    share_id,
                    &entry.display_name,
                    "unknown share",
                );
                write_frame(
                    stream,
                    &WireMessage::err(ErrorCode::UnknownShare, "no such share"),
                )
                .await
            }
            Err(e) => {
                self.access_event(
                    EventKind::Delete,
                    true,
                    who,
                    share_id,
                    &entry.display_name,
                    format!("io error: {e}"),
                );
                write_frame(stream, &WireMessage::err(ErrorCode::IoError, e.to_string())).await
            }
        }
    }
}

async fn drain<S: AsyncRead + Unpin>(stream: &mut S, size: u64) -> Result<(), FrameError> {
    let n = tokio::io::copy(&mut stream.take(size), &mut tokio::io::sink()).await?;
    if n != size {
        return Err(FrameError::Truncated);
    }
    Ok(())
}

enum ReceiveError {
    Stream(FrameError),
    Local(std::io::Error),
}

async fn receive_into<S: AsyncRead + Unpin>(
    stream: &mut S,
    staged: &Path,
    size: u64,
) -> Result<(), ReceiveError> {
    let mut out = match File::create(staged).await {
        Ok(f) => f,
        Err(e) => {
            // Still consume the content so the response frame lines up.
            drain(stream, size).await.map_err(ReceiveError::Stream)?;
            return Err(ReceiveError::Local(e));
        }
    };
    let mut limited = stream.take(size);
    let mut buf = vec![0u8; 64 * 1024];
    let mut got = 0u64;
    let mut write_error = None;
    loop {
        let n = limited
            .read(&mut buf)
            .await
            .map_err(|e| ReceiveError::Stream(e.into()))?;
        if n == 0 {
            break;
        }
        got += n as u64;
        if write_error.is_none() {
            if let Err(e) = out.write_all(&buf[..n]).await {
                write_error = Some(e);
            }
        }
    }
    if got != size {
        return Err(ReceiveError::Stream(FrameError::Truncated));
    }
    if let Some(e) = write_error {
        return Err(ReceiveError::Local(e));
    }
    out.sync_all().await.map_err(ReceiveError::Local)?;
    Ok(())
}
