//! Daemon-to-daemon protocol.
//!
//! A frame is a 4-byte big-endian body length, one type byte, then the UTF-8
//! JSON body. `GetResp` and `PutReq` are followed by exactly `size_bytes` of
//! raw, unframed file content. A connection carries one request:
//!
//! ```text
//! client                      server
//!   Hello  ───────────────────▶
//!          ◀─────────────────── Hello
//!   request [+ content] ──────▶
//!          ◀─────────────────── response [+ content]
//! ```

pub mod client;
pub mod server;

use std::io;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::mode::PermissionMode;
use crate::registry::ShareEntry;

/// Largest JSON body accepted or produced. File content is not bounded.
pub const MAX_BODY: usize = 1 << 20;
pub const HEADER_LEN: usize = 5;

pub mod type_code {
    pub const HELLO: u8 = 0x00;
    pub const LIST_REQ: u8 = 0x01;
    pub const GET_REQ: u8 = 0x02;
    pub const PUT_REQ: u8 = 0x03;
    pub const DELETE_REQ: u8 = 0x04;
    pub const LIST_RESP: u8 = 0x81;
    pub const GET_RESP: u8 = 0x82;
    pub const PUT_RESP: u8 = 0x83;
    pub const DELETE_RESP: u8 = 0x84;
    pub const ERR_RESP: u8 = 0xFF;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub peer_id: String,
    pub display_name: String,
    pub proto: String,
}

/// What peers are told about a share. The local path stays private.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicShare {
    pub share_id: String,
    pub display_name: String,
    pub mode: PermissionMode,
    pub size_bytes: u64,
    pub modified_at: DateTime<Utc>,
}

impl From<&ShareEntry> for PublicShare {
    fn from(e: &ShareEntry) -> Self {
        Self {
            share_id: e.share_id.clone(),
            display_name: e.display_name.clone(),
            mode: e.mode,
            size_bytes: e.size_bytes,
            modified_at: e.modified_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Denied,
    UnknownShare,
    Malformed,
    IoError,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Denied => "denied",
            Self::UnknownShare => "unknown_share",
            Self::Malformed => "malformed",
            Self::IoError => "io_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Hello(Hello),
    ListReq,
    ListResp { entries: Vec<PublicShare> },
    GetReq { share_id: String },
    GetResp { size_bytes: u64 },
    PutReq { share_id: String, size_bytes: u64 },
    PutResp,
    DeleteReq { share_id: String },
    DeleteResp,
    ErrResp { code: ErrorCode, message: String },
}

#[derive(Serialize, Deserialize)]
struct Empty {}

#[derive(Serialize, Deserialize)]
struct ShareRef {
    share_id: String,
}

#[derive(Serialize, Deserialize)]
struct Sized {
    size_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Upload {
    share_id: String,
    size_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Listing {
    entries: Vec<PublicShare>,
}

#[derive(Serialize, Deserialize)]
struct Failure {
    code: ErrorCode,
    message: String,
}

impl WireMessage {
    pub fn type_code(&self) -> u8 {
        use type_code::*;
        match self {
            Self::Hello(_) => HELLO,
            Self::ListReq => LIST_REQ,
            Self::ListResp { .. } => LIST_RESP,
            Self::GetReq { .. } => GET_REQ,
            Self::GetResp { .. } => GET_RESP,
            Self::PutReq { .. } => PUT_REQ,
            Self::PutResp => PUT_RESP,
            Self::DeleteReq { .. } => DELETE_REQ,
            Self::DeleteResp => DELETE_RESP,
            Self::ErrResp { .. } => ERR_RESP,
        }
    }

    /// Raw content bytes that follow this frame on the stream.
    pub fn trailing_content(&self) -> u64 {
        match self {
            Self::GetResp { size_bytes } | Self::PutReq { size_bytes, .. } => *size_bytes,
            _ => 0,
        }
    }

    pub fn err(code: ErrorCode, message: impl Into<String>) -> Self {
        Self::ErrResp {
            code,
            message: message.into(),
        }
    }

    fn body(&self) -> serde_json::Result<Vec<u8>> {
        match self {
            Self::Hello(h) => serde_json::to_vec(h),
            Self::ListReq | Self::PutResp | Self::DeleteResp => serde_json::to_vec(&Empty {}),
            Self::ListResp { entries } => serde_json::to_vec(&Listing {
                entries: entries.clone(),
            }),
            Self::GetReq { share_id } | Self::DeleteReq { share_id } => {
                serde_json::to_vec(&ShareRef {
                    share_id: share_id.clone(),
                })
            }
            Self::GetResp { size_bytes } => serde_json::to_vec(&Sized {
                size_bytes: *size_bytes,
            }),
            Self::PutReq {
                share_id,
                size_bytes,
            } => serde_json::to_vec(&Upload {
                share_id: share_id.clone(),
                size_bytes: *size_bytes,
            }),
            Self::ErrResp { code, message } => serde_json::to_vec(&Failure {
                code: *code,
                message: message.clone(),
            }),
        }
    }

    fn from_body(code: u8, body: &[u8]) -> Result<Self, FrameError> {
        use type_code::*;
        fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, FrameError> {
            serde_json::from_slice(body).map_err(|e| FrameError::BadBody(e.to_string()))
        }
        Ok(match code {
            HELLO => Self::Hello(parse(body)?),
            LIST_REQ => parse::<Empty>(body).map(|_| Self::ListReq)?,
            LIST_RESP => Self::ListResp {
                entries: parse::<Listing>(body)?.entries,
            },
            GET_REQ => Self::GetReq {
                share_id: parse::<ShareRef>(body)?.share_id,
            },
            GET_RESP => Self::GetResp {
                size_bytes: parse::<Sized>(body)?.size_bytes,
            },
            PUT_REQ => {
                let u: Upload = parse(body)?;
                Self::PutReq {
                    share_id: u.share_id,
                    size_bytes: u.size_bytes,
                }
            }
            PUT_RESP => parse::<Empty>(body).map(|_| Self::PutResp)?,
            DELETE_REQ => Self::DeleteReq {
                share_id: parse::<ShareRef>(body)?.share_id,
            },
            DELETE_RESP => parse::<Empty>(body).map(|_| Self::DeleteResp)?,
            ERR_RESP => {
                let f: Failure = parse(body)?;
                Self::ErrResp {
                    code: f.code,
                    message: f.message,
                }
            }
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame body of {0} bytes exceeds the {MAX_BODY} byte limit")]
    Oversize(usize),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("invalid frame body: {0}")]
    BadBody(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FrameError {
    /// Errors caused by the bytes themselves rather than the transport.
    pub fn is_malformed(&self) -> bool {
        !matches!(self, Self::Io(_))
    }
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, FrameError> {
    let body = msg.body().map_err(|e| FrameError::BadBody(e.to_string()))?;
    if body.len() > MAX_BODY {
        return Err(FrameError::Oversize(body.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.push(msg.type_code());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes one frame from the front of `buf`, returning it and the number of
/// bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(WireMessage, usize), FrameError> {
    if buf.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_BODY {
        return Err(FrameError::Oversize(len));
    }
    let end = HEADER_LEN + len;
    if buf.len() < end {
        return Err(FrameError::Truncated);
    }
    let msg = WireMessage::from_body(buf[4], &buf[HEADER_LEN..end])?;
    Ok((msg, end))
}

fn eof_as_truncated(e: io::Error) -> FrameError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FrameError::Truncated
    } else {
        FrameError::Io(e)
    }
}

pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<WireMessage, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).await.map_err(eof_as_truncated)?;
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
    if len > MAX_BODY {
        return Err(FrameError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await.map_err(eof_as_truncated)?;
    WireMessage::from_body(header[4], &body)
}

pub async fn write_frame<W: AsyncWrite + Unpin>(
    w: &mut W,
    msg: &WireMessage,
) -> Result<(), FrameError> {
    let bytes = encode_frame(msg)?;
    w.write_all(&bytes).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_req_layout() {
        let f = encode_frame(&WireMessage::ListReq).unwrap();
        assert_eq!(f, [0, 0, 0, 2, 0x01, b'{', b'}']);
    }

    #[test]
    fn get_req_roundtrip() {
        let m = WireMessage::GetReq {
            share_id: "abc".into(),
        };
        let f = encode_frame(&m).unwrap();
        assert_eq!(f[4], 0x02);
        assert_eq!(&f[5..], br#"{"share_id":"abc"}"#);
        assert_eq!(decode_frame(&f).unwrap(), (m, f.len()));
    }

    #[test]
    fn type_codes_bit_exact() {
        let cases = [
            (
                WireMessage::Hello(Hello {
                    peer_id: "p".into(),
                    display_name: "n".into(),
                    proto: "x".into(),
                }),
                0x00,
            ),
            (WireMessage::ListReq, 0x01),
            (WireMessage::ListResp { entries: vec![] }, 0x81),
            (
                WireMessage::GetReq {
                    share_id: "s".into(),
                },
                0x02,
            ),
            (WireMessage::GetResp { size_bytes: 1 }, 0x82),
            (
                WireMessage::PutReq {
                    share_id: "s".into(),
                    size_bytes: 1,
                },
                0x03,
            ),
            (WireMessage::PutResp, 0x83),
            (
                WireMessage::DeleteReq {
                    share_id: "s".into(),
                },
                0x04,
            ),
            (WireMessage::DeleteResp, 0x84),
            (WireMessage::err(ErrorCode::Denied, "no"), 0xFF),
        ];
        for (m, code) in cases {
            assert_eq!(encode_frame(&m).unwrap()[4], code, "{m:?}");
        }
    }

    #[test]
    fn err_resp_body() {
        let f = encode_frame(&WireMessage::err(ErrorCode::UnknownShare, "gone")).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&f[5..]).unwrap();
        assert_eq!(v["code"], "unknown_share");
        assert_eq!(v["message"], "gone");
    }

    #[test]
    fn oversize_body_rejected() {
        let m = WireMessage::err(ErrorCode::IoError, "x".repeat(2 << 20));
        assert!(matches!(encode_frame(&m), Err(FrameError::Oversize(_))));

        let mut f = vec![0u8; 8];
        f[..4].copy_from_slice(&((MAX_BODY as u32) + 1).to_be_bytes());
        assert!(matches!(decode_frame(&f), Err(FrameError::Oversize(_))));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode_frame(&[0, 0]), Err(FrameError::Truncated)));
        assert!(matches!(
            decode_frame(&[0, 0, 0, 2, 0xEE, b'{', b'}']),
            Err(FrameError::UnknownType(0xEE))
        ));
        assert!(matches!(
            decode_frame(&[0, 0, 0, 2, 0x02, b'{', b'}']),
            Err(FrameError::BadBody(_))
        ));
        assert!(matches!(
            decode_frame(&[0, 0, 0, 9, 0x01, b'{', b'}']),
            Err(FrameError::Truncated)
        ));
        assert!(matches!(
            decode_frame(&[0, 0, 0, 2, 0x01, 0xff, 0xfe]),
            Err(FrameError::BadBody(_))
        ));
    }

    #[tokio::test]
    async fn async_read_write() {
        let (mut a, mut b) = tokio::io::duplex(64);
        let m = WireMessage::PutReq {
            share_id: "s".into(),
            size_bytes: 3,
        };
        write_frame(&mut a, &m).await.unwrap();
        drop(a);
        assert_eq!(read_frame(&mut b).await.unwrap(), m);
        assert!(matches!(
            read_frame(&mut b).await,
            Err(FrameError::Truncated)
        ));
    }
}
