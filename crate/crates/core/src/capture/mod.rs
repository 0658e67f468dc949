//! Capture ingestion: parse pcap / pcap-ng files into ordered
//! application-layer messages per TCP session.
//!
//! The pipeline is `read_capture` (file bytes to raw frames), `reassemble`
//! (frames to per-session byte streams, one message per payload-carrying
//! segment), and `segment_messages` (optional re-split of the streams at
//! boundaries declared by a length field).

mod framing;
mod pcap;
mod reassembly;
pub mod synth;

pub use framing::{segment_messages, Endianness, LengthFieldSpec};
pub use pcap::{read_capture, write_capture};
pub use reassembly::{reassemble, ReassemblyStats};

use std::net::SocketAddrV4;

use thiserror::Error;

use crate::clock::Nanos;

/// Errors from capture parsing and message segmentation.
#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("malformed capture at byte offset {offset}: {reason}")]
    MalformedCapture { offset: usize, reason: String },
    #[error("unsupported link type {0}, only Ethernet captures are handled")]
    UnsupportedLinkType(u32),
    #[error(
        "framing violation in {direction:?} stream at offset {offset}: \
         declared length {declared} with {remaining} bytes remaining"
    )]
    FramingViolation {
        direction: Direction,
        offset: usize,
        declared: usize,
        remaining: usize,
    },
}

impl CaptureError {
    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        CaptureError::MalformedCapture {
            offset,
            reason: reason.into(),
        }
    }
}

/// Link layer of a captured frame. Only Ethernet is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
}

/// One captured frame with its capture timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    /// Nanoseconds since the Unix epoch.
    pub timestamp: Nanos,
    pub link_type: LinkType,
    /// Full frame starting at the Ethernet header (>= 14 bytes).
    pub data: Vec<u8>,
}

impl PacketRecord {
    /// Build an Ethernet record, enforcing the minimum frame length.
    pub fn ethernet(timestamp: Nanos, data: Vec<u8>) -> Result<Self, CaptureError> {
        if data.len() < 14 {
            return Err(CaptureError::malformed(
                0,
                format!("Ethernet frame of {} bytes is shorter than the 14-byte header", data.len()),
            ));
        }
        Ok(Self {
            timestamp,
            link_type: LinkType::Ethernet,
            data,
        })
    }
}

/// Who sent a message, relative to the session's client/server roles.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum Direction {
    #[serde(rename = "client-to-server")]
    ClientToServer,
    #[serde(rename = "server-to-client")]
    ServerToClient,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        }
    }
}

/// One application-layer message within a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub direction: Direction,
    /// Delivery timestamp: the instant the payload became contiguous with
    /// everything before it (equals the arrival time for in-order traffic).
    pub timestamp: Nanos,
    pub payload: Vec<u8>,
    /// Ordinal within the session, strictly increasing.
    pub index: usize,
}

/// An ordered TCP conversation between one client and one server.
#[derive(Debug, Clone)]
pub struct TcpSession {
    pub session_id: String,
    pub client: SocketAddrV4,
    pub server: SocketAddrV4,
    /// True when the client role was established by an observed SYN rather
    /// than the lower-port-is-server fallback.
    pub syn_observed: bool,
    pub messages: Vec<Message>,
}

impl TcpSession {
    /// Concatenated payload bytes flowing in `direction`, in message order.
    pub fn direction_stream(&self, direction: Direction) -> Vec<u8> {
        let mut out = Vec::new();
        for m in self.messages.iter().filter(|m| m.direction == direction) {
            out.extend_from_slice(&m.payload);
        }
        out
    }

    pub fn messages_in(&self, direction: Direction) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.direction == direction)
    }
}
