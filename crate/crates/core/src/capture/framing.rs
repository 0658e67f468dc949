//! Message framing within a session's byte streams.
//!
//! TCP gives no message boundaries. The default framing is one message per
//! payload-carrying segment, which is what [`super::reassemble`] already
//! produced. When a length field is known, [`segment_messages`] re-splits
//! each direction's stream exactly at the declared message lengths.

use serde::{Deserialize, Serialize};

use super::{CaptureError, Direction, Message, TcpSession};
use crate::clock::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Big,
    Little,
}

/// Location of an integer field holding the total message length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthFieldSpec {
    pub offset: usize,
    /// Field width in bytes: 1, 2 or 4.
    pub width: usize,
    pub endianness: Endianness,
}

impl LengthFieldSpec {
    /// Decode the declared total length from a message prefix, if the
    /// bytes cover the field.
    pub fn decode(&self, bytes: &[u8]) -> Option<usize> {
        let field = bytes.get(self.offset..self.offset + self.width)?;
        let mut value = 0usize;
        match self.endianness {
            Endianness::Big => {
                for b in field {
                    value = value << 8 | *b as usize;
                }
            }
            Endianness::Little => {
                for b in field.iter().rev() {
                    value = value << 8 | *b as usize;
                }
            }
        }
        Some(value)
    }

    /// Write a declared length value into a message in place. Values wider
    /// than the field are truncated to its low bytes.
    pub fn encode(&self, bytes: &mut [u8], value: u64) {
        let Some(field) = bytes.get_mut(self.offset..self.offset + self.width) else {
            return;
        };
        match self.endianness {
            Endianness::Big => {
                for (i, b) in field.iter_mut().enumerate() {
                    *b = (value >> (8 * (self.width - 1 - i))) as u8;
                }
            }
            Endianness::Little => {
                for (i, b) in field.iter_mut().enumerate() {
                    *b = (value >> (8 * i)) as u8;
                }
            }
        }
    }

    /// Smallest message length that still contains the whole field.
    pub fn min_message_len(&self) -> usize {
        self.offset + self.width
    }
}

/// Re-frame a session's messages.
///
/// Without a spec this normalizes indices and keeps the per-segment
/// boundaries. With a spec, each direction's stream is partitioned exactly
/// at the declared lengths; a declared length that overruns the remaining
/// stream (or cannot be decoded at the stream end) is a
/// [`CaptureError::FramingViolation`].
pub fn segment_messages(
    session: &TcpSession,
    framing: Option<&LengthFieldSpec>,
) -> Result<TcpSession, CaptureError> {
    let Some(spec) = framing else {
        let mut out = session.clone();
        for (i, m) in out.messages.iter_mut().enumerate() {
            m.index = i;
        }
        return Ok(out);
    };

    let mut pending: Vec<(Nanos, usize, Direction, Vec<u8>)> = Vec::new();
    for direction in [Direction::ClientToServer, Direction::ServerToClient] {
        // Byte offsets of each original message let re-split messages keep
        // the timestamp of the segment their first byte arrived in.
        let mut spans: Vec<(usize, Nanos, usize)> = Vec::new();
        let mut stream = Vec::new();
        for m in session.messages_in(direction) {
            spans.push((stream.len(), m.timestamp, m.index));
            stream.extend_from_slice(&m.payload);
        }

        let mut pos = 0usize;
        while pos < stream.len() {
            let declared = spec.decode(&stream[pos..]).ok_or(CaptureError::FramingViolation {
                direction,
                offset: pos,
                declared: spec.min_message_len(),
                remaining: stream.len() - pos,
            })?;
            if declared < spec.min_message_len() || declared > stream.len() - pos {
                return Err(CaptureError::FramingViolation {
                    direction,
                    offset: pos,
                    declared,
                    remaining: stream.len() - pos,
                });
            }
            let (ts, order) = spans
                .iter()
                .rev()
                .find(|(start, _, _)| *start <= pos)
                .map(|(_, ts, idx)| (*ts, *idx))
                .expect("non-empty stream has a covering span");
            pending.push((ts, order, direction, stream[pos..pos + declared].to_vec()));
            pos += declared;
        }
    }

    pending.sort_by_key(|(ts, order, _, _)| (*ts, *order));
    let messages = pending
        .into_iter()
        .enumerate()
        .map(|(index, (timestamp, _, direction, payload))| Message {
            direction,
            timestamp,
            payload,
            index,
        })
        .collect();

    Ok(TcpSession {
        session_id: session.session_id.clone(),
        client: session.client,
        server: session.server,
        syn_observed: session.syn_observed,
        messages,
    })
}
