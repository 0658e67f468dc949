//! Fixed-shape alignment of the handshake prefix across sessions.

use super::InferenceError;
use crate::capture::{LengthFieldSpec, TcpSession};
use crate::model::{ByteMask, HandshakeStep, MaskByte};

/// Align the first `prefix_len` messages of every session position by
/// position.
///
/// Each step must have the same direction and length in every session,
/// otherwise the handshake is not fixed-shape and alignment fails. A
/// position is `Constant` iff all sessions carry the same byte there;
/// positions covered by a known framing length field are `LengthField`.
pub fn align_handshake(
    sessions: &[TcpSession],
    prefix_len: usize,
    framing: Option<&LengthFieldSpec>,
) -> Result<Vec<HandshakeStep>, InferenceError> {
    if sessions.len() < 2 {
        return Err(InferenceError::NotEnoughSessions { got: sessions.len() });
    }
    for s in sessions {
        if s.messages.len() < prefix_len {
            return Err(InferenceError::SessionTooShort {
                session: s.session_id.clone(),
                needed: prefix_len,
                got: s.messages.len(),
            });
        }
    }

    let mut steps = Vec::with_capacity(prefix_len);
    for k in 0..prefix_len {
        let reference = &sessions[0].messages[k];
        for s in &sessions[1..] {
            let m = &s.messages[k];
            if m.direction != reference.direction {
                return Err(InferenceError::StructureMismatch {
                    step: k,
                    detail: format!(
                        "direction {:?} in {} vs {:?} in {}",
                        m.direction, s.session_id, reference.direction, sessions[0].session_id
                    ),
                });
            }
            if m.payload.len() != reference.payload.len() {
                return Err(InferenceError::StructureMismatch {
                    step: k,
                    detail: format!(
                        "length {} in {} vs {} in {}",
                        m.payload.len(),
                        s.session_id,
                        reference.payload.len(),
                        sessions[0].session_id
                    ),
                });
            }
        }

        let len = reference.payload.len();
        let mut mask = Vec::with_capacity(len);
        for pos in 0..len {
            let uniform = sessions
                .iter()
                .all(|s| s.messages[k].payload[pos] == reference.payload[pos]);
            let in_length_field = framing
                .map(|f| pos >= f.offset && pos < f.offset + f.width)
                .unwrap_or(false);
            mask.push(if in_length_field {
                MaskByte::LengthField
            } else if uniform {
                MaskByte::Constant
            } else {
                MaskByte::Variable
            });
        }
        steps.push(HandshakeStep {
            direction: reference.direction,
            bytes: reference.payload.clone(),
            mask: ByteMask(mask),
        });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{Direction, Endianness, Message};
    use std::net::{Ipv4Addr, SocketAddrV4};

    fn session(id: &str, messages: Vec<(Direction, Vec<u8>)>) -> TcpSession {
        TcpSession {
            session_id: id.into(),
            client: SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 2), 40_000),
            server: SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 1), 1_962),
            syn_observed: true,
            messages: messages
                .into_iter()
                .enumerate()
                .map(|(index, (direction, payload))| Message {
                    direction,
                    timestamp: index as u64 * 1_000,
                    payload,
                    index,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_handshakes_are_all_constant() {
        let script = vec![
            (Direction::ClientToServer, vec![1, 2, 3]),
            (Direction::ServerToClient, vec![4, 5, 6, 7]),
            (Direction::ClientToServer, vec![8, 9]),
        ];
        let sessions = vec![session("a", script.clone()), session("b", script)];
        let steps = align_handshake(&sessions, 3, None).unwrap();
        assert_eq!(steps.len(), 3);
        for step in &steps {
            assert!(step.mask.0.iter().all(|m| *m == MaskByte::Constant));
        }
    }

    #[test]
    fn differing_bytes_become_variable_and_length_field_is_marked() {
        let a = session(
            "a",
            vec![
                (Direction::ClientToServer, vec![0x01, 0x00, 0x00, 0x04]),
                (Direction::ServerToClient, vec![0x81, 0x00, 0x00, 0x48]),
            ],
        );
        let b = session(
            "b",
            vec![
                (Direction::ClientToServer, vec![0x01, 0x00, 0x00, 0x04]),
                (Direction::ServerToClient, vec![0x81, 0x00, 0x00, 0x7C]),
            ],
        );
        let framing = LengthFieldSpec {
            offset: 1,
            width: 2,
            endianness: Endianness::Big,
        };
        let steps = align_handshake(&[a, b], 2, Some(&framing)).unwrap();
        assert_eq!(steps[0].mask.to_string(), "CLLC");
        assert_eq!(steps[1].mask.to_string(), "CLLV");
    }

    #[test]
    fn differing_step_length_is_a_structure_mismatch() {
        let a = session(
            "a",
            vec![
                (Direction::ClientToServer, vec![1]),
                (Direction::ServerToClient, vec![2, 2]),
            ],
        );
        let b = session(
            "b",
            vec![
                (Direction::ClientToServer, vec![1]),
                (Direction::ServerToClient, vec![2, 2, 2]),
            ],
        );
        match align_handshake(&[a, b], 2, None).unwrap_err() {
            InferenceError::StructureMismatch { step: 1, .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn short_session_is_rejected() {
        let a = session("a", vec![(Direction::ClientToServer, vec![1])]);
        let b = session("b", vec![(Direction::ClientToServer, vec![1])]);
        assert!(matches!(
            align_handshake(&[a, b], 2, None).unwrap_err(),
            InferenceError::SessionTooShort { .. }
        ));
    }

    #[test]
    fn single_session_is_rejected() {
        let a = session("a", vec![(Direction::ClientToServer, vec![1])]);
        assert!(matches!(
            align_handshake(&[a], 1, None).unwrap_err(),
            InferenceError::NotEnoughSessions { got: 1 }
        ));
    }
}
