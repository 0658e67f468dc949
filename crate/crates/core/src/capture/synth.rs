//! Synthesis of Ethernet/IPv4/TCP frames for self-recorded sessions.
//!
//! Fuzzing a proprietary protocol at desk scale needs captures of known
//! traffic; this builder produces frame records equivalent to sniffing a
//! loopback conversation, with correct sequence numbers and IPv4 header
//! checksums so the output also opens in standard capture tools.

use std::net::SocketAddrV4;

use super::{Direction, PacketRecord};
use crate::clock::Nanos;

const CLIENT_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x01];
const SERVER_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x02];
const CLIENT_ISN: u32 = 0x0000_1000;
const SERVER_ISN: u32 = 0x0000_2000;

/// Builds the frames of one TCP session in capture order.
///
/// Timestamps advance by `step` (default 1 ms) per frame and stay
/// microsecond-aligned so classic pcap round-trips are exact.
pub struct FrameBuilder {
    client: SocketAddrV4,
    server: SocketAddrV4,
    now: Nanos,
    step: Nanos,
    client_seq: u32,
    server_seq: u32,
    ip_id: u16,
}

impl FrameBuilder {
    pub fn new(client: SocketAddrV4, server: SocketAddrV4, start: Nanos) -> Self {
        Self {
            client,
            server,
            now: start - start % 1_000, // microsecond alignment
            step: 1_000_000,
            client_seq: CLIENT_ISN,
            server_seq: SERVER_ISN,
            ip_id: 1,
        }
    }

    pub fn with_step(mut self, step: Nanos) -> Self {
        self.step = step - step % 1_000;
        self
    }

    fn tick(&mut self) -> Nanos {
        let t = self.now;
        self.now += self.step;
        t
    }

    pub fn syn(&mut self) -> PacketRecord {
        let r = self.frame(Direction::ClientToServer, self.client_seq, 0, 0x02, &[]);
        self.client_seq = self.client_seq.wrapping_add(1);
        r
    }

    pub fn syn_ack(&mut self) -> PacketRecord {
        let ack = self.client_seq;
        let r = self.frame(Direction::ServerToClient, self.server_seq, ack, 0x12, &[]);
        self.server_seq = self.server_seq.wrapping_add(1);
        r
    }

    pub fn ack(&mut self) -> PacketRecord {
        self.frame(Direction::ClientToServer, self.client_seq, self.server_seq, 0x10, &[])
    }

    /// One PSH+ACK data segment from the client.
    pub fn client_data(&mut self, payload: &[u8]) -> PacketRecord {
        let r = self.frame(
            Direction::ClientToServer,
            self.client_seq,
            self.server_seq,
            0x18,
            payload,
        );
        self.client_seq = self.client_seq.wrapping_add(payload.len() as u32);
        r
    }

    /// One PSH+ACK data segment from the server.
    pub fn server_data(&mut self, payload: &[u8]) -> PacketRecord {
        let r = self.frame(
            Direction::ServerToClient,
            self.server_seq,
            self.client_seq,
            0x18,
            payload,
        );
        self.server_seq = self.server_seq.wrapping_add(payload.len() as u32);
        r
    }

    pub fn data(&mut self, direction: Direction, payload: &[u8]) -> PacketRecord {
        match direction {
            Direction::ClientToServer => self.client_data(payload),
            Direction::ServerToClient => self.server_data(payload),
        }
    }

    fn frame(
        &mut self,
        direction: Direction,
        seq: u32,
        ack: u32,
        flags: u8,
        payload: &[u8],
    ) -> PacketRecord {
        let (src, dst, src_mac, dst_mac) = match direction {
            Direction::ClientToServer => (self.client, self.server, CLIENT_MAC, SERVER_MAC),
            Direction::ServerToClient => (self.server, self.client, SERVER_MAC, CLIENT_MAC),
        };
        let mut frame = Vec::with_capacity(54 + payload.len());
        frame.extend_from_slice(&dst_mac);
        frame.extend_from_slice(&src_mac);
        frame.extend_from_slice(&0x0800u16.to_be_bytes());

        let total_len = (20 + 20 + payload.len()) as u16;
        let ip_start = frame.len();
        frame.push(0x45);
        frame.push(0);
        frame.extend_from_slice(&total_len.to_be_bytes());
        frame.extend_from_slice(&self.ip_id.to_be_bytes());
        self.ip_id = self.ip_id.wrapping_add(1);
        frame.extend_from_slice(&0x4000u16.to_be_bytes()); // don't fragment
        frame.push(64); // ttl
        frame.push(6); // tcp
        frame.extend_from_slice(&[0, 0]); // checksum placeholder
        frame.extend_from_slice(&src.ip().octets());
        frame.extend_from_slice(&dst.ip().octets());
        let csum = ipv4_checksum(&frame[ip_start..ip_start + 20]);
        frame[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

        frame.extend_from_slice(&src.port().to_be_bytes());
        frame.extend_from_slice(&dst.port().to_be_bytes());
        frame.extend_from_slice(&seq.to_be_bytes());
        frame.extend_from_slice(&ack.to_be_bytes());
        frame.push(0x50); // data offset 5 words
        frame.push(flags);
        frame.extend_from_slice(&8_192u16.to_be_bytes()); // window
        frame.extend_from_slice(&[0, 0]); // tcp checksum left zero
        frame.extend_from_slice(&[0, 0]); // urgent pointer
        frame.extend_from_slice(payload);

        PacketRecord::ethernet(self.tick(), frame).expect("synthesized frame is well-formed")
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        let word = u16::from_be_bytes([chunk[0], *chunk.get(1).unwrap_or(&0)]);
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

/// Synthesize a complete session capture: TCP handshake followed by one
/// data segment per exchange, in order.
pub fn synthesize_session(
    client: SocketAddrV4,
    server: SocketAddrV4,
    start: Nanos,
    exchanges: &[(Direction, Vec<u8>)],
) -> Vec<PacketRecord> {
    let mut b = FrameBuilder::new(client, server, start);
    let mut records = vec![b.syn(), b.syn_ack(), b.ack()];
    for (direction, payload) in exchanges {
        records.push(b.data(*direction, payload));
    }
    records
}
