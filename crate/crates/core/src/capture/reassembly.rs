//! Ethernet/IPv4/TCP parsing and per-session stream reassembly.
//!
//! Best effort: frames that do not parse as Ethernet + IPv4 + TCP are
//! counted and skipped, as are IP fragments. Payload bytes are
//! deduplicated by sequence number, out-of-order segments are delivered in
//! sequence order, and each surviving payload-carrying segment becomes one
//! default-framed [`Message`].

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddrV4};

use super::{Direction, Message, PacketRecord, TcpSession};
use crate::clock::Nanos;

const ETHERTYPE_IPV4: u16 = 0x0800;
const IPPROTO_TCP: u8 = 6;
const TCP_SYN: u8 = 0x02;
const TCP_ACK: u8 = 0x10;

/// Counters for frames that did not contribute payload.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ReassemblyStats {
    pub frames: usize,
    pub skipped_non_ip: usize,
    pub skipped_fragments: usize,
    pub skipped_malformed: usize,
    pub duplicate_segments: usize,
}

struct ParsedTcp {
    src: SocketAddrV4,
    dst: SocketAddrV4,
    seq: u32,
    flags: u8,
    payload_range: (usize, usize),
}

fn parse_frame(data: &[u8]) -> Result<Option<ParsedTcp>, Skip> {
    if data.len() < 14 {
        return Err(Skip::Malformed);
    }
    let ethertype = u16::from_be_bytes([data[12], data[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return Err(Skip::NonIp);
    }
    let ip = &data[14..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return Err(Skip::Malformed);
    }
    let ihl = (ip[0] & 0x0F) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(Skip::Malformed);
    }
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if total_len < ihl || ip.len() < total_len {
        return Err(Skip::Malformed);
    }
    let flags_frag = u16::from_be_bytes([ip[6], ip[7]]);
    let more_fragments = flags_frag & 0x2000 != 0;
    let frag_offset = flags_frag & 0x1FFF;
    if more_fragments || frag_offset != 0 {
        return Err(Skip::Fragment);
    }
    if ip[9] != IPPROTO_TCP {
        return Err(Skip::NonIp);
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let tcp = &ip[ihl..total_len];
    if tcp.len() < 20 {
        return Err(Skip::Malformed);
    }
    let data_offset = (tcp[12] >> 4) as usize * 4;
    if data_offset < 20 || tcp.len() < data_offset {
        return Err(Skip::Malformed);
    }
    let src = SocketAddrV4::new(src_ip, u16::from_be_bytes([tcp[0], tcp[1]]));
    let dst = SocketAddrV4::new(dst_ip, u16::from_be_bytes([tcp[2], tcp[3]]));
    let seq = u32::from_be_bytes([tcp[4], tcp[5], tcp[6], tcp[7]]);
    let flags = tcp[13];
    let payload_start = 14 + ihl + data_offset;
    let payload_end = 14 + total_len;
    Ok(Some(ParsedTcp {
        src,
        dst,
        seq,
        flags,
        payload_range: (payload_start, payload_end),
    }))
}

enum Skip {
    NonIp,
    Fragment,
    Malformed,
}

/// A raw segment kept per direction until linearization.
struct RawSegment {
    seq: u32,
    data: Vec<u8>,
    arrival: Nanos,
    arrival_order: usize,
}

#[derive(Default)]
struct DirectionBuffer {
    base_seq: Option<u32>,
    segments: Vec<RawSegment>,
}

struct Flow {
    a: SocketAddrV4,
    b: SocketAddrV4,
    /// Endpoint that sent a SYN without ACK, if any.
    syn_initiator: Option<SocketAddrV4>,
    // Buffers indexed by sender: 0 = from `a`, 1 = from `b`.
    buffers: [DirectionBuffer; 2],
}

/// Group frames into TCP sessions keyed by their address 4-tuple.
///
/// Client/server roles come from the SYN when one was captured; otherwise
/// the endpoint with the lower port (lower address on a tie) is taken as
/// the server. Returned sessions are ordered by first appearance.
pub fn reassemble(records: &[PacketRecord]) -> (Vec<TcpSession>, ReassemblyStats) {
    let mut stats = ReassemblyStats::default();
    let mut flows: HashMap<(SocketAddrV4, SocketAddrV4), Flow> = HashMap::new();
    let mut flow_order: Vec<(SocketAddrV4, SocketAddrV4)> = Vec::new();

    for (order, record) in records.iter().enumerate() {
        stats.frames += 1;
        let parsed = match parse_frame(&record.data) {
            Ok(Some(p)) => p,
            Ok(None) => continue,
            Err(Skip::NonIp) => {
                stats.skipped_non_ip += 1;
                continue;
            }
            Err(Skip::Fragment) => {
                stats.skipped_fragments += 1;
                continue;
            }
            Err(Skip::Malformed) => {
                stats.skipped_malformed += 1;
                continue;
            }
        };

        let key = canonical_key(parsed.src, parsed.dst);
        let flow = flows.entry(key).or_insert_with(|| {
            flow_order.push(key);
            Flow {
                a: key.0,
                b: key.1,
                syn_initiator: None,

                buffers: [DirectionBuffer::default(), DirectionBuffer::default()],
            }
        });

        let from_a = parsed.src == flow.a;
        let buf = &mut flow.buffers[usize::from(!from_a)];

        let is_syn = parsed.flags & TCP_SYN != 0;
        if is_syn {
            if parsed.flags & TCP_ACK == 0 && flow.syn_initiator.is_none() {
                flow.syn_initiator = Some(parsed.src);
            }
            // SYN consumes one sequence number; payload starts after it.
            if buf.base_seq.is_none() {
                buf.base_seq = Some(parsed.seq.wrapping_add(1));
            }
        }

        let (start, end) = parsed.payload_range;
        if end > start {
            if buf.base_seq.is_none() {
                buf.base_seq = Some(parsed.seq);
            }
            buf.segments.push(RawSegment {
                seq: parsed.seq,
                data: record.data[start..end].to_vec(),
                arrival: record.timestamp,
                arrival_order: order,
            });
        }
    }

    let mut sessions = Vec::new();
    for (n, key) in flow_order.iter().enumerate() {
        let flow = flows.remove(key).expect("flow recorded in order list");
        sessions.push(finish_flow(flow, n, &mut stats));
    }
    sessions.sort_by_key(|s| s.messages.first().map_or(u64::MAX, |m| m.timestamp));
    (sessions, stats)
}

fn canonical_key(x: SocketAddrV4, y: SocketAddrV4) -> (SocketAddrV4, SocketAddrV4) {
    if (x.ip(), x.port()) <= (y.ip(), y.port()) {
        (x, y)
    } else {
        (y, x)
    }
}

fn finish_flow(flow: Flow, ordinal: usize, stats: &mut ReassemblyStats) -> TcpSession {
    let (client, server, syn_observed) = match flow.syn_initiator {
        Some(initiator) => {
            let other = if initiator == flow.a { flow.b } else { flow.a };
            (initiator, other, true)
        }
        None => {
            // Lower port is the server; lower address breaks a port tie.
            let (srv, cli) = if (flow.a.port(), flow.a.ip()) <= (flow.b.port(), flow.b.ip()) {
                (flow.a, flow.b)
            } else {
                (flow.b, flow.a)
            };
            (cli, srv, false)
        }
    };

    let mut messages = Vec::new();
    for (slot, buffer) in flow.buffers.into_iter().enumerate() {
        let sender = if slot == 0 { flow.a } else { flow.b };
        let direction = if sender == client {
            Direction::ClientToServer
        } else {
            Direction::ServerToClient
        };
        linearize(buffer, direction, &mut messages, stats);
    }

    // Delivery order across directions. Ties go to the chunk released by
    // the earlier-captured segment, then to sequence order within it.
    messages.sort_by_key(|(ts, release, seq, _, _)| (*ts, *release, *seq));
    let messages = messages
        .into_iter()
        .enumerate()
        .map(|(index, (timestamp, _, _, direction, payload))| Message {
            direction,
            timestamp,
            payload,
            index,
        })
        .collect();

    TcpSession {
        session_id: format!("s{ordinal}:{client}->{server}"),
        client,
        server,
        syn_observed,
        messages,
    }
}

type PendingMessage = (Nanos, usize, usize, Direction, Vec<u8>);

/// Convert one direction's raw segments into in-sequence message chunks.
///
/// A byte position is owned by the first segment that covered it;
/// retransmissions and overlaps contribute nothing. The delivery time of a
/// chunk is the latest arrival among it and all its predecessors, which is
/// the instant the bytes became deliverable to the application.
fn linearize(
    buffer: DirectionBuffer,
    direction: Direction,
    out: &mut Vec<PendingMessage>,
    stats: &mut ReassemblyStats,
) {
    let Some(base) = buffer.base_seq else { return };
    let mut segments: Vec<(u64, RawSegment)> = buffer
        .segments
        .into_iter()
        .map(|s| (s.seq.wrapping_sub(base) as u64, s))
        .collect();
    segments.sort_by_key(|(rel, s)| (*rel, s.arrival_order));

    let mut written_end: u64 = 0;
    // Delivery instant and capture order of the segment that set it.
    let mut release: Option<(Nanos, usize)> = None;
    for (seq_pos, (rel, seg)) in segments.into_iter().enumerate() {
        let seg_end = rel + seg.data.len() as u64;
        if seg_end <= written_end {
            stats.duplicate_segments += 1;
            continue;
        }
        // Bytes already owned by an earlier segment are trimmed off; a gap
        // (lost frame in the capture) just resumes at the next observed byte.
        let start = rel.max(written_end);
        if start > rel {
            stats.duplicate_segments += 1;
        }
        let chunk = seg.data[(start - rel) as usize..].to_vec();
        written_end = seg_end;
        if release.is_none_or(|(ts, _)| seg.arrival > ts) {
            release = Some((seg.arrival, seg.arrival_order));
        }
        let (delivery, release_order) = release.expect("set above");
        out.push((delivery, release_order, seq_pos, direction, chunk));
    }
}
