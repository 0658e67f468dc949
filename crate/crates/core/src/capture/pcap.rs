//! Classic pcap and pcap-ng readers plus a classic pcap writer.
//!
//! The reader accepts the classic magic 0xA1B2C3D4 in either byte order
//! (microsecond timestamps) and pcap-ng sections (SHB / IDB / EPB, all
//! options ignored, unknown block types skipped). The writer always emits
//! little-endian classic pcap, version 2.4, linktype 1, so that
//! `read_capture(write_capture(r)) == r` for microsecond-aligned
//! timestamps; sub-microsecond precision is truncated deterministically.

use super::{CaptureError, PacketRecord};

const CLASSIC_MAGIC: u32 = 0xA1B2_C3D4;
const PCAPNG_SHB: u32 = 0x0A0D_0D0A;
const PCAPNG_BYTE_ORDER: u32 = 0x1A2B_3C4D;
const PCAPNG_IDB: u32 = 0x0000_0001;
const PCAPNG_EPB: u32 = 0x0000_0006;
const LINKTYPE_ETHERNET: u32 = 1;

/// Parse a capture file (classic pcap or pcap-ng) into raw frame records.
pub fn read_capture(file_bytes: &[u8]) -> Result<Vec<PacketRecord>, CaptureError> {
    if file_bytes.len() < 4 {
        return Err(CaptureError::malformed(0, "file shorter than a magic number"));
    }
    let magic_le = u32::from_le_bytes(file_bytes[..4].try_into().unwrap());
    let magic_be = u32::from_be_bytes(file_bytes[..4].try_into().unwrap());
    if magic_le == CLASSIC_MAGIC {
        read_classic(file_bytes, false)
    } else if magic_be == CLASSIC_MAGIC {
        read_classic(file_bytes, true)
    } else if magic_be == PCAPNG_SHB {
        read_pcapng(file_bytes)
    } else {
        Err(CaptureError::malformed(
            0,
            format!("unrecognized capture magic {magic_be:#010x}"),
        ))
    }
}

/// Serialize records as a classic little-endian pcap file.
///
/// All records must be Ethernet (the only representable link type).
pub fn write_capture(records: &[PacketRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + records.iter().map(|r| 16 + r.data.len()).sum::<usize>());
    out.extend_from_slice(&CLASSIC_MAGIC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // version major
    out.extend_from_slice(&4u16.to_le_bytes()); // version minor
    out.extend_from_slice(&0u32.to_le_bytes()); // thiszone
    out.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
    out.extend_from_slice(&65_535u32.to_le_bytes()); // snaplen
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for r in records {
        let sec = (r.timestamp / 1_000_000_000) as u32;
        let usec = ((r.timestamp % 1_000_000_000) / 1_000) as u32;
        out.extend_from_slice(&sec.to_le_bytes());
        out.extend_from_slice(&usec.to_le_bytes());
        out.extend_from_slice(&(r.data.len() as u32).to_le_bytes());
        out.extend_from_slice(&(r.data.len() as u32).to_le_bytes());
        out.extend_from_slice(&r.data);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    swapped: bool,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CaptureError> {
        if self.bytes.len() - self.pos < n {
            return Err(CaptureError::malformed(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CaptureError> {
        let b: [u8; 2] = self.take(2, what)?.try_into().unwrap();
        Ok(if self.swapped { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) })
    }

    fn u32(&mut self, what: &str) -> Result<u32, CaptureError> {
        let b: [u8; 4] = self.take(4, what)?.try_into().unwrap();
        Ok(if self.swapped { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_classic(bytes: &[u8], swapped: bool) -> Result<Vec<PacketRecord>, CaptureError> {
    let mut cur = Cursor { bytes, pos: 4, swapped };
    let _version_major = cur.u16("global header")?;
    let _version_minor = cur.u16("global header")?;
    let _thiszone = cur.u32("global header")?;
    let _sigfigs = cur.u32("global header")?;
    let _snaplen = cur.u32("global header")?;
    let network = cur.u32("global header")?;
    if network != LINKTYPE_ETHERNET {
        return Err(CaptureError::UnsupportedLinkType(network));
    }

    let mut records = Vec::new();
    while cur.remaining() > 0 {
        let record_offset = cur.pos;
        let sec = cur.u32("record header")?;
        let usec = cur.u32("record header")?;
        let incl_len = cur.u32("record header")? as usize;
        let _orig_len = cur.u32("record header")?;
        let data = cur.take(incl_len, "record data")?.to_vec();
        let timestamp = sec as u64 * 1_000_000_000 + usec as u64 * 1_000;
        records.push(PacketRecord::ethernet(timestamp, data).map_err(|_| {
            CaptureError::malformed(record_offset, "frame shorter than an Ethernet header")
        })?);
    }
    Ok(records)
}

fn read_pcapng(bytes: &[u8]) -> Result<Vec<PacketRecord>, CaptureError> {
    let mut records = Vec::new();
    let mut pos = 0usize;
    // Per-section state; a new SHB resets both.
    let mut swapped = false;
    let mut interfaces: Vec<u32> = Vec::new();
    let mut seen_shb = false;

    while bytes.len() - pos >= 8 {
        let block_offset = pos;
        let raw_type = &bytes[pos..pos + 4];
        let block_type_be = u32::from_be_bytes(raw_type.try_into().unwrap());

        if block_type_be == PCAPNG_SHB {
            // The byte-order magic inside the SHB decides this section's
            // endianness; the block type itself is a palindrome.
            if bytes.len() - pos < 12 {
                return Err(CaptureError::malformed(block_offset, "truncated section header"));
            }
            let bom = &bytes[pos + 8..pos + 12];
            swapped = match u32::from_le_bytes(bom.try_into().unwrap()) {
                PCAPNG_BYTE_ORDER => false,
                v if v.swap_bytes() == PCAPNG_BYTE_ORDER => true,
                _ => {
                    return Err(CaptureError::malformed(
                        block_offset + 8,
                        "bad section byte-order magic",
                    ))
                }
            };
            interfaces.clear();
            seen_shb = true;
        } else if !seen_shb {
            return Err(CaptureError::malformed(block_offset, "block before section header"));
        }

        let read_u32 = |at: usize| -> u32 {
            let b: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
            if swapped { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }
        };
        let read_u16 = |at: usize| -> u16 {
            let b: [u8; 2] = bytes[at..at + 2].try_into().unwrap();
            if swapped { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) }
        };

        let block_type = read_u32(pos);
        let total_len = read_u32(pos + 4) as usize;
        if total_len < 12 || total_len % 4 != 0 {
            return Err(CaptureError::malformed(block_offset + 4, "implausible block length"));
        }
        if bytes.len() - pos < total_len {
            return Err(CaptureError::malformed(block_offset, "truncated block"));
        }
        let trailing = read_u32(pos + total_len - 4) as usize;
        if trailing != total_len {
            return Err(CaptureError::malformed(
                block_offset + total_len - 4,
                "inconsistent block lengths",
            ));
        }

        match block_type {
            t if t == PCAPNG_SHB => {
                // Header fields beyond the byte-order magic are irrelevant here.
            }
            t if t == PCAPNG_IDB => {
                if total_len < 20 {
                    return Err(CaptureError::malformed(block_offset, "interface block too short"));
                }
                let linktype = read_u16(pos + 8) as u32;
                interfaces.push(linktype);
            }
            t if t == PCAPNG_EPB => {
                if total_len < 32 {
                    return Err(CaptureError::malformed(block_offset, "packet block too short"));
                }
                let iface = read_u32(pos + 8) as usize;
                let ts_high = read_u32(pos + 12) as u64;
                let ts_low = read_u32(pos + 16) as u64;
                let cap_len = read_u32(pos + 20) as usize;
                let linktype = *interfaces.get(iface).ok_or_else(|| {
                    CaptureError::malformed(block_offset + 8, "packet references unknown interface")
                })?;
                if linktype != LINKTYPE_ETHERNET {
                    return Err(CaptureError::UnsupportedLinkType(linktype));
                }
                if 28 + cap_len + 4 > total_len {
                    return Err(CaptureError::malformed(
                        block_offset + 20,
                        "captured length exceeds block",
                    ));
                }
                let data = bytes[pos + 28..pos + 28 + cap_len].to_vec();
                // Options ignored, so the timestamp resolution is the
                // pcap-ng default of microseconds.
                let ts_us = (ts_high << 32) | ts_low;
                let record = PacketRecord::ethernet(ts_us * 1_000, data).map_err(|_| {
                    CaptureError::malformed(block_offset + 28, "frame shorter than an Ethernet header")
                })?;
                records.push(record);
            }
            _ => {} // unknown block type: skipped silently
        }

        pos += total_len;
    }
    if pos != bytes.len() {
        return Err(CaptureError::malformed(pos, "trailing bytes after last block"));
    }
    Ok(records)
}
