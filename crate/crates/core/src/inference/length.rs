//! Length-field inference: find the integer field that always equals the
//! total message length.

use crate::capture::{Endianness, LengthFieldSpec};

const MAX_OFFSET: usize = 8;
const WIDTHS: [usize; 3] = [1, 2, 4];

/// Scan candidate (offset, width, endianness) triples and return the one
/// where the decoded integer equals the total message length for every
/// message. Needs at least 4 messages of at least 2 distinct lengths,
/// otherwise (or when nothing fits) returns `None`.
///
/// Ties break toward the smallest offset, then the smallest width, then
/// big-endian; a 1-byte field is reported big-endian.
pub fn infer_length_field(messages: &[&[u8]]) -> Option<LengthFieldSpec> {
    if messages.len() < 4 {
        return None;
    }
    let mut lengths: Vec<usize> = messages.iter().map(|m| m.len()).collect();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths.len() < 2 {
        return None;
    }

    for offset in 0..=MAX_OFFSET {
        for width in WIDTHS {
            let endians: &[Endianness] = if width == 1 {
                &[Endianness::Big]
            } else {
                &[Endianness::Big, Endianness::Little]
            };
            for &endianness in endians {
                let spec = LengthFieldSpec {
                    offset,
                    width,
                    endianness,
                };
                if messages.iter().all(|m| spec.decode(m) == Some(m.len())) {
                    return Some(spec);
                }
            }
        }
    }
    None
}
