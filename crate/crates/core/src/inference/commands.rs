//! Command identification across captures.
//!
//! Post-handshake client messages are clustered by similarity; a cluster
//! yields command templates only where it contains a byte-for-byte match
//! (ignoring token echo positions) across at least two distinct captures.
//! Positions that differ between such exact-match subgroups while staying
//! constant inside each split the cluster into separate commands.

use std::collections::BTreeMap;

use super::cluster::cluster_bytes;
use super::InferenceError;
use crate::capture::{Direction, LengthFieldSpec, TcpSession};
use crate::model::{ByteMask, CommandTemplate, MaskByte, TokenBinding, TokenEcho, VariableRun};

/// Output of [`identify_commands`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifiedCommands {
    pub templates: Vec<CommandTemplate>,
    /// Echo entries discovered inside commands, per source binding index.
    pub command_echoes: Vec<(usize, TokenEcho)>,
    /// Variable positions in commands not explained by a token echo.
    pub unexplained: Vec<VariableRun>,
}

struct Candidate<'a> {
    capture: usize,
    payload: &'a [u8],
    /// Token value(s) observed in the candidate's own session, parallel to
    /// `bindings`.
    token_values: Vec<Vec<u8>>,
}

/// Identify commands from handshake-aligned sessions.
///
/// `captures[i]` tags each session with the capture file it came from.
pub fn identify_commands(
    sessions: &[TcpSession],
    captures: &[usize],
    handshake_len: usize,
    threshold: f64,
    bindings: &[TokenBinding],
    framing: Option<&LengthFieldSpec>,
) -> Result<IdentifiedCommands, InferenceError> {
    assert_eq!(sessions.len(), captures.len(), "one capture tag per session");

    // Flatten post-handshake client messages in (capture, session, index)
    // order so downstream ordering is deterministic.
    let mut candidates: Vec<Candidate> = Vec::new();
    for (s, session) in sessions.iter().enumerate() {
        let token_values: Vec<Vec<u8>> = bindings
            .iter()
            .map(|b| {
                session.messages[b.source.step].payload
                    [b.source.offset..b.source.offset + b.source.width]
                    .to_vec()
            })
            .collect();
        for m in session.messages.iter().skip(handshake_len) {
            if m.direction == Direction::ClientToServer {
                candidates.push(Candidate {
                    capture: captures[s],
                    payload: &m.payload,
                    token_values: token_values.clone(),
                });
            }
        }
    }

    let payloads: Vec<&[u8]> = candidates.iter().map(|c| c.payload).collect();
    let clusters = cluster_bytes(&payloads, threshold)?;

    let mut out = IdentifiedCommands {
        templates: Vec::new(),
        command_echoes: Vec::new(),
        unexplained: Vec::new(),
    };

    for cluster in clusters {
        // Templates only make sense for same-length members; a cluster
        // mixing lengths cannot carry a positional mask, so group by
        // length first (in practice one length dominates a command).
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &cluster {
            by_len.entry(candidates[i].payload.len()).or_default().push(i);
        }
        for members in by_len.values() {
            emit_templates(&candidates, members, bindings, framing, &mut out);
        }
    }
    Ok(out)
}

fn emit_templates(
    candidates: &[Candidate],
    members: &[usize],
    bindings: &[TokenBinding],
    framing: Option<&LengthFieldSpec>,
    out: &mut IdentifiedCommands,
) {
    let len = candidates[members[0]].payload.len();

    // Echo positions: offsets where every member carries its own session's
    // token value, and the bytes actually vary across members.
    let mut echo_positions: Vec<(usize, usize, usize)> = Vec::new(); // (binding, offset, width)
    for (b_idx, binding) in bindings.iter().enumerate() {
        let w = binding.source.width;
        if len < w {
            continue;
        }
        for pos in 0..=len - w {
            let all_match = members.iter().all(|&i| {
                candidates[i].payload[pos..pos + w] == candidates[i].token_values[b_idx][..]
            });
            let varies = members
                .iter()
                .any(|&i| candidates[i].token_values[b_idx] != candidates[members[0]].token_values[b_idx]);
            if all_match && varies {
                echo_positions.push((b_idx, pos, w));
            }
        }
    }
    let is_echo_byte =
        |pos: usize| echo_positions.iter().any(|(_, o, w)| pos >= *o && pos < o + w);

    // Exact-match subgroups, comparing bytes outside echo positions.
    let normalized = |i: usize| -> Vec<u8> {
        candidates[i]
            .payload
            .iter()
            .enumerate()
            .map(|(pos, b)| if is_echo_byte(pos) { 0 } else { *b })
            .collect()
    };
    let mut subgroups: Vec<(Vec<u8>, Vec<usize>)> = Vec::new();
    for &i in members {
        let key = normalized(i);
        match subgroups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(i),
            None => subgroups.push((key, vec![i])),
        }
    }

    let qualifying: Vec<&(Vec<u8>, Vec<usize>)> = subgroups
        .iter()
        .filter(|(_, g)| {
            let mut caps: Vec<usize> = g.iter().map(|&i| candidates[i].capture).collect();
            caps.sort_unstable();
            caps.dedup();
            caps.len() >= 2
        })
        .collect();
    if qualifying.is_empty() {
        return;
    }

    // One template per qualifying subgroup. With a single subgroup the mask
    // spans the whole cluster (stray one-capture members still mark their
    // differing positions variable); with several, each subgroup masks
    // itself so the positions that distinguish commands stay constant.
    let whole_cluster_mask = qualifying.len() == 1;
    for (_, group) in qualifying {
        let mask_members: &[usize] = if whole_cluster_mask { members } else { group };
        let representative = group[0];
        let bytes = candidates[representative].payload.to_vec();
        let mut mask = Vec::with_capacity(len);
        for pos in 0..len {
            let in_length_field = framing
                .map(|f| pos >= f.offset && pos < f.offset + f.width)
                .unwrap_or(false);
            let uniform = mask_members
                .iter()
                .all(|&i| candidates[i].payload[pos] == bytes[pos]);
            mask.push(if in_length_field {
                MaskByte::LengthField
            } else if uniform && !is_echo_byte(pos) {
                MaskByte::Constant
            } else {
                MaskByte::Variable
            });
        }
        let mask = ByteMask(mask);

        let mut caps: Vec<usize> = group.iter().map(|&i| candidates[i].capture).collect();
        caps.sort_unstable();
        caps.dedup();

        let id = format!("cmd-{}", out.templates.len());
        for (b_idx, offset, _w) in &echo_positions {
            out.command_echoes
                .push((*b_idx, TokenEcho::in_command(id.clone(), *offset)));
        }
        // Variable runs not covered by an echo are fuzz-priority targets.
        for (offset, run_len) in mask.variable_runs() {
            let covered = (offset..offset + run_len).all(is_echo_byte);
            if !covered {
                out.unexplained.push(VariableRun {
                    step: None,
                    command: Some(id.clone()),
                    offset,
                    len: run_len,
                });
            }
        }
        out.templates.push(CommandTemplate {
            id,
            label: None,
            support: caps.len(),
            bytes,
            mask,
        });
    }
}
