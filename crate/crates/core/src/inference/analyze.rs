//! The full capture-to-model pipeline.
//!
//! Reads capture files, reassembles sessions, infers the framing length
//! field, re-segments streams with it, aligns the handshake prefix,
//! detects token bindings, identifies commands, and assembles a validated
//! [`ProtocolModel`].

use std::collections::BTreeMap;

use thiserror::Error;

use super::{
    align_handshake, detect_tokens, identify_commands, infer_length_field, InferenceError,
};
use crate::capture::{
    read_capture, reassemble, segment_messages, CaptureError, ReassemblyStats, TcpSession,
};
use crate::model::{MaskByte, ModelError, ProtocolModel, VariableRun, MODEL_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("capture {index}: {source}")]
    Capture {
        index: usize,
        #[source]
        source: CaptureError,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no TCP sessions found in the captures")]
    NoSessions,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    /// Number of messages forming the handshake prefix.
    pub handshake_len: usize,
    /// Clustering threshold for command identification.
    pub threshold: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            handshake_len: 3,
            threshold: 0.9,
        }
    }
}

/// Model plus ingestion diagnostics for reporting.
#[derive(Debug)]
pub struct AnalyzeOutput {
    pub model: ProtocolModel,
    pub stats: Vec<ReassemblyStats>,
    pub session_count: usize,
}

impl AnalyzeOutput {
    /// Human summary of what was learned, one line per item.
    pub fn summary(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        s.push_str(&format!(
            "sessions: {}, server port {}\n",
            self.session_count, m.server_port
        ));
        match &m.framing {
            Some(f) => s.push_str(&format!(
                "framing: length field at offset {}, width {}, {:?}-endian\n",
                f.offset, f.width, f.endianness
            )),
            None => s.push_str("framing: none inferred (per-segment boundaries)\n"),
        }
        for (i, step) in m.handshake.iter().enumerate() {
            s.push_str(&format!(
                "handshake[{i}] {:?} {} bytes, mask {}\n",
                step.direction,
                step.bytes.len(),
                step.mask
            ));
        }
        for t in &m.tokens {
            let echoes: Vec<String> = t
                .echoes
                .iter()
                .map(|e| match (&e.step, &e.command) {
                    (Some(s), _) => format!("step {} offset {}", s, e.offset),
                    (_, Some(c)) => format!("{} offset {}", c, e.offset),
                    _ => "?".into(),
                })
                .collect();
            s.push_str(&format!(
                "token: step {} offset {} width {} -> {}\n",
                t.source.step,
                t.source.offset,
                t.source.width,
                echoes.join(", ")
            ));
        }
        for c in &m.commands {
            s.push_str(&format!(
                "command {}: {} bytes, seen in {} captures, mask {}\n",
                c.id,
                c.bytes.len(),
                c.support,
                c.mask
            ));
        }
        for u in &m.unexplained {
            let place = match (&u.step, &u.command) {
                (Some(step), _) => format!("handshake step {step}"),
                (_, Some(cmd)) => cmd.clone(),
                _ => "?".into(),
            };
            s.push_str(&format!(
                "unexplained variable bytes: {place} offset {} len {}\n",
                u.offset, u.len
            ));
        }
        s
    }
}

/// Run the whole pipeline over raw capture file contents.
pub fn analyze_capture_files(
    files: &[Vec<u8>],
    options: &AnalyzeOptions,
) -> Result<AnalyzeOutput, AnalyzeError> {
    let mut sessions = Vec::new();
    let mut captures = Vec::new();
    let mut stats = Vec::new();
    for (index, content) in files.iter().enumerate() {
        let records =
            read_capture(content).map_err(|source| AnalyzeError::Capture { index, source })?;
        let (file_sessions, file_stats) = reassemble(&records);
        stats.push(file_stats);
        for s in file_sessions {
            sessions.push(s);
            captures.push(index);
        }
    }
    if sessions.is_empty() {
        return Err(AnalyzeError::NoSessions);
    }
    let session_count = sessions.len();
    let model = infer_model(&sessions, &captures, options)
        .map_err(AnalyzeError::from_infer)?;
    Ok(AnalyzeOutput {
        model,
        stats,
        session_count,
    })
}

impl AnalyzeError {
    fn from_infer(e: InferModelError) -> Self {
        match e {
            InferModelError::Inference(i) => AnalyzeError::Inference(i),
            InferModelError::Model(m) => AnalyzeError::Model(m),
            InferModelError::Segment(source) => AnalyzeError::Capture { index: 0, source },
        }
    }
}

#[derive(Debug, Error)]
pub enum InferModelError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("re-segmentation failed: {0}")]
    Segment(CaptureError),
}

/// Infer a model from reassembled sessions tagged with their capture file.
pub fn infer_model(
    sessions: &[TcpSession],
    captures: &[usize],
    options: &AnalyzeOptions,
) -> Result<ProtocolModel, InferModelError> {
    // Framing first: it refines message boundaries for everything after.
    let all_payloads: Vec<&[u8]> = sessions
        .iter()
        .flat_map(|s| s.messages.iter().map(|m| m.payload.as_slice()))
        .collect();
    let framing = infer_length_field(&all_payloads);

    let sessions: Vec<TcpSession> = match &framing {
        Some(spec) => sessions
            .iter()
            .map(|s| segment_messages(s, Some(spec)))
            .collect::<Result<_, _>>()
            .map_err(InferModelError::Segment)?,
        None => sessions.to_vec(),
    };

    let mut handshake = align_handshake(&sessions, options.handshake_len, framing.as_ref())?;
    let detection = detect_tokens(&handshake, &sessions);
    let mut tokens = detection.bindings;

    let identified = identify_commands(
        &sessions,
        captures,
        options.handshake_len,
        options.threshold,
        &tokens,
        framing.as_ref(),
    )?;
    for (binding_idx, echo) in identified.command_echoes {
        tokens[binding_idx].echoes.push(echo);
    }

    // Force echo positions variable in the handshake masks: a step byte
    // that echoes the token is variable by definition even if the corpus
    // happened to observe a single token value.
    for binding in &tokens {
        for echo in &binding.echoes {
            if let Some(step) = echo.step {
                for pos in echo.offset..echo.offset + binding.source.width {
                    if handshake[step].mask.0[pos] == MaskByte::Constant {
                        handshake[step].mask.0[pos] = MaskByte::Variable;
                    }
                }
            }
        }
    }

    // Anything variable and not owned by a token is an unexplained run.
    let mut unexplained: Vec<VariableRun> = Vec::new();
    for (i, step) in handshake.iter().enumerate() {
        let covered = |pos: usize| {
            tokens.iter().any(|b| {
                let w = b.source.width;
                (b.source.step == i && (b.source.offset..b.source.offset + w).contains(&pos))
                    || b.echoes
                        .iter()
                        .any(|e| e.step == Some(i) && (e.offset..e.offset + w).contains(&pos))
            })
        };
        let mut start: Option<usize> = None;
        for pos in 0..=step.bytes.len() {
            let is_open = pos < step.bytes.len()
                && step.mask.get(pos) == Some(MaskByte::Variable)
                && !covered(pos);
            match (is_open, start) {
                (true, None) => start = Some(pos),
                (false, Some(s)) => {
                    unexplained.push(VariableRun {
                        step: Some(i),
                        command: None,
                        offset: s,
                        len: pos - s,
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    unexplained.extend(identified.unexplained);

    let model = ProtocolModel {
        version: MODEL_FORMAT_VERSION,
        server_port: consensus_server_port(&sessions),
        framing,
        handshake,
        tokens,
        commands: identified.templates,
        unexplained,
    };
    model.validate()?;
    Ok(model)
}

/// Most common server port across sessions; smallest wins a tie.
fn consensus_server_port(sessions: &[TcpSession]) -> u16 {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for s in sessions {
        *counts.entry(s.server.port()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|(port, n)| (*n, std::cmp::Reverse(*port)))
        .map(|(port, _)| port)
        .expect("at least one session")
}
