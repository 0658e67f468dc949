//! Session-token detection: correlate variable bytes in server responses
//! with bytes the client sends back later in the handshake.

use crate::capture::{Direction, TcpSession};
use crate::model::{HandshakeStep, TokenBinding, TokenEcho, TokenSource, VariableRun};

/// Result of the token search over an aligned handshake.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDetection {
    pub bindings: Vec<TokenBinding>,
    /// Server-side variable runs that never reappear client-side.
    pub unexplained: Vec<VariableRun>,
}

/// For every maximal variable run in a server-to-client step, search all
/// later client-to-server steps for byte runs that equal the server-sent
/// value within each session, across all sessions. A run that fails as a
/// whole is retried byte by byte.
pub fn detect_tokens(handshake: &[HandshakeStep], sessions: &[TcpSession]) -> TokenDetection {
    let mut bindings = Vec::new();
    let mut unexplained = Vec::new();

    for (step_idx, step) in handshake.iter().enumerate() {
        if step.direction != Direction::ServerToClient {
            continue;
        }
        for (run_offset, run_len) in step.mask.variable_runs() {
            if let Some(binding) =
                correlate_run(handshake, sessions, step_idx, run_offset, run_len)
            {
                bindings.push(binding);
                continue;
            }
            // Whole run failed: try single bytes, keep leftovers as
            // unexplained.
            let mut uncovered_start: Option<usize> = None;
            for pos in run_offset..run_offset + run_len {
                let single = if run_len > 1 {
                    correlate_run(handshake, sessions, step_idx, pos, 1)
                } else {
                    None // width-1 run already failed above
                };
                match single {
                    Some(binding) => {
                        if let Some(start) = uncovered_start.take() {
                            unexplained.push(VariableRun {
                                step: Some(step_idx),
                                command: None,
                                offset: start,
                                len: pos - start,
                            });
                        }
                        bindings.push(binding);
                    }
                    None => {
                        uncovered_start.get_or_insert(pos);
                    }
                }
            }
            if let Some(start) = uncovered_start {
                unexplained.push(VariableRun {
                    step: Some(step_idx),
                    command: None,
                    offset: start,
                    len: run_offset + run_len - start,
                });
            }
        }
    }

    TokenDetection {
        bindings,
        unexplained,
    }
}

/// Bind `width` bytes at `offset` of server step `step_idx` to every later
/// client-step position that repeats them in all sessions.
fn correlate_run(
    handshake: &[HandshakeStep],
    sessions: &[TcpSession],
    step_idx: usize,
    offset: usize,
    width: usize,
) -> Option<TokenBinding> {
    let mut echoes = Vec::new();
    for (later_idx, later) in handshake.iter().enumerate().skip(step_idx + 1) {
        if later.direction != Direction::ClientToServer {
            continue;
        }
        let step_len = later.bytes.len();
        if step_len < width {
            continue;
        }
        for pos in 0..=step_len - width {
            let all_match = sessions.iter().all(|s| {
                let source = &s.messages[step_idx].payload[offset..offset + width];
                let candidate = &s.messages[later_idx].payload[pos..pos + width];
                source == candidate
            });
            if all_match {
                echoes.push(TokenEcho::in_step(later_idx, pos));
            }
        }
    }
    if echoes.is_empty() {
        None
    } else {
        Some(TokenBinding {
            source: TokenSource {
                step: step_idx,
                offset,
                width,
            },
            echoes,
        })
    }
}
