//! The inferred protocol model and its on-disk format.
//!
//! A [`ProtocolModel`] is everything the fuzzer needs to talk to a device:
//! the handshake template with per-byte masks, the session-token bindings,
//! the command templates, the framing length field, and the server port.
//!
//! The file format is versioned TOML with hex-encoded byte fields and a
//! compact per-byte mask string (`C` constant, `V` variable, `L` length
//! field). Field order is fixed, so identical models serialize to
//! byte-identical documents. See `docs/model-format.md`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{Direction, LengthFieldSpec};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("model serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported model version {found} (expected {MODEL_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Per-position classification of a template byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskByte {
    /// Byte-identical across all observations; the value lives in the
    /// template bytes.
    Constant,
    Variable,
    LengthField,
}

/// Byte-aligned mask over a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMask(pub Vec<MaskByte>);

impl ByteMask {
    pub fn constant(len: usize) -> Self {
        ByteMask(vec![MaskByte::Constant; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<MaskByte> {
        self.0.get(i).copied()
    }

    /// Offsets classified as `Variable`.
    pub fn variable_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == MaskByte::Variable)
            .map(|(i, _)| i)
    }

    /// Maximal runs of consecutive `Variable` positions as (offset, len).
    pub fn variable_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, m) in self.0.iter().enumerate() {
            match (m, start) {
                (MaskByte::Variable, None) => start = Some(i),
                (MaskByte::Variable, Some(_)) => {}
                (_, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                (_, None) => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.0.len() - s));
        }
        runs
    }
}

impl fmt::Display for ByteMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            f.write_str(match m {
                MaskByte::Constant => "C",
                MaskByte::Variable => "V",
                MaskByte::LengthField => "L",
            })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ByteMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                'C' => Ok(MaskByte::Constant),
                'V' => Ok(MaskByte::Variable),
                'L' => Ok(MaskByte::LengthField),
                other => Err(format!("invalid mask character {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ByteMask)
    }
}

impl Serialize for ByteMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ByteMask {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hex-encoded byte fields in the model document.
mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// One message of the handshake prefix, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandshakeStep {
    pub direction: Direction,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub mask: ByteMask,
}

/// Where a token value is read from: a byte run inside a server-to-client
/// handshake step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSource {
    pub step: usize,
    pub offset: usize,
    pub width: usize,
}

/// One place the token must be echoed: either a later handshake step or a
/// command template. Exactly one of `step` / `command` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenEcho {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub offset: usize,
}

impl TokenEcho {
    pub fn in_step(step: usize, offset: usize) -> Self {
        TokenEcho {
            step: Some(step),
            command: None,
            offset,
        }
    }

    pub fn in_command(command: impl Into<String>, offset: usize) -> Self {
        TokenEcho {
            step: None,
            command: Some(command.into()),
            offset,
        }
    }
}

/// A value issued by the server during the handshake that the client must
/// repeat in later messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenBinding {
    pub source: TokenSource,
    pub echoes: Vec<TokenEcho>,
}

/// A client command observed verbatim in at least two captures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandTemplate {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Number of distinct captures containing this command byte-for-byte.
    pub support: usize,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub mask: ByteMask,
}

impl CommandTemplate {
    pub fn direction(&self) -> Direction {
        Direction::ClientToServer
    }
}

/// A variable byte run not explained by a token binding or the length
/// field. These are the first positions worth fuzzing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableRun {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub offset: usize,
    pub len: usize,
}

/// The complete inferred protocol description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolModel {
    pub version: u32,
    pub server_port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing: Option<LengthFieldSpec>,
    #[serde(default, rename = "handshake")]
    pub handshake: Vec<HandshakeStep>,
    #[serde(default, rename = "token")]
    pub tokens: Vec<TokenBinding>,
    #[serde(default, rename = "command")]
    pub commands: Vec<CommandTemplate>,
    #[serde(default, rename = "unexplained", skip_serializing_if = "Vec::is_empty")]
    pub unexplained: Vec<VariableRun>,
}

impl ProtocolModel {
    pub fn to_toml_string(&self) -> Result<String, ModelError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let model: ProtocolModel = toml::from_str(s)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version { found: model.version });
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn command(&self, id: &str) -> Option<&CommandTemplate> {
        self.commands.iter().find(|c| c.id == id)
    }

    /// Token echo (offset, width) pairs applying to one command template.
    pub fn command_token_offsets(&self, id: &str) -> Vec<(usize, usize)> {
        let mut offsets = Vec::new();
        for binding in &self.tokens {
            for echo in &binding.echoes {
                if echo.command.as_deref() == Some(id) {
                    offsets.push((echo.offset, binding.source.width));
                }
            }
        }
        offsets
    }

    /// Structural invariants: masks aligned, references in range, every
    /// variable position explained by a token, the length field, or an
    /// unexplained-run entry.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Invalid(msg));
        if self.handshake.is_empty() {
            return fail("handshake is empty".into());
        }
        for (i, step) in self.handshake.iter().enumerate() {
            if step.bytes.is_empty() {
                return fail(format!("handshake step {i} is empty"));
            }
            if step.mask.len() != step.bytes.len() {
                return fail(format!("handshake step {i} mask is misaligned"));
            }
        }
        for cmd in &self.commands {
            if cmd.bytes.is_empty() || cmd.mask.len() != cmd.bytes.len() {
                return fail(format!("command {} template/mask misaligned", cmd.id));
            }
        }
        for binding in &self.tokens {
            let src = &binding.source;
            if src.width == 0 {
                return fail("token source width is zero".into());
            }
            let step = self.handshake.get(src.step).ok_or_else(|| {
                ModelError::Invalid(format!("token source step {} out of range", src.step))
            })?;
            if step.direction != Direction::ServerToClient {
                return fail(format!("token source step {} is not server-to-client", src.step));
            }
            if src.offset + src.width > step.bytes.len() {
                return fail(format!("token source run out of range in step {}", src.step));
            }
            for echo in &binding.echoes {
                let len = match (&echo.step, &echo.command) {
                    (Some(s), None) => {
                        self.handshake
                            .get(*s)
                            .ok_or_else(|| ModelError::Invalid(format!("echo step {s} out of range")))?
                            .bytes
                            .len()
                    }
                    (None, Some(c)) => {
                        self.command(c)
                            .ok_or_else(|| ModelError::Invalid(format!("echo command {c} unknown")))?
                            .bytes
                            .len()
                    }
                    _ => return fail("echo must name exactly one of step/command".into()),
                };
                if echo.offset + src.width > len {
                    return fail("echo offset out of range".into());
                }
            }
        }

        // Every variable handshake position must be explained.
        for (i, step) in self.handshake.iter().enumerate() {
            for pos in step.mask.variable_positions() {
                let from_token = self.tokens.iter().any(|b| {
                    let w = b.source.width;
                    (b.source.step == i && (b.source.offset..b.source.offset + w).contains(&pos))
                        || b.echoes
                            .iter()
                            .any(|e| e.step == Some(i) && (e.offset..e.offset + w).contains(&pos))
                });
                let from_unexplained = self
                    .unexplained
                    .iter()
                    .any(|u| u.step == Some(i) && (u.offset..u.offset + u.len).contains(&pos));
                if !from_token && !from_unexplained {
                    return fail(format!("variable byte {pos} in handshake step {i} is unaccounted"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::Endianness;

    fn sample_model() -> ProtocolModel {
        ProtocolModel {
            version: MODEL_FORMAT_VERSION,
            server_port: 1962,
            framing: Some(LengthFieldSpec {
                offset: 2,
                width: 2,
                endianness: Endianness::Big,
            }),
            handshake: vec![
                HandshakeStep {
                    direction: Direction::ClientToServer,
                    bytes: vec![0x01, 0x01, 0x00, 0x06, 0xAA, 0xBB],
                    mask: "CCLLCC".parse().unwrap(),
                },
                HandshakeStep {
                    direction: Direction::ServerToClient,
                    bytes: vec![0x81, 0x01, 0x00, 0x06, 0x48, 0x00],
                    mask: "CCLLVC".parse().unwrap(),
                },
                HandshakeStep {
                    direction: Direction::ClientToServer,
                    bytes: vec![0x01, 0x05, 0x00, 0x06, 0x48, 0x00],
                    mask: "CCLLVC".parse().unwrap(),
                },
            ],
            tokens: vec![TokenBinding {
                source: TokenSource {
                    step: 1,
                    offset: 4,
                    width: 1,
                },
                echoes: vec![TokenEcho::in_step(2, 4), TokenEcho::in_command("cmd-0", 4)],
            }],
            commands: vec![CommandTemplate {
                id: "cmd-0".into(),
                label: Some("class=05 subcode=0010".into()),
                support: 2,
                bytes: vec![0x01, 0x05, 0x00, 0x06, 0x48, 0x01],
                mask: "CCLLVC".parse().unwrap(),
            }],
            unexplained: vec![],
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let model = sample_model();
        let doc = model.to_toml_string().unwrap();
        let back = ProtocolModel::from_toml_str(&doc).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn serialization_is_byte_stable() {
        let a = sample_model().to_toml_string().unwrap();
        let b = sample_model().to_toml_string().unwrap();
        assert_eq!(a, b);
        let reparsed = ProtocolModel::from_toml_str(&a).unwrap().to_toml_string().unwrap();
        assert_eq!(a, reparsed);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut model = sample_model();
        model.version = 99;
        let doc = model.to_toml_string().unwrap();
        match ProtocolModel::from_toml_str(&doc).unwrap_err() {
            ModelError::Version { found: 99 } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut doc = sample_model().to_toml_string().unwrap();
        doc.insert_str(0, "mystery_key = 1\n");
        assert!(ProtocolModel::from_toml_str(&doc).is_err());
    }

    #[test]
    fn unaccounted_variable_byte_fails_validation() {
        let mut model = sample_model();
        model.handshake[0].mask = "CCLLVC".parse().unwrap(); // variable with no token
        let doc = model.to_toml_string().unwrap();
        match ProtocolModel::from_toml_str(&doc).unwrap_err() {
            ModelError::Invalid(msg) => assert!(msg.contains("unaccounted")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mask_variable_runs() {
        let mask: ByteMask = "CVVCLVC".parse().unwrap();
        assert_eq!(mask.variable_runs(), vec![(1, 2), (5, 1)]);
    }
}
