//! Wire protocol of the mock PLC.
//!
//! Framing: byte 0 is the direction (0x01 client, 0x81 device), byte 1 a
//! command class, bytes 2..4 the big-endian total frame length. Class 0x05
//! commands carry a 16-bit subcode at bytes 4..6 and the session token at
//! byte 11. The handshake frames are fixed except for the token byte; the
//! trailing two-byte fields are opaque constants per command and the
//! device never checks them.

/// TCP port the programming protocol lives on.
pub const DEFAULT_PORT: u16 = 1962;

pub const DIR_CLIENT: u8 = 0x01;
pub const DIR_DEVICE: u8 = 0x81;
pub const CLASS_INIT: u8 = 0x01;
pub const CLASS_COMMAND: u8 = 0x05;

/// Identification string carried in the init request body.
pub const INIT_IDENT: &[u8; 12] = b"IBETH01N0_M\0";

/// Byte offset of the session token in the device's init response.
pub const TOKEN_OFFSET_RESPONSE: usize = 17;
/// Byte offset of the token echo in class-0x05 client frames.
pub const TOKEN_OFFSET_COMMAND: usize = 11;

pub const SUBCODE_STATUS: u16 = 0x0001;
pub const SUBCODE_RESET: u16 = 0x0010;
pub const SUBCODE_READ_VAR: u16 = 0x0020;
pub const SUBCODE_WRITE_VAR: u16 = 0x0021;

/// Variable address that provokes the load-delay behavior when the
/// corresponding vulnerability is enabled.
pub const LOAD_DELAY_ADDR: u16 = 0xFFFF;

/// Session-initialization request, client to device (26 bytes).
pub const INIT_REQUEST: [u8; 26] = [
    0x01, 0x01, 0x00, 0x1a, 0x00, 0x00, 0x00, 0x80, 0x64, 0x15, 0x00, 0x03, 0x00, 0x0c, 0x49,
    0x42, 0x45, 0x54, 0x48, 0x30, 0x31, 0x4e, 0x30, 0x5f, 0x4d, 0x00,
];

/// Device response to the init request (20 bytes), token 0x48.
pub const INIT_RESPONSE_48: [u8; 20] = [
    0x81, 0x01, 0x00, 0x14, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, 0x00,
    0x00, 0x00, 0x48, 0x00, 0x00,
];

/// Token acknowledgment, client to device (22 bytes), token 0x48.
pub const ACK_48: [u8; 22] = [
    0x01, 0x05, 0x00, 0x16, 0x00, 0x01, 0x00, 0x00, 0xe8, 0xe9, 0x00, 0x48, 0x00, 0x00, 0x00,
    0x1c, 0x00, 0x04, 0x02, 0x95, 0x00, 0x00,
];

/// Reset command, client to device (22 bytes), token 0x48. The device
/// performs a complete reboot.
pub const RESET_48: [u8; 22] = [
    0x01, 0x05, 0x00, 0x16, 0x00, 0x10, 0x00, 0x00, 0xe8, 0xc8, 0x00, 0x48, 0x00, 0x00, 0x00,
    0x00, 0x00, 0x04, 0x0a, 0xba, 0x00, 0x00,
];

/// Init response carrying an arbitrary session token.
pub fn init_response(token: u8) -> [u8; 20] {
    let mut r = INIT_RESPONSE_48;
    r[TOKEN_OFFSET_RESPONSE] = token;
    r
}

/// Ack frame carrying an arbitrary token.
pub fn ack_frame(token: u8) -> [u8; 22] {
    let mut f = ACK_48;
    f[TOKEN_OFFSET_COMMAND] = token;
    f
}

/// Reset command carrying an arbitrary token.
pub fn reset_frame(token: u8) -> [u8; 22] {
    let mut f = RESET_48;
    f[TOKEN_OFFSET_COMMAND] = token;
    f
}

/// Status request: same bytes as the ack, sent while the session is ready.
pub fn status_frame(token: u8) -> [u8; 22] {
    ack_frame(token)
}

fn variable_frame(subcode: u16, token: u8, addr: u16, value: u16) -> [u8; 22] {
    let mut f = RESET_48;
    f[4..6].copy_from_slice(&subcode.to_be_bytes());
    f[TOKEN_OFFSET_COMMAND] = token;
    f[12..14].copy_from_slice(&addr.to_be_bytes());
    f[14..16].copy_from_slice(&value.to_be_bytes());
    f
}

/// Read a 16-bit process variable.
pub fn read_var_frame(token: u8, addr: u16) -> [u8; 22] {
    variable_frame(SUBCODE_READ_VAR, token, addr, 0)
}

/// Write a 16-bit process variable.
pub fn write_var_frame(token: u8, addr: u16, value: u16) -> [u8; 22] {
    variable_frame(SUBCODE_WRITE_VAR, token, addr, value)
}

/// Result field in device replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ReplyStatus {
    Ok = 0,
    Malformed = 1,
    BadToken = 2,
    BadState = 3,
    UnknownSubcode = 4,
    LengthMismatch = 5,
}

/// Fixed-size device reply (12 bytes): direction, class echo, length,
/// subcode echo, status, 16-bit data, reserved.
pub fn reply(class: u8, subcode: u16, status: ReplyStatus, data: u16) -> [u8; 12] {
    let mut r = [0u8; 12];
    r[0] = DIR_DEVICE;
    r[1] = class;
    r[2..4].copy_from_slice(&12u16.to_be_bytes());
    r[4..6].copy_from_slice(&subcode.to_be_bytes());
    r[6..8].copy_from_slice(&(status as u16).to_be_bytes());
    r[8..10].copy_from_slice(&data.to_be_bytes());
    r
}

/// The fixed reply to frames that cannot be parsed at all.
pub fn malformed_reply() -> [u8; 12] {
    reply(0, 0, ReplyStatus::Malformed, 0)
}

/// Status field of a reply frame, if it is one.
pub fn reply_status(frame: &[u8]) -> Option<u16> {
    if frame.len() == 12 && frame[0] == DIR_DEVICE {
        Some(u16::from_be_bytes([frame[6], frame[7]]))
    } else {
        None
    }
}

/// Big-endian declared total length at bytes 2..4.
pub fn declared_len(frame: &[u8]) -> Option<usize> {
    frame
        .get(2..4)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as usize)
}

pub fn subcode(frame: &[u8]) -> Option<u16> {
    frame.get(4..6).map(|b| u16::from_be_bytes([b[0], b[1]]))
}
