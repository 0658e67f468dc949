//! Mock PLC target: a TCP server speaking the proprietary programming
//! protocol bit-for-bit, with configurable seeded vulnerabilities and a
//! square-wave output emitter on a second port.
//!
//! The device is the desk-scale test target for the whole toolkit: the
//! fuzzer's findings against it are reproducible because every behavior
//! (handshake, command handling, reboot and crash timing, output edges)
//! is a deterministic function of the input bytes and the injected clock.

mod device;
pub mod wire;

pub use device::{MockDevice, Phase};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Nanos;

/// Seeded vulnerabilities, individually selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Vulnerability {
    /// V1: the session token never changes, so captured sessions replay.
    ReplayAccepted,
    /// V2: a declared length far beyond the received bytes crashes the
    /// device instead of producing an error reply.
    LengthCrash,
    /// V3: a reset command executes even with a wrong session token.
    UnauthReset,
    /// V4: writing variable 0xFFFF delays the next five output cycles by
    /// half a cycle each.
    LoadDelay,
}

impl Vulnerability {
    pub const ALL: [Vulnerability; 4] = [
        Vulnerability::ReplayAccepted,
        Vulnerability::LengthCrash,
        Vulnerability::UnauthReset,
        Vulnerability::LoadDelay,
    ];

    /// Parse either the kebab-case name or the short v1..v4 alias.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "v1" | "replay-accepted" => Some(Vulnerability::ReplayAccepted),
            "v2" | "length-crash" => Some(Vulnerability::LengthCrash),
            "v3" | "unauth-reset" => Some(Vulnerability::UnauthReset),
            "v4" | "load-delay" => Some(Vulnerability::LoadDelay),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DeviceConfigError {
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid device config: {0}")]
    Invalid(String),
}

/// Mock device configuration; the TOML file uses exactly these keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    /// Protocol port; 0 picks an ephemeral port.
    pub listen_port: u16,
    /// Output edge-stream port; 0 picks an ephemeral port.
    pub scope_port: u16,
    /// The device's session token.
    pub token: u8,
    /// Output square-wave period in nanoseconds.
    pub cycle_period_ns: Nanos,
    /// Output silence after a reset, in nanoseconds.
    pub reboot_duration_ns: Nanos,
    /// Enabled vulnerabilities.
    pub vulnerabilities: BTreeSet<Vulnerability>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            listen_port: wire::DEFAULT_PORT,
            scope_port: wire::DEFAULT_PORT + 1,
            token: 0x48,
            cycle_period_ns: 200 * crate::clock::MILLISECOND,
            reboot_duration_ns: 2 * crate::clock::SECOND,
            // The as-assessed device carries all of its flaws.
            vulnerabilities: Vulnerability::ALL.into_iter().collect(),
        }
    }
}

impl DeviceConfig {
    /// All vulnerabilities disabled (the "fixed firmware" device).
    pub fn hardened() -> Self {
        Self {
            vulnerabilities: BTreeSet::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DeviceConfigError> {
        if self.cycle_period_ns == 0 {
            return Err(DeviceConfigError::Invalid("cycle_period_ns must be positive".into()));
        }
        if self.reboot_duration_ns < 2 * self.cycle_period_ns {
            return Err(DeviceConfigError::Invalid(
                "reboot_duration_ns must be at least two cycle periods".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DeviceConfigError> {
        let config: DeviceConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn has(&self, v: Vulnerability) -> bool {
        self.vulnerabilities.contains(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, VirtualClock, MILLISECOND, SECOND};
    use std::io::{Read, Write};
    use std::net::TcpStream;
    use std::time::Duration;

    fn test_config(token: u8, vulns: &[Vulnerability]) -> DeviceConfig {
        DeviceConfig {
            listen_port: 0,
            scope_port: 0,
            token,
            cycle_period_ns: 40 * MILLISECOND,
            reboot_duration_ns: 400 * MILLISECOND,
            vulnerabilities: vulns.iter().copied().collect(),
        }
    }

    struct TestClient {
        stream: TcpStream,
    }

    impl TestClient {
        fn connect(device: &MockDevice) -> Self {
            let stream = TcpStream::connect(device.device_addr()).expect("connect");
            stream.set_nodelay(true).unwrap();
            stream
                .set_read_timeout(Some(Duration::from_secs(5)))
                .unwrap();
            Self { stream }
        }

        fn send(&mut self, bytes: &[u8]) {
            self.stream.write_all(bytes).unwrap();
        }

        /// Read one self-describing frame.
        fn read_frame(&mut self) -> Vec<u8> {
            let mut head = [0u8; 4];
            self.stream.read_exact(&mut head).expect("frame header");
            let declared = wire::declared_len(&head).unwrap();
            let mut rest = vec![0u8; declared - 4];
            self.stream.read_exact(&mut rest).expect("frame body");
            let mut frame = head.to_vec();
            frame.extend_from_slice(&rest);
            frame
        }

        /// Complete the handshake with whatever token the device issues;
        /// returns the live token.
        fn handshake(&mut self) -> u8 {
            self.send(&wire::INIT_REQUEST);
            let response = self.read_frame();
            assert_eq!(response.len(), wire::INIT_RESPONSE_48.len());
            let token = response[wire::TOKEN_OFFSET_RESPONSE];
            self.send(&wire::ack_frame(token));
            token
        }
    }

    #[test]
    fn golden_handshake_and_reset_conformance() {
        let clock = VirtualClock::new(SECOND);
        let device =
            MockDevice::start_virtual(test_config(0x48, &Vulnerability::ALL), clock).unwrap();

        let mut client = TestClient::connect(&device);
        client.send(&wire::INIT_REQUEST);
        let response = client.read_frame();
        assert_eq!(response, wire::INIT_RESPONSE_48.to_vec(), "init response");
        assert_eq!(response[wire::TOKEN_OFFSET_RESPONSE], 0x48);

        client.send(&wire::ACK_48);
        // The ack is accepted silently; prove it by getting a successful
        // status reply instead of a bad-state error.
        client.send(&wire::status_frame(0x48));
        let reply = client.read_frame();
        assert_eq!(wire::reply_status(&reply), Some(0));
        assert_eq!(device.phase(), Phase::Ready);

        client.send(&wire::RESET_48);
        let reply = client.read_frame();
        assert_eq!(wire::reply_status(&reply), Some(0));
        assert_eq!(device.phase(), Phase::Rebooting);
    }

    #[test]
    fn wrong_token_ack_is_rejected_and_phase_unchanged() {
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &[]), clock).unwrap();
        let mut client = TestClient::connect(&device);
        client.send(&wire::INIT_REQUEST);
        client.read_frame();
        client.send(&wire::ack_frame(0x49));
        let reply = client.read_frame();
        assert_eq!(
            wire::reply_status(&reply),
            Some(wire::ReplyStatus::BadToken as u16)
        );
        assert_eq!(device.phase(), Phase::AwaitAck);
    }

    #[test]
    fn commands_have_no_effect_before_the_handshake() {
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &Vulnerability::ALL), clock).unwrap();
        let mut client = TestClient::connect(&device);
        client.send(&wire::RESET_48);
        let reply = client.read_frame();
        assert_eq!(
            wire::reply_status(&reply),
            Some(wire::ReplyStatus::BadState as u16)
        );
        assert_eq!(device.phase(), Phase::AwaitInit);
    }

    #[test]
    fn reboot_silences_output_then_resumes_alternation() {
        let clock = VirtualClock::new(SECOND);
        let config = test_config(0x48, &[]);
        let half = config.cycle_period_ns / 2;
        let reboot = config.reboot_duration_ns;
        let device = MockDevice::start_virtual(config, clock.clone()).unwrap();
        let tap = device.tap_edges();

        let mut client = TestClient::connect(&device);
        let token = client.handshake();
        clock.advance(100 * MILLISECOND); // a few edges pre-reset
        client.send(&wire::reset_frame(token));
        client.read_frame();
        let reset_at = clock.now();

        clock.advance(2 * reboot);
        let edges: Vec<_> = tap.try_iter().collect();
        assert!(edges.len() > 4);
        for w in edges.windows(2) {
            assert_ne!(w[0].level, w[1].level, "alternation across the gap");
        }
        // Silence exactly during the reboot, resumption half a cycle after.
        let resume = reset_at + reboot + half;
        assert!(edges.iter().all(|e| e.timestamp <= reset_at || e.timestamp >= resume));
        assert!(edges.iter().any(|e| e.timestamp == resume));
        assert_eq!(device.phase(), Phase::AwaitInit);
    }

    #[test]
    fn load_delay_stretches_five_cycles() {
        let clock = VirtualClock::new(SECOND);
        let config = test_config(0x48, &[Vulnerability::LoadDelay]);
        let half = config.cycle_period_ns / 2;
        let device = MockDevice::start_virtual(config, clock.clone()).unwrap();
        let tap = device.tap_edges();

        let mut client = TestClient::connect(&device);
        let token = client.handshake();
        client.send(&wire::write_var_frame(token, wire::LOAD_DELAY_ADDR, 1));
        let reply = client.read_frame();
        assert_eq!(wire::reply_status(&reply), Some(0));

        clock.advance(3 * SECOND);
        let edges: Vec<_> = tap.try_iter().collect();
        let gaps: Vec<u64> = edges.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
        let stretched = gaps.iter().filter(|g| **g == half + half / 2).count();
        assert_eq!(stretched, 10, "five cycles = ten stretched half-cycles");
        // And they are contiguous, followed by nominal spacing again.
        let first = gaps.iter().position(|g| *g == half + half / 2).unwrap();
        assert!(gaps[first..first + 10].iter().all(|g| *g == half + half / 2));
        assert!(gaps[first + 10..].iter().all(|g| *g == half));
    }

    #[test]
    fn write_without_load_delay_flag_just_stores() {
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &[]), clock.clone()).unwrap();
        let mut client = TestClient::connect(&device);
        let token = client.handshake();
        client.send(&wire::write_var_frame(token, 0x00AA, 0xBEEF));
        client.read_frame();
        client.send(&wire::read_var_frame(token, 0x00AA));
        let reply = client.read_frame();
        assert_eq!(&reply[8..10], &0xBEEFu16.to_be_bytes());
        assert_eq!(device.variable(0x00AA), Some(0xBEEF));
    }

    #[test]
    fn length_crash_only_with_v2_and_large_excess() {
        // Without V2: short frame gets a length error reply.
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &[]), clock.clone()).unwrap();
        let mut client = TestClient::connect(&device);
        client.handshake();
        let mut short = wire::status_frame(0x48)[..6].to_vec();
        short[2] = 0x01; // declares 256 bytes
        short[3] = 0x00;
        client.send(&short);
        client.stream.shutdown(std::net::Shutdown::Write).unwrap();
        let reply = client.read_frame();
        assert_eq!(
            wire::reply_status(&reply),
            Some(wire::ReplyStatus::LengthMismatch as u16)
        );
        assert_ne!(device.phase(), Phase::Crashed);

        // With V2: the same frame crashes the device.
        let device = MockDevice::start_virtual(
            test_config(0x48, &[Vulnerability::LengthCrash]),
            VirtualClock::new(SECOND),
        )
        .unwrap();
        let mut client = TestClient::connect(&device);
        client.handshake();
        client.send(&short);
        client.stream.shutdown(std::net::Shutdown::Write).unwrap();
        let mut rest = Vec::new();
        let _ = client.stream.read_to_end(&mut rest);
        assert!(rest.is_empty(), "crash produces no reply");
        assert_eq!(device.phase(), Phase::Crashed);
        assert!(TcpStream::connect(device.device_addr()).is_err(), "connections refused");

        // Until the process is restarted.
        device.restart().unwrap();
        assert_eq!(device.phase(), Phase::AwaitInit);
        let mut client = TestClient::connect(&device);
        client.handshake();
        assert_eq!(device.phase(), Phase::Ready);
    }

    #[test]
    fn unauth_reset_executes_with_v3_only() {
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &[]), clock).unwrap();
        let mut client = TestClient::connect(&device);
        let token = client.handshake();
        client.send(&wire::reset_frame(token ^ 0xFF));
        let reply = client.read_frame();
        assert_eq!(
            wire::reply_status(&reply),
            Some(wire::ReplyStatus::BadToken as u16)
        );
        assert_eq!(device.phase(), Phase::Ready);

        let device = MockDevice::start_virtual(
            test_config(0x48, &[Vulnerability::UnauthReset]),
            VirtualClock::new(SECOND),
        )
        .unwrap();
        let mut client = TestClient::connect(&device);
        let token = client.handshake();
        client.send(&wire::reset_frame(token ^ 0xFF));
        let reply = client.read_frame();
        assert_eq!(wire::reply_status(&reply), Some(0));
        assert_eq!(device.phase(), Phase::Rebooting);
    }

    #[test]
    fn token_rotates_without_v1_and_replay_fails() {
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &[]), clock).unwrap();

        // First session: token is rotated, not the configured base.
        let mut client = TestClient::connect(&device);
        client.send(&wire::INIT_REQUEST);
        let response = client.read_frame();
        let live_token = response[wire::TOKEN_OFFSET_RESPONSE];
        assert_ne!(live_token, 0x48);
        // Replaying the captured 0x48 ack is rejected.
        client.send(&wire::ACK_48);
        let reply = client.read_frame();
        assert_eq!(
            wire::reply_status(&reply),
            Some(wire::ReplyStatus::BadToken as u16)
        );
        // The live token works.
        client.send(&wire::ack_frame(live_token));
        client.send(&wire::status_frame(live_token));
        let reply = client.read_frame();
        assert_eq!(wire::reply_status(&reply), Some(0));

        // A second session gets a different token.
        drop(client);
        let mut client2 = TestClient::connect(&device);
        client2.send(&wire::INIT_REQUEST);
        let response2 = client2.read_frame();
        assert_ne!(response2[wire::TOKEN_OFFSET_RESPONSE], live_token);
    }

    #[test]
    fn edge_cadence_matches_the_cycle_period() {
        let clock = VirtualClock::new(SECOND);
        let mut config = test_config(0x48, &[]);
        config.cycle_period_ns = SECOND;
        config.reboot_duration_ns = 2 * SECOND;
        let device = MockDevice::start_virtual(config, clock.clone()).unwrap();
        let tap = device.tap_edges();
        clock.advance(3 * SECOND);
        let edges: Vec<_> = tap.try_iter().collect();
        assert_eq!(edges.len(), 6, "three seconds at 0.5 s spacing");
        for (i, e) in edges.iter().enumerate() {
            assert_eq!(e.timestamp, SECOND + (i as u64 + 1) * 500 * MILLISECOND);
        }
    }

    #[test]
    fn scope_port_streams_the_wire_format() {
        let clock = VirtualClock::new(SECOND);
        let device = MockDevice::start_virtual(test_config(0x48, &[]), clock.clone()).unwrap();
        let stream = TcpStream::connect(device.scope_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        std::thread::sleep(Duration::from_millis(20)); // let the tap register
        clock.advance(200 * MILLISECOND);

        let mut reader = std::io::BufReader::new(stream);
        let mut line = String::new();
        std::io::BufRead::read_line(&mut reader, &mut line).unwrap();
        let edge = crate::monitor::Edge::parse_record(line.trim_end()).expect("valid record");
        assert_eq!(edge.timestamp, SECOND + 20 * MILLISECOND);
    }

    #[test]
    fn config_has_strict_keys_and_invariants() {
        let err = toml::from_str::<DeviceConfig>("unknown_key = 1").unwrap_err();
        assert!(err.to_string().contains("unknown"));
        let bad = DeviceConfig {
            reboot_duration_ns: 10,
            ..DeviceConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(Vulnerability::parse("v2"), Some(Vulnerability::LengthCrash));
        assert_eq!(Vulnerability::parse("load-delay"), Some(Vulnerability::LoadDelay));
        assert_eq!(Vulnerability::parse("nope"), None);
    }
}
