//! Fuzzing toolkit for proprietary TCP-based industrial control protocols.
//!
//! The crate is organized around the stages of a fuzzing campaign against a
//! PLC-style device whose protocol is undocumented:
//!
//! - [`capture`] ingests pcap / pcap-ng files and reassembles them into
//!   per-session application messages.
//! - [`inference`] statistically recovers the proprietary handshake, session
//!   token bindings, and command templates from message corpora.
//! - [`model`] holds the inferred [`model::ProtocolModel`] and its on-disk
//!   format.
//! - [`fuzz`] establishes live sessions from a model, generates mutated
//!   commands, and runs campaigns.
//! - [`monitor`] classifies the device's process-output square wave
//!   (edge stream) as normal, delayed, stalled, or rebooting.
//! - [`mockdevice`] is a bit-exact mock PLC target with seeded
//!   vulnerabilities, used to verify the whole pipeline at desk scale.
//! - [`report`] merges campaign, observation, and verdict streams into
//!   deduplicated findings.
//!
//! All campaign-facing components take a [`clock::Clock`] so integration
//! tests can run the full stack deterministically on a virtual timeline.

pub mod capture;
pub mod clock;
pub mod fuzz;
pub mod inference;
pub mod mockdevice;
pub mod model;
pub mod monitor;
pub mod report;
