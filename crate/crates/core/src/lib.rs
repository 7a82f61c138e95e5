//! Simulation of the FIDO2 allowCredential timing side channel: a CTAP2
//! authenticator, a WebAuthn client, the linking attack and its harness.

pub mod attack;
pub mod authenticator;
pub mod client;
pub mod clock;
pub mod harness;
pub mod kv;
pub mod seed;
pub mod wire;
