//! Configuration files, wire framing and network transport.

pub mod config;
pub mod transport;
pub mod wire;
