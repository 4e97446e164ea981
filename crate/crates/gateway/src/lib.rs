//! Command-line entry point and live websocket service for the gesture agent.

pub mod cli;
pub mod protocol;
pub mod server;
