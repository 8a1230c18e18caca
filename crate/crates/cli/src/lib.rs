//! Front ends for levlab: the `levlab` command line and the HTTP/WebSocket
//! service behind the tuning workbench.

pub mod args;
pub mod commands;
pub mod server;
pub mod session;
