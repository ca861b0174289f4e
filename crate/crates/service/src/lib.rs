//! Local control plane for live attenuation sessions: JSON commands in,
//! replies and broadcast events out, over TCP or WebSocket.

pub mod broadcast;
pub mod driver;
pub mod protocol;
pub mod service;
pub mod transport;

pub use broadcast::{Broadcaster, Subscription, SUBSCRIBER_QUEUE};
pub use protocol::{Command, Event, EventEnvelope, Reply, Request, ServerMessage, PROTOCOL_VERSION};
pub use service::{error_code, Service};
pub use transport::{read_frame, serve_tcp, serve_tcp_connection, serve_ws, serve_ws_connection, write_frame, TcpClient};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("websocket error: {0}")]
    WebSocket(String),
    #[error(transparent)]
    Core(#[from] attn_core::Error),
    #[error("timed out waiting for the service")]
    Timeout,
    #[error("connection closed")]
    Disconnected,
}
