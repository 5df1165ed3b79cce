//! Websocket bridge that streams a live session to cockpit clients.

mod protocol;
mod server;

pub use protocol::{
    parse_client_message, Envelope, Message, PedestrianView, ProtocolError, RobotView, Snapshot, TrackView,
    PROTOCOL_VERSION,
};
pub use server::{apply_message, build_snapshot, serve, Applied, BridgeError, ServeHandle, ServeOptions};
