use serde::{Deserialize, Serialize};

use crate::costmap::CostPatch;
use crate::gridworld::Point2;
use crate::local_planner::SolveStatus;
use crate::perception::SocialArea;

pub const PROTOCOL_VERSION: u32 = 1;

/// Every frame on the wire: `{"v": 1, "seq": n, "type": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub msg: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Snapshot(Box<Snapshot>),
    UserCmd { v: f64, omega: f64 },
    SetPreference { x: f64, y: f64 },
    SetGoal { x: f64, y: f64 },
    SetMode { variant: String },
    Pause,
    Resume,
    Reset { scenario: String },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub radius: f64,
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianView {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackView {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub social_area: SocialArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub scenario: String,
    pub variant: String,
    pub tick: usize,
    pub t: f64,
    pub robot: RobotView,
    pub pedestrians: Vec<PedestrianView>,
    pub tracks: Vec<TrackView>,
    pub global_path: Vec<[f64; 2]>,
    pub goal: [f64; 2],
    pub preference: Option<[f64; 2]>,
    pub eta: f64,
    pub min_h: Option<f64>,
    pub status: Option<SolveStatus>,
    pub collided: bool,
    pub paused: bool,
    pub done: bool,
    /// Incremented whenever the costmap changes.
    pub costmap_rev: u64,
    /// Present in a client's first snapshot and after every change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costmap: Option<CostPatch>,
}

impl Envelope {
    pub fn new(seq: u64, msg: Message) -> Self {
        Self { v: PROTOCOL_VERSION, seq, msg }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("`{0}` is sent by the server only")]
    ServerOnly(&'static str),
}

/// Parses a client frame and rejects server-only message types.
pub fn parse_client_message(text: &str) -> Result<Envelope, ProtocolError> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if env.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(env.v));
    }
    match env.msg {
        Message::Snapshot(_) => Err(ProtocolError::ServerOnly("snapshot")),
        Message::Error { .. } => Err(ProtocolError::ServerOnly("error")),
        _ => Ok(env),
    }
}

pub fn point(p: Point2) -> [f64; 2] {
    [p.x, p.y]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let e = Envelope::new(3, Message::UserCmd { v: 0.5, omega: -0.2 });
        let s = e.to_json();
        assert_eq!(s, r#"{"v":1,"seq":3,"type":"user_cmd","payload":{"v":0.5,"omega":-0.2}}"#);
        assert_eq!(parse_client_message(&s).unwrap(), e);
        let p = parse_client_message(r#"{"v":1,"seq":4,"type":"pause"}"#).unwrap();
        assert_eq!(p.msg, Message::Pause);
        assert_eq!(Envelope::new(4, Message::Pause).to_json(), r#"{"v":1,"seq":4,"type":"pause"}"#);
        let m = parse_client_message(r#"{"v":1,"seq":5,"type":"set_mode","payload":{"variant":"mpc"}}"#).unwrap();
        assert_eq!(m.msg, Message::SetMode { variant: "mpc".into() });
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(parse_client_message("not json"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(parse_client_message(r#"{"v":1,"seq":1,"type":"fly"}"#), Err(ProtocolError::Malformed(_))));
        assert!(matches!(parse_client_message(r#"{"v":2,"seq":1,"type":"pause"}"#), Err(ProtocolError::Version(2))));
        assert!(matches!(
            parse_client_message(r#"{"v":1,"seq":1,"type":"error","payload":{"message":"x"}}"#),
            Err(ProtocolError::ServerOnly(_))
        ));
        assert!(parse_client_message(r#"{"v":1,"seq":1,"type":"user_cmd","payload":{"v":"fast"}}"#).is_err());
    }
}
