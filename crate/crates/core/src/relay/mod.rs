//! Multi-party media relay as a deterministic in-process simulator: rooms
//! with dynamic participants, publisher-to-subscriber fan-out of
//! sequence-numbered packets, per-subscriber reorder buffers, a lossless
//! text room, and bounded analytics sinks with pass-through payloads.

mod packet;
mod reorder;
mod room;
pub mod scenario;

pub use packet::{decode_packet, encode_packet, read_packets, write_packets, MediaPacket, PacketKind};
pub use reorder::ReorderBuffer;
pub use room::{
    KindCounters, ParticipantId, Room, RoomConfig, RoomCounters, SinkHandle, TextMessage,
};
pub use scenario::{generate_script, run_scenario, DeliveryRecord, DeliveryTrace, ScenarioSpec};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RelayError {
    #[error("participant {0} already joined")]
    DuplicateParticipant(String),
    #[error("participant {0} is not in the room")]
    UnknownParticipant(String),
    #[error("ssrc {ssrc} is published by {owner}, not {attempted}")]
    SsrcOwnership { ssrc: u32, owner: String, attempted: String },
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("packet codec: {0}")]
    Codec(String),
}
