//! Media packets and the byte-exact file codec.
//!
//! Record layout: a fixed 12-byte little-endian header followed by the
//! payload bytes.
//!
//! ```text
//! offset  size  field
//! 0       1     version (always 1)
//! 1       1     kind (0 = audio, 1 = video)
//! 2       4     ssrc
//! 6       2     seq
//! 8       2     timestamp (wrapping media clock ticks)
//! 10      2     payload length
//! ```

use std::sync::Arc;

use super::RelayError;

pub const CODEC_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketKind {
    Audio,
    Video,
}

impl PacketKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PacketKind::Audio => "audio",
            PacketKind::Video => "video",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "audio" => Some(PacketKind::Audio),
            "video" => Some(PacketKind::Video),
            _ => None,
        }
    }
}

impl std::fmt::Display for PacketKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sequence-numbered media unit. The payload is shared, never copied on
/// forward, and immutable after publish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaPacket {
    pub ssrc: u32,
    pub seq: u16,
    /// Wrapping media clock ticks.
    pub timestamp: u16,
    pub kind: PacketKind,
    pub payload: Arc<[u8]>,
}

impl MediaPacket {
    pub fn new(ssrc: u32, seq: u16, timestamp: u16, kind: PacketKind, payload: Vec<u8>) -> Self {
        Self { ssrc, seq, timestamp, kind, payload: payload.into() }
    }
}

pub fn encode_packet(packet: &MediaPacket) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + packet.payload.len());
    out.push(CODEC_VERSION);
    out.push(match packet.kind {
        PacketKind::Audio => 0,
        PacketKind::Video => 1,
    });
    out.extend_from_slice(&packet.ssrc.to_le_bytes());
    out.extend_from_slice(&packet.seq.to_le_bytes());
    out.extend_from_slice(&packet.timestamp.to_le_bytes());
    out.extend_from_slice(&(packet.payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&packet.payload);
    out
}

/// Decodes one packet, returning it with the number of bytes consumed.
pub fn decode_packet(bytes: &[u8]) -> Result<(MediaPacket, usize), RelayError> {
    if bytes.len() < HEADER_LEN {
        return Err(RelayError::Codec(format!(
            "need {HEADER_LEN} header bytes, have {}",
            bytes.len()
        )));
    }
    if bytes[0] != CODEC_VERSION {
        return Err(RelayError::Codec(format!("unsupported version {}", bytes[0])));
    }
    let kind = match bytes[1] {
        0 => PacketKind::Audio,
        1 => PacketKind::Video,
        other => return Err(RelayError::Codec(format!("unknown kind {other}"))),
    };
    let ssrc = u32::from_le_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
    let seq = u16::from_le_bytes([bytes[6], bytes[7]]);
    let timestamp = u16::from_le_bytes([bytes[8], bytes[9]]);
    let len = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(RelayError::Codec(format!(
            "payload truncated: need {len} bytes, have {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let payload = bytes[HEADER_LEN..total].to_vec();
    Ok((MediaPacket::new(ssrc, seq, timestamp, kind, payload), total))
}

pub fn write_packets(packets: &[MediaPacket]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in packets {
        out.extend(encode_packet(p));
    }
    out
}

pub fn read_packets(mut bytes: &[u8]) -> Result<Vec<MediaPacket>, RelayError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (p, consumed) = decode_packet(bytes)?;
        out.push(p);
        bytes = &bytes[consumed..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_twelve_bytes_and_round_trips() {
        let p = MediaPacket::new(0xdead_beef, 65_535, 12_345, PacketKind::Video, vec![1, 2, 3]);
        let bytes = encode_packet(&p);
        assert_eq!(bytes.len(), HEADER_LEN + 3);
        let (back, consumed) = decode_packet(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(consumed, bytes.len());
    }

    #[test]
    fn stream_of_packets_round_trips() {
        let packets: Vec<MediaPacket> = (0..20)
            .map(|i| {
                let kind = if i % 2 == 0 { PacketKind::Audio } else { PacketKind::Video };
                MediaPacket::new(100 + i, i as u16, (i * 90) as u16, kind, vec![i as u8; i as usize])
            })
            .collect();
        let bytes = write_packets(&packets);
        let back = read_packets(&bytes).unwrap();
        assert_eq!(back, packets);
    }

    #[test]
    fn decode_rejects_bad_input() {
        assert!(decode_packet(&[1, 0, 0]).is_err());

        let p = MediaPacket::new(1, 2, 3, PacketKind::Audio, vec![9; 10]);
        let mut bytes = encode_packet(&p);
        bytes[0] = 2; // wrong version
        assert!(decode_packet(&bytes).is_err());
        bytes[0] = 1;
        bytes[1] = 7; // wrong kind
        assert!(decode_packet(&bytes).is_err());
        bytes[1] = 0;
        bytes.truncate(15); // truncated payload
        assert!(decode_packet(&bytes).is_err());
    }
}
