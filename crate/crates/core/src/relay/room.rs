//! The room: a serialized event executor owning participants,
//! publications, subscriptions, per-subscriber reorder buffers, analytics
//! sinks, and the lossless text log.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use super::packet::{MediaPacket, PacketKind};
use super::reorder::ReorderBuffer;
use super::RelayError;

/// Participant identifier within a room.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParticipantId(pub String);

impl std::fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl<T: Into<String>> From<T> for ParticipantId {
    fn from(s: T) -> Self {
        ParticipantId(s.into())
    }
}

/// One entry of the totally ordered text log.
#[derive(Debug, Clone, PartialEq)]
pub struct TextMessage {
    pub t_ms: u64,
    pub from: ParticipantId,
    pub body: String,
}

/// Per-kind conservation counters. After [`Room::finish`], for each kind:
/// `offered == delivered + dropped`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KindCounters {
    /// Sum over published packets of the live subscriber count at publish.
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoomCounters {
    pub audio: KindCounters,
    pub video: KindCounters,
    pub text_posts: u64,
    pub sink_dropped: u64,
}

impl RoomCounters {
    pub fn kind(&self, kind: PacketKind) -> &KindCounters {
        match kind {
            PacketKind::Audio => &self.audio,
            PacketKind::Video => &self.video,
        }
    }

    fn kind_mut(&mut self, kind: PacketKind) -> &mut KindCounters {
        match kind {
            PacketKind::Audio => &mut self.audio,
            PacketKind::Video => &mut self.video,
        }
    }
}

/// One delivery seen by a subscriber after reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub t_ms: u64,
    pub receiver: ParticipantId,
    pub ssrc: u32,
    pub seq: u16,
    pub kind: PacketKind,
}

#[derive(Debug)]
struct SinkState {
    kinds: BTreeSet<PacketKind>,
    capacity: usize,
    queue: VecDeque<MediaPacket>,
    dropped: u64,
}

/// Handle to a bounded analytics sink; drainable from any thread. Media
/// sinks are lossy: on overflow the oldest packet is dropped and counted.
#[derive(Debug, Clone)]
pub struct SinkHandle(Arc<Mutex<SinkState>>);

impl SinkHandle {
    fn push(&self, packet: MediaPacket) -> bool {
        let mut s = self.0.lock().expect("sink lock");
        if !s.kinds.contains(&packet.kind) {
            return false;
        }
        if s.queue.len() == s.capacity {
            s.queue.pop_front();
            s.dropped += 1;
        }
        s.queue.push_back(packet);
        true
    }

    /// FIFO drain of at most `max` packets.
    pub fn drain(&self, max: usize) -> Vec<MediaPacket> {
        let mut s = self.0.lock().expect("sink lock");
        let n = max.min(s.queue.len());
        s.queue.drain(..n).collect()
    }

    pub fn dropped(&self) -> u64 {
        self.0.lock().expect("sink lock").dropped
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("sink lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RoomConfig {
    /// Max out-of-order span per reorder buffer, in packets.
    pub reorder_window: usize,
    /// Bounded media sink capacity, in packets.
    pub sink_capacity: usize,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self { reorder_window: super::reorder::DEFAULT_REORDER_WINDOW, sink_capacity: 1024 }
    }
}

#[derive(Debug)]
struct Publication {
    owner: ParticipantId,
    ended: bool,
    kind: PacketKind,
}

/// Multi-party session state. All mutations flow through `&mut self`, so
/// the room behaves as one logical event queue; packets are immutable
/// after publish and sinks hand off through their own locks.
pub struct Room {
    pub id: String,
    config: RoomConfig,
    now_ms: u64,
    participants: BTreeSet<ParticipantId>,
    publications: BTreeMap<u32, Publication>,
    subscriptions: BTreeMap<ParticipantId, BTreeSet<u32>>,
    buffers: BTreeMap<(ParticipantId, u32), ReorderBuffer>,
    sinks: Vec<SinkHandle>,
    text_log: Vec<TextMessage>,
    deliveries: Vec<Delivery>,
    counters: RoomCounters,
}

impl Room {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_config(id, RoomConfig::default())
    }

    pub fn with_config(id: impl Into<String>, config: RoomConfig) -> Self {
        Self {
            id: id.into(),
            config,
            now_ms: 0,
            participants: BTreeSet::new(),
            publications: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            buffers: BTreeMap::new(),
            sinks: Vec::new(),
            text_log: Vec::new(),
            deliveries: Vec::new(),
            counters: RoomCounters::default(),
        }
    }

    /// Advances the room's virtual clock (monotone).
    pub fn advance_to(&mut self, t_ms: u64) {
        self.now_ms = self.now_ms.max(t_ms);
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn participants(&self) -> &BTreeSet<ParticipantId> {
        &self.participants
    }

    pub fn counters(&self) -> &RoomCounters {
        &self.counters
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    /// Adds a participant and subscribes them to every live stream from
    /// this point on. No history is replayed.
    pub fn join(&mut self, participant: impl Into<ParticipantId>) -> Result<(), RelayError> {
        let p = participant.into();
        if !self.participants.insert(p.clone()) {
            return Err(RelayError::DuplicateParticipant(p.0));
        }
        let live: BTreeSet<u32> = self
            .publications
            .iter()
            .filter(|(_, publ)| !publ.ended && publ.owner != p)
            .map(|(&ssrc, _)| ssrc)
            .collect();
        self.subscriptions.insert(p, live);
        Ok(())
    }

    /// Removes a participant. Their pending reorder-buffer packets are
    /// dropped (counted), and streams they published are marked ended.
    pub fn leave(&mut self, participant: impl Into<ParticipantId>) -> Result<(), RelayError> {
        let p = participant.into();
        if !self.participants.remove(&p) {
            return Err(RelayError::UnknownParticipant(p.0));
        }
        if let Some(subs) = self.subscriptions.remove(&p) {
            for ssrc in subs {
                if let Some(mut buf) = self.buffers.remove(&(p.clone(), ssrc)) {
                    let kind = self.publications.get(&ssrc).map(|publ| publ.kind);
                    let pending = buf.flush().len() as u64;
                    if let Some(kind) = kind {
                        self.counters.kind_mut(kind).dropped += pending;
                    }
                }
            }
        }
        for publ in self.publications.values_mut() {
            if publ.owner == p {
                publ.ended = true;
            }
        }
        Ok(())
    }

    /// Fans one packet out to every current subscriber of its ssrc and
    /// every attached sink of its kind. The publisher never receives its
    /// own packet; payload bytes are shared, not copied.
    pub fn publish(
        &mut self,
        participant: impl Into<ParticipantId>,
        packet: MediaPacket,
    ) -> Result<(), RelayError> {
        let p = participant.into();
        if !self.participants.contains(&p) {
            return Err(RelayError::UnknownParticipant(p.0));
        }
        match self.publications.get(&packet.ssrc) {
            Some(publ) if publ.owner != p => {
                return Err(RelayError::SsrcOwnership {
                    ssrc: packet.ssrc,
                    owner: publ.owner.0.clone(),
                    attempted: p.0,
                });
            }
            Some(_) => {}
            None => {
                // first publish registers the stream and subscribes every
                // other current participant
                self.publications.insert(
                    packet.ssrc,
                    Publication { owner: p.clone(), ended: false, kind: packet.kind },
                );
                for (other, subs) in self.subscriptions.iter_mut() {
                    if *other != p {
                        subs.insert(packet.ssrc);
                    }
                }
            }
        }

        let subscribers: Vec<ParticipantId> = self
            .subscriptions
            .iter()
            .filter(|(other, subs)| **other != p && subs.contains(&packet.ssrc))
            .map(|(other, _)| other.clone())
            .collect();

        self.counters.kind_mut(packet.kind).offered += subscribers.len() as u64;
        for subscriber in subscribers {
            let buf = self
                .buffers
                .entry((subscriber.clone(), packet.ssrc))
                .or_insert_with(|| ReorderBuffer::new(self.config.reorder_window));
            let before_discarded = buf.discarded;
            let before_lost = buf.lost_gaps;
            let released = buf.deliver(packet.clone());
            let c = self.counters.kind_mut(packet.kind);
            c.dropped += (buf.discarded - before_discarded) + (buf.lost_gaps - before_lost);
            c.delivered += released.len() as u64;
            for out in released {
                self.deliveries.push(Delivery {
                    t_ms: self.now_ms,
                    receiver: subscriber.clone(),
                    ssrc: out.ssrc,
                    seq: out.seq,
                    kind: out.kind,
                });
            }
        }

        for sink in &self.sinks {
            sink.push(packet.clone());
        }
        // overflow drops live on each sink; the room mirrors the total
        self.counters.sink_dropped = self.sinks.iter().map(SinkHandle::dropped).sum::<u64>();
        Ok(())
    }

    /// Appends to the totally ordered, lossless text log.
    pub fn post_text(
        &mut self,
        participant: impl Into<ParticipantId>,
        body: impl Into<String>,
    ) -> Result<(), RelayError> {
        let p = participant.into();
        if !self.participants.contains(&p) {
            return Err(RelayError::UnknownParticipant(p.0));
        }
        self.text_log.push(TextMessage { t_ms: self.now_ms, from: p, body: body.into() });
        self.counters.text_posts += 1;
        Ok(())
    }

    /// Every reader sees the identical sequence from any starting index.
    pub fn read_text(&self, from_index: usize) -> &[TextMessage] {
        &self.text_log[from_index.min(self.text_log.len())..]
    }

    /// Attaches a bounded sink receiving every packet of the requested
    /// kinds from this point on.
    pub fn attach_sink(&mut self, kinds: BTreeSet<PacketKind>) -> SinkHandle {
        let handle = SinkHandle(Arc::new(Mutex::new(SinkState {
            kinds,
            capacity: self.config.sink_capacity.max(1),
            queue: VecDeque::new(),
            dropped: 0,
        })));
        self.sinks.push(handle.clone());
        handle
    }

    pub fn attach_sink_with_capacity(
        &mut self,
        kinds: BTreeSet<PacketKind>,
        capacity: usize,
    ) -> SinkHandle {
        let handle = SinkHandle(Arc::new(Mutex::new(SinkState {
            kinds,
            capacity: capacity.max(1),
            queue: VecDeque::new(),
            dropped: 0,
        })));
        self.sinks.push(handle.clone());
        handle
    }

    /// End of scenario: flushes every reorder buffer in order, counting
    /// the releases as delivered.
    pub fn finish(&mut self) {
        let keys: Vec<(ParticipantId, u32)> = self.buffers.keys().cloned().collect();
        for key in keys {
            let buf = self.buffers.get_mut(&key).expect("key present");
            let released = buf.flush();
            let kind = self.publications.get(&key.1).map(|p| p.kind);
            if let Some(kind) = kind {
                self.counters.kind_mut(kind).delivered += released.len() as u64;
            }
            for out in released {
                self.deliveries.push(Delivery {
                    t_ms: self.now_ms,
                    receiver: key.0.clone(),
                    ssrc: out.ssrc,
                    seq: out.seq,
                    kind: out.kind,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(ssrc: u32, seq: u16, kind: PacketKind) -> MediaPacket {
        MediaPacket::new(ssrc, seq, 0, kind, vec![0u8; 4])
    }

    #[test]
    fn join_and_duplicate_join() {
        let mut room = Room::new("r");
        room.join("A").unwrap();
        room.join("B").unwrap();
        assert_eq!(room.participants().len(), 2);
        assert_eq!(room.join("A"), Err(RelayError::DuplicateParticipant("A".into())));
        assert_eq!(room.leave("Z"), Err(RelayError::UnknownParticipant("Z".into())));
    }

    #[test]
    fn fanout_excludes_publisher() {
        let mut room = Room::new("r");
        for name in ["P", "S1", "S2", "S3"] {
            room.join(name).unwrap();
        }
        room.publish("P", pkt(10, 0, PacketKind::Video)).unwrap();
        assert_eq!(room.deliveries().len(), 3);
        assert!(room.deliveries().iter().all(|d| d.receiver != ParticipantId::from("P")));
        assert_eq!(room.counters().video.offered, 3);
        assert_eq!(room.counters().video.delivered, 3);
    }

    #[test]
    fn foreign_ssrc_is_rejected() {
        let mut room = Room::new("r");
        room.join("A").unwrap();
        room.join("B").unwrap();
        room.publish("A", pkt(5, 0, PacketKind::Audio)).unwrap();
        let err = room.publish("B", pkt(5, 1, PacketKind::Audio)).unwrap_err();
        assert!(matches!(err, RelayError::SsrcOwnership { ssrc: 5, .. }));
    }

    #[test]
    fn late_joiner_gets_no_history() {
        let mut room = Room::new("r");
        room.join("P").unwrap();
        room.join("S1").unwrap();
        for seq in 1..=5u16 {
            room.publish("P", pkt(7, seq, PacketKind::Video)).unwrap();
        }
        room.join("S2").unwrap();
        room.publish("P", pkt(7, 6, PacketKind::Video)).unwrap();
        let to_s2: Vec<u16> = room
            .deliveries()
            .iter()
            .filter(|d| d.receiver == ParticipantId::from("S2"))
            .map(|d| d.seq)
            .collect();
        assert_eq!(to_s2, vec![6]);
    }

    #[test]
    fn leave_does_not_interrupt_others() {
        let mut room = Room::new("r");
        for name in ["A", "B", "C"] {
            room.join(name).unwrap();
        }
        room.publish("A", pkt(3, 0, PacketKind::Audio)).unwrap();
        room.leave("C").unwrap();
        room.publish("A", pkt(3, 1, PacketKind::Audio)).unwrap();
        let to_b: Vec<u16> = room
            .deliveries()
            .iter()
            .filter(|d| d.receiver == ParticipantId::from("B"))
            .map(|d| d.seq)
            .collect();
        assert_eq!(to_b, vec![0, 1]);
        // C only saw the first packet
        let to_c: Vec<u16> = room
            .deliveries()
            .iter()
            .filter(|d| d.receiver == ParticipantId::from("C"))
            .map(|d| d.seq)
            .collect();
        assert_eq!(to_c, vec![0]);
    }

    #[test]
    fn conservation_with_pending_flush() {
        let mut room = Room::new("r");
        for name in ["P", "S1", "S2"] {
            room.join(name).unwrap();
        }
        // 0 anchors; 2 and 3 wait on the gap at 1 until finish flushes them
        for seq in [0u16, 2, 3] {
            room.publish("P", pkt(9, seq, PacketKind::Video)).unwrap();
        }
        room.finish();
        let c = room.counters().video;
        assert_eq!(c.offered, 6);
        assert_eq!(c.delivered, 6);
        assert_eq!(c.dropped, 0);
    }

    #[test]
    fn conservation_with_late_drops() {
        let mut room = Room::new("r");
        for name in ["P", "S1", "S2"] {
            room.join(name).unwrap();
        }
        // the first packet anchors each subscriber's stream: seqs 0 and 1
        // arrive behind the anchor and are dropped as late
        for seq in [2u16, 0, 1] {
            room.publish("P", pkt(9, seq, PacketKind::Video)).unwrap();
        }
        room.finish();
        let c = room.counters().video;
        assert_eq!(c.offered, 6);
        assert_eq!(c.delivered, 2);
        assert_eq!(c.dropped, 4);
        assert_eq!(c.delivered + c.dropped, c.offered);
    }

    #[test]
    fn text_room_is_totally_ordered_and_shared() {
        let mut room = Room::new("r");
        room.join("A").unwrap();
        room.join("B").unwrap();
        room.post_text("A", "ards").unwrap();
        room.post_text("B", "hr=72").unwrap();
        let all: Vec<&str> = room.read_text(0).iter().map(|m| m.body.as_str()).collect();
        assert_eq!(all, vec!["ards", "hr=72"]);
        let tail: Vec<&str> = room.read_text(1).iter().map(|m| m.body.as_str()).collect();
        assert_eq!(tail, vec!["hr=72"]);
        assert!(room.read_text(99).is_empty());
        assert!(room.post_text("Z", "x").is_err());
    }

    #[test]
    fn sink_filters_kinds_and_drops_oldest() {
        let mut room = Room::new("r");
        room.join("P").unwrap();
        let audio_sink = room.attach_sink_with_capacity(BTreeSet::from([PacketKind::Audio]), 2);
        room.publish("P", pkt(1, 0, PacketKind::Video)).unwrap();
        assert_eq!(audio_sink.len(), 0); // kind filter

        for seq in 0..3u16 {
            room.publish("P", pkt(2, seq, PacketKind::Audio)).unwrap();
        }
        assert_eq!(audio_sink.dropped(), 1);
        let drained = audio_sink.drain(10);
        let seqs: Vec<u16> = drained.iter().map(|p| p.seq).collect();
        assert_eq!(seqs, vec![1, 2]); // two newest, FIFO

        // drain respects max
        for seq in 3..8u16 {
            room.publish("P", pkt(2, seq, PacketKind::Audio)).unwrap();
        }
        assert_eq!(audio_sink.drain(2).len(), 2);
    }

    #[test]
    fn payload_is_shared_not_copied() {
        let mut room = Room::new("r");
        room.join("P").unwrap();
        room.join("S").unwrap();
        let sink = room.attach_sink(BTreeSet::from([PacketKind::Video]));
        let packet = pkt(4, 0, PacketKind::Video);
        let payload_ptr = packet.payload.as_ptr();
        room.publish("P", packet).unwrap();
        let from_sink = sink.drain(1);
        assert_eq!(from_sink[0].payload.as_ptr(), payload_ptr);
    }
}
