//! Line-oriented scenario scripts and their deterministic executor.
//!
//! Script grammar, one event per line (`#` comments and blanks ignored):
//!
//! ```text
//! <t_ms> join <name>
//! <t_ms> leave <name>
//! <t_ms> publish <name> <ssrc> <seq> <audio|video> <payload_len>
//! <t_ms> post <name> <text...>
//! <t_ms> sink <kinds>[,<kinds>...] [capacity]
//! <t_ms> drain <sink_index> <max>
//! ```
//!
//! Events execute in timestamp order, ties broken by script position; the
//! same script always yields a bit-identical trace.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::packet::{MediaPacket, PacketKind};
use super::room::{Room, RoomConfig, SinkHandle, TextMessage};
use super::RelayError;

pub use super::room::Delivery as DeliveryRecord;

/// The complete outcome of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryTrace {
    pub deliveries: Vec<DeliveryRecord>,
    pub text_log: Vec<TextMessage>,
    pub counters: super::room::RoomCounters,
    /// Per drain event: (sink index, drained (ssrc, seq) pairs).
    pub drains: Vec<(usize, Vec<(u32, u16)>)>,
}

impl DeliveryTrace {
    /// One record per delivery: `<t_ms> <receiver> <ssrc> <seq> <kind>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.deliveries {
            writeln!(out, "{} {} {} {} {}", d.t_ms, d.receiver, d.ssrc, d.seq, d.kind)
                .expect("write to string");
        }
        for m in &self.text_log {
            writeln!(out, "text {} {} {}", m.t_ms, m.from, m.body).expect("write to string");
        }
        for (idx, packets) in &self.drains {
            let list: Vec<String> =
                packets.iter().map(|(ssrc, seq)| format!("{ssrc}:{seq}")).collect();
            writeln!(out, "drain {} {}", idx, list.join(",")).expect("write to string");
        }
        let a = self.counters.audio;
        let v = self.counters.video;
        writeln!(
            out,
            "counters audio {}/{}/{} video {}/{}/{} sink_dropped {}",
            a.offered, a.delivered, a.dropped, v.offered, v.delivered, v.dropped,
            self.counters.sink_dropped
        )
        .expect("write to string");
        out
    }

    /// SHA-256 over the textual trace.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        crate::metrics::report::hex_string(&hasher.finalize())
    }
}

#[derive(Debug, Clone)]
enum Event {
    Join(String),
    Leave(String),
    Publish { name: String, ssrc: u32, seq: u16, kind: PacketKind, payload_len: usize },
    Post { name: String, body: String },
    Sink { kinds: BTreeSet<PacketKind>, capacity: Option<usize> },
    Drain { sink: usize, max: usize },
}

#[derive(Debug, Clone)]
struct Timed {
    t_ms: u64,
    line: usize,
    event: Event,
}

fn parse_script(script: &str) -> Result<Vec<Timed>, RelayError> {
    let mut events = Vec::new();
    for (idx, raw) in script.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| RelayError::Script { line: line_no, message };
        let mut parts = line.split_whitespace();
        let t_ms: u64 = parts
            .next()
            .ok_or_else(|| err("missing timestamp".into()))?
            .parse()
            .map_err(|_| err("bad timestamp".into()))?;
        let verb = parts.next().ok_or_else(|| err("missing event".into()))?;
        let mut need = |what: &str| -> Result<String, RelayError> {
            parts.next().map(str::to_string).ok_or_else(|| RelayError::Script {
                line: line_no,
                message: format!("missing {what}"),
            })
        };
        let event = match verb {
            "join" => Event::Join(need("participant")?),
            "leave" => Event::Leave(need("participant")?),
            "publish" => {
                let name = need("participant")?;
                let ssrc = need("ssrc")?.parse().map_err(|_| err("bad ssrc".into()))?;
                let seq = need("seq")?.parse().map_err(|_| err("bad seq".into()))?;
                let kind_s = need("kind")?;
                let kind = PacketKind::parse(&kind_s)
                    .ok_or_else(|| err(format!("unknown kind {kind_s}")))?;
                let payload_len =
                    need("payload length")?.parse().map_err(|_| err("bad payload length".into()))?;
                Event::Publish { name, ssrc, seq, kind, payload_len }
            }
            "post" => {
                let name = need("participant")?;
                let rest: Vec<String> = parts.by_ref().map(str::to_string).collect();
                if rest.is_empty() {
                    return Err(err("missing message body".into()));
                }
                Event::Post { name, body: rest.join(" ") }
            }
            "sink" => {
                let kinds_s = need("kinds")?;
                let mut kinds = BTreeSet::new();
                for k in kinds_s.split(',') {
                    kinds.insert(
                        PacketKind::parse(k).ok_or_else(|| err(format!("unknown kind {k}")))?,
                    );
                }
                let capacity = match parts.next() {
                    Some(c) => {
                        Some(c.parse().map_err(|_| err("bad capacity".into()))?)
                    }
                    None => None,
                };
                Event::Sink { kinds, capacity }
            }
            "drain" => {
                let sink = need("sink index")?.parse().map_err(|_| err("bad sink index".into()))?;
                let max = need("max")?.parse().map_err(|_| err("bad max".into()))?;
                Event::Drain { sink, max }
            }
            other => return Err(err(format!("unknown event {other}"))),
        };
        if parts.next().is_some() && !matches!(verb, "post") {
            return Err(err("trailing arguments".into()));
        }
        events.push(Timed { t_ms, line: line_no, event });
    }
    // timestamp order, ties by script position
    events.sort_by_key(|e| (e.t_ms, e.line));
    Ok(events)
}

/// Deterministic payload fill so scripted packets are reproducible without
/// carrying literal bytes in the script.
fn synth_payload(ssrc: u32, seq: u16, len: usize) -> Vec<u8> {
    (0..len)
        .map(|i| {
            (u64::from(ssrc)
                .wrapping_mul(31)
                .wrapping_add(u64::from(seq).wrapping_mul(7))
                .wrapping_add(i as u64)
                & 0xff) as u8
        })
        .collect()
}

/// Executes a script against a fresh room and returns the full trace.
pub fn run_scenario(script: &str, config: RoomConfig) -> Result<DeliveryTrace, RelayError> {
    let events = parse_script(script)?;
    let mut room = Room::with_config("scenario", config);
    let mut sinks: Vec<SinkHandle> = Vec::new();
    let mut drains = Vec::new();

    for timed in events {
        room.advance_to(timed.t_ms);
        let line = timed.line;
        let with_line = |e: RelayError| match e {
            RelayError::Script { .. } => e,
            other => RelayError::Script { line, message: other.to_string() },
        };
        match timed.event {
            Event::Join(name) => room.join(name).map_err(with_line)?,
            Event::Leave(name) => room.leave(name).map_err(with_line)?,
            Event::Publish { name, ssrc, seq, kind, payload_len } => {
                let packet = MediaPacket::new(
                    ssrc,
                    seq,
                    (timed.t_ms & 0xffff) as u16,
                    kind,
                    synth_payload(ssrc, seq, payload_len),
                );
                room.publish(name, packet).map_err(with_line)?;
            }
            Event::Post { name, body } => room.post_text(name, body).map_err(with_line)?,
            Event::Sink { kinds, capacity } => {
                let handle = match capacity {
                    Some(c) => room.attach_sink_with_capacity(kinds, c),
                    None => room.attach_sink(kinds),
                };
                sinks.push(handle);
            }
            Event::Drain { sink, max } => {
                let handle = sinks.get(sink).ok_or(RelayError::Script {
                    line,
                    message: format!("sink {sink} not attached"),
                })?;
                let drained = handle.drain(max);
                drains.push((sink, drained.iter().map(|p| (p.ssrc, p.seq)).collect()));
            }
        }
    }
    room.finish();
    Ok(DeliveryTrace {
        deliveries: room.deliveries().to_vec(),
        text_log: room.read_text(0).to_vec(),
        counters: *room.counters(),
        drains,
    })
}

/// Parameters for the seeded scenario generator.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub publishers: usize,
    pub subscribers: usize,
    /// Total packets across all publishers.
    pub packets: usize,
    /// Fraction of packets displaced from their natural position.
    pub reorder_fraction: f64,
    /// Max displacement distance, in packets (must stay inside the room's
    /// reorder window for loss-free runs).
    pub reorder_span: usize,
    /// Insert a mid-stream join and a mid-stream leave.
    pub churn: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            publishers: 3,
            subscribers: 5,
            packets: 10_000,
            reorder_fraction: 0.2,
            reorder_span: 16,
            churn: true,
            seed: 0,
        }
    }
}

/// Builds a deterministic script: all participants join up front (except a
/// late joiner under churn), publishers emit interleaved packets with
/// seeded local reordering, text posts are sprinkled in, and one
/// subscriber leaves mid-stream under churn.
pub fn generate_script(spec: &ScenarioSpec) -> String {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);

    let mut out = String::new();
    let publishers: Vec<String> = (0..spec.publishers).map(|i| format!("P{i}")).collect();
    let subscribers: Vec<String> = (0..spec.subscribers).map(|i| format!("S{i}")).collect();

    let mut t = 0u64;
    for name in publishers.iter().chain(&subscribers) {
        writeln!(out, "{t} join {name}").expect("write");
        t += 1;
    }

    // Per-publisher seq streams with bounded displacement: sort positions
    // by (i + displacement) to reorder locally.
    let per_publisher = spec.packets / spec.publishers.max(1);
    let mut streams: Vec<Vec<u16>> = Vec::new();
    for _ in 0..spec.publishers {
        let mut keyed: Vec<(f64, u16)> = (0..per_publisher)
            .map(|i| {
                let displaced = if rng.gen_bool(spec.reorder_fraction) {
                    i as f64 + rng.gen_range(1.0..=spec.reorder_span.max(1) as f64)
                } else {
                    i as f64
                };
                (displaced, i as u16)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        streams.push(keyed.into_iter().map(|(_, seq)| seq).collect());
    }

    let total = per_publisher * spec.publishers;
    let join_at = total * 2 / 5;
    let leave_at = total * 7 / 10;
    let mut emitted = 0usize;
    let mut cursors = vec![0usize; spec.publishers];
    while emitted < total {
        let p = emitted % spec.publishers;
        if cursors[p] >= streams[p].len() {
            break;
        }
        if spec.churn && emitted == join_at && spec.subscribers > 0 {
            writeln!(out, "{t} join SLate").expect("write");
            t += 1;
        }
        if spec.churn && emitted == leave_at && spec.subscribers > 1 {
            writeln!(out, "{t} leave S1").expect("write");
            t += 1;
        }
        let seq = streams[p][cursors[p]];
        cursors[p] += 1;
        let ssrc = 1000 + p as u32;
        let kind = if p % 2 == 0 { "video" } else { "audio" };
        writeln!(out, "{t} publish P{p} {ssrc} {seq} {kind} 32").expect("write");
        if emitted % 500 == 250 {
            // publishers never leave, so they can always post
            let poster = &publishers[emitted / 500 % spec.publishers.max(1)];
            writeln!(out, "{t} post {poster} checkpoint {emitted}").expect("write");
        }
        t += 1;
        emitted += 1;
    }
    out
}
