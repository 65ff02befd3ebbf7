//! Synthetic GOP-structured video streams and packet trace files.
//!
//! Trace files are UTF-8 CSV with LF line endings and the header
//! `flow,seq,arrival_ms,delta,deadline_ms`. Rows of a flow must carry
//! consecutive sequence numbers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Millis, Packet, PacketId, PacketState};

pub const TRACE_HEADER: [&str; 5] = ["flow", "seq", "arrival_ms", "delta", "deadline_ms"];

#[derive(Debug, Clone, PartialEq)]
pub struct StreamProfile {
    /// Bits per second.
    pub rate: f64,
    pub fps: f64,
    /// Frames per group of pictures; frame 0 of each GOP is the I-frame.
    pub gop: u32,
    pub packet_size: u32,
    pub delay_budget: Millis,
    pub delta_i: f64,
    pub delta_p_base: f64,
    pub delta_p_decay: f64,
    /// Offset of the first packet, used to stagger flows.
    pub phase: Millis,
}

impl Default for StreamProfile {
    fn default() -> Self {
        StreamProfile {
            rate: 70_000.0,
            fps: 30.0,
            gop: 10,
            packet_size: 250,
            delay_budget: 100.0,
            delta_i: 4.0,
            delta_p_base: 1.0,
            delta_p_decay: 1.0,
            phase: 0.0,
        }
    }
}

impl StreamProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad("traffic rate must be positive");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if self.gop == 0 {
            return bad("gop must be positive");
        }
        if self.packet_size == 0 {
            return bad("packet size must be positive");
        }
        if !(self.delay_budget > 0.0 && self.delay_budget.is_finite()) {
            return bad("delay budget must be positive");
        }
        if !(self.delta_p_base > 0.0 && self.delta_i >= self.delta_p_base && self.delta_i.is_finite()) {
            return bad("need delta_i >= delta_p_base > 0");
        }
        if !(self.delta_p_decay > 0.0 && self.delta_p_decay <= 1.0) {
            return bad("delta_p_decay must be in (0, 1]");
        }
        if !(self.phase >= 0.0 && self.phase.is_finite()) {
            return bad("phase must be non-negative");
        }
        Ok(())
    }

    /// Packets per second.
    pub fn packet_rate(&self) -> f64 {
        self.rate / 8.0 / self.packet_size as f64
    }

    pub fn packet_interval(&self) -> Millis {
        1000.0 / self.packet_rate()
    }

    fn delta_for_frame(&self, frame: u64) -> f64 {
        let pos = (frame % self.gop as u64) as i32;
        if pos == 0 {
            self.delta_i
        } else {
            self.delta_p_base * self.delta_p_decay.powi(pos)
        }
    }
}

/// Number of packets of a CBR stream arriving in `[phase, duration)`.
fn packet_count(profile: &StreamProfile, duration: Millis) -> u64 {
    let span = duration - profile.phase;
    if span <= 0.0 {
        return 0;
    }
    let x = span / profile.packet_interval();
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Constant-bit-rate packetization of one flow over `[0, duration)`.
///
/// Packet `k` arrives at `phase + k * interval` and belongs to frame
/// `floor(k * fps / packet_rate)`. I-frame packets get `delta_i`; P-frame
/// packets at GOP position `j` get `delta_p_base * decay^j`.
pub fn generate_stream(profile: &StreamProfile, flow: u32, duration: Millis) -> Result<Vec<Packet>> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Config(format!(
            "stream duration must be positive, got {duration}"
        )));
    }
    profile.validate()?;
    let interval = profile.packet_interval();
    let frames_per_packet = profile.fps / profile.packet_rate();
    let packets = (0..packet_count(profile, duration))
        .map(|k| {
            let arrival = profile.phase + k as f64 * interval;
            let frame = (k as f64 * frames_per_packet + 1e-9).floor() as u64;
            Packet {
                id: PacketId::new(flow, k),
                target: flow as usize,
                size: profile.packet_size,
                arrival_time: arrival,
                deadline: arrival + profile.delay_budget,
                delta: profile.delta_for_frame(frame),
                state: PacketState::Active,
            }
        })
        .collect();
    Ok(packets)
}

/// Rescales one flow's weights to unit mean.
pub fn normalize_deltas(packets: &mut [Packet]) {
    if packets.is_empty() {
        return;
    }
    let mean = packets.iter().map(|p| p.delta).sum::<f64>() / packets.len() as f64;
    if mean > 0.0 {
        for p in packets.iter_mut() {
            p.delta /= mean;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub flow: u32,
    pub seq: u64,
    pub arrival_ms: f64,
    pub delta: f64,
    pub deadline_ms: f64,
}

impl TraceRecord {
    fn from_packet(p: &Packet) -> Self {
        TraceRecord {
            flow: p.id.flow,
            seq: p.id.seq,
            arrival_ms: p.arrival_time,
            delta: p.delta,
            deadline_ms: p.deadline,
        }
    }

    fn into_packet(self, packet_size: u32) -> Packet {
        Packet {
            id: PacketId::new(self.flow, self.seq),
            target: self.flow as usize,
            size: packet_size,
            arrival_time: self.arrival_ms,
            deadline: self.deadline_ms,
            delta: self.delta,
            state: PacketState::Active,
        }
    }
}

pub type FlowTraces = BTreeMap<u32, Vec<Packet>>;

/// Parses trace CSV from any reader.
pub fn read_trace<R: Read>(reader: R, packet_size: u32) -> Result<FlowTraces> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header_err = |msg: String| Error::Trace { line: 1, msg };
    let headers = rdr.headers().map_err(|e| header_err(e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(TRACE_HEADER.iter().copied()) {
        return Err(header_err(format!(
            "expected header `{}`, found `{}`",
            TRACE_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut flows: FlowTraces = BTreeMap::new();
    for result in rdr.records() {
        let row = result.map_err(|e| Error::Trace {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let record: TraceRecord = row.deserialize(None).map_err(|e| Error::Trace {
            line,
            msg: e.to_string(),
        })?;
        let fail = |msg: String| Err(Error::Trace { line, msg });
        if !(record.arrival_ms.is_finite() && record.arrival_ms >= 0.0) {
            return fail(format!(
                "arrival_ms must be finite and non-negative, got {}",
                record.arrival_ms
            ));
        }
        if !(record.deadline_ms.is_finite() && record.deadline_ms > record.arrival_ms) {
            return fail(format!(
                "deadline_ms {} must exceed arrival_ms {}",
                record.deadline_ms, record.arrival_ms
            ));
        }
        if !(record.delta.is_finite() && record.delta >= 0.0) {
            return fail(format!("delta must be finite and non-negative, got {}", record.delta));
        }
        let seq_list = flows.entry(record.flow).or_default();
        if let Some(prev) = seq_list.last() {
            if record.seq <= prev.id.seq {
                return fail(format!(
                    "flow {} seq {} does not increase (previous {})",
                    record.flow, record.seq, prev.id.seq
                ));
            }
            if record.seq != prev.id.seq + 1 {
                return fail(format!(
                    "flow {} seq jumps from {} to {}",
                    record.flow, prev.id.seq, record.seq
                ));
            }
        }
        seq_list.push(record.into_packet(packet_size));
    }
    Ok(flows)
}

pub fn parse_trace(text: &str, packet_size: u32) -> Result<FlowTraces> {
    read_trace(text.as_bytes(), packet_size)
}

pub fn load_trace(path: impl AsRef<Path>, packet_size: u32) -> Result<FlowTraces> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(std::io::BufReader::new(file), packet_size).map_err(|e| match e {
        Error::Trace { line, msg } => Error::Trace {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Writes packets as trace CSV, flows in the order given.
pub fn write_trace<'a, W: Write>(writer: W, packets: impl IntoIterator<Item = &'a Packet>) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for p in packets {
        w.serialize(TraceRecord::from_packet(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace<'a>(path: impl AsRef<Path>, packets: impl IntoIterator<Item = &'a Packet>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(std::io::BufWriter::new(file), packets).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}
