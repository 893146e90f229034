//! Sensor-node ↔ inference-host telemetry.
//!
//! ```text
//! FramePacket (122 bytes)
//!   0  "DGTC"
//!   4  version u8 = 1
//!   5  flags u8           bit0: sender saw ground contact
//!   6  seq u32
//!  10  timestamp_us u64
//!  18  readings [u8; 100] row-major
//! 118  crc32 u32          over bytes 0..118
//!
//! PredictionMsg (30 bytes)
//!   0  "DGTP"
//!   4  version u8 = 1
//!   5  seq u32            echoed from the frame
//!   9  class_id u8        0xFF acknowledges a frame without contact
//!  10  probs [u16; 8]     round(p * 65535)
//!  26  crc32 u32          over bytes 0..26
//! ```
//!
//! Integers are little-endian. Both messages have a fixed size, so a byte
//! stream needs no framing beyond reading whole packets.

use std::io::{self, ErrorKind, Read, Write};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::gait::{on_footstep, Decision, GaitId, GaitPolicy, GaitState};
use crate::nn::model::predict;
use crate::nn::{ClassPrediction, ModelParams, NnError};
use crate::sensor::{contact_detected, TactileFrame, DEFAULT_MIN_ACTIVE_TAXELS, TAXELS};
use crate::textures::NUM_CLASSES;

pub const FRAME_MAGIC: [u8; 4] = *b"DGTC";
pub const PREDICTION_MAGIC: [u8; 4] = *b"DGTP";
pub const VERSION: u8 = 1;
pub const FRAME_LEN: usize = 122;
pub const PREDICTION_LEN: usize = 30;
pub const FLAG_CONTACT: u8 = 0x01;
/// `class_id` of the reply to a frame sent without the contact flag.
pub const NO_CONTACT_CLASS: u8 = 0xFF;
pub const DEFAULT_RATE_HZ: f64 = 120.0;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("truncated packet: {got} of {need} bytes")]
    Truncated { got: usize, need: usize },
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("transport: {0}")]
    Transport(#[from] io::Error),
    #[error("inference failed: {0}")]
    Inference(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePacket {
    pub flags: u8,
    pub seq: u32,
    pub timestamp_us: u64,
    pub readings: [u8; TAXELS],
}

impl FramePacket {
    pub fn new(frame: &TactileFrame, seq: u32, timestamp_us: u64, contact: bool) -> Self {
        FramePacket {
            flags: if contact { FLAG_CONTACT } else { 0 },
            seq,
            timestamp_us,
            readings: frame.readings,
        }
    }

    pub fn contact(&self) -> bool {
        self.flags & FLAG_CONTACT != 0
    }

    pub fn frame(&self) -> TactileFrame {
        TactileFrame::from_readings(self.readings)
    }

    pub fn encode(&self) -> [u8; FRAME_LEN] {
        let mut b = [0u8; FRAME_LEN];
        b[0..4].copy_from_slice(&FRAME_MAGIC);
        b[4] = VERSION;
        b[5] = self.flags;
        b[6..10].copy_from_slice(&self.seq.to_le_bytes());
        b[10..18].copy_from_slice(&self.timestamp_us.to_le_bytes());
        b[18..118].copy_from_slice(&self.readings);
        let crc = crc32fast::hash(&b[..118]);
        b[118..].copy_from_slice(&crc.to_le_bytes());
        b
    }

    /// Decodes the first 122 bytes of `bytes`; anything after is ignored.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let b = check_envelope(bytes, FRAME_LEN, FRAME_MAGIC)?;
        Ok(FramePacket {
            flags: b[5],
            seq: u32::from_le_bytes(b[6..10].try_into().unwrap()),
            timestamp_us: u64::from_le_bytes(b[10..18].try_into().unwrap()),
            readings: b[18..118].try_into().unwrap(),
        })
    }
}

pub fn encode_frame(
    frame: &TactileFrame,
    seq: u32,
    timestamp_us: u64,
    contact: bool,
) -> [u8; FRAME_LEN] {
    FramePacket::new(frame, seq, timestamp_us, contact).encode()
}

pub fn decode_frame(bytes: &[u8]) -> Result<FramePacket, WireError> {
    FramePacket::decode(bytes)
}

/// Length, magic, version, then CRC. Returns exactly `len` bytes.
fn check_envelope(bytes: &[u8], len: usize, magic: [u8; 4]) -> Result<&[u8], WireError> {
    if bytes.len() < len {
        return Err(WireError::Truncated {
            got: bytes.len(),
            need: len,
        });
    }
    let b = &bytes[..len];
    let m: [u8; 4] = b[..4].try_into().unwrap();
    if m != magic {
        return Err(WireError::BadMagic(m));
    }
    if b[4] != VERSION {
        return Err(WireError::BadVersion(b[4]));
    }
    let stored = u32::from_le_bytes(b[len - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&b[..len - 4]);
    if stored != computed {
        return Err(WireError::BadCrc { stored, computed });
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionMsg {
    pub seq: u32,
    pub class_id: u8,
    pub probs: [u16; NUM_CLASSES],
}

impl PredictionMsg {
    pub fn from_prediction(seq: u32, p: &ClassPrediction) -> Result<Self, WireError> {
        if p.probs.len() != NUM_CLASSES || p.class_id >= NUM_CLASSES {
            return Err(WireError::Invalid(format!(
                "prediction has {} classes and class_id {}",
                p.probs.len(),
                p.class_id
            )));
        }
        Ok(PredictionMsg {
            seq,
            class_id: p.class_id as u8,
            probs: std::array::from_fn(|i| (p.probs[i].clamp(0.0, 1.0) * 65535.0).round() as u16),
        })
    }

    pub fn no_contact(seq: u32) -> Self {
        PredictionMsg {
            seq,
            class_id: NO_CONTACT_CLASS,
            probs: [0; NUM_CLASSES],
        }
    }

    pub fn is_no_contact(&self) -> bool {
        self.class_id == NO_CONTACT_CLASS
    }

    pub fn probabilities(&self) -> [f64; NUM_CLASSES] {
        self.probs.map(|q| f64::from(q) / 65535.0)
    }

    pub fn encode(&self) -> [u8; PREDICTION_LEN] {
        let mut b = [0u8; PREDICTION_LEN];
        b[0..4].copy_from_slice(&PREDICTION_MAGIC);
        b[4] = VERSION;
        b[5..9].copy_from_slice(&self.seq.to_le_bytes());
        b[9] = self.class_id;
        for (i, q) in self.probs.iter().enumerate() {
            b[10 + 2 * i..12 + 2 * i].copy_from_slice(&q.to_le_bytes());
        }
        let crc = crc32fast::hash(&b[..26]);
        b[26..].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let b = check_envelope(bytes, PREDICTION_LEN, PREDICTION_MAGIC)?;
        Ok(PredictionMsg {
            seq: u32::from_le_bytes(b[5..9].try_into().unwrap()),
            class_id: b[9],
            probs: std::array::from_fn(|i| u16::from_le_bytes([b[10 + 2 * i], b[11 + 2 * i]])),
        })
    }
}

/// Fills `buf` from `r`. Returns how many bytes were read; fewer than
/// `buf.len()` only at end of stream.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Reads prediction messages until end of stream.
pub fn read_predictions<R: Read>(mut r: R) -> Result<Vec<PredictionMsg>, WireError> {
    let mut out = Vec::new();
    let mut buf = [0u8; PREDICTION_LEN];
    loop {
        match read_full(&mut r, &mut buf)? {
            0 => return Ok(out),
            PREDICTION_LEN => out.push(PredictionMsg::decode(&buf)?),
            n => {
                return Err(WireError::Truncated {
                    got: n,
                    need: PREDICTION_LEN,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmulatorConfig {
    pub rate_hz: f64,
    /// Stop once the next send time would reach this.
    pub duration: Option<Duration>,
    pub max_packets: Option<u64>,
    pub start_seq: u32,
    /// Threshold for the contact flag.
    pub min_active_taxels: usize,
    /// Sleep until each packet's scheduled time. Off sends back to back.
    pub realtime: bool,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            rate_hz: DEFAULT_RATE_HZ,
            duration: None,
            max_packets: None,
            start_seq: 0,
            min_active_taxels: DEFAULT_MIN_ACTIVE_TAXELS,
            realtime: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmulatorStats {
    pub sent: u64,
    pub contact: u64,
    pub last_seq: Option<u32>,
}

/// Streams frames as packets at `rate_hz`. Packet `i` is scheduled at
/// `i / rate_hz` seconds after start and stamped with that offset, so the
/// bytes on the wire do not depend on scheduling jitter. Sequence numbers
/// wrap at 2^32. Stops at the first of: source exhausted, `max_packets`
/// sent, `duration` reached.
pub fn sensor_emulator<I, W>(
    frames: I,
    config: &EmulatorConfig,
    mut out: W,
) -> Result<EmulatorStats, WireError>
where
    I: IntoIterator<Item = TactileFrame>,
    W: Write,
{
    if !(config.rate_hz.is_finite() && config.rate_hz > 0.0) {
        return Err(WireError::Invalid(format!(
            "rate must be positive, got {}",
            config.rate_hz
        )));
    }
    let start = Instant::now();
    let mut stats = EmulatorStats::default();
    let mut seq = config.start_seq;
    for (i, frame) in frames.into_iter().enumerate() {
        let i = i as u64;
        if config.max_packets.is_some_and(|m| i >= m) {
            break;
        }
        let at = Duration::from_secs_f64(i as f64 / config.rate_hz);
        if config.duration.is_some_and(|d| at >= d) {
            break;
        }
        if config.realtime {
            if let Some(wait) = at.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
        let contact = contact_detected(&frame, config.min_active_taxels);
        let pkt = encode_frame(&frame, seq, at.as_micros() as u64, contact);
        out.write_all(&pkt)?;
        stats.sent += 1;
        stats.contact += u64::from(contact);
        stats.last_seq = Some(seq);
        seq = seq.wrapping_add(1);
    }
    out.flush()?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointEvent {
    pub seq: u32,
    pub prediction: Option<ClassPrediction>,
    pub decision: Decision,
    pub gait: GaitId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EndpointReport {
    pub received: u64,
    pub classified: u64,
    pub acknowledged: u64,
    pub malformed: u64,
    /// One entry per valid packet, in arrival order.
    pub events: Vec<EndpointEvent>,
}

/// Serves one connection until end of stream. Valid contact frames are
/// classified, answered with a [`PredictionMsg`] and fed to the gait state
/// machine; frames without the contact flag get a no-contact reply; packets
/// that fail to decode are counted and dropped. `on_event` sees each event
/// as it happens.
pub fn inference_endpoint<R, W, F>(
    model: &ModelParams,
    policy: &GaitPolicy,
    initial_gait: GaitId,
    mut input: R,
    mut output: W,
    mut on_event: F,
) -> Result<EndpointReport, WireError>
where
    R: Read,
    W: Write,
    F: FnMut(&EndpointEvent),
{
    let mut report = EndpointReport::default();
    let mut state = GaitState::new(initial_gait);
    let mut buf = [0u8; FRAME_LEN];
    loop {
        let n = read_full(&mut input, &mut buf)?;
        if n == 0 {
            break;
        }
        report.received += 1;
        let pkt = match decode_frame(&buf[..n]) {
            Ok(p) => p,
            Err(_) => {
                report.malformed += 1;
                if n < FRAME_LEN {
                    break;
                }
                continue;
            }
        };
        let frame = pkt.frame();
        let event = if pkt.contact() {
            let p = predict(model, &frame)?;
            output.write_all(&PredictionMsg::from_prediction(pkt.seq, &p)?.encode())?;
            report.classified += 1;
            let class = p.class_id;
            let (next, decision) = on_footstep(&state, policy, &frame, |_| Ok(class))
                .map_err(|e| WireError::Invalid(format!("gait update failed: {e}")))?;
            state = next;
            EndpointEvent {
                seq: pkt.seq,
                prediction: Some(p),
                decision,
                gait: state.current_gait,
            }
        } else {
            output.write_all(&PredictionMsg::no_contact(pkt.seq).encode())?;
            report.acknowledged += 1;
            state.steps_seen += 1;
            EndpointEvent {
                seq: pkt.seq,
                prediction: None,
                decision: Decision::NoContact,
                gait: state.current_gait,
            }
        };
        output.flush()?;
        on_event(&event);
        report.events.push(event);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(seed: u8) -> TactileFrame {
        TactileFrame::from_readings(std::array::from_fn(|i| {
            (i as u8).wrapping_mul(7).wrapping_add(seed)
        }))
    }

    #[test]
    fn header_bytes() {
        let b = encode_frame(&frame(0), 2, 0, true);
        assert_eq!(
            &b[..10],
            &[0x44, 0x47, 0x54, 0x43, 0x01, 0x01, 0x02, 0x00, 0x00, 0x00]
        );
        assert_eq!(b.len(), 122);
        let p = PredictionMsg::no_contact(7).encode();
        assert_eq!(
            &p[..10],
            &[0x44, 0x47, 0x54, 0x50, 0x01, 0x07, 0x00, 0x00, 0x00, 0xFF]
        );
    }

    #[test]
    fn crc_is_the_standard_reflected_one() {
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let good = encode_frame(&frame(3), 0xDEAD_BEEF, 123_456_789, true);
        for pos in 0..FRAME_LEN {
            for x in 1..=255u8 {
                let mut b = good;
                b[pos] ^= x;
                let err = decode_frame(&b).unwrap_err();
                match pos {
                    0..=3 => assert!(matches!(err, WireError::BadMagic(_)), "pos {pos}"),
                    4 => assert!(matches!(err, WireError::BadVersion(_)), "pos {pos}"),
                    _ => assert!(matches!(err, WireError::BadCrc { .. }), "pos {pos}"),
                }
            }
        }
    }

    #[test]
    fn flag_change_with_fresh_crc_is_valid() {
        let mut p = decode_frame(&encode_frame(&frame(1), 5, 9, true)).unwrap();
        p.flags = 0;
        let back = decode_frame(&p.encode()).unwrap();
        assert!(!back.contact());
    }

    #[test]
    fn short_and_long_input() {
        let b = encode_frame(&frame(1), 1, 1, false);
        assert!(matches!(
            decode_frame(&b[..121]),
            Err(WireError::Truncated {
                got: 121,
                need: 122
            })
        ));
        let mut long = b.to_vec();
        long.extend_from_slice(&[0xAA; 10]);
        assert_eq!(decode_frame(&long).unwrap(), decode_frame(&b).unwrap());
    }

    #[test]
    fn prediction_round_trip_and_sum() {
        let p = ClassPrediction::from_logits(&[0.3, -1.0, 2.0, 0.0, 0.7, 0.1, -0.2, 1.1]).unwrap();
        let m = PredictionMsg::from_prediction(41, &p).unwrap();
        let back = PredictionMsg::decode(&m.encode()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.class_id, 2);
        let s: f64 = back.probabilities().iter().sum();
        assert!((s - 1.0).abs() <= 2e-4, "{s}");
        let mut bad = m.encode();
        bad[12] ^= 1;
        assert!(matches!(
            PredictionMsg::decode(&bad),
            Err(WireError::BadCrc { .. })
        ));
    }

    #[test]
    fn pacing_one_hz() {
        let cfg = EmulatorConfig {
            rate_hz: 1.0,
            duration: Some(Duration::from_secs(3)),
            ..EmulatorConfig::default()
        };
        let mut out = Vec::new();
        let stats = sensor_emulator(std::iter::repeat(frame(0)), &cfg, &mut out).unwrap();
        assert_eq!(stats.sent, 3);
        let ts: Vec<u64> = out
            .chunks(FRAME_LEN)
            .map(|c| decode_frame(c).unwrap().timestamp_us)
            .collect();
        assert_eq!(ts, vec![0, 1_000_000, 2_000_000]);
    }

    #[test]
    fn sequence_wraps() {
        let cfg = EmulatorConfig {
            start_seq: u32::MAX - 1,
            max_packets: Some(4),
            realtime: false,
            ..EmulatorConfig::default()
        };
        let mut out = Vec::new();
        sensor_emulator(std::iter::repeat(frame(0)), &cfg, &mut out).unwrap();
        let seqs: Vec<u32> = out
            .chunks(FRAME_LEN)
            .map(|c| decode_frame(c).unwrap().seq)
            .collect();
        assert_eq!(seqs, vec![u32::MAX - 1, u32::MAX, 0, 1]);
    }

    #[test]
    fn contact_flag_follows_threshold() {
        let mut r = [0u8; TAXELS];
        r[..4].fill(9);
        let cfg = EmulatorConfig {
            max_packets: Some(2),
            realtime: false,
            ..EmulatorConfig::default()
        };
        let mut out = Vec::new();
        let frames = [TactileFrame::from_readings(r), frame(1)];
        let stats = sensor_emulator(frames, &cfg, &mut out).unwrap();
        assert_eq!(stats.contact, 1);
        assert!(!decode_frame(&out[..FRAME_LEN]).unwrap().contact());
        assert!(decode_frame(&out[FRAME_LEN..]).unwrap().contact());
    }

    proptest! {
        #[test]
        fn frame_round_trip(readings in prop::array::uniform32(any::<u8>()), seq: u32, ts: u64, contact: bool) {
            let mut r = [0u8; TAXELS];
            for (i, v) in r.iter_mut().enumerate() {
                *v = readings[i % 32].wrapping_add(i as u8);
            }
            let f = TactileFrame::from_readings(r);
            let p = decode_frame(&encode_frame(&f, seq, ts, contact)).unwrap();
            prop_assert_eq!(p, FramePacket::new(&f, seq, ts, contact));
            prop_assert_eq!(p.frame().readings, r);
        }

        #[test]
        fn decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_frame(&bytes);
            let _ = PredictionMsg::decode(&bytes);
        }
    }
}
