//! Binary V2X messages.
//!
//! Layout: a 16-byte header (`DMF1`, version u16, kind u16, sender u32,
//! receiver u32) followed by a little-endian body. An object is a u16
//! category plus seven f64 (center, extents, yaw); a scored object adds an
//! f64 score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::Traffic;
use crate::fedlearn::ModelParams;
use crate::fusion::ScoredDetection;
use crate::geometry::{ObjectState, Pose};

pub const MAGIC: [u8; 4] = *b"DMF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
/// Receiver id of a broadcast.
pub const BROADCAST: u32 = u32::MAX;
/// Receiver id of the edge server.
pub const EDGE: u32 = u32::MAX - 1;
pub const OBJECT_LEN: usize = 2 + 7 * 8;
pub const SCORED_OBJECT_LEN: usize = OBJECT_LEN + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    LocalMapUpload = 1,
    GlobalMapBroadcast = 2,
    ParamsUpload = 3,
    ParamsBroadcast = 4,
    LabelBroadcast = 5,
    /// Frame time and vehicle pose, sent next to every local map.
    PoseUpload = 6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::LocalMapUpload,
        MessageKind::GlobalMapBroadcast,
        MessageKind::ParamsUpload,
        MessageKind::ParamsBroadcast,
        MessageKind::LabelBroadcast,
        MessageKind::PoseUpload,
    ];

    fn from_code(code: u16) -> Option<Self> {
        MessageKind::ALL.into_iter().find(|k| *k as u16 == code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Detections in the sender's local frame.
    LocalMapUpload(Vec<ScoredDetection>),
    /// Fused objects in the global frame.
    GlobalMapBroadcast(Vec<ScoredDetection>),
    ParamsUpload {
        round: u32,
        params: ModelParams,
    },
    ParamsBroadcast {
        round: u32,
        params: ModelParams,
    },
    /// Optional label per detection of the receiver, in its local frame.
    LabelBroadcast(Vec<Option<ObjectState>>),
    PoseUpload {
        frame_time: f64,
        pose: Pose,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::LocalMapUpload(_) => MessageKind::LocalMapUpload,
            Payload::GlobalMapBroadcast(_) => MessageKind::GlobalMapBroadcast,
            Payload::ParamsUpload { .. } => MessageKind::ParamsUpload,
            Payload::ParamsBroadcast { .. } => MessageKind::ParamsBroadcast,
            Payload::LabelBroadcast(_) => MessageKind::LabelBroadcast,
            Payload::PoseUpload { .. } => MessageKind::PoseUpload,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct V2xMessage {
    pub sender: u32,
    pub receiver: u32,
    pub payload: Payload,
}

impl V2xMessage {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// Encoded length without encoding.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + match &self.payload {
                Payload::LocalMapUpload(d) | Payload::GlobalMapBroadcast(d) => 4 + d.len() * SCORED_OBJECT_LEN,
                Payload::ParamsUpload { params, .. } | Payload::ParamsBroadcast { params, .. } => 8 + 8 * params.len(),
                Payload::LabelBroadcast(l) => 4 + l.iter().map(|x| 1 + if x.is_some() { OBJECT_LEN } else { 0 }).sum::<usize>(),
                Payload::PoseUpload { .. } => 5 * 8,
            }
    }
}

fn put_object(out: &mut Vec<u8>, o: &ObjectState) {
    out.extend_from_slice(&o.category.to_le_bytes());
    for v in o.center.iter().chain(&o.extents).chain(std::iter::once(&o.yaw)) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_count(out: &mut Vec<u8>, n: usize) {
    let n = u32::try_from(n).expect("message item count fits in u32");
    out.extend_from_slice(&n.to_le_bytes());
}

pub fn encode(msg: &V2xMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(msg.kind() as u16).to_le_bytes());
    out.extend_from_slice(&msg.sender.to_le_bytes());
    out.extend_from_slice(&msg.receiver.to_le_bytes());
    match &msg.payload {
        Payload::LocalMapUpload(dets) | Payload::GlobalMapBroadcast(dets) => {
            put_count(&mut out, dets.len());
            for d in dets {
                put_object(&mut out, &d.state);
                out.extend_from_slice(&d.score.to_le_bytes());
            }
        }
        Payload::ParamsUpload { round, params } | Payload::ParamsBroadcast { round, params } => {
            out.extend_from_slice(&round.to_le_bytes());
            put_count(&mut out, params.len());
            for v in &params.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::LabelBroadcast(labels) => {
            put_count(&mut out, labels.len());
            for l in labels {
                match l {
                    Some(o) => {
                        out.push(1);
                        put_object(&mut out, o);
                    }
                    None => out.push(0),
                }
            }
        }
        Payload::PoseUpload { frame_time, pose } => {
            for v in [*frame_time, pose.position[0], pose.position[1], pose.position[2], pose.heading] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), msg.encoded_len());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Decode {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, have {}", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// Reads an item count and checks the body can hold that many items.
    fn count(&mut self, item_len: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n.saturating_mul(item_len) > self.bytes.len() - self.pos {
            return Err(Error::Decode {
                offset: at,
                reason: format!("{what} count {n} exceeds the remaining {} bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(n)
    }

    fn object(&mut self) -> Result<ObjectState> {
        let category = self.u16("object category")?;
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = self.f64("object field")?;
        }
        Ok(ObjectState {
            category,
            center: [v[0], v[1], v[2]],
            extents: [v[3], v[4], v[5]],
            yaw: v[6],
        })
    }

    fn scored(&mut self) -> Result<Vec<ScoredDetection>> {
        let n = self.count(SCORED_OBJECT_LEN, "detection")?;
        (0..n)
            .map(|_| {
                let state = self.object()?;
                let score = self.f64("score")?;
                Ok(ScoredDetection { state, score })
            })
            .collect()
    }

    fn params(&mut self) -> Result<(u32, ModelParams)> {
        let round = self.u32("round")?;
        let n = self.count(8, "parameter")?;
        let values = (0..n).map(|_| self.f64("parameter")).collect::<Result<Vec<_>>>()?;
        Ok((round, ModelParams { values }))
    }
}

pub fn decode(bytes: &[u8]) -> Result<V2xMessage> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Decode {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Decode {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let code = r.u16("kind")?;
    let kind = MessageKind::from_code(code).ok_or_else(|| Error::Decode {
        offset: 6,
        reason: format!("unknown message kind {code}"),
    })?;
    let sender = r.u32("sender")?;
    let receiver = r.u32("receiver")?;
    let payload = match kind {
        MessageKind::LocalMapUpload => Payload::LocalMapUpload(r.scored()?),
        MessageKind::GlobalMapBroadcast => Payload::GlobalMapBroadcast(r.scored()?),
        MessageKind::ParamsUpload => {
            let (round, params) = r.params()?;
            Payload::ParamsUpload { round, params }
        }
        MessageKind::ParamsBroadcast => {
            let (round, params) = r.params()?;
            Payload::ParamsBroadcast { round, params }
        }
        MessageKind::LabelBroadcast => {
            let n = r.count(1, "label")?;
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let at = r.pos;
                labels.push(match r.u8("label flag")? {
                    0 => None,
                    1 => Some(r.object()?),
                    f => {
                        return Err(Error::Decode {
                            offset: at,
                            reason: format!("bad label flag {f}"),
                        })
                    }
                });
            }
            Payload::LabelBroadcast(labels)
        }
        MessageKind::PoseUpload => {
            let frame_time = r.f64("frame time")?;
            let x = r.f64("pose")?;
            let y = r.f64("pose")?;
            let z = r.f64("pose")?;
            let heading = r.f64("pose")?;
            Payload::PoseUpload {
                frame_time,
                pose: Pose::new([x, y, z], heading),
            }
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Decode {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(V2xMessage { sender, receiver, payload })
}

/// Message and byte counts per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteLedger {
    pub by_kind: BTreeMap<MessageKind, Traffic>,
}

impl ByteLedger {
    pub fn record(&mut self, kind: MessageKind, bytes: usize) {
        let t = self.by_kind.entry(kind).or_default();
        t.messages += 1;
        t.bytes += bytes as u64;
    }

    /// Records an encoded message, reading its kind from the header.
    pub fn record_encoded(&mut self, bytes: &[u8]) -> Result<()> {
        let code = bytes
            .get(6..8)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .and_then(MessageKind::from_code)
            .ok_or_else(|| Error::Decode {
                offset: 6,
                reason: "missing or unknown message kind".into(),
            })?;
        self.record(code, bytes.len());
        Ok(())
    }

    pub fn merge(&mut self, other: &ByteLedger) {
        for (k, t) in &other.by_kind {
            let e = self.by_kind.entry(*k).or_default();
            e.messages += t.messages;
            e.bytes += t.bytes;
        }
    }

    pub fn total(&self) -> Traffic {
        self.by_kind.values().fold(Traffic::default(), |a, t| Traffic {
            messages: a.messages + t.messages,
            bytes: a.bytes + t.bytes,
        })
    }
}
