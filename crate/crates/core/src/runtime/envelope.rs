//! Transport-independent sync envelope and its wire framing.
//!
//! Frame layout (little-endian throughout):
//!
//! ```text
//! offset 0   magic  "FDPB"
//! offset 4   version (1)
//! offset 5   msg_type
//! offset 6   body length u32
//! offset 10  body: agent_id u32 | round u64 | d u32 | payload f64 × k
//! ```
//!
//! The payload real count `k` is fixed per message type and dimension:
//! symmetric matrices travel as full row-major `d²` blocks (simplicity
//! over the `d(d+1)/2` packing; a possible optimization, not a contract).

use std::io::{Read, Write};

use thiserror::Error;

use crate::linalg::{SymMatrix, Vector};

pub const MAGIC: [u8; 4] = *b"FDPB";
pub const VERSION: u8 = 1;
const BODY_FIXED: usize = 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported protocol version {version} at byte {offset}")]
    BadVersion { version: u8, offset: usize },
    #[error("unknown message type {value} at byte {offset}")]
    UnknownMsgType { value: u8, offset: usize },
    #[error("truncated frame at byte {offset}: need {needed} bytes, have {have}")]
    Truncated {
        offset: usize,
        needed: usize,
        have: usize,
    },
    #[error("payload of {got} reals does not match schema {expected} for {msg_type:?} with d={d}")]
    SchemaMismatch {
        msg_type: MsgType,
        d: u32,
        expected: usize,
        got: usize,
    },
    #[error("non-finite payload real at index {index}")]
    NonFinite { index: usize },
    #[error("frame io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    /// Agent introduces itself after connecting.
    Hello = 0,
    /// Round coordination. Agent → server: the determinant trigger flag.
    /// Server → agent: whether a communication round starts.
    SyncRequest = 1,
    /// Agent → server: fresh gram/moment accumulators.
    DeltaUpload = 2,
    /// Server → agent: pooled gram/moment totals.
    SyncBroadcast = 3,
    /// Agent → server: local model, drift gradient, pair gram.
    PrefUpload = 4,
    /// Server → agent: global model, pooled pair gram.
    ModelBroadcast = 5,
    /// Orderly teardown.
    Bye = 6,
}

impl MsgType {
    pub fn from_u8(value: u8) -> Option<Self> {
        Some(match value {
            0 => Self::Hello,
            1 => Self::SyncRequest,
            2 => Self::DeltaUpload,
            3 => Self::SyncBroadcast,
            4 => Self::PrefUpload,
            5 => Self::ModelBroadcast,
            6 => Self::Bye,
            _ => return None,
        })
    }

    /// Expected payload real count for dimension `d`.
    pub fn payload_reals(self, d: usize) -> usize {
        match self {
            Self::Hello | Self::Bye => 0,
            Self::SyncRequest => 1,
            Self::DeltaUpload | Self::SyncBroadcast => d * d + d,
            Self::PrefUpload => d * d + 2 * d,
            Self::ModelBroadcast => d * d + d,
        }
    }

    /// Whether the payload is algorithm data (counted by the ledger)
    /// rather than coordination.
    pub fn carries_data(self) -> bool {
        matches!(
            self,
            Self::DeltaUpload | Self::SyncBroadcast | Self::PrefUpload | Self::ModelBroadcast
        )
    }
}

/// One message between an agent and the server, in either direction.
/// Server-sent envelopes carry the destination agent's id.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncEnvelope {
    pub msg_type: MsgType,
    pub agent_id: u32,
    pub round: u64,
    pub d: u32,
    pub payload: Vec<f64>,
}

impl SyncEnvelope {
    pub fn hello(agent_id: u32, d: usize) -> Self {
        Self {
            msg_type: MsgType::Hello,
            agent_id,
            round: 0,
            d: d as u32,
            payload: Vec::new(),
        }
    }

    pub fn bye(agent_id: u32, round: u64, d: usize) -> Self {
        Self {
            msg_type: MsgType::Bye,
            agent_id,
            round,
            d: d as u32,
            payload: Vec::new(),
        }
    }

    pub fn sync_request(agent_id: u32, round: u64, d: usize, flag: bool) -> Self {
        Self {
            msg_type: MsgType::SyncRequest,
            agent_id,
            round,
            d: d as u32,
            payload: vec![if flag { 1.0 } else { 0.0 }],
        }
    }

    pub fn delta_upload(agent_id: u32, round: u64, gram: &SymMatrix, moment: &Vector) -> Self {
        let mut payload = Vec::with_capacity(gram.as_slice().len() + moment.dim());
        payload.extend_from_slice(gram.as_slice());
        payload.extend(moment.iter());
        Self {
            msg_type: MsgType::DeltaUpload,
            agent_id,
            round,
            d: gram.dim() as u32,
            payload,
        }
    }

    pub fn sync_broadcast(agent_id: u32, round: u64, gram: &SymMatrix, moment: &Vector) -> Self {
        let mut env = Self::delta_upload(agent_id, round, gram, moment);
        env.msg_type = MsgType::SyncBroadcast;
        env
    }

    pub fn pref_upload(
        agent_id: u32,
        round: u64,
        model: &Vector,
        drift: &Vector,
        pair_gram: &SymMatrix,
    ) -> Self {
        let d = model.dim();
        let mut payload = Vec::with_capacity(2 * d + d * d);
        payload.extend(model.iter());
        payload.extend(drift.iter());
        payload.extend_from_slice(pair_gram.as_slice());
        Self {
            msg_type: MsgType::PrefUpload,
            agent_id,
            round,
            d: d as u32,
            payload,
        }
    }

    pub fn model_broadcast(
        agent_id: u32,
        round: u64,
        model: &Vector,
        pair_gram: &SymMatrix,
    ) -> Self {
        let d = model.dim();
        let mut payload = Vec::with_capacity(d + d * d);
        payload.extend(model.iter());
        payload.extend_from_slice(pair_gram.as_slice());
        Self {
            msg_type: MsgType::ModelBroadcast,
            agent_id,
            round,
            d: d as u32,
            payload,
        }
    }

    /// Payload bytes that count toward the communication ledger
    /// (algorithm data only; coordination frames count zero).
    pub fn data_payload_bytes(&self) -> u64 {
        if self.msg_type.carries_data() {
            8 * self.payload.len() as u64
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let expected = self.msg_type.payload_reals(self.d as usize);
        if self.payload.len() != expected {
            return Err(FrameError::SchemaMismatch {
                msg_type: self.msg_type,
                d: self.d,
                expected,
                got: self.payload.len(),
            });
        }
        if let Some(index) = self.payload.iter().position(|x| !x.is_finite()) {
            return Err(FrameError::NonFinite { index });
        }
        Ok(())
    }

    /// The coordination flag of a `SyncRequest`.
    pub fn flag(&self) -> bool {
        debug_assert_eq!(self.msg_type, MsgType::SyncRequest);
        self.payload.first().map(|x| *x != 0.0).unwrap_or(false)
    }

    /// Splits a `DeltaUpload`/`SyncBroadcast` payload into `(gram, moment)`.
    pub fn unpack_gram_vec(&self) -> Result<(SymMatrix, Vector), FrameError> {
        self.validate()?;
        let d = self.d as usize;
        let gram = SymMatrix::from_row_major(d, self.payload[..d * d].to_vec())
            .expect("length checked by validate");
        let moment = Vector::from_vec(self.payload[d * d..].to_vec());
        Ok((gram, moment))
    }

    /// Splits a `PrefUpload` payload into `(model, drift, pair gram)`.
    pub fn unpack_pref_upload(&self) -> Result<(Vector, Vector, SymMatrix), FrameError> {
        self.validate()?;
        let d = self.d as usize;
        let model = Vector::from_vec(self.payload[..d].to_vec());
        let drift = Vector::from_vec(self.payload[d..2 * d].to_vec());
        let gram = SymMatrix::from_row_major(d, self.payload[2 * d..].to_vec())
            .expect("length checked by validate");
        Ok((model, drift, gram))
    }

    /// Splits a `ModelBroadcast` payload into `(model, pair gram)`.
    pub fn unpack_model_broadcast(&self) -> Result<(Vector, SymMatrix), FrameError> {
        self.validate()?;
        let d = self.d as usize;
        let model = Vector::from_vec(self.payload[..d].to_vec());
        let gram = SymMatrix::from_row_major(d, self.payload[d..].to_vec())
            .expect("length checked by validate");
        Ok((model, gram))
    }
}

/// Encodes one envelope as a self-delimiting frame.
pub fn encode_envelope(env: &SyncEnvelope) -> Result<Vec<u8>, FrameError> {
    env.validate()?;
    let body_len = BODY_FIXED + 8 * env.payload.len();
    let mut out = Vec::with_capacity(10 + body_len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(env.msg_type as u8);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(&env.agent_id.to_le_bytes());
    out.extend_from_slice(&env.round.to_le_bytes());
    out.extend_from_slice(&env.d.to_le_bytes());
    for x in &env.payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Decodes exactly one frame. Trailing bytes are rejected as a length
/// mismatch so corrupt streams are caught early.
pub fn decode_envelope(bytes: &[u8]) -> Result<SyncEnvelope, FrameError> {
    if bytes.len() < 10 {
        return Err(FrameError::Truncated {
            offset: bytes.len(),
            needed: 10,
            have: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(FrameError::BadMagic { offset: 0 });
    }
    if bytes[4] != VERSION {
        return Err(FrameError::BadVersion {
            version: bytes[4],
            offset: 4,
        });
    }
    let msg_type = MsgType::from_u8(bytes[5]).ok_or(FrameError::UnknownMsgType {
        value: bytes[5],
        offset: 5,
    })?;
    let body_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() != 10 + body_len {
        return Err(FrameError::Truncated {
            offset: bytes.len().min(10 + body_len),
            needed: 10 + body_len,
            have: bytes.len(),
        });
    }
    if body_len < BODY_FIXED || !(body_len - BODY_FIXED).is_multiple_of(8) {
        return Err(FrameError::Truncated {
            offset: 10,
            needed: BODY_FIXED,
            have: body_len,
        });
    }
    let body = &bytes[10..];
    let agent_id = u32::from_le_bytes(body[0..4].try_into().unwrap());
    let round = u64::from_le_bytes(body[4..12].try_into().unwrap());
    let d = u32::from_le_bytes(body[12..16].try_into().unwrap());
    let payload: Vec<f64> = body[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let env = SyncEnvelope {
        msg_type,
        agent_id,
        round,
        d,
        payload,
    };
    env.validate()?;
    Ok(env)
}

/// Writes one frame and flushes (peers block on whole messages).
pub fn write_envelope<W: Write>(w: &mut W, env: &SyncEnvelope) -> Result<(), FrameError> {
    let bytes = encode_envelope(env)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame.
pub fn read_envelope<R: Read>(r: &mut R) -> Result<SyncEnvelope, FrameError> {
    let mut header = [0u8; 10];
    r.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(FrameError::BadMagic { offset: 0 });
    }
    if header[4] != VERSION {
        return Err(FrameError::BadVersion {
            version: header[4],
            offset: 4,
        });
    }
    let body_len = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let mut frame = header.to_vec();
    frame.resize(10 + body_len, 0);
    r.read_exact(&mut frame[10..])?;
    decode_envelope(&frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_round_trips() {
        let env = SyncEnvelope::hello(3, 8);
        let bytes = encode_envelope(&env).unwrap();
        assert_eq!(decode_envelope(&bytes).unwrap(), env);
    }

    #[test]
    fn delta_upload_payload_schema() {
        let gram = SymMatrix::identity(2);
        let moment = Vector::from_vec(vec![1.0, 2.0]);
        let env = SyncEnvelope::delta_upload(0, 5, &gram, &moment);
        assert_eq!(env.payload.len(), 4 + 2);
        let bytes = encode_envelope(&env).unwrap();
        let back = decode_envelope(&bytes).unwrap();
        assert_eq!(back, env);
        let (g, m) = back.unpack_gram_vec().unwrap();
        assert_eq!(g, gram);
        assert_eq!(m, moment);
    }

    #[test]
    fn truncated_frame_reports_offset() {
        let env = SyncEnvelope::delta_upload(0, 1, &SymMatrix::identity(2), &Vector::zeros(2));
        let bytes = encode_envelope(&env).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match decode_envelope(cut) {
            Err(FrameError::Truncated { needed, have, .. }) => {
                assert_eq!(needed, bytes.len());
                assert_eq!(have, cut.len());
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
        assert!(matches!(
            decode_envelope(&bytes[..7]),
            Err(FrameError::Truncated { .. })
        ));
    }

    #[test]
    fn corrupt_headers_detected() {
        let env = SyncEnvelope::hello(0, 4);
        let mut bytes = encode_envelope(&env).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_envelope(&bytes),
            Err(FrameError::BadMagic { offset: 0 })
        ));

        let mut bytes = encode_envelope(&env).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_envelope(&bytes),
            Err(FrameError::BadVersion {
                version: 9,
                offset: 4
            })
        ));

        let mut bytes = encode_envelope(&env).unwrap();
        bytes[5] = 200;
        assert!(matches!(
            decode_envelope(&bytes),
            Err(FrameError::UnknownMsgType {
                value: 200,
                offset: 5
            })
        ));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let bad = SyncEnvelope {
            msg_type: MsgType::DeltaUpload,
            agent_id: 0,
            round: 1,
            d: 2,
            payload: vec![1.0; 5], // should be 6
        };
        assert!(matches!(
            encode_envelope(&bad),
            Err(FrameError::SchemaMismatch {
                expected: 6,
                got: 5,
                ..
            })
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let bad = SyncEnvelope {
            msg_type: MsgType::SyncRequest,
            agent_id: 0,
            round: 1,
            d: 2,
            payload: vec![f64::NAN],
        };
        assert!(matches!(
            encode_envelope(&bad),
            Err(FrameError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn pref_payloads_round_trip_bit_exactly() {
        let model = Vector::from_vec(vec![0.1, -0.2, 0.3]);
        let drift = Vector::from_vec(vec![1e-17, 2.0, -3.5]);
        let mut gram = SymMatrix::identity(3);
        gram.add_assign_rank_one(&model).unwrap();
        let env = SyncEnvelope::pref_upload(7, 12, &model, &drift, &gram);
        assert_eq!(env.payload.len(), 9 + 6);
        let back = decode_envelope(&encode_envelope(&env).unwrap()).unwrap();
        let (m, g, w) = back.unpack_pref_upload().unwrap();
        assert_eq!(m, model);
        assert_eq!(g, drift);
        assert_eq!(w, gram);

        let bc = SyncEnvelope::model_broadcast(7, 12, &model, &gram);
        let back = decode_envelope(&encode_envelope(&bc).unwrap()).unwrap();
        let (m, w) = back.unpack_model_broadcast().unwrap();
        assert_eq!(m, model);
        assert_eq!(w, gram);
    }

    #[test]
    fn stream_io_round_trips() {
        let mut buf = Vec::new();
        let envs = vec![
            SyncEnvelope::hello(1, 4),
            SyncEnvelope::sync_request(1, 3, 4, true),
            SyncEnvelope::bye(1, 9, 4),
        ];
        for e in &envs {
            write_envelope(&mut buf, e).unwrap();
        }
        let mut cursor = std::io::Cursor::new(buf);
        for e in &envs {
            assert_eq!(&read_envelope(&mut cursor).unwrap(), e);
        }
    }
}
