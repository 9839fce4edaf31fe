//! Bit-exact frame codec for update and ACK packets.
//!
//! Both frame kinds open with a fixed 304-bit (38-byte) header region. The
//! sublayout is versioned so it can evolve:
//!
//! ```text
//! offset  width  field
//!      0      8  version (currently 1)
//!      1     16  cluster
//!      3     16  worker index
//!      5     64  generation timestamp, ns
//!     13     16  aggregation count
//!     15     32  reward, IEEE-754 binary32
//!     19     19B reserved, zero
//! ```
//!
//! The gradient payload follows as 32-bit floats. ACK frames additionally
//! carry a queue-status extension after the payload: a 24-bit queue
//! utilization and a 16-bit active-cluster count. All fields are big-endian.

use thiserror::Error;

pub const HEADER_BYTES: usize = 38;
pub const ACK_EXTENSION_BYTES: usize = 5;
/// Jumbo-frame budget for a whole encoded frame.
pub const MAX_FRAME_BYTES: usize = 9036;
pub const VERSION: u8 = 1;

const RESERVED_BYTES: usize = 19;
const MAX_QUEUE_UTILIZATION: u32 = (1 << 24) - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("queue utilization {0} exceeds 24-bit range")]
    QueueUtilizationRange(u32),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES}-byte jumbo budget")]
    FrameTooLarge(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("buffer truncated at offset {offset}: need {need} more bytes")]
    Truncated { offset: usize, need: usize },
    #[error("payload region of {0} bytes is not a whole number of 32-bit floats")]
    RaggedPayload(usize),
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("{extra} trailing bytes after offset {offset}")]
    Overlong { offset: usize, extra: usize },
}

/// Header region common to update and ACK frames.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct FrameHeader {
    pub cluster: u16,
    pub worker: u16,
    pub gen_timestamp_ns: u64,
    pub agg_count: u16,
    pub reward: f32,
}

/// A model-update frame: header plus gradient payload.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct UpdateFrame {
    pub header: FrameHeader,
    pub gradient: Vec<f32>,
}

/// An ACK frame: header, aggregated-gradient payload and queue status.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct AckFrame {
    pub header: FrameHeader,
    pub gradient: Vec<f32>,
    /// Occupied segments at the accelerator, 24-bit on the wire.
    pub queue_utilization: u32,
    pub active_clusters: u16,
}

fn put_header(buf: &mut Vec<u8>, h: &FrameHeader) {
    buf.push(VERSION);
    buf.extend_from_slice(&h.cluster.to_be_bytes());
    buf.extend_from_slice(&h.worker.to_be_bytes());
    buf.extend_from_slice(&h.gen_timestamp_ns.to_be_bytes());
    buf.extend_from_slice(&h.agg_count.to_be_bytes());
    buf.extend_from_slice(&h.reward.to_be_bytes());
    buf.extend_from_slice(&[0u8; RESERVED_BYTES]);
}

struct Reader<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.offset < n {
            return Err(DecodeError::Truncated {
                offset: self.offset,
                need: n - (self.buf.len() - self.offset),
            });
        }
        let out = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn finish(self) -> Result<(), DecodeError> {
        if self.offset != self.buf.len() {
            return Err(DecodeError::Overlong {
                offset: self.offset,
                extra: self.buf.len() - self.offset,
            });
        }
        Ok(())
    }
}

fn read_header(r: &mut Reader) -> Result<FrameHeader, DecodeError> {
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(DecodeError::Version(version));
    }
    let cluster = u16::from_be_bytes(r.take(2)?.try_into().unwrap());
    let worker = u16::from_be_bytes(r.take(2)?.try_into().unwrap());
    let gen_timestamp_ns = u64::from_be_bytes(r.take(8)?.try_into().unwrap());
    let agg_count = u16::from_be_bytes(r.take(2)?.try_into().unwrap());
    let reward = f32::from_be_bytes(r.take(4)?.try_into().unwrap());
    r.take(RESERVED_BYTES)?;
    Ok(FrameHeader { cluster, worker, gen_timestamp_ns, agg_count, reward })
}

fn put_gradient(buf: &mut Vec<u8>, gradient: &[f32]) {
    for g in gradient {
        buf.extend_from_slice(&g.to_be_bytes());
    }
}

fn read_gradient(r: &mut Reader, bytes: usize) -> Result<Vec<f32>, DecodeError> {
    if bytes % 4 != 0 {
        return Err(DecodeError::RaggedPayload(bytes));
    }
    let raw = r.take(bytes)?;
    Ok(raw.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().unwrap())).collect())
}

fn check_budget(len: usize) -> Result<(), EncodeError> {
    if len > MAX_FRAME_BYTES {
        return Err(EncodeError::FrameTooLarge(len));
    }
    Ok(())
}

pub fn encode_update(frame: &UpdateFrame) -> Result<Vec<u8>, EncodeError> {
    check_budget(HEADER_BYTES + 4 * frame.gradient.len())?;
    let mut buf = Vec::with_capacity(HEADER_BYTES + 4 * frame.gradient.len());
    put_header(&mut buf, &frame.header);
    put_gradient(&mut buf, &frame.gradient);
    Ok(buf)
}

pub fn decode_update(buf: &[u8]) -> Result<UpdateFrame, DecodeError> {
    let mut r = Reader { buf, offset: 0 };
    let header = read_header(&mut r)?;
    let gradient = read_gradient(&mut r, buf.len().saturating_sub(HEADER_BYTES))?;
    r.finish()?;
    Ok(UpdateFrame { header, gradient })
}

pub fn encode_ack(frame: &AckFrame) -> Result<Vec<u8>, EncodeError> {
    if frame.queue_utilization > MAX_QUEUE_UTILIZATION {
        return Err(EncodeError::QueueUtilizationRange(frame.queue_utilization));
    }
    check_budget(HEADER_BYTES + 4 * frame.gradient.len() + ACK_EXTENSION_BYTES)?;
    let mut buf =
        Vec::with_capacity(HEADER_BYTES + 4 * frame.gradient.len() + ACK_EXTENSION_BYTES);
    put_header(&mut buf, &frame.header);
    put_gradient(&mut buf, &frame.gradient);
    buf.extend_from_slice(&frame.queue_utilization.to_be_bytes()[1..]);
    buf.extend_from_slice(&frame.active_clusters.to_be_bytes());
    Ok(buf)
}

pub fn decode_ack(buf: &[u8]) -> Result<AckFrame, DecodeError> {
    let mut r = Reader { buf, offset: 0 };
    let header = read_header(&mut r)?;
    let payload_bytes = buf.len().saturating_sub(HEADER_BYTES + ACK_EXTENSION_BYTES);
    let gradient = read_gradient(&mut r, payload_bytes)?;
    let util = r.take(3)?;
    let queue_utilization = u32::from_be_bytes([0, util[0], util[1], util[2]]);
    let active_clusters = u16::from_be_bytes(r.take(2)?.try_into().unwrap());
    r.finish()?;
    Ok(AckFrame { header, gradient, queue_utilization, active_clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_frame_is_all_zero_after_the_version_byte() {
        let buf = encode_update(&UpdateFrame::default()).unwrap();
        assert_eq!(buf.len(), HEADER_BYTES);
        assert_eq!(buf[0], VERSION);
        assert!(buf[1..].iter().all(|&b| b == 0));
    }

    #[test]
    fn known_update_frame_bytes() {
        let frame = UpdateFrame {
            header: FrameHeader {
                cluster: 3,
                worker: 7,
                gen_timestamp_ns: 5,
                agg_count: 2,
                reward: 1.5,
            },
            gradient: vec![2.0],
        };
        let expect = {
            let mut v = vec![0x01, 0x00, 0x03, 0x00, 0x07];
            v.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 5]); // timestamp
            v.extend_from_slice(&[0x00, 0x02]); // agg count
            v.extend_from_slice(&[0x3f, 0xc0, 0x00, 0x00]); // 1.5f32
            v.extend_from_slice(&[0u8; 19]); // reserved
            v.extend_from_slice(&[0x40, 0x00, 0x00, 0x00]); // 2.0f32
            v
        };
        assert_eq!(encode_update(&frame).unwrap(), expect);
        assert_eq!(decode_update(&expect).unwrap(), frame);
    }

    #[test]
    fn queue_utilization_boundary_survives() {
        let frame = AckFrame {
            header: FrameHeader::default(),
            gradient: vec![],
            queue_utilization: (1 << 24) - 1,
            active_clusters: u16::MAX,
        };
        let buf = encode_ack(&frame).unwrap();
        assert_eq!(decode_ack(&buf).unwrap(), frame);
        let over = AckFrame { queue_utilization: 1 << 24, ..frame };
        assert_eq!(encode_ack(&over), Err(EncodeError::QueueUtilizationRange(1 << 24)));
    }

    #[test]
    fn truncated_and_overlong_buffers_are_rejected_with_offsets() {
        let buf = encode_update(&UpdateFrame { gradient: vec![1.0, 2.0], ..Default::default() })
            .unwrap();
        assert!(matches!(decode_update(&buf[..10]), Err(DecodeError::Truncated { .. })));
        let mut long = buf.clone();
        long.extend_from_slice(&[0, 0, 0]);
        assert_eq!(decode_update(&long), Err(DecodeError::RaggedPayload(11)));
        // an ack one byte short of its extension reports where it ran out
        let ack = encode_ack(&AckFrame::default()).unwrap();
        let err = decode_ack(&ack[..ack.len() - 1]).unwrap_err();
        assert!(matches!(err, DecodeError::Truncated { .. } | DecodeError::RaggedPayload(_)));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut buf = encode_update(&UpdateFrame::default()).unwrap();
        buf[0] = 9;
        assert_eq!(decode_update(&buf), Err(DecodeError::Version(9)));
    }

    #[test]
    fn oversized_gradient_exceeds_jumbo_budget() {
        let frame = UpdateFrame { gradient: vec![0.0; 2250], ..Default::default() };
        assert!(matches!(encode_update(&frame), Err(EncodeError::FrameTooLarge(_))));
        assert!(encode_update(&UpdateFrame { gradient: vec![0.0; 2249], ..Default::default() })
            .is_ok());
    }

    fn arbitrary_header() -> impl Strategy<Value = FrameHeader> {
        (any::<u16>(), any::<u16>(), any::<u64>(), any::<u16>(), any::<f32>()).prop_map(
            |(cluster, worker, gen_timestamp_ns, agg_count, reward)| FrameHeader {
                cluster,
                worker,
                gen_timestamp_ns,
                agg_count,
                reward,
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn update_frames_round_trip(
            header in arbitrary_header(),
            gradient in proptest::collection::vec(any::<f32>(), 0..64),
        ) {
            prop_assume!(header.reward.is_nan() == false);
            prop_assume!(gradient.iter().all(|g| !g.is_nan()));
            let frame = UpdateFrame { header, gradient };
            let decoded = decode_update(&encode_update(&frame).unwrap()).unwrap();
            prop_assert_eq!(decoded, frame);
        }

        #[test]
        fn ack_frames_round_trip(
            header in arbitrary_header(),
            gradient in proptest::collection::vec(any::<f32>(), 0..64),
            util in 0u32..1 << 24,
            active in any::<u16>(),
        ) {
            prop_assume!(header.reward.is_nan() == false);
            prop_assume!(gradient.iter().all(|g| !g.is_nan()));
            let frame = AckFrame {
                header,
                gradient,
                queue_utilization: util,
                active_clusters: active,
            };
            let decoded = decode_ack(&encode_ack(&frame).unwrap()).unwrap();
            prop_assert_eq!(decoded, frame);
        }

        #[test]
        fn decode_never_reads_past_arbitrary_buffers(buf in proptest::collection::vec(any::<u8>(), 0..128)) {
            // totality: arbitrary bytes either decode or fail cleanly
            let _ = decode_update(&buf);
            let _ = decode_ack(&buf);
        }
    }
}
