//! Wire format: `[0x5A, len, seq, cmd, payload…, xor]` where `len` counts the
//! whole frame (5 + payload, payload ≤ 16 bytes) and the last byte is the XOR
//! of every byte before it.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const SOF: u8 = 0x5A;
pub const MAX_PAYLOAD: usize = 16;
pub const OVERHEAD: usize = 5;
pub const MAX_FRAME: usize = OVERHEAD + MAX_PAYLOAD;

pub mod cmd {
    pub const GET_DEVICE_ID: u8 = 0x01;
    pub const READ_ANALOG: u8 = 0x10;
    /// `[duty, dir]`, acknowledged
    pub const SET_PWM: u8 = 0x20;
    /// `[duty, dir]`, no reply
    pub const SET_PWM_QUIET: u8 = 0x21;
    /// `[period_ms_hi, period_ms_lo]`
    pub const STREAM_START: u8 = 0x30;
    pub const STREAM_STOP: u8 = 0x31;
    pub const ERROR_FLAG: u8 = 0x80;
}

pub mod err {
    pub const UNKNOWN_COMMAND: u8 = 0x01;
    pub const BAD_PAYLOAD: u8 = 0x02;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u8,
    pub cmd: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(seq: u8, cmd: u8, payload: impl Into<Vec<u8>>) -> Self {
        Frame {
            seq,
            cmd,
            payload: payload.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.cmd & cmd::ERROR_FLAG != 0
    }

    pub fn encoded_len(&self) -> usize {
        OVERHEAD + self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    PayloadTooLong(usize),
    BadSof(u8),
    BadLength(u8),
    Checksum { expected: u8, found: u8 },
    /// more bytes are needed; `have` of `need`
    Incomplete { have: usize, need: usize },
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::PayloadTooLong(n) => write!(f, "payload of {n} bytes exceeds {MAX_PAYLOAD}"),
            FrameError::BadSof(b) => write!(f, "bad start byte 0x{b:02X}"),
            FrameError::BadLength(l) => write!(f, "bad length byte {l}"),
            FrameError::Checksum { expected, found } => {
                write!(f, "checksum mismatch: expected 0x{expected:02X}, found 0x{found:02X}")
            }
            FrameError::Incomplete { have, need } => write!(f, "incomplete frame: {have} of {need} bytes"),
        }
    }
}

impl std::error::Error for FrameError {}

fn xor(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |a, b| a ^ b)
}

pub fn encode_frame(seq: u8, cmd: u8, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLong(payload.len()));
    }
    let mut out = Vec::with_capacity(OVERHEAD + payload.len());
    out.extend_from_slice(&[SOF, (OVERHEAD + payload.len()) as u8, seq, cmd]);
    out.extend_from_slice(payload);
    out.push(xor(&out));
    Ok(out)
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    encode_frame(frame.seq, frame.cmd, &frame.payload)
}

/// Decode exactly one frame occupying the whole slice.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    match bytes.first() {
        None => return Err(FrameError::Incomplete { have: 0, need: OVERHEAD }),
        Some(&b) if b != SOF => return Err(FrameError::BadSof(b)),
        _ => {}
    }
    let Some(&len) = bytes.get(1) else {
        return Err(FrameError::Incomplete { have: 1, need: OVERHEAD });
    };
    let n = len as usize;
    if !(OVERHEAD..=MAX_FRAME).contains(&n) || bytes.len() > n {
        return Err(FrameError::BadLength(len));
    }
    if bytes.len() < n {
        return Err(FrameError::Incomplete {
            have: bytes.len(),
            need: n,
        });
    }
    let expected = xor(&bytes[..n - 1]);
    let found = bytes[n - 1];
    if expected != found {
        return Err(FrameError::Checksum { expected, found });
    }
    Ok(Frame {
        seq: bytes[2],
        cmd: bytes[3],
        payload: bytes[4..n - 1].to_vec(),
    })
}

/// Incremental decoder for a byte stream; resynchronizes on the next start
/// byte after garbage or a corrupt frame.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: VecDeque<u8>,
    pub rejected: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, if any.
    pub fn next_frame(&mut self) -> Option<Frame> {
        loop {
            while let Some(&b) = self.buf.front() {
                if b == SOF {
                    break;
                }
                self.buf.pop_front();
                self.rejected += 1;
            }
            if self.buf.len() < 2 {
                return None;
            }
            let n = self.buf[1] as usize;
            if !(OVERHEAD..=MAX_FRAME).contains(&n) {
                self.buf.pop_front();
                self.rejected += 1;
                continue;
            }
            if self.buf.len() < n {
                return None;
            }
            let candidate: Vec<u8> = self.buf.iter().take(n).copied().collect();
            match decode_frame(&candidate) {
                Ok(f) => {
                    self.buf.drain(..n);
                    return Some(f);
                }
                Err(_) => {
                    self.buf.pop_front();
                    self.rejected += 1;
                }
            }
        }
    }
}
