//! 8b/10b line coding and payload framing.
//!
//! Code groups use the standard D.x.y data table. Bits are transmitted in
//! `abcdei fghj` order, i.e. the most significant bit of the 10-bit value
//! below goes out first.
//!
//! A frame is
//!
//! ```txt
//! K28.5 K28.5 K28.5 K28.5 | payload groups ... | K28.5
//!  sync (RD- + - +)                               end delimiter
//! ```
//!
//! K28.5 carries the comma (`0011111` / `1100000`), which never occurs in
//! any concatenation of data groups, so the receiver can find group
//! boundaries in an unaligned bit stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::BitStream;

/// Running disparity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Disparity {
    Neg,
    Pos,
}

impl Disparity {
    pub fn flip(self) -> Self {
        match self {
            Disparity::Neg => Disparity::Pos,
            Disparity::Pos => Disparity::Neg,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Disparity::Neg => -1,
            Disparity::Pos => 1,
        }
    }

    fn pick<T>(self, (neg, pos): (T, T)) -> T {
        match self {
            Disparity::Neg => neg,
            Disparity::Pos => pos,
        }
    }
}

// 5b/6b sub-blocks `abcdei`, (RD-, RD+).
const FIVE_SIX: [(u8, u8); 32] = [
    (0b100111, 0b011000), // D.00
    (0b011101, 0b100010), // D.01
    (0b101101, 0b010010), // D.02
    (0b110001, 0b110001), // D.03
    (0b110101, 0b001010), // D.04
    (0b101001, 0b101001), // D.05
    (0b011001, 0b011001), // D.06
    (0b111000, 0b000111), // D.07
    (0b111001, 0b000110), // D.08
    (0b100101, 0b100101), // D.09
    (0b010101, 0b010101), // D.10
    (0b110100, 0b110100), // D.11
    (0b001101, 0b001101), // D.12
    (0b101100, 0b101100), // D.13
    (0b011100, 0b011100), // D.14
    (0b010111, 0b101000), // D.15
    (0b011011, 0b100100), // D.16
    (0b100011, 0b100011), // D.17
    (0b010011, 0b010011), // D.18
    (0b110010, 0b110010), // D.19
    (0b001011, 0b001011), // D.20
    (0b101010, 0b101010), // D.21
    (0b011010, 0b011010), // D.22
    (0b111010, 0b000101), // D.23
    (0b110011, 0b001100), // D.24
    (0b100110, 0b100110), // D.25
    (0b010110, 0b010110), // D.26
    (0b110110, 0b001001), // D.27
    (0b001110, 0b001110), // D.28
    (0b101110, 0b010001), // D.29
    (0b011110, 0b100001), // D.30
    (0b101011, 0b010100), // D.31
];

// 3b/4b sub-blocks `fghj`, (RD-, RD+). Index 7 is the primary P7 code.
const THREE_FOUR: [(u8, u8); 8] = [
    (0b1011, 0b0100),
    (0b1001, 0b1001),
    (0b0101, 0b0101),
    (0b1100, 0b0011),
    (0b1101, 0b0010),
    (0b1010, 0b1010),
    (0b0110, 0b0110),
    (0b1110, 0b0001),
];

// Alternate A7 code, used where P7 would extend a run to a false comma.
const ALT_SEVEN: (u8, u8) = (0b0111, 0b1000);

/// K28.5 code groups for RD- and RD+.
#[allow(clippy::unusual_byte_groupings)] // 6b/4b sub-blocks
pub const K28_5: (u16, u16) = (0b001111_1010, 0b110000_0101);

/// Code groups in the frame sync.
pub const SYNC_GROUPS: usize = 4;
/// Bits in the frame sync.
pub const SYNC_BITS: usize = SYNC_GROUPS * 10;

const fn build_six_rev() -> [i8; 64] {
    let mut rev = [-1i8; 64];
    let mut x = 0;
    while x < 32 {
        rev[FIVE_SIX[x].0 as usize] = x as i8;
        rev[FIVE_SIX[x].1 as usize] = x as i8;
        x += 1;
    }
    rev
}

const fn build_four_rev() -> [i8; 16] {
    let mut rev = [-1i8; 16];
    let mut y = 0;
    while y < 8 {
        rev[THREE_FOUR[y].0 as usize] = y as i8;
        rev[THREE_FOUR[y].1 as usize] = y as i8;
        y += 1;
    }
    rev[ALT_SEVEN.0 as usize] = 7;
    rev[ALT_SEVEN.1 as usize] = 7;
    rev
}

const SIX_REV: [i8; 64] = build_six_rev();
const FOUR_REV: [i8; 16] = build_four_rev();

fn update_rd(rd: Disparity, ones: u32, width: u32) -> Disparity {
    if 2 * ones == width {
        rd
    } else {
        rd.flip()
    }
}

/// Encodes one data byte as a 10-bit group, returning the group and the
/// running disparity after it.
pub fn encode_group(byte: u8, rd: Disparity) -> (u16, Disparity) {
    let x = usize::from(byte & 0x1f);
    let y = usize::from(byte >> 5);
    let six = rd.pick(FIVE_SIX[x]);
    let mid = update_rd(rd, six.count_ones(), 6);
    let use_alt = y == 7
        && match mid {
            Disparity::Neg => matches!(x, 17 | 18 | 20),
            Disparity::Pos => matches!(x, 11 | 13 | 14),
        };
    let four = if use_alt {
        mid.pick(ALT_SEVEN)
    } else {
        mid.pick(THREE_FOUR[y])
    };
    let out = update_rd(mid, four.count_ones(), 4);
    ((u16::from(six) << 4) | u16::from(four), out)
}

/// K28.5 group for the given disparity, plus the disparity after it.
pub fn k28_5(rd: Disparity) -> (u16, Disparity) {
    (rd.pick(K28_5), rd.flip())
}

fn push_group(bits: &mut Vec<bool>, code: u16) {
    bits.extend((0..10).rev().map(|i| (code >> i) & 1 == 1));
}

fn group_at(bits: &[bool]) -> u16 {
    bits[..10]
        .iter()
        .fold(0u16, |acc, &b| (acc << 1) | u16::from(b))
}

/// Encodes a payload. Returns the line bits and the final running disparity.
pub fn encode_8b10b(payload: &[u8], initial: Disparity) -> Result<(BitStream, Disparity)> {
    if payload.is_empty() {
        return Err(Error::Structural("cannot encode an empty payload".into()));
    }
    let mut bits = Vec::with_capacity(payload.len() * 10);
    let mut rd = initial;
    for &b in payload {
        let (code, next) = encode_group(b, rd);
        push_group(&mut bits, code);
        rd = next;
    }
    Ok((BitStream::line_coded(bits), rd))
}

/// Result of decoding a run of code groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub bytes: Vec<u8>,
    /// One entry per group; `true` marks an invalid group or a disparity
    /// violation. Flagged groups decode to 0x00.
    pub flags: Vec<bool>,
    pub final_disparity: Disparity,
}

impl Decoded {
    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Decodes one group. `None` marks an invalid group; the returned
/// disparity is then inferred from the received bits.
pub fn decode_group(code: u16, rd: Disparity) -> (Option<u8>, Disparity) {
    let six = SIX_REV[usize::from(code >> 4)];
    let four = FOUR_REV[usize::from(code & 0xf)];
    if six >= 0 && four >= 0 {
        let byte = (six as u8) | ((four as u8) << 5);
        let (expect, next) = encode_group(byte, rd);
        if expect == code {
            return (Some(byte), next);
        }
    }
    let ones = code.count_ones() as i32;
    let next = match (2 * ones - 10).signum() {
        1 => Disparity::Pos,
        -1 => Disparity::Neg,
        _ => rd,
    };
    (None, next)
}

/// Decodes line bits back to bytes.
pub fn decode_8b10b(bits: &[bool], initial: Disparity) -> Result<Decoded> {
    if !bits.len().is_multiple_of(10) {
        return Err(Error::Structural(format!(
            "line bit count {} is not a multiple of 10",
            bits.len()
        )));
    }
    let mut rd = initial;
    let mut bytes = Vec::with_capacity(bits.len() / 10);
    let mut flags = Vec::with_capacity(bits.len() / 10);
    for chunk in bits.chunks_exact(10) {
        let (byte, next) = decode_group(group_at(chunk), rd);
        bytes.push(byte.unwrap_or(0));
        flags.push(byte.is_none());
        rd = next;
    }
    Ok(Decoded {
        bytes,
        flags,
        final_disparity: rd,
    })
}

/// The 40-bit frame sync: K28.5 four times with alternating disparity.
pub fn sync_pattern() -> Vec<bool> {
    let mut bits = Vec::with_capacity(SYNC_BITS);
    let mut rd = Disparity::Neg;
    for _ in 0..SYNC_GROUPS {
        let (code, next) = k28_5(rd);
        push_group(&mut bits, code);
        rd = next;
    }
    bits
}

/// A payload ready for transmission.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(payload: Vec<u8>) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::Structural("empty frame payload".into()));
        }
        Ok(Self { payload })
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    /// Line bits for the whole frame: sync, payload and end delimiter.
    pub fn to_bits(&self) -> BitStream {
        let mut bits = sync_pattern();
        // four K28.5 groups leave the disparity where it started
        let (body, rd) = encode_8b10b(&self.payload, Disparity::Neg)
            .expect("frame payload is non-empty");
        bits.extend(body.bits);
        push_group(&mut bits, k28_5(rd).0);
        BitStream::line_coded(bits)
    }

    /// Total line bits of a frame carrying `payload_len` bytes.
    pub fn line_bits(payload_len: usize) -> usize {
        SYNC_BITS + 10 * payload_len + 10
    }
}

/// Sync + 8b/10b payload + end delimiter.
pub fn frame_payload(payload: &[u8]) -> Result<BitStream> {
    Ok(Frame::new(payload.to_vec())?.to_bits())
}

/// Output of [`align_and_extract`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aligned {
    /// Bit offset of the first sync group.
    pub offset: usize,
    /// Every bit following the sync.
    pub payload_bits: Vec<bool>,
}

/// Locates the first frame sync.
///
/// A position matches when at least three of the four sync groups are
/// received intact at their expected spacing, which tolerates one
/// corrupted group while keeping the false-match rate on random data
/// near 4 * 2^-30 per position.
pub fn align_and_extract(bits: &[bool]) -> Result<Aligned> {
    let sync = sync_pattern();
    if bits.len() < SYNC_BITS {
        return Err(Error::Alignment(bits.len()));
    }
    for offset in 0..=bits.len() - SYNC_BITS {
        let window = &bits[offset..offset + SYNC_BITS];
        let intact = window
            .chunks_exact(10)
            .zip(sync.chunks_exact(10))
            .filter(|(a, b)| a == b)
            .count();
        if intact >= SYNC_GROUPS - 1 {
            return Ok(Aligned {
                offset,
                payload_bits: bits[offset + SYNC_BITS..].to_vec(),
            });
        }
    }
    Err(Error::Alignment(bits.len()))
}

/// Decoded frame body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deframed {
    pub payload: Vec<u8>,
    pub flags: Vec<bool>,
    /// Whether the end delimiter arrived with the expected disparity.
    pub delimiter_ok: bool,
}

impl Deframed {
    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Decodes the groups that follow a sync.
///
/// With a known `payload_len`, exactly that many groups are decoded (bits
/// missing at the end count as flagged zero bytes) and the next group is
/// checked against the end delimiter. Without one, groups are decoded until
/// a K28.5 of either disparity is found.
pub fn deframe(bits_after_sync: &[bool], payload_len: Option<usize>) -> Deframed {
    let mut rd = Disparity::Neg;
    let mut payload = Vec::new();
    let mut flags = Vec::new();
    let mut chunks = bits_after_sync.chunks_exact(10);
    let delimiter_ok = loop {
        if payload_len.is_some_and(|n| payload.len() == n) {
            break chunks.next().is_some_and(|c| group_at(c) == k28_5(rd).0);
        }
        let Some(chunk) = chunks.next() else {
            break false;
        };
        let code = group_at(chunk);
        if payload_len.is_none() && (code == K28_5.0 || code == K28_5.1) {
            break code == k28_5(rd).0;
        }
        let (byte, next) = decode_group(code, rd);
        payload.push(byte.unwrap_or(0));
        flags.push(byte.is_none());
        rd = next;
    };
    if let Some(n) = payload_len {
        while payload.len() < n {
            payload.push(0);
            flags.push(true);
        }
    }
    Deframed {
        payload,
        flags,
        delimiter_ok,
    }
}

/// Longest run of identical bits.
pub fn max_run_length(bits: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev = None;
    for &b in bits {
        run = if Some(b) == prev { run + 1 } else { 1 };
        prev = Some(b);
        best = best.max(run);
    }
    best
}

/// Whether the comma sequence appears anywhere in `bits`.
pub fn contains_comma(bits: &[bool]) -> bool {
    const COMMA: [bool; 7] = [false, false, true, true, true, true, true];
    bits.windows(7).any(|w| {
        w.iter().zip(COMMA).all(|(&a, c)| a == c) || w.iter().zip(COMMA).all(|(&a, c)| a != c)
    })
}
