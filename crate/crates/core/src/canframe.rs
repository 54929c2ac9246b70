//! CAN 2.0A data-frame encoding and ideal differential rendering.
//!
//! Bits are carried as `bool` with CAN's logical convention: `false` is a
//! logical 0 (dominant, bus driven) and `true` is a logical 1 (recessive,
//! bus released). Only standard 11-bit identifiers are supported.
//!
//! Frame layout before stuffing:
//!
//! ```text
//! SOF | ID(11) | RTR | IDE | r0 | DLC(4) | DATA(0..64) | CRC(15) | CRC del | ACK | ACK del | EOF(7)
//! ```
//!
//! Stuffing covers SOF through the CRC sequence. The ACK slot is emitted
//! recessive since no acknowledging node is modelled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::Waveform;

/// CAN-15 generator polynomial x^15+x^14+x^10+x^8+x^7+x^4+x^3+1 without the x^15 term.
pub const CRC15_POLY: u16 = 0x4599;

pub const MAX_STANDARD_ID: u16 = 0x7FF;
pub const MAX_DLC: u8 = 8;

/// Unstuffed length of a standard frame with no data.
pub const BASE_FRAME_BITS: usize = 44;

const ARBITRATION_AND_CONTROL_BITS: usize = 19; // SOF + ID + RTR + IDE + r0 + DLC
const CRC_BITS: usize = 15;
const TRAILER_BITS: usize = 10; // CRC delimiter + ACK slot + ACK delimiter + EOF
const STUFF_RUN: usize = 5;

pub const DOMINANT: bool = false;
pub const RECESSIVE: bool = true;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("identifier {0:#x} does not fit in 11 bits")]
    IdOutOfRange(u32),
    #[error("data length code {0} exceeds 8")]
    DlcTooLarge(usize),
    #[error("remote frames carry no data, got {0} bytes")]
    RemoteWithData(usize),
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("bit stream ended after {0} bits")]
    Truncated(usize),
    #[error("stuff error at stuffed bit {0}")]
    StuffError(usize),
    #[error("{field} has wrong level at unstuffed bit {index}")]
    FormError { field: &'static str, index: usize },
    #[error("crc mismatch: transmitted {transmitted:#06x}, computed {computed:#06x}")]
    CrcMismatch { transmitted: u16, computed: u16 },
    #[error("{0} trailing bits after end of frame")]
    TrailingBits(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalingError {
    #[error("sample rate {sample_rate_hz} Hz gives fewer than 20 samples per bit at {bitrate_bps} bit/s")]
    Undersampled { sample_rate_hz: f64, bitrate_bps: f64 },
    #[error("dominant level {v_dom} V must exceed recessive level {v_rec} V")]
    LevelOrder { v_dom: f64, v_rec: f64 },
    #[error("bitrate and sample rate must be positive and finite")]
    NonPositiveRate,
}

/// A classical CAN data (or remote) frame with a standard identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanFrame {
    id: u16,
    dlc: u8,
    data: Vec<u8>,
    #[serde(default)]
    rtr: bool,
}

impl CanFrame {
    /// Data frame whose DLC equals `data.len()`.
    pub fn new(id: u16, data: &[u8]) -> Result<Self, FrameError> {
        if id > MAX_STANDARD_ID {
            return Err(FrameError::IdOutOfRange(id as u32));
        }
        if data.len() > MAX_DLC as usize {
            return Err(FrameError::DlcTooLarge(data.len()));
        }
        Ok(Self {
            id,
            dlc: data.len() as u8,
            data: data.to_vec(),
            rtr: false,
        })
    }

    /// Remote frame requesting `dlc` bytes.
    pub fn remote(id: u16, dlc: u8) -> Result<Self, FrameError> {
        if id > MAX_STANDARD_ID {
            return Err(FrameError::IdOutOfRange(id as u32));
        }
        if dlc > MAX_DLC {
            return Err(FrameError::DlcTooLarge(dlc as usize));
        }
        Ok(Self {
            id,
            dlc,
            data: Vec::new(),
            rtr: true,
        })
    }

    /// Parses an identifier like `0x12` (or bare `12`) and a hex payload like `55AA`.
    pub fn from_hex(id: &str, data: &str) -> Result<Self, FrameError> {
        let id_str = id.trim();
        let digits = id_str
            .strip_prefix("0x")
            .or_else(|| id_str.strip_prefix("0X"))
            .unwrap_or(id_str);
        let raw_id = u32::from_str_radix(digits, 16).map_err(|e| FrameError::Hex(format!("{id_str:?}: {e}")))?;
        if raw_id > MAX_STANDARD_ID as u32 {
            return Err(FrameError::IdOutOfRange(raw_id));
        }
        let payload: String = data.chars().filter(|c| !c.is_whitespace()).collect();
        let bytes = hex::decode(&payload).map_err(|e| FrameError::Hex(format!("{payload:?}: {e}")))?;
        Self::new(raw_id as u16, &bytes)
    }

    /// Re-checks the invariants; useful after deserializing.
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.id > MAX_STANDARD_ID {
            return Err(FrameError::IdOutOfRange(self.id as u32));
        }
        if self.dlc > MAX_DLC {
            return Err(FrameError::DlcTooLarge(self.dlc as usize));
        }
        if self.rtr {
            if !self.data.is_empty() {
                return Err(FrameError::RemoteWithData(self.data.len()));
            }
        } else if self.data.len() != self.dlc as usize {
            return Err(FrameError::DlcTooLarge(self.data.len().max(self.dlc as usize)));
        }
        Ok(())
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_remote(&self) -> bool {
        self.rtr
    }

    /// Raw frame bits from SOF through the end of the data field.
    pub fn crc_input(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(ARBITRATION_AND_CONTROL_BITS + 64);
        bits.push(DOMINANT);
        push_msb_first(&mut bits, self.id as u32, 11);
        bits.push(if self.rtr { RECESSIVE } else { DOMINANT });
        bits.push(DOMINANT); // IDE
        bits.push(DOMINANT); // r0
        push_msb_first(&mut bits, self.dlc as u32, 4);
        for &byte in &self.data {
            push_msb_first(&mut bits, byte as u32, 8);
        }
        bits
    }

    /// The complete frame before stuffing, SOF through EOF.
    pub fn unstuffed(&self) -> Vec<bool> {
        let mut bits = self.crc_input();
        let crc = crc15(&bits);
        push_msb_first(&mut bits, crc as u32, CRC_BITS);
        bits.extend(std::iter::repeat_n(RECESSIVE, TRAILER_BITS));
        bits
    }
}

fn push_msb_first(bits: &mut Vec<bool>, value: u32, width: usize) {
    for shift in (0..width).rev() {
        bits.push((value >> shift) & 1 == 1);
    }
}

fn read_msb_first(bits: &[bool]) -> u32 {
    bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32)
}

/// CAN-15 checksum of an unstuffed bit prefix (shift-register form, zero preset).
pub fn crc15(bits: &[bool]) -> u16 {
    let mut crc: u16 = 0;
    for &bit in bits {
        let feedback = bit ^ ((crc >> 14) & 1 == 1);
        crc = (crc << 1) & 0x7FFF;
        if feedback {
            crc ^= CRC15_POLY;
        }
    }
    crc
}

/// A line-level bit sequence with the locations of inserted stuff bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSequence {
    pub bits: Vec<bool>,
    /// Indices into `bits` of inserted stuff bits, ascending.
    pub stuff_positions: Vec<usize>,
    /// Exclusive end of the stuffed region (SOF through CRC plus any trailing stuff bit).
    pub stuffed_end: usize,
}

impl BitSequence {
    /// Wraps bits that were not produced by the encoder; no stuffing is assumed.
    pub fn raw(bits: Vec<bool>) -> Self {
        let stuffed_end = bits.len();
        Self {
            bits,
            stuff_positions: Vec::new(),
            stuffed_end,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Longest run of identical levels inside the stuffed region.
    pub fn longest_stuffed_run(&self) -> usize {
        longest_run(&self.bits[..self.stuffed_end])
    }
}

pub(crate) fn longest_run(bits: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev = None;
    for &b in bits {
        if Some(b) == prev {
            run += 1;
        } else {
            run = 1;
            prev = Some(b);
        }
        best = best.max(run);
    }
    best
}

/// Inserts a complementary bit after every five identical bits.
///
/// Returns the stuffed bits and the indices of inserted bits. A run that
/// completes on the final input bit still gets its stuff bit.
pub fn stuff(bits: &[bool]) -> (Vec<bool>, Vec<usize>) {
    let mut out = Vec::with_capacity(bits.len() + bits.len() / 4 + 1);
    let mut positions = Vec::new();
    let mut run = 0usize;
    let mut prev: Option<bool> = None;
    for &b in bits {
        if Some(b) == prev {
            run += 1;
        } else {
            run = 1;
            prev = Some(b);
        }
        out.push(b);
        if run == STUFF_RUN {
            positions.push(out.len());
            out.push(!b);
            prev = Some(!b);
            run = 1;
        }
    }
    (out, positions)
}

/// Encodes a frame into its line bit sequence with stuffing applied SOF through CRC.
pub fn encode_frame(frame: &CanFrame) -> Result<BitSequence, FrameError> {
    frame.validate()?;
    let raw = frame.unstuffed();
    let region = raw.len() - TRAILER_BITS;
    let (mut bits, stuff_positions) = stuff(&raw[..region]);
    let stuffed_end = bits.len();
    bits.extend_from_slice(&raw[region..]);
    Ok(BitSequence {
        bits,
        stuff_positions,
        stuffed_end,
    })
}

/// Removes stuff bits from a line bit sequence of one frame.
///
/// The frame length is discovered from the DLC as the stream is read, so the
/// input must start at SOF. Bits after EOF are rejected.
pub fn destuff(line: &[bool]) -> Result<Vec<bool>, FrameError> {
    let mut out = Vec::with_capacity(line.len());
    let mut run = 0usize;
    let mut prev: Option<bool> = None;
    let mut pos = 0usize;
    let mut region_len: Option<usize> = None;

    loop {
        if let Some(len) = region_len {
            if out.len() == len {
                break;
            }
        }
        let &b = line.get(pos).ok_or(FrameError::Truncated(pos))?;
        if run == STUFF_RUN {
            if Some(b) == prev {
                return Err(FrameError::StuffError(pos));
            }
            prev = Some(b);
            run = 1;
            pos += 1;
            continue;
        }
        if Some(b) == prev {
            run += 1;
        } else {
            run = 1;
            prev = Some(b);
        }
        out.push(b);
        pos += 1;
        if out.len() == ARBITRATION_AND_CONTROL_BITS {
            let rtr = out[12];
            let dlc = read_msb_first(&out[15..19]) as usize;
            if dlc > MAX_DLC as usize {
                return Err(FrameError::DlcTooLarge(dlc));
            }
            let data_bits = if rtr { 0 } else { 8 * dlc };
            region_len = Some(ARBITRATION_AND_CONTROL_BITS + data_bits + CRC_BITS);
        }
    }
    // A run that completes on the last CRC bit is followed by one more stuff bit.
    if run == STUFF_RUN {
        let &b = line.get(pos).ok_or(FrameError::Truncated(pos))?;
        if Some(b) == prev {
            return Err(FrameError::StuffError(pos));
        }
        pos += 1;
    }
    let tail = line.get(pos..pos + TRAILER_BITS).ok_or(FrameError::Truncated(line.len()))?;
    out.extend_from_slice(tail);
    pos += TRAILER_BITS;
    if pos != line.len() {
        return Err(FrameError::TrailingBits(line.len() - pos));
    }
    Ok(out)
}

/// Decodes and checks one frame from its line bit sequence.
pub fn decode_frame(line: &[bool]) -> Result<CanFrame, FrameError> {
    let raw = destuff(line)?;
    let expect = |index: usize, level: bool, field: &'static str| {
        if raw[index] == level {
            Ok(())
        } else {
            Err(FrameError::FormError { field, index })
        }
    };
    expect(0, DOMINANT, "SOF")?;
    expect(13, DOMINANT, "IDE")?;
    expect(14, DOMINANT, "r0")?;

    let id = read_msb_first(&raw[1..12]) as u16;
    let rtr = raw[12];
    let dlc = read_msb_first(&raw[15..19]) as u8;
    let data_bits = if rtr { 0 } else { 8 * dlc as usize };
    let crc_start = ARBITRATION_AND_CONTROL_BITS + data_bits;
    let data: Vec<u8> = raw[ARBITRATION_AND_CONTROL_BITS..crc_start]
        .chunks(8)
        .map(|byte| read_msb_first(byte) as u8)
        .collect();

    let transmitted = read_msb_first(&raw[crc_start..crc_start + CRC_BITS]) as u16;
    let computed = crc15(&raw[..crc_start]);
    if transmitted != computed {
        return Err(FrameError::CrcMismatch {
            transmitted,
            computed,
        });
    }
    let trailer = crc_start + CRC_BITS;
    expect(trailer, RECESSIVE, "CRC delimiter")?;
    expect(trailer + 2, RECESSIVE, "ACK delimiter")?;
    for i in 0..7 {
        expect(trailer + 3 + i, RECESSIVE, "EOF")?;
    }

    if rtr {
        CanFrame::remote(id, dlc)
    } else {
        CanFrame::new(id, &data)
    }
}

/// Line levels and timing used to render bits as a differential voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalingConfig {
    pub bitrate_bps: f64,
    pub sample_rate_hz: f64,
    pub v_dom_diff: f64,
    pub v_rec_diff: f64,
}

impl Default for SignalingConfig {
    fn default() -> Self {
        Self {
            bitrate_bps: 500_000.0,
            sample_rate_hz: 10_000_000.0,
            v_dom_diff: 2.0,
            v_rec_diff: 0.0,
        }
    }
}

impl SignalingConfig {
    pub fn validate(&self) -> Result<(), SignalingError> {
        let rates_ok = self.bitrate_bps.is_finite()
            && self.sample_rate_hz.is_finite()
            && self.bitrate_bps > 0.0
            && self.sample_rate_hz > 0.0;
        if !rates_ok {
            return Err(SignalingError::NonPositiveRate);
        }
        if self.sample_rate_hz < 20.0 * self.bitrate_bps {
            return Err(SignalingError::Undersampled {
                sample_rate_hz: self.sample_rate_hz,
                bitrate_bps: self.bitrate_bps,
            });
        }
        if !(self.v_dom_diff > self.v_rec_diff) {
            return Err(SignalingError::LevelOrder {
                v_dom: self.v_dom_diff,
                v_rec: self.v_rec_diff,
            });
        }
        Ok(())
    }

    pub fn samples_per_bit(&self) -> usize {
        (self.sample_rate_hz / self.bitrate_bps).round() as usize
    }

    pub fn level(&self, bit: bool) -> f64 {
        if bit == DOMINANT {
            self.v_dom_diff
        } else {
            self.v_rec_diff
        }
    }
}

/// Renders bits as an ideal rectangular differential waveform.
pub fn render_waveform(bits: &[bool], cfg: &SignalingConfig) -> Result<Waveform, SignalingError> {
    cfg.validate()?;
    let spb = cfg.samples_per_bit();
    let mut samples = Vec::with_capacity(bits.len() * spb);
    for &bit in bits {
        samples.extend(std::iter::repeat_n(cfg.level(bit), spb));
    }
    Ok(Waveform::new(samples, cfg.sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits_of(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn crc_of_zero_prefix_is_zero() {
        assert_eq!(crc15(&[false; 19]), 0);
        assert_eq!(crc15(&[]), 0);
    }

    #[test]
    fn five_dominant_bits_get_one_recessive_stuff_bit() {
        let (out, pos) = stuff(&bits_of("00000"));
        assert_eq!(out, bits_of("000001"));
        assert_eq!(pos, vec![5]);
        // the stuff bit starts a new run
        let (out, pos) = stuff(&bits_of("0000011110"));
        assert_eq!(out, bits_of("000001111100"));
        assert_eq!(pos, vec![5, 10]);
    }

    #[test]
    fn rejects_oversized_frames() {
        assert_eq!(CanFrame::new(0x12, &[0; 9]), Err(FrameError::DlcTooLarge(9)));
        assert_eq!(CanFrame::new(0x800, &[]), Err(FrameError::IdOutOfRange(0x800)));
        let bad = CanFrame {
            id: 1,
            dlc: 9,
            data: vec![0; 9],
            rtr: false,
        };
        assert!(matches!(encode_frame(&bad), Err(FrameError::DlcTooLarge(_))));
    }

    #[test]
    fn hex_parsing() {
        let f = CanFrame::from_hex("0x12", "55AA").unwrap();
        assert_eq!(f.id(), 0x12);
        assert_eq!(f.data(), &[0x55, 0xAA]);
        assert_eq!(CanFrame::from_hex("7ff", "").unwrap().dlc(), 0);
        assert!(CanFrame::from_hex("0x800", "").is_err());
        assert!(CanFrame::from_hex("0x12", "5").is_err());
        assert!(CanFrame::from_hex("zz", "").is_err());
        assert!(CanFrame::from_hex("0x12", "00 11 22 33 44 55 66 77 88").is_err());
    }

    #[test]
    fn unstuffed_length_is_44_plus_data() {
        for n in 0..=8 {
            let f = CanFrame::new(0x123, &vec![0xA5; n]).unwrap();
            assert_eq!(f.unstuffed().len(), BASE_FRAME_BITS + 8 * n);
        }
    }

    #[test]
    fn remote_frame_round_trips() {
        let f = CanFrame::remote(0x7F0, 4).unwrap();
        let seq = encode_frame(&f).unwrap();
        assert_eq!(decode_frame(&seq.bits).unwrap(), f);
    }

    #[test]
    fn decoder_flags_corruption() {
        let f = CanFrame::new(0x12, &[0x55]).unwrap();
        let seq = encode_frame(&f).unwrap();
        let mut bad = seq.bits.clone();
        let last = bad.len() - 1;
        bad[last] = DOMINANT;
        assert!(matches!(decode_frame(&bad), Err(FrameError::FormError { field: "EOF", .. })));
        let mut extra = seq.bits.clone();
        extra.push(RECESSIVE);
        assert_eq!(decode_frame(&extra), Err(FrameError::TrailingBits(1)));
        assert!(matches!(decode_frame(&seq.bits[..20]), Err(FrameError::Truncated(_))));
        // a sixth dominant bit where a stuff bit belongs
        let mut stuffed = vec![false; 6];
        stuffed.extend(vec![true; 60]);
        assert_eq!(destuff(&stuffed), Err(FrameError::StuffError(5)));
    }

    #[test]
    fn render_single_bits() {
        let cfg = SignalingConfig::default();
        let dom = render_waveform(&[DOMINANT], &cfg).unwrap();
        assert_eq!(dom.samples, vec![2.0; 20]);
        let rec = render_waveform(&[RECESSIVE], &cfg).unwrap();
        assert_eq!(rec.samples, vec![0.0; 20]);
        let w = render_waveform(&[false, true, false], &cfg).unwrap();
        assert_eq!(w.len(), 60);
        assert_eq!(w.samples[0], 2.0);
        assert_eq!(w.samples[20], 0.0);
        assert_eq!(w.samples[59], 2.0);
    }

    #[test]
    fn render_rejects_undersampling() {
        let cfg = SignalingConfig {
            sample_rate_hz: 9_999_999.0,
            ..SignalingConfig::default()
        };
        assert!(matches!(render_waveform(&[true], &cfg), Err(SignalingError::Undersampled { .. })));
        let flipped = SignalingConfig {
            v_dom_diff: 0.0,
            v_rec_diff: 0.0,
            ..SignalingConfig::default()
        };
        assert!(matches!(flipped.validate(), Err(SignalingError::LevelOrder { .. })));
    }

    fn arb_frame() -> impl Strategy<Value = CanFrame> {
        (0u16..=MAX_STANDARD_ID, proptest::collection::vec(any::<u8>(), 0..=8))
            .prop_map(|(id, data)| CanFrame::new(id, &data).unwrap())
    }

    proptest! {
        #[test]
        fn stuffed_region_has_no_six_run(frame in arb_frame()) {
            let seq = encode_frame(&frame).unwrap();
            prop_assert!(seq.longest_stuffed_run() <= 5);
        }

        #[test]
        fn destuff_recovers_unstuffed(frame in arb_frame()) {
            let seq = encode_frame(&frame).unwrap();
            prop_assert_eq!(destuff(&seq.bits).unwrap(), frame.unstuffed());
            prop_assert_eq!(decode_frame(&seq.bits).unwrap(), frame);
        }

        #[test]
        fn restuffing_is_idempotent(frame in arb_frame()) {
            let seq = encode_frame(&frame).unwrap();
            let raw = destuff(&seq.bits).unwrap();
            let region = raw.len() - TRAILER_BITS;
            let (again, positions) = stuff(&raw[..region]);
            prop_assert_eq!(&again[..], &seq.bits[..seq.stuffed_end]);
            prop_assert_eq!(positions, seq.stuff_positions);
        }

        #[test]
        fn crc_fits_in_15_bits(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            prop_assert!(crc15(&bits) < 1 << 15);
        }

        #[test]
        fn rendered_length_is_exact(bits in proptest::collection::vec(any::<bool>(), 0..64)) {
            let cfg = SignalingConfig::default();
            let w = render_waveform(&bits, &cfg).unwrap();
            prop_assert_eq!(w.len(), bits.len() * cfg.samples_per_bit());
        }
    }
}
