//! Fixed-size stream header.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "BSPC"
//!      4     1  version (1)
//!      5     2  image width
//!      7     2  image height
//!      9     2  tile size
//!     11     4  partition limit (pixels)
//!     15     4  minimum domain (pixels)
//!     19     4  lambda, unsigned 24.8 fixed point, saturating
//!     23    12  quantizer steps a, b, c, unsigned 16.16 fixed point
//!     35    12  index ranges a, b, c as (min, max) pairs of i16
//! ```
//!
//! Multi-byte integers are little-endian. The bit-packed section (Huffman
//! tables, then tile payloads in row-major tile order) follows at byte 47.

use super::quant::CoeffQuantizer;
use crate::error::{Error, Result};
use crate::tree::BuildParams;

pub const MAGIC: [u8; 4] = *b"BSPC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 47;

/// Largest accepted tile side.
pub const MAX_TILE_SIZE: u32 = 1024;
/// Smallest accepted tile side.
pub const MIN_TILE_SIZE: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub params: BuildParams,
    /// Stored to 1/256 precision.
    pub lambda: f64,
    pub quantizer: CoeffQuantizer,
}

/// λ as stored in the header.
pub fn snap_lambda(lambda: f64) -> f64 {
    f64::from(lambda_to_fixed(lambda)) / 256.0
}

fn lambda_to_fixed(lambda: f64) -> u32 {
    let v = (lambda * 256.0).round();
    if v.is_nan() || v <= 0.0 {
        0
    } else if v >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        v as u32
    }
}

impl StreamHeader {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Corrupt(msg));
        if self.width == 0 || self.height == 0 || self.width > 0xFFFF || self.height > 0xFFFF {
            return bad(format!("image size {}x{}", self.width, self.height));
        }
        if !(MIN_TILE_SIZE..=MAX_TILE_SIZE).contains(&self.tile_size) {
            return bad(format!("tile size {}", self.tile_size));
        }
        self.params
            .validate()
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        self.quantizer
            .validate()
            .map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.tile_size as u16).to_le_bytes());
        let sat = |v: usize| u32::try_from(v).unwrap_or(u32::MAX);
        out.extend_from_slice(&sat(self.params.partition_limit).to_le_bytes());
        out.extend_from_slice(&sat(self.params.min_domain_pixels).to_le_bytes());
        out.extend_from_slice(&lambda_to_fixed(self.lambda).to_le_bytes());
        for step in self.quantizer.steps_fixed() {
            out.extend_from_slice(&step.to_le_bytes());
        }
        for (lo, hi) in self.quantizer.ranges() {
            out.extend_from_slice(&(lo as i16).to_le_bytes());
            out.extend_from_slice(&(hi as i16).to_le_bytes());
        }
        debug_assert_eq!(out.len(), HEADER_LEN);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt("stream shorter than its header".into()));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {}", bytes[4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let i16_at = |o: usize| i32::from(i16::from_le_bytes([bytes[o], bytes[o + 1]]));
        let u32_at =
            |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let quantizer = CoeffQuantizer::from_fixed(
            [u32_at(23), u32_at(27), u32_at(31)],
            [
                (i16_at(35), i16_at(37)),
                (i16_at(39), i16_at(41)),
                (i16_at(43), i16_at(45)),
            ],
        )
        .map_err(|e| Error::Corrupt(e.to_string()))?;
        let header = Self {
            width: u32::from(u16_at(5)),
            height: u32::from(u16_at(7)),
            tile_size: u32::from(u16_at(9)),
            params: BuildParams {
                partition_limit: u32_at(11) as usize,
                min_domain_pixels: u32_at(15) as usize,
                error_threshold: 0.0,
            },
            lambda: f64::from(u32_at(19)) / 256.0,
            quantizer,
        };
        header.validate()?;
        Ok(header)
    }
}
