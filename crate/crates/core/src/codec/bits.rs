//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts after already-written whole bytes.
    pub fn with_bytes(bytes: Vec<u8>) -> Self {
        let bits = bytes.len() as u64 * 8;
        Self { bytes, bits }
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn write_bit(&mut self, bit: bool) {
        if self.bits % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= 0x80 >> (self.bits % 8);
        }
        self.bits += 1;
    }

    /// Writes the low `count` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, count: u32) {
        debug_assert!(count <= 64);
        for i in (0..count).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    /// Zero-pads to a byte boundary and returns the bytes.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn at_byte(bytes: &'a [u8], offset: usize) -> Self {
        Self {
            bytes,
            pos: offset as u64 * 8,
        }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        (self.bytes.len() as u64 * 8).saturating_sub(self.pos)
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get((self.pos / 8) as usize)
            .ok_or_else(|| Error::Corrupt("unexpected end of stream".into()))?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64> {
        debug_assert!(count <= 64);
        if self.remaining() < u64::from(count) {
            return Err(Error::Corrupt("unexpected end of stream".into()));
        }
        (0..count).try_fold(0u64, |acc, _| Ok((acc << 1) | u64::from(self.read_bit()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut w = BitWriter::new();
        w.write_bit(true);
        w.write_bits(0b011, 3);
        w.write_bits(0x1ff, 9);
        assert_eq!(w.bit_len(), 13);
        let bytes = w.finish();
        assert_eq!(bytes, vec![0b1011_1111, 0b1111_1000]);

        let mut r = BitReader::new(&bytes);
        assert!(r.read_bit().unwrap());
        assert_eq!(r.read_bits(3).unwrap(), 0b011);
        assert_eq!(r.read_bits(9).unwrap(), 0x1ff);
        assert_eq!(r.position(), 13);
        assert_eq!(r.read_bits(3).unwrap(), 0);
        assert!(r.read_bit().is_err());
    }

    #[test]
    fn with_bytes_appends() {
        let mut w = BitWriter::with_bytes(vec![0xAB]);
        w.write_bits(0xF, 4);
        assert_eq!(w.finish(), vec![0xAB, 0xF0]);
        let bytes = [0xAB, 0xF0];
        let mut r = BitReader::at_byte(&bytes, 1);
        assert_eq!(r.read_bits(4).unwrap(), 0xF);
        assert!(r.read_bits(5).is_err());
    }
}
