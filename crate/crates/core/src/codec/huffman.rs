//! Canonical Huffman codes over a contiguous integer alphabet.
//!
//! A model is fully determined by its code lengths; codes are assigned in
//! order of `(length, symbol)`. Tables are serialized as the used symbol
//! span followed by one presence flag and a 4-bit length per symbol.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanModel {
    /// Symbol value of `lengths[0]`.
    lo: i32,
    /// Code length per symbol, zero for symbols without a code.
    lengths: Vec<u8>,
    codes: Vec<u32>,
    /// Number of codes of each length, index 0 unused.
    counts: [u32; MAX_CODE_LEN as usize + 1],
    /// Symbols in canonical order.
    sorted: Vec<i32>,
}

impl HuffmanModel {
    /// Builds an optimal length-limited code for `freqs[i]`, the frequency
    /// of symbol `lo + i`.
    pub fn from_frequencies(lo: i32, freqs: &[u64]) -> Self {
        let mut weights = freqs.to_vec();
        loop {
            let lengths = huffman_lengths(&weights);
            if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
                return Self::from_lengths(lo, lengths).expect("Huffman lengths satisfy Kraft");
            }
            for w in weights.iter_mut().filter(|w| **w > 0) {
                *w = (*w + 1) / 2;
            }
        }
    }

    /// Builds a histogram over `symbols` and the matching code.
    pub fn from_symbols(symbols: impl IntoIterator<Item = i32>) -> Self {
        let symbols: Vec<i32> = symbols.into_iter().collect();
        let (Some(&lo), Some(&hi)) = (symbols.iter().min(), symbols.iter().max()) else {
            return Self::from_lengths(0, Vec::new()).expect("empty code is valid");
        };
        let mut freqs = vec![0u64; (hi - lo + 1) as usize];
        for s in symbols {
            freqs[(s - lo) as usize] += 1;
        }
        Self::from_frequencies(lo, &freqs)
    }

    /// Canonical code from lengths. Fails if the lengths over-subscribe the
    /// code space or exceed [`MAX_CODE_LEN`].
    pub fn from_lengths(lo: i32, lengths: Vec<u8>) -> Result<Self> {
        let mut counts = [0u32; MAX_CODE_LEN as usize + 1];
        for &l in &lengths {
            if l > MAX_CODE_LEN {
                return Err(Error::Corrupt(format!("code length {l} too long")));
            }
            if l > 0 {
                counts[l as usize] += 1;
            }
        }
        let kraft: u64 = (1..=MAX_CODE_LEN)
            .map(|l| u64::from(counts[l as usize]) << (MAX_CODE_LEN - l))
            .sum();
        if kraft > 1 << MAX_CODE_LEN {
            return Err(Error::Corrupt("over-subscribed Huffman code".into()));
        }
        let mut order: Vec<usize> = (0..lengths.len()).filter(|&i| lengths[i] > 0).collect();
        order.sort_by_key(|&i| (lengths[i], i));
        let mut codes = vec![0u32; lengths.len()];
        let mut code = 0u32;
        let mut prev_len = 0u8;
        for &i in &order {
            code <<= lengths[i] - prev_len;
            codes[i] = code;
            code += 1;
            prev_len = lengths[i];
        }
        let sorted = order.iter().map(|&i| lo + i as i32).collect();
        Ok(Self {
            lo,
            lengths,
            codes,
            counts,
            sorted,
        })
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    /// Code length of `symbol`, or `None` if it has no code.
    pub fn code_len(&self, symbol: i32) -> Option<u8> {
        let i = usize::try_from(symbol.checked_sub(self.lo)?).ok()?;
        self.lengths.get(i).copied().filter(|&l| l > 0)
    }

    pub fn encode(&self, symbol: i32, out: &mut BitWriter) -> Result<()> {
        let len = self
            .code_len(symbol)
            .ok_or_else(|| Error::Sync(format!("symbol {symbol} has no Huffman code")))?;
        out.write_bits(
            u64::from(self.codes[(symbol - self.lo) as usize]),
            u32::from(len),
        );
        Ok(())
    }

    pub fn decode(&self, bits: &mut BitReader<'_>) -> Result<i32> {
        let (mut code, mut first, mut index) = (0u32, 0u32, 0u32);
        for len in 1..=MAX_CODE_LEN as usize {
            code |= u32::from(bits.read_bit()?);
            let count = self.counts[len];
            if code < first + count {
                return Ok(self.sorted[(index + code - first) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::Corrupt("invalid Huffman code".into()))
    }

    pub fn write_table(&self, out: &mut BitWriter) {
        let used: Vec<usize> = (0..self.lengths.len())
            .filter(|&i| self.lengths[i] > 0)
            .collect();
        let (first, last) = match (used.first(), used.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => {
                out.write_bits(0, 16);
                out.write_bits(0, 16);
                return;
            }
        };
        out.write_bits(u64::from((self.lo + first as i32) as i16 as u16), 16);
        out.write_bits((last - first + 1) as u64, 16);
        for &l in &self.lengths[first..=last] {
            if l == 0 {
                out.write_bit(false);
            } else {
                out.write_bit(true);
                out.write_bits(u64::from(l - 1), 4);
            }
        }
    }

    /// Reads a table whose symbols must lie in `[min, max]`.
    pub fn read_table(bits: &mut BitReader<'_>, min: i32, max: i32) -> Result<Self> {
        let lo = i32::from(bits.read_bits(16)? as u16 as i16);
        let span = bits.read_bits(16)? as i32;
        if span > 0 && (lo < min || lo + span - 1 > max) {
            return Err(Error::Corrupt(format!(
                "Huffman table span [{lo}, {}] outside [{min}, {max}]",
                lo + span - 1
            )));
        }
        let mut lengths = Vec::with_capacity(span as usize);
        for _ in 0..span {
            lengths.push(if bits.read_bit()? {
                bits.read_bits(4)? as u8 + 1
            } else {
                0
            });
        }
        Self::from_lengths(lo, lengths)
    }

    pub fn table_bits(&self) -> u64 {
        let used: Vec<usize> = (0..self.lengths.len())
            .filter(|&i| self.lengths[i] > 0)
            .collect();
        match (used.first(), used.last()) {
            (Some(&f), Some(&l)) => {
                32 + (f..=l)
                    .map(|i| if self.lengths[i] > 0 { 5 } else { 1 })
                    .sum::<u64>()
            }
            _ => 32,
        }
    }
}

/// Unconstrained Huffman code lengths. A lone symbol gets length 1.
fn huffman_lengths(freqs: &[u64]) -> Vec<u8> {
    let mut lengths = vec![0u8; freqs.len()];
    let leaves: Vec<usize> = (0..freqs.len()).filter(|&i| freqs[i] > 0).collect();
    match leaves.len() {
        0 => return lengths,
        1 => {
            lengths[leaves[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // Node ids: leaves first, then merged nodes in creation order.
    let mut parent: Vec<usize> = vec![usize::MAX; 2 * leaves.len() - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = leaves
        .iter()
        .enumerate()
        .map(|(id, &s)| Reverse((freqs[s], id)))
        .collect();
    let mut next = leaves.len();
    while heap.len() > 1 {
        let Reverse((w0, a)) = heap.pop().expect("len > 1");
        let Reverse((w1, b)) = heap.pop().expect("len > 1");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((w0 + w1, next)));
        next += 1;
    }
    // Parents always have larger ids, so depths resolve top-down.
    let root = next - 1;
    let mut depth = vec![0u32; parent.len()];
    for id in (0..root).rev() {
        depth[id] = depth[parent[id]] + 1;
    }
    for (id, &s) in leaves.iter().enumerate() {
        lengths[s] = depth[id].min(u32::from(u8::MAX)) as u8;
    }
    lengths
}
