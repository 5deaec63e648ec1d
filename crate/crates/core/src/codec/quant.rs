//! Uniform quantization of leaf plane coefficients.

use crate::error::{Error, Result};
use crate::fitting::{MomentVector, PlaneFit};

/// Quantized `(a, b, c)` indices.
pub type QuantizedCoeffs = [i32; 3];

const FIXED_ONE: f64 = 65536.0;

/// Step sizes and index ranges for the slope (`a`, `b`) and offset (`c`)
/// coefficients. Steps are held in 16.16 fixed point, the form they take
/// in the stream header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoeffQuantizer {
    steps: [u32; 3],
    ranges: [(i32, i32); 3],
}

/// Slopes in steps of 1/8, offset in unit steps.
pub const DEFAULT_STEPS: [f64; 3] = [0.125, 0.125, 1.0];
/// Slopes within ±32 per pixel, offset within `[-128, 383]`.
pub const DEFAULT_BOUNDS: [(f64, f64); 3] = [(-32.0, 32.0), (-32.0, 32.0), (-128.0, 383.0)];

impl Default for CoeffQuantizer {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_BOUNDS).expect("default quantizer is valid")
    }
}

impl CoeffQuantizer {
    /// `steps` are rounded to the nearest 1/65536; `bounds` are coefficient
    /// value ranges, converted to index ranges.
    pub fn new(steps: [f64; 3], bounds: [(f64, f64); 3]) -> Result<Self> {
        let mut fixed = [0u32; 3];
        let mut ranges = [(0i32, 0i32); 3];
        for i in 0..3 {
            let s = (steps[i] * FIXED_ONE).round();
            if !(s >= 1.0 && s <= f64::from(u32::MAX)) {
                return Err(Error::InvalidParam(format!("quantizer step {}", steps[i])));
            }
            fixed[i] = s as u32;
            let step = s / FIXED_ONE;
            let (lo, hi) = bounds[i];
            let (lo, hi) = ((lo / step).ceil(), (hi / step).floor());
            if !(lo >= f64::from(i16::MIN) && hi <= f64::from(i16::MAX) && lo <= hi) {
                return Err(Error::InvalidParam(format!(
                    "coefficient range [{}, {}] with step {step}",
                    bounds[i].0, bounds[i].1
                )));
            }
            ranges[i] = (lo as i32, hi as i32);
        }
        Self::from_fixed(fixed, ranges)
    }

    pub fn from_fixed(steps: [u32; 3], ranges: [(i32, i32); 3]) -> Result<Self> {
        let q = Self { steps, ranges };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if self.steps[i] == 0 {
                return Err(Error::InvalidParam("zero quantizer step".into()));
            }
            let (lo, hi) = self.ranges[i];
            if lo > hi || lo < i32::from(i16::MIN) || hi > i32::from(i16::MAX) {
                return Err(Error::InvalidParam(format!("index range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> [f64; 3] {
        self.steps.map(|s| f64::from(s) / FIXED_ONE)
    }

    pub fn steps_fixed(&self) -> [u32; 3] {
        self.steps
    }

    /// Index range per coefficient.
    pub fn ranges(&self) -> [(i32, i32); 3] {
        self.ranges
    }

    fn index(&self, i: usize, value: f64) -> i32 {
        let (lo, hi) = self.ranges[i];
        (value / self.steps()[i])
            .round()
            .clamp(f64::from(lo), f64::from(hi)) as i32
    }

    pub fn dequantize(&self, q: QuantizedCoeffs) -> PlaneFit {
        let s = self.steps();
        PlaneFit {
            a: f64::from(q[0]) * s[0],
            b: f64::from(q[1]) * s[1],
            c: f64::from(q[2]) * s[2],
            sse: 0.0,
            degenerate: false,
        }
    }
}

/// Rounds each coefficient to the nearest step, clamped to its range.
pub fn quantize_fit(fit: &PlaneFit, q: &CoeffQuantizer) -> Result<QuantizedCoeffs> {
    if ![fit.a, fit.b, fit.c].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok([q.index(0, fit.a), q.index(1, fit.b), q.index(2, fit.c)])
}

/// Encoder-side leaf quantization. Picks, by squared error over the
/// region, the best of: the rounded fit; the rounded slopes with the
/// offset re-solved for them; and a flat plane at the rounded mean.
pub fn quantize_leaf(
    fit: &PlaneFit,
    moments: &MomentVector,
    q: &CoeffQuantizer,
) -> Result<(QuantizedCoeffs, f64)> {
    let direct = quantize_fit(fit, q)?;
    let steps = q.steps();
    let n = moments.n.max(1) as f64;
    let (a, b) = (
        f64::from(direct[0]) * steps[0],
        f64::from(direct[1]) * steps[1],
    );
    let offset = (moments.sf as f64 - a * moments.sx as f64 - b * moments.sy as f64) / n;
    let refit = [direct[0], direct[1], q.index(2, offset)];
    let flat = [0, 0, q.index(2, moments.sf as f64 / n)];
    let mut best = (direct, f64::INFINITY);
    for cand in [direct, refit, flat] {
        let p = q.dequantize(cand);
        let sse = moments.plane_sse(p.a, p.b, p.c);
        if sse < best.1 {
            best = (cand, sse);
        }
    }
    Ok(best)
}
