//! Quantized bisecting lines, convex regions and their partitioning-lines
//! domain (PLD).
//!
//! Lines use the normal form `x·cos θ + y·sin θ = ρ`. Orientations are
//! sampled on an [`AngleGrid`] and offsets are signed integer multiples of
//! the orientation's step `max(|cos θ|, |sin θ|)`. Everything here depends
//! only on region geometry and the pixel lattice, so an encoder and a decoder
//! that replay the same splits derive identical candidate lists.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A point in tile-local coordinates (x = column, y = row).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// An integer pixel sample point (x = column, y = row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Smallest power of two that is at least `sqrt(m·n)`.
pub fn theta_count(m: u32, n: u32) -> u32 {
    let area = u64::from(m.max(1)) * u64::from(n.max(1));
    let mut count: u64 = 1;
    while count * count < area {
        count <<= 1;
    }
    count as u32
}

/// Offset quantization step for orientation `theta`.
pub fn rho_step(theta: f64) -> f64 {
    theta.cos().abs().max(theta.sin().abs())
}

/// Uniformly sampled line orientations covering `[0, 3π/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleGrid {
    count: u32,
    step: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    rho_step: Vec<f64>,
}

impl AngleGrid {
    pub fn new(count: u32) -> Result<Self> {
        if count == 0 || !count.is_power_of_two() {
            return Err(Error::InvalidParam(format!(
                "orientation count {count} is not a power of two"
            )));
        }
        let step = 3.0 * PI / (2.0 * f64::from(count));
        let thetas: Vec<f64> = (0..count).map(|i| f64::from(i) * step).collect();
        Ok(Self {
            count,
            step,
            cos: thetas.iter().map(|t| t.cos()).collect(),
            sin: thetas.iter().map(|t| t.sin()).collect(),
            rho_step: thetas.iter().map(|&t| rho_step(t)).collect(),
        })
    }

    #[cfg(test)]
    pub(crate) fn with_angles(thetas: &[f64]) -> Self {
        Self {
            count: thetas.len() as u32,
            step: f64::NAN,
            cos: thetas.iter().map(|t| t.cos()).collect(),
            sin: thetas.iter().map(|t| t.sin()).collect(),
            rho_step: thetas.iter().map(|&t| rho_step(t)).collect(),
        }
    }

    /// Grid for an `m × n` domain.
    pub fn for_dims(m: u32, n: u32) -> Self {
        Self::new(theta_count(m, n)).expect("theta_count returns a power of two")
    }

    pub fn len(&self) -> u32 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn theta_step(&self) -> f64 {
        self.step
    }

    pub fn theta(&self, index: u32) -> f64 {
        f64::from(index) * self.step
    }

    pub fn cos(&self, index: u32) -> f64 {
        self.cos[index as usize]
    }

    pub fn sin(&self, index: u32) -> f64 {
        self.sin[index as usize]
    }

    pub fn rho_step(&self, index: u32) -> f64 {
        self.rho_step[index as usize]
    }

    /// `x·cos θᵢ + y·sin θᵢ`.
    #[inline]
    pub fn project(&self, index: u32, x: f64, y: f64) -> f64 {
        x * self.cos[index as usize] + y * self.sin[index as usize]
    }

    /// Real offset of grid line `k` at orientation `index`.
    #[inline]
    pub fn rho(&self, index: u32, k: i64) -> f64 {
        k as f64 * self.rho_step[index as usize]
    }
}

/// A candidate bisecting line on the quantized `(θ, ρ)` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuantizedLine {
    pub theta_index: u32,
    /// Signed multiple of the orientation's rho step.
    pub rho_index: i64,
}

impl QuantizedLine {
    pub const fn new(theta_index: u32, rho_index: i64) -> Self {
        Self {
            theta_index,
            rho_index,
        }
    }

    pub fn theta(&self, grid: &AngleGrid) -> f64 {
        grid.theta(self.theta_index)
    }

    pub fn rho(&self, grid: &AngleGrid) -> f64 {
        grid.rho(self.theta_index, self.rho_index)
    }

    pub fn signed_value(&self, grid: &AngleGrid, x: f64, y: f64) -> f64 {
        grid.project(self.theta_index, x, y) - self.rho(grid)
    }
}

/// A line in normal form with real parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalLine {
    pub theta: f64,
    pub rho: f64,
}

impl NormalLine {
    pub fn signed_value(&self, point: Point) -> f64 {
        point.x * self.theta.cos() + point.y * self.theta.sin() - self.rho
    }
}

impl QuantizedLine {
    pub fn to_normal(&self, grid: &AngleGrid) -> NormalLine {
        NormalLine {
            theta: self.theta(grid),
            rho: self.rho(grid),
        }
    }
}

/// `x·cos θ + y·sin θ − ρ`. Negative values lie in the first child, zero
/// and positive values in the second.
pub fn line_signed_value(line: &QuantizedLine, grid: &AngleGrid, point: Point) -> f64 {
    line.signed_value(grid, point.x, point.y)
}

#[inline]
pub(crate) fn in_first_child(signed_value: f64) -> bool {
    signed_value < 0.0
}

/// A convex polygonal subdomain together with the pixel samples it owns.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub vertices: Vec<Point>,
    pub pixels: Vec<Pixel>,
}

impl Region {
    pub fn new(vertices: Vec<Point>, pixels: Vec<Pixel>) -> Self {
        Self { vertices, pixels }
    }

    /// The full `width × height` tile. The polygon is the union of the
    /// pixels' unit cells, so every sample lies strictly inside it.
    pub fn tile(width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width) - 0.5, f64::from(height) - 0.5);
        let vertices = vec![
            Point::new(-0.5, -0.5),
            Point::new(w, -0.5),
            Point::new(w, h),
            Point::new(-0.5, h),
        ];
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| Pixel::new(x, y)))
            .collect();
        Self { vertices, pixels }
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    /// Unsigned polygon area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let twice: f64 = (0..n)
            .map(|i| {
                let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
                p.x * q.y - q.x * p.y
            })
            .sum();
        twice.abs() / 2.0
    }
}

/// Range of offsets, per orientation, of lines that cross a polygon.
#[derive(Clone, Debug, PartialEq)]
pub struct Pld {
    /// `[ρ_min, ρ_max]` per orientation index.
    pub bands: Vec<(f64, f64)>,
}

impl Pld {
    /// Grid offsets `k` with `ρ_min < k·Δρ < ρ_max`, or `None` if there are none.
    pub fn admissible(&self, grid: &AngleGrid, theta_index: u32) -> Option<(i64, i64)> {
        let (lo, hi) = self.bands[theta_index as usize];
        let step = grid.rho_step(theta_index);
        let k_lo = first_above(lo, step);
        let k_hi = last_below(hi, step);
        (k_lo <= k_hi).then_some((k_lo, k_hi))
    }

    pub fn contains(&self, grid: &AngleGrid, line: &QuantizedLine) -> bool {
        let (lo, hi) = self.bands[line.theta_index as usize];
        let rho = line.rho(grid);
        lo < rho && rho < hi
    }
}

/// Smallest `k` with `k·step > bound`.
fn first_above(bound: f64, step: f64) -> i64 {
    let mut k = (bound / step).floor() as i64;
    while k as f64 * step <= bound {
        k += 1;
    }
    while (k - 1) as f64 * step > bound {
        k -= 1;
    }
    k
}

/// Largest `k` with `k·step < bound`.
fn last_below(bound: f64, step: f64) -> i64 {
    let mut k = (bound / step).ceil() as i64;
    while k as f64 * step >= bound {
        k -= 1;
    }
    while (k + 1) as f64 * step < bound {
        k += 1;
    }
    k
}

/// Largest `k` with `k·step <= bound`.
fn last_at_most(bound: f64, step: f64) -> i64 {
    let mut k = (bound / step).ceil() as i64;
    while k as f64 * step > bound {
        k -= 1;
    }
    while (k + 1) as f64 * step <= bound {
        k += 1;
    }
    k
}

pub fn compute_pld(region: &Region, grid: &AngleGrid) -> Result<Pld> {
    if region.vertices.len() < 3 || !(region.area() > 0.0) {
        return Err(Error::EmptyPld);
    }
    let bands = (0..grid.len())
        .map(|i| {
            region
                .vertices
                .iter()
                .map(|v| grid.project(i, v.x, v.y))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p), hi.max(p))
                })
        })
        .collect();
    Ok(Pld { bands })
}

/// Contiguous run of admissible offsets for one orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThetaRange {
    pub theta_index: u32,
    pub k_lo: i64,
    pub k_hi: i64,
}

impl ThetaRange {
    pub fn len(&self) -> usize {
        (self.k_hi - self.k_lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.k_hi < self.k_lo
    }
}

/// The canonical candidate list of a region, stored as one offset run per
/// orientation (lexicographic by `(theta_index, rho_index)`).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub ranges: Vec<ThetaRange>,
    total: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Position of `line` in the canonical list.
    pub fn position(&self, line: &QuantizedLine) -> Option<usize> {
        let mut offset = 0;
        for r in &self.ranges {
            if r.theta_index == line.theta_index {
                return (r.k_lo..=r.k_hi)
                    .contains(&line.rho_index)
                    .then(|| offset + (line.rho_index - r.k_lo) as usize);
            }
            offset += r.len();
        }
        None
    }

    pub fn line_at(&self, mut position: usize) -> Option<QuantizedLine> {
        for r in &self.ranges {
            if position < r.len() {
                return Some(QuantizedLine::new(r.theta_index, r.k_lo + position as i64));
            }
            position -= r.len();
        }
        None
    }

    pub fn contains(&self, line: &QuantizedLine) -> bool {
        self.position(line).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = QuantizedLine> + '_ {
        self.ranges
            .iter()
            .flat_map(|r| (r.k_lo..=r.k_hi).map(move |k| QuantizedLine::new(r.theta_index, k)))
    }
}

/// Candidate lines of `region` as offset runs. A line qualifies if it lies
/// strictly inside the PLD band and leaves at least one pixel on each side.
pub fn candidate_set(region: &Region, pld: &Pld, grid: &AngleGrid) -> CandidateSet {
    balanced_candidate_set(region, pld, grid, 1)
}

/// [`candidate_set`] restricted to lines leaving at least `min_child`
/// pixels on each side.
pub fn balanced_candidate_set(
    region: &Region,
    pld: &Pld,
    grid: &AngleGrid,
    min_child: usize,
) -> CandidateSet {
    let mut set = CandidateSet::default();
    let n = region.pixels.len();
    let m = min_child.max(1);
    if n < 2 * m {
        return set;
    }
    let mut proj = vec![0.0f64; n];
    for i in 0..grid.len() {
        for (v, p) in proj.iter_mut().zip(&region.pixels) {
            *v = grid.project(i, f64::from(p.x), f64::from(p.y));
        }
        // The first child holds the pixels with projection below k·Δρ, so
        // it has at least m pixels iff k·Δρ exceeds the m-th smallest
        // projection, and the second iff k·Δρ is at most the m-th largest.
        let (_, &mut low, _) = proj.select_nth_unstable_by(m - 1, f64::total_cmp);
        let (_, &mut high, _) = proj.select_nth_unstable_by(n - m, f64::total_cmp);
        let (band_lo, band_hi) = pld.bands[i as usize];
        let step = grid.rho_step(i);
        let k_lo = first_above(low.max(band_lo), step);
        let k_hi = last_at_most(high, step).min(last_below(band_hi, step));
        if k_lo <= k_hi {
            let range = ThetaRange {
                theta_index: i,
                k_lo,
                k_hi,
            };
            set.total += range.len();
            set.ranges.push(range);
        }
    }
    set
}

/// Canonical, lexicographically ordered candidate lines of `region`.
pub fn enumerate_candidates(region: &Region, pld: &Pld, grid: &AngleGrid) -> Vec<QuantizedLine> {
    candidate_set(region, pld, grid).iter().collect()
}

/// Candidates of a region, treating a degenerate polygon as unsplittable.
pub fn region_candidates(region: &Region, grid: &AngleGrid) -> CandidateSet {
    balanced_region_candidates(region, grid, 1)
}

pub fn balanced_region_candidates(
    region: &Region,
    grid: &AngleGrid,
    min_child: usize,
) -> CandidateSet {
    match compute_pld(region, grid) {
        Ok(pld) => balanced_candidate_set(region, &pld, grid, min_child),
        Err(_) => CandidateSet::default(),
    }
}

/// Splits `region` by a candidate line into its first (negative side) and
/// second (zero or positive side) children.
pub fn split_region(
    region: &Region,
    line: &QuantizedLine,
    grid: &AngleGrid,
) -> Result<(Region, Region)> {
    if line.theta_index >= grid.len() || !region_candidates(region, grid).contains(line) {
        return Err(Error::InvalidSplit {
            theta_index: line.theta_index,
            rho_index: line.rho_index,
        });
    }
    Ok(split_unchecked(region, line, grid))
}

/// [`split_region`] without the candidate membership check.
pub(crate) fn split_unchecked(
    region: &Region,
    line: &QuantizedLine,
    grid: &AngleGrid,
) -> (Region, Region) {
    let (first_pixels, second_pixels): (Vec<Pixel>, Vec<Pixel>) = region
        .pixels
        .iter()
        .partition(|p| in_first_child(line.signed_value(grid, f64::from(p.x), f64::from(p.y))));
    let values: Vec<f64> = region
        .vertices
        .iter()
        .map(|v| line.signed_value(grid, v.x, v.y))
        .collect();
    (
        Region::new(clip(&region.vertices, &values, -1.0), first_pixels),
        Region::new(clip(&region.vertices, &values, 1.0), second_pixels),
    )
}

/// Sutherland–Hodgman clip against the half-plane `sign · s >= 0`.
fn clip(vertices: &[Point], values: &[f64], sign: f64) -> Vec<Point> {
    let n = vertices.len();
    let mut out: Vec<Point> = Vec::with_capacity(n + 2);
    let push = |p: Point, out: &mut Vec<Point>| {
        if out.last() != Some(&p) {
            out.push(p);
        }
    };
    for i in 0..n {
        let (p, q) = (vertices[i], vertices[(i + 1) % n]);
        let (sp, sq) = (sign * values[i], sign * values[(i + 1) % n]);
        if sp >= 0.0 {
            push(p, &mut out);
        }
        if (sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0) {
            let t = sp / (sp - sq);
            push(
                Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)),
                &mut out,
            );
        }
    }
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}
