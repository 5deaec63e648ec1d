//! Least-squares plane fits over pixel sets and the best-split search.
//!
//! Pixel coordinates and 8-bit intensities are integers, so all moment sums
//! are kept as exact integers. Fits are solved from centered moments in
//! 128-bit integer arithmetic and rounded to `f64` once at the end, which
//! makes a fit a pure function of the moment vector: any two ways of
//! arriving at the same pixel set (a naive rescan or the incremental sweep
//! below) produce bit-identical fits and costs.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{in_first_child, AngleGrid, CandidateSet, Pixel, QuantizedLine, Region};
use crate::raster::GrayImage;

/// Coordinate and intensity moments of a pixel set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MomentVector {
    pub n: i64,
    pub sx: i64,
    pub sy: i64,
    pub sxx: i64,
    pub sxy: i64,
    pub syy: i64,
    pub sf: i64,
    pub sfx: i64,
    pub sfy: i64,
    pub sff: i64,
}

impl MomentVector {
    pub fn of_pixel(x: u32, y: u32, f: u8) -> Self {
        let (x, y, f) = (i64::from(x), i64::from(y), i64::from(f));
        Self {
            n: 1,
            sx: x,
            sy: y,
            sxx: x * x,
            sxy: x * y,
            syy: y * y,
            sf: f,
            sfx: f * x,
            sfy: f * y,
            sff: f * f,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `Σ(f − (a·x + b·y + c))²` for an arbitrary plane.
    pub fn plane_sse(&self, a: f64, b: f64, c: f64) -> f64 {
        let m = self.as_f64();
        let sse = m[9] - 2.0 * (a * m[7] + b * m[8] + c * m[6])
            + a * a * m[3]
            + b * b * m[5]
            + c * c * m[0]
            + 2.0 * (a * b * m[4] + a * c * m[1] + b * c * m[2]);
        sse.max(0.0)
    }

    fn as_f64(&self) -> [f64; 10] {
        [
            self.n, self.sx, self.sy, self.sxx, self.sxy, self.syy, self.sf, self.sfx, self.sfy,
            self.sff,
        ]
        .map(|v| v as f64)
    }

    fn zip(self, o: Self, op: impl Fn(i64, i64) -> i64) -> Self {
        Self {
            n: op(self.n, o.n),
            sx: op(self.sx, o.sx),
            sy: op(self.sy, o.sy),
            sxx: op(self.sxx, o.sxx),
            sxy: op(self.sxy, o.sxy),
            syy: op(self.syy, o.syy),
            sf: op(self.sf, o.sf),
            sfx: op(self.sfx, o.sfx),
            sfy: op(self.sfy, o.sfy),
            sff: op(self.sff, o.sff),
        }
    }
}

impl Add for MomentVector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for MomentVector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a - b)
    }
}

impl AddAssign for MomentVector {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for MomentVector {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl std::iter::Sum for MomentVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn accumulate_moments(pixels: &[Pixel], image: &GrayImage) -> Result<MomentVector> {
    pixels
        .iter()
        .map(|p| {
            image
                .try_get(p.x, p.y)
                .map(|f| MomentVector::of_pixel(p.x, p.y, f))
                .ok_or(Error::OutOfBounds {
                    x: p.x,
                    y: p.y,
                    width: image.width(),
                    height: image.height(),
                })
        })
        .sum()
}

/// Least-squares plane `Q(x, y) = a·x + b·y + c` and its squared error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sse: f64,
    /// The pixels were collinear (or a single point) and the slope was
    /// chosen as the minimum-norm solution.
    pub degenerate: bool,
}

impl PlaneFit {
    pub fn constant(c: f64) -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            c,
            sse: 0.0,
            degenerate: false,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

fn ratio(num: i128, den: i128) -> f64 {
    num as f64 / den as f64
}

/// Solves the normal equations for `m`.
///
/// With centered sums `Cuv = n·Σuv − Σu·Σv` the slopes satisfy
/// `[Cxx Cxy; Cxy Cyy]·(a, b) = (Cxf, Cyf)`. When that matrix is singular
/// (collinear pixels) the minimum-norm slope `(Cxf, Cyf) / (Cxx + Cyy)` is
/// used; a single point gets a flat fit.
pub fn fit_plane(m: &MomentVector) -> Result<PlaneFit> {
    if m.n <= 0 {
        return Err(Error::EmptyRegion);
    }
    exact_fit(m).map_or_else(|| Ok(float_fit(m)), Ok)
}

fn exact_fit(m: &MomentVector) -> Option<PlaneFit> {
    let w = |v: i64| i128::from(v);
    let (n, sx, sy, sf) = (w(m.n), w(m.sx), w(m.sy), w(m.sf));
    let cxx = n.checked_mul(w(m.sxx))? - sx * sx;
    let cyy = n.checked_mul(w(m.syy))? - sy * sy;
    let cxy = n.checked_mul(w(m.sxy))? - sx * sy;
    let cxf = n.checked_mul(w(m.sfx))? - sx * sf;
    let cyf = n.checked_mul(w(m.sfy))? - sy * sf;
    let cff = n.checked_mul(w(m.sff))? - sf * sf;

    let det = cxx.checked_mul(cyy)?.checked_sub(cxy.checked_mul(cxy)?)?;
    if det > 0 {
        let num_a = cxf.checked_mul(cyy)?.checked_sub(cyf.checked_mul(cxy)?)?;
        let num_b = cyf.checked_mul(cxx)?.checked_sub(cxf.checked_mul(cxy)?)?;
        let den = n.checked_mul(det)?;
        let num_c = sf
            .checked_mul(det)?
            .checked_sub(num_a.checked_mul(sx)?)?
            .checked_sub(num_b.checked_mul(sy)?)?;
        let num_sse = cff
            .checked_mul(det)?
            .checked_sub(cxf.checked_mul(num_a)?)?
            .checked_sub(cyf.checked_mul(num_b)?)?;
        return Some(PlaneFit {
            a: ratio(num_a, det),
            b: ratio(num_b, det),
            c: ratio(num_c, den),
            sse: ratio(num_sse.max(0), den),
            degenerate: false,
        });
    }

    let trace = cxx + cyy;
    if trace > 0 {
        let den = n.checked_mul(trace)?;
        let num_c = sf
            .checked_mul(trace)?
            .checked_sub(cxf.checked_mul(sx)?)?
            .checked_sub(cyf.checked_mul(sy)?)?;
        let num_sse = cff
            .checked_mul(trace)?
            .checked_sub(cxf.checked_mul(cxf)?)?
            .checked_sub(cyf.checked_mul(cyf)?)?;
        return Some(PlaneFit {
            a: ratio(cxf, trace),
            b: ratio(cyf, trace),
            c: ratio(num_c, den),
            sse: ratio(num_sse.max(0), den),
            degenerate: true,
        });
    }

    Some(PlaneFit {
        a: 0.0,
        b: 0.0,
        c: ratio(sf, n),
        sse: ratio(cff.max(0), n),
        degenerate: true,
    })
}

/// Same solution as [`exact_fit`] in floating point, for moment vectors
/// large enough to overflow the integer route.
fn float_fit(m: &MomentVector) -> PlaneFit {
    let v = m.as_f64();
    let n = v[0];
    let (mx, my, mf) = (v[1] / n, v[2] / n, v[6] / n);
    let cxx = v[3] - v[1] * mx;
    let cyy = v[5] - v[2] * my;
    let cxy = v[4] - v[1] * my;
    let cxf = v[7] - v[6] * mx;
    let cyf = v[8] - v[6] * my;
    let cff = v[9] - v[6] * mf;
    let det = cxx * cyy - cxy * cxy;
    let scale = (cxx * cyy).abs().max(cxy * cxy);
    let (a, b, degenerate) = if det > 1e-12 * scale && det > 0.0 {
        (
            (cxf * cyy - cyf * cxy) / det,
            (cyf * cxx - cxf * cxy) / det,
            false,
        )
    } else if cxx + cyy > 0.0 {
        (cxf / (cxx + cyy), cyf / (cxx + cyy), true)
    } else {
        (0.0, 0.0, true)
    };
    PlaneFit {
        a,
        b,
        c: mf - a * mx - b * my,
        sse: (cff - a * cxf - b * cyf).max(0.0),
        degenerate,
    }
}

/// The best bisecting line of a region and the fits of its two children.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub line: QuantizedLine,
    pub fit0: PlaneFit,
    pub fit1: PlaneFit,
    pub cost: f64,
}

/// Candidate offsets of one orientation, ascending.
struct ThetaCandidates {
    theta_index: u32,
    ks: Vec<i64>,
}

fn better(candidate: &SplitChoice, best: &SplitChoice) -> bool {
    match candidate.cost.total_cmp(&best.cost) {
        Ordering::Less => true,
        Ordering::Equal => candidate.line < best.line,
        Ordering::Greater => false,
    }
}

fn keep_best(best: Option<SplitChoice>, next: Option<SplitChoice>) -> Option<SplitChoice> {
    match (best, next) {
        (Some(b), Some(n)) => Some(if better(&n, &b) { n } else { b }),
        (b, n) => b.or(n),
    }
}

/// Sweeps the offsets of one orientation. Pixels are visited in order of
/// their projection, and each one moves from the second child's moments
/// to the first child's once the line passes it.
fn sweep_theta(
    samples: &[(Pixel, MomentVector)],
    total: &MomentVector,
    group: &ThetaCandidates,
    grid: &AngleGrid,
) -> Result<Option<SplitChoice>> {
    let i = group.theta_index;
    let mut order: Vec<(f64, &MomentVector)> = samples
        .iter()
        .map(|(p, m)| (grid.project(i, f64::from(p.x), f64::from(p.y)), m))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut first = MomentVector::default();
    let mut next = 0;
    let mut best: Option<SplitChoice> = None;
    for &k in &group.ks {
        let rho = grid.rho(i, k);
        while next < order.len() && in_first_child(order[next].0 - rho) {
            first += *order[next].1;
            next += 1;
        }
        let second = *total - first;
        if first.is_empty() || second.is_empty() {
            continue;
        }
        let fit0 = fit_plane(&first)?;
        let fit1 = fit_plane(&second)?;
        let choice = SplitChoice {
            line: QuantizedLine::new(i, k),
            fit0,
            fit1,
            cost: fit0.sse + fit1.sse,
        };
        best = keep_best(best, Some(choice));
    }
    Ok(best)
}

fn group_lines(candidates: &[QuantizedLine]) -> Vec<ThetaCandidates> {
    let mut lines = candidates.to_vec();
    lines.sort_unstable();
    lines.dedup();
    let mut groups: Vec<ThetaCandidates> = Vec::new();
    for line in lines {
        match groups.last_mut() {
            Some(g) if g.theta_index == line.theta_index => g.ks.push(line.rho_index),
            _ => groups.push(ThetaCandidates {
                theta_index: line.theta_index,
                ks: vec![line.rho_index],
            }),
        }
    }
    groups
}

fn group_set(set: &CandidateSet) -> Vec<ThetaCandidates> {
    set.ranges
        .iter()
        .map(|r| ThetaCandidates {
            theta_index: r.theta_index,
            ks: (r.k_lo..=r.k_hi).collect(),
        })
        .collect()
}

fn search(
    region: &Region,
    groups: &[ThetaCandidates],
    image: &GrayImage,
    grid: &AngleGrid,
    parallel: bool,
) -> Result<Option<SplitChoice>> {
    if let Some(g) = groups.iter().find(|g| g.theta_index >= grid.len()) {
        return Err(Error::InvalidParam(format!(
            "orientation index {} outside a {}-orientation grid",
            g.theta_index,
            grid.len()
        )));
    }
    let samples: Vec<(Pixel, MomentVector)> = region
        .pixels
        .iter()
        .map(|&p| accumulate_moments(&[p], image).map(|m| (p, m)))
        .collect::<Result<_>>()?;
    let total: MomentVector = samples.iter().map(|(_, m)| *m).sum();
    let per_theta: Vec<Option<SplitChoice>> = if parallel {
        groups
            .par_iter()
            .map(|g| sweep_theta(&samples, &total, g, grid))
            .collect::<Result<_>>()?
    } else {
        groups
            .iter()
            .map(|g| sweep_theta(&samples, &total, g, grid))
            .collect::<Result<_>>()?
    };
    Ok(per_theta.into_iter().fold(None, keep_best))
}

/// The candidate line minimizing the summed squared error of the two
/// children's plane fits. Ties go to the smallest `(theta_index, rho_index)`.
/// Lines that leave a child empty are skipped.
pub fn best_split(
    region: &Region,
    candidates: &[QuantizedLine],
    image: &GrayImage,
    grid: &AngleGrid,
) -> Result<Option<SplitChoice>> {
    search(region, &group_lines(candidates), image, grid, false)
}

/// [`best_split`] with orientations evaluated in parallel. Returns the same
/// choice.
pub fn best_split_parallel(
    region: &Region,
    candidates: &[QuantizedLine],
    image: &GrayImage,
    grid: &AngleGrid,
) -> Result<Option<SplitChoice>> {
    search(region, &group_lines(candidates), image, grid, true)
}

pub(crate) fn best_split_in_set(
    region: &Region,
    candidates: &CandidateSet,
    image: &GrayImage,
    grid: &AngleGrid,
) -> Result<Option<SplitChoice>> {
    search(region, &group_set(candidates), image, grid, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_pld, enumerate_candidates, split_region};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_pixels(w: u32, h: u32) -> Vec<Pixel> {
        Region::tile(w, h).pixels
    }

    #[test]
    fn empty_moments_are_zero() {
        let img = GrayImage::new(4, 4);
        assert_eq!(
            accumulate_moments(&[], &img).unwrap(),
            MomentVector::default()
        );
    }

    #[test]
    fn single_pixel_moments() {
        let mut img = GrayImage::new(4, 4);
        img.set(2, 3, 10);
        let m = accumulate_moments(&[Pixel::new(2, 3)], &img).unwrap();
        assert_eq!(
            m,
            MomentVector {
                n: 1,
                sx: 2,
                sy: 3,
                sxx: 4,
                sxy: 6,
                syy: 9,
                sf: 10,
                sfx: 20,
                sfy: 30,
                sff: 100,
            }
        );
    }

    #[test]
    fn moments_reject_out_of_bounds() {
        let img = GrayImage::new(4, 4);
        assert!(matches!(
            accumulate_moments(&[Pixel::new(4, 0)], &img),
            Err(Error::OutOfBounds { x: 4, .. })
        ));
    }

    #[test]
    fn random_moments_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = GrayImage::from_fn(16, 16, |_, _| rng.gen());
        let pixels: Vec<Pixel> = (0..16)
            .map(|_| Pixel::new(rng.gen_range(0..16), rng.gen_range(0..16)))
            .collect();
        let m = accumulate_moments(&pixels, &img).unwrap();
        let (mut sx, mut sff, mut sfy, mut sxy) = (0i64, 0i64, 0i64, 0i64);
        for p in &pixels {
            let f = i64::from(img.get(p.x, p.y));
            sx += i64::from(p.x);
            sff += f * f;
            sfy += f * i64::from(p.y);
            sxy += i64::from(p.x) * i64::from(p.y);
        }
        assert_eq!((m.n, m.sx, m.sff, m.sfy, m.sxy), (16, sx, sff, sfy, sxy));
    }

    #[test]
    fn exact_plane_is_recovered() {
        let img = GrayImage::from_fn(4, 4, |x, y| (2 * x + 3 * y + 1) as u8);
        let m = accumulate_moments(&all_pixels(4, 4), &img).unwrap();
        let fit = fit_plane(&m).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-12);
        assert!((fit.b - 3.0).abs() < 1e-12);
        assert!((fit.c - 1.0).abs() < 1e-12);
        assert_eq!(fit.sse, 0.0);
        assert!(!fit.degenerate);
    }

    #[test]
    fn constant_image_fit() {
        let img = GrayImage::filled(9, 5, 7);
        let m = accumulate_moments(&all_pixels(9, 5), &img).unwrap();
        assert_eq!(fit_plane(&m).unwrap(), PlaneFit::constant(7.0));
    }

    #[test]
    fn empty_fit_is_an_error() {
        assert!(matches!(
            fit_plane(&MomentVector::default()),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn collinear_pixels_use_minimum_norm_slope() {
        // Column x = 5 with f = 4y + 10: the slope lies along y only.
        let img = GrayImage::from_fn(8, 8, |_, y| (4 * y + 10) as u8);
        let pixels: Vec<Pixel> = (0..8).map(|y| Pixel::new(5, y)).collect();
        let fit = fit_plane(&accumulate_moments(&pixels, &img).unwrap()).unwrap();
        assert!(fit.degenerate);
        assert_eq!((fit.a, fit.b, fit.c, fit.sse), (0.0, 4.0, 10.0, 0.0));

        let single = MomentVector::of_pixel(3, 3, 99);
        let fit = fit_plane(&single).unwrap();
        assert!(fit.degenerate);
        assert_eq!((fit.a, fit.b, fit.c, fit.sse), (0.0, 0.0, 99.0, 0.0));
    }

    #[test]
    fn float_route_agrees_with_exact_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let img = GrayImage::from_fn(12, 12, |_, _| rng.gen());
            let pixels: Vec<Pixel> = (0..rng.gen_range(3..100))
                .map(|_| Pixel::new(rng.gen_range(0..12), rng.gen_range(0..12)))
                .collect();
            let m = accumulate_moments(&pixels, &img).unwrap();
            let exact = exact_fit(&m).unwrap();
            let float = float_fit(&m);
            assert_eq!(exact.degenerate, float.degenerate);
            for (e, f) in [(exact.a, float.a), (exact.b, float.b), (exact.c, float.c)] {
                assert!((e - f).abs() <= 1e-8 * (1.0 + e.abs()), "{e} vs {f}");
            }
            assert!((exact.sse - float.sse).abs() <= 1e-6 * (1.0 + exact.sse));
        }
    }

    #[test]
    fn plane_sse_matches_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = GrayImage::from_fn(10, 10, |_, _| rng.gen());
        let m = accumulate_moments(&all_pixels(10, 10), &img).unwrap();
        let fit = fit_plane(&m).unwrap();
        assert!((m.plane_sse(fit.a, fit.b, fit.c) - fit.sse).abs() < 1e-6 * fit.sse);
    }

    fn naive_cost(region: &Region, line: &QuantizedLine, img: &GrayImage, grid: &AngleGrid) -> f64 {
        let (r0, r1) = split_region(region, line, grid).unwrap();
        let f0 = fit_plane(&accumulate_moments(&r0.pixels, img).unwrap()).unwrap();
        let f1 = fit_plane(&accumulate_moments(&r1.pixels, img).unwrap()).unwrap();
        f0.sse + f1.sse
    }

    #[test]
    fn step_image_splits_between_columns_3_and_4() {
        let img = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0 } else { 255 });
        let region = Region::tile(8, 8);
        let grid = AngleGrid::for_dims(8, 8);
        let pld = compute_pld(&region, &grid).unwrap();
        let candidates = enumerate_candidates(&region, &pld, &grid);
        let choice = best_split(&region, &candidates, &img, &grid)
            .unwrap()
            .unwrap();
        assert_eq!(choice.line, QuantizedLine::new(0, 4));
        assert_eq!(choice.cost, 0.0);
        let zero_cost: Vec<_> = candidates
            .iter()
            .filter(|l| naive_cost(&region, l, &img, &grid) == 0.0)
            .collect();
        assert_eq!(zero_cost, vec![&QuantizedLine::new(0, 4)]);
    }

    #[test]
    fn constant_image_takes_first_candidate() {
        let img = GrayImage::filled(8, 8, 42);
        let region = Region::tile(8, 8);
        let grid = AngleGrid::for_dims(8, 8);
        let pld = compute_pld(&region, &grid).unwrap();
        let candidates = enumerate_candidates(&region, &pld, &grid);
        let choice = best_split(&region, &candidates, &img, &grid)
            .unwrap()
            .unwrap();
        assert_eq!(choice.cost, 0.0);
        assert_eq!(choice.line, candidates[0]);
    }

    #[test]
    fn no_candidates_no_split() {
        let img = GrayImage::filled(2, 2, 1);
        let region = Region::tile(2, 2);
        let grid = AngleGrid::for_dims(2, 2);
        assert_eq!(best_split(&region, &[], &img, &grid).unwrap(), None);
    }

    #[test]
    fn random_region_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let img = GrayImage::from_fn(8, 8, |_, _| rng.gen());
        let region = Region::tile(8, 8);
        let grid = AngleGrid::for_dims(8, 8);
        let pld = compute_pld(&region, &grid).unwrap();
        let candidates = enumerate_candidates(&region, &pld, &grid);
        let choice = best_split(&region, &candidates, &img, &grid)
            .unwrap()
            .unwrap();
        let brute = candidates
            .iter()
            .map(|l| naive_cost(&region, l, &img, &grid))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(choice.cost, brute);
        let par = best_split_parallel(&region, &candidates, &img, &grid).unwrap();
        assert_eq!(par, Some(choice));
        let set = crate::geometry::candidate_set(&region, &pld, &grid);
        assert_eq!(
            best_split_in_set(&region, &set, &img, &grid).unwrap(),
            Some(choice)
        );
    }
}
