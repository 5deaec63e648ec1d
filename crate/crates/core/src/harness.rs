//! Tiling, quality metrics and benchmark sweeps.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::codec::stream::MIN_TILE_SIZE;
use crate::codec::{decode_image, encode_image, EncoderConfig, RateControl};
use crate::error::{Error, Result};
use crate::geometry::AngleGrid;
use crate::raster::GrayImage;
use crate::tree::{build_tree, BuildParams};

/// Placement of one tile within the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileLayout {
    pub width: u32,
    pub height: u32,
    /// Row-major; right and bottom edge tiles take the remainder.
    pub tiles: Vec<Tile>,
}

/// Splits a `width × height` image into `tile_size` squares. A tile larger
/// than the image yields a single tile.
pub fn tile_image(width: u32, height: u32, tile_size: u32) -> Result<TileLayout> {
    if width == 0 || height == 0 || tile_size < MIN_TILE_SIZE {
        return Err(Error::InvalidParam(format!(
            "cannot tile {width}x{height} by {tile_size}"
        )));
    }
    let mut tiles = Vec::new();
    for y in (0..height).step_by(tile_size as usize) {
        for x in (0..width).step_by(tile_size as usize) {
            tiles.push(Tile {
                x,
                y,
                width: tile_size.min(width - x),
                height: tile_size.min(height - y),
            });
        }
    }
    Ok(TileLayout {
        width,
        height,
        tiles,
    })
}

/// PSNR cap reported for identical images.
pub const MAX_PSNR: f64 = 99.0;

/// `10·log₁₀(255² / MSE)`, capped at [`MAX_PSNR`].
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let sum: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&p, &q)| {
            let d = u64::from(p.abs_diff(q));
            d * d
        })
        .sum();
    if sum == 0 {
        return Ok(MAX_PSNR);
    }
    let mse = sum as f64 / a.as_raw().len() as f64;
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(MAX_PSNR))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub tile_size: u32,
    pub partition_limit: usize,
    pub iterations: usize,
    pub seconds: f64,
}

/// Builds one tree per partition limit on the tile at `tile_index`
/// (row-major), timing `build_tree` alone on the calling thread.
pub fn bench_sweep(
    image: &GrayImage,
    tile_size: u32,
    limits: &[usize],
    tile_index: usize,
) -> Result<Vec<BenchRow>> {
    let layout = tile_image(image.width(), image.height(), tile_size)?;
    let t = layout.tiles.get(tile_index).ok_or_else(|| {
        Error::InvalidParam(format!("tile {tile_index} of {}", layout.tiles.len()))
    })?;
    let tile = image.crop(t.x, t.y, t.width, t.height);
    let grid = AngleGrid::for_dims(t.width, t.height);
    limits
        .iter()
        .map(|&limit| {
            let start = Instant::now();
            let (tree, _) = build_tree(&tile, &BuildParams::with_limit(limit), &grid)?;
            Ok(BenchRow {
                tile_size,
                partition_limit: limit,
                iterations: tree.len(),
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RdRow {
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    pub psnr_db: f64,
    /// `false` when the target lay outside the reachable range.
    #[serde(skip)]
    pub target_met: bool,
}

/// Encodes at each target ratio, decodes the stream and measures PSNR.
pub fn rd_sweep(image: &GrayImage, base: &EncoderConfig, targets: &[f64]) -> Result<Vec<RdRow>> {
    targets
        .iter()
        .map(|&ratio| {
            if !(ratio > 1.0) {
                return Err(Error::InvalidParam(format!("target ratio {ratio}")));
            }
            let config = EncoderConfig {
                rate: RateControl::TargetRatio(ratio),
                ..*base
            };
            let encoded = encode_image(image, &config)?;
            let decoded = decode_image(&encoded.bytes)?;
            Ok(RdRow {
                target_ratio: ratio,
                achieved_ratio: encoded.ratio(),
                psnr_db: psnr(image, &decoded)?,
                target_met: encoded.target_met,
            })
        })
        .collect()
}

/// Writes rows as CSV with a header line.
pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
