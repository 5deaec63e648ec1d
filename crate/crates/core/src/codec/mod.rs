//! Bitstream coding of BSP forests.
//!
//! Each tile tree is written in preorder. A node whose region admits a
//! split (enough pixels and a non-empty candidate list) starts with one
//! structure bit; otherwise it is necessarily a leaf and the bit is
//! omitted. Internal nodes then carry the line's position in the region's
//! canonical candidate list as a `⌈log₂ n⌉`-bit index. Leaves carry their
//! quantized `(a, b, c)` coefficients, each coded with its own canonical
//! Huffman table. The decoder replays the same splits and so derives the
//! same candidate lists and field widths without side information.

pub mod bits;
pub mod huffman;
pub mod quant;
pub mod rate;
pub mod stream;

use rayon::prelude::*;

pub use bits::{BitReader, BitWriter};
pub use huffman::HuffmanModel;
pub use quant::{quantize_fit, quantize_leaf, CoeffQuantizer, QuantizedCoeffs};
pub use rate::RateControl;
pub use stream::{StreamHeader, HEADER_LEN, MAGIC, VERSION};

use crate::error::{Error, Result};
use crate::geometry::{split_unchecked, AngleGrid, Region};
use crate::harness::{tile_image, TileLayout};
use crate::raster::GrayImage;
use crate::tree::{
    build_tree, index_bits, render, BspTree, BuildParams, BuildStats, Node, NodeId, NodeKind,
};

/// One Huffman table per coefficient class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoefficientTables {
    pub a: HuffmanModel,
    pub b: HuffmanModel,
    pub c: HuffmanModel,
}

impl CoefficientTables {
    /// Tables fitted to the leaves of `forest`, whose leaf fits must lie on
    /// the quantizer grid.
    pub fn for_forest(forest: &[BspTree], q: &CoeffQuantizer) -> Result<Self> {
        let coeffs: Vec<QuantizedCoeffs> = forest
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter(|n| n.is_leaf())
            .map(|n| quantize_fit(&leaf_fit(n)?, q))
            .collect::<Result<_>>()?;
        Ok(Self::from_coeffs(&coeffs))
    }

    pub fn from_coeffs(coeffs: &[QuantizedCoeffs]) -> Self {
        Self {
            a: HuffmanModel::from_symbols(coeffs.iter().map(|c| c[0])),
            b: HuffmanModel::from_symbols(coeffs.iter().map(|c| c[1])),
            c: HuffmanModel::from_symbols(coeffs.iter().map(|c| c[2])),
        }
    }

    fn models(&self) -> [&HuffmanModel; 3] {
        [&self.a, &self.b, &self.c]
    }

    pub fn write(&self, out: &mut BitWriter) {
        for m in self.models() {
            m.write_table(out);
        }
    }

    pub fn read(bits: &mut BitReader<'_>, q: &CoeffQuantizer) -> Result<Self> {
        let [ra, rb, rc] = q.ranges();
        Ok(Self {
            a: HuffmanModel::read_table(bits, ra.0, ra.1)?,
            b: HuffmanModel::read_table(bits, rb.0, rb.1)?,
            c: HuffmanModel::read_table(bits, rc.0, rc.1)?,
        })
    }

    pub fn table_bits(&self) -> u64 {
        self.models().iter().map(|m| m.table_bits()).sum()
    }

    /// Payload bits of one leaf, or `None` if a coefficient has no code.
    pub fn leaf_bits(&self, coeffs: &QuantizedCoeffs) -> Option<u64> {
        self.models()
            .iter()
            .zip(coeffs)
            .map(|(m, &s)| m.code_len(s).map(u64::from))
            .sum()
    }
}

fn leaf_fit(node: &Node) -> Result<crate::fitting::PlaneFit> {
    node.fit
        .ok_or_else(|| Error::Sync("leaf without a plane fit".into()))
}

/// Serializes one tile tree; returns the number of bits written.
pub fn encode_tree(
    tree: &BspTree,
    tile_region: Region,
    grid: &AngleGrid,
    params: &BuildParams,
    q: &CoeffQuantizer,
    tables: &CoefficientTables,
    out: &mut BitWriter,
) -> Result<u64> {
    let start = out.bit_len();
    tree.walk_regions(tile_region, grid, |id, node, region| {
        let options = params.split_options(region, grid);
        if !options.is_empty() {
            out.write_bit(!node.is_leaf());
        }
        match node.kind {
            NodeKind::Internal { line, .. } => {
                let position = options.position(&line).ok_or_else(|| {
                    Error::Sync(format!(
                        "node {id}: line ({}, {}) not among {} candidates",
                        line.theta_index,
                        line.rho_index,
                        options.len()
                    ))
                })?;
                out.write_bits(position as u64, index_bits(options.len()));
            }
            NodeKind::Leaf => {
                let coeffs = quantize_fit(&leaf_fit(node)?, q)?;
                for (model, symbol) in tables.models().iter().zip(coeffs) {
                    model.encode(symbol, out)?;
                }
            }
        }
        Ok(())
    })?;
    Ok(out.bit_len() - start)
}

/// Reads one tile tree written by [`encode_tree`] with the same geometry,
/// parameters, quantizer and tables. Leaves carry dequantized fits.
pub fn decode_tree(
    bits: &mut BitReader<'_>,
    tile_region: Region,
    grid: &AngleGrid,
    params: &BuildParams,
    q: &CoeffQuantizer,
    tables: &CoefficientTables,
) -> Result<BspTree> {
    let mut nodes: Vec<Node> = Vec::new();
    let mut stack: Vec<(Region, Option<(NodeId, usize)>)> = vec![(tile_region, None)];
    while let Some((region, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some((p, slot)) = parent {
            if let NodeKind::Internal { children, .. } = &mut nodes[p].kind {
                children[slot] = id;
            }
        }
        let options = params.split_options(&region, grid);
        let split = !options.is_empty() && bits.read_bit()?;
        let mut node = Node {
            pixel_count: region.pixel_count(),
            split_options: options.len(),
            fit: None,
            moments: None,
            kind: NodeKind::Leaf,
        };
        if split {
            let position = bits.read_bits(index_bits(options.len()))? as usize;
            let line = options.line_at(position).ok_or_else(|| {
                Error::Corrupt(format!(
                    "line index {position} out of {} candidates",
                    options.len()
                ))
            })?;
            node.kind = NodeKind::Internal {
                line,
                children: [id + 1, usize::MAX],
            };
            let (first, second) = split_unchecked(&region, &line, grid);
            stack.push((second, Some((id, 1))));
            stack.push((first, Some((id, 0))));
        } else {
            let coeffs = [
                tables.a.decode(bits)?,
                tables.b.decode(bits)?,
                tables.c.decode(bits)?,
            ];
            node.fit = Some(q.dequantize(coeffs));
        }
        nodes.push(node);
    }
    Ok(BspTree { nodes })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub tile_size: u32,
    pub params: BuildParams,
    pub rate: RateControl,
    pub quantizer: CoeffQuantizer,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            tile_size: 64,
            params: BuildParams::default(),
            rate: RateControl::Lambda(0.0),
            quantizer: CoeffQuantizer::default(),
        }
    }
}

/// A finished encoding together with the encoder-side forest it describes.
#[derive(Clone, Debug)]
pub struct EncodedImage {
    pub bytes: Vec<u8>,
    pub header: StreamHeader,
    /// Pruned trees whose leaf fits are the dequantized coefficients
    /// actually written, one per tile in row-major order.
    pub forest: Vec<BspTree>,
    /// Unpruned tree statistics per tile.
    pub stats: Vec<BuildStats>,
    pub tile_bits: Vec<u64>,
    /// `false` when a target ratio was requested and could not be met
    /// within tolerance.
    pub target_met: bool,
}

impl EncodedImage {
    pub fn ratio(&self) -> f64 {
        f64::from(self.header.width) * f64::from(self.header.height) / self.bytes.len() as f64
    }

    /// The image the decoder will reconstruct.
    pub fn reconstruction(&self) -> Result<GrayImage> {
        render_forest(
            &self.forest,
            &tile_image(self.header.width, self.header.height, self.header.tile_size)?,
        )
    }
}

/// Renders tile trees into one image.
pub fn render_forest(forest: &[BspTree], layout: &TileLayout) -> Result<GrayImage> {
    let mut image = GrayImage::new(layout.width, layout.height);
    for (tree, tile) in forest.iter().zip(&layout.tiles) {
        image.paste(&render(tree, tile.width, tile.height)?, tile.x, tile.y);
    }
    Ok(image)
}

/// Builds one tree per tile (tiles in parallel), prunes and quantizes
/// them under `config.rate`, and serializes the forest.
pub fn encode_image(image: &GrayImage, config: &EncoderConfig) -> Result<EncodedImage> {
    config.params.validate()?;
    config.quantizer.validate()?;
    if image.width() == 0
        || image.height() == 0
        || image.width() > 0xFFFF
        || image.height() > 0xFFFF
    {
        return Err(Error::UnsupportedImage(format!(
            "image size {}x{}",
            image.width(),
            image.height()
        )));
    }
    if !(stream::MIN_TILE_SIZE..=stream::MAX_TILE_SIZE).contains(&config.tile_size) {
        return Err(Error::InvalidParam(format!(
            "tile size {}",
            config.tile_size
        )));
    }
    let layout = tile_image(image.width(), image.height(), config.tile_size)?;
    let built: Vec<(BspTree, BuildStats)> = layout
        .tiles
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let tile = image.crop(t.x, t.y, t.width, t.height);
            let grid = AngleGrid::for_dims(t.width, t.height);
            build_tree(&tile, &config.params, &grid).map(|(tree, mut stats)| {
                stats.tile = i;
                (tree, stats)
            })
        })
        .collect::<Result<_>>()?;
    let (trees, stats): (Vec<BspTree>, Vec<BuildStats>) = built.into_iter().unzip();

    let planner = rate::Planner::new(&trees, &config.quantizer)?;
    let raw_bytes = f64::from(image.width()) * f64::from(image.height());
    let plan = planner.plan(config.rate, raw_bytes)?;

    let header = StreamHeader {
        width: image.width(),
        height: image.height(),
        tile_size: config.tile_size,
        params: BuildParams {
            error_threshold: 0.0,
            ..config.params
        },
        lambda: stream::snap_lambda(plan.lambda),
        quantizer: config.quantizer,
    };
    let tables = CoefficientTables::for_forest(&plan.forest, &config.quantizer)?;
    let mut out = BitWriter::with_bytes(header.to_bytes());
    tables.write(&mut out);
    let mut tile_bits = Vec::with_capacity(layout.tiles.len());
    for (tree, t) in plan.forest.iter().zip(&layout.tiles) {
        tile_bits.push(encode_tree(
            tree,
            Region::tile(t.width, t.height),
            &AngleGrid::for_dims(t.width, t.height),
            &config.params,
            &config.quantizer,
            &tables,
            &mut out,
        )?);
    }
    let bytes = out.finish();
    if bytes.len() as u64 != plan.bytes {
        return Err(Error::Sync(format!(
            "rate estimate {} bytes, wrote {}",
            plan.bytes,
            bytes.len()
        )));
    }
    Ok(EncodedImage {
        bytes,
        header: StreamHeader {
            params: config.params,
            ..header
        },
        forest: plan.forest,
        stats,
        tile_bits,
        target_met: plan.target_met,
    })
}

/// A parsed stream: header, tables and one tree per tile.
#[derive(Clone, Debug)]
pub struct DecodedStream {
    pub header: StreamHeader,
    pub tables: CoefficientTables,
    pub layout: TileLayout,
    pub forest: Vec<BspTree>,
    pub tile_bits: Vec<u64>,
}

pub fn decode_stream(bytes: &[u8]) -> Result<DecodedStream> {
    let header = StreamHeader::parse(bytes)?;
    let layout = tile_image(header.width, header.height, header.tile_size)?;
    let mut bits = BitReader::at_byte(bytes, HEADER_LEN);
    let tables = CoefficientTables::read(&mut bits, &header.quantizer)?;
    // Every tile costs at least one bit, which bounds the work a corrupt
    // header can request.
    if (layout.tiles.len() as u64) > bits.remaining() {
        return Err(Error::Corrupt(format!(
            "{} tiles but only {} payload bits",
            layout.tiles.len(),
            bits.remaining()
        )));
    }
    let mut forest = Vec::with_capacity(layout.tiles.len());
    let mut tile_bits = Vec::with_capacity(layout.tiles.len());
    for (i, t) in layout.tiles.iter().enumerate() {
        let start = bits.position();
        let tree = decode_tree(
            &mut bits,
            Region::tile(t.width, t.height),
            &AngleGrid::for_dims(t.width, t.height),
            &header.params,
            &header.quantizer,
            &tables,
        )
        .map_err(|e| Error::CorruptTile {
            tile: i,
            reason: e.to_string(),
        })?;
        tile_bits.push(bits.position() - start);
        forest.push(tree);
    }
    if bits.remaining() >= 8 {
        return Err(Error::Corrupt(format!(
            "{} trailing bits after the last tile",
            bits.remaining()
        )));
    }
    Ok(DecodedStream {
        header,
        tables,
        layout,
        forest,
        tile_bits,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    let stream = decode_stream(bytes)?;
    render_forest(&stream.forest, &stream.layout)
}
