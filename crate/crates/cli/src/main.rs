//! `bspc`: encode, decode, benchmark and inspect BSP tree image streams.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bspc_core::codec::quant::DEFAULT_BOUNDS;
use bspc_core::codec::{
    decode_image, decode_stream, encode_image, CoeffQuantizer, EncoderConfig, RateControl,
};
use bspc_core::geometry::{AngleGrid, Region};
use bspc_core::harness::{bench_sweep, psnr, write_csv};
use bspc_core::raster::{read_image, write_pgm};
use bspc_core::tree::BuildParams;
use bspc_core::GrayImage;

#[derive(Parser, Debug)]
#[command(
    name = "bspc",
    version,
    about = "Binary space partitioning image codec"
)]
struct Cli {
    /// Worker threads for tile-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress an 8-bit grayscale PGM or BMP image.
    Encode(EncodeArgs),
    /// Reconstruct a PGM image from a stream.
    Decode(DecodeArgs),
    /// Time tree construction on one tile over a list of partition limits.
    Bench(BenchArgs),
    /// Print the header and per-tile structure of a stream.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct TreeArgs {
    /// Tile side in pixels.
    #[arg(long, default_value_t = 64)]
    tile: u32,

    /// Smallest child region a split may produce, in pixels.
    #[arg(long, default_value_t = 64)]
    limit: usize,

    /// Regions with fewer pixels are never split.
    #[arg(long, default_value_t = 64)]
    min_domain: usize,
}

impl TreeArgs {
    fn params(&self) -> BuildParams {
        BuildParams {
            partition_limit: self.limit,
            min_domain_pixels: self.min_domain,
            error_threshold: 0.0,
        }
    }
}

#[derive(Args, Debug)]
struct EncodeArgs {
    input: PathBuf,

    #[arg(short, long)]
    output: PathBuf,

    #[command(flatten)]
    tree: TreeArgs,

    /// Lagrange multiplier for pruning.
    #[arg(long, conflicts_with = "target_ratio")]
    lambda: Option<f64>,

    /// Search λ for this compression ratio (raw bytes / stream bytes).
    #[arg(long)]
    target_ratio: Option<f64>,

    /// Quantizer step for the slope coefficients.
    #[arg(long, default_value_t = 0.125)]
    slope_step: f64,

    /// Quantizer step for the offset coefficient.
    #[arg(long, default_value_t = 1.0)]
    offset_step: f64,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    input: PathBuf,

    #[arg(short, long)]
    output: PathBuf,

    /// Print the PSNR against this original image.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    input: PathBuf,

    /// Tile side in pixels.
    #[arg(long, default_value_t = 64)]
    tile: u32,

    /// Comma-separated partition limits.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "2000,1000,500,250,128,64"
    )]
    limits: Vec<usize>,

    /// One-based row-major tile number.
    #[arg(long, default_value_t = 1)]
    tile_number: usize,

    /// Write the rows as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    input: PathBuf,

    /// Write a partition map PGM with one gray level per leaf.
    #[arg(long)]
    map: Option<PathBuf>,
}

/// Raised for a missing input file; maps to exit status 2.
#[derive(Debug)]
struct MissingInput(PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "input file not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(MissingInput(path.to_path_buf()).into());
    }
    Ok(())
}

fn read_stream(path: &Path) -> Result<Vec<u8>> {
    require(path)?;
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn encode(args: &EncodeArgs) -> Result<()> {
    require(&args.input)?;
    let image = read_image(&args.input)?;
    let rate = match (args.lambda, args.target_ratio) {
        (_, Some(r)) => RateControl::TargetRatio(r),
        (Some(l), None) => RateControl::Lambda(l),
        (None, None) => RateControl::Lambda(0.0),
    };
    let quantizer = CoeffQuantizer::new(
        [args.slope_step, args.slope_step, args.offset_step],
        DEFAULT_BOUNDS,
    )?;
    let config = EncoderConfig {
        tile_size: args.tree.tile,
        params: args.tree.params(),
        rate,
        quantizer,
    };
    let encoded = encode_image(&image, &config)?;
    fs::write(&args.output, &encoded.bytes)
        .with_context(|| format!("writing {}", args.output.display()))?;

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{}: {} bytes ({} bits), ratio {:.2}:1, lambda {}",
        args.output.display(),
        encoded.bytes.len(),
        encoded.bytes.len() * 8,
        encoded.ratio(),
        encoded.header.lambda
    )?;
    writeln!(
        out,
        "{:>5} {:>10} {:>6} {:>7} {:>8}",
        "tile", "iterations", "lines", "leaves", "bits"
    )?;
    for (i, (stats, tree)) in encoded.stats.iter().zip(&encoded.forest).enumerate() {
        writeln!(
            out,
            "{:>5} {:>10} {:>6} {:>7} {:>8}",
            i + 1,
            stats.iterations,
            stats.lines_drawn,
            tree.leaf_count(),
            encoded.tile_bits[i]
        )?;
    }
    let total: usize = encoded.stats.iter().map(|s| s.iterations).sum();
    writeln!(out, "total iterations {total}")?;
    if let RateControl::TargetRatio(r) = rate {
        if !encoded.target_met {
            eprintln!(
                "warning: target ratio {r} not reachable within 2%; achieved {:.2}",
                encoded.ratio()
            );
        }
    }
    Ok(())
}

fn decode(args: &DecodeArgs) -> Result<()> {
    let bytes = read_stream(&args.input)?;
    let image = decode_image(&bytes)?;
    if let Some(original) = &args.compare {
        require(original)?;
        let reference = read_image(original)?;
        let db = psnr(&reference, &image)?;
        println!("PSNR {db:.4} dB");
    }
    write_pgm(&args.output, &image)?;
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    require(&args.input)?;
    if args.tile_number == 0 {
        bail!("tile numbers start at 1");
    }
    let image = read_image(&args.input)?;
    let rows = bench_sweep(&image, args.tile, &args.limits, args.tile_number - 1)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:>9} {:>15} {:>10} {:>12}",
        "tile size", "partition limit", "iterations", "seconds"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{:>9} {:>15} {:>10} {:>12.6}",
            format!("{0}x{0}", r.tile_size),
            r.partition_limit,
            r.iterations,
            r.seconds
        )?;
    }
    if let Some(path) = &args.csv {
        let file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(file, &rows)?;
    }
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let bytes = read_stream(&args.input)?;
    let stream = decode_stream(&bytes)?;
    let h = &stream.header;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "image {}x{}, tile {}, {} tiles",
        h.width,
        h.height,
        h.tile_size,
        stream.layout.tiles.len()
    )?;
    writeln!(
        out,
        "partition limit {}, min domain {}, lambda {}",
        h.params.partition_limit, h.params.min_domain_pixels, h.lambda
    )?;
    let steps = h.quantizer.steps();
    writeln!(
        out,
        "quantizer steps a {} b {} c {}, index ranges {:?}",
        steps[0],
        steps[1],
        steps[2],
        h.quantizer.ranges()
    )?;
    writeln!(
        out,
        "table bits {}, stream bytes {}",
        stream.tables.table_bits(),
        bytes.len()
    )?;
    writeln!(
        out,
        "{:>5} {:>6} {:>7} {:>6} {:>8}",
        "tile", "nodes", "leaves", "depth", "bits"
    )?;
    for (i, tree) in stream.forest.iter().enumerate() {
        writeln!(
            out,
            "{:>5} {:>6} {:>7} {:>6} {:>8}",
            i + 1,
            tree.len(),
            tree.leaf_count(),
            tree.depth(),
            stream.tile_bits[i]
        )?;
    }
    if let Some(path) = &args.map {
        let mut map = GrayImage::new(h.width, h.height);
        for (tree, t) in stream.forest.iter().zip(&stream.layout.tiles) {
            let mut leaf = 0u32;
            let grid = AngleGrid::for_dims(t.width, t.height);
            tree.walk_regions(Region::tile(t.width, t.height), &grid, |_, node, region| {
                if node.is_leaf() {
                    // 97 is odd, so the first 256 leaves get distinct levels.
                    let level = ((leaf * 97 + 64) % 256) as u8;
                    for p in &region.pixels {
                        map.set(t.x + p.x, t.y + p.y, level);
                    }
                    leaf += 1;
                }
                Ok(())
            })?;
        }
        write_pgm(path, &map)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Bench(a) => bench(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bspc: {e:#}");
            if e.downcast_ref::<MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
