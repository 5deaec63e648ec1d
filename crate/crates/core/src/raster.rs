//! 8-bit grayscale images and file I/O (binary PGM, 8-bit BMP).

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidParam(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn try_get(&self, x: u32, y: u32) -> Option<u8> {
        (x < self.width && y < self.height).then(|| self.get(x, y))
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    /// Copies the `width × height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, width: u32, height: u32) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Writes `tile` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, tile: &GrayImage, x0: u32, y0: u32) {
        for y in 0..tile.height {
            for x in 0..tile.width {
                self.set(x0 + x, y0 + y, tile.get(x, y));
            }
        }
    }
}

/// Reads an 8-bit grayscale PGM (P5) or an 8-bit BMP. Color BMPs are
/// converted to luma.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = ImageReader::open(path)
        .map_err(io)?
        .with_guessed_format()
        .map_err(io)?;
    let format = reader.format();
    let decoded = reader
        .decode()
        .map_err(|e| Error::UnsupportedImage(format!("{}: {e}", path.display())))?;
    let gray = match (format, decoded.color()) {
        (_, ColorType::L8) => decoded.into_luma8(),
        (Some(ImageFormat::Bmp), ColorType::Rgb8 | ColorType::Rgba8) => decoded.into_luma8(),
        (_, color) => {
            return Err(Error::UnsupportedImage(format!(
                "{}: expected 8-bit grayscale, found {color:?}",
                path.display()
            )))
        }
    };
    from_dynamic(DynamicImage::ImageLuma8(gray))
}

fn from_dynamic(image: DynamicImage) -> Result<GrayImage> {
    let gray = image.into_luma8();
    let (width, height) = gray.dimensions();
    GrayImage::from_raw(width, height, gray.into_raw())
}

/// Binary PGM (P5, maxval 255) bytes.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(&encode_pgm(image)).map_err(io)
}
