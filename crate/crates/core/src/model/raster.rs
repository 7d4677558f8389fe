use std::fmt;
use std::io::Cursor;
use std::sync::Arc;

use image::{ImageFormat, RgbaImage};
use sha2::{Digest, Sha256};

/// Errors produced when building or decoding a [`RasterImage`].
#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height} RGBA")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

/// An immutable RGBA image with a content digest.
///
/// `content_hash` is the lowercase hex SHA-256 of the raw RGBA bytes, so two
/// images compare equal iff their hashes do. The pixel buffer is shared, so
/// cloning is cheap.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Arc<[u8]>,
    content_hash: String,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 4;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        let content_hash = hash_bytes(&pixels);
        Ok(Self {
            width,
            height,
            pixels: pixels.into(),
            content_hash,
        })
    }

    /// A uniformly filled image.
    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Self {
        let pixels = rgba
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 4)
            .collect();
        Self::new(width, height, pixels).expect("buffer sized from dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        [
            self.pixels[i],
            self.pixels[i + 1],
            self.pixels[i + 2],
            self.pixels[i + 3],
        ]
    }

    /// Produce a new image by editing a copy of the pixel buffer.
    pub fn map_pixels(&self, edit: impl FnOnce(&mut [u8])) -> Self {
        let mut buf = self.pixels.to_vec();
        edit(&mut buf);
        Self::new(self.width, self.height, buf).expect("edit preserves buffer length")
    }

    /// Nearest-neighbour resample, sampling like `LabelMask::resize_nearest`.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut buf = Vec::with_capacity(width as usize * height as usize * 4);
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height as u64) as u32;
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width as u64) as u32;
                buf.extend_from_slice(&self.pixel(sx, sy));
            }
        }
        Self::new(width, height, buf).expect("sized from dimensions")
    }

    pub fn to_rgba_image(&self) -> RgbaImage {
        RgbaImage::from_raw(self.width, self.height, self.pixels.to_vec())
            .expect("buffer sized from dimensions")
    }

    pub fn from_rgba_image(img: RgbaImage) -> Self {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw()).expect("RgbaImage buffers are RGBA")
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgba_image()
            .write_to(&mut out, ImageFormat::Png)
            .expect("encoding to memory cannot fail");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Self::from_rgba_image(img.to_rgba8()))
    }
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("content_hash", &self.content_hash)
            .finish()
    }
}

pub(crate) fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
