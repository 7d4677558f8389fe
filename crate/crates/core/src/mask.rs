//! Per-pixel label maps and binary masks.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("mask buffer has {actual} entries, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("mask dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("label {label} at pixel {index} exceeds class count {classes}")]
    LabelOutOfRange {
        label: u8,
        index: usize,
        classes: usize,
    },
    #[error("mask png must be single-channel 8-bit")]
    NotGray8,
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

/// Row-major class indices; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if labels.len() != expected {
            return Err(MaskError::BufferSize {
                expected,
                actual: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn background(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u8) {
        self.labels[(y * self.width + x) as usize] = label;
    }

    /// Check every label is below `num_classes` (background included).
    pub fn check_labels(&self, num_classes: usize) -> Result<(), MaskError> {
        match self
            .labels
            .iter()
            .position(|&l| l as usize >= num_classes)
        {
            Some(index) => Err(MaskError::LabelOutOfRange {
                label: self.labels[index],
                index,
                classes: num_classes,
            }),
            None => Ok(()),
        }
    }

    pub fn same_size(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if (self.width, self.height) != (width, height) {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                width,
                height,
            ));
        }
        Ok(())
    }

    pub fn class_mask(&self, class: u8) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == class).collect(),
        }
    }

    /// Nearest-neighbour resample.
    pub fn resize_nearest(&self, width: u32, height: u32) -> LabelMask {
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height as u64) as u32;
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width as u64) as u32;
                labels.push(self.get(sx, sy));
            }
        }
        LabelMask {
            width,
            height,
            labels,
        }
    }

    /// Encode as a single-channel 8-bit PNG of class indices.
    pub fn to_png(&self) -> Vec<u8> {
        let img = GrayImage::from_raw(self.width, self.height, self.labels.clone())
            .expect("buffer sized from dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("encoding to memory cannot fail");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, MaskError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            _ => return Err(MaskError::NotGray8),
        };
        let (width, height) = gray.dimensions();
        Self::new(width, height, gray.into_raw())
    }
}

/// A boolean per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BufferSize {
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.bits[(y * self.width + x) as usize] = on;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Mean pixel position of the set bits, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                sx += (i % self.width as usize) as u64;
                sy += (i / self.width as usize) as u64;
                n += 1;
            }
        }
        (n > 0).then(|| (sx as f64 / n as f64, sy as f64 / n as f64))
    }

    /// Black/white PNG (255 = set), the form inpainting endpoints accept.
    pub fn to_png(&self) -> Vec<u8> {
        let mut img = GrayImage::new(self.width, self.height);
        for (i, &b) in self.bits.iter().enumerate() {
            let (x, y) = (i as u32 % self.width, i as u32 / self.width);
            img.put_pixel(x, y, Luma([if b { 255 } else { 0 }]));
        }
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("encoding to memory cannot fail");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, MaskError> {
        let gray = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (width, height) = gray.dimensions();
        Self::new(width, height, gray.pixels().map(|p| p.0[0] >= 128).collect())
    }
}

/// Serialized as a base64 PNG string.
impl serde::Serialize for BinaryMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use base64::Engine;
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(self.to_png()))
    }
}

impl<'de> serde::Deserialize<'de> for BinaryMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use base64::Engine;
        use serde::de::Error;
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(D::Error::custom)?;
        BinaryMask::from_png(&bytes).map_err(D::Error::custom)
    }
}
