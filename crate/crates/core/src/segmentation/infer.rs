use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{argmax, image_to_input, Net, NetError};
use super::train::TrainingConfig;
use super::ClassSchema;
use crate::catalog::Category;
use crate::mask::{BinaryMask, LabelMask};
use crate::model::{hash_bytes, RasterImage};

/// Connected pieces smaller than this fraction of the image are dropped.
pub const MIN_REGION_FRACTION: f64 = 0.001;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("weights file {0} is not a whole number of f32 values")]
    Truncated(PathBuf),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("segmentation found no component pixels")]
    SegmentationEmpty,
    #[error("image is {0}x{1}; segmentation needs a square image")]
    NotSquare(u32, u32),
}

/// Anything that labels every pixel of an image with a schema class.
pub trait Segmenter: Send + Sync {
    fn schema(&self) -> &ClassSchema;

    fn predict(&self, image: &RasterImage) -> LabelMask;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub arch: String,
    pub width: usize,
    pub num_classes: usize,
    pub input_size: u32,
    pub schema: ClassSchema,
    pub config: TrainingConfig,
    pub split_seed: Option<u64>,
    pub best_epoch: u32,
    pub best_val_mean_iou: f64,
    /// SHA-256 of `weights.bin`.
    pub training_hash: String,
}

/// A trained network plus its manifest.
///
/// On disk: `weights.bin` (little-endian f32 parameters) and
/// `manifest.json`.
#[derive(Debug, Clone)]
pub struct SegModel {
    net: Net,
    manifest: ModelManifest,
}

fn weights_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl SegModel {
    pub fn new(net: Net, mut manifest: ModelManifest) -> Self {
        manifest.training_hash = hash_bytes(&weights_bytes(&net.params()));
        Self { net, manifest }
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    pub(crate) fn manifest_mut(&mut self) -> &mut ModelManifest {
        &mut self.manifest
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn training_hash(&self) -> &str {
        &self.manifest.training_hash
    }

    pub fn read_weights(path: &Path) -> Result<Vec<f32>, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })?;
        if bytes.len() % 4 != 0 {
            return Err(ModelError::Truncated(path.to_owned()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn write_weights(path: &Path, values: &[f32]) -> Result<(), ModelError> {
        fs::write(path, weights_bytes(values)).map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: PathBuf| move |source| ModelError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_owned()))?;
        Self::write_weights(&dir.join("weights.bin"), &self.net.params())?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("plain data");
        fs::write(&path, text + "\n").map_err(io(path.clone()))
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|source| ModelError::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: ModelManifest =
            serde_json::from_str(&text).map_err(|source| ModelError::Json { path, source })?;
        let mut net = Net::build(&manifest.arch, manifest.num_classes, manifest.width, 0)?;
        net.set_params(&Self::read_weights(&dir.join("weights.bin"))?)?;
        Ok(Self::new(net, manifest))
    }
}

impl Segmenter for SegModel {
    fn schema(&self) -> &ClassSchema {
        &self.manifest.schema
    }

    fn predict(&self, image: &RasterImage) -> LabelMask {
        let s = self.manifest.input_size;
        let input = image_to_input(&image.resize_nearest(s, s));
        let labels = argmax(&self.net.forward(&input, s as usize, s as usize), self.net.num_classes);
        LabelMask::new(s, s, labels)
            .expect("sized")
            .resize_nearest(image.width(), image.height())
    }
}

/// Labels each pixel with the class of the nearest reference colour.
/// Exact on flat-coloured procedural images.
#[derive(Debug, Clone)]
pub struct PaletteSegmenter {
    schema: ClassSchema,
    colors: Vec<[u8; 3]>,
}

impl PaletteSegmenter {
    pub fn new(schema: ClassSchema, colors: Vec<[u8; 3]>) -> Self {
        assert_eq!(schema.num_classes(), colors.len(), "one colour per class");
        Self { schema, colors }
    }

    pub fn for_category(category: Category) -> Self {
        Self::new(category.schema(), category.class_colors())
    }
}

impl Segmenter for PaletteSegmenter {
    fn schema(&self) -> &ClassSchema {
        &self.schema
    }

    fn predict(&self, image: &RasterImage) -> LabelMask {
        let labels = image
            .pixels()
            .chunks_exact(4)
            .map(|px| {
                let d = |c: &[u8; 3]| {
                    (0..3)
                        .map(|i| (px[i] as i32 - c[i] as i32).pow(2))
                        .sum::<i32>()
                };
                (0..self.colors.len())
                    .min_by_key(|&k| d(&self.colors[k]))
                    .unwrap_or(0) as u8
            })
            .collect();
        LabelMask::new(image.width(), image.height(), labels).expect("sized")
    }
}

/// Predict a full-resolution label mask for a square image.
pub fn segment(model: &dyn Segmenter, image: &RasterImage) -> Result<LabelMask, SegmentError> {
    if !image.is_square() {
        return Err(SegmentError::NotSquare(image.width(), image.height()));
    }
    let mask = model.predict(image);
    if mask.labels().iter().all(|&l| l == 0) {
        return Err(SegmentError::SegmentationEmpty);
    }
    Ok(mask)
}

/// One component class's cleaned-up pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRegion {
    pub class_index: u8,
    pub label: String,
    pub mask: BinaryMask,
}

/// 8-connected components of `mask`, each as a list of pixel indices.
pub fn connected_components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut seen = vec![false; bits.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Keep the largest connected piece and every other piece of at least
/// `min_area` pixels.
pub fn clean_class_mask(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let comps = connected_components(mask);
    let largest = comps.iter().map(Vec::len).max().unwrap_or(0);
    let mut bits = vec![false; mask.bits().len()];
    let mut kept_largest = false;
    for comp in &comps {
        let is_largest = !kept_largest && comp.len() == largest;
        kept_largest |= is_largest;
        if is_largest || comp.len() >= min_area {
            for &i in comp {
                bits[i] = true;
            }
        }
    }
    BinaryMask::new(mask.width(), mask.height(), bits).expect("sized")
}

/// Per-class regions of a label mask after dropping small islands.
pub fn regions(mask: &LabelMask, schema: &ClassSchema) -> Result<Vec<ClassRegion>, SegmentError> {
    let total = mask.labels().len();
    let min_area = (total as f64 * MIN_REGION_FRACTION).ceil() as usize;
    let out: Vec<ClassRegion> = (1..schema.num_classes() as u8)
        .filter_map(|c| {
            let raw = mask.class_mask(c);
            if raw.is_empty() {
                return None;
            }
            Some(ClassRegion {
                class_index: c,
                label: schema.label(c)?.to_owned(),
                mask: clean_class_mask(&raw, min_area),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(SegmentError::SegmentationEmpty);
    }
    Ok(out)
}
