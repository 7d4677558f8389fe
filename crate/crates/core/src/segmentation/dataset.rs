//! On-disk dataset layout and splitting.
//!
//! ```text
//! <root>/schema.json
//! <root>/images/<id>.png     RGBA concept images
//! <root>/masks/<id>.png      8-bit class-index masks
//! <root>/split.json          optional train/val/test manifest
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schema::SchemaError;
use super::ClassSchema;
use crate::mask::{LabelMask, MaskError};
use crate::model::{RasterError, RasterImage};

pub const MIN_SPLIT_ITEMS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
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
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("mask {id}: {source}")]
    Mask { id: String, source: MaskError },
    #[error("image {id}: {source}")]
    Image { id: String, source: RasterError },
    #[error("image {0} has no mask")]
    MissingMask(String),
    #[error("mask {id} is {mask:?} but its image is {image:?}")]
    SizeMismatch {
        id: String,
        image: (u32, u32),
        mask: (u32, u32),
    },
    #[error("dataset has {0} items; splitting needs at least {MIN_SPLIT_ITEMS}")]
    DatasetTooSmall(usize),
    #[error("split lists unknown id {0:?}")]
    UnknownId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn part(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Shuffle `ids` by `seed` and slice 8:1:1 (`⌊0.8n⌋`, `⌊0.1n⌋`, remainder).
///
/// Ids are sorted first so the result does not depend on listing order.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit, DatasetError> {
    let n = ids.len();
    if n < MIN_SPLIT_ITEMS {
        return Err(DatasetError::DatasetTooSmall(n));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        seed,
        train: shuffled,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RasterImage,
    pub mask: LabelMask,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    schema: ClassSchema,
}

impl Dataset {
    /// Create the directory layout and write `schema.json`.
    pub fn create(root: impl Into<PathBuf>, schema: ClassSchema) -> Result<Self, DatasetError> {
        schema.validate()?;
        let root = root.into();
        for dir in ["images", "masks"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let ds = Self { root, schema };
        ds.write_json("schema.json", &ds.schema)?;
        Ok(ds)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        let schema: ClassSchema = read_json(&root.join("schema.json"))?;
        schema.validate()?;
        Ok(Self { root, schema })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn schema(&self) -> &ClassSchema {
        &self.schema
    }

    fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.png"))
    }

    /// Sorted ids of all images; every image must have a mask.
    pub fn ids(&self) -> Result<Vec<String>, DatasetError> {
        let dir = self.root.join("images");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == "png") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_owned());
                }
            }
        }
        ids.sort();
        if let Some(id) = ids.iter().find(|id| !self.mask_path(id).exists()) {
            return Err(DatasetError::MissingMask(id.clone()));
        }
        Ok(ids)
    }

    pub fn add(&self, sample: &Sample) -> Result<(), DatasetError> {
        let (ip, mp) = (self.image_path(&sample.id), self.mask_path(&sample.id));
        fs::write(&ip, sample.image.to_png()).map_err(io_err(&ip))?;
        fs::write(&mp, sample.mask.to_png()).map_err(io_err(&mp))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Sample, DatasetError> {
        let ip = self.image_path(id);
        let mp = self.mask_path(id);
        if !ip.exists() {
            return Err(DatasetError::UnknownId(id.to_owned()));
        }
        let image = RasterImage::from_png(&fs::read(&ip).map_err(io_err(&ip))?).map_err(|source| {
            DatasetError::Image {
                id: id.to_owned(),
                source,
            }
        })?;
        if !mp.exists() {
            return Err(DatasetError::MissingMask(id.to_owned()));
        }
        let mask_err = |source| DatasetError::Mask {
            id: id.to_owned(),
            source,
        };
        let mask = LabelMask::from_png(&fs::read(&mp).map_err(io_err(&mp))?).map_err(mask_err)?;
        if (mask.width(), mask.height()) != (image.width(), image.height()) {
            return Err(DatasetError::SizeMismatch {
                id: id.to_owned(),
                image: (image.width(), image.height()),
                mask: (mask.width(), mask.height()),
            });
        }
        mask.check_labels(self.schema.num_classes()).map_err(mask_err)?;
        Ok(Sample {
            id: id.to_owned(),
            image,
            mask,
        })
    }

    pub fn load_many(&self, ids: &[String]) -> Result<Vec<Sample>, DatasetError> {
        ids.par_iter().map(|id| self.load(id)).collect()
    }

    /// Load every sample, returning the item count.
    pub fn validate(&self) -> Result<usize, DatasetError> {
        let ids = self.ids()?;
        ids.par_iter().try_for_each(|id| self.load(id).map(drop))?;
        Ok(ids.len())
    }

    pub fn write_split(&self, split: &DatasetSplit) -> Result<(), DatasetError> {
        self.write_json("split.json", split)
    }

    pub fn read_split(&self) -> Result<DatasetSplit, DatasetError> {
        let split: DatasetSplit = read_json(&self.root.join("split.json"))?;
        let ids = self.ids()?;
        for id in split.train.iter().chain(&split.val).chain(&split.test) {
            if ids.binary_search(id).is_err() {
                return Err(DatasetError::UnknownId(id.clone()));
            }
        }
        Ok(split)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), DatasetError> {
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(value).expect("plain data serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Schema of the synthetic shapes set.
pub fn shapes_schema() -> ClassSchema {
    ClassSchema::new("shapes", &["disc", "block", "wedge"])
}

/// A flat-coloured three-part figure on a light background.
///
/// Parts are a disc, an axis-aligned block and a triangular wedge with
/// randomised placement, size and a small per-image colour jitter. Later
/// parts are painted over earlier ones; the mask records what is visible.
pub fn synthetic_shapes(size: u32, seed: u64) -> (RasterImage, LabelMask) {
    const BASE: [[u8; 3]; 4] = [[240, 240, 236], [220, 60, 60], [60, 110, 220], [60, 180, 90]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let mut colors = BASE;
    for c in colors.iter_mut() {
        for ch in c.iter_mut() {
            *ch = (*ch as i32 + rng.gen_range(-12..=12)).clamp(0, 255) as u8;
        }
    }
    let (cx, cy, r) = (
        rng.gen_range(0.25..0.75) * s,
        rng.gen_range(0.25..0.75) * s,
        rng.gen_range(0.12..0.22) * s,
    );
    let (bx, by) = (rng.gen_range(0.05..0.55) * s, rng.gen_range(0.05..0.55) * s);
    let (bw, bh) = (rng.gen_range(0.2..0.4) * s, rng.gen_range(0.15..0.35) * s);
    let apex = (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.05..0.4) * s);
    let base_y = apex.1 + rng.gen_range(0.25..0.45) * s;
    let half = rng.gen_range(0.12..0.25) * s;
    let tri = [apex, (apex.0 - half, base_y), (apex.0 + half, base_y)];

    let mut labels = vec![0u8; (size * size) as usize];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let i = (y * size + x) as usize;
            if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                labels[i] = 1;
            }
            if px >= bx && px < bx + bw && py >= by && py < by + bh {
                labels[i] = 2;
            }
            if in_triangle((px, py), tri) {
                labels[i] = 3;
            }
        }
    }
    let pixels = labels
        .iter()
        .flat_map(|&l| {
            let [r, g, b] = colors[l as usize];
            [r, g, b, 255]
        })
        .collect();
    (
        RasterImage::new(size, size, pixels).expect("sized from dimensions"),
        LabelMask::new(size, size, labels).expect("sized from dimensions"),
    )
}

fn in_triangle(p: (f32, f32), t: [(f32, f32); 3]) -> bool {
    let side = |a: (f32, f32), b: (f32, f32)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let d = [side(t[0], t[1]), side(t[1], t[2]), side(t[2], t[0])];
    d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:04}")).collect()
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_dataset(&ids(600), 1).unwrap().sizes(), (480, 60, 60));
        assert_eq!(split_dataset(&ids(10), 1).unwrap().sizes(), (8, 1, 1));
        assert_eq!(split_dataset(&ids(40), 1).unwrap().sizes(), (32, 4, 4));
        assert_eq!(split_dataset(&ids(19), 1).unwrap().sizes(), (15, 1, 3));
        assert!(matches!(
            split_dataset(&ids(9), 1),
            Err(DatasetError::DatasetTooSmall(9))
        ));
    }

    #[test]
    fn split_ignores_input_order() {
        let mut rev = ids(30);
        rev.reverse();
        assert_eq!(split_dataset(&rev, 42).unwrap(), split_dataset(&ids(30), 42).unwrap());
    }

    proptest! {
        #[test]
        fn split_partitions(seed in any::<u64>(), n in 10usize..200) {
            let all = ids(n);
            let a = split_dataset(&all, seed).unwrap();
            prop_assert_eq!(&a, &split_dataset(&all, seed).unwrap());
            let mut joined: Vec<_> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
            joined.sort();
            prop_assert_eq!(joined, all);
            prop_assert_eq!(a.sizes(), (n * 8 / 10, n / 10, n - n * 8 / 10 - n / 10));
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::create(dir.path().join("shapes"), shapes_schema()).unwrap();
        for i in 0..3 {
            let (image, mask) = synthetic_shapes(32, i);
            ds.add(&Sample {
                id: format!("s{i}"),
                image,
                mask,
            })
            .unwrap();
        }
        let reopened = Dataset::open(ds.root()).unwrap();
        assert_eq!(reopened.schema(), &shapes_schema());
        assert_eq!(reopened.ids().unwrap(), vec!["s0", "s1", "s2"]);
        assert_eq!(reopened.validate().unwrap(), 3);
        let s = reopened.load("s1").unwrap();
        assert_eq!(s.mask, synthetic_shapes(32, 1).1);
        fs::remove_file(ds.root().join("masks/s2.png")).unwrap();
        assert!(matches!(reopened.ids(), Err(DatasetError::MissingMask(_))));
    }

    #[test]
    fn shapes_draw_every_part() {
        for seed in 0..20 {
            let (img, mask) = synthetic_shapes(64, seed);
            for class in 1..=3u8 {
                assert!(mask.class_mask(class).area() > 0, "seed {seed} class {class}");
            }
            assert_eq!(img.pixel(0, 0)[3], 255);
        }
    }
}
