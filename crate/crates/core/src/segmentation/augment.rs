//! Random horizontal flip and crop-and-resize, applied jointly to an input
//! tensor and its label map.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub hflip_prob: f64,
    /// Fraction of the image area kept by a crop.
    pub crop_scale: f64,
    pub crop_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hflip_prob: 0.5,
            crop_scale: 0.9,
            crop_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

pub fn hflip(x: &mut [f32], labels: &mut [u8], h: usize, w: usize) {
    for row in labels.chunks_exact_mut(w) {
        row.reverse();
    }
    debug_assert_eq!(labels.len(), h * w);
    for row in x.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Crop the `cw × ch` window at `(x0, y0)` and resample it back to `w × h`
/// with nearest neighbour.
pub fn crop_resize(
    x: &[f32],
    labels: &[u8],
    h: usize,
    w: usize,
    (x0, y0, cw, ch): (usize, usize, usize, usize),
) -> (Vec<f32>, Vec<u8>) {
    let channels = x.len() / (h * w);
    let src = |y: usize, xx: usize| (y0 + y * ch / h) * w + x0 + xx * cw / w;
    let mut out_l = Vec::with_capacity(h * w);
    for y in 0..h {
        for xx in 0..w {
            out_l.push(labels[src(y, xx)]);
        }
    }
    let mut out_x = Vec::with_capacity(x.len());
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                out_x.push(plane[src(y, xx)]);
            }
        }
    }
    (out_x, out_l)
}

pub fn augment(
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
    mut x: Vec<f32>,
    mut labels: Vec<u8>,
    h: usize,
    w: usize,
) -> (Vec<f32>, Vec<u8>) {
    if !cfg.enabled {
        return (x, labels);
    }
    if rng.gen_bool(cfg.hflip_prob.clamp(0.0, 1.0)) {
        hflip(&mut x, &mut labels, h, w);
    }
    if cfg.crop_scale < 1.0 && rng.gen_bool(cfg.crop_prob.clamp(0.0, 1.0)) {
        let side = cfg.crop_scale.sqrt();
        let cw = ((w as f64 * side).round() as usize).clamp(1, w);
        let ch = ((h as f64 * side).round() as usize).clamp(1, h);
        let x0 = rng.gen_range(0..=w - cw);
        let y0 = rng.gen_range(0..=h - ch);
        return crop_resize(&x, &labels, h, w, (x0, y0, cw, ch));
    }
    (x, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flip_reverses_rows_of_every_plane() {
        let mut x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let mut l = vec![0, 1, 2, 3, 4, 5];
        hflip(&mut x, &mut l, 2, 3);
        assert_eq!(l, vec![2, 1, 0, 5, 4, 3]);
        assert_eq!(&x[6..9], &[8.0, 7.0, 6.0]);
    }

    #[test]
    fn full_window_crop_is_identity() {
        let x: Vec<f32> = (0..32).map(|v| v as f32).collect();
        let l: Vec<u8> = (0..16).collect();
        let (ox, ol) = crop_resize(&x, &l, 4, 4, (0, 0, 4, 4));
        assert_eq!((ox, ol), (x, l));
    }

    #[test]
    fn labels_follow_pixels() {
        let (h, w) = (8, 8);
        let l: Vec<u8> = (0..64).map(|i| (i % 5) as u8).collect();
        let x: Vec<f32> = l.iter().map(|&v| v as f32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentConfig {
            crop_prob: 1.0,
            ..AugmentConfig::default()
        };
        for _ in 0..20 {
            let (ax, al) = augment(&cfg, &mut rng, x.clone(), l.clone(), h, w);
            assert!(ax.iter().zip(&al).all(|(a, b)| *a == *b as f32));
        }
        let (ax, al) = augment(&AugmentConfig::off(), &mut rng, x.clone(), l.clone(), h, w);
        assert_eq!((ax, al), (x, l));
    }
}
