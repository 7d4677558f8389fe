//! A tiny fully convolutional network with hand-written backprop.
//!
//! Tensors are single images stored channel-major (`c * h * w + y * w + x`).
//! Convolutions use zero "same" padding; parallelism is per output (forward,
//! weight gradient) or per input channel (input gradient).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::RasterImage;

pub const DEFAULT_ARCH: &str = "atrous-lite";
pub const ARCHITECTURES: &[&str] = &["atrous-lite", "pixel-mlp"];

const INPUT_MEAN: f32 = 0.5;
const INPUT_STD: f32 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("unknown architecture {0:?}; registered: atrous-lite, pixel-mlp")]
    UnknownArch(String),
    #[error("weights hold {actual} values, architecture needs {expected}")]
    WeightCount { expected: usize, actual: usize },
}

/// Normalised RGB planes of `image`.
pub fn image_to_input(image: &RasterImage) -> Vec<f32> {
    let n = (image.width() * image.height()) as usize;
    let mut out = vec![0.0; 3 * n];
    for (i, px) in image.pixels().chunks_exact(4).enumerate() {
        for c in 0..3 {
            out[c * n + i] = (px[c] as f32 / 255.0 - INPUT_MEAN) / INPUT_STD;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub dilation: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

/// Valid output range `[lo, hi)` along one axis for a tap offset `off`.
fn span(off: isize, len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

impl Conv2d {
    fn new(cin: usize, cout: usize, k: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (cin * k * k) as f32).sqrt();
        Self {
            cin,
            cout,
            k,
            dilation,
            w: (0..cout * cin * k * k).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: vec![0.0; cout],
        }
    }

    fn zeroed(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            dilation: 1,
            w: vec![0.0; cout * cin * k * k],
            b: vec![0.0; cout],
        }
    }

    fn taps(&self) -> impl Iterator<Item = (usize, isize, isize)> + '_ {
        let pad = (self.dilation * (self.k - 1) / 2) as isize;
        let (k, d) = (self.k, self.dilation as isize);
        (0..k * k).map(move |t| {
            let (ky, kx) = ((t / k) as isize, (t % k) as isize);
            (t, ky * d - pad, kx * d - pad)
        })
    }

    fn widx(&self, o: usize, i: usize, t: usize) -> usize {
        (o * self.cin + i) * self.k * self.k + t
    }

    pub fn forward(&self, x: &[f32], h: usize, w: usize) -> Vec<f32> {
        let hw = h * w;
        let mut out = vec![0.0; self.cout * hw];
        out.par_chunks_mut(hw).enumerate().for_each(|(o, plane)| {
            plane.fill(self.b[o]);
            for i in 0..self.cin {
                let src = &x[i * hw..(i + 1) * hw];
                for (t, oy, ox) in self.taps() {
                    let wt = self.w[self.widx(o, i, t)];
                    if wt == 0.0 {
                        continue;
                    }
                    let (y0, y1) = span(oy, h);
                    let (x0, x1) = span(ox, w);
                    for y in y0..y1 {
                        let sy = (y as isize + oy) as usize;
                        let s0 = (x0 as isize + ox) as usize;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + s0..sy * w + s0 + (x1 - x0)];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wt * v;
                        }
                    }
                }
            }
        });
        out
    }

    /// Gradients `(dx, dw, db)`; `dx` only when `need_dx`.
    pub fn backward(
        &self,
        x: &[f32],
        dy: &[f32],
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
        let hw = h * w;
        let kk = self.k * self.k;
        let per_out: Vec<(Vec<f32>, f32)> = (0..self.cout)
            .into_par_iter()
            .map(|o| {
                let g = &dy[o * hw..(o + 1) * hw];
                let mut dw = vec![0.0f32; self.cin * kk];
                for i in 0..self.cin {
                    let src = &x[i * hw..(i + 1) * hw];
                    for (t, oy, ox) in self.taps() {
                        let (y0, y1) = span(oy, h);
                        let (x0, x1) = span(ox, w);
                        let mut acc = 0.0f32;
                        for y in y0..y1 {
                            let sy = (y as isize + oy) as usize;
                            let s0 = (x0 as isize + ox) as usize;
                            let gr = &g[y * w + x0..y * w + x1];
                            let s = &src[sy * w + s0..sy * w + s0 + (x1 - x0)];
                            acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f32>();
                        }
                        dw[i * kk + t] = acc;
                    }
                }
                (dw, g.iter().sum())
            })
            .collect();
        let mut dw = Vec::with_capacity(self.w.len());
        let mut db = Vec::with_capacity(self.cout);
        for (w_o, b_o) in per_out {
            dw.extend(w_o);
            db.push(b_o);
        }

        let dx = need_dx.then(|| {
            let mut dx = vec![0.0f32; self.cin * hw];
            dx.par_chunks_mut(hw).enumerate().for_each(|(i, plane)| {
                for o in 0..self.cout {
                    let g = &dy[o * hw..(o + 1) * hw];
                    for (t, oy, ox) in self.taps() {
                        let wt = self.w[self.widx(o, i, t)];
                        if wt == 0.0 {
                            continue;
                        }
                        let (y0, y1) = span(oy, h);
                        let (x0, x1) = span(ox, w);
                        for y in y0..y1 {
                            let sy = (y as isize + oy) as usize;
                            let s0 = (x0 as isize + ox) as usize;
                            let dst = &mut plane[sy * w + s0..sy * w + s0 + (x1 - x0)];
                            for (d, v) in dst.iter_mut().zip(&g[y * w + x0..y * w + x1]) {
                                *d += wt * v;
                            }
                        }
                    }
                }
            });
            dx
        });
        (dx, dw, db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
}

/// Per-layer inputs recorded by [`Net::forward_cached`].
pub struct Activations {
    pub inputs: Vec<Vec<f32>>,
    pub logits: Vec<f32>,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub arch: String,
    pub width: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

impl Net {
    /// Build a registered architecture. The classifier head starts at zero,
    /// so the untrained net predicts a uniform distribution.
    pub fn build(arch: &str, num_classes: usize, width: usize, seed: u64) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match arch {
            "atrous-lite" => vec![
                Layer::Conv(Conv2d::new(3, width, 3, 1, &mut rng)),
                Layer::Relu,
                Layer::Conv(Conv2d::new(width, width, 3, 2, &mut rng)),
                Layer::Relu,
                Layer::Conv(Conv2d::zeroed(width, num_classes, 1)),
            ],
            "pixel-mlp" => vec![
                Layer::Conv(Conv2d::new(3, width, 1, 1, &mut rng)),
                Layer::Relu,
                Layer::Conv(Conv2d::zeroed(width, num_classes, 1)),
            ],
            other => return Err(NetError::UnknownArch(other.to_owned())),
        };
        Ok(Self {
            arch: arch.to_owned(),
            width,
            num_classes,
            layers,
        })
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Relu => None,
        })
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Relu => None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(|c| c.w.len() + c.b.len()).sum()
    }

    /// Parameters in a fixed order: each conv's weights then biases.
    pub fn params(&self) -> Vec<f32> {
        self.convs()
            .flat_map(|c| c.w.iter().chain(&c.b).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[f32]) -> Result<(), NetError> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(NetError::WeightCount {
                expected,
                actual: values.len(),
            });
        }
        let mut rest = values;
        for c in self.convs_mut() {
            let (w, tail) = rest.split_at(c.w.len());
            c.w.copy_from_slice(w);
            let (b, tail) = tail.split_at(c.b.len());
            c.b.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Copy every layer but the head from `values` (a full parameter
    /// vector of the same architecture).
    pub fn load_encoder(&mut self, values: &[f32]) -> Result<(), NetError> {
        let head = self.convs().last().map_or(0, |c| c.w.len() + c.b.len());
        let body = self.param_count() - head;
        if values.len() < body {
            return Err(NetError::WeightCount {
                expected: body,
                actual: values.len(),
            });
        }
        let mut full = self.params();
        full[..body].copy_from_slice(&values[..body]);
        self.set_params(&full)
    }

    pub fn forward(&self, x: &[f32], h: usize, w: usize) -> Vec<f32> {
        self.forward_cached(x.to_vec(), h, w).logits
    }

    pub fn forward_cached(&self, x: Vec<f32>, h: usize, w: usize) -> Activations {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let next = match layer {
                Layer::Conv(c) => c.forward(&cur, h, w),
                Layer::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
            };
            inputs.push(cur);
            cur = next;
        }
        Activations {
            inputs,
            logits: cur,
            h,
            w,
        }
    }

    /// Parameter gradient (ordered like [`Net::params`]) for `dlogits`.
    pub fn backward(&self, acts: &Activations, dlogits: Vec<f32>) -> Vec<f32> {
        let mut grads: Vec<(Vec<f32>, Vec<f32>)> = Vec::new();
        let mut g = dlogits;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts.inputs[idx];
            match layer {
                Layer::Conv(c) => {
                    let (dx, dw, db) = c.backward(x, &g, acts.h, acts.w, idx > 0);
                    grads.push((dw, db));
                    match dx {
                        Some(dx) => g = dx,
                        None => break,
                    }
                }
                Layer::Relu => {
                    for (gv, xv) in g.iter_mut().zip(x) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
            }
        }
        grads
            .into_iter()
            .rev()
            .flat_map(|(w, b)| w.into_iter().chain(b))
            .collect()
    }
}

/// Channel softmax of class-major logits, in f64.
pub fn softmax(logits: &[f32], classes: usize) -> Vec<f64> {
    let n = logits.len() / classes;
    let mut out = vec![0.0f64; logits.len()];
    for i in 0..n {
        let max = (0..classes)
            .map(|c| logits[c * n + i])
            .fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0;
        for c in 0..classes {
            let e = (logits[c * n + i] as f64 - max).exp();
            out[c * n + i] = e;
            sum += e;
        }
        for c in 0..classes {
            out[c * n + i] /= sum;
        }
    }
    out
}

/// Pull a gradient with respect to softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64], classes: usize) -> Vec<f32> {
    let n = probs.len() / classes;
    let mut out = vec![0.0f32; probs.len()];
    for i in 0..n {
        let dot: f64 = (0..classes).map(|c| probs[c * n + i] * dprobs[c * n + i]).sum();
        for c in 0..classes {
            let j = c * n + i;
            out[j] = (probs[j] * (dprobs[j] - dot)) as f32;
        }
    }
    out
}

/// Per-pixel argmax of class-major logits.
pub fn argmax(logits: &[f32], classes: usize) -> Vec<u8> {
    let n = logits.len() / classes;
    (0..n)
        .map(|i| {
            (0..classes)
                .max_by(|&a, &b| logits[a * n + i].total_cmp(&logits[b * n + i]).then(b.cmp(&a)))
                .unwrap_or(0) as u8
        })
        .collect()
}

/// Adam with the usual defaults (β1 0.9, β2 0.999, ε 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    t: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let lr = lr as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}
