//! Multi-class soft dice loss.
//!
//! Probabilities are laid out class-major: `probs[c * n + i]` is the
//! probability of class `c` at pixel `i`, `n` pixels per plane.

pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{len} probabilities cannot hold {classes} classes over {pixels} pixels")]
    Shape {
        len: usize,
        classes: usize,
        pixels: usize,
    },
    #[error("label {label} at pixel {pixel} is not below {classes}")]
    Label {
        label: u8,
        pixel: usize,
        classes: usize,
    },
    #[error("probabilities at pixel {pixel} sum to {sum}, not 1")]
    NotNormalized { pixel: usize, sum: f64 },
}

fn check(probs: &[f64], classes: usize, labels: &[u8]) -> Result<(), LossError> {
    let n = labels.len();
    if classes == 0 || n == 0 || probs.len() != classes * n {
        return Err(LossError::Shape {
            len: probs.len(),
            classes,
            pixels: n,
        });
    }
    for (pixel, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(LossError::Label {
                label,
                pixel,
                classes,
            });
        }
        let sum: f64 = (0..classes).map(|c| probs[c * n + pixel]).sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(LossError::NotNormalized { pixel, sum });
        }
    }
    Ok(())
}

/// Per-class sums `(Σ p·g, Σ p + Σ g)`.
fn class_sums(probs: &[f64], classes: usize, labels: &[u8]) -> Vec<(f64, f64)> {
    let n = labels.len();
    (0..classes)
        .map(|c| {
            let plane = &probs[c * n..(c + 1) * n];
            let mut inter = 0.0;
            let mut sum = 0.0;
            for (&p, &l) in plane.iter().zip(labels) {
                let g = f64::from(l as usize == c);
                inter += p * g;
                sum += p + g;
            }
            (inter, sum)
        })
        .collect()
}

/// `1 − mean_c (2·Σpg + ε) / (Σp + Σg + ε)`, background included.
pub fn dice_loss(probs: &[f64], classes: usize, labels: &[u8]) -> Result<f64, LossError> {
    check(probs, classes, labels)?;
    let mean = class_sums(probs, classes, labels)
        .iter()
        .map(|&(i, s)| (2.0 * i + DICE_EPS) / (s + DICE_EPS))
        .sum::<f64>()
        / classes as f64;
    Ok(1.0 - mean)
}

/// Loss and its gradient with respect to every probability entry.
pub fn dice_loss_grad(
    probs: &[f64],
    classes: usize,
    labels: &[u8],
) -> Result<(f64, Vec<f64>), LossError> {
    let loss = dice_loss(probs, classes, labels)?;
    let n = labels.len();
    let sums = class_sums(probs, classes, labels);
    let mut grad = vec![0.0; probs.len()];
    for (c, &(inter, sum)) in sums.iter().enumerate() {
        let denom = sum + DICE_EPS;
        let num = 2.0 * inter + DICE_EPS;
        let scale = -1.0 / (classes as f64 * denom * denom);
        for (i, g) in grad[c * n..(c + 1) * n].iter_mut().enumerate() {
            let gt = f64::from(labels[i] as usize == c);
            *g = scale * (2.0 * gt * denom - num);
        }
    }
    Ok((loss, grad))
}
