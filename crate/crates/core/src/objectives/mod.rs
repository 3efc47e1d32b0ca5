//! Training objectives and evaluation metrics.
//!
//! Losses take NCHW logits or probabilities recorded in a [`Graph`] and a
//! flat `N·H·W` target plane; pixels labeled with the ignore id take no part.
//!
//! ```text
//! CE      = −Σ_p w[t_p] · log softmax(z_p)[t_p] / #{p not ignored}
//! TI_c    = (TP_c + 1) / (TP_c + α·FP_c + β·FN_c + 1)      soft counts
//! Tversky = mean_c (1 − TI_c)
//! IoU_c   = cm[c,c] / (row_c + col_c − cm[c,c])
//! ```

mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, IGNORE_ID};
use crate::tensor::{Graph, Scalar, Tensor, TensorError, Var};

pub use metrics::{inverse_log_frequency, ConfusionMatrix, IouReport};

/// Smoothing added to numerator and denominator of the Tversky index.
pub const TVERSKY_SMOOTH: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("target has {found} pixels, expected {expected}")]
    TargetLength { expected: usize, found: usize },
    #[error("label {label} at pixel {pixel} is neither a class below {classes} nor the ignore id")]
    InvalidLabel { label: ClassId, pixel: usize, classes: usize },
    #[error("confusion matrices have {0} and {1} classes")]
    ClassCount(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub ce_weight: f64,
    pub tversky_weight: f64,
    pub tversky_alpha: f64,
    pub tversky_beta: f64,
    /// Per-class cross-entropy weights; empty means all ones.
    pub class_weights: Vec<f64>,
    pub ignore_id: ClassId,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ce_weight: 1.0,
            tversky_weight: 1.0,
            tversky_alpha: 0.3,
            tversky_beta: 0.7,
            class_weights: Vec::new(),
            ignore_id: IGNORE_ID,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), ObjectiveError> {
        let bad = |m: String| Err(ObjectiveError::Config(m));
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.ce_weight) || !nonneg(self.tversky_weight) {
            return bad("loss term weights must be finite and nonnegative".into());
        }
        if self.ce_weight + self.tversky_weight <= 0.0 {
            return bad("ce_weight + tversky_weight must be positive".into());
        }
        for (name, v) in [("tversky_alpha", self.tversky_alpha), ("tversky_beta", self.tversky_beta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !self.class_weights.is_empty() && self.class_weights.len() != num_classes {
            return bad(format!("{} class weights for {num_classes} classes", self.class_weights.len()));
        }
        if !self.class_weights.iter().all(|w| nonneg(*w)) {
            return bad("class weights must be finite and nonnegative".into());
        }
        if (self.ignore_id as usize) < num_classes {
            return bad(format!("ignore id {} collides with a trainable class", self.ignore_id));
        }
        Ok(())
    }

    pub fn class_weight(&self, c: usize) -> f64 {
        self.class_weights.get(c).copied().unwrap_or(1.0)
    }
}

/// `(N, C, H·W)` of an NCHW tensor after checking the target plane.
fn check_target(shape: &[usize], target: &[ClassId], ignore: ClassId) -> Result<(usize, usize, usize), ObjectiveError> {
    let (n, c, hw) = match *shape {
        [n, c, h, w] => (n, c, h * w),
        _ => {
            return Err(TensorError::invalid("loss", format!("expected NCHW input, got {shape:?}")).into());
        }
    };
    if target.len() != n * hw {
        return Err(ObjectiveError::TargetLength { expected: n * hw, found: target.len() });
    }
    if let Some((pixel, &label)) = target.iter().enumerate().find(|(_, t)| **t != ignore && **t as usize >= c) {
        return Err(ObjectiveError::InvalidLabel { label, pixel, classes: c });
    }
    Ok((n, c, hw))
}

/// Constant `[N, C, H, W]` tensor with `on(class)` at the target class of
/// every non-ignored pixel and zero elsewhere.
fn one_hot<T: Scalar>(shape: &[usize], target: &[ClassId], ignore: ClassId, on: impl Fn(usize) -> f64) -> Tensor<T> {
    let (c, hw) = (shape[1], shape[2] * shape[3]);
    let mut t = Tensor::zeros(shape);
    let d = t.data_mut();
    for (i, &label) in target.iter().enumerate() {
        if label != ignore {
            let (b, p) = (i / hw, i % hw);
            d[(b * c + label as usize) * hw + p] = T::lit(on(label as usize));
        }
    }
    t
}

/// Weighted cross-entropy over non-ignored pixels. A target with no
/// non-ignored pixel gives zero.
pub fn cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    target: &[ClassId],
    cfg: &LossConfig,
) -> Result<Var, ObjectiveError> {
    let shape = g.shape(logits).to_vec();
    let (_, c, _) = check_target(&shape, target, cfg.ignore_id)?;
    cfg.validate(c)?;
    let count = target.iter().filter(|t| **t != cfg.ignore_id).count().max(1) as f64;
    let mask = one_hot(&shape, target, cfg.ignore_id, |k| -cfg.class_weight(k) / count);
    let mask = g.constant(mask);
    let ls = g.log_softmax(logits, 1)?;
    let picked = g.mul(ls, mask)?;
    Ok(g.sum_all(picked))
}

/// Soft Tversky loss on class probabilities.
pub fn tversky<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    target: &[ClassId],
    cfg: &LossConfig,
) -> Result<Var, ObjectiveError> {
    let shape = g.shape(probs).to_vec();
    let (n, c, hw) = check_target(&shape, target, cfg.ignore_id)?;
    cfg.validate(c)?;
    let (alpha, beta) = (cfg.tversky_alpha, cfg.tversky_beta);

    let onehot = g.constant(one_hot(&shape, target, cfg.ignore_id, |_| 1.0));
    let mut valid = Tensor::<T>::zeros(&shape);
    let mut gt_count = vec![0.0f64; c];
    for (i, &label) in target.iter().enumerate() {
        if label != cfg.ignore_id {
            let (b, p) = (i / hw, i % hw);
            for k in 0..c {
                valid.data_mut()[(b * c + k) * hw + p] = T::one();
            }
            gt_count[label as usize] += 1.0;
        }
    }
    debug_assert_eq!(valid.numel(), n * c * hw);
    let valid = g.constant(valid);

    let masked = g.mul(probs, valid)?;
    let inter = g.mul(masked, onehot)?;
    let tp = g.sum(inter, &[0, 2, 3])?;
    let psum = g.sum(masked, &[0, 2, 3])?;
    // TP + α(ΣP − TP) + β(ΣG − TP) + ε
    let den_const = Tensor::new(vec![c], gt_count.iter().map(|gc| T::lit(beta * gc + TVERSKY_SMOOTH)).collect())?;
    let den_const = g.constant(den_const);
    let a = g.scale(tp, 1.0 - alpha - beta);
    let b = g.scale(psum, alpha);
    let ab = g.add(a, b)?;
    let den = g.add(ab, den_const)?;
    let num = g.add_scalar(tp, TVERSKY_SMOOTH);
    let ti = g.div(num, den)?;
    let mean_ti = g.mean_all(ti);
    let neg = g.scale(mean_ti, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// `ce_weight·CE(logits) + tversky_weight·Tversky(softmax(logits))`.
pub fn combined_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    target: &[ClassId],
    cfg: &LossConfig,
) -> Result<Var, ObjectiveError> {
    let ce = cross_entropy(g, logits, target, cfg)?;
    let probs = g.softmax(logits, 1)?;
    let tv = tversky(g, probs, target, cfg)?;
    let a = g.scale(ce, cfg.ce_weight);
    let b = g.scale(tv, cfg.tversky_weight);
    Ok(g.add(a, b)?)
}
