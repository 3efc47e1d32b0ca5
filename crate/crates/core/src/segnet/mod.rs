//! Segmentation network.
//!
//! Layout, for `S` backbone stages of widths `w_0..w_{S-1}`:
//!
//! ```text
//! input [N, 7|8, H, W]        x y z refl nx ny nz (range)
//! stage i:  in_i = input                                   (i = 0)
//!           in_i = concat(out_{i-1}, down(geom, 2^i))      (i ≥ 1)
//!           3×3/2 conv → affine → relu → depth_i residual blocks
//! neck:     F + attention(q(F), k(F), v(F)) on the coarsest map
//! FPN:      out_0 ++ deconv_i(out_i, k = s = 2^i) → S·w_0 channels at H/2
//! head:     2×2/2 deconv → relu → 3×3 conv → relu → 3×3 conv → logits
//! ```
//!
//! `geom` is the six-channel block of vehicle-frame coordinates and normals.
//! Logits come out NCHW, `[N, num_classes, H, W]`.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, IGNORE_ID};
use crate::projection::{Frame, SphericalImageSet};
use crate::tensor::{Conv2dParams, Graph, Scalar, Tensor, TensorError, Var};

pub use checkpoint::CHECKPOINT_VERSION;

/// Number of channels re-injected at every resolution change.
pub const GEOMETRY_CHANNELS: usize = 6;

#[derive(Debug, Error)]
pub enum SegNetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image has no surface normals; run surface_normals first")]
    MissingNormals,
    #[error("image is in the sensor frame; transform it to the vehicle frame first")]
    NotVehicleFrame,
    #[error("image {rows}x{cols} is not divisible by {factor}")]
    IndivisibleImage { rows: usize, cols: usize, factor: usize },
    #[error("batch images differ in size: {0}")]
    RaggedBatch(String),
    #[error("checkpoint io on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_channels: usize,
    pub stage_widths: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub num_classes: usize,
    pub attention_dim: usize,
    pub include_range_channel: bool,
    /// Concatenate the geometry block before every stage after the first.
    pub geometry_injection: bool,
    /// When false the reflectivity channel is fed as zeros.
    pub use_reflectivity: bool,
    /// Multiplier applied to coordinates and range (meters) on input.
    pub xyz_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_channels: 7,
            stage_widths: vec![16, 32, 64],
            stage_depths: vec![1, 1, 1],
            num_classes: 9,
            attention_dim: 16,
            include_range_channel: false,
            geometry_injection: true,
            use_reflectivity: true,
            xyz_scale: 0.1,
        }
    }
}

impl NetConfig {
    /// Two stages of widths 8 and 16, one block each, three classes.
    pub fn tiny() -> Self {
        Self {
            stage_widths: vec![8, 16],
            stage_depths: vec![1, 1],
            num_classes: 3,
            attention_dim: 8,
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_widths.len()
    }

    /// Input height and width must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<(), SegNetError> {
        let bad = |m: String| Err(SegNetError::InvalidConfig(m));
        if self.stage_widths.len() < 2 {
            return bad(format!("need at least 2 stages, got {}", self.stage_widths.len()));
        }
        if self.stage_widths.len() != self.stage_depths.len() {
            return bad(format!(
                "stage_widths has {} entries but stage_depths has {}",
                self.stage_widths.len(),
                self.stage_depths.len()
            ));
        }
        if self.stage_widths.len() > 8 {
            return bad(format!("too many stages: {}", self.stage_widths.len()));
        }
        if self.stage_widths.contains(&0) {
            return bad("stage widths must be positive".into());
        }
        if self.num_classes == 0 || self.num_classes > IGNORE_ID as usize {
            return bad(format!("num_classes must be in 1..{IGNORE_ID}, got {}", self.num_classes));
        }
        if self.attention_dim == 0 {
            return bad("attention_dim must be positive".into());
        }
        let expected = 7 + usize::from(self.include_range_channel);
        if self.input_channels != expected {
            return bad(format!("input_channels is {} but the channel layout gives {expected}", self.input_channels));
        }
        if !(self.xyz_scale.is_finite() && self.xyz_scale > 0.0) {
            return bad(format!("xyz_scale must be positive, got {}", self.xyz_scale));
        }
        Ok(())
    }

    fn stage_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.stage_widths[i - 1] + if self.geometry_injection { GEOMETRY_CHANNELS } else { 0 }
        }
    }

    /// `(name, shape, fan_in)` of every parameter in creation order.
    /// `fan_in == 0` marks tensors initialized to a constant.
    fn parameter_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut specs = Vec::new();
        let conv = |specs: &mut Vec<_>, name: String, o: usize, i: usize, k: usize, bias: bool| {
            specs.push((format!("{name}.w"), vec![o, i, k, k], i * k * k));
            if bias {
                specs.push((format!("{name}.b"), vec![o], 0));
            }
        };
        let affine = |specs: &mut Vec<_>, name: String, c: usize| {
            specs.push((format!("{name}.scale"), vec![c], 0));
            specs.push((format!("{name}.shift"), vec![c], 0));
        };
        for (i, (&w, &depth)) in self.stage_widths.iter().zip(&self.stage_depths).enumerate() {
            conv(&mut specs, format!("stage{i}.down"), w, self.stage_in_channels(i), 3, false);
            affine(&mut specs, format!("stage{i}.down_aff"), w);
            for j in 0..depth {
                conv(&mut specs, format!("stage{i}.block{j}.conv1"), w, w, 3, false);
                affine(&mut specs, format!("stage{i}.block{j}.aff1"), w);
                conv(&mut specs, format!("stage{i}.block{j}.conv2"), w, w, 3, false);
                affine(&mut specs, format!("stage{i}.block{j}.aff2"), w);
            }
        }
        let last = *self.stage_widths.last().expect("validated");
        let d = self.attention_dim;
        conv(&mut specs, "neck.q".into(), d, last, 1, true);
        conv(&mut specs, "neck.k".into(), d, last, 1, true);
        conv(&mut specs, "neck.v".into(), last, last, 1, true);
        let w0 = self.stage_widths[0];
        for (i, &w) in self.stage_widths.iter().enumerate().skip(1) {
            let s = 1 << i;
            // deconv weights are [in, out, k, k]; with k = stride each output
            // pixel sees `in` inputs
            specs.push((format!("fpn{i}.w"), vec![w, w0, s, s], w));
            specs.push((format!("fpn{i}.b"), vec![w0], 0));
        }
        let merged = w0 * self.stages();
        specs.push(("head.up.w".into(), vec![merged, w0, 2, 2], merged));
        specs.push(("head.up.b".into(), vec![w0], 0));
        conv(&mut specs, "head.aa1".into(), w0, w0, 3, true);
        conv(&mut specs, "head.aa2".into(), self.num_classes, w0, 3, true);
        specs
    }

    /// Parameter count in closed form.
    pub fn param_count(&self) -> usize {
        self.parameter_specs().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }
}

/// A built network: configuration plus named parameters in creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel<T: Scalar = f32> {
    config: NetConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Parameter handles of one graph, in [`SegModel::names`] order.
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    /// Wraps handles recorded by the caller, in [`SegModel::names`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Scalar> SegModel<T> {
    /// He-normal weights (`std = √(2 / fan_in)`) drawn from a ChaCha8 stream
    /// seeded with `seed`; affine scales 1, shifts and biases 0.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self, SegNetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, fan_in) in config.parameter_specs() {
            let t = if fan_in > 0 {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Tensor::from_fn(&shape, |_| T::lit(normal.sample(&mut rng)))
            } else if name.ends_with(".scale") {
                Tensor::full(&shape, T::one())
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self { config, names, params })
    }

    pub(crate) fn from_parts(
        config: NetConfig,
        names: Vec<String>,
        params: Vec<Tensor<T>>,
    ) -> Result<Self, SegNetError> {
        config.validate()?;
        let specs = config.parameter_specs();
        if specs.len() != params.len() || names.len() != params.len() {
            return Err(SegNetError::Format(format!(
                "config needs {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (n, p)) in specs.iter().zip(names.iter().zip(&params)) {
            if name != n || shape.as_slice() != p.shape() {
                return Err(SegNetError::Format(format!(
                    "parameter {n} {:?} does not match expected {name} {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    /// Sum of element counts over all parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> SegModel<U> {
        SegModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records the parameters in `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        BoundParams(
            self.params.iter().map(|p| if trainable { g.leaf(p.clone()) } else { g.constant(p.clone()) }).collect(),
        )
    }

    /// Stacks images into an `[N, C, H, W]` input tensor.
    pub fn input_tensor(&self, imgs: &[&SphericalImageSet]) -> Result<Tensor<T>, SegNetError> {
        input_tensor(&self.config, imgs)
    }

    /// Records the network on `x` and returns the logits.
    pub fn forward_graph(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var, SegNetError> {
        let cfg = &self.config;
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != cfg.input_channels {
            return Err(TensorError::mismatch("segnet input", &shape, &[0, cfg.input_channels, 0, 0]).into());
        }
        let div = cfg.size_divisor();
        if !shape[2].is_multiple_of(div) || !shape[3].is_multiple_of(div) || shape[2] == 0 || shape[3] == 0 {
            return Err(SegNetError::IndivisibleImage { rows: shape[2], cols: shape[3], factor: div });
        }
        let mut it = p.0.iter().copied();
        let mut next = || it.next().expect("parameter list matches config");
        let same = Conv2dParams::new(1, 1);

        let geometry = if cfg.geometry_injection {
            let xyz = g.slice(x, 1, 0, 3)?;
            let nrm = g.slice(x, 1, 4, 3)?;
            Some(g.concat(&[xyz, nrm], 1)?)
        } else {
            None
        };

        let mut outs = Vec::with_capacity(cfg.stages());
        let mut h = x;
        for (i, &depth) in cfg.stage_depths.iter().enumerate() {
            if i > 0 {
                if let Some(geo) = geometry {
                    let small = g.downsample_nearest(geo, 1 << i)?;
                    h = g.concat(&[h, small], 1)?;
                }
            }
            let w = next();
            h = g.conv2d(h, w, None, Conv2dParams::new(2, 1))?;
            let (sc, sh) = (next(), next());
            h = g.batch_affine(h, sc, sh)?;
            h = g.relu(h);
            for _ in 0..depth {
                let w1 = next();
                let (s1, t1) = (next(), next());
                let w2 = next();
                let (s2, t2) = (next(), next());
                let mut r = g.conv2d(h, w1, None, same)?;
                r = g.batch_affine(r, s1, t1)?;
                r = g.relu(r);
                r = g.conv2d(r, w2, None, same)?;
                r = g.batch_affine(r, s2, t2)?;
                let sum = g.add(h, r)?;
                h = g.relu(sum);
            }
            outs.push(h);
        }

        let (qw, qb, kw, kb, vw, vb) = (next(), next(), next(), next(), next(), next());
        let last = *outs.last().expect("at least two stages");
        let attended = attention_neck(g, last, (qw, qb), (kw, kb), (vw, vb))?;
        *outs.last_mut().expect("at least two stages") = attended;

        let mut pyramid = vec![outs[0]];
        for (i, out) in outs.iter().enumerate().skip(1) {
            let (w, b) = (next(), next());
            let s = 1 << i;
            pyramid.push(g.deconv2d(*out, w, Some(b), Conv2dParams::new(s, 0))?);
        }
        let merged = g.concat(&pyramid, 1)?;

        let (uw, ub) = (next(), next());
        let mut y = g.deconv2d(merged, uw, Some(ub), Conv2dParams::new(2, 0))?;
        y = g.relu(y);
        let (a1w, a1b) = (next(), next());
        y = g.conv2d(y, a1w, Some(a1b), same)?;
        y = g.relu(y);
        let (a2w, a2b) = (next(), next());
        Ok(g.conv2d(y, a2w, Some(a2b), same)?)
    }

    /// Logits `[N, num_classes, H, W]` for a prepared input tensor.
    pub fn forward_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>, SegNetError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward_graph(&mut g, &p, xv)?;
        Ok(g.take_value(y))
    }

    /// Logits `[N, num_classes, H, W]` for a batch of images.
    pub fn forward(&self, imgs: &[&SphericalImageSet]) -> Result<Tensor<T>, SegNetError> {
        self.forward_tensor(&self.input_tensor(imgs)?)
    }

    /// Per-pixel class ids for one image.
    pub fn predict(&self, img: &SphericalImageSet) -> Result<Vec<ClassId>, SegNetError> {
        let logits = self.forward(&[img])?;
        Ok(predict_from_logits(&logits, 0, &img.valid))
    }
}

/// `F + softmax(q kᵀ/√d) v` with pixels of `F` as the sequence.
fn attention_neck<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    q: (Var, Var),
    k: (Var, Var),
    v: (Var, Var),
) -> Result<Var, TensorError> {
    let s = g.shape(f).to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let l = h * w;
    let p = Conv2dParams::default();
    let seq = |g: &mut Graph<T>, (wt, b): (Var, Var)| -> Result<Var, TensorError> {
        let m = g.conv2d(f, wt, Some(b), p)?;
        let d = g.shape(m)[1];
        let flat = g.reshape(m, &[n, d, l])?;
        g.transpose_last2(flat)
    };
    let qs = seq(g, q)?;
    let ks = seq(g, k)?;
    let vs = seq(g, v)?;
    let att = g.scale_dot_attention(qs, ks, vs)?;
    let back = g.transpose_last2(att)?;
    let map = g.reshape(back, &[n, c, h, w])?;
    g.add(f, map)
}

/// Input planes of one batch. Invalid pixels are all-zero; normals are zero
/// where undefined.
pub fn input_tensor<T: Scalar>(cfg: &NetConfig, imgs: &[&SphericalImageSet]) -> Result<Tensor<T>, SegNetError> {
    let first = imgs.first().ok_or_else(|| SegNetError::RaggedBatch("empty batch".into()))?;
    let (rows, cols) = (first.rows, first.cols);
    let div = cfg.size_divisor();
    if rows % div != 0 || cols % div != 0 {
        return Err(SegNetError::IndivisibleImage { rows, cols, factor: div });
    }
    let c = cfg.input_channels;
    let plane = rows * cols;
    let mut data = vec![T::zero(); imgs.len() * c * plane];
    let s = cfg.xyz_scale;
    for (b, img) in imgs.iter().enumerate() {
        if (img.rows, img.cols) != (rows, cols) {
            return Err(SegNetError::RaggedBatch(format!("{}x{} vs {rows}x{cols}", img.rows, img.cols)));
        }
        if img.frame != Frame::Vehicle {
            return Err(SegNetError::NotVehicleFrame);
        }
        if !img.normals_ready {
            return Err(SegNetError::MissingNormals);
        }
        let base = b * c * plane;
        for i in 0..plane {
            if !img.valid[i] {
                continue;
            }
            let mut put = |ch: usize, v: f64| data[base + ch * plane + i] = T::lit(v);
            let p = img.xyz[i];
            put(0, p[0] * s);
            put(1, p[1] * s);
            put(2, p[2] * s);
            if cfg.use_reflectivity {
                put(3, img.reflectivity[i] as f64);
            }
            if img.normal_valid[i] {
                let n = img.normals[i];
                put(4, n[0]);
                put(5, n[1]);
                put(6, n[2]);
            }
            if cfg.include_range_channel {
                put(7, img.range[i] * s);
            }
        }
    }
    Ok(Tensor::new(vec![imgs.len(), c, rows, cols], data)?)
}

/// Argmax over the class axis of batch item `item`. Ties go to the lowest
/// class id; pixels with `valid[i] == false` get [`IGNORE_ID`].
pub fn predict_from_logits<T: Scalar>(logits: &Tensor<T>, item: usize, valid: &[bool]) -> Vec<ClassId> {
    let s = logits.shape();
    let (c, plane) = (s[1], s[2] * s[3]);
    let base = item * c * plane;
    let d = logits.data();
    (0..plane)
        .map(|i| {
            if !valid[i] {
                return IGNORE_ID;
            }
            let mut best = 0;
            for k in 1..c {
                if d[base + k * plane + i] > d[base + best * plane + i] {
                    best = k;
                }
            }
            best as ClassId
        })
        .collect()
}
