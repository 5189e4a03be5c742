//! Semantic feature targets, the low-to-high dimensional decoder and the
//! cosine distillation loss.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

/// Label of pixels that belong to no region.
pub const UNLABELED: i32 = -1;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v / |v|`, with the zero vector mapping to itself.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Ingested per-image features with their derived training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    /// Per-pixel raw features, unit norm.
    pub raw: Image,
    /// Region label per pixel, [`UNLABELED`] for none.
    pub masks: Vec<i32>,
    /// Unit feature per region label.
    pub object_features: BTreeMap<i32, Vec<f64>>,
    pub global_target: Image,
    pub local_target: Image,
}

impl FeatureMaps {
    /// Normalizes the raw and per-object features and derives both targets.
    pub fn new(raw: Image, masks: Vec<i32>, object_features: BTreeMap<i32, Vec<f64>>) -> Result<Self> {
        if masks.len() != raw.pixel_count() {
            return Err(Error::DimensionMismatch(format!("{} labels for {} pixels", masks.len(), raw.pixel_count())));
        }
        let d = raw.channels;
        let mut raw = raw;
        for px in raw.data.chunks_mut(d) {
            let n = norm(px);
            if n > 0.0 {
                px.iter_mut().for_each(|v| *v /= n);
            }
        }
        let mut objects = BTreeMap::new();
        for (label, f) in object_features {
            if f.len() != d {
                return Err(Error::DimensionMismatch(format!("object feature {label} has dim {}, maps have {d}", f.len())));
            }
            if norm(&f) == 0.0 {
                return Err(Error::Domain(format!("object feature {label} is the zero vector")));
            }
            objects.insert(label, normalize(&f));
        }
        let global_target = build_global_target(&raw, &masks)?;
        let local_target = build_local_target(&objects, &masks, raw.width, raw.height)?;
        Ok(Self {
            raw,
            masks,
            object_features: objects,
            global_target,
            local_target,
        })
    }

    pub fn width(&self) -> usize {
        self.raw.width
    }

    pub fn height(&self) -> usize {
        self.raw.height
    }

    pub fn dim(&self) -> usize {
        self.raw.channels
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.masks.iter().map(|&l| l != UNLABELED).collect()
    }
}

/// Replaces every labeled pixel's feature with the unit-normalized mean of
/// its region; unlabeled pixels become zero.
pub fn build_global_target(raw: &Image, masks: &[i32]) -> Result<Image> {
    if masks.len() != raw.pixel_count() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} pixels", masks.len(), raw.pixel_count())));
    }
    let d = raw.channels;
    let mut sums: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for (px, &label) in raw.data.chunks(d).zip(masks) {
        if label == UNLABELED {
            continue;
        }
        let s = sums.entry(label).or_insert_with(|| vec![0.0; d]);
        for (a, b) in s.iter_mut().zip(px) {
            *a += b;
        }
    }
    let mut means = BTreeMap::new();
    for (label, s) in sums {
        if norm(&s) == 0.0 {
            return Err(Error::DegenerateRegion { label });
        }
        means.insert(label, normalize(&s));
    }
    let mut out = Image::new(raw.width, raw.height, d);
    for (px, &label) in out.data.chunks_mut(d).zip(masks) {
        if let Some(m) = means.get(&label) {
            px.copy_from_slice(m);
        }
    }
    Ok(out)
}

/// Paints each labeled pixel with its region's object feature.
pub fn build_local_target(object_features: &BTreeMap<i32, Vec<f64>>, masks: &[i32], width: usize, height: usize) -> Result<Image> {
    if masks.len() != width * height {
        return Err(Error::DimensionMismatch(format!("{} labels for {width}x{height} pixels", masks.len())));
    }
    let d = object_features.values().next().map_or(0, Vec::len);
    let mut out = Image::new(width, height, d);
    if d == 0 {
        if let Some(&l) = masks.iter().find(|&&l| l != UNLABELED) {
            return Err(Error::MissingLabel(l));
        }
        return Ok(out);
    }
    for (px, &label) in out.data.chunks_mut(d).zip(masks) {
        if label == UNLABELED {
            continue;
        }
        let f = object_features.get(&label).ok_or(Error::MissingLabel(label))?;
        px.copy_from_slice(f);
    }
    Ok(out)
}

/// `1 - cos(f1, f2)`, in `[0, 2]`.
pub fn feature_distance(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", f1.len(), f2.len())));
    }
    let (n1, n2) = (norm(f1), norm(f2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Domain("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot(f1, f2) / (n1 * n2)).clamp(0.0, 2.0))
}

/// Two-layer perceptron from per-primitive features to a local and a global
/// semantic head: `D_f -> hidden (tanh) -> 2 * D_high`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDecoder {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `2 * output x hidden`, row-major. Rows `0..output` are the local head.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one decoder evaluation.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub hidden: Vec<f64>,
    pub raw: Vec<f64>,
}

impl SemanticDecoder {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; 2 * output_dim * hidden_dim],
            b2: vec![0.0; 2 * output_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(input_dim, hidden_dim, output_dim);
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        d.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let a2 = (6.0 / (hidden_dim + 2 * output_dim) as f64).sqrt();
        d.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn trace(&self, f: &[f64]) -> DecoderTrace {
        let (n_in, n_h) = (self.input_dim, self.hidden_dim);
        let hidden: Vec<f64> = (0..n_h)
            .map(|i| {
                let row = &self.w1[i * n_in..(i + 1) * n_in];
                (dot(row, f) + self.b1[i]).tanh()
            })
            .collect();
        let raw = (0..2 * self.output_dim)
            .map(|o| dot(&self.w2[o * n_h..(o + 1) * n_h], &hidden) + self.b2[o])
            .collect();
        DecoderTrace { hidden, raw }
    }

    /// Unit-normalized `(local, global)` heads; a zero head stays zero.
    pub fn decode(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.trace(f);
        let d = self.output_dim;
        (normalize(&t.raw[..d]), normalize(&t.raw[d..]))
    }

    /// Backpropagates gradients w.r.t. the normalized heads. Accumulates
    /// weight gradients into `grads` and returns the gradient w.r.t. `f`.
    pub fn backward(&self, f: &[f64], trace: &DecoderTrace, g_local: &[f64], g_global: &[f64], grads: &mut SemanticDecoder) -> Vec<f64> {
        let (n_in, n_h, d) = (self.input_dim, self.hidden_dim, self.output_dim);
        let mut g_raw = vec![0.0; 2 * d];
        for (head, g_head) in [(0, g_local), (1, g_global)] {
            let raw = &trace.raw[head * d..(head + 1) * d];
            let n = norm(raw);
            if n == 0.0 {
                continue;
            }
            let proj: f64 = raw.iter().zip(g_head).map(|(r, g)| r * g).sum::<f64>() / n;
            for k in 0..d {
                g_raw[head * d + k] = (g_head[k] - raw[k] / n * proj) / n;
            }
        }
        let mut g_hidden = vec![0.0; n_h];
        for (o, &go) in g_raw.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grads.b2[o] += go;
            let row = o * n_h;
            for h in 0..n_h {
                grads.w2[row + h] += go * trace.hidden[h];
                g_hidden[h] += go * self.w2[row + h];
            }
        }
        let mut g_f = vec![0.0; n_in];
        for h in 0..n_h {
            let g_pre = g_hidden[h] * (1.0 - trace.hidden[h] * trace.hidden[h]);
            if g_pre == 0.0 {
                continue;
            }
            grads.b1[h] += g_pre;
            let row = h * n_in;
            for i in 0..n_in {
                grads.w1[row + i] += g_pre * f[i];
                g_f[i] += g_pre * self.w1[row + i];
            }
        }
        g_f
    }

    /// Flat view of all parameters, in `w1, b1, w2, b2` order.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1.iter_mut().chain(self.b1.iter_mut()).chain(self.w2.iter_mut()).chain(self.b2.iter_mut())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim, self.output_dim)
    }

    fn add_assign(&mut self, o: &SemanticDecoder) {
        for (a, b) in self.params_mut().zip(o.params()) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.params_mut().for_each(|v| *v *= s);
    }
}

/// Value of the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticLoss {
    pub value: f64,
    /// Set when no pixel was valid and the loss defaulted to zero.
    pub no_valid_pixels: bool,
}

/// Gradient of `1 - cos(h, t)` w.r.t. unit `h`, for unit `t`, together with the value.
fn distance_and_grad(h: &[f64], t: &[f64]) -> Option<(f64, Vec<f64>)> {
    if norm(h) == 0.0 || norm(t) == 0.0 {
        return None;
    }
    let c = dot(h, t);
    Some((1.0 - c, t.iter().map(|v| -v).collect()))
}

/// Mean over valid pixels of `d(global) + lambda_local * d(local)`, where
/// `d` is the cosine distance. Pixels whose decoded head is the zero vector
/// drop that term.
pub fn semantic_loss(decoded_l: &Image, decoded_g: &Image, local_target: &Image, global_target: &Image, valid: &[bool], lambda_local: f64) -> Result<SemanticLoss> {
    for img in [decoded_g, local_target, global_target] {
        decoded_l.check_same_shape(img)?;
    }
    if valid.len() != decoded_l.pixel_count() {
        return Err(Error::DimensionMismatch(format!("{} mask entries for {} pixels", valid.len(), decoded_l.pixel_count())));
    }
    let d = decoded_l.channels;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &ok) in valid.iter().enumerate() {
        if !ok {
            continue;
        }
        count += 1;
        let r = i * d..(i + 1) * d;
        if let Ok(v) = feature_distance(&decoded_g.data[r.clone()], &global_target.data[r.clone()]) {
            sum += v;
        }
        if let Ok(v) = feature_distance(&decoded_l.data[r.clone()], &local_target.data[r]) {
            sum += lambda_local * v;
        }
    }
    if count == 0 {
        log::warn!("semantic loss evaluated with no valid pixels");
        return Ok(SemanticLoss {
            value: 0.0,
            no_valid_pixels: true,
        });
    }
    Ok(SemanticLoss {
        value: sum / count as f64,
        no_valid_pixels: false,
    })
}

/// Distillation loss of a rendered low-dimensional feature map together with
/// its gradients.
#[derive(Debug, Clone)]
pub struct SemanticLossGrad {
    pub loss: SemanticLoss,
    /// Gradient w.r.t. the rendered feature image.
    pub g_feature: Vec<f64>,
    pub g_decoder: SemanticDecoder,
}

/// Decodes `rendered` per pixel and evaluates [`semantic_loss`] with gradients
/// w.r.t. the rendered features and the decoder weights.
pub fn semantic_loss_grad(decoder: &SemanticDecoder, rendered: &Image, maps: &FeatureMaps, lambda_local: f64) -> Result<SemanticLossGrad> {
    if rendered.width != maps.width() || rendered.height != maps.height() {
        return Err(Error::DimensionMismatch(format!(
            "rendered {}x{} vs feature maps {}x{}",
            rendered.width,
            rendered.height,
            maps.width(),
            maps.height()
        )));
    }
    if rendered.channels != decoder.input_dim || maps.dim() != decoder.output_dim {
        return Err(Error::DimensionMismatch(format!(
            "decoder {}->{}, rendered {} channels, targets {} channels",
            decoder.input_dim,
            decoder.output_dim,
            rendered.channels,
            maps.dim()
        )));
    }
    let d_f = rendered.channels;
    let d = maps.dim();
    let n = rendered.pixel_count();
    let valid: Vec<usize> = (0..n).filter(|&i| maps.masks[i] != UNLABELED).collect();
    if valid.is_empty() {
        return Ok(SemanticLossGrad {
            loss: SemanticLoss {
                value: 0.0,
                no_valid_pixels: true,
            },
            g_feature: vec![0.0; n * d_f],
            g_decoder: decoder.zeros_like(),
        });
    }
    let inv = 1.0 / valid.len() as f64;

    // Fixed-size chunks reduced in order keep the sum independent of threading.
    const CHUNK: usize = 256;
    let parts: Vec<(f64, Vec<(usize, Vec<f64>)>, SemanticDecoder)> = valid
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sum = 0.0;
            let mut g_dec = decoder.zeros_like();
            let mut g_px = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let f = &rendered.data[i * d_f..(i + 1) * d_f];
                let trace = decoder.trace(f);
                let local = normalize(&trace.raw[..d]);
                let global = normalize(&trace.raw[d..]);
                let tl = &maps.local_target.data[i * d..(i + 1) * d];
                let tg = &maps.global_target.data[i * d..(i + 1) * d];
                let mut g_local = vec![0.0; d];
                let mut g_global = vec![0.0; d];
                if let Some((v, g)) = distance_and_grad(&global, tg) {
                    sum += v;
                    g_global.iter_mut().zip(&g).for_each(|(a, b)| *a = b * inv);
                }
                if let Some((v, g)) = distance_and_grad(&local, tl) {
                    sum += lambda_local * v;
                    g_local.iter_mut().zip(&g).for_each(|(a, b)| *a = b * lambda_local * inv);
                }
                let g_f = decoder.backward(f, &trace, &g_local, &g_global, &mut g_dec);
                g_px.push((i, g_f));
            }
            (sum, g_px, g_dec)
        })
        .collect();

    let mut total = 0.0;
    let mut g_feature = vec![0.0; n * d_f];
    let mut g_decoder = decoder.zeros_like();
    for (sum, g_px, g_dec) in parts {
        total += sum;
        for (i, g) in g_px {
            g_feature[i * d_f..(i + 1) * d_f].copy_from_slice(&g);
        }
        g_decoder.add_assign(&g_dec);
    }
    Ok(SemanticLossGrad {
        loss: SemanticLoss {
            value: total * inv,
            no_valid_pixels: false,
        },
        g_feature,
        g_decoder,
    })
}

/// Scales all decoder gradients in place (used when weighting loss terms).
pub fn scale_decoder_grads(g: &mut SemanticDecoder, s: f64) {
    g.scale(s);
}

/// Sums decoder gradients in place.
pub fn add_decoder_grads(acc: &mut SemanticDecoder, g: &SemanticDecoder) {
    acc.add_assign(g);
}
