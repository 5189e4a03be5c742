//! Scene fitting: appearance, semantic and normal-consistency losses and the
//! Adam optimization loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Quat, Vec3};
use crate::image::Image;
use crate::metrics;
use crate::rasterizer::{depth_to_normal, depth_to_normal_vjp, render, render_backward, OutputGrads, ParamGradients, RenderOutput};
use crate::scene::{logit, SceneModel, SplatPrimitive};
use crate::semantics::{self, FeatureMaps, SemanticDecoder};
use crate::sh;

/// Pixels with a smaller accumulated weight are left out of the normal loss.
pub const NORMAL_WEIGHT_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub center: f64,
    /// Center rate reached at the last step (exponential decay).
    pub center_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub feature: f64,
    pub decoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 1.6e-4,
            center_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            feature: 2.5e-3,
            decoder: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_dssim: f64,
    pub lambda_local: f64,
    pub lambda_feature: f64,
    pub lambda_normal: f64,
    pub steps: usize,
    pub lr: LearningRates,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda_local: 0.5,
            lambda_feature: 0.1,
            lambda_normal: 0.05,
            steps: 7000,
            lr: LearningRates::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_dssim, self.lambda_local, self.lambda_feature, self.lambda_normal];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if self.lambda_dssim > 1.0 {
            return Err(Error::InvalidConfig("lambda_dssim must be at most 1".into()));
        }
        let lr = &self.lr;
        let rates = [lr.center, lr.center_final, lr.rotation, lr.scale, lr.opacity, lr.color, lr.feature, lr.decoder];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidConfig("learning rates must be finite and non-negative".into()));
        }
        if lr.center > 0.0 && lr.center_final <= 0.0 {
            return Err(Error::InvalidConfig("center_final must be positive when center is".into()));
        }
        Ok(())
    }
}

/// `(1 - l) * mean|r - t| + l * (1 - SSIM) / 2`.
pub fn appearance_loss(rendered: &Image, target: &Image, lambda_dssim: f64) -> Result<f64> {
    Ok(appearance_loss_grad(rendered, target, lambda_dssim)?.0)
}

/// [`appearance_loss`] and its gradient w.r.t. `rendered`.
///
/// Images smaller than the standard SSIM window use the largest odd window
/// that fits.
pub fn appearance_loss_grad(rendered: &Image, target: &Image, lambda_dssim: f64) -> Result<(f64, Vec<f64>)> {
    rendered.check_same_shape(target)?;
    if rendered.data.is_empty() {
        return Err(Error::DimensionMismatch("empty image".into()));
    }
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            (1.0 - lambda_dssim) * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / n
        })
        .collect();
    let mut value = (1.0 - lambda_dssim) * l1 / n;
    if lambda_dssim > 0.0 {
        let (s, gs) = metrics::ssim_fitted_grad(rendered, target)?;
        value += lambda_dssim * (1.0 - s) / 2.0;
        for (g, d) in grad.iter_mut().zip(&gs) {
            *g -= lambda_dssim * 0.5 * d;
        }
    }
    Ok((value, grad))
}

/// Weighted disagreement between blended normals and normals derived from the
/// blended depth: `sum w (1 - N . N_d) / sum w` over pixels with weight at
/// least [`NORMAL_WEIGHT_MIN`].
pub fn normal_loss(out: &RenderOutput, camera: &Camera) -> f64 {
    let nd = depth_to_normal(&out.depth, &out.weight, camera);
    normal_loss_with(out, &nd)
}

fn normal_loss_with(out: &RenderOutput, nd: &Image) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &w) in out.weight.data.iter().enumerate() {
        if w < NORMAL_WEIGHT_MIN {
            continue;
        }
        let n = &out.normal.data[i * 3..i * 3 + 3];
        let d = &nd.data[i * 3..i * 3 + 3];
        num += w * (1.0 - (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]));
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Cotangents of [`normal_loss`] w.r.t. the rendered channels.
pub struct NormalLossGrad {
    pub value: f64,
    pub normal: Vec<f64>,
    pub depth: Vec<f64>,
    pub weight: Vec<f64>,
}

pub fn normal_loss_grad(out: &RenderOutput, camera: &Camera) -> NormalLossGrad {
    let n_px = out.weight.data.len();
    let nd = depth_to_normal(&out.depth, &out.weight, camera);
    let value = normal_loss_with(out, &nd);
    let den: f64 = out.weight.data.iter().filter(|&&w| w >= NORMAL_WEIGHT_MIN).sum();
    let mut g_normal = vec![0.0; n_px * 3];
    let mut g_nd = vec![0.0; n_px * 3];
    let mut g_weight = vec![0.0; n_px];
    if den > 0.0 {
        for (i, &w) in out.weight.data.iter().enumerate() {
            if w < NORMAL_WEIGHT_MIN {
                continue;
            }
            let r = i * 3..i * 3 + 3;
            let n = &out.normal.data[r.clone()];
            let d = &nd.data[r];
            let dot = n[0] * d[0] + n[1] * d[1] + n[2] * d[2];
            g_weight[i] = (1.0 - dot - value) / den;
            for k in 0..3 {
                g_normal[i * 3 + k] = -w * d[k] / den;
                g_nd[i * 3 + k] = -w * n[k] / den;
            }
        }
    }
    let g_depth = depth_to_normal_vjp(&out.depth, &out.weight, camera, &g_nd);
    NormalLossGrad {
        value,
        normal: g_normal,
        depth: g_depth,
        weight: g_weight,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub appearance: f64,
    pub feature: f64,
    pub normal: f64,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossTerms,
    pub grads: ParamGradients,
    pub decoder_grads: SemanticDecoder,
}

/// `L_rgb + lambda_f L_f + lambda_n L_n` for one view, with gradients for every
/// primitive field and the decoder. The feature term is skipped without
/// feature maps.
pub fn total_loss(scene: &SceneModel, camera: &Camera, target: &Image, features: Option<&FeatureMaps>, cfg: &TrainConfig) -> Result<TotalLoss> {
    total_loss_at(scene, camera, target, features, cfg, 0)
}

fn total_loss_at(scene: &SceneModel, camera: &Camera, target: &Image, features: Option<&FeatureMaps>, cfg: &TrainConfig, step: usize) -> Result<TotalLoss> {
    let out = render(scene, camera);
    let (rgb, g_color) = appearance_loss_grad(&out.color, target, cfg.lambda_dssim)?;
    if !rgb.is_finite() {
        return Err(Error::NonFinite { term: "appearance loss", step });
    }
    let mut grads = OutputGrads {
        color: Some(g_color),
        ..Default::default()
    };
    let mut terms = LossTerms {
        appearance: rgb,
        ..Default::default()
    };
    let mut decoder_grads = scene.decoder.zeros_like();

    if let (Some(maps), true) = (features, cfg.lambda_feature > 0.0) {
        let sem = semantics::semantic_loss_grad(&scene.decoder, &out.feature, maps, cfg.lambda_local)?;
        if !sem.loss.value.is_finite() {
            return Err(Error::NonFinite { term: "semantic loss", step });
        }
        terms.feature = sem.loss.value;
        grads.feature = Some(sem.g_feature.iter().map(|g| g * cfg.lambda_feature).collect());
        decoder_grads = sem.g_decoder;
        semantics::scale_decoder_grads(&mut decoder_grads, cfg.lambda_feature);
    }

    if cfg.lambda_normal > 0.0 {
        let nl = normal_loss_grad(&out, camera);
        if !nl.value.is_finite() {
            return Err(Error::NonFinite { term: "normal loss", step });
        }
        terms.normal = nl.value;
        let s = cfg.lambda_normal;
        grads.normal = Some(nl.normal.iter().map(|g| g * s).collect());
        grads.depth = Some(nl.depth.iter().map(|g| g * s).collect());
        grads.weight = Some(nl.weight.iter().map(|g| g * s).collect());
    }

    let value = terms.appearance + cfg.lambda_feature * terms.feature + cfg.lambda_normal * terms.normal;
    let grads = render_backward(scene, camera, &grads);
    if !grads.is_finite() || !decoder_grads.is_finite() {
        return Err(Error::NonFinite { term: "gradient", step });
    }
    Ok(TotalLoss {
        value,
        terms,
        grads,
        decoder_grads,
    })
}

/// One training view.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
    pub features: Option<FeatureMaps>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Group {
    Center,
    Rotation,
    Scale,
    Opacity,
    Color,
    Feature,
    Decoder,
}

fn param_groups(scene: &SceneModel) -> Vec<Group> {
    let n_sh = sh::coeff_count(scene.sh_degree) * 3;
    let d_f = scene.feature_dim();
    let mut g = Vec::new();
    for _ in &scene.primitives {
        g.extend([Group::Center; 3]);
        g.extend([Group::Rotation; 4]);
        g.extend([Group::Scale; 2]);
        g.push(Group::Opacity);
        g.extend(std::iter::repeat_n(Group::Color, n_sh));
        g.extend(std::iter::repeat_n(Group::Feature, d_f));
    }
    g.extend(std::iter::repeat_n(Group::Decoder, scene.decoder.param_count()));
    g
}

fn flatten_grads(g: &ParamGradients, dec: &SemanticDecoder, out: &mut Vec<f64>) {
    out.clear();
    for p in &g.primitives {
        p.for_each(|v| out.push(v));
    }
    out.extend(dec.params());
}

fn apply_update(scene: &mut SceneModel, delta: &[f64]) {
    let mut it = delta.iter().copied();
    let mut next = || it.next().expect("update length matches parameter count");
    for p in &mut scene.primitives {
        for k in 0..3 {
            p.center[k] += next();
        }
        let r = [next(), next(), next(), next()];
        p.rotation = Quat::new(p.rotation.w + r[0], p.rotation.x + r[1], p.rotation.y + r[2], p.rotation.z + r[3]).normalized();
        for s in &mut p.log_scale {
            *s += next();
        }
        p.opacity_logit += next();
        for c in &mut p.sh {
            *c += next();
        }
        for f in &mut p.feature {
            *f += next();
        }
    }
    for w in scene.decoder.params_mut() {
        *w += next();
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-15;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, grad: &[f64], lr: impl Fn(usize) -> f64) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
                self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                -lr(i) * mh / (vh.sqrt() + Self::EPS)
            })
            .collect()
    }
}

fn center_lr(lr: &LearningRates, step: usize, steps: usize) -> f64 {
    if lr.center == 0.0 || steps <= 1 {
        return lr.center;
    }
    let t = step as f64 / (steps - 1) as f64;
    lr.center * (lr.center_final / lr.center).powf(t)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: SceneModel,
    /// Total loss of every step.
    pub losses: Vec<f64>,
}

/// Fits `init` to `views` with `cfg.steps` Adam steps.
pub fn fit(views: &[TrainView], cfg: &TrainConfig, init: SceneModel) -> Result<FitResult> {
    fit_with(views, cfg, init, |_, _, _| Ok(()))
}

/// [`fit`] with a callback invoked after every step with `(step, loss, scene)`.
pub fn fit_with(views: &[TrainView], cfg: &TrainConfig, init: SceneModel, mut on_step: impl FnMut(usize, f64, &SceneModel) -> Result<()>) -> Result<FitResult> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(FitResult {
            scene: init,
            losses: Vec::new(),
        });
    }
    if views.is_empty() {
        return Err(Error::InvalidConfig("fit needs at least one view".into()));
    }
    if init.is_empty() {
        return Err(Error::InvalidConfig("fit needs a nonempty initial scene".into()));
    }
    for (i, v) in views.iter().enumerate() {
        if v.image.width != v.camera.width() || v.image.height != v.camera.height() || v.image.channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "view {i}: {}x{}x{} image for a {}x{} camera",
                v.image.width,
                v.image.height,
                v.image.channels,
                v.camera.width(),
                v.camera.height()
            )));
        }
    }
    let mut scene = init;
    let groups = param_groups(&scene);
    let mut adam = Adam::new(groups.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut flat = Vec::with_capacity(groups.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    let lr = &cfg.lr;
    for step in 0..cfg.steps {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = &views[order.pop().expect("refilled above")];
        let tl = total_loss_at(&scene, &view.camera, &view.image, view.features.as_ref(), cfg, step)?;
        losses.push(tl.value);
        flatten_grads(&tl.grads, &tl.decoder_grads, &mut flat);
        let c_lr = center_lr(lr, step, cfg.steps);
        let delta = adam.step(&flat, |i| match groups[i] {
            Group::Center => c_lr,
            Group::Rotation => lr.rotation,
            Group::Scale => lr.scale,
            Group::Opacity => lr.opacity,
            Group::Color => lr.color,
            Group::Feature => lr.feature,
            Group::Decoder => lr.decoder,
        });
        apply_update(&mut scene, &delta);
        on_step(step, tl.value, &scene)?;
    }
    Ok(FitResult { scene, losses })
}

/// Settings for building an initial scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub primitives: usize,
    pub sh_degree: usize,
    pub feature_dim: usize,
    pub decoder_hidden: usize,
    pub semantic_dim: usize,
    pub seed: u64,
    pub background: [f64; 3],
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            primitives: 50,
            sh_degree: 1,
            feature_dim: 8,
            decoder_hidden: 64,
            semantic_dim: 16,
            seed: 0,
            background: [0.0; 3],
        }
    }
}

/// Initial opacity of every primitive.
pub const INIT_OPACITY: f64 = 0.1;

/// Mean distance from each point to its nearest neighbor.
pub fn mean_nearest_neighbor(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.len() as f64
}

/// Rotation taking +z to `dir`.
fn facing_rotation(dir: Vec3) -> Quat {
    let n = dir.try_normalize(1e-12).unwrap_or(Vec3::z());
    let z = Vec3::z();
    let axis = z.cross(&n);
    let s = axis.norm();
    let c = z.dot(&n);
    if s < 1e-12 {
        return if c > 0.0 { Quat::IDENTITY } else { Quat::new(0.0, 1.0, 0.0, 0.0) };
    }
    Quat::from_axis_angle(axis / s, s.atan2(c))
}

fn build_scene(centers: Vec<Vec3>, colors: Vec<[f64; 3]>, facing: Vec3, cfg: &InitConfig, rng: &mut ChaCha8Rng) -> Result<SceneModel> {
    let mut nn = mean_nearest_neighbor(&centers);
    if !(nn.is_finite() && nn > 0.0) {
        nn = 0.01;
    }
    let rot = facing_rotation(facing);
    let feat = Normal::new(0.0, 0.01).expect("valid std");
    let prims = centers
        .into_iter()
        .zip(colors)
        .map(|(c, rgb)| {
            let feature = (0..cfg.feature_dim).map(|_| feat.sample(rng)).collect();
            let mut p = SplatPrimitive::new(c, rot, [nn, nn], INIT_OPACITY, rgb, cfg.sh_degree, feature);
            p.opacity_logit = logit(INIT_OPACITY);
            p
        })
        .collect();
    let decoder = SemanticDecoder::init(cfg.feature_dim, cfg.decoder_hidden, cfg.semantic_dim, rng);
    SceneModel::new(prims, decoder, cfg.background, cfg.sh_degree)
}

/// Initial scene with centers drawn from colored seed points. With more
/// requested primitives than points, points are reused with a small jitter.
pub fn init_from_points(points: &[(Vec3, [f64; 3])], facing: Vec3, cfg: &InitConfig) -> Result<SceneModel> {
    if points.is_empty() || cfg.primitives == 0 {
        return Err(Error::InvalidConfig("initialization needs seed points and a nonzero primitive count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.shuffle(&mut rng);
    let spread = mean_nearest_neighbor(&points.iter().map(|p| p.0).collect::<Vec<_>>()).max(1e-4);
    let mut centers = Vec::with_capacity(cfg.primitives);
    let mut colors = Vec::with_capacity(cfg.primitives);
    for k in 0..cfg.primitives {
        let (c, rgb) = points[idx[k % idx.len()]];
        let c = if k < idx.len() {
            c
        } else {
            c + Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)) * spread
        };
        centers.push(c);
        colors.push(rgb.map(|v| v.clamp(0.0, 1.0)));
    }
    build_scene(centers, colors, facing, cfg, &mut rng)
}

/// Initial scene with centers uniform in the box `[lo, hi]` and mid-gray color.
pub fn init_uniform(lo: Vec3, hi: Vec3, facing: Vec3, cfg: &InitConfig) -> Result<SceneModel> {
    if cfg.primitives == 0 || (0..3).any(|k| !(hi[k] >= lo[k])) {
        return Err(Error::InvalidConfig("uniform initialization needs a valid box and a nonzero primitive count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec3> = (0..cfg.primitives)
        .map(|_| Vec3::from_fn(|k, _| if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] }))
        .collect();
    let colors = vec![[0.5; 3]; cfg.primitives];
    build_scene(centers, colors, facing, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, RigidTransform};

    fn camera(w: usize, h: usize) -> Camera {
        let k = Intrinsics {
            fx: 40.0,
            fy: 40.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        };
        Camera::new(k, RigidTransform::IDENTITY).unwrap()
    }

    #[test]
    fn appearance_examples() {
        let a = Image::filled(16, 16, 3, 0.3);
        assert_eq!(appearance_loss(&a, &a, 0.2).unwrap(), 0.0);

        let z = Image::new(16, 16, 3);
        let o = Image::filled(16, 16, 3, 1.0);
        let s = metrics::ssim(&o, &z).unwrap();
        let expected = 0.8 + 0.2 * (1.0 - s) / 2.0;
        assert!((appearance_loss(&o, &z, 0.2).unwrap() - expected).abs() < 1e-12);

        let t = Image::filled(64, 64, 3, 0.5);
        let mut r = t.clone();
        r.data[100] += 0.1;
        let l1_only = appearance_loss(&r, &t, 0.0).unwrap();
        assert!((l1_only - 0.1 / (64.0 * 64.0 * 3.0)).abs() < 1e-15);
        let full = appearance_loss(&r, &t, 0.2).unwrap();
        assert!((0.8 * l1_only - (full - 0.2 * (1.0 - metrics::ssim(&r, &t).unwrap()) / 2.0)).abs() < 1e-15);
        assert!(appearance_loss(&r, &Image::new(64, 63, 3), 0.2).is_err());
    }

    #[test]
    fn appearance_gradient_matches_finite_differences() {
        let mut a = Image::new(9, 8, 3);
        let mut b = Image::new(9, 8, 3);
        for i in 0..a.data.len() {
            a.data[i] = 0.5 + 0.4 * (i as f64 * 0.37).sin();
            b.data[i] = 0.5 + 0.4 * (i as f64 * 0.11).cos();
        }
        let (_, g) = appearance_loss_grad(&a, &b, 0.2).unwrap();
        let h = 1e-7;
        for i in 0..a.data.len() {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (appearance_loss(&p, &b, 0.2).unwrap() - appearance_loss(&m, &b, 0.2).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn output_with(weight: f64, normal: [f64; 3], w: usize, h: usize) -> RenderOutput {
        let mut n = Image::new(w, h, 3);
        n.data.chunks_mut(3).for_each(|p| p.copy_from_slice(&normal));
        RenderOutput {
            color: Image::new(w, h, 3),
            feature: Image::new(w, h, 0),
            depth: Image::filled(w, h, 1, 1.0),
            normal: n,
            weight: Image::filled(w, h, 1, weight),
            final_transmittance: Image::filled(w, h, 1, 1.0 - weight),
        }
    }

    #[test]
    fn normal_loss_examples() {
        let cam = camera(8, 8);
        assert_eq!(normal_loss(&output_with(0.0, [0.0, 0.0, -1.0], 8, 8), &cam), 0.0);
        assert!(normal_loss(&output_with(0.9, [0.0, 0.0, -1.0], 8, 8), &cam).abs() < 1e-12);
        assert!((normal_loss(&output_with(0.9, [1.0, 0.0, 0.0], 8, 8), &cam) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeroed_weights_isolate_appearance() {
        let cam = camera(12, 12);
        let prims = vec![
            SplatPrimitive::new(Vec3::new(0.0, 0.0, 1.0), Quat::IDENTITY, [0.05, 0.05], 0.8, [0.9, 0.2, 0.1], 1, vec![0.3, -0.1]),
            SplatPrimitive::new(Vec3::new(0.03, 0.02, 1.2), Quat::from_axis_angle(Vec3::x(), 0.3), [0.06, 0.04], 0.6, [0.1, 0.7, 0.3], 1, vec![-0.2, 0.5]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = SemanticDecoder::init(2, 4, 3, &mut rng);
        let scene = SceneModel::new(prims, dec, [0.1, 0.1, 0.1], 1).unwrap();
        let target = Image::filled(12, 12, 3, 0.4);
        let cfg = TrainConfig {
            lambda_feature: 0.0,
            lambda_normal: 0.0,
            ..Default::default()
        };
        let tl = total_loss(&scene, &cam, &target, None, &cfg).unwrap();
        let direct = appearance_loss(&render(&scene, &cam).color, &target, 0.2).unwrap();
        assert_eq!(tl.value, direct);
    }

    #[test]
    fn zero_steps_returns_init() {
        let pts = vec![(Vec3::new(0.0, 0.0, 1.0), [0.5, 0.5, 0.5]), (Vec3::new(0.1, 0.0, 1.0), [0.2, 0.3, 0.4])];
        let init = init_from_points(&pts, -Vec3::z(), &InitConfig::default()).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let r = fit(&[], &cfg, init.clone()).unwrap();
        assert_eq!(r.scene, init);
    }

    #[test]
    fn init_properties() {
        let pts: Vec<(Vec3, [f64; 3])> = (0..10).map(|i| (Vec3::new(i as f64 * 0.1, 0.0, 1.0), [0.1 * i as f64, 0.5, 0.5])).collect();
        let cfg = InitConfig {
            primitives: 25,
            ..Default::default()
        };
        let s = init_from_points(&pts, -Vec3::z(), &cfg).unwrap();
        assert_eq!(s.len(), 25);
        for p in &s.primitives {
            assert!((p.opacity() - 0.1).abs() < 1e-12);
            assert!(p.scale()[0] > 0.0 && p.scale()[0] == p.scale()[1]);
            assert!((crate::scene::splat_frame(p).2 + Vec3::z()).norm() < 1e-12);
            assert_eq!(p.feature.len(), 8);
        }
        assert_eq!(s, init_from_points(&pts, -Vec3::z(), &cfg).unwrap());
        let exact = init_from_points(&pts, -Vec3::z(), &InitConfig { primitives: 10, ..Default::default() }).unwrap();
        assert!(exact.primitives.iter().all(|p| (p.scale()[0] - 0.1).abs() < 1e-12));
        assert!((mean_nearest_neighbor(&[Vec3::zeros(), Vec3::x(), Vec3::x() * 3.0]) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn facing_rotation_maps_z() {
        for d in [Vec3::new(0.3, -0.2, 0.9), -Vec3::z(), Vec3::z(), Vec3::x()] {
            let q = facing_rotation(d);
            assert!((q.rotate(Vec3::z()) - d.normalize()).norm() < 1e-12);
        }
    }
}
