//! Rigid tracking of an extracted object against new observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Quat, RigidTransform, Vec3};
use crate::image::Image;
use crate::query::ObjectExtract;
use crate::rasterizer::{render, render_backward, OutputGrads};
use crate::scene::SceneModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub steps_per_frame: usize,
    pub lr_translation: f64,
    pub lr_rotation: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            steps_per_frame: 10,
            lr_translation: 3e-5,
            lr_rotation: 1.5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub object: ObjectExtract,
    /// Cumulative motion since extraction.
    pub current_transform: RigidTransform,
    pub steps_per_frame: usize,
    /// `(translation, rotation)` gradient step sizes.
    pub step_sizes: (f64, f64),
    /// Tracking loss before the last step of the latest frame.
    pub last_loss: Option<f64>,
}

impl TrackState {
    pub fn new(object: ObjectExtract, cfg: &TrackConfig) -> Self {
        Self {
            object,
            current_transform: RigidTransform::IDENTITY,
            steps_per_frame: cfg.steps_per_frame,
            step_sizes: (cfg.lr_translation, cfg.lr_rotation),
            last_loss: None,
        }
    }

    /// Object centroid under the current motion.
    pub fn centroid(&self) -> Vec3 {
        self.current_transform.apply(self.object.centroid)
    }
}

/// Copy of `scene` with member centers moved by `t` and member rotations
/// left-composed with its rotation.
pub fn apply_motion(scene: &SceneModel, object: &[usize], t: &RigidTransform) -> SceneModel {
    let mut out = scene.clone();
    if *t == RigidTransform::IDENTITY {
        return out;
    }
    for &i in object {
        let p = &mut out.primitives[i];
        p.center = t.apply(p.center);
        p.rotation = t.rotation.mul(p.rotation).normalized();
    }
    out
}

/// Applies the motion-tangent update `(dt, dw)` about `pivot` to `t`:
/// `Translate(pivot + dt) Rot(exp dw) Translate(-pivot) t`.
pub fn retract(t: &RigidTransform, pivot: Vec3, dt: Vec3, dw: Vec3) -> RigidTransform {
    let r = Quat::exp(dw);
    RigidTransform::new(r, pivot + dt - r.rotate(pivot)).compose(t).renormalized()
}

fn masked_count(mask: &[bool]) -> usize {
    mask.iter().filter(|m| **m).count()
}

/// Mean over masked pixels of the channel-averaged L1 error between the
/// moved scene's render and `observed`, with its gradient w.r.t. the motion
/// tangent `(dt, dw)` at `t` (rotation about the moved object centroid).
pub fn tracking_loss(scene: &SceneModel, object: &ObjectExtract, t: &RigidTransform, observed: &Image, mask: &[bool], camera: &Camera) -> Result<(f64, [f64; 6])> {
    let (w, h) = (camera.width(), camera.height());
    if observed.width != w || observed.height != h || observed.channels != 3 || mask.len() != w * h {
        return Err(Error::DimensionMismatch(format!(
            "observation {}x{}x{} with {} mask entries for a {w}x{h} camera",
            observed.width,
            observed.height,
            observed.channels,
            mask.len()
        )));
    }
    let m = masked_count(mask);
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    let moved = apply_motion(scene, &object.primitive_indices, t);
    let out = render(&moved, camera);
    let norm = 1.0 / (3 * m) as f64;
    let mut loss = 0.0;
    let mut g_color = vec![0.0; w * h * 3];
    for (i, &inside) in mask.iter().enumerate() {
        if !inside {
            continue;
        }
        for c in 0..3 {
            let d = out.color.data[i * 3 + c] - observed.data[i * 3 + c];
            loss += d.abs();
            g_color[i * 3 + c] = norm * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        }
    }
    let grads = render_backward(
        &moved,
        camera,
        &OutputGrads {
            color: Some(g_color),
            ..Default::default()
        },
    );
    let pivot = t.apply(object.centroid);
    let mut g_t = Vec3::zeros();
    let mut g_w = Vec3::zeros();
    for &i in &object.primitive_indices {
        let p = &moved.primitives[i];
        let g = &grads.primitives[i];
        g_t += g.center;
        g_w += (p.center - pivot).cross(&g.center);
        let q = p.rotation;
        for (k, e) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
            let dq = Quat::new(0.0, e.x, e.y, e.z).mul(q);
            g_w[k] += 0.5 * (g.rotation[0] * dq.w + g.rotation[1] * dq.x + g.rotation[2] * dq.y + g.rotation[3] * dq.z);
        }
    }
    Ok((loss * norm, [g_t.x, g_t.y, g_t.z, g_w.x, g_w.y, g_w.z]))
}

/// Starts from `prior` applied after the current motion and takes
/// `steps_per_frame` gradient steps. The scene is not modified.
pub fn track_frame(state: &TrackState, scene: &SceneModel, observed: &Image, mask: &[bool], camera: &Camera, prior: &RigidTransform) -> Result<TrackState> {
    let mut t = prior.compose(&state.current_transform).renormalized();
    let (lr_t, lr_r) = state.step_sizes;
    let mut last = None;
    for step in 0..state.steps_per_frame {
        let (loss, g) = tracking_loss(scene, &state.object, &t, observed, mask, camera)?;
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "tracking loss", step });
        }
        last = Some(loss);
        if g.iter().all(|v| *v == 0.0) {
            // Remaining steps would be no-ops.
            break;
        }
        let pivot = t.apply(state.object.centroid);
        let dt = Vec3::new(g[0], g[1], g[2]) * -lr_t;
        let dw = Vec3::new(g[3], g[4], g[5]) * -lr_r;
        t = retract(&t, pivot, dt, dw);
    }
    Ok(TrackState {
        current_transform: t,
        last_loss: last.or(state.last_loss),
        ..state.clone()
    })
}

/// Scene with the tracked motion baked in.
pub fn commit(scene: &SceneModel, state: &TrackState) -> SceneModel {
    apply_motion(scene, &state.object.primitive_indices, &state.current_transform)
}

/// Silhouette of the listed primitives, dilated by `grow` pixels.
pub fn object_mask(scene: &SceneModel, indices: &[usize], camera: &Camera, grow: usize) -> Vec<bool> {
    let out = render(&scene.subset(indices), camera);
    let (w, h) = (camera.width(), camera.height());
    let core: Vec<bool> = out.weight.data.iter().map(|v| *v > 0.5).collect();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !core[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(grow)..(y + grow + 1).min(h) {
                for xx in x.saturating_sub(grow)..(x + grow + 1).min(w) {
                    mask[yy * w + xx] = true;
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{splat_frame, SplatPrimitive};
    use crate::semantics::SemanticDecoder;
    use proptest::prelude::*;

    fn scene() -> SceneModel {
        let prims = (0..6)
            .map(|i| {
                let c = Vec3::new(i as f64 * 0.1, (i as f64).sin() * 0.05, 1.0 + 0.01 * i as f64);
                SplatPrimitive::new(c, Quat::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.2 * i as f64), [0.02, 0.03], 0.7, [0.3, 0.6, 0.9], 0, vec![])
            })
            .collect();
        SceneModel::new(prims, SemanticDecoder::zeros(0, 1, 1), [0.0; 3], 0).unwrap()
    }

    #[test]
    fn identity_is_bit_identical() {
        let s = scene();
        assert_eq!(apply_motion(&s, &[0, 2, 4], &RigidTransform::IDENTITY), s);
    }

    #[test]
    fn translation_moves_members_only() {
        let s = scene();
        let t = RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let m = apply_motion(&s, &[1, 3], &t);
        for i in 0..s.len() {
            let shift = if i == 1 || i == 3 { 0.1 } else { 0.0 };
            assert!((m.primitives[i].center - s.primitives[i].center - Vec3::new(shift, 0.0, 0.0)).norm() < 1e-15);
            assert_eq!(m.primitives[i].rotation, s.primitives[i].rotation);
        }
    }

    #[test]
    fn rotation_about_centroid_rotates_frames() {
        let s = scene();
        let members = [0usize, 1, 2];
        let c = members.iter().map(|&i| s.primitives[i].center).sum::<Vec3>() / 3.0;
        let q = Quat::from_axis_angle(Vec3::z(), std::f64::consts::FRAC_PI_2);
        let m = apply_motion(&s, &members, &RigidTransform::rotation_about(c, q));
        for &i in &members {
            let (_, _, n0) = splat_frame(&s.primitives[i]);
            let (_, _, n1) = splat_frame(&m.primitives[i]);
            assert!((q.rotate(n0) - n1).norm() < 1e-12);
        }
        let c1 = members.iter().map(|&i| m.primitives[i].center).sum::<Vec3>() / 3.0;
        assert!((c1 - c).norm() < 1e-12);
    }

    #[test]
    fn retract_at_zero_is_identity() {
        let t = RigidTransform::new(Quat::from_axis_angle(Vec3::y(), 0.3), Vec3::new(0.1, 0.2, 0.3));
        let r = retract(&t, Vec3::new(0.5, 0.0, 1.0), Vec3::zeros(), Vec3::zeros());
        assert!((r.translation - t.translation).norm() < 1e-15);
        assert!((r.rotation.dot(t.rotation).abs() - 1.0).abs() < 1e-15);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-1.0f64..1.0), -3.0f64..3.0, prop::array::uniform3(-0.5f64..0.5))
            .prop_map(|(axis, ang, t)| RigidTransform::new(Quat::from_axis_angle(Vec3::from(axis), ang), Vec3::from(t)))
    }

    proptest! {
        #[test]
        fn motion_is_a_group_action(a in arb_transform(), b in arb_transform()) {
            let s = scene();
            let members = [0usize, 2, 5];
            let seq = apply_motion(&apply_motion(&s, &members, &a), &members, &b);
            let once = apply_motion(&s, &members, &b.compose(&a));
            for &i in &members {
                prop_assert!((seq.primitives[i].center - once.primitives[i].center).norm() < 1e-10);
            }
        }
    }
}
