//! File formats: scenes, cameras, raw float images, feature maps, query
//! embeddings, policy datasets and PNG.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Quat, RigidTransform, Vec3};
use crate::image::Image;
use crate::policy::net::{Episode, PolicyDataset};
use crate::policy::rollout::ROBOT_STATE_DIM;
use crate::scene::{SceneModel, SplatPrimitive};
use crate::semantics::{FeatureMaps, SemanticDecoder};
use crate::sh;

pub const SCENE_MAGIC: &[u8; 4] = b"S2GS";
pub const SCENE_VERSION: u32 = 1;
pub const IMAGE_MAGIC: &[u8; 4] = b"S2GB";
pub const FEATURE_MAGIC: &[u8; 4] = b"S2GF";
pub const QUERY_MAGIC: &[u8; 4] = b"S2GQ";
pub const DATASET_MAGIC: &[u8; 4] = b"S2GD";

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian sink.
#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn magic(&mut self, m: &[u8; 4]) {
        self.buf.extend_from_slice(m);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{v} does not fit a u32 header field")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

/// Little-endian source with bounds-checked reads.
struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| Error::Malformed(format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.buf.len())))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.buf.get(..4).unwrap_or(self.buf);
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        self.pos = 4;
        Ok(())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Malformed("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }

    /// Guards allocations driven by header fields.
    fn expect_at_least(&self, floats: usize) -> Result<()> {
        let left = self.buf.len() - self.pos;
        if floats.saturating_mul(4) > left {
            return Err(Error::Malformed(format!("header announces {floats} floats, only {left} bytes remain")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_scene(scene: &SceneModel) -> Result<Vec<u8>> {
    scene.validate()?;
    let mut e = Encoder::default();
    e.magic(SCENE_MAGIC);
    e.u32(SCENE_VERSION as usize)?;
    e.u32(scene.len())?;
    e.u32(scene.feature_dim())?;
    e.u32(scene.sh_degree)?;
    for p in &scene.primitives {
        e.f32s(p.center.iter());
        e.f32s(&p.rotation.to_array());
        e.f32s(&p.log_scale);
        e.f32s([p.opacity_logit].iter());
        e.f32s(&p.sh);
        e.f32s(&p.feature);
    }
    let d = &scene.decoder;
    e.u32(2)?;
    e.u32(d.hidden_dim)?;
    e.u32(d.input_dim)?;
    e.f32s(&d.w1);
    e.f32s(&d.b1);
    e.u32(2 * d.output_dim)?;
    e.u32(d.hidden_dim)?;
    e.f32s(&d.w2);
    e.f32s(&d.b2);
    e.f32s(&scene.background);
    Ok(e.buf)
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneModel> {
    let mut d = Decoder::new(bytes);
    d.magic(SCENE_MAGIC)?;
    let version = d.u32()? as u32;
    if version != SCENE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = d.u32()?;
    let d_f = d.u32()?;
    let degree = d.u32()?;
    if degree > sh::MAX_DEGREE {
        return Err(Error::Malformed(format!("sh degree {degree} exceeds {}", sh::MAX_DEGREE)));
    }
    let n_sh = 3 * sh::coeff_count(degree);
    let record = 10 + n_sh + d_f;
    d.expect_at_least(count.saturating_mul(record))?;
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let r = d.f32s(record)?;
        primitives.push(SplatPrimitive {
            center: Vec3::new(r[0], r[1], r[2]),
            rotation: Quat::new(r[3], r[4], r[5], r[6]),
            log_scale: [r[7], r[8]],
            opacity_logit: r[9],
            sh: r[10..10 + n_sh].to_vec(),
            feature: r[10 + n_sh..].to_vec(),
        });
    }
    let layers = d.u32()?;
    if layers != 2 {
        return Err(Error::Malformed(format!("decoder has {layers} layers, expected 2")));
    }
    let (hidden, input) = (d.u32()?, d.u32()?);
    d.expect_at_least(hidden.saturating_mul(input))?;
    let w1 = d.f32s(hidden * input)?;
    let b1 = d.f32s(hidden)?;
    let (out2, hidden2) = (d.u32()?, d.u32()?);
    if hidden2 != hidden || out2 % 2 != 0 {
        return Err(Error::DimensionMismatch(format!("decoder layer 2 is {out2}x{hidden2}, layer 1 has {hidden} outputs")));
    }
    d.expect_at_least(out2.saturating_mul(hidden))?;
    let w2 = d.f32s(out2 * hidden)?;
    let b2 = d.f32s(out2)?;
    let bg = d.f32s(3)?;
    d.finish()?;
    if input != d_f {
        return Err(Error::DimensionMismatch(format!("decoder input {input} differs from feature dim {d_f}")));
    }
    let decoder = SemanticDecoder {
        input_dim: input,
        hidden_dim: hidden,
        output_dim: out2 / 2,
        w1,
        b1,
        w2,
        b2,
    };
    SceneModel::new(primitives, decoder, [bg[0], bg[1], bg[2]], degree)
}

pub fn save_scene(path: &Path, scene: &SceneModel) -> Result<()> {
    write_bytes(path, &encode_scene(scene)?)
}

pub fn load_scene(path: &Path) -> Result<SceneModel> {
    decode_scene(&read_bytes(path)?)
}

/// JSON camera description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// World-to-camera translation.
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let k = &c.intrinsics;
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: c.world_to_camera.rotation.to_array(),
            translation: c.world_to_camera.translation.into(),
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> Result<Camera> {
        if self.rotation.iter().all(|v| *v == 0.0) {
            return Err(Error::Domain("camera rotation quaternion is zero".into()));
        }
        Camera::new(
            Intrinsics {
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            },
            RigidTransform::new(Quat::from_array(self.rotation), Vec3::from(self.translation)),
        )
    }
}

pub fn save_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_bytes(path, serde_json::to_string_pretty(&CameraFile::from(camera))?.as_bytes())
}

pub fn load_camera(path: &Path) -> Result<Camera> {
    let f: CameraFile = serde_json::from_slice(&read_bytes(path)?)?;
    f.to_camera()
}

pub fn encode_image(img: &Image) -> Result<Vec<u8>> {
    let mut e = Encoder::default();
    e.magic(IMAGE_MAGIC);
    e.u32(img.height)?;
    e.u32(img.width)?;
    e.u32(img.channels)?;
    e.f32s(&img.data);
    Ok(e.buf)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let mut d = Decoder::new(bytes);
    d.magic(IMAGE_MAGIC)?;
    let (h, w, c) = (d.u32()?, d.u32()?, d.u32()?);
    let n = h.saturating_mul(w).saturating_mul(c);
    d.expect_at_least(n)?;
    let data = d.f32s(n)?;
    d.finish()?;
    Image::from_vec(w, h, c, data)
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_image(img)?)
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&read_bytes(path)?)
}

pub fn encode_feature_maps(maps: &FeatureMaps) -> Result<Vec<u8>> {
    let mut e = Encoder::default();
    e.magic(FEATURE_MAGIC);
    e.u32(maps.height())?;
    e.u32(maps.width())?;
    e.u32(maps.dim())?;
    e.u32(maps.object_features.len())?;
    e.f32s(&maps.raw.data);
    for m in &maps.masks {
        e.i32(*m);
    }
    for (label, f) in &maps.object_features {
        e.i32(*label);
        e.f32s(f);
    }
    Ok(e.buf)
}

/// Inputs are re-normalized on load, so the stored maps need not be unit length.
pub fn decode_feature_maps(bytes: &[u8]) -> Result<FeatureMaps> {
    let mut d = Decoder::new(bytes);
    d.magic(FEATURE_MAGIC)?;
    let (h, w, dim, labels) = (d.u32()?, d.u32()?, d.u32()?, d.u32()?);
    let n = h.saturating_mul(w);
    d.expect_at_least(n.saturating_mul(dim).saturating_add(n))?;
    let raw = Image::from_vec(w, h, dim, d.f32s(n * dim)?)?;
    let masks = (0..n).map(|_| d.i32()).collect::<Result<Vec<_>>>()?;
    d.expect_at_least(labels.saturating_mul(dim + 1))?;
    let mut table = BTreeMap::new();
    for _ in 0..labels {
        let label = d.i32()?;
        if table.insert(label, d.f32s(dim)?).is_some() {
            return Err(Error::Malformed(format!("label {label} listed twice")));
        }
    }
    d.finish()?;
    FeatureMaps::new(raw, masks, table)
}

pub fn save_feature_maps(path: &Path, maps: &FeatureMaps) -> Result<()> {
    write_bytes(path, &encode_feature_maps(maps)?)
}

pub fn load_feature_maps(path: &Path) -> Result<FeatureMaps> {
    decode_feature_maps(&read_bytes(path)?)
}

pub fn encode_query(embedding: &[f64]) -> Result<Vec<u8>> {
    let mut e = Encoder::default();
    e.magic(QUERY_MAGIC);
    e.u32(embedding.len())?;
    e.f32s(embedding);
    Ok(e.buf)
}

pub fn decode_query(bytes: &[u8]) -> Result<Vec<f64>> {
    let mut d = Decoder::new(bytes);
    d.magic(QUERY_MAGIC)?;
    let n = d.u32()?;
    d.expect_at_least(n)?;
    let v = d.f32s(n)?;
    d.finish()?;
    Ok(v)
}

pub fn save_query(path: &Path, embedding: &[f64]) -> Result<()> {
    write_bytes(path, &encode_query(embedding)?)
}

pub fn load_query(path: &Path) -> Result<Vec<f64>> {
    decode_query(&read_bytes(path)?)
}

/// The horizon field stores the policy's action-sequence length; the last
/// `ROBOT_STATE_DIM` observation entries are the robot state.
pub fn encode_dataset(ds: &PolicyDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    if ds.q_dim != ROBOT_STATE_DIM {
        return Err(Error::DimensionMismatch(format!("datasets store a {ROBOT_STATE_DIM}-dim robot state, got {}", ds.q_dim)));
    }
    let mut e = Encoder::default();
    e.magic(DATASET_MAGIC);
    e.u32(ds.episodes.len())?;
    e.u32(ds.horizon)?;
    e.u32(ds.action_dim)?;
    e.u32(ds.obs_dim)?;
    for ep in &ds.episodes {
        e.u32(ep.actions.len())?;
        for (o, a) in ep.observations.iter().zip(&ep.actions) {
            e.f32s(o);
            e.f32s(a);
        }
    }
    Ok(e.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PolicyDataset> {
    let mut d = Decoder::new(bytes);
    d.magic(DATASET_MAGIC)?;
    let (episodes, horizon, action_dim, obs_dim) = (d.u32()?, d.u32()?, d.u32()?, d.u32()?);
    if obs_dim < ROBOT_STATE_DIM {
        return Err(Error::DimensionMismatch(format!("obs dim {obs_dim} is smaller than the robot state")));
    }
    let mut ds = PolicyDataset::new(horizon, action_dim, obs_dim, ROBOT_STATE_DIM);
    for _ in 0..episodes {
        let t = d.u32()?;
        d.expect_at_least(t.saturating_mul(obs_dim + action_dim))?;
        let mut ep = Episode {
            observations: Vec::with_capacity(t),
            actions: Vec::with_capacity(t),
        };
        for _ in 0..t {
            ep.observations.push(d.f32s(obs_dim)?);
            ep.actions.push(d.f32s(action_dim)?);
        }
        ds.episodes.push(ep);
    }
    d.finish()?;
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &PolicyDataset) -> Result<()> {
    write_bytes(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<PolicyDataset> {
    decode_dataset(&read_bytes(path)?)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG of a 1- or 3-channel image with values clamped to `[0, 1]`.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::DimensionMismatch(format!("PNG export needs 1 or 3 channels, got {c}"))),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&bytes).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(())
}

/// Decodes any PNG to 8-bit samples; returns `(width, height, channels, samples)`.
fn read_png_raw(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| Error::Malformed(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Malformed(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(w * h * channels);
    Ok((w, h, channels, buf))
}

/// RGB image in `[0, 1]`; gray is replicated, alpha dropped.
pub fn load_png(path: &Path) -> Result<Image> {
    let (w, h, c, raw) = read_png_raw(path)?;
    let mut img = Image::new(w, h, 3);
    for (i, px) in raw.chunks_exact(c).enumerate() {
        let rgb = if c >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
        for k in 0..3 {
            img.data[i * 3 + k] = rgb[k] as f64 / 255.0;
        }
    }
    Ok(img)
}

/// Binary mask: a pixel is set when its first sample is nonzero.
pub fn load_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let (w, h, c, raw) = read_png_raw(path)?;
    Ok((w, h, raw.chunks_exact(c).map(|px| px[0] != 0).collect()))
}

pub fn save_mask_png(path: &Path, width: usize, mask: &[bool]) -> Result<()> {
    let h = if width == 0 { 0 } else { mask.len() / width };
    let img = Image::from_vec(width, h, 1, mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect())?;
    save_png(path, &img)
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

/// Flushes a writer, mapping failures to an i/o error on `path`.
pub fn flush(path: &Path, w: &mut impl Write) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::rollout::{collect_demonstrations, DeskContext, Domain, ObsSource};
    use crate::policy::TaskKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f32_round(v: f64) -> f64 {
        v as f32 as f64
    }

    fn scene() -> SceneModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prims = (0..7)
            .map(|i| {
                let f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                SplatPrimitive::new(Vec3::new(0.1 * i as f64, -0.2, 1.0 + 0.03 * i as f64), Quat::from_axis_angle(Vec3::new(0.3, 1.0, 0.2), 0.4 * i as f64), [0.01, 0.02], 0.6, [0.2, 0.5, 0.7], 1, f)
            })
            .collect();
        let dec = SemanticDecoder::init(4, 6, 5, &mut rng);
        SceneModel::new(prims, dec, [0.1, 0.2, 0.3], 1).unwrap()
    }

    #[test]
    fn scene_round_trip_is_f32_exact() {
        let s = scene();
        let bytes = encode_scene(&s).unwrap();
        assert_eq!(&bytes[..4], b"S2GS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = decode_scene(&bytes).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in s.primitives.iter().zip(&back.primitives) {
            assert_eq!(b.center, a.center.map(f32_round));
            assert_eq!(b.sh, a.sh.iter().map(|v| f32_round(*v)).collect::<Vec<_>>());
            assert_eq!(b.feature, a.feature.iter().map(|v| f32_round(*v)).collect::<Vec<_>>());
        }
        assert_eq!(back.decoder.w2, s.decoder.w2.iter().map(|v| f32_round(*v)).collect::<Vec<_>>());
        // A second pass is lossless.
        assert_eq!(encode_scene(&back).unwrap(), bytes);
    }

    #[test]
    fn scene_errors() {
        let bytes = encode_scene(&scene()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_scene(&bad), Err(Error::BadMagic { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_scene(&v2), Err(Error::UnsupportedVersion(2))));
        assert!(matches!(decode_scene(&bytes[..bytes.len() - 5]), Err(Error::Malformed(_))));
        let mut huge = bytes.clone();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_scene(&huge), Err(Error::Malformed(_))));
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = Camera::look_at(Vec3::new(0.3, -0.2, -1.0), Vec3::zeros(), Vec3::y(), Camera::intrinsics_from_fov(40, 30, 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.json");
        save_camera(&p, &cam).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        for key in ["fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"] {
            assert!(text.contains(&format!("\"{key}\"")), "{key}");
        }
        assert_eq!(load_camera(&p).unwrap(), cam);
    }

    #[test]
    fn image_and_query_round_trip() {
        let img = Image::from_vec(3, 2, 2, (0..12).map(|i| i as f64 * 0.25).collect()).unwrap();
        let bytes = encode_image(&img).unwrap();
        assert_eq!(bytes.len(), 16 + 12 * 4);
        assert_eq!(decode_image(&bytes).unwrap(), img);
        let q = vec![0.5, -0.25, 1.0];
        assert_eq!(decode_query(&encode_query(&q).unwrap()).unwrap(), q);
        assert!(matches!(decode_query(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn feature_maps_round_trip() {
        let raw = Image::from_vec(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8, 1.0, 0.0]).unwrap();
        let masks = vec![0, 0, -1, 3];
        let table = BTreeMap::from([(0, vec![0.0, 1.0]), (3, vec![1.0, 0.0])]);
        let maps = FeatureMaps::new(raw, masks, table).unwrap();
        let back = decode_feature_maps(&encode_feature_maps(&maps).unwrap()).unwrap();
        assert_eq!(back.masks, maps.masks);
        assert_eq!(back.object_features, maps.object_features);
        for (a, b) in back.global_target.data.iter().zip(&maps.global_target.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let ctx = DeskContext::standard();
        let ds = collect_demonstrations(TaskKind::Push, ObsSource::State, &Domain::training(), &ctx, 0..3).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"S2GD");
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.episodes.len(), 3);
        assert_eq!((back.horizon, back.action_dim, back.obs_dim, back.q_dim), (ds.horizon, ds.action_dim, ds.obs_dim, ds.q_dim));
        assert_eq!(back.episodes[1].actions[0], ds.episodes[1].actions[0].iter().map(|v| f32_round(*v)).collect::<Vec<_>>());
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_vec(2, 1, 3, vec![0.0, 0.5, 1.0, 0.2, 2.0, -1.0]).unwrap();
        let p = dir.path().join("a.png");
        save_png(&p, &img).unwrap();
        let back = load_png(&p).unwrap();
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let m = dir.path().join("m.png");
        save_mask_png(&m, 3, &[true, false, true, false, false, true]).unwrap();
        assert_eq!(load_mask_png(&m).unwrap(), (3, 2, vec![true, false, true, false, false, true]));
        assert!(matches!(load_png(&dir.path().join("missing.png")), Err(Error::Io { .. })));
    }
}
