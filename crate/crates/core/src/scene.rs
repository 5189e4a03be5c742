use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};
use crate::semantics::SemanticDecoder;
use crate::sh;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One oriented Gaussian disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplatPrimitive {
    pub center: Vec3,
    /// Disk orientation; the local x/y axes span the disk, z is its normal.
    pub rotation: Quat,
    /// Natural log of the two in-plane standard deviations.
    pub log_scale: [f64; 2],
    pub opacity_logit: f64,
    /// Spherical-harmonic color, `sh[k * 3 + channel]`.
    pub sh: Vec<f64>,
    pub feature: Vec<f64>,
}

impl SplatPrimitive {
    pub fn new(center: Vec3, rotation: Quat, scale: [f64; 2], opacity: f64, rgb: [f64; 3], sh_degree: usize, feature: Vec<f64>) -> Self {
        let mut coeffs = vec![0.0; 3 * sh::coeff_count(sh_degree)];
        for ch in 0..3 {
            coeffs[ch] = sh::rgb_to_dc(rgb[ch]);
        }
        Self {
            center,
            rotation: rotation.normalized(),
            log_scale: [scale[0].ln(), scale[1].ln()],
            opacity_logit: logit(opacity),
            sh: coeffs,
            feature,
        }
    }

    pub fn scale(&self) -> [f64; 2] {
        [self.log_scale[0].exp(), self.log_scale[1].exp()]
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// View-independent (DC) color.
    pub fn base_color(&self) -> [f64; 3] {
        sh::eval_color(&self.sh[..3], 0, Vec3::z())
    }
}

/// Tangent axes and normal of a disk: the rotated x, y and z axes.
pub fn splat_frame(p: &SplatPrimitive) -> (Vec3, Vec3, Vec3) {
    let r = p.rotation.normalized().to_matrix();
    (r.column(0).into_owned(), r.column(1).into_owned(), r.column(2).into_owned())
}

/// The optimizable scene: primitives plus the jointly trained decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub primitives: Vec<SplatPrimitive>,
    pub decoder: SemanticDecoder,
    pub background: [f64; 3],
    pub sh_degree: usize,
}

impl SceneModel {
    pub fn new(primitives: Vec<SplatPrimitive>, decoder: SemanticDecoder, background: [f64; 3], sh_degree: usize) -> Result<Self> {
        let scene = Self {
            primitives,
            decoder,
            background,
            sh_degree,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::InvalidConfig(format!("sh degree {} exceeds {}", self.sh_degree, sh::MAX_DEGREE)));
        }
        let n_sh = 3 * sh::coeff_count(self.sh_degree);
        let d_f = self.decoder.input_dim();
        for (i, p) in self.primitives.iter().enumerate() {
            if p.sh.len() != n_sh {
                return Err(Error::DimensionMismatch(format!("primitive {i} has {} color coefficients, expected {n_sh}", p.sh.len())));
            }
            if p.feature.len() != d_f {
                return Err(Error::DimensionMismatch(format!("primitive {i} has feature dim {}, decoder expects {d_f}", p.feature.len())));
            }
        }
        Ok(())
    }

    /// Copy of the scene keeping only the listed primitives.
    pub fn subset(&self, indices: &[usize]) -> SceneModel {
        SceneModel {
            primitives: indices.iter().map(|&i| self.primitives[i].clone()).collect(),
            decoder: self.decoder.clone(),
            background: self.background,
            sh_degree: self.sh_degree,
        }
    }
}
