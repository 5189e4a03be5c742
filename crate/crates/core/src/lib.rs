//! Semantic 2D Gaussian splatting.

pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod query;
pub mod rasterizer;
pub mod scene;
pub mod semantics;
pub mod sh;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{compose, Camera, Intrinsics, Quat, RigidTransform, Vec3};
pub use image::Image;
pub use rasterizer::{render, render_backward, OutputGrads, ParamGradients, RenderOutput};
pub use scene::{splat_frame, SceneModel, SplatPrimitive};
pub use semantics::{FeatureMaps, SemanticDecoder};
