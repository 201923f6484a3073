//! Dual-space neural radiance fields for animatable avatars.
//!
//! A body field lives in a canonical space, a lighting field lives in the
//! world space, and the two are bridged by a parameter-free barycentric
//! mapping anchored to a skinned proxy mesh.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`.

pub mod error;
pub mod linalg;
pub mod barymap;
pub mod fields;
pub mod imaging;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3 = linalg::Vec3<f64>;
pub type Quat = linalg::Quat<f64>;
pub type SkinnedMesh = mesh::SkinnedMesh<f64>;
pub type PosedMesh = mesh::PosedMesh<f64>;
pub type Pose = mesh::Pose<f64>;
pub type FaceFrame = mesh::FaceFrame<f64>;
pub type Aabb = mesh::Aabb<f64>;
