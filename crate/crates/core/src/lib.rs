//! Patch-level 3D spatial memory for camera-controlled video generation:
//! lifting latent patches into world space, retrieving and warping them
//! into new views, projective positional encodings, scene editing, a
//! synthetic ground-truth simulator, evaluation metrics and a flow ODE
//! sampling skeleton.
//!
//! The geometric kernels are generic over [`scalar::Real`] (`f32` or
//! `f64`); the store and the pipelines work in `f64`.

pub mod flow_ode;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod manipulation;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod prope;
pub mod scalar;
pub mod simulator;
pub mod warping;

pub use scalar::Real;

pub type Vec3 = linalg::Vec3<f64>;
pub type Mat3 = linalg::Mat3<f64>;
pub type Mat4 = linalg::Mat4<f64>;
pub type Intrinsics = geometry::Intrinsics<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Camera = geometry::Camera<f64>;
pub type ProjectionMatrix = geometry::ProjectionMatrix<f64>;

pub type Vec3f = linalg::Vec3<f32>;
pub type Mat3f = linalg::Mat3<f32>;
pub type Mat4f = linalg::Mat4<f32>;
pub type Intrinsicsf = geometry::Intrinsics<f32>;
pub type Posef = geometry::Pose<f32>;
pub type Cameraf = geometry::Camera<f32>;
