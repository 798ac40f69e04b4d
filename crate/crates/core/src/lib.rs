//! Anchor-based monocular 3D lane detection toolkit: camera geometry, 3D anchors,
//! feature sampling, a trainable anchor head, an equal-width post-optimizer,
//! evaluation metrics and a synthetic scene generator.

pub mod anchor;
pub mod eval;
pub mod ewc;
pub mod geometry;
pub mod head;
pub mod lane;
pub mod sampling;
pub mod scalar;
pub mod synth;

pub use scalar::Real;

/// Double-precision instances of the generic types.
pub type Lane3D = lane::Lane3D<f64>;
pub type Proposal = lane::Proposal<f64>;
pub type Anchor = anchor::Anchor<f64>;
pub type YSampling = anchor::YSampling<f64>;
pub type AnchorGridConfig = anchor::AnchorGridConfig<f64>;
pub type CameraRig = geometry::CameraRig<f64>;
pub type RigidTransform = geometry::RigidTransform<f64>;
pub type GroundPoint = geometry::GroundPoint<f64>;
pub type FeatureMap = sampling::FeatureMap<f64>;
pub type Model = head::Model<f64>;
pub type Checkpoint = head::Checkpoint<f64>;
pub type Scene = synth::Scene<f64>;
