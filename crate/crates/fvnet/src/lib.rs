//! Front-view 3D object detection from LiDAR point clouds.
//!
//! The pipeline has two stages. Stage one projects a raw point cloud onto a
//! cylindrical surface, producing a dense front-view map, and runs a
//! multi-scale convolutional detector over it to generate 3D proposals: a 2D
//! map box plus a pair of truncated radial distances that cut the view
//! frustum into a finite cylinder fragment. Stage two extrudes the points
//! inside each fragment from the whole cloud, rotates them into a canonical
//! frame, and regresses an amodal oriented 3D box with a point network.
//!
//! Module map:
//! - [`geom`] — shared geometric types and exact oriented-box geometry
//! - [`fvproj`] — cylindrical projection, front-view maps, upscaling
//! - [`proposal`] — anchor priors, proposal codec, target assignment,
//!   stage-1 loss, NMS
//! - [`frustum`] — point extrusion, canonical transform, augmentation
//! - [`nnet`] — deterministic tensor engine with exact backward passes,
//!   both network stages, stage-2 loss, training loop
//! - [`eval`] — rotated-box IoU and average precision with difficulty
//!   buckets
//! - [`kittio`] — file formats, synthetic scenes, BEV rendering, pipeline
//!   orchestration, benchmarks

pub mod fvproj;
pub mod proposal;
pub mod geom;

pub use fvproj::{FrontViewMap, ProjectionConfig};
pub use proposal::{AnchorPrior, Proposal3D};
pub use geom::{Box3D, ClassId, Point3, PointCloud, Stage1Class};
