//! Skin/non-skin segmentation of 3D head scans.
//!
//! The pipeline lifts per-pixel image features from calibrated multi-view
//! images onto scan-mesh vertices (projection, z-buffer visibility,
//! visibility-weighted fusion), combines them with intrinsic geometric
//! descriptors (heat kernel signature, surface variation), and feeds the
//! result to a learned-diffusion mesh segmenter trained with cross-entropy
//! on procedurally generated labeled scans.
//!
//! Modules:
//! - [`mesh`], [`meshio`]: triangle meshes, OBJ/PLY I/O
//! - [`sparse`], [`laplace`], [`chol`]: sparse operators, cotangent
//!   Laplacian, lumped mass, LDL^T factorization
//! - [`spectral`]: truncated generalized eigenbasis and heat diffusion
//! - [`geomfeat`], [`knn`]: heat kernel signature and surface variation
//! - [`camera`], [`raster`], [`mview`]: pinhole projection, software
//!   rasterization, visibility, multi-view feature fusion
//! - [`featio`]: feature-map tensor format, images, handcrafted features
//! - [`diffnet`]: the learned-diffusion segmentation network and trainer
//! - [`dist`], [`synthgen`]: point-to-surface distance, procedural data
//! - [`segpipe`]: end-to-end orchestration, metrics, ablation grids
//! - [`shapes`]: primitive mesh generators

pub mod error;
pub mod mesh;
pub mod meshio;
pub mod sparse;
pub mod laplace;
pub mod chol;
pub mod shapes;
pub mod spectral;
pub mod knn;
pub mod geomfeat;
pub mod camera;
pub mod raster;
pub mod featio;
pub mod mview;
pub mod dist;
pub mod synthgen;
pub mod diffnet;
pub mod segpipe;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use mesh::TriMesh;
pub use sparse::SparseOperator;
