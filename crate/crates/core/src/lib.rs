//! Map-guided superpixel segmentation for hyperspectral imagery.
//!
//! The pipeline has three stages:
//!
//! 1. [`hslic`]: SLIC run directly on full spectra, followed by
//!    [`mapalign`], which aligns map polygons to the image with an affine
//!    transform and merges every superpixel overlapping a common polygon.
//! 2. [`spmlda`]: partial-membership unmixing with the stage 1 superpixels
//!    as documents and polygon classes as partial labels, producing
//!    per-pixel endmember proportions.
//! 3. [`finalseg`]: k-means on the proportion vectors, connected-component
//!    relabeling and small-segment cleanup.
//!
//! [`validity`] scores any segmentation with the Dunn, Davies-Bouldin and
//! Silhouette indices, and [`pipeline`] wires the stages together.

pub mod cube;
pub mod error;
pub mod finalseg;
pub mod hslic;
pub mod hsio;
pub mod kmeans;
pub mod labels;
pub mod mapalign;
pub mod pipeline;
pub mod spmlda;
pub mod synthetic;
pub mod validity;

pub use cube::HsiCube;
pub use error::{Error, Result};
pub use hslic::{ClusterCenter, HslicParams, HslicResult};
pub use hsio::{ControlPoint, ControlPoints, Interleave, MapPolygon, PolygonSet};
pub use labels::{Connectivity, LabelMap};
pub use mapalign::{AffineFit, AffineTransform, MergeResult, PolygonMask};
pub use pipeline::{MapGuidance, PipelineConfig, PipelineOutput};
pub use spmlda::{Endmember, PartialLabelSet, ProportionMap, SamplerParams};
pub use validity::{IndexOptions, RunIndices, ValidityReport};
