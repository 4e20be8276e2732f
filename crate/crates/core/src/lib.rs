//! Intensity-distance guided (IDG) loss weight maps for airway segmentation.
//!
//! The crate turns a CT volume and its airway mask into per-voxel loss
//! weights that emphasise voxels near the airway tree and voxels whose
//! intensity is easily confused with the other class. It also evaluates the
//! weighted binary cross-entropy, scores segmentations (DSC, tree length and
//! branches detected), and generates synthetic bronchial phantoms.
//!
//! Modules:
//! - [`grid`]: volumes, masks, cropping, tiling, windowing
//! - [`volio`]: NIfTI-1 and raw+JSON volume files
//! - [`morphology`]: cube dilation, thinning, connected components
//! - [`distance`]: exact Euclidean distance transform and the distance weight map
//! - [`intensity`]: airway intensity model and the intensity weight map
//! - [`loss`]: BCE map, weight fusion, the IDG loss and the full weight pipeline
//! - [`metrics`]: DSC, tree length detected, branches detected, error histograms
//! - [`phantom`]: synthetic airway trees

pub mod distance;
pub mod error;
pub mod grid;
pub mod intensity;
pub mod loss;
pub mod metrics;
pub mod morphology;
pub mod phantom;
pub mod volio;

pub use error::{Error, ErrorClass, Result};
pub use grid::{BinaryMask3, GridShape, Volume3};
