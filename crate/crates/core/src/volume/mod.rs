//! Volumes, geometry and NIfTI-1 I/O shared by every other module.

pub mod geometry;
pub mod image;
pub mod label;
pub mod nifti;

pub use geometry::{AxisDirection, AxisMap, Geometry, Orientation};
pub use image::{reorient_to_canonical, voxel_volume_ml, ImageVolume, IntensityUnit, Modality};
pub use label::{organ, LabelId, LabelSchema, LabelVolume, BACKGROUND, LESION};
pub use nifti::{read_labels, read_volume, write_volume, NiftiVolume};
