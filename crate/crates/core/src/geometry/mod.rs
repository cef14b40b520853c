//! Camera projection, point-feature rasterization and patch pooling.

mod camera;
mod patch;
mod raster;

pub use camera::{parse_calibration, CameraModel, Projection, DEPTH_EPSILON};
pub use patch::{patchify_mean, PatchGrid};
pub use raster::{rasterize_features, FeatureGrid, RasterPlan};
