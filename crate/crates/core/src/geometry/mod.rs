//! Camera attitude, horizon line estimation and sky masks.
//!
//! Conventions: the camera looks along `+z` with `+x` right and `+y` down.
//! The level (UAV) frame uses the same axes for a level, forward-looking
//! camera, so "up" is `(0, -1, 0)` and zero-elevation directions have `y = 0`.

mod camera;
mod horizon;
mod sky;

pub use camera::{
    attitude_rotation, read_camera_config, read_imu_csv, write_camera_config, write_imu_csv, CameraModel, ImuSample,
    ImuStream, IMU_MATCH_TOLERANCE_NS,
};
pub use horizon::{above_horizon_mask, estimate_horizon, exact_horizon, HorizonEstimate, HorizonLine, FAN_RAYS};
pub use sky::{
    heuristic_sky_mask, otsu_threshold, refine_sky_mask, FnSky, HeuristicSky, MaskDirSky, SkyProvider, SkyRefinement,
};
