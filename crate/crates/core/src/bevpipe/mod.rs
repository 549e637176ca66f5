//! Camera + LiDAR to bird's-eye-view data path.
//!
//! LiDAR: [`voxelize`] → [`bev_pool`]. Camera: [`estimate_depth_distribution`]
//! → [`lift_camera_features`] → [`bev_pool`]. Both BEV maps are then
//! concatenated and smoothed by [`fuse_bev`]. [`run_pipeline`] composes the
//! whole chain for one sensor configuration.

mod grid;
mod lift;
mod pipeline;

pub use grid::{
    bev_pool, fuse_bev, voxelize, BevEncoderSpec, BevGrid, ChannelInfo, ChannelKind, GridSpec, VoxelGrid,
    LIDAR_CHANNELS,
};
pub use lift::{
    estimate_depth_distribution, lift_camera_features, lift_camera_features_into, feature_mass, DepthBins, DepthDistribution,
    DepthMode,
};
pub use pipeline::{camera_bev, empty_camera_bev, empty_lidar_bev, lidar_bev, run_pipeline, PipelineConfig, SensorFrame, SensorMode};
