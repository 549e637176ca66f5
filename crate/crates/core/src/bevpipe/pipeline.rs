use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::{bev_pool, fuse_bev, voxelize, BevEncoderSpec, BevGrid, ChannelInfo, ChannelKind, GridSpec, VoxelGrid, LIDAR_CHANNELS};
use super::lift::{camera_channels, estimate_depth_distribution, lift_camera_features_into, DepthBins, DepthMode};
use crate::error::{Error, Result};
use crate::scene::CameraModel;
use crate::sensors::{FeatureImage, PointCloud};

/// Which sensor branches feed the fused BEV map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorMode {
    #[serde(rename = "C")]
    Camera,
    #[serde(rename = "L")]
    Lidar,
    #[serde(rename = "C+L")]
    Fused,
}

impl SensorMode {
    pub fn uses_camera(self) -> bool {
        matches!(self, SensorMode::Camera | SensorMode::Fused)
    }

    pub fn uses_lidar(self) -> bool {
        matches!(self, SensorMode::Lidar | SensorMode::Fused)
    }

    pub fn label(self) -> &'static str {
        match self {
            SensorMode::Camera => "C",
            SensorMode::Lidar => "L",
            SensorMode::Fused => "C+L",
        }
    }
}

impl fmt::Display for SensorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SensorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" | "camera" => Ok(SensorMode::Camera),
            "L" | "l" | "lidar" => Ok(SensorMode::Lidar),
            "C+L" | "c+l" | "fused" => Ok(SensorMode::Fused),
            other => Err(Error::invalid("sensor mode", format!("{other:?} (expected C, L or C+L)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub depth_bins: usize,
    pub depth_near: f64,
    pub depth_far: f64,
    pub depth_mode: DepthMode,
    pub encoder: BevEncoderSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            depth_bins: 69,
            depth_near: 1.0,
            depth_far: 70.0,
            depth_mode: DepthMode::Oracle { tau: 0.5 },
            encoder: BevEncoderSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.depth_mode.validate()?;
        self.bins().map(|_| ())
    }

    pub fn bins(&self) -> Result<DepthBins> {
        DepthBins::uniform(self.depth_near, self.depth_far, self.depth_bins)
    }
}

/// One timestamp of raw (possibly degraded) sensor data.
#[derive(Debug, Clone, Copy)]
pub struct SensorFrame<'a> {
    pub cameras: &'a [CameraModel],
    pub images: &'a [FeatureImage],
    pub cloud: &'a PointCloud,
}

/// Camera branch: depth estimation and lifting for every camera into one
/// shared voxel grid, then vertical sum pooling.
pub fn camera_bev(cameras: &[CameraModel], images: &[FeatureImage], config: &PipelineConfig) -> Result<BevGrid> {
    config.validate()?;
    let bins = config.bins()?;
    let mut grid = VoxelGrid::zeros(config.grid.clone(), camera_channels());
    for image in images {
        let camera = cameras
            .iter()
            .find(|c| c.id == image.camera_id)
            .ok_or_else(|| Error::invalid("sensor frame", format!("no camera model for image {:?}", image.camera_id)))?;
        if image.shape() != (camera.height, camera.width) {
            return Err(Error::ShapeMismatch {
                expected: vec![camera.height, camera.width],
                actual: vec![image.shape().0, image.shape().1],
            });
        }
        let dist = estimate_depth_distribution(image, &bins, config.depth_mode)?;
        lift_camera_features_into(&mut grid, image, &dist, camera)?;
    }
    Ok(bev_pool(&grid))
}

/// LiDAR branch: voxelization then vertical sum pooling.
pub fn lidar_bev(cloud: &PointCloud, config: &PipelineConfig) -> Result<BevGrid> {
    config.grid.validate()?;
    Ok(bev_pool(&voxelize(cloud, &config.grid)))
}

pub fn empty_camera_bev(config: &PipelineConfig) -> BevGrid {
    BevGrid::zeros(config.grid.clone(), camera_channels())
}

pub fn empty_lidar_bev(config: &PipelineConfig) -> BevGrid {
    let channels = LIDAR_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, n)| ChannelInfo::new(*n, if i == 0 { ChannelKind::Occupancy } else { ChannelKind::Other }))
        .collect();
    BevGrid::zeros(config.grid.clone(), channels)
}

/// Full data path for `mode`. A branch the mode leaves out contributes
/// all-zero channels, so the fused channel layout never changes.
pub fn run_pipeline(frame: &SensorFrame<'_>, config: &PipelineConfig, mode: SensorMode) -> Result<BevGrid> {
    config.validate()?;
    let cam = if mode.uses_camera() {
        camera_bev(frame.cameras, frame.images, config)?
    } else {
        empty_camera_bev(config)
    };
    let lidar = if mode.uses_lidar() {
        lidar_bev(frame.cloud, config)?
    } else {
        empty_lidar_bev(config)
    };
    fuse_bev(&cam, &lidar, &config.encoder)
}
