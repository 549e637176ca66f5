//! Experiment driver: seeded scene batches, occlusion sweeps over sensor
//! modes, pooled evaluation and report emission.

pub mod cli;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bevpipe::{camera_bev, fuse_bev, lidar_bev, BevGrid, PipelineConfig, SensorMode};
use crate::degrade::{apply_camera_occlusion, lidar_dropout, CameraDegradeSpec, LidarDegradeSpec, MaskSource};
use crate::detect::{detect, Detection, DetectorParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, EvalResult, Frame};
use crate::scene::{generate_scene, ObjectBox, ObjectClass, Scene, SceneGenConfig};
use crate::seeds::{self, stream};
use crate::sensors::{render_cameras, render_lidar, FeatureImage, LidarRenderOptions, PointCloud};

pub use report::{emit_report, ReportFormat};

/// Which sensor a sweep row degrades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionTarget {
    None,
    Camera,
    Lidar,
}

impl OcclusionTarget {
    pub fn label(self) -> &'static str {
        match self {
            OcclusionTarget::None => "none",
            OcclusionTarget::Camera => "camera",
            OcclusionTarget::Lidar => "lidar",
        }
    }
}

impl fmt::Display for OcclusionTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for OcclusionTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OcclusionTarget::None),
            "camera" => Ok(OcclusionTarget::Camera),
            "lidar" => Ok(OcclusionTarget::Lidar),
            other => Err(Error::invalid("occlusion target", format!("{other:?}"))),
        }
    }
}

/// Camera soiling settings shared by every camera-occluded cell; the
/// coverage comes from the swept level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraDegradeConfig {
    /// Blur standard deviation in pixels. 1.44 px is 9 px at 1600 px image
    /// width scaled to the default 256 px.
    pub sigma: f64,
    pub blob_count: usize,
    /// Use this mask (resized per camera) instead of procedural masks. Any
    /// nonzero camera level then applies it.
    pub mask_file: Option<PathBuf>,
}

impl Default for CameraDegradeConfig {
    fn default() -> Self {
        Self {
            sigma: 1.44,
            blob_count: 4,
            mask_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_scenes: usize,
    pub master_seed: u64,
    pub scene: SceneGenConfig,
    pub lidar_render: LidarRenderOptions,
    pub pipeline: PipelineConfig,
    pub detector: DetectorParams,
    pub eval: EvalConfig,
    pub camera_degrade: CameraDegradeConfig,
    /// Soiling coverages swept for camera-occluded rows.
    pub camera_levels: Vec<f64>,
    /// Dropout ratios swept for LiDAR-occluded rows.
    pub lidar_levels: Vec<f64>,
    pub sensor_modes: Vec<SensorMode>,
    pub occlusion_targets: BTreeMap<SensorMode, Vec<OcclusionTarget>>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub formats: Vec<ReportFormat>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let occlusion_targets = BTreeMap::from([
            (SensorMode::Camera, vec![OcclusionTarget::Camera]),
            (SensorMode::Lidar, vec![OcclusionTarget::Lidar]),
            (SensorMode::Fused, vec![OcclusionTarget::Camera, OcclusionTarget::Lidar]),
        ]);
        Self {
            n_scenes: 100,
            master_seed: 2024,
            scene: SceneGenConfig::default(),
            lidar_render: LidarRenderOptions::default(),
            pipeline: PipelineConfig::default(),
            detector: DetectorParams::default(),
            eval: EvalConfig::default(),
            camera_degrade: CameraDegradeConfig::default(),
            camera_levels: vec![0.0, 0.5],
            lidar_levels: vec![0.0, 0.3, 0.6, 0.7, 0.8, 0.9],
            sensor_modes: vec![SensorMode::Camera, SensorMode::Lidar, SensorMode::Fused],
            occlusion_targets,
            output_dir: None,
            workers: 0,
            formats: ReportFormat::ALL.to_vec(),
        }
    }
}

fn check_levels(name: &str, levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("experiment config", format!("{name} is empty")));
    }
    if !levels.iter().all(|l| (0.0..=1.0).contains(l)) {
        return Err(Error::invalid("experiment config", format!("{name} must lie in [0, 1]")));
    }
    if !levels.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("experiment config", format!("{name} must be strictly ascending")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::invalid("experiment config", "n_scenes must be at least 1"));
        }
        self.scene.validate()?;
        self.pipeline.validate()?;
        self.detector.validate()?;
        self.eval.validate()?;
        check_levels("camera_levels", &self.camera_levels)?;
        check_levels("lidar_levels", &self.lidar_levels)?;
        if !(self.camera_degrade.sigma > 0.0 && self.camera_degrade.sigma.is_finite()) {
            return Err(Error::invalid("experiment config", "camera_degrade.sigma must be positive"));
        }
        if self.camera_degrade.blob_count == 0 && self.camera_degrade.mask_file.is_none() {
            return Err(Error::invalid("experiment config", "camera_degrade.blob_count must be at least 1"));
        }
        if self.sensor_modes.is_empty() {
            return Err(Error::invalid("experiment config", "sensor_modes is empty"));
        }
        for mode in &self.sensor_modes {
            for target in self.targets(*mode) {
                let ok = match target {
                    OcclusionTarget::None => true,
                    OcclusionTarget::Camera => mode.uses_camera(),
                    OcclusionTarget::Lidar => mode.uses_lidar(),
                };
                if !ok {
                    return Err(Error::invalid(
                        "experiment config",
                        format!("mode {mode} has no {target} branch to occlude"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn targets(&self, mode: SensorMode) -> Vec<OcclusionTarget> {
        self.occlusion_targets
            .get(&mode)
            .cloned()
            .unwrap_or_else(|| vec![OcclusionTarget::None])
    }

    /// Sweep cells in report order: modes as configured, then targets,
    /// then ascending severity.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &mode in &self.sensor_modes {
            for target in self.targets(mode) {
                let levels: &[f64] = match target {
                    OcclusionTarget::None => &[0.0],
                    OcclusionTarget::Camera => &self.camera_levels,
                    OcclusionTarget::Lidar => &self.lidar_levels,
                };
                for &severity in levels {
                    let cell = Cell { mode, target, severity };
                    if !cells.contains(&cell) {
                        cells.push(cell);
                    }
                }
            }
        }
        cells
    }

    /// Seed of scene `index`; independent of `n_scenes`.
    pub fn scene_seed(&self, index: usize) -> u64 {
        seeds::scene_seed(self.master_seed, index as u64)
    }

    pub fn camera_spec(&self, coverage: f64, scene_seed: u64, camera_index: usize) -> CameraDegradeSpec {
        let mask_source = match &self.camera_degrade.mask_file {
            Some(path) => MaskSource::File { path: path.clone() },
            None => MaskSource::Procedural {
                coverage,
                blob_count: self.camera_degrade.blob_count,
                seed: seeds::derive(scene_seed, stream::CAMERA_MASK_BASE + camera_index as u64),
            },
        };
        CameraDegradeSpec {
            sigma: self.camera_degrade.sigma,
            mask_source,
        }
    }

    pub fn lidar_spec(&self, r: f64, scene_seed: u64) -> LidarDegradeSpec {
        LidarDegradeSpec {
            r,
            seed: seeds::derive(scene_seed, stream::LIDAR_DROPOUT),
        }
    }
}

/// One (mode, occluded sensor, severity) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: SensorMode,
    pub target: OcclusionTarget,
    pub severity: f64,
}

impl Cell {
    fn camera_level(&self) -> f64 {
        if self.target == OcclusionTarget::Camera {
            self.severity
        } else {
            0.0
        }
    }

    fn lidar_level(&self) -> f64 {
        if self.target == OcclusionTarget::Lidar {
            self.severity
        } else {
            0.0
        }
    }

    /// Table-style label such as "C+L (L-occluded)".
    pub fn label(&self) -> String {
        let mode = self.mode.label();
        match (self.target, self.severity > 0.0) {
            (OcclusionTarget::None, _) | (_, false) => mode.to_string(),
            (target, true) => {
                let sensor = if target == OcclusionTarget::Camera { "C" } else { "L" };
                if self.mode == SensorMode::Fused {
                    format!("{mode} ({sensor}-occluded)")
                } else {
                    format!("{sensor}-occluded")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sensor_mode: SensorMode,
    pub occluded_sensor: OcclusionTarget,
    pub severity: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub nds: f64,
    /// Threshold-averaged AP per configured class; None when the class
    /// never occurs.
    pub class_ap: Vec<(ObjectClass, Option<f64>)>,
    pub scenes: usize,
    pub eval: EvalResult,
    /// Seconds spent on this cell (fusion, detection, evaluation). Not
    /// serialized, so reports stay byte-identical between runs.
    #[serde(skip)]
    pub wall_time: f64,
}

impl ReportRow {
    pub fn cell(&self) -> Cell {
        Cell {
            mode: self.sensor_mode,
            target: self.occluded_sensor,
            severity: self.severity,
        }
    }
}

/// Rendered sensors of one scene.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub scene: Scene,
    pub images: Vec<FeatureImage>,
    pub cloud: PointCloud,
}

pub fn render_scene(config: &ExperimentConfig, index: usize) -> Result<RenderedScene> {
    let seed = config.scene_seed(index);
    let scene = generate_scene(&config.scene, seed)?;
    let images = render_cameras(&scene);
    let cloud = render_lidar(&scene, seeds::derive(seed, stream::LIDAR_RENDER), &config.lidar_render);
    Ok(RenderedScene { scene, images, cloud })
}

/// Soils every camera of a scene independently; coverage 0 returns the
/// clean images untouched.
pub fn degrade_cameras(config: &ExperimentConfig, scene_seed: u64, images: &[FeatureImage], coverage: f64) -> Result<Vec<FeatureImage>> {
    if coverage == 0.0 {
        return Ok(images.to_vec());
    }
    images
        .iter()
        .enumerate()
        .map(|(i, image)| {
            let spec = config.camera_spec(coverage, scene_seed, i);
            let mask = spec.mask(image.shape())?;
            apply_camera_occlusion(image, &mask, spec.sigma)
        })
        .collect()
}

struct SceneOutcome {
    gts: Vec<ObjectBox>,
    /// Detections per cell, in `cells` order.
    dets: Vec<Vec<Detection>>,
    cell_time: Vec<f64>,
}

fn run_scene(config: &ExperimentConfig, cells: &[Cell], index: usize) -> Result<SceneOutcome> {
    let seed = config.scene_seed(index);
    let rendered = render_scene(config, index)?;
    let cameras = &rendered.scene.rig.cameras;
    let pipeline: &PipelineConfig = &config.pipeline;

    // each branch variant is computed once and shared between cells
    let mut cam_cache: Vec<(f64, BevGrid)> = Vec::new();
    let mut lidar_cache: Vec<(f64, BevGrid)> = Vec::new();
    let empty_cam = crate::bevpipe::empty_camera_bev(pipeline);
    let empty_lidar = crate::bevpipe::empty_lidar_bev(pipeline);

    let mut dets = Vec::with_capacity(cells.len());
    let mut cell_time = Vec::with_capacity(cells.len());
    for cell in cells {
        let start = Instant::now();
        if cell.mode.uses_camera() && !cam_cache.iter().any(|c| c.0 == cell.camera_level()) {
            let images = degrade_cameras(config, seed, &rendered.images, cell.camera_level())?;
            cam_cache.push((cell.camera_level(), camera_bev(cameras, &images, pipeline)?));
        }
        if cell.mode.uses_lidar() && !lidar_cache.iter().any(|c| c.0 == cell.lidar_level()) {
            let cloud = lidar_dropout(&rendered.cloud, &config.lidar_spec(cell.lidar_level(), seed))?;
            lidar_cache.push((cell.lidar_level(), lidar_bev(&cloud, pipeline)?));
        }
        let cam = if cell.mode.uses_camera() {
            &cam_cache.iter().find(|c| c.0 == cell.camera_level()).expect("cached").1
        } else {
            &empty_cam
        };
        let lidar = if cell.mode.uses_lidar() {
            &lidar_cache.iter().find(|c| c.0 == cell.lidar_level()).expect("cached").1
        } else {
            &empty_lidar
        };
        let fused = fuse_bev(cam, lidar, &pipeline.encoder)?;
        dets.push(detect(&fused, &config.detector)?);
        cell_time.push(start.elapsed().as_secs_f64());
    }
    Ok(SceneOutcome {
        gts: rendered.scene.objects,
        dets,
        cell_time,
    })
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs every sweep cell over `n_scenes` scenes. Scenes run in parallel;
/// results are gathered in scene order, so rows do not depend on the
/// worker count.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let cells = config.cells();
    let outcomes: Vec<SceneOutcome> = with_pool(config.workers, || {
        (0..config.n_scenes)
            .into_par_iter()
            .map(|i| {
                run_scene(config, &cells, i).map_err(|e| Error::Scene {
                    index: i,
                    seed: config.scene_seed(i),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    cells
        .iter()
        .enumerate()
        .map(|(ci, cell)| {
            let start = Instant::now();
            let frames: Vec<Frame<'_>> = outcomes
                .iter()
                .map(|o| Frame {
                    dets: &o.dets[ci],
                    gts: &o.gts,
                })
                .collect();
            let eval = evaluate(&frames, &config.eval)?;
            let scene_time: f64 = outcomes.iter().map(|o| o.cell_time[ci]).sum();
            Ok(ReportRow {
                sensor_mode: cell.mode,
                occluded_sensor: cell.target,
                severity: cell.severity,
                map: eval.map,
                nds: eval.nds,
                class_ap: config.eval.classes.iter().map(|c| (*c, eval.class_ap(*c))).collect(),
                scenes: config.n_scenes,
                eval,
                wall_time: scene_time + start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}
