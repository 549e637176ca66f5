//! Command-line front end. Exit codes: 0 success, 1 configuration or usage
//! error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::report::{emit_report, write_manifest, write_timings};
use super::{degrade_cameras, run_sweep, CameraDegradeConfig, ExperimentConfig};
use crate::bevpipe::{run_pipeline, SensorFrame, SensorMode};
use crate::degrade::lidar_dropout;
use crate::detect::{detect, DetectionFile};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Frame};
use crate::scene::{generate_scene, Scene};
use crate::seeds::{self, stream};
use crate::sensors::{
    read_feature_image, read_point_cloud, render_cameras, render_lidar, write_feature_image, write_point_cloud,
    FeatureImage, PointCloud,
};

#[derive(Debug, Parser)]
#[command(name = "bevbench", version, about = "Camera/LiDAR occlusion benchmark for BEV fusion detection")]
struct Cli {
    /// Master seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scenes as JSON
    Gen {
        /// Number of scenes (default: n_scenes from the config)
        #[arg(long)]
        count: Option<usize>,
    },
    /// Render the sensors of one scene
    Render {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Degrade rendered sensor files
    Degrade(DegradeArgs),
    /// Run the BEV pipeline and detector on rendered sensor files
    Detect {
        /// Directory written by `render` or `degrade`
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "C+L")]
        mode: SensorMode,
    },
    /// Score detections against scenes (pairs are pooled)
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        scene: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        dets: Vec<PathBuf>,
        /// Include the precision/recall curves in eval.json
        #[arg(long)]
        dump_pr: bool,
    },
    /// Run the configured occlusion sweep and write reports
    Sweep {
        /// Worker threads (overrides the config; 0 = all cores)
        #[arg(long)]
        workers: Option<usize>,
        /// Number of scenes (overrides the config)
        #[arg(long)]
        scenes: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct DegradeArgs {
    /// Directory written by `render`
    #[arg(long)]
    input: PathBuf,
    /// Soiling coverage per camera
    #[arg(long, default_value_t = 0.0)]
    camera_coverage: f64,
    /// Soiling blur sigma in pixels (default from the config)
    #[arg(long)]
    camera_sigma: Option<f64>,
    /// Binary mask image (PNG/PGM, nonzero = occluded) used for every camera
    #[arg(long)]
    camera_mask: Option<PathBuf>,
    /// LiDAR point dropout ratio
    #[arg(long, default_value_t = 0.0)]
    lidar_drop: f64,
}

const SCENE_FILE: &str = "scene.json";
const CLOUD_FILE: &str = "lidar.bin";
const CAMERA_DIR: &str = "cameras";

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            // an unreadable config is a configuration problem, not a runtime one
            Error::Io { path, source } => Error::format(&path, format!("cannot read config: {source}")),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: &ExperimentConfig, fallback: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct SensorDir {
    scene: Scene,
    images: Vec<FeatureImage>,
    cloud: PointCloud,
}

fn write_sensor_dir(dir: &Path, scene: &Scene, images: &[FeatureImage], cloud: &PointCloud) -> Result<()> {
    let cams = dir.join(CAMERA_DIR);
    create_dir(&cams)?;
    scene.save(&dir.join(SCENE_FILE))?;
    write_point_cloud(cloud, &dir.join(CLOUD_FILE))?;
    for image in images {
        write_feature_image(image, &cams)?;
    }
    Ok(())
}

fn read_sensor_dir(dir: &Path) -> Result<SensorDir> {
    let scene = Scene::load(&dir.join(SCENE_FILE))?;
    let cams = dir.join(CAMERA_DIR);
    let images = scene
        .rig
        .cameras
        .iter()
        .map(|c| read_feature_image(&cams, &c.id))
        .collect::<Result<Vec<_>>>()?;
    let cloud = read_point_cloud(&dir.join(CLOUD_FILE))?;
    Ok(SensorDir { scene, images, cloud })
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Gen { count } => {
            let dir = out_dir(&cli, &config, "scenes");
            create_dir(&dir)?;
            let n = count.unwrap_or(config.n_scenes);
            for i in 0..n {
                let scene = generate_scene(&config.scene, config.scene_seed(i))?;
                scene.save(&dir.join(format!("scene_{i:04}.json")))?;
            }
            println!("wrote {n} scenes to {}", dir.display());
        }
        Command::Render { scene } => {
            let scene = Scene::load(scene)?;
            let dir = out_dir(&cli, &config, &scene.scene_id);
            let images = render_cameras(&scene);
            let seed = cli.seed.unwrap_or(scene.seed);
            let cloud = render_lidar(&scene, seeds::derive(seed, stream::LIDAR_RENDER), &config.lidar_render);
            write_sensor_dir(&dir, &scene, &images, &cloud)?;
            println!("rendered {} points, {} cameras to {}", cloud.len(), images.len(), dir.display());
        }
        Command::Degrade(args) => {
            let input = read_sensor_dir(&args.input)?;
            let dir = out_dir(&cli, &config, "degraded");
            let seed = cli.seed.unwrap_or(input.scene.seed);
            let mut degrade_config = config.clone();
            degrade_config.camera_degrade = CameraDegradeConfig {
                sigma: args.camera_sigma.unwrap_or(config.camera_degrade.sigma),
                blob_count: config.camera_degrade.blob_count,
                mask_file: args.camera_mask.clone().or(config.camera_degrade.mask_file.clone()),
            };
            // a mask file alone means "apply it"
            let coverage = if args.camera_mask.is_some() && args.camera_coverage == 0.0 {
                1.0
            } else {
                args.camera_coverage
            };
            if !(0.0..=1.0).contains(&coverage) {
                return Err(Error::invalid("--camera-coverage", "must lie in [0, 1]"));
            }
            let images = degrade_cameras(&degrade_config, seed, &input.images, coverage)?;
            let cloud = lidar_dropout(&input.cloud, &degrade_config.lidar_spec(args.lidar_drop, seed))?;
            write_sensor_dir(&dir, &input.scene, &images, &cloud)?;
            println!(
                "kept {} of {} points; soiled {} cameras; wrote {}",
                cloud.len(),
                input.cloud.len(),
                if coverage > 0.0 { images.len() } else { 0 },
                dir.display()
            );
        }
        Command::Detect { input, mode } => {
            let sensors = read_sensor_dir(input)?;
            let frame = SensorFrame {
                cameras: &sensors.scene.rig.cameras,
                images: &sensors.images,
                cloud: &sensors.cloud,
            };
            let bev = run_pipeline(&frame, &config.pipeline, *mode)?;
            let dets = detect(&bev, &config.detector)?;
            let dir = out_dir(&cli, &config, ".");
            create_dir(&dir)?;
            let path = dir.join("detections.json");
            let n = dets.len();
            DetectionFile::new(sensors.scene.scene_id.clone(), dets).save(&path)?;
            println!("{n} detections written to {}", path.display());
        }
        Command::Eval { scene, dets, dump_pr } => {
            if scene.len() != dets.len() {
                return Err(Error::invalid("eval", "--scene and --dets need the same number of paths"));
            }
            let scenes = scene.iter().map(|p| Scene::load(p)).collect::<Result<Vec<_>>>()?;
            let files = dets.iter().map(|p| DetectionFile::load(p)).collect::<Result<Vec<_>>>()?;
            let frames: Vec<Frame<'_>> = scenes
                .iter()
                .zip(&files)
                .map(|(s, d)| Frame {
                    dets: &d.detections,
                    gts: &s.objects,
                })
                .collect();
            let mut eval_config = config.eval.clone();
            eval_config.keep_pr_curves |= *dump_pr;
            let result = evaluate(&frames, &eval_config)?;
            println!("mAP={:.4} NDS={:.4}", result.map, result.nds);
            if result.no_gt {
                println!("note: no ground-truth objects; mAP and NDS reported as 0");
            }
            if let Some(dir) = &cli.out {
                create_dir(dir)?;
                let path = dir.join("eval.json");
                let text = serde_json::to_string_pretty(&result).expect("eval result serializes");
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Sweep { workers, scenes } => {
            let mut config = config.clone();
            if let Some(w) = workers {
                config.workers = *w;
            }
            if let Some(n) = scenes {
                config.n_scenes = *n;
            }
            let dir = out_dir(&cli, &config, "bevbench-out");
            let rows = run_sweep(&config)?;
            let files = emit_report(&rows, &config.formats, &dir)?;
            write_manifest(&config, cli.config.as_deref(), &files, &dir)?;
            write_timings(&rows, &dir)?;
            for r in &rows {
                println!(
                    "{:<18} {:<7} {:>5}  mAP={:.4} NDS={:.4}  ({:.1}s)",
                    r.cell().label(),
                    r.occluded_sensor.label(),
                    r.severity,
                    r.map,
                    r.nds,
                    r.wall_time
                );
            }
            println!("reports written to {}", dir.display());
        }
    }
    Ok(())
}
