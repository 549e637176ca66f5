//! On-disk sensor formats.
//!
//! Point clouds: `<name>.bin` holds a little-endian header (magic `BVPC`,
//! version `u32`, count `u64`) followed by `count` records of four `f32`
//! (x, y, z, intensity). Per-point tags go to a JSON sidecar `<name>.tags.json`.
//!
//! Feature images: `<dir>/<camera_id>.features.npy` (`<f8`, shape H×W×C) and
//! `<dir>/<camera_id>.depth.npy` (`<f8`, shape H×W).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use ndarray::{Array2, Array3};
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};

use super::{FeatureImage, LidarPoint, PointCloud, PointTag};
use crate::error::{Error, Result};

pub const POINT_CLOUD_MAGIC: &[u8; 4] = b"BVPC";
pub const POINT_CLOUD_VERSION: u32 = 1;
const TAGS_FORMAT: &str = "bevbench-point-tags/1";

#[derive(Serialize, Deserialize)]
struct TagSidecar {
    format: String,
    tags: Vec<PointTag>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("tags.json")
}

pub fn write_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(POINT_CLOUD_MAGIC)?;
    write(&POINT_CLOUD_VERSION.to_le_bytes())?;
    write(&(cloud.len() as u64).to_le_bytes())?;
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.intensity] {
            write(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = TagSidecar {
        format: TAGS_FORMAT.to_string(),
        tags: cloud.points.iter().map(|p| p.tag).collect(),
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec(&sidecar).expect("tags serialize"))
        .map_err(|e| Error::io(side, e))
}

/// Reads a `BVPC` file. The tag sidecar is optional; missing tags read as
/// [`PointTag::None`].
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::format(path, format!("truncated header: {e}")))?;
    if &header[..4] != POINT_CLOUD_MAGIC {
        return Err(Error::format(path, "bad magic, expected BVPC"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != POINT_CLOUD_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != count * 16 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", count * 16, body.len()),
        ));
    }

    let side = sidecar_path(path);
    let tags = if side.exists() {
        let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: TagSidecar = serde_json::from_slice(&text).map_err(|e| Error::format(&side, e))?;
        if sidecar.tags.len() != count {
            return Err(Error::format(&side, "tag count does not match point count"));
        }
        sidecar.tags
    } else {
        vec![PointTag::None; count]
    };

    let points = body
        .chunks_exact(16)
        .zip(tags)
        .map(|(rec, tag)| {
            let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
            LidarPoint {
                position: Point3::new(f(0), f(1), f(2)),
                intensity: f(3),
                tag,
            }
        })
        .collect();
    Ok(PointCloud { points })
}

fn image_paths(dir: &Path, camera_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{camera_id}.features.npy")),
        dir.join(format!("{camera_id}.depth.npy")),
    )
}

pub fn write_feature_image(image: &FeatureImage, dir: &Path) -> Result<()> {
    let (features, depth) = image_paths(dir, &image.camera_id);
    let write = |path: &Path, f: &dyn Fn(BufWriter<File>) -> std::result::Result<(), ndarray_npy::WriteNpyError>| {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        f(BufWriter::new(file)).map_err(|e| Error::format(path, e))
    };
    write(&features, &|w| image.grid.write_npy(w))?;
    write(&depth, &|w| image.depth.write_npy(w))
}

pub fn read_feature_image(dir: &Path, camera_id: &str) -> Result<FeatureImage> {
    let (features, depth) = image_paths(dir, camera_id);
    let open = |path: &Path| File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e));
    let grid = Array3::<f64>::read_npy(open(&features)?).map_err(|e| Error::format(&features, e))?;
    let depth_arr = Array2::<f64>::read_npy(open(&depth)?).map_err(|e| Error::format(&depth, e))?;
    if grid.shape()[..2] != depth_arr.shape()[..] || grid.shape()[2] != FeatureImage::channels() {
        return Err(Error::format(&features, "feature/depth shapes disagree"));
    }
    Ok(FeatureImage {
        camera_id: camera_id.to_string(),
        grid,
        depth: depth_arr,
    })
}
