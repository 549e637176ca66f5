use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::grid::{ChannelInfo, ChannelKind, GridSpec, VoxelGrid};
use crate::error::{Error, Result};
use crate::scene::{CameraModel, ObjectClass};
use crate::sensors::FeatureImage;

/// Depth bin edges along the optical axis, meters, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBins {
    pub edges: Vec<f64>,
}

impl DepthBins {
    /// `count` equal-width bins on `[near, far]`.
    pub fn uniform(near: f64, far: f64, count: usize) -> Result<Self> {
        if count == 0 || !(near >= 0.0 && near < far && far.is_finite()) {
            return Err(Error::invalid(
                "depth bins",
                format!("need count >= 1 and 0 <= near < far (got {count}, {near}, {far})"),
            ));
        }
        let step = (far - near) / count as f64;
        let mut edges: Vec<f64> = (0..count).map(|i| near + step * i as f64).collect();
        edges.push(far);
        Ok(Self { edges })
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 || self.edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("depth bins", "edges must be strictly increasing, >= 2 of them"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DepthMode {
    /// Every occupied pixel spreads evenly over all bins.
    Uniform,
    /// Gaussian of width `tau` (meters) around the rendered depth, evaluated
    /// at the bin centers and normalized.
    Oracle { tau: f64 },
}

impl DepthMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            DepthMode::Uniform => Ok(()),
            DepthMode::Oracle { tau } if *tau > 0.0 && tau.is_finite() => Ok(()),
            DepthMode::Oracle { tau } => Err(Error::invalid("depth mode", format!("oracle tau {tau} must be positive"))),
        }
    }
}

/// Per-pixel categorical distribution over depth bins, (H, W, D).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    pub bins: DepthBins,
    pub probs: Array3<f64>,
}

/// Depth distribution for every pixel whose occupancy is positive; other
/// pixels get an all-zero row. In oracle mode a pixel that carries features
/// but no rendered depth (soiling can spread features into empty pixels)
/// falls back to the uniform distribution.
pub fn estimate_depth_distribution(image: &FeatureImage, bins: &DepthBins, mode: DepthMode) -> Result<DepthDistribution> {
    bins.validate()?;
    mode.validate()?;
    let (h, w) = image.shape();
    let d = bins.len();
    let centers = bins.centers();
    let occ = FeatureImage::occupancy_channel();
    let mut probs = Array3::zeros((h, w, d));
    let uniform = 1.0 / d as f64;

    for r in 0..h {
        for c in 0..w {
            if !(image.grid[(r, c, occ)] > 0.0) {
                continue;
            }
            let mut row = probs.slice_mut(s![r, c, ..]);
            let depth = image.depth[(r, c)];
            match mode {
                DepthMode::Oracle { tau } if depth > 0.0 => {
                    let logs: Vec<f64> = centers
                        .iter()
                        .map(|m| -(m - depth) * (m - depth) / (2.0 * tau * tau))
                        .collect();
                    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    for (p, wgt) in row.iter_mut().zip(&weights) {
                        *p = wgt / total;
                    }
                }
                _ => row.fill(uniform),
            }
        }
    }
    Ok(DepthDistribution { bins: bins.clone(), probs })
}

/// Voxel channel layout of lifted camera features.
pub(crate) fn camera_channels() -> Vec<ChannelInfo> {
    FeatureImage::channel_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let kind = match ObjectClass::from_index(i) {
                Some(class) => ChannelKind::Class(class),
                None => ChannelKind::Occupancy,
            };
            ChannelInfo::new(format!("cam_{name}"), kind)
        })
        .collect()
}

/// Scatters `p_d · f(u, v)` into the voxel holding the bin-center point on
/// the ray through every pixel, adding to whatever `grid` already holds.
pub fn lift_camera_features_into(
    grid: &mut VoxelGrid,
    image: &FeatureImage,
    dist: &DepthDistribution,
    camera: &CameraModel,
) -> Result<()> {
    let (h, w) = image.shape();
    if dist.probs.dim().0 != h || dist.probs.dim().1 != w {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: dist.probs.shape()[..2].to_vec(),
        });
    }
    let channels = image.grid.dim().2;
    if grid.channels.len() != channels {
        return Err(Error::ShapeMismatch {
            expected: vec![channels],
            actual: vec![grid.channels.len()],
        });
    }
    let cam_to_ego = camera.pose.inverse();
    let origin = cam_to_ego.translation;
    let centers = dist.bins.centers();
    let spec = grid.spec.clone();

    for r in 0..h {
        for c in 0..w {
            let probs = dist.probs.slice(s![r, c, ..]);
            if probs.iter().all(|p| *p == 0.0) {
                continue;
            }
            let feature = image.grid.slice(s![r, c, ..]);
            let dir = cam_to_ego.apply_vector(&camera.pixel_ray(r, c));
            for (p, depth) in probs.iter().zip(&centers) {
                if *p == 0.0 {
                    continue;
                }
                let point = nalgebra::Point3::from(origin + dir * *depth);
                let Some((i, j, k)) = spec.voxel_index(&point) else {
                    continue;
                };
                let mut cell = grid.data.slice_mut(s![i, j, k, ..]);
                for (acc, f) in cell.iter_mut().zip(feature.iter()) {
                    *acc += p * f;
                }
            }
        }
    }
    Ok(())
}

/// Lifts one camera into a fresh voxel grid.
pub fn lift_camera_features(
    image: &FeatureImage,
    dist: &DepthDistribution,
    camera: &CameraModel,
    spec: &GridSpec,
) -> Result<VoxelGrid> {
    let mut grid = VoxelGrid::zeros(spec.clone(), camera_channels());
    lift_camera_features_into(&mut grid, image, dist, camera)?;
    Ok(grid)
}

/// Σ over pixels of Σ over channels of the image features.
pub fn feature_mass(image: &FeatureImage) -> f64 {
    image.grid.sum_axis(Axis(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bevpipe::bev_pool;
    use crate::scene::RigidTransform;
    use nalgebra::{Matrix3, Point3, Vector3};
    use ndarray::Array2;

    fn one_pixel_image(h: usize, w: usize, at: (usize, usize), depth: f64, class: ObjectClass) -> FeatureImage {
        let mut img = FeatureImage::zeros("cam", h, w);
        img.grid[(at.0, at.1, class.index())] = 1.0;
        img.grid[(at.0, at.1, FeatureImage::occupancy_channel())] = 1.0;
        img.depth[at] = depth;
        img
    }

    /// Forward-looking camera at the origin (camera z = ego x).
    fn camera(h: usize, w: usize) -> CameraModel {
        CameraModel {
            id: "cam".into(),
            fx: 10.0,
            fy: 10.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            height: h,
            width: w,
            pose: RigidTransform::new(
                Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
                Vector3::zeros(),
            )
            .unwrap(),
        }
    }

    fn spec() -> GridSpec {
        GridSpec {
            x_range: [0.0, 40.0],
            y_range: [-10.0, 10.0],
            z_range: [-5.0, 5.0],
            resolution: [1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn uniform_mode() {
        let img = one_pixel_image(4, 4, (1, 2), 7.0, ObjectClass::Car);
        let bins = DepthBins::uniform(0.0, 40.0, 4).unwrap();
        let dist = estimate_depth_distribution(&img, &bins, DepthMode::Uniform).unwrap();
        assert_eq!(dist.probs.slice(s![1, 2, ..]).to_vec(), vec![0.25; 4]);
        assert_eq!(dist.probs.sum(), 1.0);
    }

    #[test]
    fn oracle_with_tiny_tau_is_one_hot() {
        let img = one_pixel_image(4, 4, (0, 0), 17.0, ObjectClass::Car);
        let bins = DepthBins::uniform(0.0, 40.0, 8).unwrap();
        let dist = estimate_depth_distribution(&img, &bins, DepthMode::Oracle { tau: 1e-6 }).unwrap();
        let row = dist.probs.slice(s![0, 0, ..]).to_vec();
        let mut expected = vec![0.0; 8];
        expected[3] = 1.0;
        assert_eq!(row, expected);
    }

    #[test]
    fn oracle_matches_hand_normalized_gaussian() {
        let img = one_pixel_image(2, 2, (1, 1), 10.0, ObjectClass::Truck);
        let bins = DepthBins::uniform(0.0, 40.0, 8).unwrap();
        let dist = estimate_depth_distribution(&img, &bins, DepthMode::Oracle { tau: 2.0 }).unwrap();
        let centers = [2.5, 7.5, 12.5, 17.5, 22.5, 27.5, 32.5, 37.5];
        let raw: Vec<f64> = centers.iter().map(|c: &f64| (-(c - 10.0).powi(2) / 8.0).exp()).collect();
        let z: f64 = raw.iter().sum();
        for (k, r) in raw.iter().enumerate() {
            assert!((dist.probs[(1, 1, k)] - r / z).abs() < 1e-9);
        }
        assert!((dist.probs.slice(s![1, 1, ..]).sum() - 1.0).abs() < 1e-9);
        assert!(dist.probs.slice(s![0, 0, ..]).iter().all(|p| *p == 0.0));
    }

    #[test]
    fn oracle_without_depth_falls_back_to_uniform() {
        let mut img = one_pixel_image(2, 2, (0, 1), 10.0, ObjectClass::Car);
        img.depth[(0, 1)] = 0.0;
        let bins = DepthBins::uniform(1.0, 41.0, 4).unwrap();
        let dist = estimate_depth_distribution(&img, &bins, DepthMode::Oracle { tau: 1.0 }).unwrap();
        assert_eq!(dist.probs.slice(s![0, 1, ..]).to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn invalid_modes_and_bins() {
        let img = FeatureImage::zeros("c", 2, 2);
        let bins = DepthBins::uniform(0.0, 10.0, 2).unwrap();
        assert!(estimate_depth_distribution(&img, &bins, DepthMode::Oracle { tau: 0.0 }).is_err());
        assert!(DepthBins::uniform(5.0, 1.0, 3).is_err());
        assert!(DepthBins { edges: vec![1.0, 1.0] }.validate().is_err());
    }

    #[test]
    fn zero_image_lifts_to_zero_grid() {
        let img = FeatureImage::zeros("cam", 4, 4);
        let bins = DepthBins::uniform(1.0, 30.0, 4).unwrap();
        let dist = estimate_depth_distribution(&img, &bins, DepthMode::Uniform).unwrap();
        let grid = lift_camera_features(&img, &dist, &camera(4, 4), &spec()).unwrap();
        assert!(grid.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_hot_depth_scatters_into_a_single_voxel() {
        let img = one_pixel_image(4, 4, (1, 1), 12.0, ObjectClass::Pedestrian);
        let bins = DepthBins::uniform(0.0, 40.0, 8).unwrap();
        let mut dist = estimate_depth_distribution(&img, &bins, DepthMode::Uniform).unwrap();
        dist.probs.fill(0.0);
        dist.probs[(1, 1, 2)] = 1.0;
        let grid = lift_camera_features(&img, &dist, &camera(4, 4), &spec()).unwrap();
        let nonzero: Vec<_> = grid
            .data
            .indexed_iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        // car channel and occupancy of one voxel
        assert_eq!(nonzero.len(), 2);
        let (i, j, k, _) = nonzero[0].0;
        assert!(nonzero.iter().all(|((a, b, c, _), v)| (*a, *b, *c) == (i, j, k) && *v == 1.0));
        // ray through pixel (1, 1) at depth 12.5: camera x = (1.5 - 2) / 10 * 12.5
        let p = Point3::new(12.5, 0.625, 0.625);
        assert_eq!(spec().voxel_index(&p), Some((i, j, k)));
    }

    #[test]
    fn uniform_lift_conserves_mass_in_four_voxels() {
        let img = one_pixel_image(4, 4, (2, 2), 12.0, ObjectClass::Car);
        let bins = DepthBins::uniform(0.0, 40.0, 4).unwrap();
        let dist = estimate_depth_distribution(&img, &bins, DepthMode::Uniform).unwrap();
        let grid = lift_camera_features(&img, &dist, &camera(4, 4), &spec()).unwrap();
        let occ = FeatureImage::occupancy_channel();
        let cells: Vec<f64> = grid
            .data
            .index_axis(Axis(3), occ)
            .iter()
            .cloned()
            .filter(|v| *v != 0.0)
            .collect();
        assert_eq!(cells, vec![0.25; 4]);
        let total: f64 = (0..grid.channels.len()).map(|c| grid.channel_total(c)).sum();
        assert!((total - feature_mass(&img)).abs() < 1e-9);
    }

    #[test]
    fn one_hot_lift_equals_direct_projection() {
        // brute-force: project every pixel's one-hot bin point directly
        let (h, w) = (3, 3);
        let cam = camera(h, w);
        let bins = DepthBins::uniform(2.0, 22.0, 10).unwrap();
        let mut img = FeatureImage::zeros("cam", h, w);
        let mut dist = DepthDistribution {
            bins: bins.clone(),
            probs: Array3::zeros((h, w, bins.len())),
        };
        let mut expected = Array2::<f64>::zeros((40, 20));
        for r in 0..h {
            for c in 0..w {
                let class = ObjectClass::from_index((r + c) % 4).unwrap();
                img.grid[(r, c, class.index())] = 1.0;
                img.grid[(r, c, FeatureImage::occupancy_channel())] = 1.0;
                let k = (r * w + c) % bins.len();
                dist.probs[(r, c, k)] = 1.0;
                let z = bins.centers()[k];
                let ego = Point3::new(z, -(c as f64 + 0.5 - 1.5) / 10.0 * z, -(r as f64 + 0.5 - 1.5) / 10.0 * z);
                let (i, j, _) = spec().voxel_index(&ego).unwrap();
                expected[(i, j)] += 1.0;
            }
        }
        let grid = lift_camera_features(&img, &dist, &cam, &spec()).unwrap();
        let bev = bev_pool(&grid);
        let occ = FeatureImage::occupancy_channel();
        assert_eq!(bev.data.index_axis(Axis(2), occ), expected);
    }
}
