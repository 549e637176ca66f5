use std::path::Path;

use nalgebra::Point3;
use ndarray::{Array3, Array4, Axis};
use ndarray_npy::WriteNpyExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ObjectClass;
use crate::sensors::PointCloud;

/// Regular grid over an axis-aligned ego-frame box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    /// Cell size (rx, ry, rz), meters.
    pub resolution: [f64; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_range: [-54.0, 54.0],
            y_range: [-54.0, 54.0],
            z_range: [-5.0, 3.0],
            resolution: [0.3, 0.3, 0.5],
        }
    }
}

fn cells(range: [f64; 2], res: f64) -> usize {
    // ceil with slack so that 108 / 0.3 counts as exactly 360 cells
    ((range[1] - range[0]) / res - 1e-9).ceil().max(1.0) as usize
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x", self.x_range), ("y", self.y_range), ("z", self.z_range)] {
            if !(r[0] < r[1]) || !r.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("grid spec", format!("{name} range must be nonempty")));
            }
        }
        if !self.resolution.iter().all(|r| *r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("grid spec", "resolutions must be positive"));
        }
        Ok(())
    }

    /// (X, Y, Z) cell counts.
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            cells(self.x_range, self.resolution[0]),
            cells(self.y_range, self.resolution[1]),
            cells(self.z_range, self.resolution[2]),
        )
    }

    fn axis_index(value: f64, range: [f64; 2], res: f64, n: usize) -> Option<usize> {
        if !(value >= range[0] && value <= range[1]) {
            return None;
        }
        // a point on a cell's upper edge belongs to the next cell; the grid's
        // own upper edge is clipped into the last cell
        Some((((value - range[0]) / res).floor() as usize).min(n - 1))
    }

    /// Voxel containing `p`, or `None` outside the ranges.
    pub fn voxel_index(&self, p: &Point3<f64>) -> Option<(usize, usize, usize)> {
        let (nx, ny, nz) = self.dims();
        Some((
            Self::axis_index(p.x, self.x_range, self.resolution[0], nx)?,
            Self::axis_index(p.y, self.y_range, self.resolution[1], ny)?,
            Self::axis_index(p.z, self.z_range, self.resolution[2], nz)?,
        ))
    }

    pub fn cell_center_x(&self, i: usize) -> f64 {
        self.x_range[0] + (i as f64 + 0.5) * self.resolution[0]
    }

    pub fn cell_center_y(&self, j: usize) -> f64 {
        self.y_range[0] + (j as f64 + 0.5) * self.resolution[1]
    }

    pub fn cell_center_z(&self, k: usize) -> f64 {
        self.z_range[0] + (k as f64 + 0.5) * self.resolution[2]
    }

    /// Same footprint in the BEV plane.
    pub fn same_bev_plane(&self, other: &GridSpec) -> bool {
        self.x_range == other.x_range
            && self.y_range == other.y_range
            && self.resolution[..2] == other.resolution[..2]
    }
}

/// Semantic role of a feature channel, used by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Evidence that something occupies the cell.
    Occupancy,
    /// Evidence for one object class.
    Class(ObjectClass),
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub kind: ChannelKind,
}

impl ChannelInfo {
    pub fn new(name: impl Into<String>, kind: ChannelKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    /// (X, Y, Z, C)
    pub data: Array4<f64>,
    pub channels: Vec<ChannelInfo>,
}

impl VoxelGrid {
    pub fn zeros(spec: GridSpec, channels: Vec<ChannelInfo>) -> Self {
        let (x, y, z) = spec.dims();
        Self {
            data: Array4::zeros((x, y, z, channels.len())),
            spec,
            channels,
        }
    }

    pub fn channel_total(&self, c: usize) -> f64 {
        self.data.index_axis(Axis(3), c).sum()
    }
}

/// Bird's-eye-view feature map, (X, Y, C).
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    pub data: Array3<f64>,
    pub channels: Vec<ChannelInfo>,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec, channels: Vec<ChannelInfo>) -> Self {
        let (x, y, _) = spec.dims();
        Self {
            data: Array3::zeros((x, y, channels.len())),
            spec,
            channels,
        }
    }

    pub fn channel_total(&self, c: usize) -> f64 {
        self.data.index_axis(Axis(2), c).sum()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    /// Writes `<name>.npy` (`<f8`, X×Y×C) and `<name>.channels.json`.
    pub fn dump(&self, dir: &Path, name: &str) -> Result<()> {
        let tensor = dir.join(format!("{name}.npy"));
        let file = std::fs::File::create(&tensor).map_err(|e| Error::io(&tensor, e))?;
        self.data
            .write_npy(std::io::BufWriter::new(file))
            .map_err(|e| Error::format(&tensor, e))?;
        let manifest = dir.join(format!("{name}.channels.json"));
        let body = serde_json::json!({ "grid": self.spec, "channels": self.channels });
        std::fs::write(&manifest, serde_json::to_vec_pretty(&body).expect("manifest serializes"))
            .map_err(|e| Error::io(&manifest, e))
    }
}

/// Channel layout produced by [`voxelize`].
pub const LIDAR_CHANNELS: [&str; 3] = ["lidar_count", "lidar_intensity", "lidar_z_offset"];

fn lidar_channels() -> Vec<ChannelInfo> {
    vec![
        ChannelInfo::new(LIDAR_CHANNELS[0], ChannelKind::Occupancy),
        ChannelInfo::new(LIDAR_CHANNELS[1], ChannelKind::Other),
        ChannelInfo::new(LIDAR_CHANNELS[2], ChannelKind::Other),
    ]
}

/// Per-voxel point statistics: count, mean intensity, and mean z offset from
/// the voxel center. Points outside the grid are dropped.
pub fn voxelize(cloud: &PointCloud, spec: &GridSpec) -> VoxelGrid {
    let mut grid = VoxelGrid::zeros(spec.clone(), lidar_channels());
    for p in &cloud.points {
        if let Some((i, j, k)) = spec.voxel_index(&p.position) {
            let offset = p.position.z - spec.cell_center_z(k);
            let mut cell = grid.data.slice_mut(ndarray::s![i, j, k, ..]);
            cell[0] += 1.0;
            cell[1] += p.intensity;
            cell[2] += offset;
        }
    }
    for mut cell in grid.data.lanes_mut(Axis(3)) {
        let n = cell[0];
        if n > 0.0 {
            cell[1] /= n;
            cell[2] /= n;
        }
    }
    grid
}

/// Sums every vertical column: `bev(x, y, c) = Σ_z voxel(x, y, z, c)`.
pub fn bev_pool(grid: &VoxelGrid) -> BevGrid {
    BevGrid {
        spec: grid.spec.clone(),
        data: grid.data.sum_axis(Axis(2)),
        channels: grid.channels.clone(),
    }
}

/// Fixed BEV encoder: per-channel box smoothing of radius `radius` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BevEncoderSpec {
    pub radius: usize,
}

impl Default for BevEncoderSpec {
    fn default() -> Self {
        Self { radius: 2 }
    }
}

/// Mass-preserving box scatter along one axis: every cell spreads its value
/// evenly over the in-bounds cells of its window.
fn box_scatter_axis(data: &Array3<f64>, radius: usize, axis: Axis) -> Array3<f64> {
    let mut out = Array3::zeros(data.dim());
    for (src, mut dst) in data.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = src.len();
        for (i, v) in src.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let share = v / (hi - lo + 1) as f64;
            for t in lo..=hi {
                dst[t] += share;
            }
        }
    }
    out
}

/// Concatenates camera and LiDAR channels, then applies the encoder.
pub fn fuse_bev(cam: &BevGrid, lidar: &BevGrid, encoder: &BevEncoderSpec) -> Result<BevGrid> {
    if !cam.spec.same_bev_plane(&lidar.spec) || cam.data.dim().0 != lidar.data.dim().0 || cam.data.dim().1 != lidar.data.dim().1 {
        return Err(Error::ShapeMismatch {
            expected: cam.data.shape()[..2].to_vec(),
            actual: lidar.data.shape()[..2].to_vec(),
        });
    }
    let data = ndarray::concatenate(Axis(2), &[cam.data.view(), lidar.data.view()])
        .expect("matching spatial dims");
    let data = if encoder.radius == 0 {
        data
    } else {
        let along_x = box_scatter_axis(&data, encoder.radius, Axis(0));
        box_scatter_axis(&along_x, encoder.radius, Axis(1))
    };
    Ok(BevGrid {
        spec: cam.spec.clone(),
        data,
        channels: cam.channels.iter().chain(&lidar.channels).cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::sensors::{LidarPoint, PointTag};
    use rand::Rng;

    fn small_spec() -> GridSpec {
        GridSpec {
            x_range: [0.0, 4.0],
            y_range: [0.0, 3.0],
            z_range: [0.0, 2.0],
            resolution: [1.0, 1.0, 0.5],
        }
    }

    fn point(x: f64, y: f64, z: f64) -> LidarPoint {
        LidarPoint {
            position: Point3::new(x, y, z),
            intensity: 0.25,
            tag: PointTag::None,
        }
    }

    #[test]
    fn default_grid_dimensions() {
        assert_eq!(GridSpec::default().dims(), (360, 360, 16));
    }

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let g = voxelize(&PointCloud::default(), &small_spec());
        assert!(g.data.iter().all(|v| *v == 0.0));
        assert_eq!(g.data.shape(), &[4, 3, 4, 3]);
    }

    #[test]
    fn point_at_cell_center() {
        let spec = small_spec();
        let g = voxelize(
            &PointCloud {
                points: vec![point(1.5, 2.5, 0.75)],
            },
            &spec,
        );
        assert_eq!(g.data[(1, 2, 1, 0)], 1.0);
        assert_eq!(g.data[(1, 2, 1, 1)], 0.25);
        assert_eq!(g.data[(1, 2, 1, 2)], 0.0);
        assert_eq!(g.channel_total(0), 1.0);
    }

    #[test]
    fn boundary_rule() {
        let spec = small_spec();
        // interior edge belongs to the upper cell, grid max edge clips into the last cell
        assert_eq!(spec.voxel_index(&Point3::new(1.0, 0.0, 0.0)), Some((1, 0, 0)));
        assert_eq!(spec.voxel_index(&Point3::new(4.0, 3.0, 2.0)), Some((3, 2, 3)));
        assert_eq!(spec.voxel_index(&Point3::new(4.0001, 1.0, 1.0)), None);
        assert_eq!(spec.voxel_index(&Point3::new(-1e-12, 1.0, 1.0)), None);
    }

    #[test]
    fn count_conserved_for_random_clouds() {
        let spec = small_spec();
        let mut rng = seeds::rng(4);
        let pts: Vec<LidarPoint> = (0..700)
            .map(|_| point(rng.random_range(-1.0..5.0), rng.random_range(-1.0..4.0), rng.random_range(-0.5..2.5)))
            .collect();
        let in_range = pts
            .iter()
            .filter(|p| {
                let q = p.position;
                (0.0..=4.0).contains(&q.x) && (0.0..=3.0).contains(&q.y) && (0.0..=2.0).contains(&q.z)
            })
            .count();
        let g = voxelize(&PointCloud { points: pts }, &spec);
        assert_eq!(g.channel_total(0), in_range as f64);
        assert_eq!(bev_pool(&g).channel_total(0), in_range as f64);
    }

    #[test]
    fn pooling_sums_columns() {
        let mut g = VoxelGrid::zeros(small_spec(), lidar_channels());
        g.data[(2, 1, 0, 0)] = 1.0;
        g.data[(2, 1, 1, 0)] = 2.0;
        g.data[(2, 1, 3, 0)] = 3.0;
        let b = bev_pool(&g);
        assert_eq!(b.data[(2, 1, 0)], 6.0);
        assert_eq!(b.channel_total(0), 6.0);
        assert!(bev_pool(&VoxelGrid::zeros(small_spec(), lidar_channels()))
            .data
            .iter()
            .all(|v| *v == 0.0));
    }

    fn random_bev(spec: &GridSpec, names: &[&str], seed: u64) -> BevGrid {
        let mut rng = seeds::rng(seed);
        let (x, y, _) = spec.dims();
        BevGrid {
            spec: spec.clone(),
            data: Array3::from_shape_fn((x, y, names.len()), |_| rng.random()),
            channels: names.iter().map(|n| ChannelInfo::new(*n, ChannelKind::Other)).collect(),
        }
    }

    #[test]
    fn fuse_without_smoothing_is_concatenation() {
        let spec = small_spec();
        let cam = random_bev(&spec, &["a", "b"], 1);
        let lidar = random_bev(&spec, &["c"], 2);
        let fused = fuse_bev(&cam, &lidar, &BevEncoderSpec { radius: 0 }).unwrap();
        assert_eq!(fused.channels.len(), 3);
        assert_eq!(fused.data.index_axis(Axis(2), 0), cam.data.index_axis(Axis(2), 0));
        assert_eq!(fused.data.index_axis(Axis(2), 2), lidar.data.index_axis(Axis(2), 0));

        let zero_lidar = BevGrid::zeros(spec.clone(), lidar.channels.clone());
        let fused = fuse_bev(&cam, &zero_lidar, &BevEncoderSpec { radius: 0 }).unwrap();
        assert!(fused.data.index_axis(Axis(2), 2).iter().all(|v| *v == 0.0));
        assert_eq!(fused.data.index_axis(Axis(2), 1), cam.data.index_axis(Axis(2), 1));
    }

    #[test]
    fn smoothing_an_impulse() {
        let spec = GridSpec {
            x_range: [0.0, 7.0],
            y_range: [0.0, 7.0],
            ..small_spec()
        };
        let mut cam = BevGrid::zeros(spec.clone(), vec![ChannelInfo::new("a", ChannelKind::Occupancy)]);
        cam.data[(3, 3, 0)] = 1.0;
        let lidar = BevGrid::zeros(spec, vec![ChannelInfo::new("b", ChannelKind::Occupancy)]);
        let fused = fuse_bev(&cam, &lidar, &BevEncoderSpec { radius: 1 }).unwrap();
        // direct oracle: 3×3 neighbourhood at 1/9
        for i in 0..7 {
            for j in 0..7 {
                let expected = if (2..=4).contains(&i) && (2..=4).contains(&j) { 1.0 / 9.0 } else { 0.0 };
                assert!((fused.data[(i, j, 0)] - expected).abs() < 1e-12);
            }
        }
        assert!((fused.channel_total(0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn smoothing_preserves_mass_at_borders() {
        let spec = small_spec();
        let cam = random_bev(&spec, &["a"], 5);
        let lidar = random_bev(&spec, &["b"], 6);
        let fused = fuse_bev(&cam, &lidar, &BevEncoderSpec { radius: 2 }).unwrap();
        assert!((fused.channel_total(0) - cam.channel_total(0)).abs() < 1e-9);
        assert!((fused.channel_total(1) - lidar.channel_total(0)).abs() < 1e-9);
    }

    #[test]
    fn fuse_rejects_mismatched_grids() {
        let cam = random_bev(&small_spec(), &["a"], 1);
        let other = GridSpec {
            x_range: [0.0, 5.0],
            ..small_spec()
        };
        let lidar = random_bev(&other, &["b"], 1);
        assert!(fuse_bev(&cam, &lidar, &BevEncoderSpec::default()).is_err());
    }

    #[test]
    fn pooling_is_linear() {
        let spec = small_spec();
        let mut rng = seeds::rng(9);
        let (x, y, z) = spec.dims();
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| VoxelGrid {
            spec: spec.clone(),
            data: Array4::from_shape_fn((x, y, z, 2), |_| rng.random_range(-1.0..1.0)),
            channels: vec![ChannelInfo::new("a", ChannelKind::Other); 2],
        };
        let (g1, g2) = (mk(&mut rng), mk(&mut rng));
        let sum = VoxelGrid {
            data: &g1.data + &g2.data,
            ..g1.clone()
        };
        let scaled = VoxelGrid {
            data: &g1.data * 2.5,
            ..g1.clone()
        };
        let (p1, p2) = (bev_pool(&g1), bev_pool(&g2));
        for ((a, b), s) in p1.data.iter().zip(p2.data.iter()).zip(bev_pool(&sum).data.iter()) {
            assert!((a + b - s).abs() < 1e-12);
        }
        for (a, s) in p1.data.iter().zip(bev_pool(&scaled).data.iter()) {
            assert!((2.5 * a - s).abs() < 1e-12);
        }
        for c in 0..2 {
            assert!((p1.channel_total(c) - g1.channel_total(c)).abs() < 1e-9);
        }
    }
}
