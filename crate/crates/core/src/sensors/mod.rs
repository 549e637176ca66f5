//! Deterministic rendering of a [`Scene`] into raw sensor data: a LiDAR
//! point cloud and one feature image per camera.

mod io;

use nalgebra::{Matrix3, Point3, Vector3};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::scene::{ObjectBox, ObjectClass, Scene};
use crate::seeds;

pub use io::{
    read_feature_image, read_point_cloud, write_feature_image, write_point_cloud,
    POINT_CLOUD_MAGIC, POINT_CLOUD_VERSION,
};

/// Distance at which `points_per_m2_at_10m` applies.
pub const REFERENCE_RANGE: f64 = 10.0;

/// Provenance tag of a LiDAR return. Diagnostics only; never read by the
/// pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointTag {
    Object(u64),
    Ground,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Point3<f64>,
    pub intensity: f64,
    pub tag: PointTag,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn object_point_count(&self) -> usize {
        self.points
            .iter()
            .filter(|p| matches!(p.tag, PointTag::Object(_)))
            .count()
    }
}

/// Ground returns on the annulus `inner..outer` (meters from the sensor
/// axis), at z = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundAnnulus {
    pub inner: f64,
    pub outer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarRenderOptions {
    pub ground: Option<GroundAnnulus>,
}

/// Corner offsets (in units of the half size) spanning each sampled face:
/// four sides then the top. Each face is `origin + s·u + t·v`, s,t ∈ [0,1].
const FACES: [([f64; 3], [f64; 3], [f64; 3]); 5] = [
    ([-1.0, -1.0, -1.0], [2.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
    ([-1.0, 1.0, -1.0], [2.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
    ([-1.0, -1.0, -1.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]),
    ([1.0, -1.0, -1.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]),
    ([-1.0, -1.0, 1.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]),
];

/// Total area of the four sides plus the top of a box of `size` (w, l, h).
pub fn sampled_face_area(size: &Vector3<f64>) -> f64 {
    2.0 * size.z * (size.x + size.y) + size.x * size.y
}

/// Expected number of returns from `object` before range clipping of
/// individual points.
pub fn expected_object_points(object: &ObjectBox, sensor: &Point3<f64>, density: f64, max_range: f64) -> f64 {
    let d = (Point3::from(object.center) - sensor).norm();
    if d > max_range {
        return 0.0;
    }
    let falloff = (REFERENCE_RANGE / d.max(1.0)).powi(2);
    sampled_face_area(&object.size) * density * falloff
}

fn poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Samples LiDAR returns on the visible faces of every box (plus optional
/// ground). Pure function of `(scene, seed, options)`.
pub fn render_lidar(scene: &Scene, seed: u64, options: &LidarRenderOptions) -> PointCloud {
    let lidar = &scene.rig.lidar;
    let sensor = lidar.origin();
    let mut rng = seeds::rng(seed);
    let mut points = Vec::new();
    let mut push = |position: Point3<f64>, tag: PointTag| {
        let dist = (position - sensor).norm();
        if dist <= lidar.max_range {
            points.push(LidarPoint {
                position,
                intensity: (1.0 - dist / lidar.max_range).clamp(0.0, 1.0),
                tag,
            });
        }
    };

    for object in &scene.objects {
        let expected = expected_object_points(object, &sensor, lidar.points_per_m2_at_10m, lidar.max_range);
        if expected == 0.0 {
            continue;
        }
        let total_area = sampled_face_area(&object.size);
        let rot = object.rotation();
        let half = object.size / 2.0;
        for (origin, u, v) in FACES {
            let scale = |a: [f64; 3]| Vector3::new(a[0] * half.x, a[1] * half.y, a[2] * half.z);
            let (o, du, dv) = (scale(origin), scale(u), scale(v));
            let area = du.norm() * dv.norm();
            let n = poisson(&mut rng, expected * area / total_area);
            for _ in 0..n {
                let s: f64 = rng.random();
                let t: f64 = rng.random();
                let local = o + du * s + dv * t;
                push(Point3::from(rot * local + object.center), PointTag::Object(object.id));
            }
        }
    }

    if let Some(GroundAnnulus { inner, outer }) = options.ground {
        let outer = outer.min(lidar.max_range);
        let inner = inner.max(1.0);
        if outer > inner {
            let d0 = REFERENCE_RANGE * REFERENCE_RANGE * lidar.points_per_m2_at_10m;
            let expected = d0 * 2.0 * std::f64::consts::PI * (outer / inner).ln();
            let n = poisson(&mut rng, expected);
            for _ in 0..n {
                // radial pdf ∝ 1/r matches the inverse-square areal falloff
                let r = inner * (outer / inner).powf(rng.random::<f64>());
                let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                push(
                    Point3::new(sensor.x + r * phi.cos(), sensor.y + r * phi.sin(), 0.0),
                    PointTag::Ground,
                );
            }
        }
    }

    PointCloud { points }
}

/// Per-camera feature image: class one-hot channels followed by an
/// occupancy channel, plus the z-buffer depth used as the depth oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub camera_id: String,
    /// (H, W, C)
    pub grid: Array3<f64>,
    /// (H, W), meters along the optical axis; 0 where no surface was hit.
    pub depth: Array2<f64>,
}

impl FeatureImage {
    pub fn channel_names() -> Vec<String> {
        ObjectClass::ALL
            .iter()
            .map(|c| c.name().to_string())
            .chain(std::iter::once("occupancy".to_string()))
            .collect()
    }

    pub fn channels() -> usize {
        ObjectClass::ALL.len() + 1
    }

    pub fn occupancy_channel() -> usize {
        ObjectClass::ALL.len()
    }

    pub fn zeros(camera_id: impl Into<String>, height: usize, width: usize) -> Self {
        Self {
            camera_id: camera_id.into(),
            grid: Array3::zeros((height, width, Self::channels())),
            depth: Array2::zeros((height, width)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.grid.shape();
        (s[0], s[1])
    }

    /// Depth is positive exactly where occupancy is positive.
    pub fn depth_matches_occupancy(&self) -> bool {
        let occ = Self::occupancy_channel();
        self.depth
            .indexed_iter()
            .all(|((r, c), d)| (*d > 0.0) == (self.grid[(r, c, occ)] > 0.0))
    }
}

/// Ray/box entry parameter by the slab method. `origin` and `dir` are in the
/// box frame; returns the entry `t > 0` if the ray enters the box from
/// outside.
fn ray_box_entry(origin: &Vector3<f64>, dir: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t0 = (-half[k] - origin[k]) / dir[k];
        let t1 = (half[k] - origin[k]) / dir[k];
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

struct CameraSpaceBox {
    rot_t: Matrix3<f64>,
    center: Vector3<f64>,
    half: Vector3<f64>,
    class: ObjectClass,
    rows: (usize, usize),
    cols: (usize, usize),
}

/// Rasterizes every camera by casting one ray through each pixel center and
/// keeping the nearest box surface (z-buffer). No randomness.
pub fn render_cameras(scene: &Scene) -> Vec<FeatureImage> {
    scene
        .rig
        .cameras
        .iter()
        .map(|cam| {
            let (h, w) = (cam.height, cam.width);
            let mut image = FeatureImage::zeros(cam.id.clone(), h, w);
            let boxes: Vec<CameraSpaceBox> = scene
                .objects
                .iter()
                .filter_map(|o| {
                    let corners = crate::scene::box_corners(o);
                    let cam_corners: Vec<Point3<f64>> = corners.iter().map(|p| cam.pose.apply(p)).collect();
                    if cam_corners.iter().all(|p| p.z <= 0.0) {
                        return None;
                    }
                    let (rows, cols) = if cam_corners.iter().all(|p| p.z > 0.0) {
                        let (mut umin, mut umax, mut vmin, mut vmax) =
                            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                        for p in &cam_corners {
                            let (u, v) = cam.project(p).expect("in front");
                            umin = umin.min(u);
                            umax = umax.max(u);
                            vmin = vmin.min(v);
                            vmax = vmax.max(v);
                        }
                        let clamp = |x: f64, n: usize| x.floor().clamp(0.0, n as f64) as usize;
                        ((clamp(vmin, h), clamp(vmax + 1.0, h)), (clamp(umin, w), clamp(umax + 1.0, w)))
                    } else {
                        ((0, h), (0, w))
                    };
                    if rows.0 >= rows.1 || cols.0 >= cols.1 {
                        return None;
                    }
                    let rot = cam.pose.rotation * o.rotation();
                    Some(CameraSpaceBox {
                        rot_t: rot.transpose(),
                        center: cam.pose.apply(&Point3::from(o.center)).coords,
                        half: o.size / 2.0,
                        class: o.class_label,
                        rows,
                        cols,
                    })
                })
                .collect();

            let occ = FeatureImage::occupancy_channel();
            for b in &boxes {
                let origin = b.rot_t * (-b.center);
                for row in b.rows.0..b.rows.1 {
                    for col in b.cols.0..b.cols.1 {
                        // ray direction has unit z, so t is the depth along the optical axis
                        let dir = b.rot_t * cam.pixel_ray(row, col);
                        let Some(t) = ray_box_entry(&origin, &dir, &b.half) else {
                            continue;
                        };
                        let current = image.depth[(row, col)];
                        if current == 0.0 || t < current {
                            image.depth[(row, col)] = t;
                            for k in 0..occ {
                                image.grid[(row, col, k)] = 0.0;
                            }
                            image.grid[(row, col, b.class.index())] = 1.0;
                            image.grid[(row, col, occ)] = 1.0;
                        }
                    }
                }
            }
            image
        })
        .collect()
}
