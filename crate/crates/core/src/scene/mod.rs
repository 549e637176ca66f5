//! Synthetic world model: annotated boxes, ego pose and a calibrated
//! camera + LiDAR rig.
//!
//! Everything is expressed in the ego frame (x forward, y left, z up, ground
//! plane at z = 0) unless a type says otherwise.

mod generate;
mod transform;

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_scene, RigConfig, SceneGenConfig};
pub use transform::{transform_points, RigidTransform, ROTATION_TOL};

/// Format tag written into every scene document.
pub const SCENE_FORMAT: &str = "bevbench-scene/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Truck,
    Barrier,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Truck,
        ObjectClass::Barrier,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Truck => "truck",
            ObjectClass::Barrier => "barrier",
        }
    }

    /// Mean (width, length, height) in meters.
    pub fn prior_size(self) -> Vector3<f64> {
        match self {
            ObjectClass::Car => Vector3::new(1.95, 4.6, 1.75),
            ObjectClass::Pedestrian => Vector3::new(0.7, 0.75, 1.8),
            ObjectClass::Truck => Vector3::new(2.5, 6.5, 2.9),
            ObjectClass::Barrier => Vector3::new(2.5, 0.5, 1.0),
        }
    }

    /// Heading of a symmetric class is only defined modulo π.
    pub fn is_symmetric(self) -> bool {
        matches!(self, ObjectClass::Barrier)
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid("object class", s.to_string()))
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub id: u64,
    pub class_label: ObjectClass,
    pub center: Vector3<f64>,
    /// (width, length, height); width runs along the box's local x axis.
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector2<f64>,
}

impl ObjectBox {
    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::invalid("object box", format!("id {}: non-positive size", self.id)));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::invalid(
                "object box",
                format!("id {}: yaw {} outside (-pi, pi]", self.id, self.yaw),
            ));
        }
        if !self.center.iter().chain(self.velocity.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("object box", format!("id {}: non-finite field", self.id)));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// The four BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hw, hl) = (self.size.x / 2.0, self.size.y / 2.0);
        [(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)].map(|(x, y)| {
            Vector2::new(self.center.x + c * x - s * y, self.center.y + s * x + c * y)
        })
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// The eight corners of `b`: bottom face then top face, each
/// counter-clockwise seen from above.
pub fn box_corners(b: &ObjectBox) -> [Point3<f64>; 8] {
    let rot = b.rotation();
    let h = b.size / 2.0;
    let local = [
        (-h.x, -h.y, -h.z),
        (h.x, -h.y, -h.z),
        (h.x, h.y, -h.z),
        (-h.x, h.y, -h.z),
        (-h.x, -h.y, h.z),
        (h.x, -h.y, h.z),
        (h.x, h.y, h.z),
        (-h.x, h.y, h.z),
    ];
    local.map(|(x, y, z)| Point3::from(rot * Vector3::new(x, y, z) + b.center))
}

/// Pinhole camera. Camera frame: x right, y down, z along the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
    /// Ego frame to camera frame.
    pub pose: RigidTransform,
}

impl CameraModel {
    /// Camera at `position` (ego frame) looking horizontally along azimuth
    /// `azimuth` (radians, counter-clockwise from +x), with horizontal field
    /// of view `hfov` and the principal point at the image center.
    pub fn looking_at_azimuth(
        id: impl Into<String>,
        position: Vector3<f64>,
        azimuth: f64,
        hfov: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let (s, c) = azimuth.sin_cos();
        let forward = Vector3::new(c, s, 0.0);
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let fx = width as f64 / 2.0 / (hfov / 2.0).tan();
        Self {
            id: id.into(),
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            height,
            width,
            pose: RigidTransform {
                rotation,
                translation: -(rotation * position),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("camera model", format!("{}: {r}", self.id)));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty image".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx {} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy {} outside [0, {})", self.cy, self.height));
        }
        self.pose.validate()
    }

    /// Unit-depth ray direction (camera frame, z = 1) through the center of
    /// pixel (row, col).
    #[inline]
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            (row as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Projects a camera-frame point to continuous pixel coordinates (u, v).
    pub fn project(&self, p_cam: &Point3<f64>) -> Option<(f64, f64)> {
        (p_cam.z > 0.0).then(|| {
            (
                self.fx * p_cam.x / p_cam.z + self.cx,
                self.fy * p_cam.y / p_cam.z + self.cy,
            )
        })
    }

    pub fn position(&self) -> Point3<f64> {
        self.pose.inverse().apply(&Point3::origin())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    /// Ego frame to sensor frame.
    pub pose: RigidTransform,
    pub max_range: f64,
    pub points_per_m2_at_10m: f64,
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) || !(self.points_per_m2_at_10m > 0.0) {
            return Err(Error::invalid(
                "lidar model",
                "max_range and density must be positive",
            ));
        }
        self.pose.validate()
    }

    pub fn origin(&self) -> Point3<f64> {
        self.pose.inverse().apply(&Point3::origin())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub cameras: Vec<CameraModel>,
    pub lidar: LidarModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub format: String,
    pub scene_id: String,
    /// World frame to ego frame.
    pub ego_pose: RigidTransform,
    pub objects: Vec<ObjectBox>,
    pub rig: Rig,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.format != SCENE_FORMAT {
            return Err(Error::invalid(
                "scene",
                format!("unsupported format tag {:?}", self.format),
            ));
        }
        if self.rig.cameras.is_empty() {
            return Err(Error::invalid("scene", "rig has no cameras"));
        }
        self.ego_pose.validate()?;
        for cam in &self.rig.cameras {
            cam.validate()?;
        }
        self.rig.lidar.validate()?;
        let mut ids: Vec<u64> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("scene", "duplicate object ids"));
        }
        self.objects.iter().try_for_each(ObjectBox::validate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene =
            serde_json::from_str(text).map_err(|e| Error::invalid("scene json", e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
