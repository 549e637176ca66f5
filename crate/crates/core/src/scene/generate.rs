use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CameraModel, LidarModel, ObjectBox, ObjectClass, RigidTransform, Rig, Scene, SCENE_FORMAT};
use crate::error::{Error, Result};
use crate::seeds;

/// Sensor rig layout: `n_cameras` cameras evenly spaced in azimuth (the
/// first looks along +x) plus one roof LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub n_cameras: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub hfov_deg: f64,
    pub camera_height: f64,
    pub lidar_height: f64,
    pub lidar_max_range: f64,
    pub lidar_points_per_m2_at_10m: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            n_cameras: 6,
            image_width: 256,
            image_height: 144,
            hfov_deg: 70.0,
            camera_height: 1.6,
            lidar_height: 1.9,
            lidar_max_range: 70.0,
            lidar_points_per_m2_at_10m: 30.0,
        }
    }
}

impl RigConfig {
    pub fn build(&self) -> Result<Rig> {
        if self.n_cameras == 0 {
            return Err(Error::invalid("rig config", "n_cameras must be >= 1"));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::invalid("rig config", "hfov_deg must be in (0, 180)"));
        }
        let cameras = (0..self.n_cameras)
            .map(|i| {
                CameraModel::looking_at_azimuth(
                    format!("cam{i}"),
                    Vector3::new(0.0, 0.0, self.camera_height),
                    2.0 * PI * i as f64 / self.n_cameras as f64,
                    self.hfov_deg.to_radians(),
                    self.image_width,
                    self.image_height,
                )
            })
            .collect();
        let lidar = LidarModel {
            pose: RigidTransform::from_translation(Vector3::new(0.0, 0.0, -self.lidar_height)),
            max_range: self.lidar_max_range,
            points_per_m2_at_10m: self.lidar_points_per_m2_at_10m,
        };
        let rig = Rig { cameras, lidar };
        rig.cameras.iter().try_for_each(CameraModel::validate)?;
        rig.lidar.validate()?;
        Ok(rig)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    /// Inclusive object-count range.
    pub count_range: [usize; 2],
    /// Relative sampling weight per class.
    pub class_mix: Vec<(ObjectClass, f64)>,
    /// Objects lie inside the square `[-extent, extent]²` (footprint corners included).
    pub extent: f64,
    /// Keep-out radius around the ego origin, measured to the footprint.
    pub min_range: f64,
    /// Speed range (m/s) for movable classes; barriers are static.
    pub speed_range: [f64; 2],
    /// Relative size jitter around the class prior.
    pub size_jitter: f64,
    /// Minimum clearance between footprints.
    pub min_gap: f64,
    /// Placement attempts per object before giving up.
    pub max_attempts: usize,
    pub rig: RigConfig,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            count_range: [8, 16],
            class_mix: vec![
                (ObjectClass::Car, 0.45),
                (ObjectClass::Pedestrian, 0.2),
                (ObjectClass::Truck, 0.15),
                (ObjectClass::Barrier, 0.2),
            ],
            extent: 50.0,
            min_range: 3.0,
            speed_range: [0.0, 10.0],
            size_jitter: 0.1,
            min_gap: 1.0,
            max_attempts: 1000,
            rig: RigConfig::default(),
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("scene generation config", r));
        if self.count_range[0] > self.count_range[1] {
            return bad("count_range must be [min, max] with min <= max");
        }
        if self.count_range[1] > 0 {
            if self.class_mix.is_empty() || self.class_mix.iter().any(|(_, w)| !(*w >= 0.0)) {
                return bad("class_mix needs non-negative weights");
            }
            if !(self.class_mix.iter().map(|(_, w)| w).sum::<f64>() > 0.0) {
                return bad("class_mix weights sum to zero");
            }
        }
        if !(self.extent > 0.0) || !(self.min_range >= 0.0) || !(self.min_gap >= 0.0) {
            return bad("extent must be positive, min_range and min_gap non-negative");
        }
        if !(0.0 <= self.speed_range[0] && self.speed_range[0] <= self.speed_range[1]) {
            return bad("speed_range must satisfy 0 <= min <= max");
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return bad("size_jitter must be in [0, 1)");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }

    fn pick_class(&self, rng: &mut impl Rng) -> ObjectClass {
        let total: f64 = self.class_mix.iter().map(|(_, w)| w).sum();
        let mut x = rng.random::<f64>() * total;
        for (class, w) in &self.class_mix {
            if x < *w {
                return *class;
            }
            x -= w;
        }
        self.class_mix.last().expect("validated non-empty").0
    }
}

/// Separating-axis overlap test for two BEV rectangles, each grown by
/// `gap / 2` on every side. Touching rectangles do not overlap.
fn footprints_overlap(a: &ObjectBox, b: &ObjectBox, gap: f64) -> bool {
    let grow = |o: &ObjectBox| ObjectBox {
        size: o.size + Vector3::new(gap, gap, 0.0),
        ..o.clone()
    };
    let (a, b) = (grow(a), grow(b));
    let (ca, cb) = (a.bev_corners(), b.bev_corners());
    let axes = [ca[1] - ca[0], ca[3] - ca[0], cb[1] - cb[0], cb[3] - cb[0]];
    axes.iter().all(|axis| {
        let project = |cs: &[Vector2<f64>; 4]| {
            cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                let d = c.dot(axis);
                (lo.min(d), hi.max(d))
            })
        };
        let (alo, ahi) = project(&ca);
        let (blo, bhi) = project(&cb);
        ahi > blo && bhi > alo
    })
}

/// Builds a random scene. Pure function of `(config, seed)`.
pub fn generate_scene(config: &SceneGenConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let rig = config.rig.build()?;
    let mut rng = seeds::rng(seed);

    let ego_pose = RigidTransform::from_yaw(
        PI - 2.0 * PI * rng.random::<f64>(),
        Vector3::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0), 0.0),
    );

    let [lo, hi] = config.count_range;
    let count = rng.random_range(lo..=hi);
    let mut objects: Vec<ObjectBox> = Vec::with_capacity(count);
    let mut attempts = 0;

    while objects.len() < count {
        if attempts >= config.max_attempts * count {
            return Err(Error::PlacementInfeasible {
                placed: objects.len(),
                requested: count,
                attempts,
            });
        }
        attempts += 1;

        let class = config.pick_class(&mut rng);
        let prior = class.prior_size();
        let mut jitter = || 1.0 + config.size_jitter * (2.0 * rng.random::<f64>() - 1.0);
        let size = Vector3::new(prior.x * jitter(), prior.y * jitter(), prior.z * jitter());
        // (−π, π]
        let yaw = PI - 2.0 * PI * rng.random::<f64>();
        let x = rng.random_range(-config.extent..=config.extent);
        let y = rng.random_range(-config.extent..=config.extent);
        let speed = if class == ObjectClass::Barrier {
            0.0
        } else {
            rng.random_range(config.speed_range[0]..=config.speed_range[1])
        };
        let heading = Vector2::new(-yaw.sin(), yaw.cos());
        let candidate = ObjectBox {
            id: objects.len() as u64 + 1,
            class_label: class,
            center: Vector3::new(x, y, size.z / 2.0),
            size,
            yaw,
            velocity: heading * speed,
        };

        let corners = candidate.bev_corners();
        let inside = corners
            .iter()
            .all(|c| c.x.abs() <= config.extent && c.y.abs() <= config.extent);
        let half_diag = (size.x * size.x + size.y * size.y).sqrt() / 2.0;
        let clear_of_ego = Vector2::new(x, y).norm() - half_diag >= config.min_range;
        if !inside || !clear_of_ego {
            continue;
        }
        if objects
            .iter()
            .any(|o| footprints_overlap(o, &candidate, config.min_gap))
        {
            continue;
        }
        objects.push(candidate);
    }

    Ok(Scene {
        format: SCENE_FORMAT.to_string(),
        scene_id: format!("scene-{seed:016x}"),
        ego_pose,
        objects,
        rig,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Area of the intersection of two convex polygons (Sutherland–Hodgman
    /// clipping followed by the shoelace formula).
    fn convex_intersection_area(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
        let cross = |o: Vector2<f64>, p: Vector2<f64>, q: Vector2<f64>| {
            (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x)
        };
        let mut poly: Vec<Vector2<f64>> = a.to_vec();
        for i in 0..b.len() {
            let (e0, e1) = (b[i], b[(i + 1) % b.len()]);
            let input = std::mem::take(&mut poly);
            for j in 0..input.len() {
                let (p, q) = (input[j], input[(j + 1) % input.len()]);
                let (sp, sq) = (cross(e0, e1, p), cross(e0, e1, q));
                if sp >= 0.0 {
                    poly.push(p);
                }
                if (sp >= 0.0) != (sq >= 0.0) {
                    let t = sp / (sp - sq);
                    poly.push(p + (q - p) * t);
                }
            }
            if poly.is_empty() {
                return 0.0;
            }
        }
        let n = poly.len();
        (0..n)
            .map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y)
            .sum::<f64>()
            .abs()
            / 2.0
    }

    #[test]
    fn empty_count_range_gives_empty_scene() {
        let cfg = SceneGenConfig {
            count_range: [0, 0],
            ..Default::default()
        };
        let scene = generate_scene(&cfg, 7).unwrap();
        assert!(scene.objects.is_empty());
        scene.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneGenConfig::default();
        assert_eq!(generate_scene(&cfg, 99).unwrap(), generate_scene(&cfg, 99).unwrap());
        assert_ne!(generate_scene(&cfg, 99).unwrap(), generate_scene(&cfg, 100).unwrap());
    }

    #[test]
    fn ten_boxes_have_disjoint_footprints() {
        let cfg = SceneGenConfig {
            count_range: [10, 10],
            extent: 60.0,
            ..Default::default()
        };
        let scene = generate_scene(&cfg, 42).unwrap();
        assert_eq!(scene.objects.len(), 10);
        for (i, a) in scene.objects.iter().enumerate() {
            for b in &scene.objects[i + 1..] {
                let area = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
                assert_eq!(area, 0.0, "boxes {} and {} overlap", a.id, b.id);
            }
            for c in a.bev_corners() {
                assert!(c.x.abs() <= 60.0 && c.y.abs() <= 60.0);
            }
        }
    }

    #[test]
    fn intersection_oracle_sanity() {
        let sq = |cx: f64| {
            vec![
                Vector2::new(cx - 1.0, -1.0),
                Vector2::new(cx + 1.0, -1.0),
                Vector2::new(cx + 1.0, 1.0),
                Vector2::new(cx - 1.0, 1.0),
            ]
        };
        assert!((convex_intersection_area(&sq(0.0), &sq(1.0)) - 2.0).abs() < 1e-12);
        assert_eq!(convex_intersection_area(&sq(0.0), &sq(3.0)), 0.0);
    }

    #[test]
    fn crowded_extent_is_infeasible() {
        let cfg = SceneGenConfig {
            count_range: [50, 50],
            extent: 6.0,
            min_range: 0.0,
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&cfg, 1),
            Err(Error::PlacementInfeasible { .. })
        ));
    }

    #[test]
    fn generated_boxes_satisfy_invariants_over_many_seeds() {
        let cfg = SceneGenConfig::default();
        for seed in 0..1000 {
            let scene = generate_scene(&cfg, seed).unwrap();
            scene.validate().unwrap();
            for o in &scene.objects {
                assert!(o.size.iter().all(|s| *s > 0.0));
                assert!(o.yaw > -PI && o.yaw <= PI);
                for c in o.bev_corners() {
                    assert!(c.x.abs() <= cfg.extent && c.y.abs() <= cfg.extent);
                }
            }
        }
    }
}
