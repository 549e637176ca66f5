//! Reference detector on fused BEV features: a center heatmap, peak
//! extraction with greedy radial NMS, and per-peak attribute estimation from
//! the surrounding cluster of occupied cells.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bevpipe::{BevGrid, ChannelKind};
use crate::error::{Error, Result};
use crate::scene::ObjectClass;

pub const DETECTIONS_FORMAT: &str = "bevbench-dets/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: Vector3<f64>,
    /// (width, length, height), same convention as `ObjectBox`.
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector2<f64>,
    pub class_label: ObjectClass,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Minimum heatmap value of a peak.
    pub peak_threshold: f64,
    /// Peaks closer than this (meters) to a stronger kept peak are
    /// suppressed.
    pub nms_radius: f64,
    /// Cells within this distance (meters) of a peak form its cluster.
    pub cluster_radius: f64,
    pub min_cluster_cells: usize,
    /// κ in `score = 1 − exp(−peak / κ)`.
    pub score_scale: f64,
    /// z of every detection center (meters, ego frame).
    pub center_z: f64,
    /// Subtracted from both cluster extents (meters, floored at one cell)
    /// to undo the spread the BEV encoder adds around each object.
    pub extent_margin: f64,
    /// A detection whose cluster centroid lies within this distance
    /// (meters) of a stronger detection's centroid is dropped; 0 disables.
    /// Hollow LiDAR outlines peak near both ends of a long box, farther
    /// apart than `nms_radius`, but both clusters center on the box.
    pub merge_radius: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            peak_threshold: 0.05,
            nms_radius: 3.0,
            cluster_radius: 4.0,
            min_cluster_cells: 3,
            score_scale: 20.0,
            center_z: 0.9,
            extent_margin: 1.2,
            merge_radius: 1.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.peak_threshold, self.nms_radius, self.cluster_radius, self.score_scale];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) || self.min_cluster_cells == 0 {
            return Err(Error::invalid("detector params", "all parameters must be positive"));
        }
        if !(self.merge_radius >= 0.0 && self.merge_radius.is_finite()) {
            return Err(Error::invalid("detector params", "merge_radius must be non-negative"));
        }
        if !(self.extent_margin >= 0.0 && self.extent_margin.is_finite()) {
            return Err(Error::invalid("detector params", "extent_margin must be non-negative"));
        }
        Ok(())
    }
}

/// Sum of the occupancy-tagged channels.
fn occupancy_mass(bev: &BevGrid) -> Result<Array2<f64>> {
    let occ: Vec<usize> = bev
        .channels
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind == ChannelKind::Occupancy)
        .map(|(i, _)| i)
        .collect();
    if occ.is_empty() {
        return Err(Error::invalid("bev grid", "no occupancy channel"));
    }
    let (x, y, _) = bev.data.dim();
    let mut mass = Array2::zeros((x, y));
    for c in occ {
        mass += &bev.data.index_axis(Axis(2), c);
    }
    Ok(mass)
}

/// Occupancy mass smoothed by a 3×3 box mean (zero padded).
pub fn center_heatmap(bev: &BevGrid) -> Result<Array2<f64>> {
    let mass = occupancy_mass(bev)?;
    let (nx, ny) = mass.dim();
    Ok(Array2::from_shape_fn((nx, ny), |(i, j)| {
        let mut acc = 0.0;
        for a in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
            for b in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
                acc += mass[(a, b)];
            }
        }
        acc / 9.0
    }))
}

/// Strict total order on cells: larger heatmap value first, then larger raw
/// mass (resolves box-filter plateaus toward the impulse), then smaller
/// (x, y) index.
fn peak_order(mass: &Array2<f64>, a: (f64, (usize, usize)), b: (f64, (usize, usize))) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(mass[b.1].total_cmp(&mass[a.1]))
        .then(a.1.cmp(&b.1))
}

/// Cells that come first in [`peak_order`] among their 8 neighbours.
fn local_maxima(heatmap: &Array2<f64>, mass: &Array2<f64>, threshold: f64) -> Vec<(f64, (usize, usize))> {
    let (nx, ny) = heatmap.dim();
    let mut peaks = Vec::new();
    for ((i, j), &v) in heatmap.indexed_iter() {
        if !(v >= threshold && v > 0.0) {
            continue;
        }
        let mut is_max = true;
        'scan: for a in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
            for b in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
                if (a, b) != (i, j) && peak_order(mass, (heatmap[(a, b)], (a, b)), (v, (i, j))) == Ordering::Less {
                    is_max = false;
                    break 'scan;
                }
            }
        }
        if is_max {
            peaks.push((v, (i, j)));
        }
    }
    peaks.sort_by(|a, b| peak_order(mass, *a, *b));
    peaks
}

/// Yaw of a box whose length axis points along `dir`, reduced to
/// (−π/2, π/2] since a cluster carries no heading.
pub fn yaw_from_major_axis(dir: Vector2<f64>) -> f64 {
    let mut yaw = (-dir.x).atan2(dir.y);
    if yaw <= -FRAC_PI_2 {
        yaw += PI;
    } else if yaw > FRAC_PI_2 {
        yaw -= PI;
    }
    yaw
}

struct Cluster {
    cells: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

/// Principal-axis box fit of a weighted cell cluster.
#[derive(Debug, Clone, Copy)]
struct AxisFit {
    centroid: Vector2<f64>,
    major: Vector2<f64>,
    length: f64,
    width: f64,
}

/// Mass-weighted principal-axis fit. Extents come from the extremal
/// projections of the cell centers plus one cell pitch.
fn fit_axes(points: &[Vector2<f64>], weights: &[f64], pitch: f64) -> AxisFit {
    let total: f64 = weights.iter().sum();
    let centroid = points
        .iter()
        .zip(weights)
        .fold(Vector2::zeros(), |acc, (p, w)| acc + p * *w)
        / total;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (p, w) in points.iter().zip(weights) {
        let d = p - centroid;
        sxx += w * d.x * d.x;
        sxy += w * d.x * d.y;
        syy += w * d.y * d.y;
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let major = Vector2::new(phi.cos(), phi.sin());
    let minor = Vector2::new(-major.y, major.x);
    let span = |axis: &Vector2<f64>| {
        points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let t = (p - centroid).dot(axis);
            (lo.min(t), hi.max(t))
        })
    };
    let (a, b) = (span(&major), span(&minor));
    AxisFit {
        centroid,
        major,
        length: a.1 - a.0 + pitch,
        width: b.1 - b.0 + pitch,
    }
}

/// Class whose mean footprint is closest to the (minor, major) extents of a
/// cluster.
fn class_from_footprint(minor: f64, major: f64) -> ObjectClass {
    ObjectClass::ALL
        .into_iter()
        .min_by(|a, b| {
            let d = |c: &ObjectClass| {
                let p = c.prior_size();
                (p.x.min(p.y) - minor).powi(2) + (p.x.max(p.y) - major).powi(2)
            };
            d(a).total_cmp(&d(b))
        })
        .expect("non-empty class list")
}

/// Peaks → detections. Output is sorted by descending score, ties by peak
/// cell index.
pub fn extract_detections(bev: &BevGrid, heatmap: &Array2<f64>, params: &DetectorParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let (nx, ny, _) = bev.data.dim();
    if heatmap.dim() != (nx, ny) {
        return Err(Error::ShapeMismatch {
            expected: vec![nx, ny],
            actual: heatmap.shape().to_vec(),
        });
    }
    let mass = occupancy_mass(bev)?;
    let spec = &bev.spec;
    let pitch = 0.5 * (spec.resolution[0] + spec.resolution[1]);
    let pos = |(i, j): (usize, usize)| Vector2::new(spec.cell_center_x(i), spec.cell_center_y(j));
    let class_channels: Vec<(usize, ObjectClass)> = bev
        .channels
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c.kind {
            ChannelKind::Class(class) => Some((i, class)),
            _ => None,
        })
        .collect();

    let reach_x = (params.cluster_radius / spec.resolution[0]).ceil() as usize;
    let reach_y = (params.cluster_radius / spec.resolution[1]).ceil() as usize;
    let mut peaks: Vec<Vector2<f64>> = Vec::new();
    let mut out: Vec<(Detection, (usize, usize))> = Vec::new();
    for (value, (pi, pj)) in local_maxima(heatmap, &mass, params.peak_threshold) {
        let center = pos((pi, pj));
        if peaks.iter().any(|k| (k - center).norm() <= params.nms_radius) {
            continue;
        }
        peaks.push(center);
        let mut cluster = Cluster {
            cells: vec![],
            weights: vec![],
        };
        for i in pi.saturating_sub(reach_x)..=(pi + reach_x).min(nx - 1) {
            for j in pj.saturating_sub(reach_y)..=(pj + reach_y).min(ny - 1) {
                let m = mass[(i, j)];
                if m > 0.0 && (pos((i, j)) - center).norm() <= params.cluster_radius {
                    cluster.cells.push((i, j));
                    cluster.weights.push(m);
                }
            }
        }
        if cluster.cells.len() < params.min_cluster_cells {
            continue;
        }
        let points: Vec<Vector2<f64>> = cluster.cells.iter().map(|c| pos(*c)).collect();
        let fit = fit_axes(&points, &cluster.weights, pitch);
        let (major, length, width) = (fit.major, fit.length, fit.width);
        let centroid = fit.centroid;
        if out
            .iter()
            .any(|(d, _)| (d.center.xy() - centroid).norm() < params.merge_radius)
        {
            continue;
        }
        let length = (length - params.extent_margin).max(pitch);
        let width = (width - params.extent_margin).max(pitch);

        let mut evidence = vec![0.0; ObjectClass::ALL.len()];
        for &(i, j) in &cluster.cells {
            for &(ch, class) in &class_channels {
                evidence[class.index()] += bev.data[(i, j, ch)];
            }
        }
        let class_label = if evidence.iter().any(|e| *e > 0.0) {
            // first maximum wins ties
            let best = evidence
                .iter()
                .enumerate()
                .fold(0, |best, (k, e)| if *e > evidence[best] { k } else { best });
            ObjectClass::from_index(best).expect("class index")
        } else {
            class_from_footprint(width, length)
        };

        // classes that are wider than long (barriers) put the major axis
        // along the box width
        let prior = class_label.prior_size();
        let (size, axis) = if prior.x > prior.y {
            (Vector3::new(length, width, prior.z), Vector2::new(-major.y, major.x))
        } else {
            (Vector3::new(width, length, prior.z), major)
        };
        out.push((
            Detection {
                center: Vector3::new(centroid.x, centroid.y, params.center_z),
                size,
                yaw: yaw_from_major_axis(axis),
                velocity: Vector2::zeros(),
                class_label,
                score: -(-value / params.score_scale).exp_m1(),
            },
            (pi, pj),
        ));
    }
    out.sort_by(|a, b| b.0.score.total_cmp(&a.0.score).then(a.1.cmp(&b.1)));
    Ok(out.into_iter().map(|(d, _)| d).collect())
}

/// Heatmap plus extraction in one call.
pub fn detect(bev: &BevGrid, params: &DetectorParams) -> Result<Vec<Detection>> {
    let heatmap = center_heatmap(bev)?;
    extract_detections(bev, &heatmap, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub format: String,
    pub scene_id: String,
    pub detections: Vec<Detection>,
}

impl DetectionFile {
    pub fn new(scene_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        Self {
            format: DETECTIONS_FORMAT.to_string(),
            scene_id: scene_id.into(),
            detections,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DetectionFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if file.format != DETECTIONS_FORMAT {
            return Err(Error::format(path, format!("unsupported format tag {:?}", file.format)));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("detections serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bevpipe::{ChannelInfo, GridSpec};
    use ndarray::Array3;

    fn spec(n: usize) -> GridSpec {
        GridSpec {
            x_range: [0.0, n as f64 * 0.5],
            y_range: [0.0, n as f64 * 0.5],
            z_range: [0.0, 1.0],
            resolution: [0.5, 0.5, 1.0],
        }
    }

    fn bev(n: usize) -> BevGrid {
        BevGrid {
            spec: spec(n),
            data: Array3::zeros((n, n, 2)),
            channels: vec![
                ChannelInfo::new("cam_car", ChannelKind::Class(ObjectClass::Car)),
                ChannelInfo::new("occ", ChannelKind::Occupancy),
            ],
        }
    }

    fn params() -> DetectorParams {
        DetectorParams {
            peak_threshold: 0.05,
            nms_radius: 1.0,
            cluster_radius: 1.0,
            min_cluster_cells: 1,
            extent_margin: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_bev_gives_zero_heatmap_and_no_detections() {
        let b = bev(12);
        let h = center_heatmap(&b).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
        assert!(extract_detections(&b, &h, &params()).unwrap().is_empty());
    }

    #[test]
    fn missing_occupancy_channel_is_an_error() {
        let mut b = bev(4);
        b.channels[1].kind = ChannelKind::Other;
        assert!(center_heatmap(&b).is_err());
    }

    #[test]
    fn impulse_gives_plateau_with_max_at_impulse() {
        let mut b = bev(9);
        b.data[(4, 4, 1)] = 9.0;
        let h = center_heatmap(&b).unwrap();
        for ((i, j), v) in h.indexed_iter() {
            let inside = (3..=5).contains(&i) && (3..=5).contains(&j);
            assert_eq!(*v, if inside { 1.0 } else { 0.0 });
        }
        // the plateau resolves to the impulse cell
        let mass = occupancy_mass(&b).unwrap();
        let peaks = local_maxima(&h, &mass, 0.5);
        assert_eq!(peaks, vec![(1.0, (4, 4))]);
    }

    #[test]
    fn two_impulses_two_maxima() {
        let mut b = bev(30);
        b.data[(5, 8, 1)] = 4.0;
        b.data[(15, 8, 1)] = 2.0;
        b.data[(5, 9, 1)] = 1.0;
        b.data[(15, 9, 1)] = 1.0;
        let h = center_heatmap(&b).unwrap();
        let mass = occupancy_mass(&b).unwrap();
        // argmax-scan oracle over each half of the map, (heatmap, mass) key
        let argmax = |range: std::ops::Range<usize>| {
            let mut best = ((0, 0), (f64::NEG_INFINITY, f64::NEG_INFINITY));
            for i in range {
                for j in 0..30 {
                    let key = (h[(i, j)], mass[(i, j)]);
                    if key > best.1 {
                        best = ((i, j), key);
                    }
                }
            }
            best.0
        };
        let peaks: Vec<(usize, usize)> = local_maxima(&h, &mass, 0.01).into_iter().map(|p| p.1).collect();
        assert_eq!(peaks.len(), 2);
        assert!(peaks.contains(&argmax(0..10)));
        assert!(peaks.contains(&argmax(10..30)));
    }

    #[test]
    fn axis_aligned_rectangle_cluster_yaw() {
        // 2 m wide in x, 4 m long in y: major axis along y → yaw 0
        let mut pts = vec![];
        let mut x = -0.75;
        while x < 1.0 {
            let mut y = -1.75;
            while y < 2.0 {
                pts.push(Vector2::new(x, y));
                y += 0.5;
            }
            x += 0.5;
        }
        let w = vec![1.0; pts.len()];
        let fit = fit_axes(&pts, &w, 0.5);
        assert!(fit.centroid.norm() < 1e-12);
        let (length, width) = (fit.length, fit.width);
        let yaw = yaw_from_major_axis(fit.major);
        let folded = yaw.abs().min(PI - yaw.abs());
        assert!(folded < 1e-9, "yaw {yaw}");
        assert!((length - 4.0).abs() < 1e-9 && (width - 2.0).abs() < 1e-9);

        // rotate the same rectangle by 90°: major axis along x → yaw ±π/2
        let rotated: Vec<Vector2<f64>> = pts.iter().map(|p| Vector2::new(-p.y, p.x)).collect();
        let major = fit_axes(&rotated, &w, 0.5).major;
        assert!((yaw_from_major_axis(major).abs() - FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn detection_attributes_from_a_blob() {
        let mut b = bev(40);
        // 4 × 8 cells (2 m × 4 m) of mass, car evidence
        for i in 10..14 {
            for j in 20..28 {
                b.data[(i, j, 1)] = 1.0;
                b.data[(i, j, 0)] = 1.0;
            }
        }
        let p = DetectorParams {
            nms_radius: 5.0,
            cluster_radius: 5.0,
            ..params()
        };
        let dets = detect(&b, &p).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_label, ObjectClass::Car);
        assert!((d.center.x - 6.0).abs() < 1e-9 && (d.center.y - 12.0).abs() < 1e-9);
        assert!(d.yaw.abs() < 1e-9);
        assert!((d.size.x - 2.0).abs() < 1e-9 && (d.size.y - 4.0).abs() < 1e-9);
        assert!(d.score > 0.0 && d.score <= 1.0);
        assert_eq!(d.velocity, Vector2::zeros());
    }

    #[test]
    fn footprint_fallback_without_class_evidence() {
        assert_eq!(class_from_footprint(0.8, 0.8), ObjectClass::Pedestrian);
        assert_eq!(class_from_footprint(2.0, 4.5), ObjectClass::Car);
        assert_eq!(class_from_footprint(2.6, 7.0), ObjectClass::Truck);
        assert_eq!(class_from_footprint(0.6, 2.4), ObjectClass::Barrier);
    }

    #[test]
    fn barrier_clusters_keep_the_box_width_convention() {
        let mut b = bev(40);
        // 2.5 m along x, 0.5 m along y: a barrier at yaw 0 (width along x)
        for i in 10..15 {
            b.data[(i, 20, 1)] = 1.0;
        }
        let p = DetectorParams {
            cluster_radius: 2.0,
            nms_radius: 2.0,
            ..params()
        };
        let d = &detect(&b, &p).unwrap()[0];
        assert_eq!(d.class_label, ObjectClass::Barrier);
        assert!(d.yaw.abs() < 1e-9, "yaw {}", d.yaw);
        assert!(d.size.x > d.size.y);
    }

    #[test]
    fn translation_by_one_cell_shifts_centers_by_one_pitch() {
        let mut a = bev(40);
        let mut b = bev(40);
        let blob = [(10, 10, 3.0), (11, 10, 2.0), (10, 11, 1.0), (25, 30, 5.0), (26, 31, 2.5)];
        for &(i, j, v) in &blob {
            a.data[(i, j, 1)] = v;
            b.data[(i + 1, j, 1)] = v;
        }
        let p = params();
        let da = detect(&a, &p).unwrap();
        let db = detect(&b, &p).unwrap();
        assert_eq!(da.len(), db.len());
        assert!(!da.is_empty());
        for (x, y) in da.iter().zip(&db) {
            assert!((y.center.x - x.center.x - 0.5).abs() < 1e-9);
            assert!((y.center.y - x.center.y).abs() < 1e-9);
            assert_eq!(x.score, y.score);
        }
    }

    #[test]
    fn nms_suppresses_weaker_nearby_peak() {
        let mut b = bev(40);
        b.data[(10, 10, 1)] = 5.0;
        b.data[(13, 10, 1)] = 3.0; // 1.5 m away
        b.data[(30, 30, 1)] = 2.0;
        let p = DetectorParams {
            nms_radius: 2.0,
            cluster_radius: 0.6,
            ..params()
        };
        let dets = detect(&b, &p).unwrap();
        assert_eq!(dets.len(), 2);
        assert!(dets[0].score > dets[1].score);
    }

    #[test]
    fn hollow_outline_merges_into_one_detection() {
        let mut b = bev(40);
        // 2 m × 6 m outline, denser at the two short ends
        for i in 10..14 {
            for j in 10..22 {
                let edge = i == 10 || i == 13 || j == 10 || j == 21;
                if edge {
                    b.data[(i, j, 1)] = if j == 10 || j == 21 { 3.0 } else { 1.0 };
                }
            }
        }
        let p = DetectorParams {
            nms_radius: 2.0,
            cluster_radius: 8.0,
            merge_radius: 0.0,
            ..params()
        };
        assert!(detect(&b, &p).unwrap().len() >= 2);
        let dets = detect(&b, &DetectorParams { merge_radius: 1.0, ..p }).unwrap();
        assert_eq!(dets.len(), 1);
        assert!((dets[0].center.x - 6.0).abs() < 1e-9 && (dets[0].center.y - 8.0).abs() < 1e-9);
    }

    #[test]
    fn detections_file_round_trip() {
        let mut b = bev(20);
        b.data[(5, 5, 1)] = 3.0;
        let dets = detect(&b, &params()).unwrap();
        let file = DetectionFile::new("s", dets);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        file.save(&path).unwrap();
        assert_eq!(DetectionFile::load(&path).unwrap(), file);
    }
}
