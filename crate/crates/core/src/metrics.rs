//! nuScenes-style detection scoring: greedy center-distance matching,
//! per-class AP at several distance thresholds, the five true-positive
//! errors and the NDS composite.
//!
//! AAE is kept in the NDS formula so the weighting matches nuScenes, but
//! detections and ground truth carry the same placeholder attribute, so it
//! is 0 whenever a class has at least one match.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::scene::{wrap_angle, ObjectBox, ObjectClass};

/// Lowest recall and precision that count toward AP.
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;
/// Recall grid resolution: points k/100 for k = 0..=100.
pub const RECALL_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub det: usize,
    pub gt: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub threshold: f64,
}

impl MatchSet {
    /// Whether detection `i` ended up a true positive.
    pub fn tp_flags(&self, n_dets: usize) -> Vec<bool> {
        let mut flags = vec![false; n_dets];
        for p in &self.pairs {
            flags[p.det] = true;
        }
        flags
    }
}

fn bev_distance(d: &Detection, g: &ObjectBox) -> f64 {
    (d.center.x - g.center.x).hypot(d.center.y - g.center.y)
}

/// Detection indices by descending score, ties by index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching in descending score order; each detection takes the
/// nearest still-unmatched GT within `threshold` (ties to the lower GT
/// index). Callers filter by class first.
pub fn match_by_center_distance(dets: &[Detection], gts: &[ObjectBox], threshold: f64) -> MatchSet {
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut unmatched_dets = Vec::new();
    for di in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let d = bev_distance(&dets[di], g);
            if d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((gi, d));
            }
        }
        match best {
            Some((gi, distance)) => {
                taken[gi] = true;
                pairs.push(MatchPair { det: di, gt: gi, distance });
            }
            None => unmatched_dets.push(di),
        }
    }
    let unmatched_gts = (0..gts.len()).filter(|&g| !taken[g]).collect();
    MatchSet {
        pairs,
        unmatched_dets,
        unmatched_gts,
        threshold,
    }
}

/// One frame's class-filtered detections and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [ObjectBox],
}

/// Precision/recall points after each detection in pooled score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Accumulated {
    /// TP flag per detection, pooled over frames and sorted by descending
    /// score (ties by frame, then detection index).
    tp: Vec<bool>,
    n_gt: usize,
}

fn accumulate(frames: &[FrameRef<'_>], threshold: f64) -> Accumulated {
    let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    for (fi, f) in frames.iter().enumerate() {
        n_gt += f.gts.len();
        let m = match_by_center_distance(f.dets, f.gts, threshold);
        let flags = m.tp_flags(f.dets.len());
        for (di, d) in f.dets.iter().enumerate() {
            scored.push((d.score, fi, di, flags[di]));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    Accumulated {
        tp: scored.into_iter().map(|s| s.3).collect(),
        n_gt,
    }
}

fn pr_curve(acc: &Accumulated) -> PrCurve {
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(acc.tp.len());
    let mut precision = Vec::with_capacity(acc.tp.len());
    for (k, &hit) in acc.tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(if acc.n_gt == 0 { 0.0 } else { tp as f64 / acc.n_gt as f64 });
        precision.push(tp as f64 / (k + 1) as f64);
    }
    PrCurve { recall, precision }
}

/// AP from the pooled TP sequence. Interpolated precision at recall R is the
/// best precision at any cutoff reaching recall ≥ R (0 if none); AP is the
/// mean over the grid points R ≥ 0.1 of max(p − 0.1, 0) / 0.9.
fn ap_from(acc: &Accumulated) -> f64 {
    if acc.n_gt == 0 {
        return 0.0;
    }
    // best[t] = best precision over cutoffs with exactly t true positives
    let mut best = vec![0.0f64; acc.n_gt + 1];
    let mut tp = 0usize;
    for (k, &hit) in acc.tp.iter().enumerate() {
        tp += hit as usize;
        let p = tp as f64 / (k + 1) as f64;
        if p > best[tp] {
            best[tp] = p;
        }
    }
    // envelope over tp counts from the top
    for t in (0..acc.n_gt).rev() {
        best[t] = best[t].max(best[t + 1]);
    }
    let first = (MIN_RECALL * RECALL_STEPS as f64).round() as usize + 1;
    let mut sum = 0.0;
    for k in first..=RECALL_STEPS {
        // smallest tp count with tp / n_gt ≥ k / 100, in integer arithmetic
        let t = (k * acc.n_gt).div_ceil(RECALL_STEPS);
        // normalizing per point keeps a perfect curve at exactly 1
        sum += (best[t] - MIN_PRECISION).max(0.0) / (1.0 - MIN_PRECISION);
    }
    sum / (RECALL_STEPS + 1 - first) as f64
}

/// AP of one class at one threshold over any number of frames.
pub fn average_precision(frames: &[FrameRef<'_>], threshold: f64) -> f64 {
    ap_from(&accumulate(frames, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpErrors {
    /// Mean BEV center distance, meters.
    pub ate: f64,
    /// Mean 1 − IoU of the boxes after aligning centers and yaw.
    pub ase: f64,
    /// Mean absolute yaw difference, radians.
    pub aoe: f64,
    /// Mean 2D velocity error, m/s.
    pub ave: f64,
    /// Attribute error; always 0 with matches (placeholder attribute).
    pub aae: f64,
}

impl TpErrors {
    pub const MAX_PENALTY: TpErrors = TpErrors {
        ate: 1.0,
        ase: 1.0,
        aoe: 1.0,
        ave: 1.0,
        aae: 1.0,
    };

    pub fn as_array(&self) -> [f64; 5] {
        [self.ate, self.ase, self.aoe, self.ave, self.aae]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            ate: a[0],
            ase: a[1],
            aoe: a[2],
            ave: a[3],
            aae: a[4],
        }
    }
}

/// IoU of two boxes sharing center and yaw.
pub fn aligned_iou(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    let inter: f64 = (0..3).map(|i| a[i].min(b[i])).product();
    let union = a.product() + b.product() - inter;
    inter / union
}

/// Absolute yaw difference in [0, π], or [0, π/2] when the class has no
/// distinguishable front.
pub fn yaw_error(det_yaw: f64, gt_yaw: f64, symmetric: bool) -> f64 {
    let d = wrap_angle(det_yaw - gt_yaw).abs();
    if symmetric {
        d.min(PI - d)
    } else {
        d
    }
}

fn pair_errors(d: &Detection, g: &ObjectBox) -> [f64; 5] {
    [
        bev_distance(d, g),
        1.0 - aligned_iou(&d.size, &g.size),
        yaw_error(d.yaw, g.yaw, g.class_label.is_symmetric()),
        (d.velocity - g.velocity).norm(),
        0.0,
    ]
}

fn mean_errors(sums: [f64; 5], n: usize) -> TpErrors {
    if n == 0 {
        return TpErrors::MAX_PENALTY;
    }
    TpErrors::from_array(sums.map(|s| s / n as f64))
}

/// Mean TP errors over the pairs of a match set; all 1 when it is empty.
pub fn tp_errors(matches: &MatchSet, dets: &[Detection], gts: &[ObjectBox]) -> TpErrors {
    let mut sums = [0.0; 5];
    for p in &matches.pairs {
        let e = pair_errors(&dets[p.det], &gts[p.gt]);
        for k in 0..5 {
            sums[k] += e[k];
        }
    }
    mean_errors(sums, matches.pairs.len())
}

/// NDS = (5·mAP + Σ (1 − min(1, e))) / 10.
pub fn nds(map: f64, errors: &TpErrors) -> f64 {
    let tp: f64 = errors.as_array().iter().map(|e| 1.0 - e.min(1.0)).sum();
    (5.0 * map + tp) / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub classes: Vec<ObjectClass>,
    /// Matching thresholds for AP, meters.
    pub thresholds: Vec<f64>,
    /// Matching threshold for the TP errors, meters.
    pub tp_threshold: f64,
    /// Keep the pooled PR curve of every (class, threshold) cell.
    pub keep_pr_curves: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classes: ObjectClass::ALL.to_vec(),
            thresholds: vec![0.5, 1.0, 2.0, 4.0],
            tp_threshold: 2.0,
            keep_pr_curves: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("eval config", "class list is empty"));
        }
        let mut seen = self.classes.clone();
        seen.sort_by_key(|c| c.index());
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::invalid("eval config", "duplicate class"));
        }
        if self.thresholds.is_empty() || !self.thresholds.iter().all(|t| *t > 0.0 && t.is_finite()) {
            return Err(Error::invalid("eval config", "thresholds must be positive"));
        }
        if !(self.tp_threshold > 0.0 && self.tp_threshold.is_finite()) {
            return Err(Error::invalid("eval config", "tp_threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApCell {
    pub class_label: ObjectClass,
    pub threshold: f64,
    pub ap: f64,
    /// False when the class has neither GT nor detections anywhere; such
    /// cells do not enter the mAP mean.
    pub included: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pr_curve: Option<PrCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTpErrors {
    pub class_label: ObjectClass,
    /// None when the class has no GT (excluded from the average).
    pub errors: Option<TpErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cells: Vec<ApCell>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub tp_errors: TpErrors,
    pub per_class_tp_errors: Vec<ClassTpErrors>,
    pub nds: f64,
    pub num_detections: usize,
    pub num_gts: usize,
    pub per_threshold: Vec<ThresholdCounts>,
    /// Set when no configured class has any GT; mAP and NDS are then 0.
    pub no_gt: bool,
}

impl EvalResult {
    pub fn ap(&self, class: ObjectClass, threshold: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.class_label == class && c.threshold == threshold)
            .map(|c| c.ap)
    }

    /// Mean AP of one class over the thresholds.
    pub fn class_ap(&self, class: ObjectClass) -> Option<f64> {
        let aps: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.class_label == class && c.included)
            .map(|c| c.ap)
            .collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// One evaluated frame: all detections and all GT boxes of a scene.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [ObjectBox],
}

/// Score a set of frames. Classes are evaluated independently; TP errors
/// are averaged over classes that have GT.
pub fn evaluate(frames: &[Frame<'_>], config: &EvalConfig) -> Result<EvalResult> {
    config.validate()?;
    let mut cells = Vec::new();
    let mut per_threshold: Vec<ThresholdCounts> = config
        .thresholds
        .iter()
        .map(|&threshold| ThresholdCounts {
            threshold,
            tp: 0,
            fp: 0,
            fn_: 0,
        })
        .collect();
    let mut per_class_tp_errors = Vec::new();
    let mut num_detections = 0;
    let mut num_gts = 0;

    for &class in &config.classes {
        let split: Vec<(Vec<Detection>, Vec<ObjectBox>)> = frames
            .iter()
            .map(|f| {
                (
                    f.dets.iter().filter(|d| d.class_label == class).cloned().collect(),
                    f.gts.iter().filter(|g| g.class_label == class).cloned().collect(),
                )
            })
            .collect();
        let refs: Vec<FrameRef<'_>> = split.iter().map(|(d, g)| FrameRef { dets: d, gts: g }).collect();
        let n_dets: usize = split.iter().map(|s| s.0.len()).sum();
        let n_gt: usize = split.iter().map(|s| s.1.len()).sum();
        num_detections += n_dets;
        num_gts += n_gt;

        for (ti, &threshold) in config.thresholds.iter().enumerate() {
            let acc = accumulate(&refs, threshold);
            let tp = acc.tp.iter().filter(|t| **t).count();
            let fp = acc.tp.len() - tp;
            let fn_ = acc.n_gt - tp;
            per_threshold[ti].tp += tp;
            per_threshold[ti].fp += fp;
            per_threshold[ti].fn_ += fn_;
            cells.push(ApCell {
                class_label: class,
                threshold,
                ap: ap_from(&acc),
                included: n_gt > 0 || n_dets > 0,
                tp,
                fp,
                fn_,
                pr_curve: config.keep_pr_curves.then(|| pr_curve(&acc)),
            });
        }

        let errors = (n_gt > 0).then(|| {
            let mut sums = [0.0; 5];
            let mut n = 0;
            for r in &refs {
                let m = match_by_center_distance(r.dets, r.gts, config.tp_threshold);
                for p in &m.pairs {
                    let e = pair_errors(&r.dets[p.det], &r.gts[p.gt]);
                    for k in 0..5 {
                        sums[k] += e[k];
                    }
                    n += 1;
                }
            }
            mean_errors(sums, n)
        });
        per_class_tp_errors.push(ClassTpErrors {
            class_label: class,
            errors,
        });
    }

    let included: Vec<f64> = cells.iter().filter(|c| c.included).map(|c| c.ap).collect();
    let map = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    let with_gt: Vec<TpErrors> = per_class_tp_errors.iter().filter_map(|c| c.errors).collect();
    let tp_errors = if with_gt.is_empty() {
        TpErrors::MAX_PENALTY
    } else {
        let mut sums = [0.0; 5];
        for e in &with_gt {
            for (s, v) in sums.iter_mut().zip(e.as_array()) {
                *s += v;
            }
        }
        mean_errors(sums, with_gt.len())
    };
    let no_gt = num_gts == 0;
    Ok(EvalResult {
        cells,
        map,
        tp_errors,
        per_class_tp_errors,
        nds: if no_gt { 0.0 } else { nds(map, &tp_errors) },
        num_detections,
        num_gts,
        per_threshold,
        no_gt,
    })
}
