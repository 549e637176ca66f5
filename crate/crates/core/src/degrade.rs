//! Sensor occlusion operators.
//!
//! Camera soiling: given an image `I` and a binary mask `M` (1 = occluded),
//! the occluded image is
//!
//! ```text
//! I' = I ⊙ (1 − M) + G_σ ∗ (I ⊙ M)
//! ```
//!
//! applied independently to every feature channel. The Gaussian kernel is
//! truncated at radius ⌈3σ⌉, renormalized to unit mass, and the image is
//! zero-padded at the borders.
//!
//! LiDAR dropout keeps `round(N · (1 − r))` points chosen uniformly at random
//! without replacement.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::sensors::{FeatureImage, PointCloud};

/// Relative tolerance on realized mask coverage.
pub const COVERAGE_REL_TOL: f64 = 0.10;

/// Binary occlusion mask, 1 = occluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoilMask {
    pub grid: Array2<u8>,
}

impl SoilMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            grid: Array2::zeros((height, width)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.dim()
    }

    /// Fraction of occluded pixels.
    pub fn coverage(&self) -> f64 {
        let ones = self.grid.iter().filter(|v| **v != 0).count();
        ones as f64 / self.grid.len().max(1) as f64
    }

    /// Loads a single-channel (or convertible) PNG/PGM; any nonzero pixel is
    /// occluded.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::format(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        let grid = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
            u8::from(img.get_pixel(c as u32, r as u32).0[0] != 0)
        });
        Ok(Self { grid })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.shape();
        let img = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
            image::Luma([self.grid[(r as usize, c as usize)] * 255])
        });
        img.save(path).map_err(|e| Error::format(path, e))
    }

    /// Nearest-neighbour resampling to `(height, width)`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        let (h, w) = self.shape();
        let grid = Array2::from_shape_fn((height, width), |(r, c)| {
            let sr = ((r as f64 + 0.5) * h as f64 / height as f64) as usize;
            let sc = ((c as f64 + 0.5) * w as f64 / width as f64) as usize;
            self.grid[(sr.min(h - 1), sc.min(w - 1))]
        });
        Self { grid }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Procedural {
        coverage: f64,
        blob_count: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraDegradeSpec {
    /// Gaussian standard deviation, pixels.
    pub sigma: f64,
    pub mask_source: MaskSource,
}

impl CameraDegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("camera degrade spec", "sigma must be positive"));
        }
        if let MaskSource::Procedural { coverage, .. } = self.mask_source {
            if !(0.0..=1.0).contains(&coverage) {
                return Err(Error::invalid("camera degrade spec", "coverage must be in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Materializes the mask for an image of `shape`. File masks of a
    /// different size are resampled to fit.
    pub fn mask(&self, shape: (usize, usize)) -> Result<SoilMask> {
        self.validate()?;
        match &self.mask_source {
            MaskSource::Procedural {
                coverage,
                blob_count,
                seed,
            } => generate_soiling_mask(shape, *coverage, *blob_count, *seed),
            MaskSource::File { path } => {
                let mask = SoilMask::load(path)?;
                Ok(if mask.shape() == shape {
                    mask
                } else {
                    mask.resized(shape.0, shape.1)
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarDegradeSpec {
    /// Dropout ratio in [0, 1].
    pub r: f64,
    pub seed: u64,
}

impl LidarDegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::invalid("lidar degrade spec", format!("r = {} outside [0, 1]", self.r)));
        }
        Ok(())
    }
}

struct Blob {
    row: f64,
    col: f64,
    /// Inverse covariance of the ellipse (row/col coordinates).
    inv: [f64; 3],
}

impl Blob {
    fn random(rng: &mut impl Rng, row: f64, col: f64, radius: f64) -> Self {
        let a = radius * rng.random_range(0.6..1.6);
        let b = radius * rng.random_range(0.4..1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
        Self {
            row,
            col,
            inv: [c * c * ia + s * s * ib, c * s * (ia - ib), s * s * ia + c * c * ib],
        }
    }

    /// Log of the blob's smooth bump: −½ (squared ellipse radius).
    fn log_bump(&self, r: f64, c: f64) -> f64 {
        let (dr, dc) = (r - self.row, c - self.col);
        -0.5 * (self.inv[0] * dr * dr + 2.0 * self.inv[1] * dr * dc + self.inv[2] * dc * dc)
    }
}

/// Procedural soiling mask: a sum of randomly placed, randomly scaled and
/// rotated smooth ellipses, thresholded so that exactly
/// `round(coverage · H · W)` pixels are set. Deterministic in the arguments.
pub fn generate_soiling_mask(
    shape: (usize, usize),
    coverage: f64,
    blob_count: usize,
    seed: u64,
) -> Result<SoilMask> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("soiling mask", "empty shape"));
    }
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::invalid("soiling mask", format!("coverage {coverage} outside [0, 1]")));
    }
    if coverage == 0.0 {
        return Ok(SoilMask::zeros(h, w));
    }
    if coverage == 1.0 {
        return Ok(SoilMask {
            grid: Array2::ones((h, w)),
        });
    }
    if blob_count == 0 {
        return Err(Error::invalid("soiling mask", "blob_count must be >= 1 when coverage > 0"));
    }

    let mut rng = seeds::rng(seed);
    let total = (h * w) as f64;
    let radius = (coverage * total / blob_count as f64 / std::f64::consts::PI).sqrt().max(1.0);
    let mut blobs = Vec::new();
    for _ in 0..blob_count {
        let row = rng.random_range(0.0..h as f64);
        let col = rng.random_range(0.0..w as f64);
        // each blob is a main lobe plus two satellites for an irregular outline
        blobs.push(Blob::random(&mut rng, row, col, radius));
        for _ in 0..2 {
            let dr = rng.random_range(-0.8..0.8) * radius;
            let dc = rng.random_range(-0.8..0.8) * radius;
            blobs.push(Blob::random(&mut rng, row + dr, col + dc, 0.6 * radius));
        }
    }

    // log-sum-exp keeps the field strictly ordered far from every blob
    let field = Array2::from_shape_fn((h, w), |(r, c)| {
        let (r, c) = (r as f64 + 0.5, c as f64 + 0.5);
        let logs: Vec<f64> = blobs.iter().map(|b| b.log_bump(r, c)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
    });

    let target = (coverage * total).round() as usize;
    let mut order: Vec<usize> = (0..h * w).collect();
    let flat = field.as_slice().expect("standard layout");
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let mut grid = Array2::<u8>::zeros((h, w));
    {
        let cells = grid.as_slice_mut().expect("standard layout");
        for &i in &order[..target] {
            cells[i] = 1;
        }
    }
    let mask = SoilMask { grid };
    let realized = mask.coverage();
    if (realized - coverage).abs() > COVERAGE_REL_TOL * coverage {
        return Err(Error::CoverageInfeasible {
            requested: coverage,
            realized,
        });
    }
    Ok(mask)
}

/// Truncated, unit-mass 1D Gaussian taps for offsets `-R..=R`, R = ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Zero-padded 1D convolution of every lane along `axis`.
fn convolve_axis(src: ArrayView2<f64>, mut dst: ArrayViewMut2<f64>, kernel: &[f64], axis: Axis) {
    let radius = (kernel.len() / 2) as isize;
    for (src_lane, mut dst_lane) in src.lanes(axis).into_iter().zip(dst.lanes_mut(axis)) {
        let n = src_lane.len() as isize;
        for i in 0..n {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                let j = i + k as isize - radius;
                if (0..n).contains(&j) {
                    acc += tap * src_lane[j as usize];
                }
            }
            dst_lane[i as usize] = acc;
        }
    }
}

/// Separable Gaussian blur with zero padding.
pub fn gaussian_blur(plane: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    let kernel = gaussian_kernel(sigma);
    let mut tmp = Array2::zeros(plane.dim());
    convolve_axis(plane, tmp.view_mut(), &kernel, Axis(1));
    let mut out = Array2::zeros(plane.dim());
    convolve_axis(tmp.view(), out.view_mut(), &kernel, Axis(0));
    out
}

/// Soils every feature channel of `image` under `mask`. The depth oracle is
/// passed through untouched.
pub fn apply_camera_occlusion(image: &FeatureImage, mask: &SoilMask, sigma: f64) -> Result<FeatureImage> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("camera occlusion", "sigma must be positive"));
    }
    let (h, w) = image.shape();
    if mask.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![mask.shape().0, mask.shape().1],
        });
    }
    let mut out = image.clone();
    if mask.grid.iter().all(|m| *m == 0) {
        return Ok(out);
    }
    let m = mask.grid.mapv(|v| if v != 0 { 1.0 } else { 0.0 });
    for (src, mut dst) in image
        .grid
        .axis_iter(Axis(2))
        .zip(out.grid.axis_iter_mut(Axis(2)))
    {
        let masked = &src * &m;
        let blurred = gaussian_blur(masked.view(), sigma);
        ndarray::Zip::from(&mut dst)
            .and(&src)
            .and(&m)
            .and(&blurred)
            .for_each(|o, &i, &mv, &b| *o = i * (1.0 - mv) + b);
    }
    Ok(out)
}

/// Number of points kept at ratio `r`: `N (1 − r)` rounded half-up. A
/// relative slack of 1e-9 absorbs binary representation error in decimal
/// ratios such as 0.3.
pub fn retained_count(n: usize, r: f64) -> usize {
    let exact = n as f64 * (1.0 - r);
    let kept = (exact + 0.5 + 1e-9 * exact.max(1.0)).floor() as usize;
    kept.min(n)
}

/// Uniform random point dropout. Retained points keep their original
/// relative order and are bit-identical to the input. For a fixed seed the
/// retained sets are nested: a larger `r` keeps a subset of what a smaller
/// `r` keeps.
pub fn lidar_dropout(cloud: &PointCloud, spec: &LidarDegradeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let n = cloud.len();
    let keep = retained_count(n, spec.r);
    if keep == n {
        return Ok(cloud.clone());
    }
    // partial Fisher–Yates: the first `keep` slots are a uniform sample
    let mut rng = seeds::rng(spec.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..keep {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..keep].to_vec();
    chosen.sort_unstable();
    Ok(PointCloud {
        points: chosen.into_iter().map(|i| cloud.points[i]).collect(),
    })
}
