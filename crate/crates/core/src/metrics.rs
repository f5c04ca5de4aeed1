//! Camera-pose errors, masked PSNR/SSIM, region consistency and motion
//! magnitude.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Mask};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("rotation is not orthonormal")]
    NotOrthonormal,
    #[error("normalizer must be positive, got {0}")]
    BadNormalizer(f64),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("image {height}x{width} smaller than the {window}-tap window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rot_err: f64,
    pub trans_err: f64,
}

/// Geodesic angle between two rotations in degrees,
/// `acos((tr(R_gtᵀ R_est) − 1) / 2)` with the cosine clipped to `[−1, 1]`.
pub fn rot_err<T: Real>(r_gt: &Mat3<T>, r_est: &Mat3<T>) -> Result<T, MetricsError> {
    let tol = T::ortho_tolerance();
    if !r_gt.is_rotation(tol) || !r_est.is_rotation(tol) {
        return Err(MetricsError::NotOrthonormal);
    }
    let rel = r_gt.transpose() * *r_est;
    let two = T::lit(2.0);
    let cos = ((rel.trace() - T::one()) / two).max(-T::one()).min(T::one());
    Ok(cos.acos().to_degrees())
}

/// `‖t_gt − t_est‖ / normalizer`.
pub fn trans_err<T: Real>(t_gt: Vec3<T>, t_est: Vec3<T>, normalizer: T) -> Result<T, MetricsError> {
    if !(normalizer > T::zero()) {
        return Err(MetricsError::BadNormalizer(normalizer.to_f64_lossy()));
    }
    Ok((t_gt - t_est).norm() / normalizer)
}

/// Sum of distances between consecutive camera centers.
pub fn trajectory_length<T: Real>(centers: &[Vec3<T>]) -> T {
    centers.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn check_pair<T, M>(a: &Grid<T>, b: &Grid<T>, mask: &Grid<M>) -> Result<(), MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if mask.height != a.height || mask.width != a.width || mask.channels != 1 {
        return Err(MetricsError::Shape("mask must be single-channel and image-sized".into()));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` over masked pixels (all channels), signal range
/// `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Real>(a: &Grid<T>, b: &Grid<T>, mask: &Mask) -> Result<T, MetricsError> {
    check_pair(a, b, mask)?;
    // running mean: stays exact when every squared error is equal
    let mut mse = T::zero();
    let mut n = 0usize;
    for (p, &m) in mask.data.iter().enumerate() {
        if !m {
            continue;
        }
        let o = p * a.channels;
        for c in 0..a.channels {
            let d = a.data[o + c] - b.data[o + c];
            n += 1;
            mse += (d * d - mse) / T::from_usize_lossy(n);
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let cap = T::lit(PSNR_CAP_DB);
    if mse == T::zero() {
        return Ok(cap);
    }
    // same quantity as -10·log10(mse); going through the RMS keeps exact
    // decimal cases such as a uniform 0.1 offset at exactly 20 dB
    Ok((-T::lit(20.0) * mse.sqrt().log10()).min(cap))
}

/// SSIM constants: `K1 = 0.01`, `K2 = 0.03`, 11-tap Gaussian, `σ = 1.5`,
/// dynamic range 1.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_window<T: Real>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| T::lit(v / s)).collect()
}

/// Local SSIM for one channel at window center `(row, col)`.
fn local_ssim<T: Real>(a: &Grid<T>, b: &Grid<T>, ch: usize, row: usize, col: usize, w: &[T]) -> T {
    let half = SSIM_WINDOW / 2;
    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for (i, &wy) in w.iter().enumerate() {
        for (j, &wx) in w.iter().enumerate() {
            let wt = wy * wx;
            let y = row + i - half;
            let x = col + j - half;
            let va = *a.at(y, x, ch);
            let vb = *b.at(y, x, ch);
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
        }
    }
    let var_a = saa - ma * ma;
    let var_b = sbb - mb * mb;
    let cov = sab - ma * mb;
    let c1 = T::lit(SSIM_K1 * SSIM_K1);
    let c2 = T::lit(SSIM_K2 * SSIM_K2);
    let two = T::lit(2.0);
    ((two * ma * mb + c1) * (two * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
}

/// Mean local SSIM over all windows that fit inside the image and whose
/// center is masked, averaged over channels.
pub fn ssim<T: Real>(a: &Grid<T>, b: &Grid<T>, mask: &Mask) -> Result<T, MetricsError> {
    check_pair(a, b, mask)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            height: a.height,
            width: a.width,
            window: SSIM_WINDOW,
        });
    }
    let w = gaussian_window::<T>();
    let half = SSIM_WINDOW / 2;
    let mut total = T::zero();
    let mut n = 0usize;
    for row in half..a.height - half {
        for col in half..a.width - half {
            if !mask.get(row, col) {
                continue;
            }
            for ch in 0..a.channels {
                total += local_ssim(a, b, ch, row, col, &w);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(total / T::from_usize_lossy(n))
}

/// Pixel correspondences from frame `a` into frame `b`: for each pixel of
/// `a`, the continuous `(u, v)` in `b` or `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub height: usize,
    pub width: usize,
    pub targets: Vec<Option<(f64, f64)>>,
}

impl Correspondence {
    pub fn identity(height: usize, width: usize, covered: &Mask) -> Self {
        let targets = (0..height * width)
            .map(|i| {
                covered.data[i].then(|| ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5))
            })
            .collect();
        Self {
            height,
            width,
            targets,
        }
    }

    pub fn count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// Every target moved by `(du, dv)` pixels.
    pub fn shifted(&self, du: f64, dv: f64) -> Self {
        Self {
            targets: self
                .targets
                .iter()
                .map(|t| t.map(|(u, v)| (u + du, v + dv)))
                .collect(),
            ..self.clone()
        }
    }
}

/// One annotated region: source frame, target frame, correspondence.
#[derive(Clone, Copy, Debug)]
pub struct Region<'a, T> {
    pub frame_a: &'a Grid<T>,
    pub frame_b: &'a Grid<T>,
    pub correspondence: &'a Correspondence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub psnr: f64,
    /// `None` when no full SSIM window is centered on a written pixel.
    pub ssim: Option<f64>,
    pub pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub regions: Vec<RegionScore>,
    /// Means over regions; `None` when there are no regions.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

/// Places frame `a`'s pixels at their corresponding locations in `b`
/// (nearest pixel) and scores the written pixels against `b`. Unwritten
/// pixels keep `b`'s values so SSIM windows see `b`'s context.
pub fn score_region<T: Real>(region: &Region<'_, T>) -> Result<Option<RegionScore>, MetricsError> {
    let (a, b, corr) = (region.frame_a, region.frame_b, region.correspondence);
    if corr.height != a.height || corr.width != a.width {
        return Err(MetricsError::Shape("correspondence does not match frame a".into()));
    }
    let mut canvas = b.clone();
    let mut mask = Mask::new(b.height, b.width);
    for (i, t) in corr.targets.iter().enumerate() {
        let Some((u, v)) = *t else { continue };
        if !(u >= 0.0 && v >= 0.0) {
            continue;
        }
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        if col >= b.width || row >= b.height {
            continue;
        }
        canvas
            .pixel_mut(row, col)
            .copy_from_slice(a.pixel(i / a.width, i % a.width));
        mask.set(row, col, true);
    }
    let pixels = mask.count();
    if pixels == 0 {
        return Ok(None);
    }
    let p = psnr(&canvas, b, &mask)?.to_f64_lossy();
    let s = match ssim(&canvas, b, &mask) {
        Ok(s) => Some(s.to_f64_lossy()),
        // every written pixel lies in the border strip
        Err(MetricsError::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    Ok(Some(RegionScore { psnr: p, ssim: s, pixels }))
}

pub fn consistency_score<T: Real>(regions: &[Region<'_, T>]) -> Result<ConsistencyReport, MetricsError> {
    let mut scores = Vec::new();
    for r in regions {
        if let Some(s) = score_region(r)? {
            scores.push(s);
        }
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let psnr = mean(scores.iter().map(|s| s.psnr).collect());
    let ssim = mean(scores.iter().filter_map(|s| s.ssim).collect());
    Ok(ConsistencyReport {
        regions: scores,
        psnr,
        ssim,
    })
}

/// Mean L2 magnitude over every pixel of every `(H, W, 2)` flow field.
pub fn dynamic_score<T: Real>(flows: &[Grid<T>]) -> Result<T, MetricsError> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for f in flows {
        if f.channels != 2 {
            return Err(MetricsError::Shape(format!("flow has {} channels", f.channels)));
        }
        for px in f.data.chunks_exact(2) {
            sum += (px[0] * px[0] + px[1] * px[1]).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Ok(T::zero());
    }
    Ok(sum / T::from_usize_lossy(n))
}
