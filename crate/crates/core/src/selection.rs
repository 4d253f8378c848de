//! Patch-wise selection and softmax fusion of pixel-wise hypotheses.
//!
//! The (cropped) image is split into `h × w` patches of `k × k` pixels. In
//! each patch and for each channel independently, the pixel with the lowest
//! log-variance is selected; the selected values are then combined across
//! all patches with softmax weights of their log-variances.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::PixelwisePose;
use crate::geometry::{EulerAngles, MotionSE3};
use crate::map::Map3;

/// Sign inside the softmax exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightSign {
    /// `exp(−ũ)`: low uncertainty gets high weight.
    #[default]
    Negated,
    /// `exp(+ũ)` as typeset in the original weighting formula.
    AsPrinted,
}

impl WeightSign {
    fn factor(self) -> f64 {
        match self {
            WeightSign::Negated => -1.0,
            WeightSign::AsPrinted => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch: usize,
    /// Patch rows `h`.
    pub rows: usize,
    /// Patch columns `w`.
    pub cols: usize,
    /// Top-left corner of the centre crop.
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat pixel indices (into the uncropped map) of patch `(l, m)`, row-major.
    pub fn pixels(&self, l: usize, m: usize) -> impl Iterator<Item = usize> + '_ {
        let r0 = self.row0 + l * self.patch;
        let c0 = self.col0 + m * self.patch;
        (0..self.patch)
            .flat_map(move |dr| (0..self.patch).map(move |dc| (r0 + dr) * self.width + c0 + dc))
    }
}

/// Splits an `height × width` map into `k × k` patches, centre-cropping to the
/// largest multiple of `k` when needed.
pub fn partition(height: usize, width: usize, k: usize) -> Result<PatchGrid> {
    if k == 0 {
        return Err(Error::InvalidArgument("patch size must be >= 1".into()));
    }
    if k > height.min(width) {
        return Err(Error::InvalidArgument(format!(
            "patch size {k} exceeds image size {height}x{width}"
        )));
    }
    let rows = height / k;
    let cols = width / k;
    Ok(PatchGrid {
        patch: k,
        rows,
        cols,
        row0: (height - rows * k) / 2,
        col0: (width - cols * k) / 2,
        height,
        width,
    })
}

/// Per-patch, per-channel arg-min pixel index. Ties go to the first pixel in
/// row-major order within the patch.
pub fn select_pixels(u_map: &Map3, grid: &PatchGrid) -> Result<Vec<[usize; 3]>> {
    if u_map.height() != grid.height || u_map.width() != grid.width {
        return Err(Error::InvalidArgument(format!(
            "uncertainty map {}x{} does not match patch grid {}x{}",
            u_map.height(),
            u_map.width(),
            grid.height,
            grid.width
        )));
    }
    let u = u_map.as_slice();
    let mut out = Vec::with_capacity(grid.len());
    for l in 0..grid.rows {
        for m in 0..grid.cols {
            let mut best = [usize::MAX; 3];
            let mut best_val = [f64::INFINITY; 3];
            for p in grid.pixels(l, m) {
                for c in 0..3 {
                    if best[c] == usize::MAX || u[p][c] < best_val[c] {
                        best[c] = p;
                        best_val[c] = u[p][c];
                    }
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Softmax of `sign · values`, stabilised by subtracting the maximum.
pub fn softmax(values: &[f64], sign: WeightSign) -> Vec<f64> {
    let s = sign.factor();
    let max = values
        .iter()
        .map(|v| s * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (s * v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Fusion weights per patch and channel for one value/uncertainty map pair.
pub fn patch_weights(u_map: &Map3, selected: &[[usize; 3]], sign: WeightSign) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; selected.len()];
    for c in 0..3 {
        let u: Vec<f64> = selected.iter().map(|s| u_map.as_slice()[s[c]][c]).collect();
        for (o, w) in out.iter_mut().zip(softmax(&u, sign)) {
            o[c] = w;
        }
    }
    out
}

fn fuse(values: &Map3, u_map: &Map3, grid: &PatchGrid, sign: WeightSign) -> Result<[f64; 3]> {
    let selected = select_pixels(u_map, grid)?;
    let weights = patch_weights(u_map, &selected, sign);
    let mut out = [0.0; 3];
    for (s, w) in selected.iter().zip(&weights) {
        for c in 0..3 {
            out[c] += w[c] * values.as_slice()[s[c]][c];
        }
    }
    Ok(out)
}

/// Global camera motion `(γ̃, φ̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalPose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl GlobalPose {
    pub fn from_motion(m: &MotionSE3) -> Self {
        Self {
            rotation: m.rotation.to_array(),
            translation: [m.translation.x, m.translation.y, m.translation.z],
        }
    }

    pub fn to_motion(&self) -> MotionSE3 {
        MotionSE3::new(
            EulerAngles::from_array(self.rotation),
            Vector3::from(self.translation),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .iter()
            .chain(&self.translation)
            .all(|v| v.is_finite())
    }
}

/// Selection-module fusion of a pixel-wise pose into one global pose.
pub fn aggregate(pose: &PixelwisePose, grid: &PatchGrid, sign: WeightSign) -> Result<GlobalPose> {
    Ok(GlobalPose {
        rotation: fuse(&pose.rotation, &pose.log_var_rotation, grid, sign)?,
        translation: fuse(&pose.translation, &pose.log_var_translation, grid, sign)?,
    })
}

/// Plain mean of the pixel-wise maps, ignoring uncertainty.
pub fn naive_average(pose: &PixelwisePose) -> GlobalPose {
    let mean = |m: &Map3| {
        let vals = m.as_slice();
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let col: Vec<f64> = vals.iter().map(|v| v[c]).collect();
            *o = crate::reduce::tree_sum(&col) / vals.len() as f64;
        }
        out
    };
    GlobalPose {
        rotation: mean(&pose.rotation),
        translation: mean(&pose.translation),
    }
}
