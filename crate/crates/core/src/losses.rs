//! Pose error functions, heteroscedastic losses and reconstruction losses.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::estimator::PixelwisePose;
use crate::geometry::MotionSE3;
use crate::map::{ensure_same_shape, DepthMap, FlowMap, Map, Map3, Mask};
use crate::reduce::{tree_sum, tree_sum_by};

/// `‖x − y‖`.
pub fn rotation_error(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    (Vector3::from(*x) - Vector3::from(*y)).norm()
}

fn direction(v: &Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n == 0.0 {
        Vector3::zeros()
    } else {
        v / n
    }
}

/// `‖⟨x⟩ − ⟨y⟩‖ + (‖x‖ − ‖y‖)²` where `⟨v⟩` is the unit vector along `v`
/// and `⟨0⟩ = 0`.
pub fn translation_error(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    let (x, y) = (Vector3::from(*x), Vector3::from(*y));
    let dir = (direction(&x) - direction(&y)).norm();
    let mag = x.norm() - y.norm();
    dir + mag * mag
}

fn check_lengths(err: &[f64], s: &[f64]) -> Result<()> {
    if err.len() != s.len() {
        return Err(Error::InvalidArgument(format!(
            "error map has {} entries, log-variance map {}",
            err.len(),
            s.len()
        )));
    }
    if err.is_empty() {
        return Err(Error::InvalidArgument("empty error map".into()));
    }
    Ok(())
}

/// `(1/N) Σ exp(−s(p))·E(p) + s(p)`.
pub fn uncertainty_loss(err: &[f64], s: &[f64]) -> Result<f64> {
    check_lengths(err, s)?;
    let n = err.len();
    Ok(tree_sum_by(n, |i| (-s[i]).exp() * err[i] + s[i]) / n as f64)
}

/// Per-pixel `(∂L/∂E, ∂L/∂s)` of [`uncertainty_loss`].
pub fn uncertainty_loss_gradient(err: &[f64], s: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_lengths(err, s)?;
    let n = err.len() as f64;
    Ok(err
        .iter()
        .zip(s)
        .map(|(&e, &s)| {
            let a = (-s).exp();
            (a / n, (1.0 - a * e) / n)
        })
        .collect())
}

/// Mean over the 3 channels of a per-channel log-variance map.
pub fn channel_mean(m: &Map3) -> Map<f64> {
    m.map(|v| (v[0] + v[1] + v[2]) / 3.0)
}

/// Per-pixel rotation error against the ground-truth rotation.
pub fn rotation_error_map(pose: &PixelwisePose, gt: &MotionSE3) -> Map<f64> {
    let g = gt.rotation.to_array();
    pose.rotation.map(|r| rotation_error(&g, r))
}

/// Per-pixel translation error against the ground-truth translation.
pub fn translation_error_map(pose: &PixelwisePose, gt: &MotionSE3) -> Map<f64> {
    let g = [gt.translation.x, gt.translation.y, gt.translation.z];
    pose.translation.map(|t| translation_error(&g, t))
}

/// Mean per-pixel L2 flow discrepancy, optionally weighted per pixel.
pub fn flow_recon_loss(pred: &FlowMap, gt: &FlowMap, weights: Option<&Map<f64>>) -> Result<f64> {
    ensure_same_shape(pred, gt, "flow_recon_loss")?;
    if let Some(w) = weights {
        ensure_same_shape(pred, w, "flow weights")?;
    }
    let (p, g) = (pred.as_slice(), gt.as_slice());
    let n = p.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum = tree_sum_by(n, |i| {
        let w = weights.map_or(1.0, |w| w.as_slice()[i]);
        w * (p[i][0] - g[i][0]).hypot(p[i][1] - g[i][1])
    });
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    pub valid_pixels: usize,
}

impl DepthLoss {
    /// True when no pixel was valid and `value` is the 0 placeholder.
    pub fn is_empty(&self) -> bool {
        self.valid_pixels == 0
    }
}

/// Mean absolute depth error over valid pixels, optionally weighted.
pub fn depth_recon_loss(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &Mask,
    weights: Option<&Map<f64>>,
) -> Result<DepthLoss> {
    ensure_same_shape(pred, gt, "depth_recon_loss")?;
    ensure_same_shape(pred, valid, "depth validity mask")?;
    if let Some(w) = weights {
        ensure_same_shape(pred, w, "depth weights")?;
    }
    let valid_pixels = valid.count();
    if valid_pixels == 0 {
        return Ok(DepthLoss {
            value: 0.0,
            valid_pixels,
        });
    }
    let (p, g, v) = (pred.as_slice(), gt.as_slice(), valid.as_slice());
    let sum = tree_sum_by(p.len(), |i| {
        if v[i] {
            weights.map_or(1.0, |w| w.as_slice()[i]) * (p[i] - g[i]).abs()
        } else {
            0.0
        }
    });
    Ok(DepthLoss {
        value: sum / valid_pixels as f64,
        valid_pixels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_t: f64,
    pub l_d: f64,
    pub l_f: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_components(l_r: f64, l_t: f64, l_d: f64, l_f: f64) -> Self {
        Self {
            l_r,
            l_t,
            l_d,
            l_f,
            total: l_r + l_t + l_d + l_f,
        }
    }
}

/// Everything needed to score one prediction.
pub struct LossInputs<'a> {
    pub pose: &'a PixelwisePose,
    pub gt_motion: &'a MotionSE3,
    pub flow_pred: &'a FlowMap,
    pub flow_gt: &'a FlowMap,
    pub depth_pred: &'a DepthMap,
    pub depth_gt: &'a DepthMap,
    pub depth_valid: &'a Mask,
    pub flow_weights: Option<&'a Map<f64>>,
    pub depth_weights: Option<&'a Map<f64>>,
}

pub fn total_loss(inputs: &LossInputs<'_>) -> Result<LossBreakdown> {
    let e_r = rotation_error_map(inputs.pose, inputs.gt_motion);
    let e_t = translation_error_map(inputs.pose, inputs.gt_motion);
    let s_r = channel_mean(&inputs.pose.log_var_rotation);
    let s_t = channel_mean(&inputs.pose.log_var_translation);
    let l_r = uncertainty_loss(e_r.as_slice(), s_r.as_slice())?;
    let l_t = uncertainty_loss(e_t.as_slice(), s_t.as_slice())?;
    let l_d = depth_recon_loss(
        inputs.depth_pred,
        inputs.depth_gt,
        inputs.depth_valid,
        inputs.depth_weights,
    )?
    .value;
    let l_f = flow_recon_loss(inputs.flow_pred, inputs.flow_gt, inputs.flow_weights)?;
    Ok(LossBreakdown::from_components(l_r, l_t, l_d, l_f))
}

/// Sum of `values`, exposed for callers that want the same reduction order.
pub fn sum(values: &[f64]) -> f64 {
    tree_sum(values)
}
