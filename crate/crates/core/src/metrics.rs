//! Evaluation metrics: pose L1 errors and end-point error.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::map::{ensure_same_shape, FlowMap};
use crate::reduce::tree_sum_by;
use crate::selection::GlobalPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Reduce {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpeNorm {
    /// `|Δu| + |Δv|` per pixel.
    #[default]
    L1,
    /// `sqrt(Δu² + Δv²)` per pixel.
    L2,
}

fn l1(a: &[f64; 3], b: &[f64; 3], reduce: L1Reduce) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    match reduce {
        L1Reduce::Mean => s / 3.0,
        L1Reduce::Sum => s,
    }
}

/// `(r_err, t_err)`: L1 distance of rotation and translation components.
pub fn pose_errors(pred: &GlobalPose, gt: &GlobalPose, reduce: L1Reduce) -> (f64, f64) {
    (
        l1(&pred.rotation, &gt.rotation, reduce),
        l1(&pred.translation, &gt.translation, reduce),
    )
}

pub fn epe(pred: &FlowMap, gt: &FlowMap, norm: EpeNorm) -> Result<f64> {
    ensure_same_shape(pred, gt, "epe")?;
    let (p, g) = (pred.as_slice(), gt.as_slice());
    if p.is_empty() {
        return Ok(0.0);
    }
    let sum = tree_sum_by(p.len(), |i| {
        let (du, dv) = (p[i][0] - g[i][0], p[i][1] - g[i][1]);
        match norm {
            EpeNorm::L1 => du.abs() + dv.abs(),
            EpeNorm::L2 => du.hypot(dv),
        }
    });
    Ok(sum / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene: String,
    /// Pixels.
    pub epe: f64,
    /// Radians.
    pub r_err: f64,
    /// Scene units.
    pub t_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub epe: String,
    pub r_err: String,
    pub t_err: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            epe: "px".into(),
            r_err: "rad".into(),
            t_err: "scene units".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epe: f64,
    pub r_err: f64,
    pub t_err: f64,
    pub l1_reduce: L1Reduce,
    pub epe_norm: EpeNorm,
    pub units: Units,
    pub scenes: Vec<SceneEval>,
}

impl EvalReport {
    /// Aggregates per-scene rows into means. An empty list gives zeros.
    pub fn from_scenes(scenes: Vec<SceneEval>, l1_reduce: L1Reduce, epe_norm: EpeNorm) -> Self {
        let n = scenes.len().max(1) as f64;
        let mean = |f: fn(&SceneEval) -> f64| scenes.iter().map(f).sum::<f64>() / n;
        Self {
            epe: mean(|s| s.epe),
            r_err: mean(|s| s.r_err),
            t_err: mean(|s| s.t_err),
            l1_reduce,
            epe_norm,
            units: Units::default(),
            scenes,
        }
    }
}
