//! Pixel-wise motion hypotheses with log-variance maps.
//!
//! Every pixel gets its own 6-DoF fit over the `k_w × k_w` window centred on
//! it. The fit starts from the instantaneous motion-field linearisation
//! about the identity and re-linearises at the predicted target pixels with
//! Gauss-Newton steps (a left-composed increment on SE(3)), so that noiseless
//! rigid flow is recovered beyond first order.
//!
//! Uncertainty per channel `c` is `ln((σ² + ε)·C_cc)`, with `σ²` the mean
//! squared residual and `C = (JᵀJ + λI)⁻¹` at the final linearisation. With
//! `consensus` enabled, `σ²` additionally includes the squared disagreement
//! between the observed flow at the pixel and the flow predicted by the
//! dominant rigid motion of the image. A rigidly moving object is
//! fitted perfectly by its own window, so only a global reference can flag
//! its interior.

use nalgebra::{Matrix3, Matrix6, Rotation3, SMatrix, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rotation_to_euler, Intrinsics, MotionSE3, PixelGrid};
use crate::map::{DepthMap, FlowMap, Map, Map3};

/// Per-pixel `[A | B]`: flow response to `(φ, γ)` under small motion.
pub type MotionFieldDesign = SMatrix<f64, 2, 6>;

/// Log-variance bound applied to every uncertainty channel.
pub const LOG_VAR_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Odd window size `k_w ≥ 5`.
    pub window: usize,
    /// Tikhonov damping on the normal equations.
    pub damping: f64,
    /// Number of normal-equation solves per window. `1` is the plain
    /// linearised fit about the identity.
    pub solves: usize,
    /// Include the global-consensus residual in the uncertainty.
    pub consensus: bool,
    /// Flow residual (px) under which a pixel counts as an inlier of a
    /// consensus candidate.
    pub consensus_inlier_px: f64,
    /// Windows whose first normal matrix exceeds this condition number get
    /// a zero pose and maximal uncertainty.
    pub max_condition: f64,
    pub epsilon: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 7,
            damping: 1e-8,
            solves: 4,
            consensus: true,
            consensus_inlier_px: 0.05,
            max_condition: 1e12,
            epsilon: 1e-12,
        }
    }
}

impl EstimatorConfig {
    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }
}

/// Pixel-wise rotation/translation maps and their log-variance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelwisePose {
    /// Euler angles `(rx, ry, rz)` per pixel.
    pub rotation: Map3,
    /// Translation `(φx, φy, φz)` per pixel.
    pub translation: Map3,
    pub log_var_rotation: Map3,
    pub log_var_translation: Map3,
    /// Dominant motion used for the consensus residual, when enabled.
    pub consensus: Option<MotionSE3>,
    /// Number of windows that fell back to the degenerate-window output.
    pub degenerate_windows: usize,
}

impl PixelwisePose {
    pub fn height(&self) -> usize {
        self.rotation.height()
    }

    pub fn width(&self) -> usize {
        self.rotation.width()
    }

    /// Channel-mean of the translation log-variance.
    pub fn mean_log_var_translation(&self) -> Map<f64> {
        self.log_var_translation.map(|s| (s[0] + s[1] + s[2]) / 3.0)
    }

    pub fn mean_log_var_rotation(&self) -> Map<f64> {
        self.log_var_rotation.map(|s| (s[0] + s[1] + s[2]) / 3.0)
    }
}

/// Design matrix at pixel `(u, v)` with depth `z`.
///
/// `A = [[fx/Z, 0, −fx·x̄/Z], [0, fy/Z, −fy·ȳ/Z]]`,
/// `B = [[−fx·x̄ȳ, fx(1+x̄²), −fx·ȳ], [−fy(1+ȳ²), fy·x̄ȳ, fy·x̄]]`.
#[inline]
pub fn design_at(k: &Intrinsics, u: f64, v: f64, z: f64) -> MotionFieldDesign {
    let (x, y) = k.normalize(u, v);
    let (fx, fy) = (k.fx, k.fy);
    MotionFieldDesign::new(
        fx / z,
        0.0,
        -fx * x / z,
        -fx * x * y,
        fx * (1.0 + x * x),
        -fx * y,
        0.0,
        fy / z,
        -fy * y / z,
        -fy * (1.0 + y * y),
        fy * x * y,
        fy * x,
    )
}

pub fn motion_field_design(
    k: &Intrinsics,
    depth: &DepthMap,
    grid: PixelGrid,
) -> Result<Map<MotionFieldDesign>> {
    k.validate()?;
    grid.check_matches(depth, "depth")?;
    depth.check_positive()?;
    Ok(Map::from_fn(grid.height, grid.width, |r, c| {
        let (u, v) = grid.coord(r, c);
        design_at(k, u, v, *depth.get(r, c))
    }))
}

struct WindowFit {
    params: [f64; 6],
    cov_diag: [f64; 6],
    /// Mean squared residual per flow component.
    mse: f64,
}

struct Window<'a> {
    k: &'a Intrinsics,
    /// `(u, v, flow, point)` of every window pixel, point = `D·K⁻¹(u, v, 1)`.
    samples: Vec<(f64, f64, [f64; 2], Vector3<f64>)>,
}

impl Window<'_> {
    /// Residuals and Jacobian blocks at pose `(r, t)`; `None` when a point
    /// leaves the image plane's front side.
    fn linearize(
        &self,
        r: &Matrix3<f64>,
        t: &Vector3<f64>,
    ) -> Option<(Matrix6<f64>, Vector6<f64>, f64)> {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut sq = 0.0;
        let identity = *r == Matrix3::identity() && *t == Vector3::zeros();
        for (u, v, f, p) in &self.samples {
            if identity {
                let res = nalgebra::Vector2::new(f[0], f[1]);
                let j = design_at(self.k, *u, *v, p.z);
                jtj += j.transpose() * j;
                jtr += j.transpose() * res;
                sq += res.norm_squared();
                continue;
            }
            let moved = r * p + t;
            if !(moved.z > 1e-9) {
                return None;
            }
            let (pu, pv) = self.k.project(&moved);
            let res = nalgebra::Vector2::new(f[0] - (pu - u), f[1] - (pv - v));
            let j = design_at(self.k, pu, pv, moved.z);
            jtj += j.transpose() * j;
            jtr += j.transpose() * res;
            sq += res.norm_squared();
        }
        Some((jtj, jtr, sq / (2 * self.samples.len()) as f64))
    }

    fn fit(&self, cfg: &EstimatorConfig) -> Option<WindowFit> {
        let damp = Matrix6::identity() * cfg.damping;
        let mut rot = Matrix3::identity();
        let mut trans = Vector3::zeros();
        let (mut jtj, mut jtr, mut mse) = self.linearize(&rot, &trans)?;

        let eig = (jtj + damp).symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });
        if !(lo > 0.0) || hi / lo > cfg.max_condition {
            return None;
        }

        for _ in 0..cfg.solves.max(1) {
            let step = (jtj + damp).cholesky()?.solve(&jtr);
            let d_rot = Rotation3::new(Vector3::new(step[3], step[4], step[5])).into_inner();
            let next_rot = d_rot * rot;
            let next_trans = d_rot * trans + Vector3::new(step[0], step[1], step[2]);
            match self.linearize(&next_rot, &next_trans) {
                Some(lin) => {
                    rot = next_rot;
                    trans = next_trans;
                    (jtj, jtr, mse) = lin;
                }
                None => break,
            }
            if step.norm() < 1e-14 {
                break;
            }
        }

        let cov = (jtj + damp).try_inverse()?;
        let euler = rotation_to_euler(&rot);
        let params = [trans.x, trans.y, trans.z, euler.rx, euler.ry, euler.rz];
        let mut cov_diag = [0.0; 6];
        for (c, d) in cov_diag.iter_mut().enumerate() {
            *d = cov[(c, c)];
        }
        let fit = WindowFit {
            params,
            cov_diag,
            mse,
        };
        let finite = fit
            .params
            .iter()
            .chain(&fit.cov_diag)
            .all(|v| v.is_finite())
            && fit.mse.is_finite();
        finite.then_some(fit)
    }
}

fn log_var(variance: f64, cov_diag: f64, eps: f64) -> f64 {
    let s = ((variance + eps) * cov_diag).ln();
    if s.is_nan() {
        LOG_VAR_LIMIT
    } else {
        s.clamp(-LOG_VAR_LIMIT, LOG_VAR_LIMIT)
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Dominant rigid motion: among the per-component median and the best-fitting
/// window of every `kw × kw` tile, the candidate whose flow explains the most
/// pixels. Ties go to the earlier candidate.
fn consensus_motion(
    fits: &[Option<WindowFit>],
    h: usize,
    w: usize,
    kw: usize,
    cfg: &EstimatorConfig,
    residual_sq: &(dyn Fn(&MotionSE3) -> Result<Vec<f64>> + Sync),
) -> Result<MotionSE3> {
    let mut median_params = [0.0; 6];
    for (c, p) in median_params.iter_mut().enumerate() {
        let mut vals: Vec<f64> = fits.iter().flatten().map(|f| f.params[c]).collect();
        *p = median(&mut vals);
    }
    let mut candidates = vec![MotionSE3::from_params(&median_params)];
    for r0 in (0..h).step_by(kw) {
        for c0 in (0..w).step_by(kw) {
            let best = (r0..(r0 + kw).min(h))
                .flat_map(|r| (c0..(c0 + kw).min(w)).map(move |c| r * w + c))
                .filter_map(|i| fits[i].as_ref())
                .min_by(|a, b| a.mse.total_cmp(&b.mse));
            if let Some(f) = best {
                candidates.push(MotionSE3::from_params(&f.params));
            }
        }
    }
    let limit = 0.5 * cfg.consensus_inlier_px * cfg.consensus_inlier_px;
    let mut best = (0usize, 0usize);
    for (idx, m) in candidates.iter().enumerate() {
        let inliers = residual_sq(m)?.iter().filter(|&&e| e < limit).count();
        if inliers > best.0 || idx == 0 {
            best = (inliers, idx);
        }
    }
    Ok(candidates[best.1])
}

/// Pixel-wise pose and uncertainty maps from total flow and frame-t depth.
pub fn estimate_pixelwise(
    flow: &FlowMap,
    depth: &DepthMap,
    k: &Intrinsics,
    grid: PixelGrid,
    cfg: &EstimatorConfig,
) -> Result<PixelwisePose> {
    k.validate()?;
    grid.check_matches(flow, "flow")?;
    grid.check_matches(depth, "depth")?;
    depth.check_positive()?;
    let kw = cfg.window;
    if kw < 5 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and at least 5, got {kw}"
        )));
    }
    if kw > grid.height.min(grid.width) {
        return Err(Error::InvalidArgument(format!(
            "window {kw} exceeds image size {}x{}",
            grid.height, grid.width
        )));
    }
    if flow
        .as_slice()
        .iter()
        .any(|f| !(f[0].is_finite() && f[1].is_finite()))
    {
        return Err(Error::InvalidArgument("flow must be finite".into()));
    }

    let (h, w) = (grid.height, grid.width);
    let half = kw / 2;
    let points: Vec<Vector3<f64>> = (0..h * w)
        .map(|i| {
            let (u, v) = grid.coord(i / w, i % w);
            let (x, y) = k.normalize(u, v);
            let z = depth.as_slice()[i];
            Vector3::new(x * z, y * z, z)
        })
        .collect();

    let fits: Vec<Option<WindowFit>> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let r0 = r.saturating_sub(half).min(h - kw);
            let c0 = c.saturating_sub(half).min(w - kw);
            let mut samples = Vec::with_capacity(kw * kw);
            for rr in r0..r0 + kw {
                for cc in c0..c0 + kw {
                    let j = rr * w + cc;
                    let (u, v) = grid.coord(rr, cc);
                    samples.push((u, v, flow.as_slice()[j], points[j]));
                }
            }
            Window { k, samples }.fit(cfg)
        })
        .collect();

    let degenerate_windows = fits.iter().filter(|f| f.is_none()).count();

    let residual_sq = |m: &MotionSE3| -> Result<Vec<f64>> {
        let r = m.rotation_matrix()?;
        let t = m.translation;
        Ok((0..h * w)
            .into_par_iter()
            .map(|i| {
                let moved = r * points[i] + t;
                if !(moved.z > 1e-9) {
                    return 1e6;
                }
                let (u, v) = grid.coord(i / w, i % w);
                let (pu, pv) = k.project(&moved);
                let f = flow.as_slice()[i];
                let (du, dv) = (f[0] - (pu - u), f[1] - (pv - v));
                0.5 * (du * du + dv * dv)
            })
            .collect())
    };

    let consensus = if cfg.consensus && degenerate_windows < fits.len() {
        Some(consensus_motion(&fits, h, w, kw, cfg, &residual_sq)?)
    } else {
        None
    };

    let consensus_sq: Vec<f64> = match &consensus {
        Some(m) => residual_sq(m)?,
        None => vec![0.0; h * w],
    };

    let mut rotation = Vec::with_capacity(h * w);
    let mut translation = Vec::with_capacity(h * w);
    let mut lv_rot = Vec::with_capacity(h * w);
    let mut lv_trans = Vec::with_capacity(h * w);
    for (fit, extra) in fits.iter().zip(&consensus_sq) {
        match fit {
            Some(f) => {
                let var = f.mse + extra;
                let s: Vec<f64> = f
                    .cov_diag
                    .iter()
                    .map(|&c| log_var(var, c, cfg.epsilon))
                    .collect();
                translation.push([f.params[0], f.params[1], f.params[2]]);
                rotation.push([f.params[3], f.params[4], f.params[5]]);
                lv_trans.push([s[0], s[1], s[2]]);
                lv_rot.push([s[3], s[4], s[5]]);
            }
            None => {
                translation.push([0.0; 3]);
                rotation.push([0.0; 3]);
                lv_trans.push([LOG_VAR_LIMIT; 3]);
                lv_rot.push([LOG_VAR_LIMIT; 3]);
            }
        }
    }

    Ok(PixelwisePose {
        rotation: Map::from_vec(h, w, rotation)?,
        translation: Map::from_vec(h, w, translation)?,
        log_var_rotation: Map::from_vec(h, w, lv_rot)?,
        log_var_translation: Map::from_vec(h, w, lv_trans)?,
        consensus,
        degenerate_windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use crate::synthesis::rigid_flow;

    fn k() -> Intrinsics {
        Intrinsics::new(60.0, 70.0, 15.0, 17.0).unwrap()
    }

    #[test]
    fn design_at_principal_point() {
        let k = k();
        let z = 4.0;
        let d = design_at(&k, k.cx, k.cy, z);
        let expected = MotionFieldDesign::new(
            60.0 / 4.0,
            0.0,
            0.0,
            0.0,
            60.0,
            0.0, //
            0.0,
            70.0 / 4.0,
            0.0,
            -70.0,
            0.0,
            0.0,
        );
        assert!((d - expected).abs().max() < 1e-15);
    }

    #[test]
    fn doubling_depth_halves_translation_block() {
        let k = k();
        let a = design_at(&k, 3.0, 25.0, 2.0);
        let b = design_at(&k, 3.0, 25.0, 4.0);
        for r in 0..2 {
            for c in 0..3 {
                assert!((b[(r, c)] - 0.5 * a[(r, c)]).abs() < 1e-15);
            }
            for c in 3..6 {
                assert_eq!(b[(r, c)], a[(r, c)]);
            }
        }
    }

    #[test]
    fn design_is_first_order_rigid_flow() {
        let k = k();
        let grid = PixelGrid::new(32, 32);
        let depth = DepthMap::from_fn(32, 32, |r, c| 4.0 + 0.05 * r as f64 + 0.03 * c as f64);
        let design = motion_field_design(&k, &depth, grid).unwrap();
        let dirs = [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            [0.5, -0.3, 0.8, 0.2, -0.9, 0.4],
        ];
        for dir in dirs {
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let p: Vec<f64> = dir.iter().map(|v| v / n * 1e-4).collect();
            let m = MotionSE3::new(
                EulerAngles::new(p[3], p[4], p[5]),
                Vector3::new(p[0], p[1], p[2]),
            );
            let (f, _) = rigid_flow(&k, &depth, &m, grid, 0.1).unwrap();
            let pv = Vector6::from_column_slice(&p);
            for i in 0..f.len() {
                let lin = design.as_slice()[i] * pv;
                let exact = f.as_slice()[i];
                assert!((lin[0] - exact[0]).abs() < 1e-6);
                assert!((lin[1] - exact[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_flow_gives_zero_pose() {
        let k = k();
        let grid = PixelGrid::new(24, 24);
        let depth = DepthMap::from_fn(24, 24, |r, c| 3.0 + ((r * 7 + c * 3) % 5) as f64);
        let flow = FlowMap::filled(24, 24, [0.0; 2]);
        let est = estimate_pixelwise(&flow, &depth, &k, grid, &EstimatorConfig::default()).unwrap();
        assert!(est
            .rotation
            .as_slice()
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0)));
        assert!(est
            .translation
            .as_slice()
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn recovers_rigid_motion_on_planar_scene() {
        let k = k();
        let grid = PixelGrid::new(32, 32);
        let depth = DepthMap::from_fn(32, 32, |r, c| 5.0 + 0.1 * r as f64 - 0.04 * c as f64);
        let m = MotionSE3::new(
            EulerAngles::new(0.03, -0.04, 0.02),
            Vector3::new(0.2, -0.1, 0.15),
        );
        let (f, _) = rigid_flow(&k, &depth, &m, grid, 0.5).unwrap();
        let est = estimate_pixelwise(&f, &depth, &k, grid, &EstimatorConfig::default()).unwrap();
        let truth = m.params();
        let mut errs: Vec<f64> = (0..f.len())
            .map(|i| {
                let t = est.translation.as_slice()[i];
                let r = est.rotation.as_slice()[i];
                (0..3)
                    .map(|c| (t[c] - truth[c]).abs().max((r[c] - truth[3 + c]).abs()))
                    .fold(0.0, f64::max)
            })
            .collect();
        let med = median(&mut errs);
        assert!(med < 1e-6, "median error {med}");
    }

    #[test]
    fn rejects_bad_windows() {
        let grid = PixelGrid::new(16, 16);
        let d = DepthMap::filled(16, 16, 2.0);
        let f = FlowMap::filled(16, 16, [0.0; 2]);
        for w in [3, 6, 17] {
            let cfg = EstimatorConfig::default().with_window(w);
            assert!(matches!(
                estimate_pixelwise(&f, &d, &k(), grid, &cfg),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn ill_conditioned_windows_fall_back() {
        let grid = PixelGrid::new(16, 16);
        let d = DepthMap::filled(16, 16, 2.0);
        let f = FlowMap::filled(16, 16, [0.3, -0.2]);
        let cfg = EstimatorConfig {
            max_condition: 1.0,
            ..EstimatorConfig::default()
        };
        let est = estimate_pixelwise(&f, &d, &k(), grid, &cfg).unwrap();
        assert_eq!(est.degenerate_windows, 256);
        assert!(est
            .log_var_translation
            .as_slice()
            .iter()
            .all(|s| *s == [20.0; 3]));
        assert!(est.rotation.as_slice().iter().all(|s| *s == [0.0; 3]));
        assert!(est.consensus.is_none());
    }

    #[test]
    fn outputs_finite_on_wild_flow() {
        let grid = PixelGrid::new(16, 16);
        let d = DepthMap::from_fn(16, 16, |r, c| 0.6 + (r + c) as f64);
        let f = FlowMap::from_fn(16, 16, |r, c| {
            [
                ((r * 31 + c * 17) % 23) as f64 * 40.0 - 400.0,
                (r as f64 - c as f64) * 1e3,
            ]
        });
        let est = estimate_pixelwise(&f, &d, &k(), grid, &EstimatorConfig::default()).unwrap();
        for m in [
            &est.rotation,
            &est.translation,
            &est.log_var_rotation,
            &est.log_var_translation,
        ] {
            assert!(m.as_slice().iter().all(|v| v.iter().all(|x| x.is_finite())));
        }
        for s in est.log_var_translation.as_slice() {
            assert!(s.iter().all(|v| (-20.0..=20.0).contains(v)));
        }
    }
}
