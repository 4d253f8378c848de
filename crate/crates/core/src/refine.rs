//! Damped Gauss-Newton refinement of a global pose against a target flow.
//!
//! The residual at pixel `p` is `w_p · (F̃^ego(p) − F_target(p))` with the
//! reconstructed flow from the exact rigid-flow model. The cost is the sum of
//! squared residual components.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::PixelwisePose;
use crate::geometry::{Intrinsics, MotionSE3, PixelGrid};
use crate::map::{DepthMap, FlowMap, Map};
use crate::reduce::tree_sum;
use crate::selection::GlobalPose;
use crate::synthesis::rigid_flow;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Initial Levenberg damping.
    pub lambda0: f64,
    /// Multiplier applied on rejection, divisor on acceptance.
    pub lambda_factor: f64,
    pub step_tol: f64,
    pub cost_tol: f64,
    /// Central-difference step for the Jacobian.
    pub fd_step: f64,
    pub near_plane: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            lambda0: 1e-4,
            lambda_factor: 10.0,
            step_tol: 1e-10,
            cost_tol: 1e-12,
            fd_step: 1e-7,
            near_plane: 1e-6,
        }
    }
}

impl RefineConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.lambda0 > 0.0 && self.lambda_factor > 1.0 && self.fd_step > 0.0) {
            return Err(Error::InvalidConfig(
                "damping, damping factor and fd step must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub pose: GlobalPose,
    pub cost: f64,
    /// Outer iterations run.
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Cost after the initial evaluation and after every accepted step.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

/// Ego flow and transformed depth predicted by `pose`.
pub fn reconstruct_ego_flow(
    pose: &GlobalPose,
    k: &Intrinsics,
    depth: &DepthMap,
    grid: PixelGrid,
    near_plane: f64,
) -> Result<(FlowMap, DepthMap)> {
    rigid_flow(k, depth, &pose.to_motion(), grid, near_plane)
}

/// Residual weights from a translation log-variance map:
/// `exp(−(s̄(p) − min s̄)/2)`, i.e. `1/σ` normalised to a maximum of 1.
pub fn uncertainty_weights(pose: &PixelwisePose) -> Map<f64> {
    let s = pose.mean_log_var_translation();
    let min = s.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    s.map(|v| (-(v - min) / 2.0).exp())
}

struct Problem<'a> {
    target: &'a FlowMap,
    k: &'a Intrinsics,
    depth: &'a DepthMap,
    grid: PixelGrid,
    weights: Option<&'a Map<f64>>,
    near: f64,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64; 6]) -> Result<Vec<f64>> {
        let m = MotionSE3::from_params(p);
        let (flow, _) = rigid_flow(self.k, self.depth, &m, self.grid, self.near)?;
        let t = self.target.as_slice();
        Ok(flow
            .as_slice()
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, f)| {
                let w = self.weights.map_or(1.0, |w| w.as_slice()[i]);
                [w * (f[0] - t[i][0]), w * (f[1] - t[i][1])]
            })
            .collect())
    }

    fn cost(r: &[f64]) -> f64 {
        let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
        tree_sum(&sq)
    }

    /// Central-difference Jacobian columns; falls back to a one-sided
    /// difference when one side leaves the valid domain.
    fn jacobian(&self, p: &[f64; 6], r0: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
        (0..6)
            .map(|j| {
                let mut plus = *p;
                let mut minus = *p;
                plus[j] += h;
                minus[j] -= h;
                match (self.residuals(&plus), self.residuals(&minus)) {
                    (Ok(a), Ok(b)) => {
                        Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
                    }
                    (Ok(a), Err(_)) => Ok(a.iter().zip(r0).map(|(x, y)| (x - y) / h).collect()),
                    (Err(_), Ok(b)) => Ok(r0.iter().zip(&b).map(|(x, y)| (x - y) / h).collect()),
                    (Err(e), Err(_)) => Err(e),
                }
            })
            .collect()
    }
}

fn normal_equations(jac: &[Vec<f64>], r: &[f64]) -> (Matrix6<f64>, Vector6<f64>) {
    let mut a = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for i in 0..6 {
        for j in i..6 {
            let prod: Vec<f64> = jac[i].iter().zip(&jac[j]).map(|(x, y)| x * y).collect();
            a[(i, j)] = tree_sum(&prod);
            a[(j, i)] = a[(i, j)];
        }
        let prod: Vec<f64> = jac[i].iter().zip(r).map(|(x, y)| x * y).collect();
        g[i] = tree_sum(&prod);
    }
    (a, g)
}

/// Levenberg-damped Gauss-Newton on the reprojection residual.
pub fn refine_pose(
    init: &GlobalPose,
    target: &FlowMap,
    k: &Intrinsics,
    depth: &DepthMap,
    grid: PixelGrid,
    weights: Option<&Map<f64>>,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    grid.check_matches(target, "target flow")?;
    if let Some(w) = weights {
        grid.check_matches(w, "weights")?;
        if w.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
    }
    if !init.is_finite() {
        return Err(Error::InvalidArgument("initial pose must be finite".into()));
    }
    let problem = Problem {
        target,
        k,
        depth,
        grid,
        weights,
        near: cfg.near_plane,
    };

    let mut params = init.to_motion().params();
    let mut r = problem.residuals(&params)?;
    let mut cost = Problem::cost(&r);
    if !cost.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "initial cost is not finite ({cost})"
        )));
    }
    let mut lambda = cfg.lambda0;
    let mut history = vec![cost];
    let mut accepted = 0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iters {
        iterations += 1;
        let jac = problem.jacobian(&params, &r, cfg.fd_step)?;
        let (a, g) = normal_equations(&jac, &r);
        loop {
            let damped = a + Matrix6::identity() * lambda;
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&g),
                None => {
                    lambda *= cfg.lambda_factor;
                    continue;
                }
            };
            if step.norm() < cfg.step_tol {
                converged = true;
                break 'outer;
            }
            let mut trial = params;
            for (t, s) in trial.iter_mut().zip(step.iter()) {
                *t += s;
            }
            let trial_cost = problem
                .residuals(&trial)
                .ok()
                .map(|tr| (Problem::cost(&tr), tr))
                .filter(|(c, _)| c.is_finite());
            match trial_cost {
                Some((c, tr)) if c < cost => {
                    let rel = (cost - c) / cost;
                    params = trial;
                    r = tr;
                    cost = c;
                    history.push(c);
                    accepted += 1;
                    lambda = (lambda / cfg.lambda_factor).max(1e-15);
                    if rel < cfg.cost_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= cfg.lambda_factor;
                    if lambda > 1e16 {
                        converged = true;
                        break 'outer;
                    }
                }
            }
        }
    }

    Ok(RefineResult {
        pose: GlobalPose::from_motion(&MotionSE3::from_params(&params)),
        cost,
        iterations,
        accepted_steps: accepted,
        cost_history: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use nalgebra::Vector3;

    fn setup() -> (Intrinsics, DepthMap, PixelGrid) {
        let k = Intrinsics::new(40.0, 42.0, 15.5, 16.2).unwrap();
        let d = DepthMap::from_fn(32, 32, |r, c| {
            5.0 + 0.05 * r as f64 + 0.5 * ((c as f64) * 0.3).sin()
        });
        (k, d, PixelGrid::new(32, 32))
    }

    #[test]
    fn zero_pose_reconstructs_zero_flow() {
        let (k, d, g) = setup();
        let (f, _) = reconstruct_ego_flow(&GlobalPose::default(), &k, &d, g, 1e-6).unwrap();
        assert!(f.as_slice().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn gauge_fixed_point() {
        let (k, d, g) = setup();
        let q = GlobalPose {
            rotation: [0.02, -0.05, 0.01],
            translation: [0.3, -0.1, 0.2],
        };
        let (target, _) = reconstruct_ego_flow(&q, &k, &d, g, 1e-6).unwrap();
        let res = refine_pose(&q, &target, &k, &d, g, None, &RefineConfig::default()).unwrap();
        for c in 0..3 {
            assert!((res.pose.rotation[c] - q.rotation[c]).abs() < 1e-12);
            assert!((res.pose.translation[c] - q.translation[c]).abs() < 1e-12);
        }
        assert!(res.accepted_steps <= 1);
    }

    #[test]
    fn recovers_from_perturbation_monotonically() {
        let (k, d, g) = setup();
        let truth = MotionSE3::new(
            EulerAngles::new(0.03, 0.01, -0.04),
            Vector3::new(-0.2, 0.1, 0.3),
        );
        let gt = GlobalPose::from_motion(&truth);
        let (target, _) = reconstruct_ego_flow(&gt, &k, &d, g, 1e-6).unwrap();
        let init = GlobalPose {
            rotation: [0.05, -0.01, -0.02],
            translation: [-0.1, 0.0, 0.4],
        };
        let res = refine_pose(&init, &target, &k, &d, g, None, &RefineConfig::default()).unwrap();
        assert!(res.cost < 1e-12, "cost {}", res.cost);
        for w in res.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for c in 0..3 {
            assert!((res.pose.rotation[c] - gt.rotation[c]).abs() < 1e-6);
            assert!((res.pose.translation[c] - gt.translation[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_agrees_with_five_point_stencil() {
        let (k, d, g) = setup();
        let target = FlowMap::filled(32, 32, [0.0; 2]);
        let problem = Problem {
            target: &target,
            k: &k,
            depth: &d,
            grid: g,
            weights: None,
            near: 1e-6,
        };
        let p = [0.05, -0.02, 0.1, 0.01, 0.03, -0.02];
        let r0 = problem.residuals(&p).unwrap();
        let jac = problem.jacobian(&p, &r0, 1e-7).unwrap();
        let h = 1e-5;
        for j in 0..6 {
            let eval = |s: f64| {
                let mut q = p;
                q[j] += s;
                problem.residuals(&q).unwrap()
            };
            let (p2, p1, m1, m2) = (eval(2.0 * h), eval(h), eval(-h), eval(-2.0 * h));
            let rich: Vec<f64> = (0..r0.len())
                .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h))
                .collect();
            let num: f64 = jac[j]
                .iter()
                .zip(&rich)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = rich.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(num / den < 1e-3, "column {j}: {}", num / den);
        }
    }

    #[test]
    fn non_finite_init_rejected() {
        let (k, d, g) = setup();
        let target = FlowMap::filled(32, 32, [0.0; 2]);
        let init = GlobalPose {
            rotation: [f64::NAN, 0.0, 0.0],
            translation: [0.0; 3],
        };
        assert!(matches!(
            refine_pose(&init, &target, &k, &d, g, None, &RefineConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}
