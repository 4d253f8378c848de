use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, MotionSE3, PixelGrid};
use crate::map::{DepthMap, FlowMap, Mask};

/// Rigid flow of a single motion over a depth map.
///
/// For every pixel `X' = r(γ)·D(p)·K⁻¹(u, v, 1) + φ`; the flow is the
/// projection of `X'` minus `(u, v)` and the returned depth is `X'_z`.
/// The identity motion short-circuits to an exactly zero flow.
pub fn rigid_flow(
    k: &Intrinsics,
    depth: &DepthMap,
    motion: &MotionSE3,
    grid: PixelGrid,
    near_plane: f64,
) -> Result<(FlowMap, DepthMap)> {
    rigid_flow_masked(k, depth, motion, grid, near_plane, None)
}

/// [`rigid_flow`] restricted to `mask`: pixels outside get zero flow and keep
/// their input depth, and are exempt from the near-plane check.
pub fn rigid_flow_masked(
    k: &Intrinsics,
    depth: &DepthMap,
    motion: &MotionSE3,
    grid: PixelGrid,
    near_plane: f64,
    mask: Option<&Mask>,
) -> Result<(FlowMap, DepthMap)> {
    k.validate()?;
    grid.check_matches(depth, "depth")?;
    if let Some(m) = mask {
        grid.check_matches(m, "mask")?;
    }
    depth.check_positive()?;
    if motion.is_identity() {
        return Ok((
            FlowMap::filled(grid.height, grid.width, [0.0; 2]),
            depth.clone(),
        ));
    }
    let r = motion.rotation_matrix()?;
    let t = motion.translation;
    let width = grid.width;

    let per_pixel: Vec<([f64; 2], f64)> = depth
        .as_slice()
        .par_iter()
        .enumerate()
        .map(|(i, &z)| {
            if let Some(m) = mask {
                if !m.as_slice()[i] {
                    return ([0.0, 0.0], z);
                }
            }
            let (u, v) = grid.coord(i / width, i % width);
            let (xn, yn) = k.normalize(u, v);
            let moved = r * Vector3::new(xn * z, yn * z, z) + t;
            let (pu, pv) = k.project(&moved);
            ([pu - u, pv - v], moved.z)
        })
        .collect();

    for (i, (_, z)) in per_pixel.iter().enumerate() {
        let inside = mask.is_none_or(|m| m.as_slice()[i]);
        if inside && !(*z >= near_plane) {
            return Err(Error::BehindCamera {
                row: i / width,
                col: i % width,
                depth: *z,
                near: near_plane,
            });
        }
    }

    let (flow, moved): (Vec<_>, Vec<_>) = per_pixel.into_iter().unzip();
    Ok((
        FlowMap::from_vec(grid.height, grid.width, flow)?,
        DepthMap::from_vec(grid.height, grid.width, moved)?,
    ))
}
