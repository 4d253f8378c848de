use std::collections::VecDeque;

use super::ObjectSpec;
use crate::error::Result;
use crate::map::{ensure_same_shape, DepthMap, FlowMap, Map, Mask};

/// Output of [`compose_total_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub flow: FlowMap,
    pub depth_t1: DepthMap,
    /// Pixels of `depth_t1` that received a splat (the rest are hole-filled).
    pub valid: Mask,
    /// Winning source per pixel: `None` for the ego (background) layer,
    /// `Some(i)` for object `i`.
    pub owner: Map<Option<usize>>,
}

/// Composites ego and object layers.
///
/// Each pixel takes the flow of the nearest frame-t source: any object whose
/// mask covers it beats the background, and between objects the larger depth
/// offset (nearer surface) wins, ties going to the lower index. The next
/// frame depth is forward-splatted per winning source pixel with a z-buffer
/// and holes are filled from the nearest splat in 8-connected BFS order.
pub fn compose_total_flow(
    ego: (&FlowMap, &DepthMap),
    objects: &[(&ObjectSpec, &FlowMap, &DepthMap)],
) -> Result<Composite> {
    let (ego_flow, ego_depth) = ego;
    ensure_same_shape(ego_flow, ego_depth, "ego layer")?;
    for (spec, flow, depth) in objects {
        ensure_same_shape(ego_flow, &spec.mask, "object mask")?;
        ensure_same_shape(ego_flow, *flow, "object flow")?;
        ensure_same_shape(ego_flow, *depth, "object depth")?;
    }
    let (h, w) = (ego_flow.height(), ego_flow.width());
    let n = h * w;

    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, slot) in owner.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, (spec, _, _)) in objects.iter().enumerate() {
            if spec.mask.as_slice()[i] && best.is_none_or(|(_, off)| spec.depth_offset > off) {
                best = Some((j, spec.depth_offset));
            }
        }
        *slot = best.map(|(j, _)| j);
    }

    let mut flow = ego_flow.clone();
    let mut moved = ego_depth.as_slice().to_vec();
    for (i, o) in owner.iter().enumerate() {
        if let Some(j) = *o {
            flow.as_mut_slice()[i] = objects[j].1.as_slice()[i];
            moved[i] = objects[j].2.as_slice()[i];
        }
    }

    // forward splat, nearest transformed depth wins; equal depth keeps the
    // earlier source pixel
    let mut zbuf = vec![f64::INFINITY; n];
    for i in 0..n {
        let (r, c) = (i / w, i % w);
        let f = flow.as_slice()[i];
        let tu = (c as f64 + f[0]).round();
        let tv = (r as f64 + f[1]).round();
        if tu >= 0.0 && tv >= 0.0 && tu < w as f64 && tv < h as f64 {
            let t = tv as usize * w + tu as usize;
            if moved[i] < zbuf[t] {
                zbuf[t] = moved[i];
            }
        }
    }
    let valid: Vec<bool> = zbuf.iter().map(|z| z.is_finite()).collect();

    let depth_t1 = if valid.iter().any(|&v| v) {
        fill_holes(h, w, &zbuf, &valid)
    } else {
        moved.clone()
    };

    Ok(Composite {
        flow,
        depth_t1: DepthMap::from_vec(h, w, depth_t1)?,
        valid: Mask::from_vec(h, w, valid)?,
        owner: Map::from_vec(h, w, owner)?,
    })
}

fn fill_holes(h: usize, w: usize, values: &[f64], valid: &[bool]) -> Vec<f64> {
    let mut out = values.to_vec();
    let mut seen = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if !seen[j] {
                    seen[j] = true;
                    out[j] = out[i];
                    queue.push_back(j);
                }
            }
        }
    }
    out
}
