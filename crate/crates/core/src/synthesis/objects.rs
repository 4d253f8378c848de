use rand::Rng;

use super::{rng_for, uniform, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::MotionSE3;
use crate::map::{DepthMap, Mask};

/// An independently moving planar object placed in front of the background.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub mask: Mask,
    /// Object depth is `background − depth_offset` on the mask.
    pub depth_offset: f64,
    pub motion: MotionSE3,
}

impl ObjectSpec {
    /// Frame-t depth of this object over the whole image; values outside the
    /// mask are the background and never used.
    pub fn depth_map(&self, background: &DepthMap) -> DepthMap {
        let mut d = background.clone();
        for (v, &m) in d.as_mut_slice().iter_mut().zip(self.mask.as_slice()) {
            if m {
                *v -= self.depth_offset;
            }
        }
        d
    }
}

/// Samples object count, elliptical masks and depth offsets. Motions are
/// left at identity and filled in by the motion stage.
pub fn sample_objects(
    seed: u64,
    background: &DepthMap,
    config: &SceneConfig,
) -> Result<Vec<ObjectSpec>> {
    let mut rng = rng_for(seed);
    let (h, w) = (background.height(), background.width());
    let [nlo, nhi] = config.object_count;
    let n = rng.random_range(nlo..=nhi);
    let scale = h.min(w) as f64;
    let [rlo, rhi] = config.object_radius_range;
    let [flo, fhi] = config.depth_offset_fraction;

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cu = uniform(&mut rng, 0.0, (w - 1) as f64);
        let cv = uniform(&mut rng, 0.0, (h - 1) as f64);
        let ru = uniform(&mut rng, rlo, rhi) * scale;
        let rv = uniform(&mut rng, rlo, rhi) * scale;
        let mut mask = Mask::from_fn(h, w, |r, c| {
            let du = (c as f64 - cu) / ru;
            let dv = (r as f64 - cv) / rv;
            du * du + dv * dv <= 1.0
        });
        if mask.count() == 0 {
            *mask.get_mut(cv.round() as usize, cu.round() as usize) = true;
        }
        let clearance = background
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .fold(f64::INFINITY, f64::min)
            - config.near_plane;
        if clearance <= 0.0 {
            return Err(Error::InvalidConfig(
                "background touches the near plane; no room to place objects".into(),
            ));
        }
        let depth_offset = uniform(&mut rng, flo, fhi) * clearance;
        out.push(ObjectSpec {
            mask,
            depth_offset,
            motion: MotionSE3::identity(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_non_empty_and_objects_above_near_plane() {
        let cfg = SceneConfig::default().with_objects(5, 5);
        let bg = DepthMap::from_fn(32, 32, |r, c| 3.0 + 0.05 * (r + c) as f64);
        for seed in 0..50 {
            let objs = sample_objects(seed, &bg, &cfg).unwrap();
            assert_eq!(objs.len(), 5);
            for o in &objs {
                assert!(o.mask.count() > 0);
                assert!(o.depth_offset > 0.0);
                let d = o.depth_map(&bg);
                for (i, &m) in o.mask.as_slice().iter().enumerate() {
                    if m {
                        assert!(d.as_slice()[i] >= cfg.near_plane);
                    }
                }
            }
        }
    }

    #[test]
    fn count_range_is_respected() {
        let cfg = SceneConfig::default().with_objects(1, 3);
        let bg = DepthMap::filled(16, 16, 5.0);
        for seed in 0..100 {
            let n = sample_objects(seed, &bg, &cfg).unwrap().len();
            assert!((1..=3).contains(&n));
        }
    }
}
