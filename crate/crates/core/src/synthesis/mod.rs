//! Seeded synthetic scene generation.
//!
//! A scene is built in five steps: sample intrinsics, sample a background
//! depth field, sample camera and object motions, render rigid flow for each
//! motion, and composite everything into the total flow and next-frame depth.
//! Every random draw comes from a ChaCha stream keyed by `(seed, stage,
//! attempt)`, so a scene is a pure function of its seed and config.

mod composite;
mod depth;
mod objects;
mod rigid;

pub use composite::{compose_total_flow, Composite};
pub use depth::sample_depth;
pub use objects::{sample_objects, ObjectSpec};
pub use rigid::{rigid_flow, rigid_flow_masked};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, Intrinsics, MotionSE3, PixelGrid};
use crate::map::{DepthMap, FlowMap, Mask};
use nalgebra::Vector3;

/// Sampling ranges for every stage of scene generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// `fx, fy ~ U[lo·W, hi·W]`.
    pub focal_range: [f64; 2],
    /// `cx ~ U[lo·W, hi·W]`, `cy ~ U[lo·H, hi·H]`.
    pub principal_range: [f64; 2],
    /// Base plane depth `d0`.
    pub base_depth_range: [f64; 2],
    /// Noise amplitude as a fraction of `d0`.
    pub noise_amplitude: f64,
    pub noise_octaves: usize,
    /// Coarsest noise cell size in pixels, per pixel of focal length.
    pub noise_cell_per_focal: f64,
    pub near_plane: f64,
    pub camera_rotation_max: f64,
    pub camera_translation_max: f64,
    pub object_rotation_max: f64,
    pub object_translation_max: f64,
    /// Inclusive range of object counts.
    pub object_count: [usize; 2],
    /// Ellipse radii as a fraction of `min(H, W)`.
    pub object_radius_range: [f64; 2],
    /// Depth offset as a fraction of the background's clearance above the
    /// near plane inside the mask.
    pub depth_offset_fraction: [f64; 2],
    pub max_motion_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            focal_range: [0.5, 1.5],
            principal_range: [0.4, 0.6],
            base_depth_range: [4.0, 12.0],
            noise_amplitude: 0.25,
            noise_octaves: 4,
            noise_cell_per_focal: 0.25,
            near_plane: 0.5,
            camera_rotation_max: 0.1,
            camera_translation_max: 0.5,
            object_rotation_max: 0.2,
            object_translation_max: 1.0,
            object_count: [0, 5],
            object_radius_range: [0.05, 0.25],
            depth_offset_fraction: [0.2, 0.6],
            max_motion_attempts: 32,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} range [{}, {}] is degenerate",
            r[0], r[1]
        )))
    }
}

impl SceneConfig {
    pub fn with_objects(mut self, min: usize, max: usize) -> Self {
        self.object_count = [min, max];
        self
    }

    /// Scales the camera motion bounds; useful for small-motion suites.
    pub fn with_camera_motion(mut self, rotation_max: f64, translation_max: f64) -> Self {
        self.camera_rotation_max = rotation_max;
        self.camera_translation_max = translation_max;
        self
    }

    pub fn max_objects(&self) -> usize {
        self.object_count[1]
    }

    pub fn validate(&self) -> Result<()> {
        check_range("focal", self.focal_range)?;
        check_range("principal point", self.principal_range)?;
        check_range("base depth", self.base_depth_range)?;
        check_range("object radius", self.object_radius_range)?;
        check_range("depth offset fraction", self.depth_offset_fraction)?;
        if self.focal_range[0] <= 0.0 {
            return Err(Error::InvalidConfig("focal range must be positive".into()));
        }
        if !(self.near_plane.is_finite() && self.near_plane > 0.0) {
            return Err(Error::InvalidConfig("near plane must be positive".into()));
        }
        if self.base_depth_range[0] <= self.near_plane {
            return Err(Error::InvalidConfig(
                "base depth must lie beyond the near plane".into(),
            ));
        }
        for (name, v) in [
            ("noise amplitude", self.noise_amplitude),
            ("camera rotation", self.camera_rotation_max),
            ("camera translation", self.camera_translation_max),
            ("object rotation", self.object_rotation_max),
            ("object translation", self.object_translation_max),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} bound must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.camera_rotation_max > std::f64::consts::FRAC_PI_4
            || self.object_rotation_max > std::f64::consts::FRAC_PI_4
        {
            return Err(Error::InvalidConfig(
                "rotation bounds must not exceed pi/4".into(),
            ));
        }
        if !(self.noise_cell_per_focal.is_finite() && self.noise_cell_per_focal > 0.0) {
            return Err(Error::InvalidConfig(
                "noise cell size must be positive".into(),
            ));
        }
        if self.object_radius_range[0] <= 0.0 {
            return Err(Error::InvalidConfig(
                "object radius must be positive".into(),
            ));
        }
        if self.depth_offset_fraction[0] <= 0.0 || self.depth_offset_fraction[1] >= 1.0 {
            return Err(Error::InvalidConfig(
                "depth offset fraction must lie in (0, 1)".into(),
            ));
        }
        if self.object_count[0] > self.object_count[1] {
            return Err(Error::InvalidConfig(format!(
                "object count range {}..{} is empty",
                self.object_count[0], self.object_count[1]
            )));
        }
        if self.max_motion_attempts == 0 {
            return Err(Error::InvalidConfig(
                "max_motion_attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One moving object in a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub spec: ObjectSpec,
    /// Flow of this object's motion, zero outside its mask.
    pub flow: FlowMap,
}

/// A generated training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub seed: u64,
    /// Motion sub-seeds tried, the last one is the one that succeeded.
    pub seed_trail: Vec<u64>,
    pub intrinsics: Intrinsics,
    /// Observed frame-t depth (background with objects in front).
    pub depth_t: DepthMap,
    /// Splatted frame-t+1 depth.
    pub depth_t1: DepthMap,
    /// Pixels of `depth_t1` hit by at least one splat.
    pub depth_t1_valid: Mask,
    pub flow_total: FlowMap,
    pub flow_ego: FlowMap,
    pub objects: Vec<SceneObject>,
    pub camera_motion: MotionSE3,
}

impl SceneSample {
    pub fn grid(&self) -> PixelGrid {
        PixelGrid::new(self.depth_t.height(), self.depth_t.width())
    }

    /// Union of all object masks.
    pub fn object_mask(&self) -> Mask {
        let g = self.grid();
        Mask::from_fn(g.height, g.width, |r, c| {
            self.objects.iter().any(|o| *o.spec.mask.get(r, c))
        })
    }

    pub fn object_coverage(&self) -> f64 {
        self.object_mask().fraction()
    }
}

pub(crate) mod stage {
    pub const INTRINSICS: u64 = 1;
    pub const DEPTH: u64 = 2;
    pub const OBJECTS: u64 = 3;
    pub const MOTION: u64 = 4;
}

/// Mixes a scene seed with a stage tag and attempt counter (splitmix64
/// finaliser).
pub fn sub_seed(seed: u64, stage: u64, attempt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(attempt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height < 16 || width < 16 {
        return Err(Error::InvalidArgument(format!(
            "scene must be at least 16x16, got {height}x{width}"
        )));
    }
    Ok(())
}

pub fn sample_intrinsics(
    seed: u64,
    height: usize,
    width: usize,
    config: &SceneConfig,
) -> Result<Intrinsics> {
    check_size(height, width)?;
    config.validate()?;
    let mut rng = rng_for(seed);
    let w = width as f64;
    let h = height as f64;
    let [flo, fhi] = config.focal_range;
    let [plo, phi] = config.principal_range;
    let fx = uniform(&mut rng, flo * w, fhi * w);
    let fy = uniform(&mut rng, flo * w, fhi * w);
    let cx = uniform(&mut rng, plo * w, phi * w);
    let cy = uniform(&mut rng, plo * h, phi * h);
    Intrinsics::new(fx, fy, cx, cy)
}

fn sample_motion(rng: &mut ChaCha8Rng, rot_max: f64, trans_max: f64) -> MotionSE3 {
    let rx = uniform(rng, -rot_max, rot_max);
    let ry = uniform(rng, -rot_max, rot_max);
    let rz = uniform(rng, -rot_max, rot_max);
    let tx = uniform(rng, -trans_max, trans_max);
    let ty = uniform(rng, -trans_max, trans_max);
    let tz = uniform(rng, -trans_max, trans_max);
    MotionSE3::new(EulerAngles::new(rx, ry, rz), Vector3::new(tx, ty, tz))
}

/// Camera motion followed by `n_objects` object motions.
pub fn sample_motions(
    seed: u64,
    n_objects: usize,
    config: &SceneConfig,
) -> Result<(MotionSE3, Vec<MotionSE3>)> {
    if n_objects > config.max_objects() {
        return Err(Error::InvalidArgument(format!(
            "{n_objects} objects requested, config allows at most {}",
            config.max_objects()
        )));
    }
    let mut rng = rng_for(seed);
    let camera = sample_motion(
        &mut rng,
        config.camera_rotation_max,
        config.camera_translation_max,
    );
    let objects = (0..n_objects)
        .map(|_| {
            sample_motion(
                &mut rng,
                config.object_rotation_max,
                config.object_translation_max,
            )
        })
        .collect();
    Ok((camera, objects))
}

/// Runs the full generation workflow for one seed.
pub fn generate_scene(
    seed: u64,
    height: usize,
    width: usize,
    config: &SceneConfig,
) -> Result<SceneSample> {
    check_size(height, width)?;
    config.validate()?;
    let grid = PixelGrid::new(height, width);

    let k = sample_intrinsics(sub_seed(seed, stage::INTRINSICS, 0), height, width, config)?;
    let background = sample_depth(sub_seed(seed, stage::DEPTH, 0), height, width, &k, config)?;
    let specs = sample_objects(sub_seed(seed, stage::OBJECTS, 0), &background, config)?;

    // observed depth: objects in front of the background
    let mut depth_t = background.clone();
    for spec in &specs {
        for (i, d) in depth_t.as_mut_slice().iter_mut().enumerate() {
            if spec.mask.as_slice()[i] {
                *d = d.min(background.as_slice()[i] - spec.depth_offset);
            }
        }
    }

    let mut trail = Vec::new();
    for attempt in 0..config.max_motion_attempts {
        let motion_seed = sub_seed(seed, stage::MOTION, attempt as u64);
        trail.push(motion_seed);
        let (camera, object_motions) = sample_motions(motion_seed, specs.len(), config)?;

        let rendered = (|| -> Result<_> {
            let ego = rigid_flow(&k, &depth_t, &camera, grid, config.near_plane)?;
            let mut objs = Vec::with_capacity(specs.len());
            for (spec, motion) in specs.iter().zip(&object_motions) {
                let obj_depth = spec.depth_map(&background);
                let (flow, moved) = rigid_flow_masked(
                    &k,
                    &obj_depth,
                    motion,
                    grid,
                    config.near_plane,
                    Some(&spec.mask),
                )?;
                objs.push((spec.clone(), *motion, flow, moved));
            }
            Ok((ego, objs))
        })();

        let (ego, objs) = match rendered {
            Ok(v) => v,
            Err(Error::BehindCamera { .. }) => continue,
            Err(e) => return Err(e),
        };

        let object_refs: Vec<(&ObjectSpec, &FlowMap, &DepthMap)> =
            objs.iter().map(|(s, _, f, d)| (s, f, d)).collect();
        let composite = compose_total_flow((&ego.0, &ego.1), &object_refs)?;

        let objects = objs
            .into_iter()
            .map(|(mut spec, motion, flow, _)| {
                spec.motion = motion;
                SceneObject { spec, flow }
            })
            .collect();

        return Ok(SceneSample {
            seed,
            seed_trail: trail,
            intrinsics: k,
            depth_t,
            depth_t1: composite.depth_t1,
            depth_t1_valid: composite.valid,
            flow_total: composite.flow,
            flow_ego: ego.0,
            objects,
            camera_motion: camera,
        });
    }
    Err(Error::GenerationFailed {
        attempts: config.max_motion_attempts,
    })
}

/// Generates one scene per seed in parallel. Output order follows `seeds`.
pub fn generate_batch(
    seeds: &[u64],
    height: usize,
    width: usize,
    config: &SceneConfig,
) -> Vec<Result<SceneSample>> {
    seeds
        .par_iter()
        .map(|&s| generate_scene(s, height, width, config))
        .collect()
}
