use rand::Rng;

use super::{rng_for, uniform, SceneConfig};
use crate::error::Result;
use crate::geometry::Intrinsics;
use crate::map::DepthMap;

/// One octave of bilinear value noise on a square lattice with `cell`-pixel
/// spacing. Lattice values are uniform in `[-1, 1]`.
struct Octave {
    cell: f64,
    cols: usize,
    values: Vec<f64>,
}

impl Octave {
    fn new(rng: &mut impl Rng, cell: f64, height: usize, width: usize) -> Self {
        let cols = ((width - 1) as f64 / cell).floor() as usize + 2;
        let rows = ((height - 1) as f64 / cell).floor() as usize + 2;
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Self { cell, cols, values }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let gu = u / self.cell;
        let gv = v / self.cell;
        let iu = gu.floor() as usize;
        let iv = gv.floor() as usize;
        let fu = gu - iu as f64;
        let fv = gv - iv as f64;
        let at = |r: usize, c: usize| self.values[r * self.cols + c];
        let top = at(iv, iu) * (1.0 - fu) + at(iv, iu + 1) * fu;
        let bottom = at(iv + 1, iu) * (1.0 - fu) + at(iv + 1, iu + 1) * fu;
        top * (1.0 - fv) + bottom * fv
    }
}

/// Background depth: a plane at `d0 ~ U[base_depth_range]` plus band-limited
/// value noise of amplitude `noise_amplitude · d0`, clamped to the near plane.
///
/// The coarsest noise cell is `noise_cell_per_focal · fx` pixels wide, so
/// depth structure tracks the sampled focal length. Octave `o` halves the
/// cell and halves the weight; weights are normalised to sum to one.
pub fn sample_depth(
    seed: u64,
    height: usize,
    width: usize,
    k: &Intrinsics,
    config: &SceneConfig,
) -> Result<DepthMap> {
    super::check_size(height, width)?;
    config.validate()?;
    k.validate()?;
    let mut rng = rng_for(seed);
    let [dlo, dhi] = config.base_depth_range;
    let d0 = uniform(&mut rng, dlo, dhi);
    let amplitude = config.noise_amplitude * d0;
    let near = config.near_plane;

    if amplitude == 0.0 || config.noise_octaves == 0 {
        return Ok(DepthMap::filled(height, width, d0.max(near)));
    }

    let base_cell = config.noise_cell_per_focal * k.fx;
    let octaves: Vec<Octave> = (0..config.noise_octaves)
        .map(|o| {
            let cell = (base_cell / f64::powi(2.0, o as i32)).max(0.5);
            Octave::new(&mut rng, cell, height, width)
        })
        .collect();
    let weights: Vec<f64> = (0..octaves.len())
        .map(|o| f64::powi(0.5, o as i32))
        .collect();
    let total: f64 = weights.iter().sum();

    Ok(DepthMap::from_fn(height, width, |r, c| {
        let (u, v) = (c as f64, r as f64);
        let noise: f64 = octaves
            .iter()
            .zip(&weights)
            .map(|(oct, w)| w * oct.sample(u, v))
            .sum::<f64>()
            / total;
        (d0 + amplitude * noise).max(near)
    }))
}
