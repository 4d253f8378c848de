//! Dense row-major image-shaped containers.

use crate::error::{Error, Result};

/// A `height × width` grid of values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel `(du, dv)` displacement in pixels.
pub type FlowMap = Map<[f64; 2]>;
/// Per-pixel depth in scene units.
pub type DepthMap = Map<f64>;
/// Per-pixel 3-vector, used for pose and log-uncertainty maps.
pub type Map3 = Map<[f64; 3]>;
/// Per-pixel boolean region.
pub type Mask = Map<bool>;

impl<T: Clone> Map<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Map<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "map data has {} entries, expected {}x{}={}",
                data.len(),
                height,
                width,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Map<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Map<U> {
        Map {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Copy of the `h × w` window whose top-left corner is `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> Map<T>
    where
        T: Clone,
    {
        assert!(row0 + h <= self.height && col0 + w <= self.width);
        Map::from_fn(h, w, |r, c| self.get(row0 + r, col0 + c).clone())
    }
}

pub(crate) fn ensure_same_shape<A, B>(a: &Map<A>, b: &Map<B>, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what}: shape mismatch {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )))
    }
}

impl DepthMap {
    /// Fails with a domain error naming the first pixel that is not a finite
    /// positive depth.
    pub fn check_positive(&self) -> Result<()> {
        for (i, &d) in self.data.iter().enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Domain {
                    row: i / self.width,
                    col: i % self.width,
                    msg: format!("depth must be finite and positive, got {d}"),
                });
            }
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }
}
