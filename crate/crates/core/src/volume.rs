//! Geometry-aware dense 3D volumes.
//!
//! All volumes are stored z-major: the linear index of voxel `(z, y, x)` is
//! `(z * ny + y) * nx + x`. Spacing is given in micrometres per axis, in the
//! same `(z, y, x)` order as the shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    shape: [usize; 3],
    spacing: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidGeometry(format!(
                "all dimensions must be >= 1, got {shape:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        Ok(Self { shape, spacing })
    }

    /// Unit-spacing geometry.
    pub fn isotropic(shape: [usize; 3]) -> Result<Self> {
        Self::new(shape, [1.0; 3])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of a single voxel in µm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let plane = self.shape[1] * self.shape[2];
        let z = idx / plane;
        let r = idx % plane;
        [z, r / self.shape[2], r % self.shape[2]]
    }

    /// Index of `(z, y, x) + offset` if it lies inside the volume.
    #[inline]
    pub fn offset_index(&self, at: [usize; 3], offset: [isize; 3]) -> Option<usize> {
        let z = at[0] as isize + offset[0];
        let y = at[1] as isize + offset[1];
        let x = at[2] as isize + offset[2];
        if z < 0 || y < 0 || x < 0 {
            return None;
        }
        let (z, y, x) = (z as usize, y as usize, x as usize);
        if z >= self.shape[0] || y >= self.shape[1] || x >= self.shape[2] {
            return None;
        }
        Some(self.index(z, y, x))
    }

    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        Self::new(self.shape, spacing)
    }

    pub(crate) fn ensure_same_shape(&self, other: &VolumeGeometry, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::GeometryMismatch(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geometry: VolumeGeometry,
    data: Vec<T>,
}

/// Cell or instance labels, `0` is the medium.
pub type LabelVolume = Volume<u32>;
/// Scalar intensities.
pub type IntensityVolume = Volume<f32>;
/// Binary masks stored as 0/1 bytes.
pub type MaskVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    pub fn from_vec(geometry: VolumeGeometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                geometry.shape()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: VolumeGeometry, value: T) -> Self {
        Self {
            geometry,
            data: vec![value; geometry.len()],
        }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.geometry.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: T) {
        let i = self.geometry.index(z, y, x);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same data, new spacing.
    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        self.geometry = self.geometry.with_spacing(spacing)?;
        Ok(self)
    }

    /// Copy of the sub-volume starting at `origin` with the given shape.
    pub fn crop(&self, origin: [usize; 3], shape: [usize; 3]) -> Result<Self> {
        let full = self.shape();
        for axis in 0..3 {
            if shape[axis] == 0 || origin[axis] + shape[axis] > full[axis] {
                return Err(Error::OutOfBounds(format!(
                    "window origin {origin:?} shape {shape:?} exceeds volume shape {full:?}"
                )));
            }
        }
        let geometry = VolumeGeometry::new(shape, self.spacing())?;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                let start = self.geometry.index(origin[0] + z, origin[1] + y, origin[2]);
                data.extend_from_slice(&self.data[start..start + shape[2]]);
            }
        }
        Ok(Self { geometry, data })
    }

    /// Nearest-neighbour upsampling along z: output plane `z'` copies input
    /// plane `z' / factor`, and the z spacing shrinks by `factor`.
    pub fn upsample_z(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::arg("upsampling factor must be >= 1"));
        }
        let [nz, ny, nx] = self.shape();
        let [sz, sy, sx] = self.spacing();
        let geometry = VolumeGeometry::new([nz * factor, ny, nx], [sz / factor as f64, sy, sx])?;
        let plane = ny * nx;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz * factor {
            let src = z / factor;
            data.extend_from_slice(&self.data[src * plane..(src + 1) * plane]);
        }
        Ok(Self { geometry, data })
    }
}

impl LabelVolume {
    /// Sorted list of distinct non-zero labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Voxel count per label, indexed by label id (length `max_label + 1`).
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.max_label() as usize + 1];
        for &l in &self.data {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&l| l != 0).count()
    }
}

impl IntensityVolume {
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::arg("intensity volume contains non-finite values"))
        }
    }
}
