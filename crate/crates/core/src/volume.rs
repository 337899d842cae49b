//! Dense 3D volumes with physical voxel spacing.

use alloc::vec::Vec;

use crate::error::{config_err, contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Voxel size in mm: `x` along width, `y` along height, `z` between slices.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spacing {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Spacing {
    pub const UNIT: Spacing = Spacing { x: 1.0, y: 1.0, z: 1.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let s = Self { x, y, z };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, v) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err!("spacing.{axis} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::UNIT
    }
}

/// `depth × height × width` voxels in slice-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<V> {
    pub extents: [usize; 3],
    pub spacing: Spacing,
    /// Number of label classes; 0 for intensity volumes.
    pub classes: usize,
    pub voxels: Vec<V>,
}

pub type LabelVolume = Volume<u8>;
pub type IntensityVolume = Volume<f32>;

impl<V: Copy> Volume<V> {
    pub fn depth(&self) -> usize {
        self.extents[0]
    }
    pub fn height(&self) -> usize {
        self.extents[1]
    }
    pub fn width(&self) -> usize {
        self.extents[2]
    }
    pub fn slice_len(&self) -> usize {
        self.extents[1] * self.extents[2]
    }

    pub fn slice(&self, z: usize) -> &[V] {
        let n = self.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn slices(&self) -> impl Iterator<Item = &[V]> {
        (0..self.depth()).map(move |z| self.slice(z))
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> V {
        self.voxels[(z * self.extents[1] + y) * self.extents[2] + x]
    }

    fn check_layout(&self) -> Result<()> {
        self.spacing.validate()?;
        let n = self.extents.iter().product::<usize>();
        if n != self.voxels.len() {
            return Err(contract_err!(
                "extents {:?} need {n} voxels, got {}",
                self.extents,
                self.voxels.len()
            ));
        }
        Ok(())
    }

    /// Whether both volumes share extents and spacing.
    pub fn same_grid<W: Copy>(&self, other: &Volume<W>) -> Result<()> {
        if self.extents != other.extents || self.spacing != other.spacing {
            return Err(contract_err!(
                "grid mismatch: {:?} @ {:?} vs {:?} @ {:?}",
                self.extents,
                self.spacing,
                other.extents,
                other.spacing
            ));
        }
        Ok(())
    }
}

impl LabelVolume {
    pub fn labels(extents: [usize; 3], spacing: Spacing, classes: usize, voxels: Vec<u8>) -> Result<Self> {
        let v = Self { extents, spacing, classes, voxels };
        v.validate()?;
        Ok(v)
    }

    /// Checks layout and that every label lies in `[0, classes)`.
    pub fn validate(&self) -> Result<()> {
        self.check_layout()?;
        if let Some(i) = self.voxels.iter().position(|&l| l as usize >= self.classes) {
            return Err(contract_err!(
                "voxel {i} has label {} outside [0, {})",
                self.voxels[i],
                self.classes
            ));
        }
        Ok(())
    }

    pub fn mask(&self, class_id: u8) -> Vec<bool> {
        self.voxels.iter().map(|&l| l == class_id).collect()
    }
}

impl IntensityVolume {
    pub fn intensities(extents: [usize; 3], spacing: Spacing, voxels: Vec<f32>) -> Result<Self> {
        let v = Self { extents, spacing, classes: 0, voxels };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_layout()
    }

    /// Slice `z` as a `[1, H, W]` model input.
    pub fn slice_tensor<T: Scalar>(&self, z: usize) -> Tensor<T> {
        let data = self.slice(z).iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::new(&[1, self.extents[1], self.extents[2]], data).expect("slice extents")
    }
}
