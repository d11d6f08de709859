//! Patch extraction and aggregation over a spectral image.
//!
//! A `PatchGrid` enumerates all `N x N` spatial windows (across every
//! channel) at a fixed stride, in row-major order of the top-left corner.
//! Extraction and aggregation form an exact adjoint pair.

use crate::error::{Result, SctlError};
use crate::tensor::Tensor3;

#[derive(Debug, Clone)]
pub struct PatchGrid {
    patch_size: usize,
    stride: usize,
    image_dims: (usize, usize, usize),
    positions: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn new(patch_size: usize, stride: usize, image_dims: (usize, usize, usize)) -> Result<Self> {
        let (i1, i2, s) = image_dims;
        if patch_size == 0 || stride == 0 {
            return Err(SctlError::InvalidArgument(
                "patch size and stride must be positive".into(),
            ));
        }
        if patch_size > i1 || patch_size > i2 || s == 0 {
            return Err(SctlError::InvalidArgument(format!(
                "patch size {patch_size} does not fit image dims {image_dims:?}"
            )));
        }
        let mut positions = Vec::new();
        let mut r1 = 0;
        while r1 + patch_size <= i1 {
            let mut r2 = 0;
            while r2 + patch_size <= i2 {
                positions.push((r1, r2));
                r2 += stride;
            }
            r1 += stride;
        }
        Ok(Self {
            patch_size,
            stride,
            image_dims,
            positions,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        self.image_dims
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn num_patches(&self) -> usize {
        self.positions.len()
    }

    fn check_image(&self, x: &Tensor3) -> Result<()> {
        if x.dims() != self.image_dims {
            return Err(SctlError::DimMismatch(format!(
                "image dims {:?} do not match grid dims {:?}",
                x.dims(),
                self.image_dims
            )));
        }
        Ok(())
    }

    fn check_position(&self, pos: (usize, usize)) -> Result<()> {
        let (i1, i2, _) = self.image_dims;
        if pos.0 + self.patch_size > i1 || pos.1 + self.patch_size > i2 {
            return Err(SctlError::InvalidArgument(format!(
                "patch at {pos:?} does not fit inside image dims {:?}",
                self.image_dims
            )));
        }
        Ok(())
    }

    /// Extract the `N x N x S` block whose top-left spatial corner is `pos`.
    pub fn extract(&self, x: &Tensor3, pos: (usize, usize)) -> Result<Tensor3> {
        self.check_image(x)?;
        self.check_position(pos)?;
        let n = self.patch_size;
        let s_count = self.image_dims.2;
        let mut patch = Tensor3::zeros(n, n, s_count);
        for s in 0..s_count {
            for a in 0..n {
                for b in 0..n {
                    patch.set(a, b, s, x.get(pos.0 + a, pos.1 + b, s));
                }
            }
        }
        Ok(patch)
    }

    /// Add one patch into an image-shaped accumulator at `pos` (the adjoint
    /// of extraction for a single position).
    pub fn add_patch_into(&self, acc: &mut Tensor3, pos: (usize, usize), patch: &Tensor3) -> Result<()> {
        self.check_image(acc)?;
        self.check_position(pos)?;
        let n = self.patch_size;
        if patch.dims() != (n, n, self.image_dims.2) {
            return Err(SctlError::DimMismatch(format!(
                "patch dims {:?} do not match grid patch shape",
                patch.dims()
            )));
        }
        for s in 0..self.image_dims.2 {
            for a in 0..n {
                for b in 0..n {
                    let v = acc.get(pos.0 + a, pos.1 + b, s) + patch.get(a, b, s);
                    acc.set(pos.0 + a, pos.1 + b, s, v);
                }
            }
        }
        Ok(())
    }

    /// Sum of all patches placed at the grid positions, in grid order.
    pub fn aggregate(&self, patches: &[Tensor3]) -> Result<Tensor3> {
        if patches.len() != self.positions.len() {
            return Err(SctlError::DimMismatch(format!(
                "{} patches for {} grid positions",
                patches.len(),
                self.positions.len()
            )));
        }
        let (i1, i2, s) = self.image_dims;
        let mut acc = Tensor3::zeros(i1, i2, s);
        for (pos, patch) in self.positions.iter().zip(patches) {
            self.add_patch_into(&mut acc, *pos, patch)?;
        }
        Ok(acc)
    }

    /// Per-voxel count of covering patches; identical across channels.
    pub fn coverage(&self) -> Tensor3 {
        let (i1, i2, s) = self.image_dims;
        let mut acc = Tensor3::zeros(i1, i2, s);
        for &(r1, r2) in &self.positions {
            for a in 0..self.patch_size {
                for b in 0..self.patch_size {
                    for ch in 0..s {
                        let v = acc.get(r1 + a, r2 + b, ch) + 1.0;
                        acc.set(r1 + a, r2 + b, ch, v);
                    }
                }
            }
        }
        acc
    }
}
