//! Dense 3rd/4th-order tensors and mode-n products.
//!
//! Layout is row-major with the last mode slowest, so a `Tensor3` with dims
//! `(I1, I2, S)` stores channel `s` as a contiguous `I1 x I2` row-major slab,
//! and a `Tensor4` with dims `(N, N, S, K)` stores atom `k` as a contiguous
//! block laid out like a `Tensor3`.

use crate::error::{Result, SctlError};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self {
            dims: (d0, d1, d2),
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(SctlError::DimMismatch(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: (usize, usize, usize), value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.0 * dims.1 * dims.2],
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
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
    fn index(&self, i0: usize, i1: usize, i2: usize) -> usize {
        debug_assert!(i0 < self.dims.0 && i1 < self.dims.1 && i2 < self.dims.2);
        (i2 * self.dims.0 + i0) * self.dims.1 + i1
    }

    #[inline]
    pub fn get(&self, i0: usize, i1: usize, i2: usize) -> f64 {
        self.data[self.index(i0, i1, i2)]
    }

    #[inline]
    pub fn set(&mut self, i0: usize, i1: usize, i2: usize, v: f64) {
        let idx = self.index(i0, i1, i2);
        self.data[idx] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous row-major `d0 x d1` slab for the third-mode index `i2`.
    pub fn slab(&self, i2: usize) -> &[f64] {
        let n = self.dims.0 * self.dims.1;
        &self.data[i2 * n..(i2 + 1) * n]
    }

    pub fn slab_mut(&mut self, i2: usize) -> &mut [f64] {
        let n = self.dims.0 * self.dims.1;
        &mut self.data[i2 * n..(i2 + 1) * n]
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        debug_assert_eq!(self.dims, other.dims);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor3 {
            dims: self.dims,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mode-n product with a matrix `m` of shape `J x I_n` (`mode` is 0-based).
    /// The result replaces mode `n` by `J`.
    pub fn mode_product(&self, m: &DMatrix<f64>, mode: usize) -> Result<Tensor3> {
        let (d0, d1, d2) = self.dims;
        let dim_n = [d0, d1, d2]
            .get(mode)
            .copied()
            .ok_or_else(|| SctlError::InvalidArgument(format!("mode {mode} out of range for Tensor3")))?;
        if m.ncols() != dim_n {
            return Err(SctlError::DimMismatch(format!(
                "mode-{mode} product: matrix has {} columns, tensor mode has length {dim_n}",
                m.ncols()
            )));
        }
        let j = m.nrows();
        let out_dims = match mode {
            0 => (j, d1, d2),
            1 => (d0, j, d2),
            _ => (d0, d1, j),
        };
        let mut out = Tensor3::zeros(out_dims.0, out_dims.1, out_dims.2);
        for i2 in 0..out_dims.2 {
            for i0 in 0..out_dims.0 {
                for i1 in 0..out_dims.1 {
                    let mut acc = 0.0;
                    match mode {
                        0 => {
                            for t in 0..d0 {
                                acc += self.get(t, i1, i2) * m[(i0, t)];
                            }
                        }
                        1 => {
                            for t in 0..d1 {
                                acc += self.get(i0, t, i2) * m[(i1, t)];
                            }
                        }
                        _ => {
                            for t in 0..d2 {
                                acc += self.get(i0, i1, t) * m[(i2, t)];
                            }
                        }
                    }
                    out.set(i0, i1, i2, acc);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: (usize, usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d0: usize, d1: usize, d2: usize, d3: usize) -> Self {
        Self {
            dims: (d0, d1, d2, d3),
            data: vec![0.0; d0 * d1 * d2 * d3],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 * dims.3 {
            return Err(SctlError::DimMismatch(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, i0: usize, i1: usize, i2: usize, i3: usize) -> usize {
        debug_assert!(
            i0 < self.dims.0 && i1 < self.dims.1 && i2 < self.dims.2 && i3 < self.dims.3
        );
        ((i3 * self.dims.2 + i2) * self.dims.0 + i0) * self.dims.1 + i1
    }

    #[inline]
    pub fn get(&self, i0: usize, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.index(i0, i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i0: usize, i1: usize, i2: usize, i3: usize, v: f64) {
        let idx = self.index(i0, i1, i2, i3);
        self.data[idx] = v;
    }

    /// Contiguous block for last-mode index `i3`, laid out like a `Tensor3`
    /// with dims `(d0, d1, d2)`.
    pub fn block(&self, i3: usize) -> &[f64] {
        let n = self.dims.0 * self.dims.1 * self.dims.2;
        &self.data[i3 * n..(i3 + 1) * n]
    }

    pub fn block_mut(&mut self, i3: usize) -> &mut [f64] {
        let n = self.dims.0 * self.dims.1 * self.dims.2;
        &mut self.data[i3 * n..(i3 + 1) * n]
    }

    /// Mode-4 product with a coefficient vector: `sum_k a[k] * block_k`.
    pub fn mode4_vec(&self, coeffs: &[f64]) -> Result<Tensor3> {
        if coeffs.len() != self.dims.3 {
            return Err(SctlError::DimMismatch(format!(
                "mode-4 product: {} coefficients for {} blocks",
                coeffs.len(),
                self.dims.3
            )));
        }
        let mut out = Tensor3::zeros(self.dims.0, self.dims.1, self.dims.2);
        for (k, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out.data_mut().iter_mut().zip(self.block(k)) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    /// Mode-n product with a matrix `m` of shape `J x I_n` (`mode` is 0-based).
    pub fn mode_product(&self, m: &DMatrix<f64>, mode: usize) -> Result<Tensor4> {
        let (d0, d1, d2, d3) = self.dims;
        let dims = [d0, d1, d2, d3];
        let dim_n = dims
            .get(mode)
            .copied()
            .ok_or_else(|| SctlError::InvalidArgument(format!("mode {mode} out of range for Tensor4")))?;
        if m.ncols() != dim_n {
            return Err(SctlError::DimMismatch(format!(
                "mode-{mode} product: matrix has {} columns, tensor mode has length {dim_n}",
                m.ncols()
            )));
        }
        let j = m.nrows();
        let mut out_dims = dims;
        out_dims[mode] = j;
        let mut out = Tensor4::zeros(out_dims[0], out_dims[1], out_dims[2], out_dims[3]);
        for i3 in 0..out_dims[3] {
            for i2 in 0..out_dims[2] {
                for i0 in 0..out_dims[0] {
                    for i1 in 0..out_dims[1] {
                        let mut acc = 0.0;
                        for t in 0..dim_n {
                            let src = match mode {
                                0 => self.get(t, i1, i2, i3),
                                1 => self.get(i0, t, i2, i3),
                                2 => self.get(i0, i1, t, i3),
                                _ => self.get(i0, i1, i2, t),
                            };
                            let row = [i0, i1, i2, i3][mode];
                            acc += src * m[(row, t)];
                        }
                        out.set(i0, i1, i2, i3, acc);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor3(dims: (usize, usize, usize), rng: &mut impl Rng) -> Tensor3 {
        let data = (0..dims.0 * dims.1 * dims.2)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor3::from_vec(dims, data).unwrap()
    }

    #[test]
    fn mode_product_identity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor3((3, 4, 5), &mut rng);
        for (mode, n) in [(0usize, 3usize), (1, 4), (2, 5)] {
            let eye = DMatrix::<f64>::identity(n, n);
            let out = t.mode_product(&eye, mode).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor3((2, 3, 4), &mut rng);
        let m = DMatrix::<f64>::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let out = t.mode_product(&m, 1).unwrap();
        assert_eq!(out.dims(), (2, 5, 4));
        // independent element-wise oracle
        for i0 in 0..2 {
            for j in 0..5 {
                for i2 in 0..4 {
                    let mut expect = 0.0;
                    for i1 in 0..3 {
                        expect += t.get(i0, i1, i2) * m[(j, i1)];
                    }
                    assert_relative_eq!(out.get(i0, j, i2), expect, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn mode_product_random_4x4x4_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor3((4, 4, 4), &mut rng);
        for mode in 0..3 {
            let m = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let out = t.mode_product(&m, mode).unwrap();
            for i0 in 0..4 {
                for i1 in 0..4 {
                    for i2 in 0..4 {
                        let mut expect = 0.0;
                        for s in 0..4 {
                            let v = match mode {
                                0 => t.get(s, i1, i2),
                                1 => t.get(i0, s, i2),
                                _ => t.get(i0, i1, s),
                            };
                            let row = [i0, i1, i2][mode];
                            expect += v * m[(row, s)];
                        }
                        let got = out.get(i0, i1, i2);
                        assert_relative_eq!(got, expect, max_relative = 1e-12, epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn mode4_vec_is_atom_linear_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Tensor4::zeros(2, 2, 3, 4);
        for v in d.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let a = [0.5, -1.0, 0.0, 2.0];
        let out = d.mode4_vec(&a).unwrap();
        for i0 in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..3 {
                    let expect: f64 = (0..4).map(|k| a[k] * d.get(i0, i1, i2, k)).sum();
                    assert_relative_eq!(out.get(i0, i1, i2), expect, epsilon = 1e-14);
                }
            }
        }
        // agrees with the general mode-n product against a 1 x K matrix
        let m = DMatrix::<f64>::from_row_slice(1, 4, &a);
        let via_mode = d.mode_product(&m, 3).unwrap();
        for i0 in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..3 {
                    assert_relative_eq!(
                        out.get(i0, i1, i2),
                        via_mode.get(i0, i1, i2, 0),
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn mode_product_rejects_dim_mismatch() {
        let t = Tensor3::zeros(3, 4, 5);
        let m = DMatrix::<f64>::zeros(2, 7);
        assert!(t.mode_product(&m, 1).is_err());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor3::from_vec((2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor4::from_vec((2, 2, 2, 2), vec![0.0; 15]).is_err());
    }
}
