//! Basis-material decomposition by pixelwise nonnegative least squares,
//! plus the red/green/blue fusion view used for three-material phantoms.

use crate::error::{Result, SctlError};
use crate::phantom::MaterialBasis;
use crate::tensor::Tensor3;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    /// `(I, I, M)` per-material fraction maps, nonnegative.
    pub fractions: Tensor3,
    /// Per-pixel residual norm of the channel fit.
    pub residual: Vec<f64>,
}

/// Lawson-Hanson active-set NNLS for a small dense system.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = a.ncols();
    let mut passive = vec![false; m];
    let mut x = DVector::zeros(m);
    let mut w = a.transpose() * (b - a * &x);
    for _ in 0..(3 * m + 30) {
        let Some((t, &wt)) = w
            .iter()
            .enumerate()
            .filter(|&(i, _)| !passive[i])
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            break;
        };
        if wt <= 1e-12 {
            break;
        }
        passive[t] = true;
        loop {
            // least squares on the passive set
            let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(idx.iter());
            let z_sub = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            let mut z = DVector::zeros(m);
            for (pos, &i) in idx.iter().enumerate() {
                z[i] = z_sub[pos];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            // step toward z until the first passive variable hits zero
            let mut alpha = f64::INFINITY;
            for &i in &idx {
                if z[i] <= 0.0 {
                    let denom = x[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                x = z.map(|v| v.max(0.0));
                break;
            }
            x = &x + alpha * (&z - &x);
            for &i in &idx {
                if x[i] <= 1e-14 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
        w = a.transpose() * (b - a * &x);
    }
    x
}

/// Fit every pixel's channel vector as a nonnegative combination of the
/// basis attenuation columns.
pub fn decompose_materials(img: &Tensor3, basis: &MaterialBasis) -> Result<DecompositionResult> {
    basis.validate()?;
    let (i1, i2, s_count) = img.dims();
    let m_count = basis.materials();
    if s_count != basis.channels() {
        return Err(SctlError::DimMismatch(format!(
            "image has {s_count} channels but the basis has {}",
            basis.channels()
        )));
    }
    if s_count < m_count {
        return Err(SctlError::InvalidArgument(
            "decomposition needs at least as many channels as materials".into(),
        ));
    }
    let a = DMatrix::from_fn(s_count, m_count, |s, m| basis.mu[s][m]);
    let svals = a.clone().svd(false, false).singular_values;
    let cond = svals.max() / svals.min().max(f64::MIN_POSITIVE);
    if svals.min() <= 1e-12 * svals.max() {
        return Err(SctlError::Numerical(format!(
            "material basis is rank deficient (condition number {cond:.3e})"
        )));
    }

    let mut fractions = Tensor3::zeros(i1, i2, m_count);
    let mut residual = vec![0.0; i1 * i2];
    let mut b = DVector::zeros(s_count);
    for r in 0..i1 {
        for c in 0..i2 {
            for s in 0..s_count {
                b[s] = img.get(r, c, s);
            }
            let x = nnls(&a, &b);
            for m in 0..m_count {
                fractions.set(r, c, m, x[m]);
            }
            residual[r * i2 + c] = (&b - &a * x).norm();
        }
    }
    Ok(DecompositionResult {
        fractions,
        residual,
    })
}

/// Fuse exactly three fraction maps into an RGB image, normalizing each
/// channel by its own maximum (an all-zero map stays black).
pub fn color_fuse(d: &DecompositionResult) -> Result<Tensor3> {
    let (i1, i2, m_count) = d.fractions.dims();
    if m_count != 3 {
        return Err(SctlError::InvalidArgument(format!(
            "color fusion needs exactly 3 materials, got {m_count}"
        )));
    }
    let mut out = Tensor3::zeros(i1, i2, 3);
    for m in 0..3 {
        let max = d
            .fractions
            .slab(m)
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v));
        if max > 0.0 {
            for (o, &v) in out.slab_mut(m).iter_mut().zip(d.fractions.slab(m)) {
                *o = v / max;
            }
        }
    }
    Ok(out)
}
