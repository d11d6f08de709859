//! Image quality metrics: RMSE, windowed SSIM, and a feature-similarity
//! index built from log-Gabor phase congruency and Scharr gradients.

use crate::error::{Result, SctlError};
use crate::fft::fft2;
use crate::tensor::Tensor3;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

/// Root-mean-square difference between two equally sized images.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(SctlError::DimMismatch(format!(
            "rmse inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Mean local SSIM over all fully interior 8x8 windows with stride 1.
/// `dynamic_range` sets the stabilization constants `C1 = (0.01 R)^2` and
/// `C2 = (0.03 R)^2`.
pub fn ssim(a: &[f64], b: &[f64], rows: usize, cols: usize, dynamic_range: f64) -> Result<f64> {
    const WIN: usize = 8;
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(SctlError::DimMismatch("ssim image size mismatch".into()));
    }
    if rows < WIN || cols < WIN {
        return Err(SctlError::InvalidArgument(
            "ssim needs at least an 8x8 image".into(),
        ));
    }
    if dynamic_range <= 0.0 {
        return Err(SctlError::InvalidArgument(
            "ssim dynamic range must be positive".into(),
        ));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let np = (WIN * WIN) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - WIN {
        for c0 in 0..=cols - WIN {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for r in r0..r0 + WIN {
                for c in c0..c0 + WIN {
                    let x = a[r * cols + c];
                    let y = b[r * cols + c];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            }
            let mx = sx / np;
            let my = sy / np;
            let vx = sxx / np - mx * mx;
            let vy = syy / np - my * my;
            let cxy = sxy / np - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Log-Gabor filter bank settings for the phase-congruency map inside
/// [`fsim`]. Defaults follow the common 4-scale, 4-orientation convention.
#[derive(Debug, Clone)]
pub struct FsimParams {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub scale_mult: f64,
    pub sigma_on_f: f64,
    pub theta_sigma: f64,
    /// Similarity constants for the phase-congruency and gradient terms,
    /// on a 0..255 intensity scale.
    pub t1: f64,
    pub t2: f64,
}

impl Default for FsimParams {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 4,
            min_wavelength: 6.0,
            scale_mult: 2.0,
            sigma_on_f: 0.55,
            theta_sigma: PI / 4.0 / 1.2,
            t1: 0.85,
            t2: 160.0,
        }
    }
}

/// Phase congruency map: per orientation, the ratio of the norm of the
/// summed even/odd log-Gabor responses to the summed response magnitudes,
/// averaged over orientations.
fn phase_congruency(img: &[f64], rows: usize, cols: usize, p: &FsimParams) -> Vec<f64> {
    let n = rows * cols;
    let mut spectrum: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, rows, cols, false);

    // centered frequency coordinates in cycles per sample
    let freq = |i: usize, len: usize| -> f64 {
        let i = i as isize;
        let len_i = len as isize;
        let k = if i <= len_i / 2 { i } else { i - len_i };
        k as f64 / len as f64
    };

    let mut pc = vec![0.0; n];
    let mut even = vec![Complex64::default(); n];
    for o in 0..p.orientations {
        let angle = o as f64 * PI / p.orientations as f64;
        let (sa, ca) = angle.sin_cos();
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_a = vec![0.0; n];
        for s in 0..p.scales {
            let wavelength = p.min_wavelength * p.scale_mult.powi(s as i32);
            let f0 = 1.0 / wavelength;
            let log_sig = 2.0 * p.sigma_on_f.ln().powi(2);
            for r in 0..rows {
                let fy = freq(r, rows);
                for c in 0..cols {
                    let fx = freq(c, cols);
                    let radius = (fx * fx + fy * fy).sqrt();
                    let idx = r * cols + c;
                    if radius == 0.0 {
                        even[idx] = Complex64::default();
                        continue;
                    }
                    let radial = (-(radius / f0).ln().powi(2) / log_sig).exp();
                    // angular distance via sine/cosine differences
                    let theta = fy.atan2(fx);
                    let ds = theta.sin() * ca - theta.cos() * sa;
                    let dc = theta.cos() * ca + theta.sin() * sa;
                    let dtheta = ds.atan2(dc).abs();
                    let spread = (-dtheta * dtheta / (2.0 * p.theta_sigma * p.theta_sigma)).exp();
                    even[idx] = spectrum[idx] * (radial * spread);
                }
            }
            fft2(&mut even, rows, cols, true);
            for i in 0..n {
                let e = even[i].re;
                let od = even[i].im;
                sum_e[i] += e;
                sum_o[i] += od;
                sum_a[i] += (e * e + od * od).sqrt();
            }
        }
        for i in 0..n {
            let energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt();
            pc[i] += energy / (sum_a[i] + 1e-8);
        }
    }
    for v in pc.iter_mut() {
        *v /= p.orientations as f64;
    }
    pc
}

/// Scharr gradient magnitude with replicated borders.
fn scharr_magnitude(img: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        img[r * cols + c]
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let gx = (3.0 * at(r - 1, c + 1) + 10.0 * at(r, c + 1) + 3.0 * at(r + 1, c + 1)
                - 3.0 * at(r - 1, c - 1)
                - 10.0 * at(r, c - 1)
                - 3.0 * at(r + 1, c - 1))
                / 16.0;
            let gy = (3.0 * at(r + 1, c - 1) + 10.0 * at(r + 1, c) + 3.0 * at(r + 1, c + 1)
                - 3.0 * at(r - 1, c - 1)
                - 10.0 * at(r - 1, c)
                - 3.0 * at(r - 1, c + 1))
                / 16.0;
            out[(r as usize) * cols + c as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Feature similarity index: phase-congruency and gradient similarity maps
/// multiplied pointwise and averaged with phase-congruency weighting.
/// Identical images give exactly 1; a pair of constant images, having
/// identical feature maps, also gives 1.
pub fn fsim(a: &[f64], b: &[f64], rows: usize, cols: usize, dynamic_range: f64) -> Result<f64> {
    fsim_with(a, b, rows, cols, dynamic_range, &FsimParams::default())
}

pub fn fsim_with(
    a: &[f64],
    b: &[f64],
    rows: usize,
    cols: usize,
    dynamic_range: f64,
    p: &FsimParams,
) -> Result<f64> {
    let n = rows * cols;
    if a.len() != n || b.len() != n || n == 0 {
        return Err(SctlError::DimMismatch("fsim image size mismatch".into()));
    }
    if dynamic_range <= 0.0 {
        return Err(SctlError::InvalidArgument(
            "fsim dynamic range must be positive".into(),
        ));
    }
    // work on a 0..255 intensity scale so t1/t2 keep their usual meaning
    let scale = 255.0 / dynamic_range;
    let a8: Vec<f64> = a.iter().map(|&v| v * scale).collect();
    let b8: Vec<f64> = b.iter().map(|&v| v * scale).collect();

    let pc_a = phase_congruency(&a8, rows, cols, p);
    let pc_b = phase_congruency(&b8, rows, cols, p);
    let g_a = scharr_magnitude(&a8, rows, cols);
    let g_b = scharr_magnitude(&b8, rows, cols);

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let s_pc = (2.0 * pc_a[i] * pc_b[i] + p.t1) / (pc_a[i] * pc_a[i] + pc_b[i] * pc_b[i] + p.t1);
        let s_g = (2.0 * g_a[i] * g_b[i] + p.t2) / (g_a[i] * g_a[i] + g_b[i] * g_b[i] + p.t2);
        let w = pc_a[i].max(pc_b[i]);
        num += s_pc * s_g * w;
        den += w;
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Per-channel ROI means for `img` and `reference`, with the relative bias
/// `|mean - ref_mean| / ref_mean`. A zero reference mean leaves the bias
/// `None`.
#[derive(Debug, Clone)]
pub struct RoiReport {
    pub means: Vec<f64>,
    pub ref_means: Vec<f64>,
    pub relative_bias: Vec<Option<f64>>,
}

pub fn roi_mean_bias(img: &Tensor3, reference: &Tensor3, mask: &[bool]) -> Result<RoiReport> {
    let (i1, i2, s_count) = img.dims();
    if reference.dims() != img.dims() {
        return Err(SctlError::DimMismatch(
            "roi images must have equal dims".into(),
        ));
    }
    if mask.len() != i1 * i2 {
        return Err(SctlError::DimMismatch("roi mask size mismatch".into()));
    }
    let picked = mask.iter().filter(|&&m| m).count();
    if picked == 0 {
        return Err(SctlError::InvalidArgument("roi mask is empty".into()));
    }
    let mut means = Vec::with_capacity(s_count);
    let mut ref_means = Vec::with_capacity(s_count);
    let mut relative_bias = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let sum: f64 = img
            .slab(s)
            .iter()
            .zip(mask)
            .filter(|&(_, &m)| m)
            .map(|(v, _)| v)
            .sum();
        let ref_sum: f64 = reference
            .slab(s)
            .iter()
            .zip(mask)
            .filter(|&(_, &m)| m)
            .map(|(v, _)| v)
            .sum();
        let mean = sum / picked as f64;
        let ref_mean = ref_sum / picked as f64;
        means.push(mean);
        ref_means.push(ref_mean);
        relative_bias.push(if ref_mean != 0.0 {
            Some((mean - ref_mean).abs() / ref_mean)
        } else {
            None
        });
    }
    Ok(RoiReport {
        means,
        ref_means,
        relative_bias,
    })
}
