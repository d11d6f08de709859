//! Fan-beam system model: Siddon forward/back projection and the
//! separable-surrogate curvature image.
//!
//! Geometry convention: world coordinates in mm with the rotation center at
//! the origin. For view angle `beta` the source sits at
//! `R_so * (cos beta, sin beta)`; the detector is a flat line at distance
//! `R_sd` from the source, perpendicular to the central ray, with cells
//! spaced uniformly along `(-sin beta, cos beta)`. Pixel `(i1, i2)` of an
//! `I1 x I2` image is centered at `x = (i2 + 0.5 - I2/2) * px`,
//! `y = (I1/2 - i1 - 0.5) * px`.
//!
//! Path lengths are accumulated in cm so that images in 1/cm produce
//! dimensionless line integrals.

use crate::error::{Result, SctlError};

#[derive(Debug, Clone)]
pub struct ScanGeometry {
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    pub detector_count: usize,
    pub detector_pitch_mm: f64,
    pub detector_offset_mm: f64,
    pub view_angles: Vec<f64>,
    pub image_dims: (usize, usize),
    pub pixel_size_mm: f64,
}

impl ScanGeometry {
    /// Geometry with `view_count` angles uniform over a full circle.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source_to_detector_mm: f64,
        source_to_center_mm: f64,
        detector_count: usize,
        detector_pitch_mm: f64,
        detector_offset_mm: f64,
        view_count: usize,
        image_size: usize,
        pixel_size_mm: f64,
    ) -> Result<Self> {
        let view_angles = (0..view_count)
            .map(|v| 2.0 * std::f64::consts::PI * v as f64 / view_count as f64)
            .collect();
        let g = Self {
            source_to_detector_mm,
            source_to_center_mm,
            detector_count,
            detector_pitch_mm,
            detector_offset_mm,
            view_angles,
            image_dims: (image_size, image_size),
            pixel_size_mm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_to_detector_mm > self.source_to_center_mm
            && self.source_to_center_mm > 0.0)
        {
            return Err(SctlError::InvalidArgument(
                "geometry requires source_to_detector > source_to_center > 0".into(),
            ));
        }
        if self.detector_count == 0 || self.view_angles.is_empty() {
            return Err(SctlError::InvalidArgument(
                "geometry requires detectors and views".into(),
            ));
        }
        if self.detector_pitch_mm <= 0.0 || self.pixel_size_mm <= 0.0 {
            return Err(SctlError::InvalidArgument(
                "detector pitch and pixel size must be positive".into(),
            ));
        }
        if self.view_angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SctlError::InvalidArgument(
                "view angles must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn view_count(&self) -> usize {
        self.view_angles.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.image_dims.0 * self.image_dims.1
    }

    pub fn num_rays(&self, subset: &[usize]) -> usize {
        self.detector_count * subset.len()
    }

    /// Geometry restricted to every `keep_every`-th view.
    pub fn subsample_views(&self, views: usize) -> Result<ScanGeometry> {
        let full = self.view_count();
        if views == 0 || views > full || full % views != 0 {
            return Err(SctlError::InvalidArgument(format!(
                "cannot subsample {full} views down to {views}"
            )));
        }
        let step = full / views;
        let mut g = self.clone();
        g.view_angles = self.view_angles.iter().copied().step_by(step).collect();
        Ok(g)
    }

    /// Interleaved ordered-subset assignment: view v belongs to subset
    /// `v mod subsets`.
    pub fn subset_views(&self, subsets: usize, subset: usize) -> Vec<usize> {
        (0..self.view_count())
            .filter(|v| v % subsets == subset)
            .collect()
    }

    pub fn all_views(&self) -> Vec<usize> {
        (0..self.view_count()).collect()
    }

    /// Lateral detector-cell center coordinate on the physical detector line.
    pub fn detector_u(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.detector_count as f64 / 2.0) * self.detector_pitch_mm
            + self.detector_offset_mm
    }

    fn endpoints(&self, view: usize, det: usize) -> ([f64; 2], [f64; 2]) {
        let beta = self.view_angles[view];
        let (sb, cb) = beta.sin_cos();
        let src = [self.source_to_center_mm * cb, self.source_to_center_mm * sb];
        let u = self.detector_u(det);
        let dst = [
            src[0] - self.source_to_detector_mm * cb - u * sb,
            src[1] - self.source_to_detector_mm * sb + u * cb,
        ];
        (src, dst)
    }

    /// Siddon traversal of one ray. Calls `emit(flat_pixel, length_cm)` for
    /// every pixel the ray crosses; `flat_pixel = i1 * I2 + i2`.
    pub fn trace_ray<F: FnMut(usize, f64)>(&self, view: usize, det: usize, mut emit: F) {
        let (a, b) = self.endpoints(view, det);
        let (rows, cols) = self.image_dims;
        let px = self.pixel_size_mm;
        let half_w = cols as f64 * px / 2.0;
        let half_h = rows as f64 * px / 2.0;
        let d = [b[0] - a[0], b[1] - a[1]];
        let ray_len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if ray_len == 0.0 {
            return;
        }

        // Clip the segment against the image bounding box.
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for axis in 0..2 {
            let (lo, hi) = if axis == 0 {
                (-half_w, half_w)
            } else {
                (-half_h, half_h)
            };
            if d[axis].abs() < 1e-12 {
                if a[axis] < lo || a[axis] > hi {
                    return;
                }
            } else {
                let mut ta = (lo - a[axis]) / d[axis];
                let mut tb = (hi - a[axis]) / d[axis];
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if t0 >= t1 {
            return;
        }

        // Parametric plane-crossing sweep.
        let inf = f64::INFINITY;
        let (mut tx, dtx, ix_step) = if d[0].abs() < 1e-12 {
            (inf, inf, 0isize)
        } else {
            let step = if d[0] > 0.0 { 1isize } else { -1 };
            let x0 = a[0] + t0 * d[0];
            // next x-plane strictly ahead of x0
            let k = ((x0 + half_w) / px).floor();
            let next_plane = if d[0] > 0.0 {
                -half_w + (k + 1.0) * px
            } else {
                -half_w + k * px
            };
            let mut t = (next_plane - a[0]) / d[0];
            let dt = px / d[0].abs();
            if t <= t0 + 1e-12 {
                t += dt;
            }
            (t, dt, step)
        };
        let (mut ty, dty, iy_step) = if d[1].abs() < 1e-12 {
            (inf, inf, 0isize)
        } else {
            let step = if d[1] > 0.0 { 1isize } else { -1 };
            let y0 = a[1] + t0 * d[1];
            let k = ((y0 + half_h) / px).floor();
            let next_plane = if d[1] > 0.0 {
                -half_h + (k + 1.0) * px
            } else {
                -half_h + k * px
            };
            let mut t = (next_plane - a[1]) / d[1];
            let dt = px / d[1].abs();
            if t <= t0 + 1e-12 {
                t += dt;
            }
            (t, dt, step)
        };

        // Current cell from the midpoint of the first sub-segment.
        let t_first_end = tx.min(ty).min(t1);
        let tm = 0.5 * (t0 + t_first_end);
        let xm = a[0] + tm * d[0];
        let ym = a[1] + tm * d[1];
        let mut ix = (((xm + half_w) / px).floor() as isize).clamp(0, cols as isize - 1);
        let mut iy = (((ym + half_h) / px).floor() as isize).clamp(0, rows as isize - 1);

        let mut t_cur = t0;
        loop {
            let t_next = tx.min(ty).min(t1);
            let seg = (t_next - t_cur) * ray_len;
            if seg > 0.0 {
                let i1 = rows as isize - 1 - iy;
                let i2 = ix;
                if i1 >= 0 && i1 < rows as isize && i2 >= 0 && i2 < cols as isize {
                    // mm -> cm
                    emit((i1 as usize) * cols + i2 as usize, seg * 0.1);
                }
            }
            if t_next >= t1 - 1e-15 {
                break;
            }
            if tx <= ty {
                ix += ix_step;
                tx += dtx;
            } else {
                iy += iy_step;
                ty += dty;
            }
            t_cur = t_next;
            if !(0..cols as isize).contains(&ix) || !(0..rows as isize).contains(&iy) {
                break;
            }
        }
    }

    /// Line integrals `A x` over the given views. The output sinogram is
    /// row-major `(detector, view-position-in-subset)`.
    pub fn forward_project(&self, img: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
        if img.len() != self.num_pixels() {
            return Err(SctlError::DimMismatch(format!(
                "image has {} pixels, geometry expects {}",
                img.len(),
                self.num_pixels()
            )));
        }
        if subset.is_empty() {
            return Err(SctlError::InvalidArgument("empty view subset".into()));
        }
        let n_views = subset.len();
        let mut sino = vec![0.0; self.detector_count * n_views];
        for (vp, &view) in subset.iter().enumerate() {
            for det in 0..self.detector_count {
                let mut acc = 0.0;
                self.trace_ray(view, det, |pix, len| acc += len * img[pix]);
                sino[det * n_views + vp] = acc;
            }
        }
        Ok(sino)
    }

    /// Exact adjoint `A^T y` with the same intersection weights.
    pub fn back_project(&self, sino: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
        if subset.is_empty() {
            return Err(SctlError::InvalidArgument("empty view subset".into()));
        }
        let n_views = subset.len();
        if sino.len() != self.detector_count * n_views {
            return Err(SctlError::DimMismatch(format!(
                "sinogram has {} values, expected {}",
                sino.len(),
                self.detector_count * n_views
            )));
        }
        let mut img = vec![0.0; self.num_pixels()];
        for (vp, &view) in subset.iter().enumerate() {
            for det in 0..self.detector_count {
                let y = sino[det * n_views + vp];
                if y == 0.0 {
                    continue;
                }
                self.trace_ray(view, det, |pix, len| img[pix] += len * y);
            }
        }
        Ok(img)
    }

    /// Separable-surrogate curvature `A^T (A 1)` for the given views.
    pub fn sqs_denominator(&self, subset: &[usize]) -> Vec<f64> {
        let mut img = vec![0.0; self.num_pixels()];
        for &view in subset {
            for det in 0..self.detector_count {
                let mut ray_sum = 0.0;
                self.trace_ray(view, det, |_, len| ray_sum += len);
                if ray_sum == 0.0 {
                    continue;
                }
                self.trace_ray(view, det, |pix, len| img[pix] += len * ray_sum);
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_geometry() -> ScanGeometry {
        ScanGeometry::new(180.0, 132.0, 48, 1.0, 0.0, 24, 16, 1.5).unwrap()
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let g = small_geometry();
        let sino = g.forward_project(&vec![0.0; 256], &g.all_views()).unwrap();
        assert!(sino.iter().all(|&v| v == 0.0));
        let img = g.back_project(&vec![0.0; 48 * 24], &g.all_views()).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_ray_through_disk_matches_chord_length() {
        // unit-attenuation disk of radius rho: the central ray integral is 2*rho
        let g = ScanGeometry::new(180.0, 132.0, 129, 0.25, 0.0, 4, 64, 0.5).unwrap();
        let rho_mm = 10.0;
        let mut img = vec![0.0; g.num_pixels()];
        for i1 in 0..64 {
            for i2 in 0..64 {
                let x = (i2 as f64 + 0.5 - 32.0) * 0.5;
                let y = (32.0 - i1 as f64 - 0.5) * 0.5;
                if x * x + y * y <= rho_mm * rho_mm {
                    img[i1 * 64 + i2] = 1.0;
                }
            }
        }
        let sino = g.forward_project(&img, &[0]).unwrap();
        // detector 64 with half-cell offset is nearest the central ray
        let center_val = sino[64];
        let expect = 2.0 * rho_mm * 0.1; // cm
        assert!(
            (center_val - expect).abs() < 0.5 * 0.05, // half a pixel length in cm
            "central chord {center_val} vs {expect}"
        );
    }

    #[test]
    fn forward_back_are_adjoint() {
        let g = small_geometry();
        let views = g.all_views();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x: Vec<f64> = (0..g.num_pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..g.num_rays(&views))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let ax = g.forward_project(&x, &views).unwrap();
            let aty = g.back_project(&y, &views).unwrap();
            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                ((lhs - rhs) / (nx * ny)).abs() <= 1e-10,
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn forward_project_is_linear() {
        let g = small_geometry();
        let views = g.all_views();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..g.num_pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..g.num_pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.7, -2.3);
        let combo: Vec<f64> = x.iter().zip(&z).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = g.forward_project(&combo, &views).unwrap();
        let ax = g.forward_project(&x, &views).unwrap();
        let az = g.forward_project(&z, &views).unwrap();
        for i in 0..lhs.len() {
            assert_relative_eq!(lhs[i], alpha * ax[i] + beta * az[i], epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_ray_backprojection_matches_sampled_lengths() {
        // independent oracle: dense point sampling along the ray
        let g = small_geometry();
        let view = 5;
        let det = 17;
        let mut sino = vec![0.0; 48];
        sino[det] = 1.0;
        let img = g.back_project(&sino, &[view]).unwrap();

        let beta = g.view_angles[view];
        let (sb, cb) = beta.sin_cos();
        let src = [132.0 * cb, 132.0 * sb];
        let u = g.detector_u(det);
        let dst = [
            src[0] - 180.0 * cb - u * sb,
            src[1] - 180.0 * sb + u * cb,
        ];
        let n_samples = 4_000_000usize;
        let len_mm = ((dst[0] - src[0]).powi(2) + (dst[1] - src[1]).powi(2)).sqrt();
        let step = len_mm / n_samples as f64;
        let mut sampled = vec![0.0f64; g.num_pixels()];
        for i in 0..n_samples {
            let t = (i as f64 + 0.5) / n_samples as f64;
            let x = src[0] + t * (dst[0] - src[0]);
            let y = src[1] + t * (dst[1] - src[1]);
            let half = 16.0 * 1.5 / 2.0;
            if x.abs() >= half || y.abs() >= half {
                continue;
            }
            let ix = ((x + half) / 1.5).floor() as usize;
            let iy = ((y + half) / 1.5).floor() as usize;
            let i1 = 15 - iy;
            sampled[i1 * 16 + ix] += step * 0.1;
        }
        for p in 0..g.num_pixels() {
            assert!(
                (img[p] - sampled[p]).abs() < 2e-3,
                "pixel {p}: siddon {} vs sampled {}",
                img[p],
                sampled[p]
            );
        }
    }

    #[test]
    fn sqs_denominator_is_nonnegative_and_matches_dense_oracle() {
        let g = small_geometry();
        let views = g.all_views();
        let den = g.sqs_denominator(&views);
        assert!(den.iter().all(|&v| v >= 0.0));

        // dense-matrix oracle: row of A per ray via trace_ray
        let n_rays = g.num_rays(&views);
        let n_pix = g.num_pixels();
        let mut a = vec![0.0f64; n_rays * n_pix];
        let mut ray = 0;
        for &view in &views {
            for det in 0..g.detector_count {
                let row = &mut a[ray * n_pix..(ray + 1) * n_pix];
                g.trace_ray(view, det, |pix, len| row[pix] += len);
                ray += 1;
            }
        }
        for p in 0..n_pix {
            let mut expect = 0.0;
            for r in 0..n_rays {
                let row_sum: f64 = a[r * n_pix..(r + 1) * n_pix].iter().sum();
                expect += a[r * n_pix + p] * row_sum;
            }
            assert_relative_eq!(den[p], expect, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn subsets_cover_all_views() {
        let g = small_geometry();
        let mut seen: Vec<usize> = (0..10).flat_map(|k| g.subset_views(10, k)).collect();
        seen.sort_unstable();
        assert_eq!(seen, g.all_views());
    }

    #[test]
    fn union_of_subsets_reproduces_full_operator() {
        let g = small_geometry();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..g.num_pixels()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let full = g.forward_project(&x, &g.all_views()).unwrap();
        for k in 0..10 {
            let sub = g.subset_views(10, k);
            let part = g.forward_project(&x, &sub).unwrap();
            for (vp, &view) in sub.iter().enumerate() {
                for det in 0..g.detector_count {
                    assert_eq!(part[det * sub.len() + vp], full[det * g.view_count() + view]);
                }
            }
        }
    }

    #[test]
    fn empty_subset_is_rejected() {
        let g = small_geometry();
        assert!(g.forward_project(&vec![0.0; g.num_pixels()], &[]).is_err());
        assert!(g.back_project(&[], &[]).is_err());
    }
}
