//! Multi-material ellipse phantom rasterization.

use crate::error::{Result, SctlError};
use crate::tensor::Tensor3;
use serde::{Deserialize, Serialize};

/// Per-channel linear attenuation (1/cm) for a set of basis materials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialBasis {
    pub names: Vec<String>,
    /// `S x M` table: `mu[s][m]` is the attenuation of material `m` in
    /// channel `s`.
    pub mu: Vec<Vec<f64>>,
    /// `S + 1` strictly increasing bin edges in keV.
    pub channel_edges_kev: Vec<f64>,
}

impl MaterialBasis {
    pub fn validate(&self) -> Result<()> {
        let s = self.channels();
        let m = self.materials();
        if m == 0 || self.names.len() != m {
            return Err(SctlError::InvalidArgument(
                "material basis needs at least one named material".into(),
            ));
        }
        if self.channel_edges_kev.len() != s + 1
            || self.channel_edges_kev.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SctlError::InvalidArgument(
                "channel edges must be strictly increasing with one more edge than channels".into(),
            ));
        }
        for row in &self.mu {
            if row.len() != m {
                return Err(SctlError::DimMismatch(
                    "attenuation table rows must all have one entry per material".into(),
                ));
            }
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(SctlError::InvalidArgument(
                    "attenuation coefficients must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub fn materials(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseShape {
    pub center_mm: [f64; 2],
    pub axes_mm: [f64; 2],
    #[serde(default)]
    pub rotation_deg: f64,
    pub material: usize,
    pub fraction: f64,
}

/// Ellipse list rendered in order; at overlaps the last-listed shape wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shapes: Vec<EllipseShape>,
}

/// Rasterize the phantom onto an `I x I` grid of `pixel_size_mm` pixels
/// centered at the isocenter. Returns the spectral image (channel `s` value
/// is `sum_m mu[s][m] * fraction_m`) and the per-material fraction maps as
/// an `(I, I, M)` tensor.
pub fn rasterize_phantom(
    spec: &PhantomSpec,
    basis: &MaterialBasis,
    image_size: usize,
    pixel_size_mm: f64,
) -> Result<(Tensor3, Tensor3)> {
    basis.validate()?;
    let s_count = basis.channels();
    let m_count = basis.materials();
    for shape in &spec.shapes {
        if shape.material >= m_count {
            return Err(SctlError::InvalidArgument(format!(
                "shape references material {} but the basis has {m_count}",
                shape.material
            )));
        }
        if !(0.0..=1.0).contains(&shape.fraction) {
            return Err(SctlError::InvalidArgument(
                "shape fractions must lie in [0, 1]".into(),
            ));
        }
        if shape.axes_mm[0] <= 0.0 || shape.axes_mm[1] <= 0.0 {
            return Err(SctlError::InvalidArgument(
                "ellipse axes must be positive".into(),
            ));
        }
    }

    let n = image_size;
    let mut fractions = Tensor3::zeros(n, n, m_count);
    for shape in &spec.shapes {
        let theta = shape.rotation_deg.to_radians();
        let (st, ct) = theta.sin_cos();
        for i1 in 0..n {
            let y = (n as f64 / 2.0 - i1 as f64 - 0.5) * pixel_size_mm;
            for i2 in 0..n {
                let x = (i2 as f64 + 0.5 - n as f64 / 2.0) * pixel_size_mm;
                let dx = x - shape.center_mm[0];
                let dy = y - shape.center_mm[1];
                let xr = ct * dx + st * dy;
                let yr = -st * dx + ct * dy;
                let q = (xr / shape.axes_mm[0]).powi(2) + (yr / shape.axes_mm[1]).powi(2);
                if q <= 1.0 {
                    for m in 0..m_count {
                        fractions.set(i1, i2, m, 0.0);
                    }
                    fractions.set(i1, i2, shape.material, shape.fraction);
                }
            }
        }
    }

    let mut image = Tensor3::zeros(n, n, s_count);
    for s in 0..s_count {
        for i1 in 0..n {
            for i2 in 0..n {
                let mut v = 0.0;
                for m in 0..m_count {
                    v += basis.mu[s][m] * fractions.get(i1, i2, m);
                }
                image.set(i1, i2, s, v);
            }
        }
    }
    Ok((image, fractions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> MaterialBasis {
        MaterialBasis {
            names: vec!["soft".into(), "bone".into()],
            mu: vec![vec![0.8, 7.7], vec![0.38, 2.6]],
            channel_edges_kev: vec![16.0, 25.0, 50.0],
        }
    }

    #[test]
    fn empty_shape_list_gives_zero_image() {
        let spec = PhantomSpec { shapes: vec![] };
        let (img, fr) = rasterize_phantom(&spec, &basis(), 16, 1.0).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
        assert!(fr.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_fraction_disk_takes_material_attenuation() {
        let spec = PhantomSpec {
            shapes: vec![EllipseShape {
                center_mm: [0.0, 0.0],
                axes_mm: [5.0, 5.0],
                rotation_deg: 0.0,
                material: 1,
                fraction: 1.0,
            }],
        };
        let b = basis();
        let (img, _) = rasterize_phantom(&spec, &b, 32, 0.5).unwrap();
        for s in 0..2 {
            assert_eq!(img.get(16, 16, s), b.mu[s][1]);
        }
    }

    #[test]
    fn later_shapes_overwrite_earlier_per_pixel() {
        let mk = |material, fraction, r| EllipseShape {
            center_mm: [0.0, 0.0],
            axes_mm: [r, r],
            rotation_deg: 0.0,
            material,
            fraction,
        };
        let spec = PhantomSpec {
            shapes: vec![mk(0, 1.0, 6.0), mk(1, 0.5, 3.0)],
        };
        let b = basis();
        let (_, fr) = rasterize_phantom(&spec, &b, 32, 0.5).unwrap();
        // per-pixel painter's-order oracle
        for i1 in 0..32 {
            for i2 in 0..32 {
                let x = (i2 as f64 + 0.5 - 16.0) * 0.5;
                let y = (16.0 - i1 as f64 - 0.5) * 0.5;
                let r2 = x * x + y * y;
                let (expect_soft, expect_bone) = if r2 <= 9.0 {
                    (0.0, 0.5)
                } else if r2 <= 36.0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 0.0)
                };
                assert_eq!(fr.get(i1, i2, 0), expect_soft, "pixel ({i1},{i2})");
                assert_eq!(fr.get(i1, i2, 1), expect_bone, "pixel ({i1},{i2})");
            }
        }
    }

    #[test]
    fn image_is_mu_mixing_of_fractions() {
        let spec = PhantomSpec {
            shapes: vec![EllipseShape {
                center_mm: [2.0, -1.0],
                axes_mm: [4.0, 2.5],
                rotation_deg: 30.0,
                material: 0,
                fraction: 0.7,
            }],
        };
        let b = basis();
        let (img, fr) = rasterize_phantom(&spec, &b, 24, 0.7).unwrap();
        for s in 0..2 {
            for i1 in 0..24 {
                for i2 in 0..24 {
                    let expect: f64 = (0..2).map(|m| b.mu[s][m] * fr.get(i1, i2, m)).sum();
                    assert_eq!(img.get(i1, i2, s), expect);
                }
            }
        }
    }

    #[test]
    fn invalid_material_index_is_rejected() {
        let spec = PhantomSpec {
            shapes: vec![EllipseShape {
                center_mm: [0.0, 0.0],
                axes_mm: [1.0, 1.0],
                rotation_deg: 0.0,
                material: 5,
                fraction: 1.0,
            }],
        };
        assert!(rasterize_phantom(&spec, &basis(), 8, 1.0).is_err());
    }
}
