//! Per-channel sinogram simulation with photon-counting Poisson noise.
//!
//! Noisy measurements follow Beer-Lambert counting statistics: for a ray
//! with line integral `p` and incident photons `n0 * w_s`, counts are
//! `c ~ Poisson(n0 * w_s * exp(-p))`, clamped below at 0.5 to keep the log
//! transform finite, and the stored projection is `-ln(c / (n0 * w_s))`.
//! RNG streams are split per (channel, view) so the result is independent
//! of evaluation order.

use crate::error::{Result, SctlError};
use crate::projector::ScanGeometry;
use crate::tensor::Tensor3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub const COUNT_CLAMP: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoseModel {
    /// Total photons per ray across all channels (N0).
    pub photons_per_ray: f64,
    /// Per-channel fractions summing to 1; `None` means uniform `1/S`.
    #[serde(default)]
    pub channel_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl DoseModel {
    pub fn weights(&self, channels: usize) -> Result<Vec<f64>> {
        match &self.channel_weights {
            None => Ok(vec![1.0 / channels as f64; channels]),
            Some(w) => {
                if w.len() != channels {
                    return Err(SctlError::DimMismatch(format!(
                        "{} channel weights for {channels} channels",
                        w.len()
                    )));
                }
                if w.iter().any(|&v| v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(SctlError::InvalidArgument(
                        "channel weights must be nonnegative and sum to 1".into(),
                    ));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Log-transformed projection for one noisy ray measurement.
pub fn noisy_log_transform(p: f64, incident: f64, rng: &mut impl Rng) -> f64 {
    let lambda = incident * (-p).exp();
    let counts = if lambda > 0.0 {
        Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    };
    let counts = counts.max(COUNT_CLAMP);
    -(counts / incident).ln()
}

/// Forward-project every channel of `truth` over all views of `g`; with
/// `noisy` set, superimpose Poisson counting noise from `dose`.
pub fn simulate_sinograms(
    truth: &Tensor3,
    g: &ScanGeometry,
    dose: &DoseModel,
    noisy: bool,
) -> Result<Tensor3> {
    let (i1, i2, s_count) = truth.dims();
    if (i1, i2) != g.image_dims {
        return Err(SctlError::DimMismatch(format!(
            "phantom dims ({i1}, {i2}) do not match geometry image dims {:?}",
            g.image_dims
        )));
    }
    if dose.photons_per_ray <= 0.0 {
        return Err(SctlError::InvalidArgument(
            "photons_per_ray must be positive".into(),
        ));
    }
    let weights = dose.weights(s_count)?;
    let views = g.all_views();
    let nv = views.len();
    let nd = g.detector_count;
    let mut sino = Tensor3::zeros(nd, nv, s_count);
    for s in 0..s_count {
        let clean = g.forward_project(truth.slab(s), &views)?;
        let slab = sino.slab_mut(s);
        if !noisy {
            slab.copy_from_slice(&clean);
            continue;
        }
        let incident = dose.photons_per_ray * weights[s];
        for v in 0..nv {
            let mut rng = ChaCha8Rng::seed_from_u64(dose.seed);
            rng.set_stream(((s as u64) << 32) | v as u64);
            for det in 0..nd {
                slab[det * nv + v] = noisy_log_transform(clean[det * nv + v], incident, &mut rng);
            }
        }
    }
    Ok(sino)
}
