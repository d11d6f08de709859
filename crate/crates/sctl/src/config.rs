//! TOML run configuration shared by all pipeline commands.
//!
//! A config file has a top-level `seed` and `output_dir` plus `[geometry]`,
//! `[dose]`, `[basis]`, `[phantom]`, `[recon]`, and optional `[dict]` blocks.
//! Unknown keys anywhere are rejected so typos fail loudly. The `[recon]`
//! block may name a preset carrying the published parameter set for a given
//! view count and dose; explicit keys override preset values.

use crate::error::{Result, SctlError};
use crate::phantom::{MaterialBasis, PhantomSpec};
use crate::projector::ScanGeometry;
use crate::recon::ReconParams;
use crate::simulate::DoseModel;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub geometry: GeometryBlock,
    pub dose: DoseBlock,
    pub basis: MaterialBasis,
    pub phantom: PhantomSpec,
    pub recon: ReconBlock,
    #[serde(default)]
    pub dict: DictBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    pub detector_count: usize,
    pub detector_pitch_mm: f64,
    #[serde(default)]
    pub detector_offset_mm: f64,
    pub views: usize,
    pub image_size: usize,
    pub pixel_size_mm: f64,
}

impl GeometryBlock {
    pub fn build(&self, views_override: Option<usize>) -> Result<ScanGeometry> {
        ScanGeometry::new(
            self.source_to_detector_mm,
            self.source_to_center_mm,
            self.detector_count,
            self.detector_pitch_mm,
            self.detector_offset_mm,
            views_override.unwrap_or(self.views),
            self.image_size,
            self.pixel_size_mm,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseBlock {
    pub photons_per_ray: f64,
    #[serde(default)]
    pub channel_weights: Option<Vec<f64>>,
}

impl DoseBlock {
    pub fn build(&self, seed: u64) -> DoseModel {
        DoseModel {
            photons_per_ray: self.photons_per_ray,
            channel_weights: self.channel_weights.clone(),
            seed,
        }
    }
}

/// Dictionary training controls for `train-dict`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictBlock {
    /// Number of atoms K.
    pub atoms: usize,
    /// Training sweeps over the patch set.
    pub iterations: usize,
    /// Views used for the training scan; defaults to the geometry's views.
    #[serde(default)]
    pub train_views: Option<usize>,
}

impl Default for DictBlock {
    fn default() -> Self {
        Self {
            atoms: 1024,
            iterations: 20,
            train_views: None,
        }
    }
}

/// Reconstruction parameters, either spelled out or inherited from a preset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconBlock {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub lambda_star: Option<f64>,
    #[serde(default)]
    pub sparsity: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub subsets: Option<usize>,
    #[serde(default)]
    pub patch_size: Option<usize>,
    #[serde(default)]
    pub patch_stride: Option<usize>,
    #[serde(default)]
    pub tv_weight: Option<f64>,
    #[serde(default)]
    pub tv_steps: Option<usize>,
}

/// Published parameter sets keyed by view count and dose:
/// (sigma, eta, epsilon, lambda_star, sparsity).
const PRESETS: &[(&str, f64, f64, f64, f64, usize)] = &[
    ("sim-160view", 4.80, 1.10, 1.10e-3, 1.80e-4, 13),
    ("sim-106view", 5.30, 1.40, 1.25e-3, 2.45e-4, 12),
    ("sim-80view", 5.70, 1.60, 1.50e-3, 2.60e-4, 11),
    ("sim-80view-4e3", 5.80, 1.60, 1.60e-3, 2.60e-4, 11),
    ("sim-80view-3e3", 6.10, 1.90, 2.10e-3, 3.10e-4, 9),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

impl ReconBlock {
    pub fn resolve(&self) -> Result<ReconParams> {
        let preset = match &self.preset {
            None => None,
            Some(name) => Some(
                PRESETS
                    .iter()
                    .find(|p| p.0 == name)
                    .ok_or_else(|| {
                        SctlError::Config(format!(
                            "unknown preset {name:?}; available: {}",
                            preset_names().join(", ")
                        ))
                    })?,
            ),
        };
        let require = |field: Option<f64>, from_preset: Option<f64>, name: &str| {
            field.or(from_preset).ok_or_else(|| {
                SctlError::Config(format!("recon.{name} is required when no preset is set"))
            })
        };
        Ok(ReconParams {
            sigma: require(self.sigma, preset.map(|p| p.1), "sigma")?,
            eta: require(self.eta, preset.map(|p| p.2), "eta")?,
            epsilon: require(self.epsilon, preset.map(|p| p.3), "epsilon")?,
            lambda_star: require(self.lambda_star, preset.map(|p| p.4), "lambda_star")?,
            sparsity: self
                .sparsity
                .or(preset.map(|p| p.5))
                .ok_or_else(|| SctlError::Config("recon.sparsity is required".into()))?,
            iterations: self.iterations.unwrap_or(100),
            subsets: self.subsets.unwrap_or(10),
            patch_size: self.patch_size.unwrap_or(8),
            patch_stride: self.patch_stride.unwrap_or(1),
            tv_weight: self.tv_weight.unwrap_or(0.2),
            tv_steps: self.tv_steps.unwrap_or(10),
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                SctlError::MissingInput(path.display().to_string())
            } else {
                SctlError::Io(e)
            }
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| SctlError::Config(format!("{}: {e}", path.display())))?;
        cfg.basis.validate()?;
        cfg.recon.resolve()?;
        cfg.geometry.build(None)?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical serialized config, recorded in manifests.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// Exit code mapping used by the command-line front end: 2 for configuration
/// and validation errors, 3 for missing inputs, 4 for numerical failures.
pub fn exit_code(err: &SctlError) -> i32 {
    match err {
        SctlError::Config(_) | SctlError::InvalidArgument(_) | SctlError::DimMismatch(_) => 2,
        SctlError::MissingInput(_) => 3,
        SctlError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
        SctlError::Numerical(_) => 4,
        SctlError::Io(_) => 4,
    }
}
