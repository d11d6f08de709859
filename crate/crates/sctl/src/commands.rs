//! Pipeline commands behind the command-line front end.
//!
//! Every command reads a `RunConfig`, works inside one output directory, and
//! writes deterministic artifacts: tensors for machine consumption, CSV for
//! tabular results, PNG renderings for human inspection only. Each command
//! also drops a small manifest recording the seed and config hash so any
//! artifact can be traced back to its inputs.

use crate::config::RunConfig;
use crate::dict::{kcpd_train, CodingConfig};
use crate::error::{Result, SctlError};
use crate::metrics;
use crate::patch::PatchGrid;
use crate::phantom::rasterize_phantom;
use crate::projector::ScanGeometry;
use crate::recon::{
    fbp_all_channels, l0tdl_reconstruct, normalization_scale, os_sqs_reconstruct, tdl_reconstruct,
    tv_reconstruct, ReconOutput,
};
use crate::simulate::simulate_sinograms;
use crate::tensor::Tensor3;
use crate::tensorfile;
use crate::unmix::{color_fuse, decompose_materials};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Per-run overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub views: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fbp,
    OsSqs,
    Tv,
    Tdl,
    L0Tdl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::OsSqs => "ossqs",
            Method::Tv => "tv",
            Method::Tdl => "tdl",
            Method::L0Tdl => "l0tdl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fbp" => Ok(Method::Fbp),
            "ossqs" => Ok(Method::OsSqs),
            "tv" => Ok(Method::Tv),
            "tdl" => Ok(Method::Tdl),
            "l0tdl" => Ok(Method::L0Tdl),
            other => Err(SctlError::InvalidArgument(format!(
                "unknown method {other:?}; expected fbp, ossqs, tv, tdl, or l0tdl"
            ))),
        }
    }

    pub fn needs_dictionary(self) -> bool {
        matches!(self, Method::Tdl | Method::L0Tdl)
    }
}

fn out_dir(cfg: &RunConfig, ov: &Overrides) -> PathBuf {
    ov.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

fn seed_of(cfg: &RunConfig, ov: &Overrides) -> u64 {
    ov.seed.unwrap_or(cfg.seed)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    seed: u64,
    extras: &[(&str, String)],
) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "command = {command:?}");
    let _ = writeln!(text, "seed = {seed}");
    let _ = writeln!(text, "config_hash = {:?}", cfg.content_hash());
    for (k, v) in extras {
        let _ = writeln!(text, "{k} = {v}");
    }
    write_atomic(&dir.join(format!("manifest_{command}.toml")), text.as_bytes())
}

/// Render one channel slab as an 8-bit grayscale PNG, min-max normalized.
fn write_gray_png(path: &Path, data: &[f64], rows: usize, cols: usize) -> Result<()> {
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = data
        .iter()
        .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = image::GrayImage::from_raw(cols as u32, rows as u32, pixels)
        .ok_or_else(|| SctlError::DimMismatch("png buffer size".into()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp.png");
    img.save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| SctlError::Io(std::io::Error::other(e)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Render an `(I, I, 3)` tensor of values in [0, 1] as an RGB PNG.
fn write_rgb_png(path: &Path, img: &Tensor3) -> Result<()> {
    let (rows, cols, ch) = img.dims();
    if ch != 3 {
        return Err(SctlError::DimMismatch("rgb png needs 3 channels".into()));
    }
    let mut pixels = vec![0u8; rows * cols * 3];
    for r in 0..rows {
        for c in 0..cols {
            for ch in 0..3 {
                pixels[(r * cols + c) * 3 + ch] =
                    (255.0 * img.get(r, c, ch)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let rgb = image::RgbImage::from_raw(cols as u32, rows as u32, pixels)
        .ok_or_else(|| SctlError::DimMismatch("png buffer size".into()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp.png");
    rgb.save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| SctlError::Io(std::io::Error::other(e)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Keep every `full/target`-th view of a `(det, views, channels)` sinogram.
pub fn subsample_sinogram(sino: &Tensor3, target: usize) -> Result<Tensor3> {
    let (nd, nv, s_count) = sino.dims();
    if target == 0 || target > nv || nv % target != 0 {
        return Err(SctlError::InvalidArgument(format!(
            "cannot subsample {nv} views down to {target}"
        )));
    }
    let step = nv / target;
    let mut out = Tensor3::zeros(nd, target, s_count);
    for s in 0..s_count {
        for det in 0..nd {
            for v in 0..target {
                out.set(det, v, s, sino.get(det, v * step, s));
            }
        }
    }
    Ok(out)
}

/// Simulate the phantom scan: writes `truth.tensor`, `fractions.tensor`,
/// and `sino.tensor` (subsampled when a view override is given).
pub fn cmd_simulate(cfg: &RunConfig, ov: &Overrides, noiseless: bool) -> Result<()> {
    let dir = out_dir(cfg, ov);
    let seed = seed_of(cfg, ov);
    let g_full = cfg.geometry.build(None)?;
    let (truth, fractions) =
        rasterize_phantom(&cfg.phantom, &cfg.basis, cfg.geometry.image_size, cfg.geometry.pixel_size_mm)?;
    let dose = cfg.dose.build(seed);
    let sino_full = simulate_sinograms(&truth, &g_full, &dose, !noiseless)?;
    let sino = match ov.views {
        None => sino_full,
        Some(v) => subsample_sinogram(&sino_full, v)?,
    };
    tensorfile::write_tensor3(&dir.join("truth.tensor"), &truth)?;
    tensorfile::write_tensor3(&dir.join("fractions.tensor"), &fractions)?;
    tensorfile::write_tensor3(&dir.join("sino.tensor"), &sino)?;
    for s in 0..truth.dims().2 {
        write_gray_png(
            &dir.join(format!("truth_ch{s}.png")),
            truth.slab(s),
            truth.dims().0,
            truth.dims().1,
        )?;
    }
    write_manifest(
        &dir,
        "simulate",
        cfg,
        seed,
        &[
            ("views", sino.dims().1.to_string()),
            ("noiseless", noiseless.to_string()),
        ],
    )
}

/// Train the global dictionary from a filtered-backprojection prior and
/// serialize it as `dict.tensor` plus its CP factor sidecar.
pub fn cmd_train_dict(cfg: &RunConfig, ov: &Overrides) -> Result<()> {
    let dir = out_dir(cfg, ov);
    let seed = seed_of(cfg, ov);
    let params = cfg.recon.resolve()?;
    let (sino, g) = match cfg.dict.train_views {
        Some(v) => {
            // dedicated densely sampled training scan rendered on the fly
            let g = cfg.geometry.build(Some(v))?;
            let (truth, _) = rasterize_phantom(
                &cfg.phantom,
                &cfg.basis,
                cfg.geometry.image_size,
                cfg.geometry.pixel_size_mm,
            )?;
            let dose = cfg.dose.build(seed);
            (simulate_sinograms(&truth, &g, &dose, true)?, g)
        }
        None => {
            let sino = tensorfile::read_tensor3(&dir.join("sino.tensor"))?;
            let g = cfg.geometry.build(Some(sino.dims().1))?;
            (sino, g)
        }
    };
    let mut prior = fbp_all_channels(&sino, &g)?;
    let scale = normalization_scale(&prior);
    for v in prior.data_mut() {
        *v /= scale;
    }
    let grid = PatchGrid::new(params.patch_size, params.patch_stride, prior.dims())?;
    let patches: Vec<Tensor3> = grid
        .positions()
        .iter()
        .map(|&p| grid.extract(&prior, p))
        .collect::<Result<_>>()?;
    let coding = CodingConfig {
        max_sparsity: params.sparsity,
        epsilon: params.epsilon,
    };
    let dict = kcpd_train(&patches, cfg.dict.atoms, &coding, cfg.dict.iterations, seed)?;
    tensorfile::write_dictionary(&dir.join("dict.tensor"), &dict)?;
    write_manifest(
        &dir,
        "train-dict",
        cfg,
        seed,
        &[
            ("atoms", cfg.dict.atoms.to_string()),
            ("iterations", cfg.dict.iterations.to_string()),
            ("train_views", g.view_count().to_string()),
            ("patches", patches.len().to_string()),
        ],
    )
}

fn load_sinogram(dir: &Path, g: &ScanGeometry, cfg_views: usize) -> Result<Tensor3> {
    let sino = tensorfile::read_tensor3(&dir.join("sino.tensor"))?;
    let nv = sino.dims().1;
    if nv == g.view_count() {
        Ok(sino)
    } else if nv == cfg_views && nv % g.view_count() == 0 {
        subsample_sinogram(&sino, g.view_count())
    } else {
        Err(SctlError::DimMismatch(format!(
            "sinogram has {nv} views, geometry expects {}",
            g.view_count()
        )))
    }
}

fn history_csv(out: &ReconOutput) -> String {
    let mut text = String::from("iteration,rmse,data_fidelity,dict_residual,grad_l0,coupling\n");
    for rec in &out.history {
        let rmse = rec.rmse.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let _ = writeln!(
            text,
            "{},{},{:.9e},{:.9e},{},{:.9e}",
            rec.iteration, rmse, rec.data_fidelity, rec.dict_residual, rec.grad_l0, rec.coupling
        );
    }
    text
}

/// Reconstruct with one method, writing `recon_<method>.tensor`, a per
/// iteration `log_<method>.csv`, and a per-channel PNG rendering.
pub fn cmd_reconstruct(cfg: &RunConfig, ov: &Overrides, method: Method) -> Result<()> {
    let dir = out_dir(cfg, ov);
    let seed = seed_of(cfg, ov);
    let g = cfg.geometry.build(ov.views)?;
    let params = cfg.recon.resolve()?;
    let sino = load_sinogram(&dir, &g, cfg.geometry.views)?;
    let truth_path = dir.join("truth.tensor");
    let truth = if truth_path.exists() {
        Some(tensorfile::read_tensor3(&truth_path)?)
    } else {
        None
    };
    let dict = if method.needs_dictionary() {
        let path = dir.join("dict.tensor");
        if !path.exists() {
            return Err(SctlError::MissingInput(format!(
                "{} requires a trained dictionary at {}; run train-dict first",
                method.name(),
                path.display()
            )));
        }
        Some(tensorfile::read_dictionary(&path)?)
    } else {
        None
    };
    let (image, log) = match method {
        Method::Fbp => (fbp_all_channels(&sino, &g)?, None),
        Method::OsSqs => {
            let out = os_sqs_reconstruct(&sino, &g, &params, truth.as_ref())?;
            (out.image.clone(), Some(out))
        }
        Method::Tv => {
            let out = tv_reconstruct(&sino, &g, &params, truth.as_ref())?;
            (out.image.clone(), Some(out))
        }
        Method::Tdl => {
            let out = tdl_reconstruct(&sino, &g, dict.as_ref().unwrap(), &params, truth.as_ref())?;
            (out.image.clone(), Some(out))
        }
        Method::L0Tdl => {
            let out =
                l0tdl_reconstruct(&sino, &g, dict.as_ref().unwrap(), &params, truth.as_ref())?;
            (out.image.clone(), Some(out))
        }
    };
    let name = method.name();
    tensorfile::write_tensor3(&dir.join(format!("recon_{name}.tensor")), &image)?;
    let csv = log
        .as_ref()
        .map(history_csv)
        .unwrap_or_else(|| "iteration,rmse,data_fidelity,dict_residual,grad_l0,coupling\n".into());
    write_atomic(&dir.join(format!("log_{name}.csv")), csv.as_bytes())?;
    for s in 0..image.dims().2 {
        write_gray_png(
            &dir.join(format!("recon_{name}_ch{s}.png")),
            image.slab(s),
            image.dims().0,
            image.dims().1,
        )?;
    }
    write_manifest(
        &dir,
        &format!("reconstruct-{name}"),
        cfg,
        seed,
        &[
            ("method", format!("{name:?}")),
            ("views", g.view_count().to_string()),
            ("iterations", params.iterations.to_string()),
        ],
    )
}

/// Score every reconstruction in the output directory against the truth,
/// writing `metrics.csv` rows ordered by method then channel.
pub fn cmd_evaluate(cfg: &RunConfig, ov: &Overrides) -> Result<()> {
    let dir = out_dir(cfg, ov);
    let truth = tensorfile::read_tensor3(&dir.join("truth.tensor"))?;
    let (rows, cols, s_count) = truth.dims();
    let mut methods: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("recon_")
                .and_then(|n| n.strip_suffix(".tensor"))
                .map(str::to_string)
        })
        .collect();
    methods.sort();
    if methods.is_empty() {
        return Err(SctlError::MissingInput(format!(
            "no recon_*.tensor files in {}",
            dir.display()
        )));
    }
    let views = ov.views.unwrap_or(cfg.geometry.views);
    let mut csv = String::from("method,views,photons,channel,rmse,ssim,fsim\n");
    for method in &methods {
        let img = tensorfile::read_tensor3(&dir.join(format!("recon_{method}.tensor")))?;
        if img.dims() != truth.dims() {
            return Err(SctlError::DimMismatch(format!(
                "recon_{method}.tensor dims {:?} do not match truth {:?}",
                img.dims(),
                truth.dims()
            )));
        }
        for s in 0..s_count {
            let range = truth.slab(s).iter().fold(0.0f64, |a, &v| a.max(v)).max(1e-12);
            let rmse = metrics::rmse(img.slab(s), truth.slab(s))?;
            let ssim = metrics::ssim(img.slab(s), truth.slab(s), rows, cols, range)?;
            let fsim = metrics::fsim(img.slab(s), truth.slab(s), rows, cols, range)?;
            let _ = writeln!(
                csv,
                "{method},{views},{},{s},{rmse:.9e},{ssim:.9},{fsim:.9}",
                cfg.dose.photons_per_ray
            );
        }
    }
    write_atomic(&dir.join("metrics.csv"), csv.as_bytes())?;
    write_manifest(&dir, "evaluate", cfg, seed_of(cfg, ov), &[])
}

/// Decompose a reconstruction (or the truth, with method name "truth")
/// into basis-material fraction maps; three-material bases also get an RGB
/// fusion rendering.
pub fn cmd_decompose(cfg: &RunConfig, ov: &Overrides, method: &str) -> Result<()> {
    let dir = out_dir(cfg, ov);
    let source = if method == "truth" {
        dir.join("truth.tensor")
    } else {
        Method::parse(method)?;
        dir.join(format!("recon_{method}.tensor"))
    };
    let img = tensorfile::read_tensor3(&source)?;
    let d = decompose_materials(&img, &cfg.basis)?;
    tensorfile::write_tensor3(&dir.join(format!("fractions_{method}.tensor")), &d.fractions)?;
    if cfg.basis.materials() == 3 {
        let fused = color_fuse(&d)?;
        write_rgb_png(&dir.join(format!("fused_{method}.png")), &fused)?;
    }
    write_manifest(
        &dir,
        &format!("decompose-{method}"),
        cfg,
        seed_of(cfg, ov),
        &[("source", format!("{:?}", source.display().to_string()))],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_keeps_every_kth_view() {
        let mut sino = Tensor3::zeros(2, 8, 1);
        for v in 0..8 {
            sino.set(0, v, 0, v as f64);
            sino.set(1, v, 0, 10.0 + v as f64);
        }
        let sub = subsample_sinogram(&sino, 2).unwrap();
        assert_eq!(sub.dims(), (2, 2, 1));
        assert_eq!(sub.get(0, 0, 0), 0.0);
        assert_eq!(sub.get(0, 1, 0), 4.0);
        assert_eq!(sub.get(1, 1, 0), 14.0);
        assert!(subsample_sinogram(&sino, 3).is_err());
        assert!(subsample_sinogram(&sino, 0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Fbp, Method::OsSqs, Method::Tv, Method::Tdl, Method::L0Tdl] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("magic").is_err());
    }
}
