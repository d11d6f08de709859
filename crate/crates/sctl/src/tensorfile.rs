//! Self-describing binary tensor files used for every pipeline artifact.
//!
//! Layout: magic `SCTF`, version (u32 LE, currently 1), ndims (u32 LE, 3 or
//! 4), the dims as u32 LE, then the payload as IEEE-754 32-bit little-endian
//! values in row-major order with the last dim slowest. Writes go through a
//! temp file and rename so readers never see partial artifacts.

use crate::dict::{CpFactors, TensorDictionary};
use crate::error::{Result, SctlError};
use crate::tensor::{Tensor3, Tensor4};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SCTF";
const VERSION: u32 = 1;

fn write_file(path: &Path, dims: &[u32], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().map(|&d| d as usize).product();
    if expected != data.len() {
        return Err(SctlError::DimMismatch(format!(
            "payload of {} values for dims {:?}",
            data.len(),
            dims
        )));
    }
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = path.with_extension("tensor.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SctlError::MissingInput(path.display().to_string())
        } else {
            SctlError::Io(e)
        }
    })?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SctlError::InvalidArgument(format!(
            "{} is not a tensor file (bad magic)",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(SctlError::InvalidArgument(format!(
            "unsupported tensor file version {version}"
        )));
    }
    r.read_exact(&mut buf4)?;
    let ndims = u32::from_le_bytes(buf4) as usize;
    if !(3..=4).contains(&ndims) {
        return Err(SctlError::InvalidArgument(format!(
            "tensor files hold 3 or 4 dims, found {ndims}"
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        r.read_exact(&mut buf4)?;
        dims.push(u32::from_le_bytes(buf4));
    }
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SctlError::InvalidArgument(format!(
            "{} has trailing bytes beyond the declared payload",
            path.display()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((dims, data))
}

pub fn write_tensor3(path: &Path, t: &Tensor3) -> Result<()> {
    let (d0, d1, d2) = t.dims();
    write_file(path, &[d0 as u32, d1 as u32, d2 as u32], t.data())
}

pub fn write_tensor4(path: &Path, t: &Tensor4) -> Result<()> {
    let (d0, d1, d2, d3) = t.dims();
    write_file(
        path,
        &[d0 as u32, d1 as u32, d2 as u32, d3 as u32],
        t.data(),
    )
}

pub fn read_tensor3(path: &Path) -> Result<Tensor3> {
    let (dims, data) = read_file(path)?;
    if dims.len() != 3 {
        return Err(SctlError::DimMismatch(format!(
            "{} holds a {}-dim tensor, expected 3",
            path.display(),
            dims.len()
        )));
    }
    Tensor3::from_vec((dims[0] as usize, dims[1] as usize, dims[2] as usize), data)
}

pub fn read_tensor4(path: &Path) -> Result<Tensor4> {
    let (dims, data) = read_file(path)?;
    if dims.len() != 4 {
        return Err(SctlError::DimMismatch(format!(
            "{} holds a {}-dim tensor, expected 4",
            path.display(),
            dims.len()
        )));
    }
    Tensor4::from_vec(
        (
            dims[0] as usize,
            dims[1] as usize,
            dims[2] as usize,
            dims[3] as usize,
        ),
        data,
    )
}

/// Serialize a dictionary as two tensor files: `<base>` with the atom
/// blocks and `<base>` + `.factors` suffix holding the stacked CP factors
/// `(u | v | w)` per atom.
pub fn write_dictionary(base: &Path, dict: &TensorDictionary) -> Result<()> {
    write_tensor4(base, dict.atoms())?;
    let n = dict.patch_size();
    let s = dict.channels();
    let k = dict.num_atoms();
    let mut factors = Tensor3::zeros(2 * n + s, 1, k);
    for (i, f) in dict.factors().iter().enumerate() {
        let slab = factors.slab_mut(i);
        slab[..n].copy_from_slice(&f.u);
        slab[n..2 * n].copy_from_slice(&f.v);
        slab[2 * n..].copy_from_slice(&f.w);
    }
    write_tensor3(&factors_path(base), &factors)
}

pub fn read_dictionary(base: &Path) -> Result<TensorDictionary> {
    let atoms = read_tensor4(base)?;
    let (n1, n2, s, k) = atoms.dims();
    if n1 != n2 {
        return Err(SctlError::DimMismatch(
            "dictionary atoms must be square".into(),
        ));
    }
    let factors_file = read_tensor3(&factors_path(base))?;
    if factors_file.dims() != (2 * n1 + s, 1, k) {
        return Err(SctlError::DimMismatch(
            "dictionary factor file does not match the atom file".into(),
        ));
    }
    let mut factors = Vec::with_capacity(k);
    for i in 0..k {
        let slab = factors_file.slab(i);
        factors.push(CpFactors {
            u: slab[..n1].to_vec(),
            v: slab[n1..2 * n1].to_vec(),
            w: slab[2 * n1..].to_vec(),
        });
    }
    let dict = TensorDictionary::from_factors(n1, s, factors)?;
    // the atoms rebuilt from factors must agree with the stored blocks
    let max_dev = dict
        .atoms()
        .data()
        .iter()
        .zip(atoms.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if max_dev > 1e-4 {
        return Err(SctlError::InvalidArgument(format!(
            "dictionary files are inconsistent (max atom deviation {max_dev:.3e})"
        )));
    }
    Ok(dict)
}

fn factors_path(base: &Path) -> std::path::PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(".factors");
    base.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn tensor3_round_trip_is_value_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.tensor");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..2 * 3 * 4)
            .map(|_| rng.gen_range(-1.0f32..1.0) as f64)
            .collect();
        let t = Tensor3::from_vec((2, 3, 4), data).unwrap();
        write_tensor3(&path, &t).unwrap();
        let back = read_tensor3(&path).unwrap();
        assert_eq!(back.dims(), t.dims());
        assert_eq!(back.data(), t.data());
        // write of the read-back is byte-identical
        let bytes = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("t2.tensor");
        write_tensor3(&path2, &back).unwrap();
        assert_eq!(bytes, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn tensor4_round_trip_and_header_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.tensor");
        let mut t = Tensor4::zeros(2, 2, 3, 5);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.25;
        }
        write_tensor4(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SCTF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 12 + 4 * 4 + 2 * 2 * 3 * 5 * 4);
        let back = read_tensor4(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.tensor");
        assert!(matches!(
            read_tensor3(&path),
            Err(SctlError::MissingInput(_))
        ));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_tensor3(&path).is_err());
        // truncated payload
        let good = dir.path().join("good.tensor");
        write_tensor3(&good, &Tensor3::zeros(2, 2, 2)).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_tensor3(&path).is_err());
        // trailing bytes
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_tensor3(&path).is_err());
        // dim-rank mismatch
        assert!(read_tensor4(&good).is_err());
    }

    #[test]
    fn dictionary_round_trip() {
        let dir = tempdir().unwrap();
        let base = dir.path().join("dict.tensor");
        let dict = TensorDictionary::random(4, 3, 12, 9).unwrap();
        write_dictionary(&base, &dict).unwrap();
        let back = read_dictionary(&base).unwrap();
        assert_eq!(back.num_atoms(), 12);
        assert_eq!(back.patch_size(), 4);
        assert_eq!(back.channels(), 3);
        for k in 0..12 {
            for (a, b) in back.atom(k).iter().zip(dict.atom(k)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
