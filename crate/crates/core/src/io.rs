//! On-disk arrays and dataset directories.
//!
//! An array lives in two files next to each other: `<base>.hdr`, a UTF-8 JSON
//! header such as
//!
//! ```text
//! {"dtype":"c64","shape":[4,64,64],"order":"row-major","endian":"little","version":1}
//! ```
//!
//! and `<base>.dat`, the raw little-endian IEEE-754 payload. `f64` arrays hold
//! one double per element; `c64` arrays hold complex doubles as interleaved
//! `(re, im)` pairs.
//!
//! A dataset directory contains `sample_<k>/` subdirectories, each with the
//! arrays `truth` `[H, W]`, `coils` `[J, H, W]`, `mask` `[H, W]` (0/1 as `f64`)
//! and `kspace` `[J, H, W]`.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexImage;
use crate::sense::{CoilSensitivities, MultiCoilKSpace, SamplingMask};
use crate::sim::Sample;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    /// Complex double, stored as two `f64`.
    C64,
    F64,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::C64 => "c64",
            Dtype::F64 => "f64",
        }
    }

    fn element_bytes(self) -> usize {
        match self {
            Dtype::C64 => 16,
            Dtype::F64 => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
}

/// A dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn complex(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Array {
            shape,
            data: ArrayData::Complex(data),
        })
    }

    pub fn real(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Array {
            shape,
            data: ArrayData::Real(data),
        })
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            ArrayData::Complex(_) => Dtype::C64,
            ArrayData::Real(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ArrayData::Complex(d) => d.len(),
            ArrayData::Real(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    if n != Some(len) {
        return Err(Error::shape(format!("shape {shape:?} does not hold {len} elements")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
    endian: String,
    version: u32,
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(base: &Path) -> PathBuf {
    with_suffix(base, "hdr")
}

pub fn payload_path(base: &Path) -> PathBuf {
    with_suffix(base, "dat")
}

/// Writes `<base>.hdr` and `<base>.dat`.
pub fn write_array(base: &Path, array: &Array) -> Result<()> {
    let header = Header {
        dtype: array.dtype().name().into(),
        shape: array.shape.clone(),
        order: "row-major".into(),
        endian: "little".into(),
        version: FORMAT_VERSION,
    };
    let hdr = serde_json::to_string(&header).expect("header serializes");
    let mut payload = Vec::with_capacity(array.len() * array.dtype().element_bytes());
    match &array.data {
        ArrayData::Complex(d) => {
            for z in d {
                payload.extend_from_slice(&z.re.to_le_bytes());
                payload.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        ArrayData::Real(d) => {
            for v in d {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let hp = header_path(base);
    std::fs::write(&hp, hdr).map_err(|e| Error::io(hp, e))?;
    let dp = payload_path(base);
    std::fs::write(&dp, payload).map_err(|e| Error::io(dp, e))
}

/// Reads an array of either dtype.
pub fn read_array(base: &Path) -> Result<Array> {
    let hp = header_path(base);
    let text = std::fs::read(&hp).map_err(|e| Error::io(&hp, e))?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: hp.clone(),
        reason,
    };
    let h: Header = serde_json::from_slice(&text).map_err(|e| malformed(e.to_string()))?;
    if h.version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {}", h.version)));
    }
    if h.order != "row-major" {
        return Err(malformed(format!("unsupported order {:?}", h.order)));
    }
    if h.endian != "little" {
        return Err(malformed(format!("unsupported endianness {:?}", h.endian)));
    }
    let dtype = match h.dtype.as_str() {
        "c64" => Dtype::C64,
        "f64" => Dtype::F64,
        other => return Err(malformed(format!("unknown dtype {other:?}"))),
    };
    let count = h
        .shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.element_bytes()))
        .ok_or_else(|| malformed(format!("shape {:?} overflows", h.shape)))?;

    let dp = payload_path(base);
    let bytes = std::fs::read(&dp).map_err(|e| Error::io(&dp, e))?;
    if bytes.len() != count {
        return Err(Error::Truncated {
            path: dp,
            expected: count as u64,
            found: bytes.len() as u64,
        });
    }
    let words = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let data = match dtype {
        Dtype::F64 => ArrayData::Real(words.collect()),
        Dtype::C64 => {
            let w: Vec<f64> = words.collect();
            ArrayData::Complex(w.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
        }
    };
    Ok(Array { shape: h.shape, data })
}

fn expect_dtype(base: &Path, array: &Array, want: Dtype) -> Result<()> {
    if array.dtype() != want {
        return Err(Error::DtypeMismatch {
            path: header_path(base),
            expected: want.to_string(),
            found: array.dtype().to_string(),
        });
    }
    Ok(())
}

fn expect_rank(base: &Path, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::MalformedHeader {
            path: header_path(base),
            reason: format!("expected a rank-{rank} array, found shape {shape:?}"),
        });
    }
    Ok(())
}

/// Reads a `c64` array, returning its shape and values.
pub fn read_complex(base: &Path) -> Result<(Vec<usize>, Vec<Complex64>)> {
    let a = read_array(base)?;
    expect_dtype(base, &a, Dtype::C64)?;
    match a.data {
        ArrayData::Complex(d) => Ok((a.shape, d)),
        ArrayData::Real(_) => unreachable!("dtype checked"),
    }
}

/// Reads an `f64` array, returning its shape and values.
pub fn read_real(base: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let a = read_array(base)?;
    expect_dtype(base, &a, Dtype::F64)?;
    match a.data {
        ArrayData::Real(d) => Ok((a.shape, d)),
        ArrayData::Complex(_) => unreachable!("dtype checked"),
    }
}

pub fn write_image(base: &Path, img: &ComplexImage) -> Result<()> {
    write_array(base, &Array::complex(vec![img.height(), img.width()], img.data().to_vec())?)
}

pub fn read_image(base: &Path) -> Result<ComplexImage> {
    let (shape, data) = read_complex(base)?;
    expect_rank(base, &shape, 2)?;
    ComplexImage::new(shape[0], shape[1], data)
}

fn write_stack(base: &Path, imgs: &[ComplexImage]) -> Result<()> {
    let (h, w) = imgs.first().map(|i| i.dims()).unwrap_or((0, 0));
    let data: Vec<Complex64> = imgs.iter().flat_map(|i| i.data().iter().copied()).collect();
    write_array(base, &Array::complex(vec![imgs.len(), h, w], data)?)
}

fn read_stack(base: &Path) -> Result<Vec<ComplexImage>> {
    let (shape, data) = read_complex(base)?;
    expect_rank(base, &shape, 3)?;
    let plane = shape[1] * shape[2];
    if plane == 0 {
        return Err(Error::shape(format!("{} holds empty images", base.display())));
    }
    data.chunks_exact(plane)
        .map(|c| ComplexImage::new(shape[1], shape[2], c.to_vec()))
        .collect()
}

/// Writes one sample's four arrays into `dir`, creating it if needed.
pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = sample.truth.dims();
    write_image(&dir.join("truth"), &sample.truth)?;
    write_stack(&dir.join("coils"), sample.coils.maps())?;
    write_array(&dir.join("mask"), &Array::real(vec![h, w], sample.mask.to_binary())?)?;
    write_stack(&dir.join("kspace"), sample.kspace.data())
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let truth = read_image(&dir.join("truth"))?;
    let (h, w) = truth.dims();
    let coils = CoilSensitivities::new(read_stack(&dir.join("coils"))?)?;
    let mask_base = dir.join("mask");
    let (mshape, mvals) = read_real(&mask_base)?;
    expect_rank(&mask_base, &mshape, 2)?;
    let mask = SamplingMask::from_binary(mshape[0], mshape[1], &mvals)?;
    let kspace = MultiCoilKSpace::new(read_stack(&dir.join("kspace"))?, mask.clone())?;
    if coils.dims() != (h, w) || mask.dims() != (h, w) || kspace.coils() != coils.coils() {
        return Err(Error::shape(format!("arrays in {} disagree in shape", dir.display())));
    }
    Ok(Sample {
        truth,
        coils,
        mask,
        kspace,
    })
}

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index}"))
}

/// Writes `samples` as `sample_0`, `sample_1`, ... under `root`.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (k, s) in samples.iter().enumerate() {
        write_sample(&sample_dir(root, k), s)?;
    }
    Ok(())
}

/// Indices of the `sample_<k>` subdirectories of `root`, ascending.
pub fn list_samples(root: &Path) -> Result<Vec<usize>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut idx = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let name = entry.file_name();
        if let Some(k) = name.to_str().and_then(|n| n.strip_prefix("sample_")).and_then(|k| k.parse().ok()) {
            idx.push(k);
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Reads every sample under `root` in index order.
pub fn read_dataset(root: &Path) -> Result<Vec<Sample>> {
    let idx = list_samples(root)?;
    if idx.is_empty() {
        return Err(Error::Empty(format!("no sample_<k> directories in {}", root.display())));
    }
    idx.into_iter().map(|k| read_sample(&sample_dir(root, k))).collect()
}
