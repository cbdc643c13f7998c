//! Dataset files, CSV and IDX import, train/test splits and the synthetic
//! blob suite.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "DCDS" | version u32 | n u64 | m u64 | has_labels u8 | n·m f32 features | [n u32 labels]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let (n, _) = x.dims2()?;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("Dataset::new", &[n], &[l.len()]));
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { what: "dataset features".into() });
        }
        Ok(Dataset { x, labels })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            x: self.x.select_rows(idx)?,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, m) = self.x.dims2()?;
        let mut out = Vec::with_capacity(HEADER_LEN + n * m * 4 + n * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(m as u64).to_le_bytes());
        out.push(self.labels.is_some() as u8);
        for &v in self.x.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                let l = u32::try_from(l).map_err(|_| Error::OutOfRange {
                    index: l,
                    limit: u32::MAX as usize,
                })?;
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |detail: String| Error::Format {
            kind: "dataset",
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                kind: "dataset header",
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version} (expected {VERSION})")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let m = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let labelled = match bytes[24] {
            0 => false,
            1 => true,
            f => return Err(fmt(format!("label flag {f} is neither 0 nor 1"))),
        };
        let cells = n.checked_mul(m).ok_or_else(|| fmt("n·m overflows".into()))?;
        let expected = (HEADER_LEN as u64)
            .checked_add(cells.saturating_mul(4))
            .and_then(|v| v.checked_add(if labelled { n.saturating_mul(4) } else { 0 }))
            .ok_or_else(|| fmt("payload size overflows".into()))?;
        if bytes.len() as u64 != expected {
            if (bytes.len() as u64) < expected {
                return Err(Error::Truncated {
                    kind: "dataset",
                    expected,
                    actual: bytes.len() as u64,
                });
            }
            return Err(fmt(format!("{} trailing bytes after payload", bytes.len() as u64 - expected)));
        }
        let (n, m) = (n as usize, m as usize);
        let feat = &bytes[HEADER_LEN..HEADER_LEN + n * m * 4];
        let mut data = Vec::with_capacity(n * m);
        for (i, c) in feat.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(fmt(format!("non-finite feature at row {}, column {}", i / m.max(1), i % m.max(1))));
            }
            data.push(v as f64);
        }
        let labels = labelled.then(|| {
            bytes[HEADER_LEN + n * m * 4..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
                .collect()
        });
        Ok(Dataset {
            x: Tensor::matrix(n, m, data)?,
            labels,
        })
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &ds.to_bytes()?)
}

/// Reads a dataset file, or a CSV when the path ends in `.csv` (last column
/// taken as the label when `csv_labelled`).
pub fn load_dataset(path: &Path, csv_labelled: bool) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_csv(path, csv_labelled);
    }
    Dataset::from_bytes(&fs::read(path)?, path)
}

pub fn load_csv(path: &Path, labelled: bool) -> Result<Dataset> {
    let fmt = |detail: String| Error::Format {
        kind: "dataset CSV",
        path: path.to_path_buf(),
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fmt(e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let mut vals = Vec::with_capacity(rec.len());
        for f in rec.iter() {
            let v: f64 = f.parse().map_err(|_| fmt(format!("record {}: '{f}' is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(fmt(format!("record {}: non-finite value", line + 1)));
            }
            vals.push(v);
        }
        if labelled {
            let l = vals.pop().ok_or_else(|| fmt(format!("record {} is empty", line + 1)))?;
            if l < 0.0 || l.fract() != 0.0 {
                return Err(fmt(format!("record {}: label {l} is not a non-negative integer", line + 1)));
            }
            labels.push(l as usize);
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(fmt(format!("record {} has {} features, expected {w}", line + 1, vals.len())));
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    let width = width.ok_or_else(|| fmt("no records".into()))?;
    Dataset::new(Tensor::matrix(rows, width, data)?, labelled.then_some(labels))
}

fn idx_header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let fmt = |detail: String| Error::Format {
        kind: "IDX",
        path: path.to_path_buf(),
        detail,
    };
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(Error::Truncated {
            kind: "IDX header",
            expected: need as u64,
            actual: bytes.len() as u64,
        });
    }
    let got = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if got != magic {
        return Err(fmt(format!("magic {got:#010x}, expected {magic:#010x}")));
    }
    let shape: Vec<usize> = (0..dims)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize)
        .collect();
    let expected = need + shape.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            kind: "IDX",
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(shape)
}

/// Uncompressed MNIST-style IDX image and label files to a dataset with
/// intensities scaled to `[0, 1]`, keeping the first `limit` samples.
pub fn convert_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let ib = fs::read(images)?;
    let lb = fs::read(labels)?;
    let shape = idx_header(&ib, images, 0x0000_0803, 3)?;
    let lshape = idx_header(&lb, labels, 0x0000_0801, 1)?;
    if shape[0] != lshape[0] {
        return Err(Error::shape("convert_idx", &[shape[0]], &[lshape[0]]));
    }
    let n = limit.map_or(shape[0], |l| l.min(shape[0]));
    let m = shape[1] * shape[2];
    let x: Vec<f64> = ib[16..16 + n * m].iter().map(|&p| p as f64 / 255.0).collect();
    let y: Vec<usize> = lb[8..8 + n].iter().map(|&l| l as usize).collect();
    Dataset::new(Tensor::matrix(n, m, x)?, Some(y))
}

/// Shuffled train/test index split. The train part has `round(fraction·n)`
/// samples.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!("split of {n} samples at {fraction} leaves an empty side")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (tr, te) = split_indices(ds.n(), fraction, seed)?;
    Ok((ds.select(&tr)?, ds.select(&te)?))
}

/// Isotropic 2-D Gaussian blobs centred at `(±offset, ±offset)`, sample
/// `i` drawn from component `i mod 4`.
pub fn four_blobs<R: Rng + ?Sized>(n: usize, offset: f64, sigma: f64, rng: &mut R) -> Result<Dataset> {
    let centres = [(offset, offset), (-offset, offset), (-offset, -offset), (offset, -offset)];
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::domain("four_blobs", e.to_string()))?;
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 4;
        x.push(centres[c].0 + noise.sample(rng));
        x.push(centres[c].1 + noise.sample(rng));
        y.push(c);
    }
    Dataset::new(Tensor::matrix(n, 2, x)?, Some(y))
}
