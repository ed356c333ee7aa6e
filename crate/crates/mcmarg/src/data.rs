//! Dataset container, on-disk formats and synthetic data generation.
//!
//! Vectors are stored as 32-bit floats on disk (binary or CSV) and widened to
//! f64 for all computation. Labels are plain ASCII integers, one per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::RngExt;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmm::{GmmParams, SIGMA_FLOOR};
use crate::rng;

/// Magic bytes opening the binary vector format.
pub const VECTOR_MAGIC: &[u8; 4] = b"MCMV";
/// Current binary vector format version.
pub const VECTOR_VERSION: u8 = 1;

/// Cluster labels, one non-negative id per point.
pub type LabelVector = Vec<usize>;

/// An n x d point set, row-major, always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl Dataset {
    /// Build a dataset, validating shape and finiteness.
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "dataset must be non-empty, got n={n}, d={d}"
            )));
        }
        if values.len() != n * d {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for a {n}x{d} dataset, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Dataset { n, d, values })
    }

    /// One point as a slice of length `d`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

/// On-disk layout for vector files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    /// Magic + version + u32 dimension + u64 count header, then f32 LE payload.
    Binary,
    /// Comma-separated decimal floats, one row per line, no header.
    Csv,
}

/// Specification for a synthetic mixture dataset with known labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Per-dimension shift and scale removed by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Load a vector file in the given format.
pub fn load_vectors(path: &Path, format: VectorFormat) -> Result<Dataset> {
    match format {
        VectorFormat::Binary => load_binary(path),
        VectorFormat::Csv => load_csv(path),
    }
}

/// Write a vector file in the given format (values narrowed to f32).
pub fn save_vectors(dataset: &Dataset, path: &Path, format: VectorFormat) -> Result<()> {
    match format {
        VectorFormat::Binary => save_binary(dataset, path),
        VectorFormat::Csv => save_csv(dataset, path),
    }
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != VECTOR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {VECTOR_MAGIC:?}"
        )));
    }
    let mut version = [0u8; 1];
    reader.read_exact(&mut version).map_err(|e| Error::io(path, e))?;
    if version[0] != VECTOR_VERSION {
        return Err(Error::Format(format!(
            "unsupported vector format version {}",
            version[0]
        )));
    }
    let mut dim = [0u8; 4];
    reader.read_exact(&mut dim).map_err(|e| Error::io(path, e))?;
    let d = u32::from_le_bytes(dim) as usize;
    let mut count = [0u8; 8];
    reader.read_exact(&mut count).map_err(|e| Error::io(path, e))?;
    let n = u64::from_le_bytes(count) as usize;
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty dataset in header: n={n}, d={d}")));
    }
    let total = n
        .checked_mul(d)
        .and_then(|t| t.checked_mul(4))
        .ok_or_else(|| Error::Format("header size overflows".into()))?;

    let mut payload = vec![0u8; total];
    reader.read_exact(&mut payload).map_err(|_| {
        Error::Format(format!("payload shorter than the {n}x{d} header promises"))
    })?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }

    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Dataset::new(n, d, values)
}

fn save_binary(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writer.write_all(VECTOR_MAGIC).map_err(io)?;
    writer.write_all(&[VECTOR_VERSION]).map_err(io)?;
    writer.write_all(&(dataset.d as u32).to_le_bytes()).map_err(io)?;
    writer.write_all(&(dataset.n as u64).to_le_bytes()).map_err(io)?;
    for &v in &dataset.values {
        writer.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    writer.flush().map_err(io)
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    let mut d = 0usize;
    let mut n = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut width = 0usize;
        for field in line.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::Format(format!("line {}: cannot parse '{field}' as a float", lineno + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!("line {}: non-finite value", lineno + 1)));
            }
            values.push(v as f64);
            width += 1;
        }
        if n == 0 {
            d = width;
        } else if width != d {
            return Err(Error::Format(format!(
                "line {}: {width} columns, expected {d}",
                lineno + 1
            )));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Format("empty dataset".into()));
    }
    Dataset::new(n, d, values)
}

fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let mut line = String::new();
    for i in 0..dataset.n {
        line.clear();
        for (j, &v) in dataset.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            // Shortest representation that parses back to the same f32.
            line.push_str(&format!("{}", v as f32));
        }
        line.push('\n');
        writer.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Load labels: one base-10 integer per line.
pub fn load_labels(path: &Path) -> Result<LabelVector> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let v: u64 = line.trim().parse().map_err(|_| {
            Error::Format(format!(
                "line {}: '{line}' is not a non-negative integer",
                lineno + 1
            ))
        })?;
        labels.push(v as usize);
    }
    if labels.is_empty() {
        return Err(Error::Format("empty label file".into()));
    }
    Ok(labels)
}

/// Write labels: one base-10 integer per line, LF-terminated.
pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for &l in labels {
        writeln!(writer, "{l}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Center every dimension and scale non-constant ones to unit population
/// standard deviation; constant dimensions are centered only (scale 1).
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, Standardization)> {
    if dataset.n < 2 {
        return Err(Error::InvalidParameter(
            "standardize needs at least 2 points".into(),
        ));
    }
    let (n, d) = (dataset.n, dataset.d);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(dataset.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let diff = dataset.values[i * d + j] - mean[j];
            var[j] += diff * diff;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .zip(&mean)
        .map(|(&v, &m)| {
            let std = (v / n as f64).sqrt();
            // Rounding noise can leave a constant dimension with a vanishing
            // but nonzero std; scaling by it would explode the values.
            if std <= 1e-12 * (1.0 + m.abs()) {
                1.0
            } else {
                std
            }
        })
        .collect();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            values.push((dataset.values[i * d + j] - mean[j]) / scale[j]);
        }
    }
    Ok((Dataset::new(n, d, values)?, Standardization { mean, scale }))
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        if self.n < self.k {
            return Err(Error::InvalidParameter(format!(
                "n={} must be at least k={}",
                self.n, self.k
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidParameter("sep must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if self.k > 1 && self.k > self.d {
            return Err(Error::InvalidParameter(format!(
                "dim={} is too small to separate k={} components",
                self.d, self.k
            )));
        }
        Ok(())
    }
}

/// Component center: `separation` along axis `component`, zero elsewhere.
/// Distinct centers then sit at exactly `separation * sqrt(2)` apart, so
/// `separation` is a guaranteed lower bound on their pairwise distance, and
/// the offsets stay orthogonal for any number of components up to `d`.
fn component_center(component: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut center = vec![0.0; d];
    center[component] = separation;
    center
}

/// Draw a labeled dataset from `k` spherical Gaussians at deterministic,
/// well-separated centers. Component sizes are as equal as the remainder
/// allows, so every component is populated. Also returns the generating
/// mixture parameters.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, LabelVector, GmmParams)> {
    spec.validate()?;
    let (k, d, n) = (spec.k, spec.d, spec.n);

    let mut means = Vec::with_capacity(k * d);
    for c in 0..k {
        means.extend(component_center(c, d, spec.separation));
    }
    let log_sigma = spec.sigma.max(SIGMA_FLOOR).ln();
    let params = GmmParams::new(k, d, vec![0.0; k], means, vec![log_sigma; k * d])?;

    let base = n / k;
    let extra = n % k;
    let mut rng = rng::stream(spec.seed, "synthetic");
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        let count = base + usize::from(c < extra);
        let center = params.mean(c);
        for _ in 0..count {
            for &m in center {
                let z: f64 = rng.sample(StandardNormal);
                values.push(m + spec.sigma * z);
            }
            labels.push(c);
        }
    }
    Ok((Dataset::new(n, d, values)?, labels, params))
}
