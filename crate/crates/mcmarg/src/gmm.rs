//! Diagonal-covariance Gaussian mixtures in an unconstrained parameterization:
//! component weights live as logits (softmax), per-dimension spreads as
//! log-standard-deviations. Densities are evaluated in log space throughout;
//! at the dimensionalities this crate targets the linear-space normalization
//! constant underflows long before the math becomes uninteresting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

/// Smallest standard deviation a component may reach in any dimension.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// ln(1 / sqrt(2 pi)), the normal density constant.
pub const LOG_INV_SQRT_2PI: f64 = -0.918_938_533_204_672_7;

/// Current model file version.
pub const MODEL_VERSION: u32 = 1;

/// Mixture parameters: `k` components over `d` dimensions.
///
/// `means` and `log_stds` are row-major `k x d`. Standard deviations are
/// clamped to [`SIGMA_FLOOR`] whenever the parameters are built or updated.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub d: usize,
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_stds: Vec<f64>,
}

/// Exact 1-D marginal of a diagonal mixture along a unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal1D {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// How initial component means are chosen from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// `k` distinct rows drawn uniformly.
    RandomPoints,
    /// `k` distinct rows via D^2-weighted (k-means++) seeding.
    KmeansPlusPlus,
}

impl GmmParams {
    /// Build and validate parameters; log-stds are clamped to the floor.
    pub fn new(
        k: usize,
        d: usize,
        logits: Vec<f64>,
        means: Vec<f64>,
        log_stds: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "mixture must be non-empty, got k={k}, d={d}"
            )));
        }
        if logits.len() != k {
            return Err(Error::InvalidParameter(format!(
                "expected {k} logits, got {}",
                logits.len()
            )));
        }
        if means.len() != k * d || log_stds.len() != k * d {
            return Err(Error::InvalidParameter(format!(
                "expected {}x{} means and log_stds, got {} and {}",
                k,
                d,
                means.len(),
                log_stds.len()
            )));
        }
        let finite = logits.iter().chain(&means).chain(&log_stds).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        let mut params = GmmParams { k, d, logits, means, log_stds };
        params.clamp_log_stds();
        Ok(params)
    }

    /// Re-apply the standard-deviation floor (call after any raw update).
    pub fn clamp_log_stds(&mut self) {
        let floor = SIGMA_FLOOR.ln();
        for ls in &mut self.log_stds {
            if *ls < floor {
                *ls = floor;
            }
        }
    }

    /// Mean vector of component `c`.
    #[inline]
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.d..(c + 1) * self.d]
    }

    /// Log-std vector of component `c`.
    #[inline]
    pub fn log_std(&self, c: usize) -> &[f64] {
        &self.log_stds[c * self.d..(c + 1) * self.d]
    }

    /// Softmax of the logits; sums to 1 and is invariant to logit shifts.
    pub fn weights(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self.logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        w
    }

    /// Log-weights, i.e. logits minus their log-sum-exp.
    pub fn log_weights(&self) -> Vec<f64> {
        let lse = logsumexp(&self.logits);
        self.logits.iter().map(|&l| l - lse).collect()
    }

    /// Per-component joint log-densities `ln w_c + ln N(x; mu_c, sigma_c^2)`.
    pub fn component_log_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: x.len() });
        }
        let lw = self.log_weights();
        Ok((0..self.k)
            .map(|c| {
                let mut acc = lw[c];
                for ((&xi, &mi), &ls) in x.iter().zip(self.mean(c)).zip(self.log_std(c)) {
                    let z = (xi - mi) / ls.exp();
                    acc += LOG_INV_SQRT_2PI - ls - 0.5 * z * z;
                }
                acc
            })
            .collect())
    }

    /// Mixture log-density at `x`, evaluated stably in log space.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(logsumexp(&self.component_log_densities(x)?))
    }

    /// Draw `n` labeled points from the mixture; deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Dataset, LabelVector)> {
        let mut rng = rng::stream(seed, "sample");
        self.sample_with(n, &mut rng)
    }

    /// Like [`GmmParams::sample`] but drawing from a caller-owned stream.
    pub fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<(Dataset, LabelVector)> {
        if n == 0 {
            return Err(Error::InvalidParameter("cannot sample 0 points".into()));
        }
        let weights = self.weights();
        let sigmas: Vec<f64> = self.log_stds.iter().map(|&ls| ls.exp()).collect();
        let mut values = Vec::with_capacity(n * self.d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut c = self.k - 1;
            let mut cum = 0.0;
            for (i, &w) in weights.iter().enumerate() {
                cum += w;
                if u < cum {
                    c = i;
                    break;
                }
            }
            let mean = self.mean(c);
            let sigma = &sigmas[c * self.d..(c + 1) * self.d];
            for i in 0..self.d {
                let z: f64 = rng.sample(StandardNormal);
                values.push(mean[i] + sigma[i] * z);
            }
            labels.push(c);
        }
        Ok((Dataset::new(n, self.d, values)?, labels))
    }

    /// Exact 1-D marginal along the unit vector `u`: weights are unchanged,
    /// means project linearly and variances contract as `sum_i u_i^2 s_i^2`.
    pub fn marginalize(&self, u: &[f64]) -> Result<Marginal1D> {
        if u.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: u.len() });
        }
        let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "projection direction must be unit length, |u| = {norm}"
            )));
        }
        let mut means = Vec::with_capacity(self.k);
        let mut stds = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let mean = self.mean(c);
            let ls = self.log_std(c);
            let mut m = 0.0;
            let mut v = 0.0;
            for i in 0..self.d {
                m += u[i] * mean[i];
                let s = ls[i].exp();
                v += u[i] * u[i] * s * s;
            }
            means.push(m);
            stds.push(v.sqrt());
        }
        Ok(Marginal1D { weights: self.weights(), means, stds })
    }
}

impl Marginal1D {
    /// Number of mixture components.
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Mixture density at `t`.
    pub fn pdf(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&w, &m), &s)| {
                let z = (t - m) / s;
                w * (LOG_INV_SQRT_2PI - 0.5 * z * z).exp() / s
            })
            .sum()
    }
}

/// Stable log-sum-exp with the usual max shift.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Choose initial parameters from the data: means are `k` distinct data
/// points picked by `strategy`, every log-std starts at the per-dimension
/// global spread, and weights start uniform (zero logits).
pub fn init_params(
    data: &Dataset,
    k: usize,
    seed: u64,
    strategy: InitStrategy,
) -> Result<GmmParams> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > data.n {
        return Err(Error::InvalidParameter(format!(
            "k={k} exceeds the number of data points n={}",
            data.n
        )));
    }
    let mut rng = rng::stream(seed, "init");
    let indices = match strategy {
        InitStrategy::RandomPoints => rand::seq::index::sample(&mut rng, data.n, k).into_vec(),
        InitStrategy::KmeansPlusPlus => crate::kmeans::kmeanspp_indices(data, k, &mut rng),
    };

    let d = data.d;
    let mut means = Vec::with_capacity(k * d);
    for &i in &indices {
        means.extend_from_slice(data.row(i));
    }

    let mut mean = vec![0.0; d];
    for i in 0..data.n {
        for (m, &v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= data.n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..data.n {
        for j in 0..d {
            let diff = data.values[i * d + j] - mean[j];
            var[j] += diff * diff;
        }
    }
    let log_std_row: Vec<f64> = var
        .iter()
        .map(|&v| (v / data.n as f64).sqrt().max(SIGMA_FLOOR).ln())
        .collect();
    let mut log_stds = Vec::with_capacity(k * d);
    for _ in 0..k {
        log_stds.extend_from_slice(&log_std_row);
    }

    GmmParams::new(k, d, vec![0.0; k], means, log_stds)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    k: usize,
    d: usize,
    logits: Vec<f64>,
    means: Vec<Vec<f64>>,
    log_stds: Vec<Vec<f64>>,
}

/// Write the model as versioned JSON. Floats are encoded with full
/// round-trip precision, so reloading reproduces densities bit-for-bit.
pub fn save_model(params: &GmmParams, path: &Path) -> Result<()> {
    let file = ModelFile {
        version: MODEL_VERSION,
        k: params.k,
        d: params.d,
        logits: params.logits.clone(),
        means: (0..params.k).map(|c| params.mean(c).to_vec()).collect(),
        log_stds: (0..params.k).map(|c| params.log_std(c).to_vec()).collect(),
    };
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut writer, &file)
        .map_err(|e| Error::Format(format!("cannot serialize model: {e}")))?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Read a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<GmmParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let model: ModelFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Format(format!("cannot parse model file: {e}")))?;
    if model.version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {}",
            model.version
        )));
    }
    if model.means.len() != model.k
        || model.log_stds.len() != model.k
        || model.means.iter().any(|r| r.len() != model.d)
        || model.log_stds.iter().any(|r| r.len() != model.d)
    {
        return Err(Error::Format("model shape does not match header".into()));
    }
    GmmParams::new(
        model.k,
        model.d,
        model.logits,
        model.means.into_iter().flatten().collect(),
        model.log_stds.into_iter().flatten().collect(),
    )
}
