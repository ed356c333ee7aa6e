//! Mixture fitting by randomized one-dimensional marginal matching.
//!
//! Each optimization step draws a handful of random unit directions,
//! projects a data batch onto each, builds a kernel-density estimate of the
//! projected data, and measures the KL divergence from that estimate to the
//! model's exact 1-D marginal on the same grid. The mean divergence over
//! directions is the step loss; its analytic gradient (the density estimate
//! is treated as a constant target) drives an Adam update.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams, InitStrategy, Marginal1D, LOG_INV_SQRT_2PI};
use crate::rng;

/// Smallest bin mass a grid density may carry (applied after normalization).
pub const MASS_FLOOR: f64 = 1e-12;

/// A probability vector over a uniform 1-D grid: bin `b` spans
/// `[lo + b*w, lo + (b+1)*w)` with `w = (hi - lo) / bins`.
///
/// Masses are normalized, floored at [`MASS_FLOOR`], and renormalized, so
/// every bin is strictly positive (within one part in 1e9 of the floor) and
/// the total is 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
}

impl GridDensity {
    /// Normalize raw non-negative bin weights into a floored probability
    /// vector. All-zero input degrades to the uniform distribution.
    pub fn from_raw(lo: f64, hi: f64, raw: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if raw.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one bin".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "raw grid weights must be finite and non-negative".into(),
            ));
        }
        let mut masses = raw;
        let total: f64 = masses.iter().sum();
        if total > 0.0 {
            for v in &mut masses {
                *v /= total;
            }
        }
        for v in &mut masses {
            *v = v.max(MASS_FLOOR);
        }
        let sum: f64 = masses.iter().sum();
        for v in &mut masses {
            *v /= sum;
        }
        Ok(GridDensity { lo, hi, masses })
    }

    /// Number of bins.
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// Bin width.
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.masses.len() as f64
    }

    /// Center of bin `b`.
    pub fn center(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.width()
    }

    /// Whether two densities share the exact same support and bin count.
    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.masses.len() == other.masses.len()
    }

    /// Mean and variance of the grid distribution (bin centers weighted by
    /// bin masses).
    pub fn mean_variance(&self) -> (f64, f64) {
        let mean: f64 = (0..self.bins()).map(|b| self.masses[b] * self.center(b)).sum();
        let var: f64 = (0..self.bins())
            .map(|b| {
                let d = self.center(b) - mean;
                self.masses[b] * d * d
            })
            .sum();
        (mean, var)
    }
}

/// Optimization settings. `batch` is capped at the dataset size when used.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub units_per_step: usize,
    pub batch: usize,
    pub bins: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 3000,
            lr: 1e-4,
            units_per_step: 32,
            batch: 4096,
            bins: 256,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl FitConfig {
    /// Check every knob is inside its legal range.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!("lr must be positive, got {}", self.lr)));
        }
        if self.units_per_step == 0 {
            return Err(Error::InvalidParameter("units_per_step must be at least 1".into()));
        }
        if self.bins < 16 {
            return Err(Error::InvalidParameter(format!(
                "bins must be at least 16, got {}",
                self.bins
            )));
        }
        if self.batch < 2 {
            return Err(Error::InvalidParameter(format!(
                "batch must be at least 2, got {}",
                self.batch
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        Ok(())
    }
}

/// Per-step loss history plus total optimization wall time.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub losses: Vec<f64>,
    pub wall_time: Duration,
}

impl FitTrace {
    /// Export as `step,loss,elapsed_ms` CSV.
    ///
    /// The `elapsed_ms` column is written as a constant 0 so that repeated
    /// runs with the same seed produce byte-identical files; the measured
    /// wall time lives in [`FitTrace::wall_time`] and in the run manifest,
    /// not in this deterministic artifact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "step,loss,elapsed_ms")?;
            for (step, loss) in self.losses.iter().enumerate() {
                writeln!(w, "{step},{loss},0")?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

/// Gradient of the fit loss, shaped like the parameters it differentiates.
#[derive(Debug, Clone)]
pub struct GmmGrad {
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_stds: Vec<f64>,
}

impl GmmGrad {
    fn zeros(k: usize, d: usize) -> Self {
        GmmGrad { logits: vec![0.0; k], means: vec![0.0; k * d], log_stds: vec![0.0; k * d] }
    }

    fn add(&mut self, other: &GmmGrad) {
        for (a, b) in self.logits.iter_mut().zip(&other.logits) {
            *a += b;
        }
        for (a, b) in self.means.iter_mut().zip(&other.means) {
            *a += b;
        }
        for (a, b) in self.log_stds.iter_mut().zip(&other.log_stds) {
            *a += b;
        }
    }

    fn scale(&mut self, c: f64) {
        for v in self
            .logits
            .iter_mut()
            .chain(self.means.iter_mut())
            .chain(self.log_stds.iter_mut())
        {
            *v *= c;
        }
    }
}

/// Draw a direction uniformly from the unit sphere in `d` dimensions.
pub fn sample_unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(d >= 1, "dimension must be at least 1");
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Project every dataset row onto the direction `u`.
pub fn project(data: &Dataset, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != data.d {
        return Err(Error::DimensionMismatch { expected: data.d, found: u.len() });
    }
    Ok((0..data.n).map(|i| dot(data.row(i), u)).collect())
}

/// Dot product accumulated in four independent lanes so the adds pipeline;
/// this is the innermost kernel of every projection pass.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for lane in 0..4 {
            acc[lane] += ca[lane] * cb[lane];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Silverman's rule-of-thumb bandwidth,
/// `h = 0.9 * min(std, IQR / 1.34) * m^(-1/5)`,
/// with population std and linearly interpolated quartiles. When that
/// expression vanishes (zero IQR on duplicate-heavy data) the bandwidth
/// falls back to 1e-3 of the data range.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "bandwidth needs at least 2 samples, got {m}"
        )));
    }
    let mean: f64 = samples.iter().sum::<f64>() / m as f64;
    let var: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
    let std = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    let h = 0.9 * std.min(iqr / 1.34) * (m as f64).powf(-0.2);
    if h > 0.0 {
        Ok(h)
    } else {
        let range = sorted[m - 1] - sorted[0];
        Ok(1e-3 * (range + 1e-9))
    }
}

/// Kernel-density estimate of 1-D samples as a grid density.
///
/// Gaussian kernels with Silverman bandwidth `h`, evaluated at the centers
/// of `bins` uniform bins spanning `[min - 3h, max + 3h]`, then normalized
/// and floored per [`GridDensity::from_raw`]. Kernel tails beyond `8h` are
/// dropped; they are below 1e-14 of the peak.
pub fn kde_marginal(projections: &[f64], bins: usize) -> Result<GridDensity> {
    if projections.len() < 2 {
        return Err(Error::Degenerate(format!(
            "KDE needs at least 2 samples, got {}",
            projections.len()
        )));
    }
    if bins < 16 {
        return Err(Error::InvalidParameter(format!("bins must be at least 16, got {bins}")));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in projections {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite projection {v}")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        return Err(Error::Degenerate("all projections are identical".into()));
    }
    let h = silverman_bandwidth(projections)?;
    let lo = min - 3.0 * h;
    let hi = max + 3.0 * h;
    let delta = (hi - lo) / bins as f64;

    // Per-sample sweep over the bins within 8h, using the identity
    // exp(-(z+s)^2/2) = exp(-z^2/2) * exp(-z*s - s^2/2) so each bin costs a
    // couple of multiplies instead of an exp. The step ratio exp(-s^2) and
    // the running multiplier stay finite: the multiplier peaks at
    // exp(8s - s^2/2) <= e^32 over the window.
    let s = delta / h;
    let ratio = (-s * s).exp();
    let mut acc = vec![0.0; bins];
    let last = bins as isize - 1;
    for &x in projections {
        let pos = (x - lo) / delta - 0.5;
        let nearest = pos.round().clamp(0.0, last as f64) as isize;
        let reach = (8.0 * h) / delta;
        let mut b0 = ((pos - reach).ceil() as isize).clamp(0, last);
        let mut b1 = ((pos + reach).floor() as isize).clamp(0, last);
        b0 = b0.min(nearest);
        b1 = b1.max(nearest);
        let z0 = (lo + (b0 as f64 + 0.5) * delta - x) / h;
        let mut g = (-0.5 * z0 * z0).exp();
        let mut mult = (-z0 * s - 0.5 * s * s).exp();
        for slot in &mut acc[b0 as usize..=b1 as usize] {
            *slot += g;
            g *= mult;
            mult *= ratio;
        }
    }
    GridDensity::from_raw(lo, hi, acc)
}

/// Evaluate a 1-D mixture marginal as a grid density on explicit bounds.
pub fn eval_marginal_on_bounds(
    m: &Marginal1D,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<GridDensity> {
    if bins < 16 {
        return Err(Error::InvalidParameter(format!("bins must be at least 16, got {bins}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "grid bounds must be finite with lo < hi, got [{lo}, {hi}]"
        )));
    }
    let delta = (hi - lo) / bins as f64;
    let raw: Vec<f64> = (0..bins).map(|b| m.pdf(lo + (b as f64 + 0.5) * delta)).collect();
    GridDensity::from_raw(lo, hi, raw)
}

/// Evaluate a 1-D mixture marginal on the same grid as `like`.
pub fn eval_marginal_on_grid(m: &Marginal1D, like: &GridDensity) -> Result<GridDensity> {
    eval_marginal_on_bounds(m, like.lo, like.hi, like.bins())
}

/// KL divergence `sum_b target_b * ln(target_b / model_b)` between two
/// densities on the identical grid. Finite by construction since every mass
/// is strictly positive.
pub fn kl_grid(target: &GridDensity, model: &GridDensity) -> Result<f64> {
    if !target.same_grid(model) {
        return Err(Error::InvalidParameter(format!(
            "grid mismatch: [{}, {}] x {} vs [{}, {}] x {}",
            target.lo,
            target.hi,
            target.bins(),
            model.lo,
            model.hi,
            model.bins()
        )));
    }
    Ok(target
        .masses
        .iter()
        .zip(&model.masses)
        .map(|(&q, &p)| q * (q / p).ln())
        .sum())
}

/// Loss and gradient contribution of a single projection direction.
fn unit_loss_grad(
    params: &GmmParams,
    data: &Dataset,
    batch: &[usize],
    u: &[f64],
    bins: usize,
) -> Result<(f64, GmmGrad)> {
    let marg = params.marginalize(u)?;
    let proj: Vec<f64> = batch.iter().map(|&i| dot(data.row(i), u)).collect();
    let target = kde_marginal(&proj, bins)?;

    let k = params.k;
    let d = params.d;
    let norm_const = LOG_INV_SQRT_2PI.exp();

    // Component densities phi[k][b] at the bin centers and their mixture f.
    let mut phi = vec![0.0; k * bins];
    let mut f = vec![0.0; bins];
    for c in 0..k {
        let (m_c, s_c, w_c) = (marg.means[c], marg.stds[c], marg.weights[c]);
        let inv_s = 1.0 / s_c;
        let coef = norm_const * inv_s;
        let row = &mut phi[c * bins..(c + 1) * bins];
        for (b, slot) in row.iter_mut().enumerate() {
            let z = (target.center(b) - m_c) * inv_s;
            *slot = coef * (-0.5 * z * z).exp();
            f[b] += w_c * *slot;
        }
    }

    let mut grad = GmmGrad::zeros(k, d);
    let big_f: f64 = f.iter().sum();

    // Model masses follow the same normalize -> floor -> renormalize chain
    // as GridDensity::from_raw; the gradient below differentiates exactly
    // that chain, with zero flow through floored bins.
    let (loss, bin_grad) = if big_f > 0.0 {
        let n: Vec<f64> = f.iter().map(|&v| v / big_f).collect();
        let m: Vec<f64> = n.iter().map(|&v| v.max(MASS_FLOOR)).collect();
        let s_total: f64 = m.iter().sum();
        let mut loss = 0.0;
        let mut masked = vec![0.0; bins];
        let mut coupling = 0.0;
        for b in 0..bins {
            let p = m[b] / s_total;
            let q = target.masses[b];
            loss += q * (q / p).ln();
            if n[b] > MASS_FLOOR {
                let g = (1.0 - q / p) / s_total;
                masked[b] = g;
                coupling += g * n[b];
            }
        }
        let bin_grad: Vec<f64> = (0..bins).map(|b| (masked[b] - coupling) / big_f).collect();
        (loss, bin_grad)
    } else {
        // The model puts no representable mass on the grid: the floored
        // model is uniform and flat, so the gradient vanishes everywhere.
        let p = 1.0 / bins as f64;
        let loss = target.masses.iter().map(|&q| q * (q / p).ln()).sum();
        (loss, vec![0.0; bins])
    };

    // Chain through the mixture: f_b = sum_c w_c * phi_cb with
    // phi = N(t_b; m_c, s_c), then through softmax for the logits,
    // the projection for the means, and the variance contraction for the
    // log-stds.
    let mut d_weight = vec![0.0; k];
    let mut d_mean1 = vec![0.0; k];
    let mut d_std1 = vec![0.0; k];
    for c in 0..k {
        let (m_c, s_c, w_c) = (marg.means[c], marg.stds[c], marg.weights[c]);
        let inv_s2 = 1.0 / (s_c * s_c);
        let row = &phi[c * bins..(c + 1) * bins];
        let mut dw = 0.0;
        let mut dm = 0.0;
        let mut ds = 0.0;
        for b in 0..bins {
            let g_phi = bin_grad[b] * row[b];
            let t = target.center(b) - m_c;
            dw += g_phi;
            dm += g_phi * t * inv_s2;
            ds += g_phi * (t * t * inv_s2 - 1.0) / s_c;
        }
        d_weight[c] = dw;
        d_mean1[c] = w_c * dm;
        d_std1[c] = w_c * ds;
    }

    let w = &marg.weights;
    let coupling: f64 = (0..k).map(|c| w[c] * d_weight[c]).sum();
    for c in 0..k {
        grad.logits[c] = w[c] * (d_weight[c] - coupling);
        let s_c = marg.stds[c];
        for (i, &u_i) in u.iter().enumerate() {
            let sigma = params.log_std(c)[i].exp();
            grad.means[c * d + i] = d_mean1[c] * u_i;
            grad.log_stds[c * d + i] = d_std1[c] * u_i * u_i * sigma * sigma / s_c;
        }
    }
    Ok((loss, grad))
}

/// Mean loss and analytic gradient over a set of projection directions.
///
/// `batch` lists the dataset rows to project. The density-estimate target
/// is a constant: no gradient flows into it.
pub fn loss_and_grad(
    params: &GmmParams,
    data: &Dataset,
    batch: &[usize],
    units: &[Vec<f64>],
    bins: usize,
) -> Result<(f64, GmmGrad)> {
    if units.is_empty() {
        return Err(Error::InvalidParameter("need at least one projection direction".into()));
    }
    if params.d != data.d {
        return Err(Error::DimensionMismatch { expected: params.d, found: data.d });
    }
    let per_unit: Vec<Result<(f64, GmmGrad)>> = units
        .par_iter()
        .map(|u| unit_loss_grad(params, data, batch, u, bins))
        .collect();
    let mut total_loss = 0.0;
    let mut total_grad = GmmGrad::zeros(params.k, params.d);
    for item in per_unit {
        let (loss, grad) = item?;
        total_loss += loss;
        total_grad.add(&grad);
    }
    let inv = 1.0 / units.len() as f64;
    total_grad.scale(inv);
    Ok((total_loss * inv, total_grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(len: usize, config: &FitConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Fit a `k`-component mixture to the data.
///
/// Initialization picks `k` data points by D^2 seeding with uniform weights
/// and globally pooled spreads; each of `config.steps` iterations then draws
/// `units_per_step` fresh directions and a fresh batch (without replacement
/// within a step), takes one Adam step on the analytic gradient, and
/// re-clamps the log-std floor. Deterministic for a fixed seed and input.
pub fn fit(data: &Dataset, k: usize, config: &FitConfig) -> Result<(GmmParams, FitTrace)> {
    config.validate()?;
    let mut params = gmm::init_params(data, k, config.seed, InitStrategy::KmeansPlusPlus)?;
    let mut rng = rng::stream(config.seed, "fit");
    let batch_size = config.batch.min(data.n);
    let d = data.d;

    let n_logits = k;
    let n_means = k * d;
    let mut theta = Vec::with_capacity(n_logits + 2 * n_means);
    theta.extend_from_slice(&params.logits);
    theta.extend_from_slice(&params.means);
    theta.extend_from_slice(&params.log_stds);
    let mut adam = Adam::new(theta.len(), config);
    let floor = crate::gmm::SIGMA_FLOOR.ln();

    let start = Instant::now();
    let mut losses = Vec::with_capacity(config.steps);
    let mut grad_flat = vec![0.0; theta.len()];
    for _ in 0..config.steps {
        let units: Vec<Vec<f64>> =
            (0..config.units_per_step).map(|_| sample_unit_vector(d, &mut rng)).collect();
        let batch: Vec<usize> = if batch_size < data.n {
            rand::seq::index::sample(&mut rng, data.n, batch_size).into_vec()
        } else {
            (0..data.n).collect()
        };
        let (loss, grad) = loss_and_grad(&params, data, &batch, &units, config.bins)?;
        losses.push(loss);

        grad_flat[..n_logits].copy_from_slice(&grad.logits);
        grad_flat[n_logits..n_logits + n_means].copy_from_slice(&grad.means);
        grad_flat[n_logits + n_means..].copy_from_slice(&grad.log_stds);
        adam.step(&mut theta, &grad_flat);
        for v in &mut theta[n_logits + n_means..] {
            if *v < floor {
                *v = floor;
            }
        }
        params.logits.copy_from_slice(&theta[..n_logits]);
        params.means.copy_from_slice(&theta[n_logits..n_logits + n_means]);
        params.log_stds.copy_from_slice(&theta[n_logits + n_means..]);
    }
    Ok((params, FitTrace { losses, wall_time: start.elapsed() }))
}
