//! Cluster assignment from a fitted mixture.
//!
//! The primary mode resamples a fixed pool of labeled points from the model
//! (each component contributes in proportion to its weight) and labels every
//! query by majority vote among its exact nearest neighbors in that pool.
//! A log-density argmax mode serves as a cheap diagnostic that stays
//! well-defined in high dimensions where linear-space densities underflow.

use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::rng;

/// How queries are labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    /// Majority vote among nearest reference samples.
    KnnVote,
    /// Highest per-component joint log-density.
    LogDensityArgmax,
}

/// Assignment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignConfig {
    /// Reference pool size (vote mode).
    pub total_samples: usize,
    /// Neighbors consulted per query (vote mode).
    pub k_neighbors: usize,
    pub seed: u64,
    pub mode: AssignMode,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig { total_samples: 60_000, k_neighbors: 50, seed: 0, mode: AssignMode::KnnVote }
    }
}

impl AssignConfig {
    /// Check pool and neighbor counts against a mixture of `k` components.
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.total_samples < k {
            return Err(Error::InvalidParameter(format!(
                "pool of {} cannot cover {k} components",
                self.total_samples
            )));
        }
        if self.k_neighbors == 0 || self.k_neighbors > self.total_samples {
            return Err(Error::InvalidParameter(format!(
                "k_neighbors must be in [1, {}], got {}",
                self.total_samples, self.k_neighbors
            )));
        }
        Ok(())
    }
}

/// Model-drawn reference pool: `points.n` samples, each tagged with the
/// component (in `[0, k)`) that generated it.
#[derive(Debug, Clone)]
pub struct ReferenceSampleSet {
    pub points: Dataset,
    pub component_ids: LabelVector,
    pub k: usize,
}

/// Split `total` pool slots across components: each gets `floor(total * w)`,
/// and the leftover slots go one each to the largest fractional remainders
/// (ties to the lower index), so the counts sum to `total` exactly.
pub fn allocate_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut allocated = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as f64 * w;
        let floor = exact.floor() as usize;
        counts.push(floor);
        allocated += floor;
        fracs.push((exact - floor as f64, i));
    }
    let leftover = total.saturating_sub(allocated).min(weights.len());
    // Descending fraction, ascending index.
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter().take(leftover) {
        counts[i] += 1;
    }
    counts
}

/// Draw the labeled reference pool from the mixture; deterministic per seed.
/// Samples are laid out component by component in ascending component order.
pub fn build_reference_samples(
    params: &GmmParams,
    config: &AssignConfig,
) -> Result<ReferenceSampleSet> {
    config.validate(params.k)?;
    let counts = allocate_counts(&params.weights(), config.total_samples);
    let d = params.d;
    let mut rng = rng::stream(config.seed, "refs");
    let mut values = Vec::with_capacity(config.total_samples * d);
    let mut component_ids = Vec::with_capacity(config.total_samples);
    for (c, &count) in counts.iter().enumerate() {
        let mean = params.mean(c);
        let sigmas: Vec<f64> = params.log_std(c).iter().map(|ls| ls.exp()).collect();
        for _ in 0..count {
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                values.push(mean[i] + sigmas[i] * z);
            }
            component_ids.push(c);
        }
    }
    Ok(ReferenceSampleSet {
        points: Dataset::new(config.total_samples, d, values)?,
        component_ids,
        k: params.k,
    })
}

/// Label queries by majority vote among their `k_neighbors` nearest
/// reference samples (exact brute-force Euclidean search).
///
/// Distance ties resolve to the lower reference index; vote ties resolve to
/// the lowest component id.
pub fn assign_knn(
    queries: &Dataset,
    refs: &ReferenceSampleSet,
    k_neighbors: usize,
) -> Result<LabelVector> {
    if queries.d != refs.points.d {
        return Err(Error::DimensionMismatch { expected: refs.points.d, found: queries.d });
    }
    let m = refs.points.n;
    if k_neighbors == 0 || k_neighbors > m {
        return Err(Error::InvalidParameter(format!(
            "k_neighbors must be in [1, {m}], got {k_neighbors}"
        )));
    }
    let labels: Vec<usize> = (0..queries.n)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(m), vec![0usize; refs.k]),
            |(scratch, votes), qi| {
                let q = queries.row(qi);
                scratch.clear();
                scratch.extend(
                    (0..m).map(|ri| (crate::kmeans::dist_sq(q, refs.points.row(ri)), ri)),
                );
                // (distance, reference index) is a strict total order, so the
                // k smallest form a well-defined set and encode the
                // lower-index tie rule.
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k_neighbors < m {
                    scratch.select_nth_unstable_by(k_neighbors - 1, cmp);
                }
                votes.fill(0);
                for &(_, ri) in &scratch[..k_neighbors] {
                    votes[refs.component_ids[ri]] += 1;
                }
                let mut best = 0usize;
                for (c, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = c;
                    }
                }
                best
            },
        )
        .collect();
    Ok(labels)
}

/// Label queries by the component with the highest joint log-density
/// `ln w_c + ln N(x; mu_c, sigma_c^2)`; ties resolve to the lowest index.
pub fn assign_argmax_logdensity(params: &GmmParams, queries: &Dataset) -> Result<LabelVector> {
    if queries.d != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, found: queries.d });
    }
    let labels: Vec<usize> = (0..queries.n)
        .into_par_iter()
        .map(|qi| {
            let ld = params
                .component_log_densities(queries.row(qi))
                .expect("dimensions checked above");
            let mut best = 0usize;
            for (c, &v) in ld.iter().enumerate() {
                if v > ld[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(labels)
}

/// Label queries according to `config.mode`.
pub fn assign(params: &GmmParams, queries: &Dataset, config: &AssignConfig) -> Result<LabelVector> {
    match config.mode {
        AssignMode::KnnVote => {
            let refs = build_reference_samples(params, config)?;
            assign_knn(queries, &refs, config.k_neighbors)
        }
        AssignMode::LogDensityArgmax => assign_argmax_logdensity(params, queries),
    }
}
