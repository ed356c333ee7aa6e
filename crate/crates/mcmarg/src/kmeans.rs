//! Lloyd's k-means with D^2-weighted seeding. This is the comparison
//! baseline for the mixture pipeline and also supplies the seeding routine
//! used to initialize mixture means.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

/// Default iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 300;

/// Default relative centroid-movement tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Fitted clustering: flat `k x d` centroids, one label per point, the
/// final within-cluster sum of squares, and the number of update rounds.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub k: usize,
    pub d: usize,
    pub centroids: Vec<f64>,
    pub labels: LabelVector,
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
/// Squared Euclidean distance, accumulated in four independent lanes so the
/// floating-point adds pipeline instead of forming one serial chain. This is
/// the innermost kernel of both Lloyd iterations and brute-force neighbor
/// search; on 512-d data the lane split is worth ~4x.
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for lane in 0..4 {
            let d = ca[lane] - cb[lane];
            acc[lane] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Pick `k` distinct row indices by D^2 sampling: the first uniformly, each
/// next with probability proportional to its squared distance to the nearest
/// already-chosen row. Falls back to the first unchosen row if all remaining
/// distances are zero (duplicate-heavy data).
pub(crate) fn kmeanspp_indices(data: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(k >= 1 && k <= data.n, "need 1 <= k <= n");
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..data.n);
    chosen.push(first);
    let mut best: Vec<f64> = (0..data.n)
        .map(|i| dist_sq(data.row(i), data.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut r: f64 = rng.random::<f64>() * total;
            let mut pick = data.n - 1;
            for (i, &w) in best.iter().enumerate() {
                r -= w;
                if r <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            (0..data.n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, slot) in best.iter_mut().enumerate() {
            let d = dist_sq(data.row(i), data.row(next));
            if d < *slot {
                *slot = d;
            }
        }
    }
    chosen
}

/// Label every point with its nearest centroid (ties break to the lowest
/// centroid index). Returns the labels, per-point squared distances, and
/// their sum (the inertia).
pub fn assign_to_centroids(
    data: &Dataset,
    centroids: &[f64],
    k: usize,
) -> (LabelVector, Vec<f64>, f64) {
    let d = data.d;
    assert_eq!(centroids.len(), k * d, "centroid matrix must be k x d");
    let mut labels = Vec::with_capacity(data.n);
    let mut dists = Vec::with_capacity(data.n);
    let mut inertia = 0.0;
    for i in 0..data.n {
        let row = data.row(i);
        let mut best_c = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let dc = dist_sq(row, &centroids[c * d..(c + 1) * d]);
            if dc < best_d {
                best_d = dc;
                best_c = c;
            }
        }
        labels.push(best_c);
        dists.push(best_d);
        inertia += best_d;
    }
    (labels, dists, inertia)
}

/// Run k-means to convergence (centroid movement below `tol` relative to the
/// data scale) or `max_iters` update rounds, whichever comes first.
///
/// Each round recomputes centroids as cluster means, reseeds any emptied
/// centroid to the point currently worst-served, and reassigns. The
/// objective is checked to be non-increasing at every reassignment.
pub fn kmeans_fit(
    data: &Dataset,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > data.n {
        return Err(Error::InvalidParameter(format!(
            "k={k} exceeds the number of data points n={}",
            data.n
        )));
    }
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be finite and >= 0, got {tol}")));
    }
    let d = data.d;
    let scale = data.values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));

    let mut rng = rng::stream(seed, "kmeans");
    let seeds = kmeanspp_indices(data, k, &mut rng);
    let mut centroids = Vec::with_capacity(k * d);
    for &i in &seeds {
        centroids.extend_from_slice(data.row(i));
    }

    let (mut labels, mut dists, mut inertia) = assign_to_centroids(data, &centroids, k);
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    new_centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        // Claim the currently worst-served points for emptied clusters, one
        // distinct point per cluster.
        let mut claimed = dists.clone();
        for c in 0..k {
            if counts[c] == 0 {
                let far = claimed
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("dataset is non-empty");
                new_centroids[c * d..(c + 1) * d].copy_from_slice(data.row(far));
                claimed[far] = f64::NEG_INFINITY;
            }
        }

        let movement = (0..k)
            .map(|c| dist_sq(&new_centroids[c * d..(c + 1) * d], &centroids[c * d..(c + 1) * d]).sqrt())
            .fold(0.0_f64, f64::max);
        centroids = new_centroids;

        let (new_labels, new_dists, new_inertia) = assign_to_centroids(data, &centroids, k);
        assert!(
            new_inertia <= inertia * (1.0 + 1e-9) + 1e-9,
            "objective increased: {inertia} -> {new_inertia}"
        );
        labels = new_labels;
        dists = new_dists;
        inertia = new_inertia;

        if movement <= tol * (1.0 + scale) {
            break;
        }
    }

    Ok(KmeansResult { k, d, centroids, labels, inertia, iterations })
}

/// Label fresh queries with their nearest fitted centroid (ties to the
/// lowest centroid index).
pub fn kmeans_assign(model: &KmeansResult, queries: &Dataset) -> Result<LabelVector> {
    if queries.d != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, found: queries.d });
    }
    let (labels, _, _) = assign_to_centroids(queries, &model.centroids, model.k);
    Ok(labels)
}
