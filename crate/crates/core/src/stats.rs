//! Entropy metrics: tabular distributions, particle statistics, histograms and
//! the uniform-to-optimal normalization.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};

/// Floor for coincident-particle distances inside the log.
const MIN_DISTANCE: f64 = 1e-12;

/// `(d^D(s,a), d̄^D(s))`; the marginal is summed from the joint so the two agree exactly.
pub fn empirical_distributions(dataset: &TransitionDataset) -> Result<(Array2<f64>, Array1<f64>)> {
    let d = dataset.d_sa()?;
    let d_bar = d.sum_axis(ndarray::Axis(1));
    Ok((d, d_bar))
}

/// Per-point `log ‖x_i − x_i^{(k)}‖₂` to the k-th nearest other point, and their mean.
pub fn knn_log_distance_statistic(points: &[Vec<f64>], k: usize) -> Result<(Vec<f64>, f64)> {
    if k == 0 || points.len() < k + 1 {
        return Err(Error::InvalidArgument(format!("{} points for k = {k}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points of differing dimension".into()));
    }
    let values: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut dists: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            dists.sort_by(f64::total_cmp);
            dists[k - 1].max(MIN_DISTANCE).ln()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((values, mean))
}

/// Entropy of a `bins × bins` histogram over `bounds = [(x_lo, x_hi), (y_lo, y_hi)]`;
/// out-of-range points land in the edge bins.
pub fn binned_entropy(points: &[[f64; 2]], bounds: [(f64, f64); 2], bins: usize) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument(format!("bins {bins}, bounds {bounds:?}")));
    }
    let index = |x: f64, (lo, hi): (f64, f64)| {
        let t = ((x - lo) / (hi - lo) * bins as f64).floor();
        t.clamp(0.0, (bins - 1) as f64) as usize
    };
    let mut hist = vec![0u64; bins * bins];
    for p in points {
        hist[index(p[0], bounds[0]) * bins + index(p[1], bounds[1])] += 1;
    }
    let n = points.len() as f64;
    Ok(crate::mdp::entropy_unchecked(hist.into_iter().map(|c| c as f64 / n)))
}

/// `(h − h_uniform)/(h* − h_uniform)`, unclipped. Returns `(1.0, true)` when
/// `h* ≤ h_uniform` (uniform already optimal).
pub fn normalized_entropy(h: f64, h_uniform_policy: f64, h_star: f64) -> (f64, bool) {
    if h_star <= h_uniform_policy {
        (1.0, true)
    } else {
        ((h - h_uniform_policy) / (h_star - h_uniform_policy), false)
    }
}

/// One row of the per-iteration metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub episodes: usize,
    pub policy_entropy: f64,
    pub normalized_policy_entropy: f64,
    pub data_entropy: f64,
    pub normalized_data_entropy: f64,
    pub objective: Option<f64>,
}

impl MetricRecord {
    pub const HEADER: [&'static str; 9] = [
        "method",
        "seed",
        "iteration",
        "episodes",
        "policy_entropy",
        "normalized_policy_entropy",
        "data_entropy",
        "normalized_data_entropy",
        "objective",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_transition_distribution() {
        let mut ds = TransitionDataset::new(3, 2);
        ds.push(0, 1, 2).unwrap();
        let (d, d_bar) = empirical_distributions(&ds).unwrap();
        assert_eq!(d[[0, 1]], 1.0);
        assert_eq!(d.sum(), 1.0);
        assert_eq!(d_bar.to_vec(), vec![1.0, 0.0, 0.0]);
        assert!(empirical_distributions(&TransitionDataset::new(2, 2)).is_err());
    }

    #[test]
    fn sampled_distribution_converges() {
        let target = [0.1, 0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ds = TransitionDataset::new(2, 2);
        for _ in 0..100_000 {
            let u: f64 = rng.random();
            let idx = target.iter().scan(0.0, |c, p| { *c += p; Some(*c) }).position(|c| u < c).unwrap_or(3);
            ds.push(idx / 2, idx % 2, 0).unwrap();
        }
        let (d, _) = empirical_distributions(&ds).unwrap();
        for (i, p) in target.iter().enumerate() {
            assert!((d[[i / 2, i % 2]] - p).abs() < 0.01);
        }
    }

    #[test]
    fn knn_line_example() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        let (v, mean) = knn_log_distance_statistic(&pts, 1).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 2f64.ln()]);
        assert_abs_diff_eq!(mean, 2f64.ln() / 3.0, epsilon = 1e-15);
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] * 4.0]).collect();
        let (vs, _) = knn_log_distance_statistic(&scaled, 1).unwrap();
        for (a, b) in vs.iter().zip(&v) {
            assert_abs_diff_eq!(*a, b + 4f64.ln(), epsilon = 1e-12);
        }
        assert!(knn_log_distance_statistic(&pts, 3).is_err());
        let (dup, _) = knn_log_distance_statistic(&[vec![1.0], vec![1.0]], 1).unwrap();
        assert_eq!(dup[0], MIN_DISTANCE.ln());
    }

    #[test]
    fn histogram_examples() {
        let bounds = [(0.0, 1.0), (0.0, 1.0)];
        assert_eq!(binned_entropy(&[[0.1, 0.1], [0.12, 0.13]], bounds, 5).unwrap(), 0.0);
        let grid: Vec<[f64; 2]> = (0..4).flat_map(|i| (0..4).map(move |j| [(i as f64 + 0.5) / 4.0, (j as f64 + 0.5) / 4.0])).collect();
        assert_abs_diff_eq!(binned_entropy(&grid, bounds, 4).unwrap(), 16f64.ln(), epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<[f64; 2]> = (0..10_000).map(|_| [rng.random(), rng.random()]).collect();
        // Plug-in entropy sits about (K − 1)/(2N) below log K for N samples over K bins.
        let k = 51.0 * 51.0;
        let expected = f64::ln(k) - (k - 1.0) / (2.0 * pts.len() as f64);
        assert!((binned_entropy(&pts, bounds, 51).unwrap() - expected).abs() < 0.05);
        // Out-of-range points clip into edge bins.
        assert_eq!(binned_entropy(&[[-5.0, 9.0], [0.0, 0.99]], bounds, 3).unwrap(), 0.0);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalized_entropy(1.0, 1.0, 2.0), (0.0, false));
        assert_eq!(normalized_entropy(2.0, 1.0, 2.0), (1.0, false));
        assert_eq!(normalized_entropy(1.5, 1.0, 2.0), (0.5, false));
        assert_eq!(normalized_entropy(1.5, 2.0, 2.0), (1.0, true));
    }
}
