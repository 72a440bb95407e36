use crate::error::{MfgError, Result};
use crate::scalar::Real;

const OP: &str = "measures::quantile_radius";

fn check_level<S: Real>(y: S) -> Result<()> {
    if !(y > S::zero() && y < S::one()) {
        return Err(MfgError::usage(OP, format!("mass level {} outside (0, 1)", y)));
    }
    Ok(())
}

/// `inf{ r > 0 : μ(B(x, r)) ≥ y }` for a weighted point cloud in ℝ^d
/// (`points` row-major, `n × d`), with closed balls.
///
/// The infimum is attained at one of the sample distances, so the result is
/// always an exact distance from `x` to some point of the cloud.
pub fn quantile_radius<S: Real>(points: &[S], weights: &[S], dim: usize, x: &[S], y: S) -> Result<S> {
    check_level(y)?;
    if weights.is_empty() || points.len() != weights.len() * dim || x.len() != dim {
        return Err(MfgError::usage(OP, "empty or malformed point cloud"));
    }
    let total: S = weights.iter().copied().sum();
    let mut by_distance: Vec<(S, S)> = points
        .chunks_exact(dim)
        .zip(weights)
        .map(|(p, &w)| {
            let d2 = p.iter().zip(x).fold(S::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            (d2.sqrt(), w)
        })
        .collect();
    by_distance.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut mass = S::zero();
    let mut i = 0;
    while i < by_distance.len() {
        let r = by_distance[i].0;
        // the ball is closed: take every point at this distance at once
        while i < by_distance.len() && by_distance[i].0 == r {
            mass += by_distance[i].1;
            i += 1;
        }
        if mass / total >= y {
            return Ok(r);
        }
    }
    Ok(by_distance.last().map(|p| p.0).unwrap_or_else(S::zero))
}

/// One-dimensional weighted cloud sorted by key, with prefix sums of the
/// weights and of `weight × value` for a companion value per point.
///
/// Supports `O(log n)` ball masses and ball averages, which is what the
/// nearest-neighbour interactions and rank functionals need.
#[derive(Debug, Clone)]
pub struct SortedLine<S> {
    keys: Vec<S>,
    prefix_weight: Vec<S>,
    prefix_value: Vec<S>,
    total: S,
}

impl<S: Real> SortedLine<S> {
    pub fn new(keys: &[S], weights: &[S], values: &[S]) -> Self {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut sorted = Vec::with_capacity(keys.len());
        let mut pw = Vec::with_capacity(keys.len() + 1);
        let mut pv = Vec::with_capacity(keys.len() + 1);
        pw.push(S::zero());
        pv.push(S::zero());
        for &i in &order {
            sorted.push(keys[i]);
            pw.push(*pw.last().unwrap() + weights[i]);
            pv.push(*pv.last().unwrap() + weights[i] * values[i]);
        }
        let total = *pw.last().unwrap();
        SortedLine {
            keys: sorted,
            prefix_weight: pw,
            prefix_value: pv,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn total_weight(&self) -> S {
        self.total
    }

    /// Number of keys `< x` (`strict`) or `≤ x`.
    fn rank(&self, x: S, strict: bool) -> usize {
        if strict {
            self.keys.partition_point(|&k| k < x)
        } else {
            self.keys.partition_point(|&k| k <= x)
        }
    }

    /// Normalized mass of `(-∞, x]`.
    pub fn mass_below(&self, x: S) -> S {
        self.prefix_weight[self.rank(x, false)] / self.total
    }

    /// Index range of the closed ball `[c - r, c + r]`.
    pub fn ball(&self, c: S, r: S) -> (usize, usize) {
        (self.rank(c - r, true), self.rank(c + r, false))
    }

    /// Raw (unnormalized) weight and weighted value sum over an index range.
    pub fn range_sums(&self, range: (usize, usize)) -> (S, S) {
        let (lo, hi) = range;
        (
            self.prefix_weight[hi] - self.prefix_weight[lo],
            self.prefix_value[hi] - self.prefix_value[lo],
        )
    }

    /// Same quantity as [`quantile_radius`], found by expanding outwards from `c`.
    pub fn quantile_radius(&self, c: S, y: S) -> Result<S> {
        check_level(y)?;
        if self.keys.is_empty() {
            return Err(MfgError::usage(OP, "empty point cloud"));
        }
        let n = self.keys.len();
        let mut hi = self.rank(c, true);
        let mut lo = hi;
        loop {
            let left = if lo > 0 { Some(c - self.keys[lo - 1]) } else { None };
            let right = if hi < n { Some(self.keys[hi] - c) } else { None };
            let r = match (left, right) {
                (Some(l), Some(r)) => l.min(r),
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => return Ok(S::zero()),
            };
            while lo > 0 && c - self.keys[lo - 1] <= r {
                lo -= 1;
            }
            while hi < n && self.keys[hi] - c <= r {
                hi += 1;
            }
            let mass = (self.prefix_weight[hi] - self.prefix_weight[lo]) / self.total;
            if mass >= y || (lo == 0 && hi == n) {
                return Ok(r);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Exhaustive scan: try every sample distance as a radius.
    fn brute_force(points: &[f64], weights: &[f64], dim: usize, x: &[f64], y: f64) -> f64 {
        let total: f64 = weights.iter().sum();
        let dists: Vec<f64> = points
            .chunks_exact(dim)
            .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        let mut best = f64::INFINITY;
        for &r in &dists {
            let mass: f64 = dists.iter().zip(weights).filter(|(d, _)| **d <= r).map(|(_, w)| w).sum();
            if mass / total >= y && r < best {
                best = r;
            }
        }
        best
    }

    #[test]
    fn three_point_example() {
        let r = quantile_radius(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0], 1, &[0.0], 0.5).unwrap();
        assert_eq!(r, 1.0);
        let line = SortedLine::new(&[2.0, 0.0, 1.0], &[1.0; 3], &[0.0; 3]);
        assert_eq!(line.quantile_radius(0.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn mass_at_center_gives_zero_radius() {
        let r = quantile_radius(&[0.0, 0.0, 5.0], &[1.0, 1.0, 1.0], 1, &[0.0], 0.6).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(quantile_radius::<f64>(&[], &[], 1, &[0.0], 0.5).is_err());
        assert!(quantile_radius(&[0.0], &[1.0], 1, &[0.0], 1.0).is_err());
        assert!(quantile_radius(&[0.0], &[1.0], 1, &[0.0], 0.0).is_err());
    }

    #[test]
    fn uniform_cloud_half_mass_radius() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let w = vec![1.0; 100];
        let r = quantile_radius(&pts, &w, 1, &[0.5], 0.5).unwrap();
        assert!((r - 0.25).abs() < 0.05, "r = {}", r);
        assert_eq!(r, brute_force(&pts, &w, 1, &[0.5], 0.5));
    }

    #[test]
    fn agrees_with_exhaustive_scan_on_small_clouds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..500 {
            let n = 1 + trial % 20;
            let dim = 1 + trial % 3;
            let pts: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: f64 = rng.random_range(0.01..0.99);
            let r = quantile_radius(&pts, &w, dim, &x, y).unwrap();
            assert_eq!(r, brute_force(&pts, &w, dim, &x, y));
            if dim == 1 {
                let line = SortedLine::new(&pts, &w, &pts);
                assert_eq!(line.quantile_radius(x[0], y).unwrap(), r);
            }
        }
    }

    proptest! {
        #[test]
        fn radius_is_monotone_in_level(
            pts in prop::collection::vec(-5.0f64..5.0, 1..40),
            x in -5.0f64..5.0,
            y1 in 0.01f64..0.99,
            y2 in 0.01f64..0.99,
        ) {
            let w = vec![1.0; pts.len()];
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            let r_lo = quantile_radius(&pts, &w, 1, &[x], lo).unwrap();
            let r_hi = quantile_radius(&pts, &w, 1, &[x], hi).unwrap();
            prop_assert!(r_lo <= r_hi);
        }

        #[test]
        fn ball_sums_match_direct_count(
            pts in prop::collection::vec(-3.0f64..3.0, 1..30),
            c in -3.0f64..3.0,
            r in 0.0f64..2.0,
        ) {
            let w: Vec<f64> = (0..pts.len()).map(|i| 1.0 + i as f64 * 0.1).collect();
            let line = SortedLine::new(&pts, &w, &pts);
            let (mass, value) = line.range_sums(line.ball(c, r));
            let direct_mass: f64 = pts.iter().zip(&w).filter(|(p, _)| (**p - c).abs() <= r).map(|(_, w)| w).sum();
            let direct_value: f64 = pts.iter().zip(&w).filter(|(p, _)| (**p - c).abs() <= r).map(|(p, w)| w * p).sum();
            prop_assert!((mass - direct_mass).abs() < 1e-9);
            prop_assert!((value - direct_value).abs() < 1e-9);
        }
    }
}
