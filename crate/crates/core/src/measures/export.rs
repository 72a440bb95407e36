//! CSV dumps of marginal and control histograms for external plotting.

use std::io::Write;

use super::{ControlLawFlow, WeightedMeasure};
use crate::error::{MfgError, Result};
use crate::scalar::Real;

const OP: &str = "measures::export";

fn histogram<S: Real>(values: &[S], weights: &[S], bins: usize) -> (S, S, Vec<S>) {
    let lo = values.iter().copied().fold(S::infinity(), S::min);
    let hi = values.iter().copied().fold(S::neg_infinity(), S::max);
    let width = if hi > lo { (hi - lo) / S::count(bins) } else { S::one() };
    let total: S = weights.iter().copied().sum();
    let mut mass = vec![S::zero(); bins];
    for (&v, &w) in values.iter().zip(weights) {
        let b = ((v - lo) / width).floor().to_usize().unwrap_or(0).min(bins - 1);
        mass[b] += w / total;
    }
    let density = mass.into_iter().map(|m| m / width).collect();
    (lo, width, density)
}

/// Rows `step,t,bin_lo,bin_hi,density` of the first state component's marginals.
pub fn write_marginal_histograms<S: Real, W: Write>(
    mu: &WeightedMeasure<S>,
    steps: &[usize],
    bins: usize,
    mut out: W,
) -> Result<()> {
    let paths = mu.paths();
    writeln!(out, "step,t,bin_lo,bin_hi,density").map_err(|e| MfgError::io(OP, e))?;
    for &k in steps {
        let values: Vec<S> = (0..paths.num_paths()).map(|m| paths.state(m, k)[0]).collect();
        let (lo, width, density) = histogram(&values, mu.weights(), bins.max(1));
        let t = paths.grid().time(k);
        for (b, d) in density.iter().enumerate() {
            let a = lo + S::count(b) * width;
            writeln!(out, "{},{},{},{},{}", k, t, a, a + width, d).map_err(|e| MfgError::io(OP, e))?;
        }
    }
    Ok(())
}

/// Rows `step,t,bin_lo,bin_hi,density` of the first control component of `ν_t`.
pub fn write_control_histograms<S: Real, W: Write>(
    nu: &ControlLawFlow<S>,
    dt: S,
    bins: usize,
    mut out: W,
) -> Result<()> {
    writeln!(out, "step,t,bin_lo,bin_hi,density").map_err(|e| MfgError::io(OP, e))?;
    for k in 0..nu.num_steps() {
        let s = nu.step(k);
        let values: Vec<S> = (0..s.len()).map(|i| s.point(i)[0]).collect();
        let (lo, width, density) = histogram(&values, s.weights(), bins.max(1));
        for (b, d) in density.iter().enumerate() {
            let a = lo + S::count(b) * width;
            writeln!(out, "{},{},{},{},{}", k, S::count(k) * dt, a, a + width, d).map_err(|e| MfgError::io(OP, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{PathSet, TimeGrid};
    use std::sync::Arc;

    #[test]
    fn histogram_integrates_to_one() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let states: Vec<f64> = (0..20).flat_map(|i| [0.0, i as f64 * 0.37]).collect();
        let mu = WeightedMeasure::uniform(Arc::new(PathSet::from_states(grid, 1, states).unwrap()));
        let mut buf = Vec::new();
        write_marginal_histograms(&mu, &[1], 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let area: f64 = text
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
                (f[3] - f[2]) * f[4]
            })
            .sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_control_histogram() {
        let nu = ControlLawFlow::dirac(&[0.5], 3);
        let mut buf = Vec::new();
        write_control_histograms(&nu, 0.1, 2, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 2);
    }
}
