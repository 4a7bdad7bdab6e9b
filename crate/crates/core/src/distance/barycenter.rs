//! Entropic Wasserstein barycenters on a pixel grid by iterative Bregman
//! projections. The Gibbs kernel of the normalized squared-euclidean cost
//! factors into a row and a column kernel, so every kernel application is
//! two one-dimensional log-sum-exp passes.

use super::measure::{to_measure, GridMeasure};
use super::sinkhorn::log_sum_exp;
use super::wasserstein::diag_sq;
use crate::attribution::AttributionMap;
use crate::error::invalid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarycenterParams {
    /// Entropic regularization in units of the normalized ground cost.
    pub epsilon: f64,
    pub iterations: usize,
    /// Early stop once successive barycenters differ by less than this in L1.
    pub tol: f64,
}

impl Default for BarycenterParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            iterations: 1000,
            tol: 1e-10,
        }
    }
}

/// Log-domain Gibbs kernel `K = exp(-C/ε)` on an `h × w` grid.
struct GridKernel {
    h: usize,
    w: usize,
    /// `-(Δ)² / (ε·diag²)` for offsets `0..h` and `0..w`.
    row: Vec<f64>,
    col: Vec<f64>,
}

impl GridKernel {
    fn new(h: usize, w: usize, eps: f64) -> Self {
        let s = eps * diag_sq(h, w);
        Self {
            h,
            w,
            row: (0..h).map(|d| -((d * d) as f64) / s).collect(),
            col: (0..w).map(|d| -((d * d) as f64) / s).collect(),
        }
    }

    /// `log (K exp(x))`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = log_sum_exp((0..w).map(|c2| self.col[c.abs_diff(c2)] + x[r * w + c2]));
            }
        }
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = log_sum_exp((0..h).map(|r2| self.row[r.abs_diff(r2)] + tmp[r2 * w + c]));
            }
        }
        out
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {n} measures", weights.len())));
    }
    if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("weights", "must be non-negative"));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid("weights", format!("sum to {s}, expected 1")));
    }
    Ok(())
}

fn common_dims(maps: &[AttributionMap]) -> Result<(usize, usize)> {
    let first = maps.first().ok_or(Error::EmptyDataset)?;
    if let Some(m) = maps.iter().find(|m| m.dims() != first.dims()) {
        return Err(Error::Shape(format!(
            "maps {:?} and {:?} differ in size",
            first.dims(),
            m.dims()
        )));
    }
    Ok(first.dims())
}

pub fn wasserstein_barycenter(
    maps: &[AttributionMap],
    weights: &[f64],
    params: &BarycenterParams,
) -> Result<GridMeasure> {
    let (h, w) = common_dims(maps)?;
    check_weights(weights, maps.len())?;
    if !(params.epsilon > 0.0 && params.epsilon.is_finite()) {
        return Err(invalid("epsilon", "must be positive"));
    }
    if params.iterations == 0 {
        return Err(invalid("iterations", "must be positive"));
    }
    let measures = maps.iter().map(to_measure).collect::<Result<Vec<_>>>()?;
    let active: Vec<usize> = (0..maps.len()).filter(|&k| weights[k] > 0.0).collect();
    let log_a: Vec<Vec<f64>> = active.iter().map(|&k| measures[k].mass.iter().map(|m| m.ln()).collect()).collect();
    let kernel = GridKernel::new(h, w, params.epsilon);

    let n = h * w;
    let mut log_v = vec![vec![0.0; n]; active.len()];
    let mut bary = vec![0.0; n];
    for it in 0..params.iterations {
        let mut log_b = vec![0.0; n];
        let mut log_ktu = Vec::with_capacity(active.len());
        for (s, &k) in active.iter().enumerate() {
            let kv = kernel.apply(&log_v[s]);
            let log_u: Vec<f64> = log_a[s].iter().zip(&kv).map(|(a, b)| a - b).collect();
            let ktu = kernel.apply(&log_u);
            for (b, t) in log_b.iter_mut().zip(&ktu) {
                *b += weights[k] * t;
            }
            log_ktu.push(ktu);
        }
        for (s, ktu) in log_ktu.iter().enumerate() {
            for ((v, b), t) in log_v[s].iter_mut().zip(&log_b).zip(ktu) {
                *v = b - t;
            }
        }
        let next: Vec<f64> = log_b.iter().map(|v| v.exp()).collect();
        let change: f64 = next.iter().zip(&bary).map(|(a, b)| (a - b).abs()).sum();
        bary = next;
        if it > 0 && change < params.tol {
            break;
        }
    }
    GridMeasure::from_values(h, w, bary)
}

/// Weighted pixel-wise average of the normalized maps.
pub fn euclidean_barycenter(maps: &[AttributionMap], weights: &[f64]) -> Result<GridMeasure> {
    let (h, w) = common_dims(maps)?;
    check_weights(weights, maps.len())?;
    let mut acc = vec![0.0; h * w];
    for (m, &wt) in maps.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(&to_measure(m)?.mass) {
            *a += wt * v;
        }
    }
    GridMeasure::from_values(h, w, acc)
}

/// Weights `max(0, 1 − chebyshev(position, corner))`, normalized to sum one.
pub fn chebyshev_interpolation_weights(position: [f64; 2], corners: &[[f64; 2]; 4]) -> Result<[f64; 4]> {
    if position.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("position", "must lie in the unit square"));
    }
    let mut raw = [0.0; 4];
    for (r, c) in raw.iter_mut().zip(corners) {
        let cheb = (position[0] - c[0]).abs().max((position[1] - c[1]).abs());
        *r = (1.0 - cheb).max(0.0);
    }
    let s: f64 = raw.iter().sum();
    if s <= 0.0 {
        return Err(Error::DegenerateMeasure(format!("no corner supports position {position:?}")));
    }
    Ok(raw.map(|r| r / s))
}
