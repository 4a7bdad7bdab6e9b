use super::measure::{to_measure, GridMeasure};
use super::sinkhorn::{sinkhorn, SinkhornParams, TransportPlan};
use crate::attribution::AttributionMap;
use crate::{Error, Result};

/// Squared length of the grid diagonal, used to make costs scale-free.
pub(crate) fn diag_sq(h: usize, w: usize) -> f64 {
    let d = ((h - 1).pow(2) + (w - 1).pow(2)) as f64;
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Squared euclidean cost between the listed pixels of two `h × w` grids,
/// with coordinates scaled so the grid diagonal has length one.
pub fn grid_cost(h: usize, w: usize, from: &[usize], to: &[usize]) -> Vec<f64> {
    let norm = diag_sq(h, w);
    let mut c = Vec::with_capacity(from.len() * to.len());
    for &i in from {
        let (ri, ci) = ((i / w) as f64, (i % w) as f64);
        for &j in to {
            let (rj, cj) = ((j / w) as f64, (j % w) as f64);
            c.push(((ri - rj).powi(2) + (ci - cj).powi(2)) / norm);
        }
    }
    c
}

/// Entropic transport between two grid measures, solved on their supports.
pub fn transport_measures(a: &GridMeasure, b: &GridMeasure, params: &SinkhornParams) -> Result<TransportPlan> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::Shape(format!(
            "grids {}x{} and {}x{} differ",
            a.h, a.w, b.h, b.w
        )));
    }
    let sa: Vec<usize> = (0..a.mass.len()).filter(|&i| a.mass[i] > 0.0).collect();
    let sb: Vec<usize> = (0..b.mass.len()).filter(|&i| b.mass[i] > 0.0).collect();
    let mu: Vec<f64> = sa.iter().map(|&i| a.mass[i]).collect();
    let nu: Vec<f64> = sb.iter().map(|&i| b.mass[i]).collect();
    sinkhorn(&mu, &nu, &grid_cost(a.h, a.w, &sa, &sb), params)
}

/// Entropic Wasserstein cost between the positive parts of two maps.
pub fn wasserstein_distance(a: &AttributionMap, b: &AttributionMap, params: &SinkhornParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "maps {:?} and {:?} differ in size",
            a.dims(),
            b.dims()
        )));
    }
    let plan = transport_measures(&to_measure(a)?, &to_measure(b)?, params)?;
    Ok(plan.cost.max(0.0))
}
