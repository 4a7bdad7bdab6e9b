//! Entropic Gromov-Wasserstein transport between point clouds with the
//! square loss. Each outer step linearizes the quadratic objective at the
//! current coupling and re-solves the resulting transport problem with
//! Sinkhorn.

use super::measure::PointCloud;
use super::sinkhorn::{sinkhorn, SinkhornParams, TransportPlan};
use crate::error::invalid;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GwParams {
    /// Entropic regularization, in squared coordinate units.
    pub epsilon: f64,
    pub outer_iter: usize,
    /// Stop when the objective decreases by less than this.
    pub tol: f64,
    /// Marginal tolerance and iteration cap of each inner solve.
    pub inner: SinkhornParams,
}

impl Default for GwParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            outer_iter: 50,
            tol: 1e-8,
            inner: SinkhornParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GwResult {
    /// `Σ (C_A[i][k] − C_B[j][l])² T[i][j] T[k][l]` at the final coupling.
    pub cost: f64,
    pub plan: TransportPlan,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Linearized cost `M = constC − 2 C_A T C_B` so that the objective equals `<M, T>`.
fn linearize(ca: &[f64], cb: &[f64], const_c: &[f64], t: &[f64], m: usize, k: usize) -> Vec<f64> {
    // tmp = C_A T   (m × k)
    let mut tmp = vec![0.0; m * k];
    for i in 0..m {
        let out = &mut tmp[i * k..(i + 1) * k];
        for p in 0..m {
            let a = ca[i * m + p];
            if a == 0.0 {
                continue;
            }
            for (o, tv) in out.iter_mut().zip(&t[p * k..(p + 1) * k]) {
                *o += a * tv;
            }
        }
    }
    // M = constC − 2 tmp C_B   (C_B symmetric)
    let mut lin = const_c.to_vec();
    for i in 0..m {
        let trow = &tmp[i * k..(i + 1) * k];
        let out = &mut lin[i * k..(i + 1) * k];
        for (q, tv) in trow.iter().enumerate() {
            if *tv == 0.0 {
                continue;
            }
            for (o, cv) in out.iter_mut().zip(&cb[q * k..(q + 1) * k]) {
                *o -= 2.0 * tv * cv;
            }
        }
    }
    lin
}

pub fn gromov_wasserstein(a: &PointCloud, b: &PointCloud, params: &GwParams) -> Result<GwResult> {
    if !(params.epsilon > 0.0 && params.epsilon.is_finite()) {
        return Err(invalid("gw_epsilon", "must be positive"));
    }
    if params.outer_iter == 0 {
        return Err(invalid("gw_outer_iter", "must be positive"));
    }
    let (m, k) = (a.len(), b.len());
    let ca = a.distance_matrix();
    let cb = b.distance_matrix();
    let (mu, nu) = (a.masses(), b.masses());

    let ra: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|p| ca[i * m + p].powi(2) * mu[p]).sum())
        .collect();
    let rb: Vec<f64> = (0..k)
        .map(|j| (0..k).map(|q| cb[j * k + q].powi(2) * nu[q]).sum())
        .collect();
    let mut const_c = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            const_c[i * k + j] = ra[i] + rb[j];
        }
    }

    let inner = SinkhornParams {
        epsilon: params.epsilon,
        ..params.inner
    };
    let mut t: Vec<f64> = (0..m * k).map(|x| mu[x / k] * nu[x % k]).collect();
    let mut plan = TransportPlan {
        rows: m,
        cols: k,
        plan: t.clone(),
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        cost: 0.0,
        iterations_used: 0,
        converged: true,
    };
    let objective = |lin: &[f64], t: &[f64]| -> f64 { lin.iter().zip(t).map(|(a, b)| a * b).sum() };

    let mut lin = linearize(&ca, &cb, &const_c, &t, m, k);
    let mut cost = objective(&lin, &t);
    let mut converged = false;
    let mut outer = 0;
    while outer < params.outer_iter {
        outer += 1;
        let next = sinkhorn(mu, nu, &lin, &inner)?;
        let next_lin = linearize(&ca, &cb, &const_c, &next.plan, m, k);
        let next_cost = objective(&next_lin, &next.plan);
        let decrease = cost - next_cost;
        t = next.plan.clone();
        plan = next;
        lin = next_lin;
        cost = next_cost;
        if decrease.abs() < params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("gromov-wasserstein stopped after {outer} outer iterations");
    }
    plan.cost = objective(&lin, &t);
    Ok(GwResult {
        cost: cost.max(0.0),
        plan,
        outer_iterations: outer,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed);
        let coords = (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let masses = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        PointCloud::new(coords, masses).unwrap()
    }

    fn mean_sq_distance(pc: &PointCloud) -> f64 {
        let d = pc.distance_matrix();
        let n = pc.len();
        let mean = d.iter().sum::<f64>() / (n * n - n) as f64;
        mean * mean
    }

    #[test]
    fn identical_clouds_cost_almost_nothing() {
        let pc = random_cloud(12, 4);
        let r = gromov_wasserstein(&pc, &pc, &GwParams { epsilon: 1e-4, ..Default::default() }).unwrap();
        assert!(r.cost <= 1e-3 * mean_sq_distance(&pc), "{}", r.cost);
    }

    #[test]
    fn isometries_do_not_change_cost() {
        let pc = random_cloud(15, 8);
        let params = GwParams { epsilon: 1e-3, ..Default::default() };
        let base = gromov_wasserstein(&pc, &pc, &params).unwrap().cost;
        let (s, c) = 0.7f64.sin_cos();
        let moved = pc.map_coords(|[x, y]| [-(c * x - s * y) + 3.0, s * x + c * y - 1.5]);
        let r = gromov_wasserstein(&pc, &moved, &params).unwrap().cost;
        assert!((r - base).abs() < 1e-6);
    }

    /// Exhaustive search over the 3! permutation couplings of uniform
    /// 3-point clouds.
    fn best_permutation_cost(a: &PointCloud, b: &PointCloud) -> f64 {
        let (da, db) = (a.distance_matrix(), b.distance_matrix());
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        perms
            .iter()
            .map(|p| {
                let mut s = 0.0;
                for i in 0..3 {
                    for k in 0..3 {
                        s += (da[i * 3 + k] - db[p[i] * 3 + p[k]]).powi(2) / 9.0;
                    }
                }
                s
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn scaled_triangle_costs_more() {
        let tri = PointCloud::uniform(vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.5]]).unwrap();
        let big = tri.map_coords(|[x, y]| [2.0 * x, 2.0 * y]);
        let params = GwParams { epsilon: 1e-4, ..Default::default() };
        let same = gromov_wasserstein(&tri, &tri, &params).unwrap().cost;
        let scaled = gromov_wasserstein(&tri, &big, &params).unwrap().cost;
        let oracle = best_permutation_cost(&tri, &big);
        assert!(oracle > 0.0 && best_permutation_cost(&tri, &tri) == 0.0);
        assert!(scaled > same);
        assert!(scaled >= 0.9 * oracle);
    }
}
