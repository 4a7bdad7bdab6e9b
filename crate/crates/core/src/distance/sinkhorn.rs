//! Entropic optimal transport by Sinkhorn scaling, run entirely on dual
//! potentials in the log domain.

use crate::error::invalid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornParams {
    /// Entropic regularization, in units of the cost matrix.
    pub epsilon: f64,
    /// Stop once the largest row-marginal violation is below this.
    pub marginal_tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            marginal_tol: 1e-7,
            max_iter: 10_000,
        }
    }
}

impl SinkhornParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("sinkhorn_epsilon", "must be positive"));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(invalid("sinkhorn_tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("sinkhorn_max_iter", "must be positive"));
        }
        Ok(())
    }
}

/// Result of a transport solve. `plan` is `rows × cols`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub plan: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub cost: f64,
    pub iterations_used: usize,
    /// False when `max_iter` ran out before the marginal tolerance was met.
    pub converged: bool,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.plan.chunks(self.cols) {
            for (a, v) in s.iter_mut().zip(row) {
                *a += v;
            }
        }
        s
    }

    /// Largest absolute deviation of either marginal.
    pub fn marginal_violation(&self) -> f64 {
        let r = self.row_sums().iter().zip(&self.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(&self.nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }
}

fn check_marginal(name: &'static str, m: &[f64]) -> Result<()> {
    if m.is_empty() {
        return Err(invalid(name, "is empty"));
    }
    if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid(name, "has negative or non-finite entries"));
    }
    let s: f64 = m.iter().sum();
    if s <= 0.0 {
        return Err(Error::DegenerateMeasure(format!("{name} has zero mass")));
    }
    if (s - 1.0).abs() > 1e-6 {
        return Err(invalid(name, format!("sums to {s}, expected 1")));
    }
    Ok(())
}

/// `log Σ exp(x)`, returning `-inf` for an empty or all `-inf` input.
#[inline]
pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Solves `min <P, C> - ε H(P)` subject to `P 1 = mu`, `Pᵀ 1 = nu`.
///
/// Zero-mass entries of either marginal are removed before iterating and
/// receive zero rows/columns in the returned plan.
pub fn sinkhorn(mu: &[f64], nu: &[f64], cost: &[f64], params: &SinkhornParams) -> Result<TransportPlan> {
    params.validate()?;
    check_marginal("mu", mu)?;
    check_marginal("nu", nu)?;
    let (m, k) = (mu.len(), nu.len());
    if cost.len() != m * k {
        return Err(Error::Shape(format!("cost has {} entries, expected {m}x{k}", cost.len())));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }

    let rows: Vec<usize> = (0..m).filter(|&i| mu[i] > 0.0).collect();
    let cols: Vec<usize> = (0..k).filter(|&j| nu[j] > 0.0).collect();
    let (mr, kc) = (rows.len(), cols.len());
    let eps = params.epsilon;
    // kernel exponent -C/ε on the support
    let mut ker = vec![0.0; mr * kc];
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            ker[a * kc + b] = -cost[i * k + j] / eps;
        }
    }
    let log_mu: Vec<f64> = rows.iter().map(|&i| mu[i].ln()).collect();
    let log_nu: Vec<f64> = cols.iter().map(|&j| nu[j].ln()).collect();
    // potentials scaled by 1/ε
    let mut f = vec![0.0; mr];
    let mut g = vec![0.0; kc];
    let mut row_lse = vec![0.0; mr];
    let mut col_max = vec![0.0; kc];
    let mut col_acc = vec![0.0; kc];

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..=params.max_iter {
        for a in 0..mr {
            let r = &ker[a * kc..(a + 1) * kc];
            row_lse[a] = log_sum_exp(r.iter().zip(&g).map(|(kv, gv)| kv + gv));
        }
        if it > 0 {
            let err = (0..mr)
                .map(|a| ((f[a] + row_lse[a]).exp() - mu[rows[a]]).abs())
                .fold(0.0, f64::max);
            if err < params.marginal_tol {
                converged = true;
                break;
            }
        }
        if it == params.max_iter {
            break;
        }
        iterations = it + 1;
        for a in 0..mr {
            f[a] = log_mu[a] - row_lse[a];
        }
        // column log-sum-exp in two row-major passes
        col_max.fill(f64::NEG_INFINITY);
        for a in 0..mr {
            let r = &ker[a * kc..(a + 1) * kc];
            for b in 0..kc {
                col_max[b] = col_max[b].max(r[b] + f[a]);
            }
        }
        col_acc.fill(0.0);
        for a in 0..mr {
            let r = &ker[a * kc..(a + 1) * kc];
            for b in 0..kc {
                col_acc[b] += (r[b] + f[a] - col_max[b]).exp();
            }
        }
        for b in 0..kc {
            g[b] = log_nu[b] - (col_max[b] + col_acc[b].ln());
        }
    }
    if !converged {
        log::warn!(
            "sinkhorn stopped after {} iterations without meeting marginal tolerance {:e}",
            params.max_iter,
            params.marginal_tol
        );
    }

    let mut plan = vec![0.0; m * k];
    let mut total = 0.0;
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let p = (f[a] + g[b] + ker[a * kc + b]).exp();
            plan[i * k + j] = p;
            total += p * cost[i * k + j];
        }
    }
    Ok(TransportPlan {
        rows: m,
        cols: k,
        plan,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        cost: total,
        iterations_used: iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid_cost(n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                c[i * n + j] = ((i as f64 - j as f64) / n as f64).powi(2);
            }
        }
        c
    }

    #[test]
    fn same_dirac_costs_nothing() {
        let mut mu = vec![0.0; 6];
        mu[2] = 1.0;
        let p = sinkhorn(&mu, &mu, &grid_cost(6), &SinkhornParams::default()).unwrap();
        assert!(p.cost <= 10.0 * 1e-2);
        assert!(p.converged);
    }

    #[test]
    fn separated_diracs_cost_squared_distance() {
        let d = 3.0;
        let mu = [1.0, 0.0];
        let nu = [0.0, 1.0];
        let cost = [0.0, d * d, d * d, 0.0];
        let params = SinkhornParams {
            epsilon: 1e-3 * d * d,
            ..Default::default()
        };
        let p = sinkhorn(&mu, &nu, &cost, &params).unwrap();
        assert!((p.cost - d * d).abs() / (d * d) < 0.05);
    }

    #[test]
    fn uniform_marginals_are_met() {
        let n = 12;
        let u = vec![1.0 / n as f64; n];
        let p = sinkhorn(&u, &u, &grid_cost(n), &SinkhornParams::default()).unwrap();
        assert!(p.converged);
        assert!(p.marginal_violation() < 1e-7);
    }

    #[test]
    fn rejects_zero_mass_and_bad_shapes() {
        let z = [0.0, 0.0];
        let u = [0.5, 0.5];
        assert!(matches!(
            sinkhorn(&z, &u, &[0.0; 4], &SinkhornParams::default()),
            Err(Error::DegenerateMeasure(_))
        ));
        assert!(sinkhorn(&u, &u, &[0.0; 3], &SinkhornParams::default()).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = seeded_rng(1);
        let n = 20;
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = mu.iter().sum();
        let mu: Vec<f64> = mu.iter().map(|v| v / s).collect();
        let u = vec![1.0 / n as f64; n];
        let params = SinkhornParams {
            epsilon: 1e-4,
            marginal_tol: 1e-12,
            max_iter: 3,
        };
        let p = sinkhorn(&mu, &u, &grid_cost(n), &params).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations_used, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn plan_satisfies_marginals(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let (m, k) = (rng.random_range(2..15), rng.random_range(2..15));
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let mu = norm((0..m).map(|_| rng.random_range(0.0..1.0)).collect());
            let nu = norm((0..k).map(|_| rng.random_range(0.0..1.0)).collect());
            let cost: Vec<f64> = (0..m * k).map(|_| rng.random_range(0.0..1.0)).collect();
            let p = sinkhorn(&mu, &nu, &cost, &SinkhornParams::default()).unwrap();
            prop_assert!(p.converged);
            prop_assert!(p.marginal_violation() < 1e-7);
            let direct: f64 = p.plan.iter().zip(&cost).map(|(a, b)| a * b).sum();
            prop_assert!((direct - p.cost).abs() < 1e-12);
        }
    }
}
