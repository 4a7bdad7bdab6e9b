//! Smallest eigenpairs of a normalized Laplacian.
//!
//! The spectrum of `L_sym` lies in `[0, 2]`, so its smallest eigenpairs are
//! the largest ones of `M = 2I − L_sym`. We grow a block Krylov basis of `M`
//! with full (twice repeated) reorthogonalization and extract Ritz pairs by
//! Rayleigh-Ritz after every block. Starting from a block instead of a
//! single vector lets repeated eigenvalues, such as the zero eigenvalue of a
//! graph with several components, show up with their full multiplicity.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::sparse::CsrMatrix;
use crate::error::invalid;
use crate::{seeded_rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosParams {
    /// Residual bound relative to `‖L_sym‖∞`.
    pub tol: f64,
    /// Maximum number of block expansions.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LanczosParams {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 320,
            seed: 0,
        }
    }
}

/// The `q` smallest eigenpairs; `phi` is `n × q`, row-major, so row `i`
/// embeds sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEmbedding {
    pub n: usize,
    pub q: usize,
    pub eigenvalues: Vec<f64>,
    pub phi: Vec<f64>,
    /// `‖L_sym v − λ v‖` for each returned pair.
    pub residuals: Vec<f64>,
}

impl SpectralEmbedding {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.phi[i * self.q..(i + 1) * self.q]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.phi[i * self.q + j]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalizes `v` against `basis` twice and normalizes it. Returns
/// `None` if `v` lies (numerically) in the span of `basis`.
fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start = norm(&v);
    if start == 0.0 || !start.is_finite() {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    let r = norm(&v);
    if r <= 1e-10 * start {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= r);
    Some(v)
}

struct Krylov<'a> {
    l: &'a CsrMatrix,
    rng: rand_chacha::ChaCha8Rng,
    basis: Vec<Vec<f64>>,
    /// `M` applied to each basis vector.
    images: Vec<Vec<f64>>,
}

impl Krylov<'_> {
    fn apply_m(&self, v: &[f64]) -> Vec<f64> {
        let mut lv = vec![0.0; v.len()];
        self.l.mul_vec(v, &mut lv);
        v.iter().zip(&lv).map(|(x, y)| 2.0 * x - y).collect()
    }

    fn random_vec(&mut self) -> Vec<f64> {
        (0..self.l.n()).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Adds the candidates to the basis, replacing dependent ones by random
    /// directions. Returns the number of vectors added.
    fn extend(&mut self, candidates: Vec<Vec<f64>>) -> usize {
        let n = self.l.n();
        let mut added = 0;
        for cand in candidates {
            if self.basis.len() == n {
                break;
            }
            let mut v = orthonormalize(cand, &self.basis);
            while v.is_none() {
                let r = self.random_vec();
                v = orthonormalize(r, &self.basis);
            }
            let v = v.unwrap();
            let mv = self.apply_m(&v);
            self.basis.push(v);
            self.images.push(mv);
            added += 1;
        }
        added
    }

    /// Ritz values of `L_sym` (ascending) with coefficient vectors.
    fn ritz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.basis.len();
        let h = DMatrix::from_fn(m, m, |i, j| {
            0.5 * (dot(&self.basis[i], &self.images[j]) + dot(&self.basis[j], &self.images[i]))
        });
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let vals = order.iter().map(|&i| 2.0 - eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        (vals, vecs)
    }

    fn combine(&self, coeffs: &[f64], of_images: bool) -> Vec<f64> {
        let src = if of_images { &self.images } else { &self.basis };
        let mut out = vec![0.0; self.l.n()];
        for (c, v) in coeffs.iter().zip(src) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        out
    }
}

/// Flips `v` so that its largest-magnitude entry (first one on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn lanczos_eigs(l_sym: &CsrMatrix, q: usize, params: &LanczosParams) -> Result<SpectralEmbedding> {
    let n = l_sym.n();
    if q == 0 || q > n {
        return Err(invalid("q", format!("need 1 <= q <= n, got q={q}, n={n}")));
    }
    if !(params.tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    if params.max_iter == 0 {
        return Err(invalid("max_iter", "must be positive"));
    }
    if !l_sym.is_symmetric() {
        return Err(Error::Shape("matrix is not symmetric".into()));
    }
    let bound = params.tol * l_sym.norm_inf().max(f64::MIN_POSITIVE);
    let block = q.max(4).min(n);
    let mut kr = Krylov {
        l: l_sym,
        rng: seeded_rng(params.seed),
        basis: Vec::new(),
        images: Vec::new(),
    };

    let mut start = vec![vec![1.0 / (n as f64).sqrt(); n]];
    while start.len() < block {
        let r = kr.random_vec();
        start.push(r);
    }
    let mut last = 0..kr.extend(start);

    let mut best_residuals = vec![f64::INFINITY; q];
    for step in 1..=params.max_iter {
        if kr.basis.len() >= q {
            let (vals, coeffs) = kr.ritz();
            let mut phi_cols = Vec::with_capacity(q);
            let mut residuals = Vec::with_capacity(q);
            for j in 0..q {
                let c: Vec<f64> = coeffs.column(j).iter().copied().collect();
                let y = kr.combine(&c, false);
                let my = kr.combine(&c, true);
                // L y − λ y = (2 − λ) y − M y
                let r: f64 = y
                    .iter()
                    .zip(&my)
                    .map(|(a, b)| ((2.0 - vals[j]) * a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                residuals.push(r);
                phi_cols.push(y);
            }
            let worst = residuals.iter().copied().fold(0.0, f64::max);
            if worst <= bound {
                let mut phi = vec![0.0; n * q];
                for (j, col) in phi_cols.iter_mut().enumerate() {
                    fix_sign(col);
                    for i in 0..n {
                        phi[i * q + j] = col[i];
                    }
                }
                log::debug!("lanczos converged with basis {} after {step} steps", kr.basis.len());
                return Ok(SpectralEmbedding {
                    n,
                    q,
                    eigenvalues: vals[..q].to_vec(),
                    phi,
                    residuals,
                });
            }
            best_residuals = residuals;
            if kr.basis.len() == n {
                break;
            }
        }
        let next: Vec<Vec<f64>> = kr.images[last.clone()].to_vec();
        let from = kr.basis.len();
        let added = kr.extend(next);
        last = from..from + added;
    }
    Err(Error::NotConverged {
        iterations: params.max_iter,
        worst: best_residuals.iter().copied().fold(0.0, f64::max),
        residuals: best_residuals,
    })
}
