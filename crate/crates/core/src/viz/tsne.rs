//! Exact t-SNE.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cluster::kmeans::check_points;
use crate::error::invalid;
use crate::{seeded_rng, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub exaggeration: f64,
    /// Iterations run with exaggerated affinities and the low momentum.
    pub exaggeration_iters: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarEmbedding {
    pub coords: Vec<[f64; 2]>,
    pub kl_divergence: f64,
    pub perplexity: f64,
    pub seed: u64,
    /// `(iteration, KL)` recorded after the exaggeration phase.
    pub checkpoints: Vec<(usize, f64)>,
}

const CHECKPOINT_EVERY: usize = 50;

fn sq_dists(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities: `exp(-β d_ij)` normalized, with β
/// found by bisection so the row entropy (in nats) equals `ln perplexity`.
/// Returns the row and its entropy.
pub(crate) fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let target = perplexity.ln();
    let n = d.len();
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    let mut row = vec![0.0; n];
    let mut entropy = 0.0;
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        // shifting by the nearest distance keeps the exponentials in range
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for j in 0..n {
            row[j] = if j == i { 0.0 } else { (-beta * (d[j] - dmin)).exp() };
            sum += row[j];
            wsum += row[j] * (d[j] - dmin);
        }
        entropy = sum.ln() + beta * wsum / sum;
        row.iter_mut().for_each(|p| *p /= sum);
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { 2.0 * beta };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    (row, entropy)
}

fn joint_affinities(points: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = points.len();
    let d = sq_dists(points);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| conditional_row(&d[i * n..(i + 1) * n], i, perplexity).0)
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(1e-300);
        }
        p[i * n + i] = 0.0;
    }
    p
}

/// Student-t kernel values and their off-diagonal total.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let num: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
        })
        .collect();
    let row_sums: Vec<f64> = num.par_chunks(n).map(|r| r.iter().sum()).collect();
    (num, row_sums.iter().sum())
}

fn kl(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, nv)| pv * (pv / (nv / z).max(1e-300)).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn tsne(points: &[Vec<f64>], params: &TsneParams) -> Result<PlanarEmbedding> {
    check_points(points)?;
    let n = points.len();
    if n < 4 {
        return Err(invalid("points", format!("t-SNE needs at least 4 samples, got {n}")));
    }
    if !(params.perplexity > 1.0 && params.perplexity < n as f64 / 3.0) {
        return Err(invalid(
            "tsne_perplexity",
            format!("must lie in (1, n/3) = (1, {:.3}) for n = {n}", n as f64 / 3.0),
        ));
    }
    if params.iters == 0 {
        return Err(invalid("tsne_iters", "must be positive"));
    }
    let p = joint_affinities(points, params.perplexity);

    let mut rng = seeded_rng(params.seed);
    let init = Normal::new(0.0, 1e-4).unwrap();
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut step = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut checkpoints = Vec::new();

    for it in 0..params.iters {
        let early = it < params.exaggeration_iters;
        let exag = if early { params.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let (num, z) = kernel(&y);
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let m = (exag * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                    g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                    g[1] += 4.0 * m * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (step[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(0.01);
                step[i][a] = momentum * step[i][a] - params.learning_rate * gains[i][a] * grad[i][a];
                y[i][a] += step[i][a];
            }
        }
        center(&mut y);
        let done = it + 1;
        if done >= params.exaggeration_iters && (done % CHECKPOINT_EVERY == 0 || done == params.iters) {
            let (num, z) = kernel(&y);
            checkpoints.push((done, kl(&p, &num, z)));
        }
    }
    let (num, z) = kernel(&y);
    Ok(PlanarEmbedding {
        coords: y,
        kl_divergence: kl(&p, &num, z),
        perplexity: params.perplexity,
        seed: params.seed,
        checkpoints,
    })
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|v| v[0]).sum::<f64>() / n;
    let my = y.iter().map(|v| v[1]).sum::<f64>() / n;
    for v in y.iter_mut() {
        v[0] -= mx;
        v[1] -= my;
    }
}
