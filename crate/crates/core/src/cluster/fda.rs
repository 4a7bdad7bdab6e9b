//! Fisher discriminant separability of a clustering and the per-class score
//! built from it.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::kmeans::{check_points, kmeans, KMeansParams};
use crate::error::invalid;
use crate::{Error, Result};

/// Regularization added to the within-cluster scatter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ridge {
    /// `1e-6 · trace(S_w) / dim`, at least `1e-12`.
    Auto,
    Fixed(f64),
}

impl Ridge {
    pub fn value(self, sw: &DMatrix<f64>) -> f64 {
        match self {
            Ridge::Auto => (1e-6 * sw.trace() / sw.nrows().max(1) as f64).max(1e-12),
            Ridge::Fixed(r) => r,
        }
    }
}

impl fmt::Display for Ridge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ridge::Auto => f.write_str("auto"),
            Ridge::Fixed(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for Ridge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Ridge::Auto);
        }
        match s.parse::<f64>() {
            Ok(r) if r >= 0.0 && r.is_finite() => Ok(Ridge::Fixed(r)),
            _ => Err(invalid("ridge", format!("expected `auto` or a non-negative number, got `{s}`"))),
        }
    }
}

/// Within-cluster scatter and the unweighted between-cluster scatter of
/// the cluster means around the overall sample mean.
pub fn scatter_matrices(points: &[Vec<f64>], labels: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dim = check_points(points)?;
    if labels.len() != points.len() {
        return Err(Error::Shape(format!("{} labels for {} points", labels.len(), points.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(invalid("labels", "need at least two clusters"));
    }
    let mut means = vec![DVector::zeros(dim); k];
    let mut counts = vec![0usize; k];
    let mut grand = DVector::zeros(dim);
    // shift by the first point; exact duplicates then give exactly zero scatter
    let origin = DVector::from_column_slice(&points[0]);
    let shifted: Vec<DVector<f64>> = points.iter().map(|p| DVector::from_column_slice(p) - &origin).collect();
    for (v, &l) in shifted.iter().zip(labels) {
        means[l] += v;
        grand += v;
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(invalid("labels", format!("cluster {c} is empty")));
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        *m /= c as f64;
    }
    grand /= points.len() as f64;

    let mut sw = DMatrix::zeros(dim, dim);
    for (v, &l) in shifted.iter().zip(labels) {
        let d = v - &means[l];
        sw.ger(1.0, &d, &d, 1.0);
    }
    let mut sb = DMatrix::zeros(dim, dim);
    for m in &means {
        let d = m - &grand;
        sb.ger(1.0, &d, &d, 1.0);
    }
    Ok((sw, sb))
}

/// Largest `λ` with `S_b v = λ (S_w + ridge·I) v`.
pub fn separability(points: &[Vec<f64>], labels: &[usize], ridge: Ridge) -> Result<f64> {
    let (sw, sb) = scatter_matrices(points, labels)?;
    if sb.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let dim = sw.nrows();
    let r = ridge.value(&sw);
    let b = &sw + DMatrix::identity(dim, dim) * r;
    let chol = b
        .cholesky()
        .ok_or_else(|| Error::NonFinite("separability: within-cluster scatter is singular".into()))?;
    let l = chol.l();
    // C = L⁻¹ S_b L⁻ᵀ
    let y = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::NonFinite("separability: triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::NonFinite("separability: triangular solve".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let top = SymmetricEigen::new(c).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::NonFinite("separability score".into()));
    }
    Ok(top.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauParams {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub ridge: Ridge,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for TauParams {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 30,
            seed: 0,
            ridge: Ridge::Auto,
            restarts: 5,
            max_iter: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparabilityReport {
    pub class_id: usize,
    /// `(k, score)` in increasing `k`.
    pub per_k_scores: Vec<(usize, f64)>,
    pub tau: f64,
}

/// Clusters `points` for every `k` in the range and averages the
/// separability scores. `k_max` is lowered to `n − 1` for small classes.
pub fn tau_score(class_id: usize, points: &[Vec<f64>], params: &TauParams) -> Result<SeparabilityReport> {
    check_points(points)?;
    let n = points.len();
    let mut k_max = params.k_max;
    if n <= k_max {
        k_max = n.saturating_sub(1);
        log::warn!("class {class_id}: {n} samples, clamping k_max from {} to {k_max}", params.k_max);
    }
    let k_min = params.k_min.max(2);
    if k_min > k_max {
        return Err(invalid("kmeans_k_min", format!("no k in [{k_min}, {k_max}] for {n} samples")));
    }
    let per_k_scores = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let km = KMeansParams {
                seed: params.seed.wrapping_add(k as u64),
                max_iter: params.max_iter,
                restarts: params.restarts,
            };
            let a = kmeans(points, k, &km)?;
            Ok((k, separability(points, &a.labels, params.ridge)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let tau = per_k_scores.iter().map(|s| s.1).sum::<f64>() / per_k_scores.len() as f64;
    Ok(SeparabilityReport {
        class_id,
        per_k_scores,
        tau,
    })
}

/// Descending by `tau`, ties by ascending `class_id`.
pub fn rank_classes(mut reports: Vec<SeparabilityReport>) -> Vec<SeparabilityReport> {
    reports.sort_by(|a, b| b.tau.total_cmp(&a.tau).then(a.class_id.cmp(&b.class_id)));
    reports
}

/// CSV with header `class_id,tau,score_k2,...` over every `k` seen in any
/// report; a class without a score for some `k` leaves that cell empty.
pub fn write_ranking_csv<W: Write>(out: W, ranked: &[SeparabilityReport]) -> Result<()> {
    let mut ks: Vec<usize> = ranked.iter().flat_map(|r| r.per_k_scores.iter().map(|s| s.0)).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class_id".to_string(), "tau".to_string()];
    header.extend(ks.iter().map(|k| format!("score_k{k}")));
    w.write_record(&header)?;
    for r in ranked {
        let mut row = vec![r.class_id.to_string(), r.tau.to_string()];
        for k in &ks {
            row.push(
                r.per_k_scores
                    .iter()
                    .find(|s| s.0 == *k)
                    .map_or(String::new(), |s| s.1.to_string()),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn pts1(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn singleton_clusters() {
        let (sw, sb) = scatter_matrices(&pts1(&[0.0, 1.0]), &[0, 1]).unwrap();
        assert_eq!(sw[(0, 0)], 0.0);
        assert_eq!(sb[(0, 0)], 0.5);
    }

    #[test]
    fn identical_points() {
        let (sw, sb) = scatter_matrices(&vec![vec![2.0, -1.0]; 4], &[0, 1, 0, 1]).unwrap();
        assert!(sw.iter().chain(sb.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn hand_fixture() {
        let p = pts1(&[-1.0, -0.9, 0.9, 1.0]);
        let l = [0, 0, 1, 1];
        let (sw, sb) = scatter_matrices(&p, &l).unwrap();
        // (−1+0.95)² + (−0.9+0.95)² twice; means ±0.95 around 0
        let sw_oracle = 4.0 * 0.05f64.powi(2);
        let sb_oracle = 2.0 * 0.95f64.powi(2);
        assert!((sw[(0, 0)] - sw_oracle).abs() < 1e-12);
        assert!((sb[(0, 0)] - sb_oracle).abs() < 1e-12);
        let s = separability(&p, &l, Ridge::Fixed(0.0)).unwrap();
        assert!((s - sb_oracle / sw_oracle).abs() < 1e-9);
    }

    #[test]
    fn equal_means_score_zero() {
        let p = pts1(&[-1.0, 1.0, -2.0, 2.0]);
        assert_eq!(separability(&p, &[0, 0, 1, 1], Ridge::Fixed(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn ridge_handles_singular_within_scatter() {
        let p = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        assert!(separability(&p, &[0, 0, 1, 1], Ridge::Fixed(0.0)).is_err());
        let s = separability(&p, &[0, 0, 1, 1], Ridge::Auto).unwrap();
        assert!(s.is_finite() && s > 0.0);
    }

    #[test]
    fn rigid_and_scale_invariance() {
        let mut rng = seeded_rng(6);
        let p: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let base = separability(&p, &labels, Ridge::Fixed(0.0)).unwrap();
        let (s, c) = 1.1f64.sin_cos();
        let moved: Vec<Vec<f64>> = p.iter().map(|v| vec![c * v[0] - s * v[1] + 4.0, s * v[0] + c * v[1] - 2.0]).collect();
        let r = separability(&moved, &labels, Ridge::Fixed(0.0)).unwrap();
        assert!((r - base).abs() < 1e-6 * base);
        for scale in [0.1, 10.0] {
            let sc: Vec<Vec<f64>> = p.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let r = separability(&sc, &labels, Ridge::Fixed(0.0)).unwrap();
            assert!((r - base).abs() < 1e-6 * base);
        }
    }

    #[test]
    fn generalized_eigen_matches_brute_force_direction_search() {
        // in 2D, λ_max = max over unit directions of (vᵀ S_b v)/(vᵀ S_w v)
        let mut rng = seeded_rng(12);
        let p: Vec<Vec<f64>> = (0..24).map(|i| vec![rng.random_range(0.0..1.0) + (i % 2) as f64, rng.random_range(0.0..2.0)]).collect();
        let labels: Vec<usize> = (0..24).map(|i| i % 2).collect();
        let (sw, sb) = scatter_matrices(&p, &labels).unwrap();
        let mut best: f64 = 0.0;
        for t in 0..200_000 {
            let a = std::f64::consts::PI * t as f64 / 200_000.0;
            let (s, c) = a.sin_cos();
            let num = c * c * sb[(0, 0)] + 2.0 * s * c * sb[(0, 1)] + s * s * sb[(1, 1)];
            let den = c * c * sw[(0, 0)] + 2.0 * s * c * sw[(0, 1)] + s * s * sw[(1, 1)];
            best = best.max(num / den);
        }
        let got = separability(&p, &labels, Ridge::Fixed(0.0)).unwrap();
        assert!((got - best).abs() < 1e-6 * best, "{got} vs {best}");
    }

    #[test]
    fn tau_is_mean_and_identical_points_give_zero() {
        let p = vec![vec![0.3, 0.3]; 12];
        let r = tau_score(4, &p, &TauParams { k_max: 5, ..Default::default() }).unwrap();
        assert_eq!(r.per_k_scores.len(), 4);
        assert!(r.per_k_scores.iter().all(|s| s.1 == 0.0));
        assert_eq!(r.tau, 0.0);

        let mut rng = seeded_rng(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let p: Vec<Vec<f64>> = (0..40).map(|_| vec![noise.sample(&mut rng), noise.sample(&mut rng)]).collect();
        let r = tau_score(0, &p, &TauParams { k_max: 8, ..Default::default() }).unwrap();
        let mean = r.per_k_scores.iter().map(|s| s.1).sum::<f64>() / r.per_k_scores.len() as f64;
        assert!((r.tau - mean).abs() < 1e-12);
        assert!(r.per_k_scores.iter().all(|s| s.1 >= 0.0));
    }

    #[test]
    fn small_class_clamps_k_max() {
        let p: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let r = tau_score(0, &p, &TauParams::default()).unwrap();
        assert_eq!(r.per_k_scores.last().unwrap().0, 5);
        assert!(tau_score(0, &p[..2], &TauParams::default()).is_err());
    }

    #[test]
    fn ranking_order_and_csv() {
        let rep = |c, t| SeparabilityReport {
            class_id: c,
            per_k_scores: vec![(2, t), (3, t)],
            tau: t,
        };
        let ranked = rank_classes(vec![rep(7, 1.28), rep(2, 0.41), rep(5, 4.77)]);
        assert_eq!(ranked.iter().map(|r| r.class_id).collect::<Vec<_>>(), vec![5, 7, 2]);
        let tied = rank_classes(vec![rep(3, 1.0), rep(1, 1.0)]);
        assert_eq!(tied[0].class_id, 1);

        let mut buf = Vec::new();
        let mut short = rep(9, 0.5);
        short.per_k_scores.pop();
        write_ranking_csv(&mut buf, &[rep(5, 4.77), short]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "class_id,tau,score_k2,score_k3\n5,4.77,4.77,4.77\n9,0.5,0.5,\n");
    }

    #[test]
    fn ridge_parsing() {
        assert_eq!("auto".parse::<Ridge>().unwrap(), Ridge::Auto);
        assert_eq!("0".parse::<Ridge>().unwrap(), Ridge::Fixed(0.0));
        assert!("-1".parse::<Ridge>().is_err());
        assert!("x".parse::<Ridge>().is_err());
    }
}
