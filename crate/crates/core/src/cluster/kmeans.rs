use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::invalid;
use crate::{seeded_rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansParams {
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 300,
            restarts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().ok_or(Error::EmptyDataset)?.len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Shape(format!("point of length {} among length {dim}", p.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("points".into()));
    }
    Ok(dim)
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = sq_dist(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Moves the point farthest from its centroid (among clusters with more
/// than one member) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centers: &mut [Vec<f64>], counts: &mut [usize]) {
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] > 1 {
                let d = sq_dist(p, &centers[labels[i]]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let i = far.expect("k <= n leaves a cluster with spare members");
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        centers[empty] = points[i].clone();
    }
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut centers = plus_plus(points, k, rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..max_iter {
        let (mut c, mut counts) = means(points, &labels, k);
        repair_empty(points, &mut labels, &mut c, &mut counts);
        let (c, _) = means(points, &labels, k);
        centers = c;
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let (mut c, mut counts) = means(points, &labels, k);
    repair_empty(points, &mut labels, &mut c, &mut counts);
    let (c, _) = means(points, &labels, k);
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &c[l])).sum();
    (labels, inertia)
}

/// Best of `restarts` k-means++ / Lloyd runs by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, params: &KMeansParams) -> Result<ClusterAssignment> {
    check_points(points)?;
    let n = points.len();
    if k < 1 || k > n {
        return Err(invalid("k", format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    if params.restarts == 0 {
        return Err(invalid("restarts", "must be positive"));
    }
    let mut rng = seeded_rng(params.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..params.restarts {
        let run = lloyd(points, k, params.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (labels, inertia) = best.unwrap();
    Ok(ClusterAssignment {
        labels,
        k,
        inertia,
        seed: params.seed,
    })
}

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same samples.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} and {} labels", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0usize; ka * kb];
    let mut ra = vec![0usize; ka];
    let mut rb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.iter().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(a.len()).max(1.0);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both labelings trivial (all-in-one or all singletons)
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per: usize, sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.866]];
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(vec![ctr[0] + noise.sample(&mut rng), ctr[1] + noise.sample(&mut rng)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separates_identical_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 5.0], vec![5.0, 5.0]];
        let a = kmeans(&pts, 2, &KMeansParams::default()).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let a = kmeans(&pts, 6, &KMeansParams::default()).unwrap();
        let mut l = a.labels.clone();
        l.sort();
        assert_eq!(l, (0..6).collect::<Vec<_>>());
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn identical_points_fill_every_cluster() {
        let pts = vec![vec![1.0, 1.0]; 10];
        let a = kmeans(&pts, 4, &KMeansParams::default()).unwrap();
        assert!(a.sizes().iter().all(|&s| s > 0));
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn recovers_three_blobs() {
        for seed in 0..10 {
            let (pts, truth) = blobs(seed, 20, 0.05);
            let a = kmeans(&pts, 3, &KMeansParams { seed, ..Default::default() }).unwrap();
            assert_eq!(adjusted_rand_index(&a.labels, &truth).unwrap(), 1.0);
        }
    }

    #[test]
    fn inertia_matches_definition() {
        let (pts, _) = blobs(3, 15, 0.3);
        let a = kmeans(&pts, 4, &KMeansParams::default()).unwrap();
        let mut total = 0.0;
        for c in 0..4 {
            let m = a.members(c);
            assert!(!m.is_empty());
            let mean: Vec<f64> = (0..2).map(|d| m.iter().map(|&i| pts[i][d]).sum::<f64>() / m.len() as f64).collect();
            total += m.iter().map(|&i| sq_dist(&pts[i], &mean)).sum::<f64>();
        }
        assert!((total - a.inertia).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let (pts, _) = blobs(8, 30, 0.4);
        let p = KMeansParams { seed: 77, ..Default::default() };
        assert_eq!(kmeans(&pts, 5, &p).unwrap(), kmeans(&pts, 5, &p).unwrap());
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(kmeans(&[vec![0.0]], 2, &KMeansParams::default()).is_err());
    }

    /// Pair-counting definition of the Rand index, adjusted by its
    /// permutation expectation, evaluated by brute force.
    fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                in_a += sa as u8 as f64;
                in_b += sb as u8 as f64;
                both += (sa && sb) as u8 as f64;
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let exp = in_a * in_b / pairs;
        (both - exp) / (0.5 * (in_a + in_b) - exp)
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let mut rng = seeded_rng(5);
        for _ in 0..20 {
            let a: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<usize> = (0..30).map(|_| rng.random_range(0..4)).collect();
            assert!((adjusted_rand_index(&a, &b).unwrap() - ari_oracle(&a, &b)).abs() < 1e-12);
        }
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }
}
