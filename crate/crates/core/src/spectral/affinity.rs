use rayon::prelude::*;

use super::sparse::CsrMatrix;
use crate::distance::DistanceMatrix;
use crate::error::invalid;
use crate::{Error, Result};

/// Symmetrized KNN graph: 1 for mutual neighbors, 0.5 for one-sided ones.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityGraph {
    pub k: usize,
    pub entries: CsrMatrix,
}

impl AffinityGraph {
    pub fn n(&self) -> usize {
        self.entries.n()
    }
}

/// The `k` nearest other samples of row `i`, closer first, ties to the
/// smaller index.
fn neighbors(d: &DistanceMatrix, i: usize, k: usize) -> Vec<usize> {
    let row = d.row(i);
    let mut idx: Vec<usize> = (0..d.n()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn knn_affinity(d: &DistanceMatrix, k: usize) -> Result<AffinityGraph> {
    let n = d.n();
    if k == 0 || k >= n {
        return Err(invalid("knn_k", format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let lists: Vec<Vec<usize>> = (0..n).into_par_iter().map(|i| neighbors(d, i, k)).collect();
    let directed = lists
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().map(move |&j| (i, j, 1.0)))
        .collect();
    Ok(AffinityGraph {
        k,
        entries: symmetrize(&CsrMatrix::from_triplets(n, directed)?)?,
    })
}

/// `(A + Aᵀ) / 2`. A 0/1 neighbor relation becomes 1 for mutual pairs
/// and 0.5 for one-sided ones; symmetric inputs are returned unchanged.
pub fn symmetrize(a: &CsrMatrix) -> Result<CsrMatrix> {
    let trip = a
        .triplets()
        .flat_map(|(i, j, v)| [(i, j, 0.5 * v), (j, i, 0.5 * v)])
        .collect();
    CsrMatrix::from_triplets(a.n(), trip)
}

/// Combinatorial and normalized Laplacians with the degree vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Laplacians {
    pub l: CsrMatrix,
    pub l_sym: CsrMatrix,
    pub degrees: Vec<f64>,
}

pub fn laplacians(a: &AffinityGraph) -> Result<Laplacians> {
    let m = &a.entries;
    let n = m.n();
    let degrees: Vec<f64> = (0..n).map(|i| m.row(i).map(|(_, v)| v).sum()).collect();
    if let Some(i) = degrees.iter().position(|d| *d <= 0.0) {
        return Err(Error::IsolatedVertex(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = Vec::with_capacity(m.nnz() + n);
    let mut l_sym = Vec::with_capacity(m.nnz() + n);
    for i in 0..n {
        l.push((i, i, degrees[i]));
        l_sym.push((i, i, 1.0));
        for (j, v) in m.row(i) {
            if i == j {
                continue;
            }
            l.push((i, j, -v));
            l_sym.push((i, j, -v * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Ok(Laplacians {
        l: CsrMatrix::from_triplets(n, l)?,
        l_sym: CsrMatrix::from_triplets(n, l_sym)?,
        degrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{pairwise_points, Metric};
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn line(xs: &[f64]) -> DistanceMatrix {
        pairwise_points(&xs.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
    }

    #[test]
    fn two_tight_pairs() {
        let a = knn_affinity(&line(&[0.0, 0.1, 5.0, 5.1]), 1).unwrap();
        let d = a.entries.to_dense();
        assert_eq!(d, vec![0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0.]);
    }

    #[test]
    fn collinear_one_sided_edge() {
        let a = knn_affinity(&line(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(a.entries.get(0, 1), 1.0);
        assert_eq!(a.entries.get(1, 2), 0.5);
        assert_eq!(a.entries.get(2, 1), 0.5);
        assert_eq!(a.entries.get(0, 2), 0.0);
    }

    #[test]
    fn ties_prefer_smaller_index() {
        // point 1 is equidistant from 0 and 2
        let a = knn_affinity(&line(&[0.0, 1.0, 2.0]), 1).unwrap();
        assert_eq!(a.entries.get(1, 0), 1.0);
        assert_eq!(a.entries.get(1, 2), 0.5);
    }

    #[test]
    fn full_k_is_complete() {
        let n = 7;
        let a = knn_affinity(&pairwise_points(&random_points(n, 3)).unwrap(), n - 1).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a.entries.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let d = line(&[0.0, 1.0, 2.0]);
        assert!(knn_affinity(&d, 0).is_err());
        assert!(knn_affinity(&d, 3).is_err());
    }

    #[test]
    fn l_sym_matches_dense_formula() {
        let a = knn_affinity(&pairwise_points(&random_points(8, 11)).unwrap(), 3).unwrap();
        let lap = laplacians(&a).unwrap();
        let ad = a.entries.to_dense();
        let n = 8;
        let deg: Vec<f64> = (0..n).map(|i| ad[i * n..(i + 1) * n].iter().sum()).collect();
        let ls = lap.l_sym.to_dense();
        let l = lap.l.to_dense();
        for i in 0..n {
            for j in 0..n {
                let lij = if i == j { deg[i] } else { 0.0 } - ad[i * n + j];
                assert!((l[i * n + j] - lij).abs() < 1e-12);
                assert!((ls[i * n + j] - lij / (deg[i] * deg[j]).sqrt()).abs() < 1e-12);
            }
        }
        assert!(lap.l_sym.is_symmetric());
    }

    #[test]
    fn isolated_vertex_is_rejected() {
        let entries = CsrMatrix::from_triplets(3, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let g = AffinityGraph { k: 1, entries };
        assert!(matches!(laplacians(&g), Err(Error::IsolatedVertex(2))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn graph_invariants(seed in 0u64..10_000, n in 3usize..40, kk in 1usize..12) {
            let k = kk.min(n - 1);
            let d = pairwise_points(&random_points(n, seed)).unwrap();
            prop_assert_eq!(d.metric(), Metric::Euclidean);
            let a = knn_affinity(&d, k).unwrap();
            for i in 0..n {
                prop_assert_eq!(a.entries.get(i, i), 0.0);
                // hubs can collect more than 2k one-sided edges, so only the lower bound holds
                prop_assert!(a.entries.row_nnz(i) >= k);
                for (j, v) in a.entries.row(i) {
                    prop_assert!(v == 0.5 || v == 1.0);
                    prop_assert_eq!(a.entries.get(j, i), v);
                }
            }
            prop_assert_eq!(symmetrize(&a.entries).unwrap(), a.entries.clone());
        }
    }
}
