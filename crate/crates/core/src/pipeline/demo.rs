//! Self-contained demonstrations: spectral clustering of four 2D blobs and
//! a barycenter mosaic between four transformed copies of a glyph.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};

use crate::attribution::AttributionMap;
use crate::cluster::{adjusted_rand_index, kmeans, KMeansParams};
use crate::distance::{chebyshev_interpolation_weights, pairwise_points, wasserstein_barycenter, BarycenterParams};
use crate::spectral::{eigengap_estimate, knn_affinity, lanczos_eigs, laplacians, LanczosParams};
use crate::viz::scatter_svg;
use crate::{seeded_rng, Result};

pub const FIG2_MAX_K: usize = 10;

pub const BLOB_CENTERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];

/// `per_blob` points around each of [`BLOB_CENTERS`] with isotropic noise.
pub fn four_blobs(per_blob: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut points = Vec::with_capacity(4 * per_blob);
    let mut labels = Vec::with_capacity(4 * per_blob);
    for (b, c) in BLOB_CENTERS.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            labels.push(b);
        }
    }
    (points, labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig2Result {
    pub eigenvalues: Vec<f64>,
    pub estimated_k: usize,
    pub labels: Vec<usize>,
    pub truth: Vec<usize>,
    pub ari: f64,
    pub files: Vec<PathBuf>,
}

/// Four blobs of 100 points, KNN graph with k = 10, eigengap-chosen k-means.
/// The eigengap search stops at [`FIG2_MAX_K`]: further up the spectrum of a
/// single blob's KNN graph the absolute gaps grow past the cluster gap.
/// Writes `fig2_eigenvalues.csv` and `fig2_scatter.svg` into `out`.
pub fn demo_fig2(out: &Path, seed: u64) -> Result<Fig2Result> {
    let (points, truth) = four_blobs(100, 0.05, seed);
    let d = pairwise_points(&points)?;
    let g = knn_affinity(&d, 10)?;
    let l = laplacians(&g)?;
    let emb = lanczos_eigs(&l.l_sym, 32, &LanczosParams { seed, ..LanczosParams::default() })?;
    let estimated_k = eigengap_estimate(&emb.eigenvalues, FIG2_MAX_K);
    let k = estimated_k.max(2);
    let lead: Vec<Vec<f64>> = emb.rows().into_iter().map(|r| r[..k].to_vec()).collect();
    let clusters = kmeans(&lead, k, &KMeansParams { seed, ..KMeansParams::default() })?;
    let ari = adjusted_rand_index(&clusters.labels, &truth)?;

    fs::create_dir_all(out)?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, v) in emb.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{},{v}", i + 1);
    }
    let eig_path = out.join("fig2_eigenvalues.csv");
    fs::write(&eig_path, csv)?;
    let coords: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    let svg_path = out.join("fig2_scatter.svg");
    fs::write(&svg_path, scatter_svg(&coords, &clusters.labels, &format!("four blobs, k = {k}")))?;

    Ok(Fig2Result {
        eigenvalues: emb.eigenvalues,
        estimated_k,
        labels: clusters.labels,
        truth,
        ari,
        files: vec![eig_path, svg_path],
    })
}

/// A seven-like stroke glyph on a `size × size` grid, strictly positive so
/// that every pixel carries some mass.
pub fn glyph(size: usize) -> AttributionMap {
    let s = size as f64;
    let mut v = vec![1e-6; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = ((y as f64 + 0.5) / s, (x as f64 + 0.5) / s);
            let top = (0.2..0.32).contains(&fy) && (0.25..0.75).contains(&fx);
            // diagonal from the top-right end down to the bottom-left
            let t = (fy - 0.26) / 0.5;
            let diag = (0.0..=1.0).contains(&t) && (fx - (0.72 - 0.3 * t)).abs() < 0.07;
            if top || diag {
                v[y * size + x] = 1.0;
            }
        }
    }
    AttributionMap::new(size, size, v).expect("glyph values are positive")
}

/// Rotates a square map by quarter turns, then shifts it cyclically.
pub fn transform(map: &AttributionMap, quarter_turns: usize, shift: (isize, isize)) -> AttributionMap {
    let (n, _) = map.dims();
    let mut v = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (mut sy, mut sx) = (y, x);
            for _ in 0..quarter_turns % 4 {
                (sy, sx) = (sx, n - 1 - sy);
            }
            let ty = (y as isize + shift.0).rem_euclid(n as isize) as usize;
            let tx = (x as isize + shift.1).rem_euclid(n as isize) as usize;
            v[ty * n + tx] = map.get(sy, sx);
        }
    }
    AttributionMap::new(n, n, v).expect("permuted values stay positive")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig3Result {
    /// Row-major `steps × steps` barycenters, each `size × size`.
    pub cells: Vec<Vec<f64>>,
    pub corners: Vec<AttributionMap>,
    pub steps: usize,
    pub size: usize,
    pub files: Vec<PathBuf>,
}

/// Four rotated and translated glyphs in the corners of a `steps × steps`
/// mosaic; every other cell is their Wasserstein barycenter with Chebyshev
/// weights. Writes `fig3_barycenters.csv` and `fig3_mosaic.svg`.
pub fn demo_fig3(out: &Path, steps: usize, size: usize) -> Result<Fig3Result> {
    if steps < 2 {
        return Err(crate::error::invalid("steps", "need at least 2"));
    }
    let base = glyph(size);
    let q = size as isize / 5;
    let corners = vec![
        transform(&base, 0, (-q, -q)),
        transform(&base, 1, (-q, q)),
        transform(&base, 3, (q, -q)),
        transform(&base, 2, (q, q)),
    ];
    // (row, col) positions of the four corner maps
    let anchors = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let params = BarycenterParams { epsilon: 2e-3, ..BarycenterParams::default() };
    let mut cells = Vec::with_capacity(steps * steps);
    for r in 0..steps {
        for c in 0..steps {
            let pos = [r as f64 / (steps - 1) as f64, c as f64 / (steps - 1) as f64];
            let w = chebyshev_interpolation_weights(pos, &anchors)?;
            cells.push(wasserstein_barycenter(&corners, &w, &params)?.mass);
        }
    }

    fs::create_dir_all(out)?;
    let mut csv = String::from("cell_row,cell_col,y,x,mass\n");
    for (i, cell) in cells.iter().enumerate() {
        for (j, m) in cell.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{},{m}", i / steps, i % steps, j / size, j % size);
        }
    }
    let csv_path = out.join("fig3_barycenters.csv");
    fs::write(&csv_path, csv)?;
    let svg_path = out.join("fig3_mosaic.svg");
    fs::write(&svg_path, mosaic_svg(&cells, steps, size))?;

    Ok(Fig3Result { cells, corners, steps, size, files: vec![csv_path, svg_path] })
}

fn mosaic_svg(cells: &[Vec<f64>], steps: usize, size: usize) -> String {
    let px = 6usize;
    let gap = 4usize;
    let side = steps * (size * px + gap) + gap;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {side} {side}\" width=\"{side}\" height=\"{side}\">"
    );
    let _ = writeln!(s, "<rect width=\"{side}\" height=\"{side}\" fill=\"white\"/>");
    for (i, cell) in cells.iter().enumerate() {
        let ox = gap + (i % steps) * (size * px + gap);
        let oy = gap + (i / steps) * (size * px + gap);
        let peak = cell.iter().cloned().fold(0.0, f64::max).max(1e-300);
        for (j, m) in cell.iter().enumerate() {
            let shade = 255 - (255.0 * (m / peak).clamp(0.0, 1.0)).round() as u8;
            if shade == 255 {
                continue;
            }
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{px}\" height=\"{px}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                ox + (j % size) * px,
                oy + (j / size) * px
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_finds_four_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let r = demo_fig2(dir.path(), 0).unwrap();
        assert_eq!(r.eigenvalues.iter().filter(|&&v| v.abs() < 1e-8).count(), 4);
        assert_eq!(r.estimated_k, 4);
        assert!(r.ari > 0.99);
        let csv = fs::read_to_string(dir.path().join("fig2_eigenvalues.csv")).unwrap();
        assert_eq!(csv.lines().count(), 33);
    }

    #[test]
    fn transform_is_a_permutation() {
        let g = glyph(12);
        let t = transform(&g, 1, (2, -3));
        let mut a = g.values.clone();
        let mut b = t.values.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(transform(&transform(&g, 2, (0, 0)), 2, (0, 0)), g);
    }

    #[test]
    fn fig3_corners_match_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let r = demo_fig3(dir.path(), 3, 12).unwrap();
        assert_eq!(r.cells.len(), 9);
        let normed: Vec<Vec<f64>> = r
            .corners
            .iter()
            .map(|m| {
                let t: f64 = m.values.iter().sum();
                m.values.iter().map(|v| v / t).collect()
            })
            .collect();
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        for (own, cell) in [0, 2, 6, 8].into_iter().enumerate() {
            let d: Vec<f64> = normed.iter().map(|c| l1(&r.cells[cell], c)).collect();
            for (other, v) in d.iter().enumerate() {
                if other != own {
                    assert!(d[own] < 0.5 * v, "cell {cell}: {d:?}");
                }
            }
        }
    }
}
