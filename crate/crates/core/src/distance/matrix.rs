use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::gromov::{gromov_wasserstein, GwParams};
use super::measure::{extract_points, to_measure, GridMeasure, PointCloud};
use super::sinkhorn::SinkhornParams;
use super::wasserstein::{diag_sq, transport_measures};
use crate::attribution::io::{len_u32, put_f64s, LeReader};
use crate::attribution::AttributionMap;
use crate::{Error, Result};

pub const DST_MAGIC: &[u8; 4] = b"DST1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Euclidean,
    Wasserstein,
    GromovWasserstein,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Wasserstein => 1,
            Metric::GromovWasserstein => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Metric::Euclidean),
            1 => Ok(Metric::Wasserstein),
            2 => Ok(Metric::GromovWasserstein),
            t => Err(Error::Format(format!("unknown metric tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Wasserstein => "wasserstein",
            Metric::GromovWasserstein => "gromov_wasserstein",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "wasserstein" => Ok(Metric::Wasserstein),
            "gromov_wasserstein" | "gromov-wasserstein" | "gromov" | "gw" => Ok(Metric::GromovWasserstein),
            other => Err(crate::error::invalid(
                "distance_metric",
                format!("unknown metric `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceParams {
    pub sinkhorn: SinkhornParams,
    pub gw: GwParams,
    /// Share of positive relevance kept when extracting point clouds.
    pub mass_fraction: f64,
}

impl Default for DistanceParams {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornParams::default(),
            gw: GwParams::default(),
            mass_fraction: 0.99,
        }
    }
}

/// Symmetric matrix of pairwise distances, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    metric: Metric,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Mirrors the upper triangle, clamps negatives and zeroes the diagonal.
    pub fn from_values(n: usize, metric: Metric, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("{} values for {n}x{n}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance matrix".into()));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
            for j in i + 1..n {
                let v = values[i * n + j].max(0.0);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(Self { n, metric, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

fn check_maps(maps: &[AttributionMap]) -> Result<(usize, usize)> {
    let first = maps.first().ok_or(Error::EmptyDataset)?;
    for m in maps {
        if m.dims() != first.dims() {
            return Err(Error::Shape(format!(
                "map of sample {} is {:?}, expected {:?}",
                m.sample_id,
                m.dims(),
                first.dims()
            )));
        }
    }
    Ok(first.dims())
}

pub fn pairwise_euclidean(maps: &[AttributionMap]) -> Result<DistanceMatrix> {
    check_maps(maps)?;
    fill_upper(maps.len(), Metric::Euclidean, |i, j| {
        Ok(maps[i]
            .values
            .iter()
            .zip(&maps[j].values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    })
}

/// Euclidean distances between feature vectors of equal length.
pub fn pairwise_points(points: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let dim = points.first().ok_or(Error::EmptyDataset)?.len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Shape(format!("point of length {} among length {dim}", p.len())));
    }
    fill_upper(points.len(), Metric::Euclidean, |i, j| {
        Ok(points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    })
}

/// Evaluates `f` on every `i < j` pair in parallel.
fn fill_upper(n: usize, metric: Metric, f: impl Fn(usize, usize) -> Result<f64> + Sync) -> Result<DistanceMatrix> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let vals = pairs.par_iter().map(|&(i, j)| f(i, j)).collect::<Result<Vec<f64>>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(vals) {
        values[i * n + j] = v;
    }
    DistanceMatrix::from_values(n, metric, values)
}

/// Gromov-Wasserstein clouds have their coordinates divided by the grid
/// diagonal so that `gw.epsilon` does not depend on the image size.
pub fn pairwise_distance_matrix(
    maps: &[AttributionMap],
    metric: Metric,
    params: &DistanceParams,
) -> Result<DistanceMatrix> {
    if maps.len() < 2 {
        return Err(crate::error::invalid("maps", "need at least two maps"));
    }
    let (h, w) = check_maps(maps)?;
    match metric {
        Metric::Euclidean => pairwise_euclidean(maps),
        Metric::Wasserstein => {
            params.sinkhorn.validate()?;
            let measures = maps.iter().map(to_measure).collect::<Result<Vec<GridMeasure>>>()?;
            fill_upper(maps.len(), metric, |i, j| {
                Ok(transport_measures(&measures[i], &measures[j], &params.sinkhorn)?.cost)
            })
        }
        Metric::GromovWasserstein => {
            let scale = diag_sq(h, w).sqrt();
            let clouds = maps
                .iter()
                .map(|m| Ok(extract_points(m, params.mass_fraction)?.map_coords(|[r, c]| [r / scale, c / scale])))
                .collect::<Result<Vec<PointCloud>>>()?;
            fill_upper(maps.len(), metric, |i, j| {
                Ok(gromov_wasserstein(&clouds[i], &clouds[j], &params.gw)?.cost)
            })
        }
    }
}

/// `DST1`: magic, `u32 n`, `u8` metric tag, `n·n` f64 row-major.
pub fn encode_dst1(d: &DistanceMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(9 + d.values.len() * 8);
    out.extend_from_slice(DST_MAGIC);
    out.extend_from_slice(&len_u32(d.n, "sample count")?.to_le_bytes());
    out.push(d.metric.tag());
    put_f64s(&mut out, &d.values);
    Ok(out)
}

pub fn decode_dst1(bytes: &[u8]) -> Result<DistanceMatrix> {
    let mut r = LeReader::new(bytes);
    r.magic(DST_MAGIC)?;
    let n = r.u32()? as usize;
    let metric = Metric::from_tag(r.u8()?)?;
    let values = r.f64s(n * n)?;
    r.expect_eof()?;
    for i in 0..n {
        for j in 0..n {
            if values[i * n + j] != values[j * n + i] {
                return Err(Error::Format(format!("entries ({i},{j}) and ({j},{i}) differ")));
            }
        }
    }
    DistanceMatrix::from_values(n, metric, values)
}
