use crate::attribution::AttributionMap;
use crate::error::invalid;
use crate::{Error, Result};

/// Non-negative mass on an `h × w` pixel grid, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    pub h: usize,
    pub w: usize,
    pub mass: Vec<f64>,
}

impl GridMeasure {
    /// Normalizes arbitrary non-negative values into a measure.
    pub fn from_values(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::Shape(format!("{} values for a {h}x{w} grid", values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::DegenerateMeasure("negative or non-finite mass".into()));
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateMeasure("zero total mass".into()));
        }
        Ok(Self {
            h,
            w,
            mass: values.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Positive part of `map`, normalized to unit mass.
pub fn to_measure(map: &AttributionMap) -> Result<GridMeasure> {
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attribution map".into()));
    }
    let pos: Vec<f64> = map.values.iter().map(|v| v.max(0.0)).collect();
    GridMeasure::from_values(map.h, map.w, pos).map_err(|e| match e {
        Error::DegenerateMeasure(_) => Error::DegenerateMeasure(format!(
            "map of sample {} has no positive relevance",
            map.sample_id
        )),
        other => other,
    })
}

/// Weighted points in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    coords: Vec<[f64; 2]>,
    masses: Vec<f64>,
}

impl PointCloud {
    /// Masses must be positive and are renormalized to sum to one.
    pub fn new(coords: Vec<[f64; 2]>, masses: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() != masses.len() {
            return Err(Error::Shape(format!(
                "{} coordinates and {} masses",
                coords.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::DegenerateMeasure("point masses must be positive".into()));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        let total: f64 = masses.iter().sum();
        Ok(Self {
            coords,
            masses: masses.into_iter().map(|m| m / total).collect(),
        })
    }

    /// Equal masses.
    pub fn uniform(coords: Vec<[f64; 2]>) -> Result<Self> {
        let n = coords.len();
        Self::new(coords, vec![1.0; n])
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Applies `f` to every coordinate, keeping the masses.
    pub fn map_coords(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            coords: self.coords.iter().map(|c| f(*c)).collect(),
            masses: self.masses.clone(),
        }
    }

    /// Euclidean distances between all pairs of points, row-major.
    pub fn distance_matrix(&self) -> Vec<f64> {
        let n = self.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let dx = self.coords[i][0] - self.coords[j][0];
                let dy = self.coords[i][1] - self.coords[j][1];
                let v = (dx * dx + dy * dy).sqrt();
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        d
    }
}

/// Greedily takes the highest-valued pixels (ties in row-major order) until
/// their cumulative positive mass reaches `mass_fraction` of the total.
/// Coordinates are `(row, col)` in pixel units; masses are the pixel values.
pub fn extract_points(map: &AttributionMap, mass_fraction: f64) -> Result<PointCloud> {
    if !(mass_fraction > 0.0 && mass_fraction <= 1.0) {
        return Err(invalid("mass_fraction", "must lie in (0, 1]"));
    }
    let total: f64 = map.values.iter().filter(|v| **v > 0.0).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateMeasure(format!(
            "map of sample {} has no positive relevance",
            map.sample_id
        )));
    }
    let mut order: Vec<usize> = (0..map.values.len()).filter(|&i| map.values[i] > 0.0).collect();
    // stable sort keeps row-major order among equal values
    order.sort_by(|a, b| map.values[*b].total_cmp(&map.values[*a]));
    let target = mass_fraction * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut coords = Vec::new();
    let mut masses = Vec::new();
    for i in order {
        coords.push([(i / map.w) as f64, (i % map.w) as f64]);
        masses.push(map.values[i]);
        acc += map.values[i];
        if acc >= target {
            break;
        }
    }
    PointCloud::new(coords, masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    #[test]
    fn positive_map_is_scaled() {
        let m = AttributionMap::new(1, 3, vec![1.0, 3.0, 1.0]).unwrap();
        assert_eq!(to_measure(&m).unwrap().mass, vec![0.2, 0.6, 0.2]);
    }

    #[test]
    fn negatives_are_clipped() {
        let m = AttributionMap::new(1, 3, vec![-4.0, 3.0, 1.0]).unwrap();
        assert_eq!(to_measure(&m).unwrap().mass, vec![0.0, 0.75, 0.25]);
        let neg = AttributionMap::new(1, 2, vec![-1.0, 0.0]).unwrap();
        assert!(matches!(to_measure(&neg), Err(Error::DegenerateMeasure(_))));
    }

    #[test]
    fn measure_sums_to_one() {
        let mut rng = seeded_rng(3);
        let m = AttributionMap::new(6, 5, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        assert!((to_measure(&m).unwrap().total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_hot_pixel() {
        let mut v = vec![0.0; 16];
        v[6] = 2.5;
        let pc = extract_points(&AttributionMap::new(4, 4, v).unwrap(), 0.99).unwrap();
        assert_eq!(pc.coords(), &[[1.0, 2.0]]);
        assert_eq!(pc.masses(), &[1.0]);
    }

    #[test]
    fn equal_pixels_take_ninety_nine() {
        let m = AttributionMap::new(10, 10, vec![0.37; 100]).unwrap();
        let pc = extract_points(&m, 0.99).unwrap();
        assert_eq!(pc.len(), 99);
        // row-major tie-break: the last pixel is the one left out
        assert_eq!(pc.coords()[98], [9.0, 8.0]);
    }

    #[test]
    fn matches_naive_sort_and_accumulate() {
        let mut rng = seeded_rng(17);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..64)
                .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { -0.1 })
                .collect();
            let m = AttributionMap::new(8, 8, vals.clone()).unwrap();
            let pc = extract_points(&m, 0.9).unwrap();

            let total: f64 = vals.iter().filter(|v| **v > 0.0).sum();
            let mut idx: Vec<usize> = (0..64).filter(|i| vals[*i] > 0.0).collect();
            // selection sort, descending, lower index first on ties
            for a in 0..idx.len() {
                let mut best = a;
                for b in a + 1..idx.len() {
                    let (vb, vbest) = (vals[idx[b]], vals[idx[best]]);
                    if vb > vbest || (vb == vbest && idx[b] < idx[best]) {
                        best = b;
                    }
                }
                idx.swap(a, best);
            }
            let mut acc = 0.0;
            let mut expect = Vec::new();
            for i in idx {
                expect.push([(i / 8) as f64, (i % 8) as f64]);
                acc += vals[i];
                if acc >= 0.9 * total * (1.0 - 1e-12) {
                    break;
                }
            }
            assert_eq!(pc.coords(), &expect[..]);
        }
    }
}
