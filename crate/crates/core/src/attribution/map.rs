use crate::{Error, Result};

/// Signed per-pixel relevance explaining one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub h: usize,
    pub w: usize,
    /// Row-major `h × w` values.
    pub values: Vec<f64>,
    pub sample_id: u64,
    pub target_class: usize,
    /// 1-based rank of the explained class in the model's prediction.
    pub predicted_rank_of_true_label: usize,
}

impl AttributionMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "{} values for a {h}x{w} attribution map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attribution map".into()));
        }
        Ok(Self {
            h,
            w,
            values,
            sample_id: 0,
            target_class: 0,
            predicted_rank_of_true_label: 1,
        })
    }

    pub fn with_sample_id(mut self, id: u64) -> Self {
        self.sample_id = id;
        self
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.w + c]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Sums a map onto a coarser `gh × gw` grid. Cells are `h / gh` rows by
/// `w / gw` columns; the last row and column of cells absorb the remainder.
pub fn sum_pool_grid(map: &AttributionMap, grid: (usize, usize)) -> Result<AttributionMap> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || gh > map.h || gw > map.w {
        return Err(crate::error::invalid(
            "preprocess_grid",
            format!("grid {gh}x{gw} does not fit a {}x{} map", map.h, map.w),
        ));
    }
    let (ch, cw) = (map.h / gh, map.w / gw);
    let mut out = vec![0.0; gh * gw];
    for r in 0..map.h {
        let gr = (r / ch).min(gh - 1);
        for c in 0..map.w {
            let gc = (c / cw).min(gw - 1);
            out[gr * gw + gc] += map.get(r, c);
        }
    }
    Ok(AttributionMap {
        h: gh,
        w: gw,
        values: out,
        ..map.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    #[test]
    fn full_grid_is_identity() {
        let m = AttributionMap::new(3, 4, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(sum_pool_grid(&m, (3, 4)).unwrap(), m);
    }

    #[test]
    fn ones_pool_to_four() {
        let m = AttributionMap::new(4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(sum_pool_grid(&m, (2, 2)).unwrap().values, vec![4.0; 4]);
    }

    #[test]
    fn remainder_goes_to_last_cell() {
        let mut rng = seeded_rng(5);
        let m = AttributionMap::new(7, 7, (0..49).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = sum_pool_grid(&m, (2, 2)).unwrap();
        // rows 0..3 / 3..7, columns likewise
        let bounds = [(0usize, 3usize), (3, 7)];
        for (gi, (r0, r1)) in bounds.iter().enumerate() {
            for (gj, (c0, c1)) in bounds.iter().enumerate() {
                let mut s = 0.0;
                for r in *r0..*r1 {
                    for c in *c0..*c1 {
                        s += m.get(r, c);
                    }
                }
                assert!((p.values[gi * 2 + gj] - s).abs() < 1e-12);
            }
        }
        assert!((p.sum() - m.sum()).abs() < 1e-12);
    }

    #[test]
    fn oversized_grid_fails() {
        let m = AttributionMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(sum_pool_grid(&m, (3, 2)).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AttributionMap::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }
}
