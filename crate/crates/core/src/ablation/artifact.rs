use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::attribution::{AttributionMap, LabeledDataset, Shape, Tensor};
use crate::error::invalid;
use crate::{seeded_rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArtifactKind {
    Watermark,
    Border,
    RoundedCorners,
    PastedPattern,
}

impl ArtifactKind {
    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Watermark => "watermark",
            ArtifactKind::Border => "border",
            ArtifactKind::RoundedCorners => "rounded_corners",
            ArtifactKind::PastedPattern => "pasted_pattern",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "watermark" => Ok(ArtifactKind::Watermark),
            "border" => Ok(ArtifactKind::Border),
            "rounded_corners" | "rounded-corners" => Ok(ArtifactKind::RoundedCorners),
            "pasted_pattern" | "pasted-pattern" => Ok(ArtifactKind::PastedPattern),
            other => Err(invalid("kind", format!("unknown artifact kind `{other}`"))),
        }
    }
}

/// Where a watermark or pasted pattern goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    /// Uniformly random top-left corner such that the patch stays inside
    /// rows `r0..r1` and columns `c0..c1`, drawn from the artifact seed.
    Random { r0: usize, c0: usize, r1: usize, c1: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArtifactParams {
    pub shape: Shape,
    /// Watermark / pattern side length, border width or corner radius.
    pub size: usize,
    /// Pixel value the artifact paints.
    pub value: f64,
    pub anchor: Anchor,
}

impl ArtifactParams {
    /// The 3 × 3 bright bottom-left watermark on a single-channel 28 × 28 image.
    pub fn watermark_28() -> Self {
        Self {
            shape: Shape::new(1, 28, 28),
            size: 3,
            value: 1.0,
            anchor: Anchor::BottomLeft,
        }
    }
}

/// A blend of `pattern` into an image, pixel weight `alpha` (shared by all channels).
#[derive(Clone, Debug, PartialEq)]
pub struct ArtifactMask {
    pub kind: ArtifactKind,
    pub anchor: Anchor,
    pub pattern: Tensor,
    /// `h × w`, row-major, in `[0, 1]`.
    pub alpha: Vec<f64>,
}

impl ArtifactMask {
    pub fn shape(&self) -> Shape {
        self.pattern.shape()
    }

    /// Row-major pixel indices with `alpha > 0`.
    pub fn support(&self) -> Vec<usize> {
        (0..self.alpha.len()).filter(|&i| self.alpha[i] > 0.0).collect()
    }
}

fn patch_origin(p: &ArtifactParams, seed: u64) -> Result<(usize, usize)> {
    let (h, w, s) = (p.shape.h, p.shape.w, p.size);
    Ok(match p.anchor {
        Anchor::TopLeft => (0, 0),
        Anchor::TopRight => (0, w - s),
        Anchor::BottomLeft => (h - s, 0),
        Anchor::BottomRight => (h - s, w - s),
        Anchor::Random { r0, c0, r1, c1 } => {
            if r1 > h || c1 > w || r0 + s > r1 || c0 + s > c1 {
                return Err(invalid("anchor", "random region does not fit the patch"));
            }
            let mut rng = seeded_rng(seed);
            (rng.random_range(r0..=r1 - s), rng.random_range(c0..=c1 - s))
        }
    })
}

/// Whether pixel `(y, x)` lies in a corner square of side `r` but outside
/// the quarter disc of radius `r` that rounds that corner.
pub fn in_rounded_corner(y: usize, x: usize, h: usize, w: usize, r: usize) -> bool {
    let rf = r as f64;
    let (cy, cx) = (y as f64 + 0.5, x as f64 + 0.5);
    let near_top = y < r;
    let near_bottom = y >= h - r;
    let near_left = x < r;
    let near_right = x >= w - r;
    let centre_y = if near_top { rf } else { h as f64 - rf };
    let centre_x = if near_left { rf } else { w as f64 - rf };
    (near_top || near_bottom) && (near_left || near_right) && (cy - centre_y).hypot(cx - centre_x) > rf
}

pub fn make_artifact(kind: ArtifactKind, params: &ArtifactParams, seed: u64) -> Result<ArtifactMask> {
    let Shape { c, h, w } = params.shape;
    let s = params.size;
    if c == 0 || h == 0 || w == 0 {
        return Err(invalid("shape", "image must be non-empty"));
    }
    if !(0.0..=1.0).contains(&params.value) {
        return Err(invalid("value", "must lie in [0, 1]"));
    }
    if s == 0 {
        return Err(invalid("size", "must be at least 1"));
    }
    let limit = match kind {
        ArtifactKind::Border | ArtifactKind::RoundedCorners => h.min(w) / 2,
        _ => h.min(w),
    };
    if s > limit {
        return Err(invalid("size", format!("{s} does not fit a {h}x{w} image")));
    }
    let mut alpha = vec![0.0; h * w];
    let mut pattern = Tensor::zeros(params.shape);
    match kind {
        ArtifactKind::Watermark | ArtifactKind::PastedPattern => {
            let (r0, c0) = patch_origin(params, seed)?;
            for dy in 0..s {
                for dx in 0..s {
                    let (y, x) = (r0 + dy, c0 + dx);
                    alpha[y * w + x] = 1.0;
                    let v = match kind {
                        ArtifactKind::PastedPattern if (dy + dx) % 2 == 1 => 0.0,
                        _ => params.value,
                    };
                    for ch in 0..c {
                        pattern.set(ch, y, x, v);
                    }
                }
            }
        }
        ArtifactKind::Border | ArtifactKind::RoundedCorners => {
            for y in 0..h {
                for x in 0..w {
                    let on = match kind {
                        ArtifactKind::Border => y < s || x < s || y >= h - s || x >= w - s,
                        _ => in_rounded_corner(y, x, h, w, s),
                    };
                    if on {
                        alpha[y * w + x] = 1.0;
                        for ch in 0..c {
                            pattern.set(ch, y, x, params.value);
                        }
                    }
                }
            }
        }
    }
    Ok(ArtifactMask {
        kind,
        anchor: params.anchor,
        pattern,
        alpha,
    })
}

fn check_shape(image: &Tensor, mask: &ArtifactMask) -> Result<()> {
    if image.shape() != mask.shape() {
        return Err(Error::Shape(format!("image {} vs mask {}", image.shape(), mask.shape())));
    }
    Ok(())
}

/// `(1 − α)·x + α·pattern`, clamped to `[0, 1]`.
pub fn inject(image: &Tensor, mask: &ArtifactMask) -> Result<Tensor> {
    check_shape(image, mask)?;
    let plane = mask.alpha.len();
    let mut out = image.clone();
    for (i, (v, p)) in out.data_mut().iter_mut().zip(mask.pattern.data()).enumerate() {
        let a = mask.alpha[i % plane];
        *v = ((1.0 - a) * *v + a * p).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// How [`remove`] fills the artifact support.
#[derive(Clone, Debug, PartialEq)]
pub enum Fill {
    /// Per-channel constant.
    Mean(Vec<f64>),
    /// Per-channel Gaussian noise, clamped to `[0, 1]`.
    Noise { mean: Vec<f64>, std: Vec<f64>, seed: u64 },
}

/// Per-channel mean and standard deviation over all pixels of a dataset.
pub fn channel_stats(data: &LabeledDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let shape = data.image_shape().ok_or(Error::EmptyDataset)?;
    let mut sum = vec![0.0; shape.c];
    let mut sq = vec![0.0; shape.c];
    for img in &data.images {
        for ch in 0..shape.c {
            for v in img.channel(ch) {
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
    }
    let count = (data.len() * shape.plane()) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / count - m * m).max(0.0).sqrt()).collect();
    Ok((mean, std))
}

/// Overwrites every pixel with `alpha > 0` by the fill value.
pub fn remove(image: &Tensor, mask: &ArtifactMask, fill: &Fill) -> Result<Tensor> {
    check_shape(image, mask)?;
    let c = image.shape().c;
    let (mean, std, seed) = match fill {
        Fill::Mean(m) => (m, None, 0),
        Fill::Noise { mean, std, seed } => (mean, Some(std), *seed),
    };
    if mean.len() != c || std.is_some_and(|s| s.len() != c) {
        return Err(Error::Shape(format!("fill statistics for {} channels, image has {c}", mean.len())));
    }
    let mut rng = seeded_rng(seed);
    let support = mask.support();
    let w = image.shape().w;
    let mut out = image.clone();
    for ch in 0..c {
        let noise = match std {
            Some(s) => Some(Normal::new(mean[ch], s[ch]).map_err(|e| invalid("fill", e.to_string()))?),
            None => None,
        };
        for &i in &support {
            let v = match &noise {
                Some(nd) => nd.sample(&mut rng).clamp(0.0, 1.0),
                None => mean[ch],
            };
            out.set(ch, i / w, i % w, v);
        }
    }
    Ok(out)
}

/// Share of the positive relevance that falls on the artifact support.
pub fn relevance_mass_fraction(map: &AttributionMap, mask: &ArtifactMask) -> Result<f64> {
    let s = mask.shape();
    if (map.h, map.w) != (s.h, s.w) {
        return Err(Error::Shape(format!("map {:?} vs mask {}x{}", map.dims(), s.h, s.w)));
    }
    let mut inside = 0.0;
    let mut total = 0.0;
    for (v, a) in map.values.iter().zip(&mask.alpha) {
        if *v > 0.0 {
            total += v;
            if *a > 0.0 {
                inside += v;
            }
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(size: usize, anchor: Anchor) -> ArtifactParams {
        ArtifactParams {
            shape: Shape::new(1, 28, 28),
            size,
            value: 0.5,
            anchor,
        }
    }

    fn random_image(shape: Shape, seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed);
        Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn border_frame_count() {
        let m = make_artifact(ArtifactKind::Border, &params(2, Anchor::TopLeft), 0).unwrap();
        assert_eq!(m.support().len(), 28 * 28 - 24 * 24);
        assert_eq!(m.support().len(), 208);
        for y in 2..26 {
            for x in 2..26 {
                assert_eq!(m.alpha[y * 28 + x], 0.0);
            }
        }
    }

    #[test]
    fn rounded_corner_geometry() {
        let r = 4;
        let m = make_artifact(ArtifactKind::RoundedCorners, &params(r, Anchor::TopLeft), 0).unwrap();
        let mut count = 0;
        for y in 0..28usize {
            for x in 0..28usize {
                // distance from the pixel centre to the nearest rounding centre
                let cy = if y < 14 { 4.0 } else { 24.0 };
                let cx = if x < 14 { 4.0 } else { 24.0 };
                let corner = (y < 4 || y >= 24) && (x < 4 || x >= 24);
                let outside = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt() > 4.0;
                let want = corner && outside;
                assert_eq!(m.alpha[y * 28 + x] > 0.0, want, "pixel {y},{x}");
                count += want as usize;
            }
        }
        assert_eq!(count % 4, 0);
        assert!(count > 0);
    }

    #[test]
    fn watermark_bottom_left() {
        let m = make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), 0).unwrap();
        let want: Vec<usize> = (25..28).flat_map(|y| (0..3).map(move |x| y * 28 + x)).collect();
        assert_eq!(m.support(), want);
    }

    #[test]
    fn random_anchor_is_seeded_and_contained() {
        let anchor = Anchor::Random { r0: 10, c0: 10, r1: 20, c1: 20 };
        let a = make_artifact(ArtifactKind::PastedPattern, &params(4, anchor), 5).unwrap();
        let b = make_artifact(ArtifactKind::PastedPattern, &params(4, anchor), 5).unwrap();
        assert_eq!(a, b);
        for i in a.support() {
            let (y, x) = (i / 28, i % 28);
            assert!((10..20).contains(&y) && (10..20).contains(&x));
        }
    }

    #[test]
    fn oversized_params_fail() {
        assert!(make_artifact(ArtifactKind::Watermark, &params(29, Anchor::BottomLeft), 0).is_err());
        assert!(make_artifact(ArtifactKind::Border, &params(15, Anchor::TopLeft), 0).is_err());
        assert!(make_artifact(ArtifactKind::Border, &params(0, Anchor::TopLeft), 0).is_err());
        let bad = Anchor::Random { r0: 0, c0: 0, r1: 3, c1: 30 };
        assert!(make_artifact(ArtifactKind::Watermark, &params(4, bad), 0).is_err());
    }

    #[test]
    fn inject_cases() {
        let shape = Shape::new(2, 6, 6);
        let img = random_image(shape, 1);
        let mut m = make_artifact(
            ArtifactKind::Watermark,
            &ArtifactParams { shape, size: 2, value: 0.9, anchor: Anchor::TopRight },
            0,
        )
        .unwrap();
        let out = inject(&img, &m).unwrap();
        assert_eq!(out.at(1, 0, 5), 0.9);
        assert_eq!(out.at(1, 3, 3), img.at(1, 3, 3));
        assert_eq!(inject(&out, &m).unwrap(), out);

        m.alpha.iter_mut().for_each(|a| *a = 0.0);
        assert_eq!(inject(&img, &m).unwrap(), img);

        m.alpha.iter_mut().for_each(|a| *a = 0.5);
        m.pattern = img.clone();
        let same = inject(&img, &m).unwrap();
        for (a, b) in same.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(inject(&random_image(Shape::new(1, 6, 6), 2), &m).is_err());
    }

    #[test]
    fn remove_recovers_constant_mean_image() {
        let shape = Shape::new(1, 28, 28);
        let img = Tensor::filled(shape, 0.3);
        let m = make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), 0).unwrap();
        let back = remove(&inject(&img, &m).unwrap(), &m, &Fill::Mean(vec![0.3])).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn remove_touches_only_the_support() {
        let shape = Shape::new(1, 28, 28);
        let m = make_artifact(ArtifactKind::Border, &params(3, Anchor::TopLeft), 0).unwrap();
        for seed in 0..5 {
            let img = random_image(shape, seed);
            let fill = Fill::Noise { mean: vec![0.4], std: vec![0.2], seed };
            let out = remove(&inject(&img, &m).unwrap(), &m, &fill).unwrap();
            let mut rng = seeded_rng(seed);
            let nd = Normal::new(0.4f64, 0.2).unwrap();
            for i in 0..28 * 28 {
                let (y, x) = (i / 28, i % 28);
                if m.alpha[i] > 0.0 {
                    assert_eq!(out.at(0, y, x), nd.sample(&mut rng).clamp(0.0, 1.0));
                } else {
                    assert_eq!(out.at(0, y, x), img.at(0, y, x));
                }
            }
        }
        let mut zero = m.clone();
        zero.alpha.iter_mut().for_each(|a| *a = 0.0);
        let img = random_image(shape, 9);
        assert_eq!(remove(&img, &zero, &Fill::Mean(vec![0.5])).unwrap(), img);
    }

    #[test]
    fn mass_fraction_cases() {
        let m = make_artifact(
            ArtifactKind::Watermark,
            &ArtifactParams { shape: Shape::new(1, 10, 10), size: 1, value: 1.0, anchor: Anchor::TopLeft },
            0,
        )
        .unwrap();
        let mut v = vec![0.0; 100];
        v[0] = 2.0;
        v[5] = -1.0;
        assert_eq!(relevance_mass_fraction(&AttributionMap::new(10, 10, v).unwrap(), &m).unwrap(), 1.0);
        let border = make_artifact(
            ArtifactKind::Border,
            &ArtifactParams { shape: Shape::new(1, 10, 10), size: 1, value: 1.0, anchor: Anchor::TopLeft },
            0,
        )
        .unwrap();
        let uniform = AttributionMap::new(10, 10, vec![0.7; 100]).unwrap();
        assert!((relevance_mass_fraction(&uniform, &border).unwrap() - 0.36).abs() < 1e-9);
        let neg = AttributionMap::new(10, 10, vec![-1.0; 100]).unwrap();
        assert_eq!(relevance_mass_fraction(&neg, &border).unwrap(), 0.0);

        let mut rng = seeded_rng(8);
        let vals: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let map = AttributionMap::new(10, 10, vals.clone()).unwrap();
        let (mut inside, mut total) = (0.0, 0.0);
        for y in 0..10 {
            for x in 0..10 {
                let v = vals[y * 10 + x];
                if v > 0.0 {
                    total += v;
                    if y == 0 || x == 0 || y == 9 || x == 9 {
                        inside += v;
                    }
                }
            }
        }
        assert!((relevance_mass_fraction(&map, &border).unwrap() - inside / total).abs() < 1e-12);
    }

    #[test]
    fn kind_names_parse() {
        for k in [ArtifactKind::Watermark, ArtifactKind::Border, ArtifactKind::RoundedCorners, ArtifactKind::PastedPattern] {
            assert_eq!(k.name().parse::<ArtifactKind>().unwrap(), k);
        }
    }
}
