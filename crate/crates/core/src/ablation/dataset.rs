//! Synthetic shape images with an optional artifact planted in one class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::artifact::{inject, ArtifactMask};
use crate::attribution::{LabeledDataset, Shape, Tensor};
use crate::error::invalid;
use crate::{seeded_rng, Error, Result};

/// Shape family drawn for each class, in class order.
pub const SHAPES: [&str; 5] = ["bars", "discs", "crosses", "checkers", "rings"];

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub num_classes: usize,
    pub per_class: usize,
    /// Side length of the square single-channel images.
    pub size: usize,
    pub noise_sigma: f64,
    /// Pixel value of the shapes before noise.
    pub contrast: f64,
    /// Largest shift of the shape centre, in pixels.
    pub jitter: f64,
    /// Class that receives the artifact.
    pub artifact_class: usize,
    /// Draw the artifact class's images from the other classes' shapes so
    /// that the artifact is its only distinguishing feature.
    pub artifact_only: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            num_classes: 5,
            per_class: 500,
            size: 28,
            noise_sigma: 0.1,
            contrast: 0.3,
            jitter: 0.0,
            artifact_class: 0,
            artifact_only: false,
        }
    }
}

const SUPERSAMPLE: usize = 4;

fn covers(family: usize, dy: f64, dx: f64, e: f64) -> bool {
    let in_box = dy.abs() <= e && dx.abs() <= e;
    let r = dy.hypot(dx);
    match family {
        0 => in_box && ((dx + e) / (e / 2.5)).floor() as i64 % 2 == 0,
        1 => r <= 0.8 * e,
        2 => in_box && (dy.abs() <= 1.5 || dx.abs() <= 1.5),
        3 => in_box && (((dy + e) / (e / 2.0)).floor() as i64 + ((dx + e) / (e / 2.0)).floor() as i64) % 2 == 0,
        _ => (r - 0.8 * e).abs() <= 1.3,
    }
}

/// Anti-aliased rendering: each pixel gets the covered fraction of a
/// 4 × 4 grid of sub-pixel samples, so sub-pixel shifts change the image
/// continuously.
fn paint_shape(family: usize, size: usize, jitter: f64, intensity: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let (cy, cx) = if jitter > 0.0 {
        (s / 2.0 + rng.random_range(-jitter..=jitter), s / 2.0 + rng.random_range(-jitter..=jitter))
    } else {
        (s / 2.0, s / 2.0)
    };
    let e = 7.5 * s / 28.0;
    let step = 1.0 / SUPERSAMPLE as f64;
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) * step;
                    let px = x as f64 + (sx as f64 + 0.5) * step;
                    hits += covers(family, py - cy, px - cx, e) as usize;
                }
            }
            img[y * size + x] = intensity * hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    img
}

fn render(family: usize, p: &GeneratorParams, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Result<Tensor> {
    let mut v = paint_shape(family, p.size, p.jitter, p.contrast, rng);
    for x in &mut v {
        *x = (*x + noise.sample(rng)).clamp(0.0, 1.0);
    }
    Tensor::from_vec(Shape::new(1, p.size, p.size), v)
}

/// Generates `num_classes × per_class` images and plants `mask` into
/// `round(poison_fraction × per_class)` randomly chosen images of the
/// artifact class. Returns the dataset and a per-sample poisoned flag.
/// Sample ids are the sample indices.
pub fn build_poisoned_dataset(
    params: &GeneratorParams,
    poison_fraction: f64,
    mask: &ArtifactMask,
    seed: u64,
) -> Result<(LabeledDataset, Vec<bool>)> {
    let p = params;
    if p.num_classes < 2 || p.num_classes > SHAPES.len() {
        return Err(invalid("num_classes", format!("must lie in [2, {}]", SHAPES.len())));
    }
    if p.per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    if p.size < 8 || !(p.jitter >= 0.0 && p.jitter * 4.0 <= p.size as f64) {
        return Err(invalid("size", "images too small for the shapes and jitter"));
    }
    if p.artifact_class >= p.num_classes {
        return Err(Error::LabelOutOfRange { label: p.artifact_class, num_classes: p.num_classes });
    }
    if !(0.0..=1.0).contains(&poison_fraction) {
        return Err(invalid("poison_fraction", "must lie in [0, 1]"));
    }
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return Err(invalid("noise_sigma", "must be non-negative"));
    }
    if mask.shape() != Shape::new(1, p.size, p.size) {
        return Err(Error::Shape(format!("mask {} vs {}x{} images", mask.shape(), p.size, p.size)));
    }
    let noise = Normal::new(0.0, p.noise_sigma).map_err(|e| invalid("noise_sigma", e.to_string()))?;
    let mut rng = seeded_rng(seed);

    let n_poison = (poison_fraction * p.per_class as f64).round() as usize;
    let mut chosen: Vec<usize> = (0..p.per_class).collect();
    chosen.shuffle(&mut rng);
    let mut poisoned_local = vec![false; p.per_class];
    for &i in &chosen[..n_poison] {
        poisoned_local[i] = true;
    }

    let total = p.num_classes * p.per_class;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut poisoned = Vec::with_capacity(total);
    for class in 0..p.num_classes {
        for i in 0..p.per_class {
            let family = if class == p.artifact_class && p.artifact_only {
                let other = rng.random_range(0..p.num_classes - 1);
                if other >= class {
                    other + 1
                } else {
                    other
                }
            } else {
                class
            };
            let mut img = render(family, p, &mut rng, &noise)?;
            let flag = class == p.artifact_class && poisoned_local[i];
            if flag {
                img = inject(&img, mask)?;
            }
            images.push(img);
            labels.push(class);
            poisoned.push(flag);
        }
    }
    let ids = (0..total as u64).collect();
    Ok((LabeledDataset::with_ids(images, labels, ids, p.num_classes)?, poisoned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::artifact::{make_artifact, ArtifactKind, ArtifactParams};

    fn small() -> GeneratorParams {
        GeneratorParams { per_class: 100, ..GeneratorParams::default() }
    }

    fn watermark() -> ArtifactMask {
        make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), 0).unwrap()
    }

    #[test]
    fn poison_count_is_exact() {
        let (data, flags) = build_poisoned_dataset(&small(), 0.2, &watermark(), 3).unwrap();
        assert_eq!(data.len(), 500);
        assert_eq!(flags.iter().filter(|&&f| f).count(), 20);
        for (i, &f) in flags.iter().enumerate() {
            if f {
                assert_eq!(data.labels[i], 0);
                for y in 25..28 {
                    for x in 0..3 {
                        assert_eq!(data.images[i].at(0, y, x), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = build_poisoned_dataset(&small(), 0.2, &watermark(), 11).unwrap();
        let b = build_poisoned_dataset(&small(), 0.2, &watermark(), 11).unwrap();
        assert_eq!(a, b);
        let c = build_poisoned_dataset(&small(), 0.2, &watermark(), 12).unwrap();
        assert_ne!(a.0.images, c.0.images);
        for img in &a.0.images {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn classes_differ_in_mean_image() {
        let (data, _) = build_poisoned_dataset(&small(), 0.0, &watermark(), 1).unwrap();
        let means: Vec<Vec<f64>> = (0..5)
            .map(|c| {
                let idx = data.indices_of(c);
                let mut m = vec![0.0; 784];
                for &i in &idx {
                    for (a, v) in m.iter_mut().zip(data.images[i].data()) {
                        *a += v / idx.len() as f64;
                    }
                }
                m
            })
            .collect();
        for a in 0..5 {
            for b in a + 1..5 {
                let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d.sqrt() > 1.0, "classes {a} and {b} look alike");
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let m = watermark();
        assert!(build_poisoned_dataset(&small(), 1.5, &m, 0).is_err());
        let p = GeneratorParams { artifact_class: 7, ..small() };
        assert!(matches!(build_poisoned_dataset(&p, 0.2, &m, 0), Err(Error::LabelOutOfRange { .. })));
        let p = GeneratorParams { num_classes: 6, ..small() };
        assert!(build_poisoned_dataset(&p, 0.2, &m, 0).is_err());
        let p = GeneratorParams { size: 20, ..small() };
        assert!(matches!(build_poisoned_dataset(&p, 0.2, &m, 0), Err(Error::Shape(_))));
    }
}
