use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;

use super::artifact::{inject, remove, ArtifactMask, Fill};
use crate::attribution::{rank_of, LabeledDataset, Tensor, ToyNetwork};
use crate::error::invalid;
use crate::{seeded_rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleEffect {
    pub sample_id: u64,
    pub rank_before: usize,
    pub rank_after: usize,
    pub prob_before: f64,
    pub prob_after: f64,
}

impl SampleEffect {
    /// Positive when the artifact class moved up the ranking.
    pub fn delta_rank(&self) -> f64 {
        self.rank_before as f64 - self.rank_after as f64
    }

    pub fn delta_prob(&self) -> f64 {
        self.prob_after - self.prob_before
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub artifact_class: usize,
    pub mean_delta_rank: f64,
    pub mean_delta_prob: f64,
    pub per_sample: Vec<SampleEffect>,
}

impl AblationResult {
    fn from_effects(artifact_class: usize, per_sample: Vec<SampleEffect>) -> Self {
        let n = per_sample.len() as f64;
        let mean_delta_rank = per_sample.iter().map(SampleEffect::delta_rank).sum::<f64>() / n;
        let mean_delta_prob = per_sample.iter().map(SampleEffect::delta_prob).sum::<f64>() / n;
        Self {
            artifact_class,
            mean_delta_rank,
            mean_delta_prob,
            per_sample,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.per_sample.len()
    }

    /// `sample_id,rank_before,rank_after,prob_before,prob_after`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "rank_before", "rank_after", "prob_before", "prob_after"])?;
        for s in &self.per_sample {
            w.write_record([
                s.sample_id.to_string(),
                s.rank_before.to_string(),
                s.rank_after.to_string(),
                s.prob_before.to_string(),
                s.prob_after.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn effect(model: &ToyNetwork, id: u64, before: &Tensor, after: &Tensor, class: usize) -> Result<SampleEffect> {
    let pb = model.predict_proba(before)?;
    let pa = model.predict_proba(after)?;
    Ok(SampleEffect {
        sample_id: id,
        rank_before: rank_of(&pb, class),
        rank_after: rank_of(&pa, class),
        prob_before: pb[class],
        prob_after: pa[class],
    })
}

fn check_class(model: &ToyNetwork, class: usize) -> Result<()> {
    if class >= model.num_classes() {
        return Err(Error::LabelOutOfRange { label: class, num_classes: model.num_classes() });
    }
    Ok(())
}

/// Adds the artifact to up to `n` samples of other classes (a seeded
/// choice without replacement, or all of them when `n` is `None` or too
/// large) and records how the artifact class's rank and probability move.
pub fn addition_study(
    model: &ToyNetwork,
    foreign: &LabeledDataset,
    mask: &ArtifactMask,
    artifact_class: usize,
    n: Option<usize>,
    seed: u64,
) -> Result<AblationResult> {
    check_class(model, artifact_class)?;
    if foreign.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if foreign.labels.contains(&artifact_class) {
        return Err(invalid("foreign_samples", "contain members of the artifact class"));
    }
    let chosen: Vec<usize> = match n {
        Some(n) if n < foreign.len() => {
            let mut idx = sample(&mut seeded_rng(seed), foreign.len(), n).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..foreign.len()).collect(),
    };
    if chosen.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let effects = chosen
        .par_iter()
        .map(|&i| {
            let img = &foreign.images[i];
            effect(model, foreign.sample_ids[i], img, &inject(img, mask)?, artifact_class)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResult::from_effects(artifact_class, effects))
}

/// Removes the artifact from every affected sample. Noise fills use
/// `seed + i` for the `i`-th sample.
pub fn removal_study(
    model: &ToyNetwork,
    affected: &LabeledDataset,
    mask: &ArtifactMask,
    artifact_class: usize,
    fill: &Fill,
) -> Result<AblationResult> {
    check_class(model, artifact_class)?;
    if affected.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let effects = (0..affected.len())
        .into_par_iter()
        .map(|i| {
            let f = match fill {
                Fill::Noise { mean, std, seed } => Fill::Noise {
                    mean: mean.clone(),
                    std: std.clone(),
                    seed: seed.wrapping_add(i as u64),
                },
                other => other.clone(),
            };
            let img = &affected.images[i];
            effect(model, affected.sample_ids[i], img, &remove(img, mask, &f)?, artifact_class)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResult::from_effects(artifact_class, effects))
}

/// A copy of an MLP whose first dense layer ignores every pixel under the
/// artifact support.
pub fn blind_to_mask(model: &ToyNetwork, mask: &ArtifactMask) -> Result<ToyNetwork> {
    let shape = model.input_shape();
    if shape != mask.shape() {
        return Err(Error::Shape(format!("model input {shape} vs mask {}", mask.shape())));
    }
    let mut net = model.clone();
    let plane = shape.plane();
    let support = mask.support();
    let layers = net.layers_mut();
    let first = layers
        .iter()
        .position(|l| !matches!(l, crate::attribution::Layer::Flatten))
        .ok_or_else(|| invalid("model", "has no layers"))?;
    let crate::attribution::Layer::Dense(d) = &mut layers[first] else {
        return Err(invalid("model", "first parametric layer must be dense"));
    };
    for o in 0..d.outputs {
        for ch in 0..shape.c {
            for &p in &support {
                d.weights[o * d.inputs + ch * plane + p] = 0.0;
            }
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::artifact::{make_artifact, ArtifactKind, ArtifactParams};
    use crate::attribution::Shape;
    use rand::Rng;

    fn images(n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| Tensor::from_vec(Shape::new(1, 28, 28), (0..784).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
            .collect()
    }

    fn setup() -> (ToyNetwork, ArtifactMask) {
        let net = ToyNetwork::mlp(Shape::new(1, 28, 28), &[16], 3, 4);
        let mask = make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), 0).unwrap();
        (net, mask)
    }

    #[test]
    fn blind_model_is_unaffected() {
        let (net, mask) = setup();
        let blind = blind_to_mask(&net, &mask).unwrap();
        let data = LabeledDataset::new(images(30, 1), vec![1; 30], 3).unwrap();
        let add = addition_study(&blind, &data, &mask, 0, None, 0).unwrap();
        assert_eq!(add.mean_delta_rank, 0.0);
        assert_eq!(add.mean_delta_prob, 0.0);
        let rem = removal_study(&blind, &data, &mask, 0, &Fill::Mean(vec![0.5])).unwrap();
        assert_eq!(rem.mean_delta_prob, 0.0);
        let unblind = addition_study(&net, &data, &mask, 0, None, 0).unwrap();
        assert_ne!(unblind.mean_delta_prob, 0.0);
    }

    #[test]
    fn means_recompute_from_records() {
        let (net, mask) = setup();
        let data = LabeledDataset::new(images(25, 2), vec![2; 25], 3).unwrap();
        let r = addition_study(&net, &data, &mask, 1, Some(10), 3).unwrap();
        assert_eq!(r.n_samples(), 10);
        let dr: f64 = r.per_sample.iter().map(|s| s.rank_before as f64 - s.rank_after as f64).sum::<f64>() / 10.0;
        let df: f64 = r.per_sample.iter().map(|s| s.prob_after - s.prob_before).sum::<f64>() / 10.0;
        assert!((r.mean_delta_rank - dr).abs() < 1e-12);
        assert!((r.mean_delta_prob - df).abs() < 1e-12);
        assert!(r.per_sample.iter().all(|s| (1..=3).contains(&s.rank_before) && (1..=3).contains(&s.rank_after)));
        assert_eq!(r, addition_study(&net, &data, &mask, 1, Some(10), 3).unwrap());
    }

    #[test]
    fn oversized_n_uses_everything() {
        let (net, mask) = setup();
        let data = LabeledDataset::new(images(7, 3), vec![1; 7], 3).unwrap();
        assert_eq!(addition_study(&net, &data, &mask, 0, Some(2000), 0).unwrap().n_samples(), 7);
    }

    #[test]
    fn precondition_errors() {
        let (net, mask) = setup();
        let empty = LabeledDataset::new(Vec::new(), Vec::new(), 3).unwrap();
        assert!(matches!(removal_study(&net, &empty, &mask, 0, &Fill::Mean(vec![0.5])), Err(Error::EmptyDataset)));
        assert!(matches!(addition_study(&net, &empty, &mask, 0, None, 0), Err(Error::EmptyDataset)));
        let own = LabeledDataset::new(images(3, 4), vec![0, 1, 2], 3).unwrap();
        assert!(addition_study(&net, &own, &mask, 0, None, 0).is_err());
        assert!(addition_study(&net, &own, &mask, 5, None, 0).is_err());
        let cnn = ToyNetwork::toy_cnn(Shape::new(1, 28, 28), 3, 0).unwrap();
        assert!(blind_to_mask(&cnn, &mask).is_err());
    }

    #[test]
    fn csv_layout() {
        let (net, mask) = setup();
        let data = LabeledDataset::new(images(2, 5), vec![1; 2], 3).unwrap();
        let r = addition_study(&net, &data, &mask, 0, None, 0).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,rank_before,rank_after,prob_before,prob_after");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
    }
}
