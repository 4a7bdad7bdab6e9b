use std::io::Write;

use super::artifact::{inject, relevance_mass_fraction, ArtifactMask};
use crate::attribution::{accuracy, lrp_composite, train_sgd_with, LabeledDataset, ToyNetwork, TrainConfig};
use crate::error::invalid;
use crate::{Error, Result};

/// Epochs after which the relevance mass on the artifact is recorded.
pub const MASS_EPOCHS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug)]
pub struct UnhansRecord {
    pub model_a: ToyNetwork,
    pub model_b: ToyNetwork,
    /// `accuracy[m][v]`: model A (`m = 0`) or B (`m = 1`) on validation
    /// set A (`v = 0`, as given) or B (`v = 1`, artifact everywhere).
    pub accuracy: [[f64; 2]; 2],
    /// `(epoch, mean fraction)` for model A, then model B. Epoch 0 is the
    /// base model.
    pub mass_a: Vec<(usize, f64)>,
    pub mass_b: Vec<(usize, f64)>,
}

impl UnhansRecord {
    pub fn mass_at(series: &[(usize, f64)], epoch: usize) -> Option<f64> {
        series.iter().find(|(e, _)| *e == epoch).map(|(_, m)| *m)
    }

    /// `model,val_a,val_b` rows.
    pub fn write_accuracy_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "val_a", "val_b"])?;
        for (name, row) in ["A", "B"].iter().zip(&self.accuracy) {
            w.write_record([name.to_string(), row[0].to_string(), row[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `epoch,mass_a,mass_b` rows.
    pub fn write_mass_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "mass_a", "mass_b"])?;
        for ((e, a), (_, b)) in self.mass_a.iter().zip(&self.mass_b) {
            w.write_record([e.to_string(), a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_mass(net: &ToyNetwork, probes: &LabeledDataset, class: usize, mask: &ArtifactMask) -> Result<f64> {
    let mut sum = 0.0;
    for img in &probes.images {
        sum += relevance_mass_fraction(&lrp_composite(net, img, class)?, mask)?;
    }
    Ok(sum / probes.len() as f64)
}

fn fine_tune(
    base: &ToyNetwork,
    train: &LabeledDataset,
    cfg: &TrainConfig,
    probes: &LabeledDataset,
    class: usize,
    mask: &ArtifactMask,
) -> Result<(ToyNetwork, Vec<(usize, f64)>)> {
    let mut series = vec![(0, mean_mass(base, probes, class, mask)?)];
    let net = train_sgd_with(base, train, cfg, |epoch, net| {
        if MASS_EPOCHS.contains(&epoch) {
            series.push((epoch, mean_mass(net, probes, class, mask)?));
        }
        Ok(())
    })?;
    Ok((net, series))
}

/// Fine-tunes `base` once on `train` as given (set A) and once on `train`
/// with the artifact injected into every sample (set B), then scores both
/// on `val` as given and with the artifact everywhere. Relevance mass is
/// measured on the artifact class's samples of the artifact-everywhere
/// validation set.
pub fn unhans_experiment(
    base: &ToyNetwork,
    train: &LabeledDataset,
    val: &LabeledDataset,
    artifact_class: usize,
    mask: &ArtifactMask,
    cfg: &TrainConfig,
) -> Result<UnhansRecord> {
    if train.num_classes < 2 {
        return Err(invalid("dataset", "needs at least two classes"));
    }
    if artifact_class >= train.num_classes {
        return Err(Error::LabelOutOfRange { label: artifact_class, num_classes: train.num_classes });
    }
    let train_b = train.map_images(|_, img| inject(img, mask))?;
    let val_b = val.map_images(|_, img| inject(img, mask))?;
    let probes = val_b.subset(&val_b.indices_of(artifact_class));
    if probes.is_empty() {
        return Err(invalid("validation", "has no artifact-class samples"));
    }

    let (a, b) = rayon::join(
        || fine_tune(base, train, cfg, &probes, artifact_class, mask),
        || fine_tune(base, &train_b, cfg, &probes, artifact_class, mask),
    );
    let (model_a, mass_a) = a?;
    let (model_b, mass_b) = b?;
    let accuracy = [
        [accuracy(&model_a, val)?, accuracy(&model_a, &val_b)?],
        [accuracy(&model_b, val)?, accuracy(&model_b, &val_b)?],
    ];
    Ok(UnhansRecord { model_a, model_b, accuracy, mass_a, mass_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::artifact::{make_artifact, ArtifactKind, ArtifactParams};
    use crate::ablation::dataset::{build_poisoned_dataset, GeneratorParams};

    #[test]
    fn zero_epochs_keeps_the_base_model() {
        let mask = make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), 0).unwrap();
        let gen = GeneratorParams { per_class: 6, num_classes: 3, ..GeneratorParams::default() };
        let (train, _) = build_poisoned_dataset(&gen, 1.0, &mask, 1).unwrap();
        let (val, _) = build_poisoned_dataset(&gen, 0.0, &mask, 2).unwrap();
        let base = ToyNetwork::mlp(mask.shape(), &[8], 3, 0);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let rec = unhans_experiment(&base, &train, &val, 0, &mask, &cfg).unwrap();
        assert_eq!(rec.accuracy[0], rec.accuracy[1]);
        assert_eq!(rec.mass_a, rec.mass_b);
        assert_eq!(rec.mass_a.len(), 1);
        let mut buf = Vec::new();
        rec.write_accuracy_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("model,val_a,val_b\nA,"));
    }

    #[test]
    fn rejects_missing_class() {
        let mask = make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), 0).unwrap();
        let gen = GeneratorParams { per_class: 2, num_classes: 2, ..GeneratorParams::default() };
        let (train, _) = build_poisoned_dataset(&gen, 1.0, &mask, 1).unwrap();
        let base = ToyNetwork::mlp(mask.shape(), &[4], 2, 0);
        assert!(unhans_experiment(&base, &train, &train, 3, &mask, &TrainConfig::default()).is_err());
    }
}
