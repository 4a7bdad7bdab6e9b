use super::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Images with integer class labels and stable per-sample identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<u64>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let sample_ids = (0..images.len() as u64).collect();
        Self::with_ids(images, labels, sample_ids, num_classes)
    }

    pub fn with_ids(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        sample_ids: Vec<u64>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() || images.len() != sample_ids.len() {
            return Err(Error::Shape(format!(
                "{} images, {} labels, {} ids",
                images.len(),
                labels.len(),
                sample_ids.len()
            )));
        }
        if let Some(first) = images.first() {
            let s = first.shape();
            if let Some(bad) = images.iter().find(|t| t.shape() != s) {
                return Err(Error::Shape(format!("mixed image shapes {} and {}", s, bad.shape())));
            }
        }
        if let Some(&label) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            images,
            labels,
            sample_ids,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<Shape> {
        self.images.first().map(Tensor::shape)
    }

    /// Indices of all samples with the given label, in dataset order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Copy of the dataset with `f` applied to every image.
    pub fn map_images(&self, mut f: impl FnMut(usize, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            images,
            ..self.clone()
        })
    }
}
