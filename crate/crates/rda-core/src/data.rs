//! Domain types for images, datasets, embeddings, and prototypes.

use ndarray::{Array1, Array3};

use crate::error::{RdaError, Result};

/// One raw image the attacker owns.
///
/// The label travels with the sample but sits behind an evaluation-only
/// accessor: attack code paths never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    key: u64,
    pixels: Array3<f64>,
    label: Option<usize>,
}

impl ImageSample {
    /// Build a sample, validating the pixel range invariant.
    pub fn new(key: u64, pixels: Array3<f64>, label: Option<usize>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(RdaError::data(format!("sample {key}: empty pixel array")));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(RdaError::data(format!("sample {key}: pixel outside [0,1]")));
        }
        Ok(Self { key, pixels, label })
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    /// (H, W, C) shape of the image.
    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.pixels.shape();
        (s[0], s[1], s[2])
    }

    /// Evaluation-only label access. Attack engines must not call this;
    /// the no-label-leakage property test holds them to it.
    pub fn label_for_eval(&self) -> Option<usize> {
        self.label
    }

    /// Replace the label (used when constructing evaluation splits).
    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }
}

/// Ordered collection of keyed samples; the only data that touches the target.
#[derive(Debug, Clone)]
pub struct SurrogateDataset {
    name: String,
    samples: Vec<ImageSample>,
}

impl SurrogateDataset {
    pub fn new(name: impl Into<String>, samples: Vec<ImageSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(RdaError::data("dataset must contain at least one sample"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if !seen.insert(s.key()) {
                return Err(RdaError::data(format!("duplicate sample key {}", s.key())));
            }
        }
        let shape = samples[0].shape();
        if samples.iter().any(|s| s.shape() != shape) {
            return Err(RdaError::data("all samples must share one image shape"));
        }
        Ok(Self { name: name.into(), samples })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.samples[0].shape()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ImageSample> {
        self.samples.iter()
    }
}

/// A single encoder output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Array1<f64>,
}

impl Embedding {
    pub fn new(vector: Array1<f64>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(RdaError::numeric("embedding contains non-finite entries"));
        }
        Ok(Self { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &Array1<f64> {
        &self.vector
    }

    pub fn into_vector(self) -> Array1<f64> {
        self.vector
    }
}

/// Per-sample aggregated optimization objective with provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub key: u64,
    pub vector: Array1<f64>,
    pub n_patches: u16,
    pub augmentation_seed: u64,
    pub encoder_fingerprint: [u8; 32],
}

impl Prototype {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn gray(key: u64, value: f64) -> ImageSample {
        ImageSample::new(key, Array3::from_elem((4, 4, 1), value), None).unwrap()
    }

    #[test]
    fn pixel_range_is_enforced() {
        assert!(ImageSample::new(0, Array3::from_elem((2, 2, 1), 1.5), None).is_err());
        assert!(ImageSample::new(0, Array3::from_elem((2, 2, 1), -0.1), None).is_err());
        assert!(ImageSample::new(0, Array3::from_elem((2, 2, 1), 0.5), None).is_ok());
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = SurrogateDataset::new("d", vec![gray(1, 0.2), gray(1, 0.4)]);
        assert!(err.is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(SurrogateDataset::new("d", vec![]).is_err());
    }

    #[test]
    fn non_finite_embedding_is_rejected() {
        assert!(Embedding::new(ndarray::arr1(&[1.0, f64::NAN])).is_err());
    }
}
