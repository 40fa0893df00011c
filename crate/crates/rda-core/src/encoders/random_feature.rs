//! Fixed random-projection encoder: linear map of flattened pixels followed
//! by tanh. Fully determined by (seed, input shape, d), which makes it the
//! oracle-exact stand-in target for prototype and query tests.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{check_batch_shapes, EncoderInterface};
use crate::error::Result;
use crate::rng::derive_rng;
use crate::rng_scope;

#[derive(Debug, Clone)]
pub struct RandomFeatureEncoder {
    seed: u64,
    dim: usize,
    input_shape: (usize, usize, usize),
    /// dim x (H*W*C), entries N(0, 1/in_dim) so pre-activations stay O(1).
    projection: Array2<f64>,
}

impl RandomFeatureEncoder {
    pub fn new(seed: u64, dim: usize, input_shape: (usize, usize, usize)) -> Self {
        let (h, w, c) = input_shape;
        let in_dim = h * w * c;
        let mut rng = derive_rng(seed, rng_scope!["random_feature", dim, in_dim]);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let projection = Array2::from_shape_fn((dim, in_dim), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        Self { seed, dim, input_shape, projection }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    /// Row-major (H, W, C) flattening; order matters for oracle recomputation.
    pub fn flatten(image: &Array3<f64>) -> Array1<f64> {
        Array1::from_iter(image.iter().copied())
    }

    /// The linear stage before tanh, exposed for the linearity test.
    pub fn pre_activation(&self, image: &Array3<f64>) -> Array1<f64> {
        self.projection.dot(&Self::flatten(image))
    }
}

impl EncoderInterface for RandomFeatureEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    fn encode_batch(&self, images: &[Array3<f64>]) -> Result<Array2<f64>> {
        check_batch_shapes(images, self.input_shape)?;
        let mut out = Array2::zeros((images.len(), self.dim));
        for (i, img) in images.iter().enumerate() {
            let z = self.pre_activation(img).mapv(f64::tanh);
            out.row_mut(i).assign(&z);
        }
        Ok(out)
    }

    fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"random_feature_v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for v in [self.input_shape.0, self.input_shape.1, self.input_shape.2] {
            hasher.update((v as u64).to_le_bytes());
        }
        for v in self.projection.iter() {
            hasher.update((*v as f32).to_le_bytes());
        }
        hasher.finalize().into()
    }
}
