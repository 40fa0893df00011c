//! The black-box query boundary. Callers see only post-defense embeddings;
//! every query batch increments the ledger under its phase before returning.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use super::EncoderInterface;
use crate::data::Embedding;
use crate::defenses::DefenseTransform;
use crate::error::{RdaError, Result};
use crate::ledger::{QueryLedger, QueryPhase};

pub struct BlackBoxTarget {
    inner: Box<dyn EncoderInterface>,
    defenses: Vec<DefenseTransform>,
    ledger: Arc<QueryLedger>,
    fingerprint: [u8; 32],
}

impl BlackBoxTarget {
    pub fn new(inner: Box<dyn EncoderInterface>, defenses: Vec<DefenseTransform>) -> Result<Self> {
        Self::with_ledger(inner, defenses, Arc::new(QueryLedger::new()))
    }

    pub fn with_ledger(
        inner: Box<dyn EncoderInterface>,
        defenses: Vec<DefenseTransform>,
        ledger: Arc<QueryLedger>,
    ) -> Result<Self> {
        for d in &defenses {
            d.validate(inner.dim())?;
        }
        let fingerprint = compute_fingerprint(inner.as_ref(), &defenses);
        Ok(Self { inner, defenses, ledger, fingerprint })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.inner.input_shape()
    }

    /// Digest of the inner parameters plus the defense stack.
    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn ledger_handle(&self) -> Arc<QueryLedger> {
        self.ledger.clone()
    }

    /// Query the target with a batch of images.
    ///
    /// Returns post-defense embeddings and records `batch.len()` queries
    /// under `phase` exactly once.
    pub fn query(&self, batch: &[Array3<f64>], phase: QueryPhase) -> Result<Vec<Embedding>> {
        let matrix = self.query_matrix(batch, phase)?;
        matrix.rows().into_iter().map(|r| Embedding::new(r.to_owned())).collect()
    }

    /// Bulk form of `query` returning a (batch, dim) matrix.
    pub fn query_matrix(&self, batch: &[Array3<f64>], phase: QueryPhase) -> Result<Array2<f64>> {
        if batch.is_empty() {
            return Err(RdaError::data("empty query batch"));
        }
        let mut out = self.inner.encode_batch(batch)?;
        for defense in &self.defenses {
            for row in out.rows_mut() {
                defense.apply_inplace(row);
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(RdaError::numeric("target produced non-finite embeddings"));
        }
        self.ledger.record(phase, batch.len() as u64);
        Ok(out)
    }
}

fn compute_fingerprint(inner: &dyn EncoderInterface, defenses: &[DefenseTransform]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"blackbox_v1");
    hasher.update(inner.fingerprint());
    hasher.update((defenses.len() as u64).to_le_bytes());
    for d in defenses {
        let bytes = d.fingerprint_bytes();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::RandomFeatureEncoder;
    use crate::rng::derive_rng;
    use crate::rng_scope;
    use rand::Rng;

    fn images(n: usize, shape: (usize, usize, usize), seed: u64) -> Vec<Array3<f64>> {
        (0..n)
            .map(|i| {
                let mut rng = derive_rng(seed, rng_scope!["bb_img", i]);
                Array3::from_shape_fn(shape, |_| rng.random::<f64>())
            })
            .collect()
    }

    fn target(defenses: Vec<DefenseTransform>) -> BlackBoxTarget {
        BlackBoxTarget::new(Box::new(RandomFeatureEncoder::new(1, 8, (4, 4, 1))), defenses).unwrap()
    }

    #[test]
    fn undefended_query_matches_direct_tanh_projection() {
        let enc = RandomFeatureEncoder::new(1, 8, (4, 4, 1));
        let bb = target(vec![]);
        let imgs = images(3, (4, 4, 1), 2);
        let out = bb.query(&imgs, QueryPhase::Training).unwrap();
        for (img, emb) in imgs.iter().zip(&out) {
            let expected = enc.pre_activation(img).mapv(f64::tanh);
            for j in 0..8 {
                assert!((emb.vector()[j] - expected[j]).abs() < 1e-15);
            }
        }
        assert_eq!(bb.ledger().count(QueryPhase::Training), 3);
    }

    #[test]
    fn rounding_defense_limits_decimal_digits() {
        let bb = target(vec![DefenseTransform::Round { precision: 2 }]);
        let imgs = images(2, (4, 4, 1), 3);
        let out = bb.query(&imgs, QueryPhase::Training).unwrap();
        for emb in out {
            for &v in emb.vector() {
                let scaled = v * 100.0;
                assert!((scaled - scaled.round()).abs() < 1e-9, "entry {v} has >2 digits");
            }
        }
    }

    #[test]
    fn ledger_counts_batch_sizes_per_phase() {
        let bb = target(vec![]);
        let imgs = images(100, (4, 4, 1), 4);
        bb.query(&imgs, QueryPhase::Training).unwrap();
        assert_eq!(bb.ledger().count(QueryPhase::Training), 100);
        bb.query(&imgs[..25], QueryPhase::PrototypeGeneration).unwrap();
        assert_eq!(bb.ledger().count(QueryPhase::PrototypeGeneration), 25);
        assert_eq!(bb.ledger().total(), 125);
    }

    #[test]
    fn empty_batch_and_shape_mismatch_rejected() {
        let bb = target(vec![]);
        assert!(bb.query(&[], QueryPhase::Training).is_err());
        let wrong = images(1, (3, 3, 1), 5);
        assert!(bb.query(&wrong, QueryPhase::Training).is_err());
    }

    #[test]
    fn defense_stack_provably_alters_output() {
        let clean = target(vec![]);
        let defended = target(vec![DefenseTransform::Noise { sigma: 0.5, seed: 1 }]);
        let imgs = images(1, (4, 4, 1), 6);
        let a = clean.query(&imgs, QueryPhase::Training).unwrap();
        let b = defended.query(&imgs, QueryPhase::Training).unwrap();
        assert_ne!(a[0].vector(), b[0].vector());
        assert_ne!(clean.fingerprint(), defended.fingerprint());
    }

    #[test]
    fn defense_order_is_part_of_the_fingerprint() {
        let ab = target(vec![
            DefenseTransform::Noise { sigma: 0.1, seed: 1 },
            DefenseTransform::Round { precision: 2 },
        ]);
        let ba = target(vec![
            DefenseTransform::Round { precision: 2 },
            DefenseTransform::Noise { sigma: 0.1, seed: 1 },
        ]);
        assert_ne!(ab.fingerprint(), ba.fingerprint());
    }
}
