//! Server-side output perturbations: additive noise, top-k filtering,
//! and decimal truncation. Transforms compose in declared order inside a
//! black-box target.

use ndarray::{Array1, ArrayViewMut1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Embedding;
use crate::error::{RdaError, Result};
use crate::rng::derive_rng;
use crate::rng_scope;

/// One output transform, as declared in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DefenseTransform {
    /// Zero-mean Gaussian noise with per-coordinate standard deviation `sigma`.
    ///
    /// The stream for each embedding is derived from `seed` and the
    /// embedding's content, so replaying a query reproduces its noise.
    Noise {
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Keep the `k` largest entries (by signed value, or by magnitude when
    /// `by_magnitude` is set), zero the rest. Ties break toward lower index.
    Topk {
        k: usize,
        #[serde(default)]
        by_magnitude: bool,
    },
    /// Truncate each entry toward zero at `precision` decimal digits.
    Round { precision: u32 },
}

impl DefenseTransform {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DefenseTransform::Noise { sigma, .. } => {
                if *sigma < 0.0 {
                    return Err(RdaError::config(format!("noise sigma must be >= 0, got {sigma}")));
                }
            }
            DefenseTransform::Topk { k, .. } => {
                if *k < 1 || *k > dim {
                    return Err(RdaError::config(format!(
                        "top-k k must lie in [1, {dim}], got {k}"
                    )));
                }
            }
            DefenseTransform::Round { .. } => {}
        }
        Ok(())
    }

    /// Apply in place to one embedding vector.
    pub fn apply_inplace(&self, mut v: ArrayViewMut1<'_, f64>) {
        match self {
            DefenseTransform::Noise { sigma, seed } => {
                let mut rng = content_rng(*seed, v.as_slice().unwrap_or(&v.to_vec()));
                for x in v.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x += z * sigma;
                }
            }
            DefenseTransform::Topk { k, by_magnitude } => {
                top_k_inplace(v.view_mut(), *k, *by_magnitude);
            }
            DefenseTransform::Round { precision } => {
                for x in v.iter_mut() {
                    *x = truncate_decimal(*x, *precision);
                }
            }
        }
    }

    /// Bytes contributing to a black-box target's fingerprint.
    pub fn fingerprint_bytes(&self) -> Vec<u8> {
        match self {
            DefenseTransform::Noise { sigma, seed } => {
                let mut b = b"noise".to_vec();
                b.extend_from_slice(&sigma.to_le_bytes());
                b.extend_from_slice(&seed.to_le_bytes());
                b
            }
            DefenseTransform::Topk { k, by_magnitude } => {
                let mut b = b"topk".to_vec();
                b.extend_from_slice(&(*k as u64).to_le_bytes());
                b.push(*by_magnitude as u8);
                b
            }
            DefenseTransform::Round { precision } => {
                let mut b = b"round".to_vec();
                b.extend_from_slice(&precision.to_le_bytes());
                b
            }
        }
    }

    /// Parse a repeatable CLI flag of the form `kind:param=value[,param=value]`.
    pub fn parse_flag(flag: &str) -> Result<Self> {
        let (kind, rest) = flag.split_once(':').unwrap_or((flag, ""));
        let mut params = std::collections::BTreeMap::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| RdaError::config(format!("bad defense parameter {pair:?}")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |params: &std::collections::BTreeMap<String, String>, key: &str| -> Result<f64> {
            params
                .get(key)
                .ok_or_else(|| RdaError::config(format!("defense {kind:?} needs {key}=...")))?
                .parse::<f64>()
                .map_err(|e| RdaError::config(format!("defense parameter {key}: {e}")))
        };
        match kind {
            "noise" => Ok(DefenseTransform::Noise {
                sigma: num(&params, "sigma")?,
                seed: params.get("seed").map(|s| s.parse()).transpose().map_err(|e| {
                    RdaError::config(format!("defense parameter seed: {e}"))
                })?.unwrap_or(0),
            }),
            "topk" => Ok(DefenseTransform::Topk {
                k: num(&params, "k")? as usize,
                by_magnitude: params.get("by_magnitude").map(|s| s == "true").unwrap_or(false),
            }),
            "round" => Ok(DefenseTransform::Round { precision: num(&params, "precision")? as u32 }),
            other => Err(RdaError::config(format!("unknown defense kind {other:?}"))),
        }
    }
}

/// Noise stream keyed by the defense seed and the embedding content, so
/// identical queries receive identical perturbations.
fn content_rng(seed: u64, content: &[f64]) -> rand_chacha::ChaCha12Rng {
    let mut hasher = Sha256::new();
    for v in content {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let content_key = u64::from_le_bytes(digest[..8].try_into().unwrap());
    derive_rng(seed, rng_scope!["defense_noise", content_key])
}

/// Add zero-mean Gaussian noise with standard deviation `sigma`.
pub fn add_noise<R: Rng>(e: &Embedding, sigma: f64, rng: &mut R) -> Embedding {
    let noisy: Array1<f64> = e.vector().mapv(|x| {
        let z: f64 = rng.sample(StandardNormal);
        x + z * sigma
    });
    Embedding::new(noisy).expect("finite input plus finite noise stays finite")
}

/// Keep the `k` largest entries by signed value, zero the rest.
pub fn top_k(e: &Embedding, k: usize) -> Result<Embedding> {
    let d = e.dim();
    if k < 1 || k > d {
        return Err(RdaError::data(format!("top-k k must lie in [1, {d}], got {k}")));
    }
    let mut v = e.vector().clone();
    top_k_inplace(v.view_mut(), k, false);
    Embedding::new(v)
}

fn top_k_inplace(mut v: ArrayViewMut1<'_, f64>, k: usize, by_magnitude: bool) {
    let d = v.len();
    if k >= d {
        return;
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = if by_magnitude { (v[a].abs(), v[b].abs()) } else { (v[a], v[b]) };
        vb.partial_cmp(&va).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut keep = vec![false; d];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    for (i, x) in v.iter_mut().enumerate() {
        if !keep[i] {
            *x = 0.0;
        }
    }
}

/// Truncate one value toward zero at `precision` decimal digits.
///
/// Values whose scaled form sits within one part in 1e9 of an integer are
/// snapped to it first, so decimal-representable inputs survive unchanged.
pub fn truncate_decimal(x: f64, precision: u32) -> f64 {
    let scale = 10f64.powi(precision as i32);
    let scaled = x * scale;
    let nearest = scaled.round();
    let snapped = if (scaled - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        scaled.trunc()
    };
    snapped / scale
}

/// Truncate every entry of an embedding toward zero at `precision` digits.
pub fn round_embedding(e: &Embedding, precision: u32) -> Embedding {
    Embedding::new(e.vector().mapv(|x| truncate_decimal(x, precision)))
        .expect("truncation preserves finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(arr1(v)).unwrap()
    }

    #[test]
    fn noise_sigma_zero_is_identity() {
        let e = emb(&[0.5, -1.0, 2.0]);
        let mut rng = derive_rng(1, rng_scope!["t"]);
        assert_eq!(add_noise(&e, 0.0, &mut rng).vector(), e.vector());
    }

    #[test]
    fn noise_transform_is_deterministic_per_content() {
        let t = DefenseTransform::Noise { sigma: 0.3, seed: 9 };
        let mut a = arr1(&[0.1, 0.2, 0.3]);
        let mut b = a.clone();
        t.apply_inplace(a.view_mut());
        t.apply_inplace(b.view_mut());
        assert_eq!(a, b);
        assert_ne!(a, arr1(&[0.1, 0.2, 0.3]));
    }

    #[test]
    fn noise_empirical_std_matches_sigma() {
        let sigma = 0.7;
        let mut rng = derive_rng(3, rng_scope!["noise_mc"]);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let e = emb(&[0.0]);
            let noisy = add_noise(&e, sigma, &mut rng);
            let v = noisy.vector()[0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!((std - sigma).abs() / sigma < 0.05, "std {std} vs sigma {sigma}");
    }

    #[test]
    fn top_k_keeps_largest_by_value_in_place() {
        let e = emb(&[3.0, 1.0, 2.0]);
        assert_eq!(top_k(&e, 2).unwrap().vector(), &arr1(&[3.0, 0.0, 2.0]));
    }

    #[test]
    fn top_k_with_k_equal_d_is_identity() {
        let e = emb(&[0.3, -0.1, 0.5]);
        assert_eq!(top_k(&e, 3).unwrap().vector(), e.vector());
    }

    #[test]
    fn top_k_uses_signed_value_not_magnitude() {
        let e = emb(&[-1.0, -2.0, -3.0]);
        assert_eq!(top_k(&e, 1).unwrap().vector(), &arr1(&[-1.0, 0.0, 0.0]));
    }

    #[test]
    fn top_k_magnitude_variant() {
        let mut v = arr1(&[-3.0, 1.0, 2.0]);
        DefenseTransform::Topk { k: 1, by_magnitude: true }.apply_inplace(v.view_mut());
        assert_eq!(v, arr1(&[-3.0, 0.0, 0.0]));
    }

    #[test]
    fn top_k_ties_break_toward_lower_index() {
        let e = emb(&[1.0, 1.0, 1.0]);
        assert_eq!(top_k(&e, 2).unwrap().vector(), &arr1(&[1.0, 1.0, 0.0]));
    }

    #[test]
    fn top_k_out_of_range_rejected() {
        let e = emb(&[1.0, 2.0]);
        assert!(top_k(&e, 0).is_err());
        assert!(top_k(&e, 3).is_err());
    }

    #[test]
    fn rounding_truncates_toward_zero() {
        assert_eq!(truncate_decimal(0.123456, 2), 0.12);
        assert_eq!(truncate_decimal(-0.129, 2), -0.12);
        assert_eq!(truncate_decimal(0.129, 2), 0.12);
    }

    #[test]
    fn rounding_high_precision_is_identity() {
        for v in [0.123456, -0.654321, 0.5, 0.999999] {
            assert_eq!(truncate_decimal(v, 7), v);
        }
    }

    #[test]
    fn composition_order_matters() {
        let noise = DefenseTransform::Noise { sigma: 0.5, seed: 4 };
        let round = DefenseTransform::Round { precision: 1 };
        let src = arr1(&[0.123, 0.457, -0.889, 0.2]);

        let mut a = src.clone();
        noise.apply_inplace(a.view_mut());
        round.apply_inplace(a.view_mut());

        let mut b = src.clone();
        round.apply_inplace(b.view_mut());
        noise.apply_inplace(b.view_mut());

        assert_ne!(a, b);
    }

    #[test]
    fn parse_flag_forms() {
        assert_eq!(
            DefenseTransform::parse_flag("noise:sigma=0.25").unwrap(),
            DefenseTransform::Noise { sigma: 0.25, seed: 0 }
        );
        assert_eq!(
            DefenseTransform::parse_flag("topk:k=16").unwrap(),
            DefenseTransform::Topk { k: 16, by_magnitude: false }
        );
        assert_eq!(
            DefenseTransform::parse_flag("round:precision=2").unwrap(),
            DefenseTransform::Round { precision: 2 }
        );
        assert!(DefenseTransform::parse_flag("blur:r=3").is_err());
        assert!(DefenseTransform::parse_flag("noise").is_err());
    }

    proptest! {
        #[test]
        fn top_k_is_idempotent(vals in proptest::collection::vec(-10.0f64..10.0, 2..12), k in 1usize..4) {
            let k = k.min(vals.len());
            let e = emb(&vals);
            let once = top_k(&e, k).unwrap();
            let twice = top_k(&once, k).unwrap();
            prop_assert_eq!(once.vector(), twice.vector());
        }

        #[test]
        fn rounding_is_idempotent(v in -100.0f64..100.0, p in 0u32..6) {
            let once = truncate_decimal(v, p);
            prop_assert_eq!(truncate_decimal(once, p), once);
        }
    }
}
