//! Seeded augmentation-patch generation.
//!
//! Patches feed two consumers: prototype construction (`Proto` role, drawn
//! once per sample) and surrogate training (`Train` role, redrawn every
//! epoch). Patch `j` of a sample is a pure function of
//! (seed, role, sample key, j, epoch); the `Proto` role ignores the epoch.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{RdaError, Result};
use crate::rng::derive_rng;
use crate::rng_scope;

/// Crop/flip/jitter/grayscale policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Crop area as a fraction of the source image area, sampled in [low, high].
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    /// Strength applied to brightness, contrast, and saturation jitter.
    pub jitter_strength: f64,
    pub grayscale_prob: f64,
    /// (H, W) of emitted patches.
    pub output_size: (usize, usize),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            crop_scale: (0.2, 1.0),
            flip_prob: 0.5,
            jitter_strength: 0.4,
            grayscale_prob: 0.2,
            output_size: (16, 16),
        }
    }
}

impl AugmentPolicy {
    /// Identity policy: crop the full frame, no flip/jitter/grayscale.
    pub fn identity(output_size: (usize, usize)) -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_strength: 0.0,
            grayscale_prob: 0.0,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (low, high) = self.crop_scale;
        if !(low > 0.0 && low <= high && high <= 1.0) {
            return Err(RdaError::config(format!(
                "crop_scale must satisfy 0 < low <= high <= 1, got ({low}, {high})"
            )));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("grayscale_prob", self.grayscale_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(RdaError::config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        if self.jitter_strength < 0.0 || self.jitter_strength >= 1.0 {
            return Err(RdaError::config(format!(
                "jitter_strength must lie in [0,1), got {}",
                self.jitter_strength
            )));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(RdaError::config("output_size must be nonzero"));
        }
        Ok(())
    }
}

/// Which pipeline stage a patch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchRole {
    Proto,
    Train,
}

impl PatchRole {
    fn tag(&self) -> &'static str {
        match self {
            PatchRole::Proto => "proto",
            PatchRole::Train => "train",
        }
    }
}

/// Generate `count` augmentation patches for one image.
///
/// With the `Proto` role and `count == 1`, the single patch is the resized
/// original: a one-patch prototype should equal the embedding of the
/// sample's origin version.
pub fn make_patches(
    image: &ImageSample,
    count: usize,
    role: PatchRole,
    epoch: usize,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<Vec<Array3<f64>>> {
    if count < 1 {
        return Err(RdaError::data("patch count must be >= 1"));
    }
    policy.validate()?;
    let (h, w, _c) = image.shape();
    if policy.crop_scale.0 < 1.0 && (h < 2 || w < 2) {
        return Err(RdaError::data(format!(
            "image {} ({h}x{w}) is smaller than the minimum crop",
            image.key()
        )));
    }

    if role == PatchRole::Proto && count == 1 {
        return Ok(vec![resize_bilinear(&image.pixels().view(), policy.output_size)]);
    }

    (0..count)
        .map(|j| {
            let mut rng = match role {
                PatchRole::Proto => {
                    derive_rng(seed, rng_scope!["augment", role.tag(), image.key(), j])
                }
                PatchRole::Train => {
                    derive_rng(seed, rng_scope!["augment", role.tag(), image.key(), j, epoch])
                }
            };
            Ok(augment_once(image.pixels(), policy, &mut rng))
        })
        .collect()
}

fn augment_once<R: Rng>(pixels: &Array3<f64>, policy: &AugmentPolicy, rng: &mut R) -> Array3<f64> {
    let (h, w, c) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);

    // Draw order is fixed so the stream layout never depends on policy values.
    let area: f64 = rng.random_range(policy.crop_scale.0..=policy.crop_scale.1);
    let top_frac: f64 = rng.random();
    let left_frac: f64 = rng.random();
    let flip_coin: f64 = rng.random();
    let b_factor: f64 = rng.random_range(-1.0..=1.0);
    let c_factor: f64 = rng.random_range(-1.0..=1.0);
    let s_factor: f64 = rng.random_range(-1.0..=1.0);
    let gray_coin: f64 = rng.random();

    // Random resized crop, aspect-preserving.
    let side = area.sqrt();
    let crop_h = ((side * h as f64).round() as usize).clamp(1, h);
    let crop_w = ((side * w as f64).round() as usize).clamp(1, w);
    let top = (top_frac * (h - crop_h + 1) as f64).floor() as usize;
    let left = (left_frac * (w - crop_w + 1) as f64).floor() as usize;
    let top = top.min(h - crop_h);
    let left = left.min(w - crop_w);
    let crop = pixels.slice(ndarray::s![top..top + crop_h, left..left + crop_w, ..]);
    let mut out = resize_bilinear(&crop, policy.output_size);

    if flip_coin < policy.flip_prob {
        out = flip_horizontal(&out);
    }

    let s = policy.jitter_strength;
    if s > 0.0 {
        apply_brightness(&mut out, 1.0 + b_factor * s);
        apply_contrast(&mut out, 1.0 + c_factor * s);
        apply_saturation(&mut out, 1.0 + s_factor * s, c);
    }

    if gray_coin < policy.grayscale_prob {
        to_grayscale(&mut out, c);
    }

    out
}

/// Bilinear resize; an equal-size request returns an exact copy.
pub fn resize_bilinear(src: &ndarray::ArrayView3<f64>, size: (usize, usize)) -> Array3<f64> {
    let (sh, sw, c) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    let (dh, dw) = size;
    if (sh, sw) == (dh, dw) {
        return src.to_owned();
    }
    let mut out = Array3::zeros((dh, dw, c));
    let scale_y = sh as f64 / dh as f64;
    let scale_x = sw as f64 / dw as f64;
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let v = src[[y0, x0, ch]] * (1.0 - wy) * (1.0 - wx)
                    + src[[y0, x1, ch]] * (1.0 - wy) * wx
                    + src[[y1, x0, ch]] * wy * (1.0 - wx)
                    + src[[y1, x1, ch]] * wy * wx;
                out[[y, x, ch]] = v;
            }
        }
    }
    out
}

fn flip_horizontal(img: &Array3<f64>) -> Array3<f64> {
    let w = img.shape()[1];
    let mut out = img.clone();
    for y in 0..img.shape()[0] {
        for x in 0..w {
            for ch in 0..img.shape()[2] {
                out[[y, x, ch]] = img[[y, w - 1 - x, ch]];
            }
        }
    }
    out
}

fn apply_brightness(img: &mut Array3<f64>, factor: f64) {
    img.mapv_inplace(|v| (v * factor).clamp(0.0, 1.0));
}

fn apply_contrast(img: &mut Array3<f64>, factor: f64) {
    let mean = img.mean().unwrap_or(0.5);
    img.mapv_inplace(|v| ((v - mean) * factor + mean).clamp(0.0, 1.0));
}

fn luminance_at(img: &Array3<f64>, y: usize, x: usize, c: usize) -> f64 {
    if c == 3 {
        0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]]
    } else {
        (0..c).map(|ch| img[[y, x, ch]]).sum::<f64>() / c as f64
    }
}

fn apply_saturation(img: &mut Array3<f64>, factor: f64, c: usize) {
    if c < 2 {
        return;
    }
    for y in 0..img.shape()[0] {
        for x in 0..img.shape()[1] {
            let lum = luminance_at(img, y, x, c);
            for ch in 0..c {
                let v = lum + (img[[y, x, ch]] - lum) * factor;
                img[[y, x, ch]] = v.clamp(0.0, 1.0);
            }
        }
    }
}

fn to_grayscale(img: &mut Array3<f64>, c: usize) {
    if c < 2 {
        return;
    }
    for y in 0..img.shape()[0] {
        for x in 0..img.shape()[1] {
            let lum = luminance_at(img, y, x, c);
            for ch in 0..c {
                img[[y, x, ch]] = lum;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn sample(key: u64, h: usize, w: usize) -> ImageSample {
        let mut rng = derive_rng(99, rng_scope!["test_img", key]);
        let pixels = Array3::from_shape_fn((h, w, 3), |_| rng.random::<f64>());
        ImageSample::new(key, pixels, None).unwrap()
    }

    #[test]
    fn identity_policy_returns_resized_original() {
        let img = sample(1, 8, 8);
        let policy = AugmentPolicy::identity((8, 8));
        let patches = make_patches(&img, 4, PatchRole::Train, 0, &policy, 5).unwrap();
        for p in patches {
            assert_eq!(&p, img.pixels());
        }
    }

    #[test]
    fn patches_are_deterministic() {
        let img = sample(2, 10, 10);
        let policy = AugmentPolicy { output_size: (8, 8), ..AugmentPolicy::default() };
        let a = make_patches(&img, 10, PatchRole::Proto, 0, &policy, 7).unwrap();
        let b = make_patches(&img, 10, PatchRole::Proto, 0, &policy, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn proto_role_ignores_epoch_train_role_does_not() {
        let img = sample(3, 10, 10);
        let policy = AugmentPolicy { output_size: (8, 8), ..AugmentPolicy::default() };
        let p0 = make_patches(&img, 3, PatchRole::Proto, 0, &policy, 7).unwrap();
        let p5 = make_patches(&img, 3, PatchRole::Proto, 5, &policy, 7).unwrap();
        assert_eq!(p0, p5);
        let t0 = make_patches(&img, 3, PatchRole::Train, 0, &policy, 7).unwrap();
        let t5 = make_patches(&img, 3, PatchRole::Train, 5, &policy, 7).unwrap();
        assert_ne!(t0, t5);
    }

    #[test]
    fn proto_single_patch_is_the_identity_transform() {
        let img = sample(4, 8, 8);
        let policy = AugmentPolicy { output_size: (8, 8), ..AugmentPolicy::default() };
        let patches = make_patches(&img, 1, PatchRole::Proto, 0, &policy, 7).unwrap();
        assert_eq!(&patches[0], img.pixels());
        // A single training patch is still augmented.
        let train = make_patches(&img, 1, PatchRole::Train, 0, &policy, 7).unwrap();
        assert_ne!(&train[0], img.pixels());
    }

    #[test]
    fn zero_count_rejected() {
        let img = sample(5, 8, 8);
        assert!(make_patches(&img, 0, PatchRole::Proto, 0, &AugmentPolicy::default(), 7).is_err());
    }

    #[test]
    fn tiny_image_rejected_when_cropping() {
        let img = ImageSample::new(6, Array3::from_elem((1, 1, 3), 0.5), None).unwrap();
        let policy = AugmentPolicy { output_size: (4, 4), ..AugmentPolicy::default() };
        assert!(make_patches(&img, 2, PatchRole::Train, 0, &policy, 7).is_err());
        // ... but the identity policy accepts it.
        let id = AugmentPolicy::identity((4, 4));
        assert!(make_patches(&img, 2, PatchRole::Train, 0, &id, 7).is_ok());
    }

    #[test]
    fn distinct_patch_indices_differ() {
        let img = sample(7, 12, 12);
        let policy = AugmentPolicy { output_size: (8, 8), ..AugmentPolicy::default() };
        let patches = make_patches(&img, 2, PatchRole::Proto, 0, &policy, 7).unwrap();
        assert_ne!(patches[0], patches[1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn emitted_pixels_stay_in_unit_range(
            seed in 0u64..1000,
            key in 0u64..50,
            low in 0.05f64..1.0,
            span in 0.0f64..0.9,
            flip in 0.0f64..1.0,
            jitter in 0.0f64..0.99,
            gray in 0.0f64..1.0,
        ) {
            let img = sample(key, 9, 11);
            let high = (low + span).min(1.0);
            let policy = AugmentPolicy {
                crop_scale: (low, high),
                flip_prob: flip,
                jitter_strength: jitter,
                grayscale_prob: gray,
                output_size: (7, 7),
            };
            let patches = make_patches(&img, 3, PatchRole::Train, 1, &policy, seed).unwrap();
            for p in patches {
                prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
