//! Trainable convolutional encoder with hand-rolled backprop.
//!
//! Architecture: a stack of 3x3 same-padding conv blocks (conv + ReLU +
//! 2x2 max pool with ceil semantics), global average pooling, and a linear
//! head. Parameters live in one flat vector so the optimizer, checkpoints,
//! and fingerprints all see a single contiguous array.
//!
//! Internally a feature map is an `Array2<f64>` of shape
//! `[channels, batch * height * width]` with column index
//! `b * (h * w) + y * w + x`; convolutions are im2col + one dgemm per block.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{check_batch_shapes, EncoderInterface};
use crate::error::{RdaError, Result};
use crate::rng::derive_rng;
use crate::rng_scope;

/// Shape of the network: input image, per-block output channels, head width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvDescriptor {
    pub input: (usize, usize, usize),
    pub channels: Vec<usize>,
    pub dim: usize,
}

impl ConvDescriptor {
    /// Desk-scale default: four blocks at 16/32/64/64 channels, head to 64.
    pub fn desk_default(input: (usize, usize, usize)) -> Self {
        Self { input, channels: vec![16, 32, 64, 64], dim: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(RdaError::config("conv input shape must be nonzero"));
        }
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(RdaError::config("conv channels must be nonempty and nonzero"));
        }
        if self.dim == 0 {
            return Err(RdaError::config("conv head dim must be nonzero"));
        }
        Ok(())
    }

    /// (h, w) of each block's conv stage and pooled stage.
    fn stage_dims(&self) -> Vec<(usize, usize, usize, usize)> {
        let (mut h, mut w, _) = self.input;
        let mut dims = Vec::with_capacity(self.channels.len());
        for _ in &self.channels {
            let (ph, pw) = (h.div_ceil(2), w.div_ceil(2));
            dims.push((h, w, ph, pw));
            h = ph;
            w = pw;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        let mut c_in = self.input.2;
        for &c_out in &self.channels {
            count += c_out * c_in * 9 + c_out;
            c_in = c_out;
        }
        count + self.dim * c_in + self.dim
    }

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut b = b"conv_v1".to_vec();
        for v in [self.input.0, self.input.1, self.input.2] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&(self.channels.len() as u16).to_le_bytes());
        for &c in &self.channels {
            b.extend_from_slice(&(c as u32).to_le_bytes());
        }
        b.extend_from_slice(&(self.dim as u32).to_le_bytes());
        b
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    w: usize,
    w_len: usize,
    b: usize,
    b_len: usize,
    c_in: usize,
    c_out: usize,
}

/// Activations recorded during a forward pass, consumed by `backward`.
pub struct ForwardTape {
    batch: usize,
    cols: Vec<Array2<f64>>,
    postrelu: Vec<Array2<f64>>,
    argmax: Vec<Vec<u32>>,
    gap_out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    descriptor: ConvDescriptor,
    params: Array1<f64>,
    blocks: Vec<BlockOffsets>,
    head_w: (usize, usize),
    head_b: (usize, usize),
}

impl ConvEncoder {
    /// Seeded He initialization; biases start at zero.
    pub fn new(descriptor: ConvDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let mut enc = Self::zeroed(descriptor)?;
        for (i, block) in enc.blocks.clone().into_iter().enumerate() {
            let mut rng = derive_rng(seed, rng_scope!["conv_init", "block", i]);
            let std = (2.0 / (block.c_in * 9) as f64).sqrt();
            for p in enc.params.slice_mut(ndarray::s![block.w..block.w + block.w_len]).iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *p = z * std;
            }
        }
        let mut rng = derive_rng(seed, rng_scope!["conv_init", "head"]);
        let c_last = *enc.descriptor.channels.last().unwrap();
        let std = 1.0 / (c_last as f64).sqrt();
        let (off, len) = enc.head_w;
        for p in enc.params.slice_mut(ndarray::s![off..off + len]).iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *p = z * std;
        }
        Ok(enc)
    }

    /// Build from an existing flat parameter vector.
    pub fn from_params(descriptor: ConvDescriptor, params: Array1<f64>) -> Result<Self> {
        descriptor.validate()?;
        if params.len() != descriptor.param_count() {
            return Err(RdaError::data(format!(
                "parameter vector has {} entries, descriptor expects {}",
                params.len(),
                descriptor.param_count()
            )));
        }
        let mut enc = Self::zeroed(descriptor)?;
        enc.params = params;
        Ok(enc)
    }

    fn zeroed(descriptor: ConvDescriptor) -> Result<Self> {
        descriptor.validate()?;
        let mut blocks = Vec::with_capacity(descriptor.channels.len());
        let mut offset = 0;
        let mut c_in = descriptor.input.2;
        for &c_out in &descriptor.channels {
            let w_len = c_out * c_in * 9;
            blocks.push(BlockOffsets { w: offset, w_len, b: offset + w_len, b_len: c_out, c_in, c_out });
            offset += w_len + c_out;
            c_in = c_out;
        }
        let head_w = (offset, descriptor.dim * c_in);
        let head_b = (offset + head_w.1, descriptor.dim);
        let total = head_b.0 + head_b.1;
        debug_assert_eq!(total, descriptor.param_count());
        Ok(Self { descriptor, params: Array1::zeros(total), blocks, head_w, head_b })
    }

    pub fn descriptor(&self) -> &ConvDescriptor {
        &self.descriptor
    }

    pub fn params(&self) -> &Array1<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Array1<f64> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn block_w(&self, i: usize) -> ArrayView2<'_, f64> {
        let b = self.blocks[i];
        ArrayView2::from_shape(
            (b.c_out, b.c_in * 9),
            &self.params.as_slice().unwrap()[b.w..b.w + b.w_len],
        )
        .unwrap()
    }

    /// Pack HWC images into the internal [C, B*H*W] layout.
    fn pack(&self, images: &[Array3<f64>]) -> Array2<f64> {
        let (h, w, c) = self.descriptor.input;
        let batch = images.len();
        let s = h * w;
        let mut feat = Array2::zeros((c, batch * s));
        for (b, img) in images.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        feat[[ch, b * s + y * w + x]] = img[[y, x, ch]];
                    }
                }
            }
        }
        feat
    }

    /// Forward pass; with `tape` set, records activations for `backward`.
    fn run_forward(&self, images: &[Array3<f64>], want_tape: bool) -> Result<(Array2<f64>, Option<ForwardTape>)> {
        check_batch_shapes(images, self.descriptor.input)?;
        let batch = images.len();
        let dims = self.descriptor.stage_dims();
        let mut feat = self.pack(images);
        let (mut h, mut w) = (self.descriptor.input.0, self.descriptor.input.1);

        let mut cols_tape = Vec::new();
        let mut postrelu_tape = Vec::new();
        let mut argmax_tape = Vec::new();

        for (i, block) in self.blocks.iter().enumerate() {
            let cols = im2col(&feat, block.c_in, batch, h, w);
            let mut conv = self.block_w(i).dot(&cols);
            let bias = &self.params.as_slice().unwrap()[block.b..block.b + block.b_len];
            for (co, mut row) in conv.axis_iter_mut(Axis(0)).enumerate() {
                let b = bias[co];
                row.mapv_inplace(|v| (v + b).max(0.0));
            }
            let (ph, pw) = (dims[i].2, dims[i].3);
            let (pooled, argmax) = maxpool2(&conv, batch, h, w, ph, pw);
            if want_tape {
                cols_tape.push(cols);
                postrelu_tape.push(conv);
                argmax_tape.push(argmax);
            }
            feat = pooled;
            h = ph;
            w = pw;
        }

        // Global average pool to [B, C_last].
        let c_last = *self.descriptor.channels.last().unwrap();
        let s = h * w;
        let mut gap = Array2::zeros((batch, c_last));
        for c in 0..c_last {
            for b in 0..batch {
                let mut acc = 0.0;
                for p in 0..s {
                    acc += feat[[c, b * s + p]];
                }
                gap[[b, c]] = acc / s as f64;
            }
        }

        let w_h = ArrayView2::from_shape(
            (self.descriptor.dim, c_last),
            &self.params.as_slice().unwrap()[self.head_w.0..self.head_w.0 + self.head_w.1],
        )
        .unwrap();
        let b_h = &self.params.as_slice().unwrap()[self.head_b.0..self.head_b.0 + self.head_b.1];
        let mut emb = gap.dot(&w_h.t());
        for mut row in emb.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v += b_h[j];
            }
        }

        let tape = want_tape.then(|| ForwardTape {
            batch,
            cols: cols_tape,
            postrelu: postrelu_tape,
            argmax: argmax_tape,
            gap_out: gap,
        });
        Ok((emb, tape))
    }

    pub fn forward(&self, images: &[Array3<f64>]) -> Result<Array2<f64>> {
        Ok(self.run_forward(images, false)?.0)
    }

    pub fn forward_tape(&self, images: &[Array3<f64>]) -> Result<(Array2<f64>, ForwardTape)> {
        let (emb, tape) = self.run_forward(images, true)?;
        Ok((emb, tape.expect("tape requested")))
    }

    /// Backpropagate `grad_emb` (shape [B, dim]) to a flat parameter gradient.
    pub fn backward(&self, tape: &ForwardTape, grad_emb: &Array2<f64>) -> Result<Array1<f64>> {
        if grad_emb.shape() != [tape.batch, self.descriptor.dim] {
            return Err(RdaError::data(format!(
                "grad shape {:?} does not match (batch={}, dim={})",
                grad_emb.shape(),
                tape.batch,
                self.descriptor.dim
            )));
        }
        let batch = tape.batch;
        let dims = self.descriptor.stage_dims();
        let c_last = *self.descriptor.channels.last().unwrap();
        let mut grad = Array1::zeros(self.params.len());

        // Head.
        let w_h = ArrayView2::from_shape(
            (self.descriptor.dim, c_last),
            &self.params.as_slice().unwrap()[self.head_w.0..self.head_w.0 + self.head_w.1],
        )
        .unwrap();
        let d_wh = grad_emb.t().dot(&tape.gap_out);
        let d_bh = grad_emb.sum_axis(Axis(0));
        grad.slice_mut(ndarray::s![self.head_w.0..self.head_w.0 + self.head_w.1])
            .assign(&Array1::from_iter(d_wh.iter().copied()));
        grad.slice_mut(ndarray::s![self.head_b.0..self.head_b.0 + self.head_b.1]).assign(&d_bh);
        let d_gap = grad_emb.dot(&w_h);

        // GAP: spread each sample's gradient uniformly over the last stage.
        let (lh, lw) = (dims.last().unwrap().2, dims.last().unwrap().3);
        let s_last = lh * lw;
        let mut d_feat = Array2::zeros((c_last, batch * s_last));
        for c in 0..c_last {
            for b in 0..batch {
                let g = d_gap[[b, c]] / s_last as f64;
                for p in 0..s_last {
                    d_feat[[c, b * s_last + p]] = g;
                }
            }
        }

        for i in (0..self.blocks.len()).rev() {
            let block = self.blocks[i];
            let (h, w_, ph, pw) = dims[i];
            let conv_cols = batch * h * w_;

            // Un-pool into the conv-stage grid.
            let mut d_conv = Array2::zeros((block.c_out, conv_cols));
            let argmax = &tape.argmax[i];
            let s_pool = ph * pw;
            for c in 0..block.c_out {
                for col in 0..batch * s_pool {
                    let src = argmax[c * batch * s_pool + col] as usize;
                    d_conv[[c, src]] += d_feat[[c, col]];
                }
            }

            // ReLU mask from the recorded activations.
            let post = &tape.postrelu[i];
            for c in 0..block.c_out {
                for col in 0..conv_cols {
                    if post[[c, col]] <= 0.0 {
                        d_conv[[c, col]] = 0.0;
                    }
                }
            }

            // Conv weight/bias gradients.
            let cols = &tape.cols[i];
            let d_w = d_conv.dot(&cols.t());
            let d_b = d_conv.sum_axis(Axis(1));
            grad.slice_mut(ndarray::s![block.w..block.w + block.w_len])
                .assign(&Array1::from_iter(d_w.iter().copied()));
            grad.slice_mut(ndarray::s![block.b..block.b + block.b_len]).assign(&d_b);

            // Propagate to the previous stage unless this is the first block.
            if i > 0 {
                let d_cols = self.block_w(i).t().dot(&d_conv);
                d_feat = col2im(&d_cols, block.c_in, batch, h, w_);
            }
        }

        Ok(grad)
    }
}

impl EncoderInterface for ConvEncoder {
    fn dim(&self) -> usize {
        self.descriptor.dim
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.descriptor.input
    }

    fn encode_batch(&self, images: &[Array3<f64>]) -> Result<Array2<f64>> {
        self.forward(images)
    }

    fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.descriptor.canonical_bytes());
        for v in self.params.iter() {
            hasher.update((*v as f32).to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// 3x3 same-padding patch extraction into a [c_in*9, batch*h*w] matrix.
fn im2col(feat: &Array2<f64>, c_in: usize, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let s = h * w;
    let mut cols = Array2::zeros((c_in * 9, batch * s));
    for c in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            cols[[row, b * s + y * w + x]] =
                                feat[[c, b * s + sy as usize * w + sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter column gradients back onto the feature grid.
fn col2im(d_cols: &Array2<f64>, c_in: usize, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let s = h * w;
    let mut d_feat = Array2::zeros((c_in, batch * s));
    for c in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            d_feat[[c, b * s + sy as usize * w + sx as usize]] +=
                                d_cols[[row, b * s + y * w + x]];
                        }
                    }
                }
            }
        }
    }
    d_feat
}

/// 2x2 max pool with stride 2 and ceil semantics; ties keep the first cell
/// in scan order. Returns the pooled map and per-cell argmax column indices.
fn maxpool2(
    conv: &Array2<f64>,
    batch: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
) -> (Array2<f64>, Vec<u32>) {
    let c_out = conv.shape()[0];
    let s = h * w;
    let s_pool = ph * pw;
    let mut pooled = Array2::zeros((c_out, batch * s_pool));
    let mut argmax = vec![0u32; c_out * batch * s_pool];
    for c in 0..c_out {
        for b in 0..batch {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2usize {
                        let y = py * 2 + dy;
                        if y >= h {
                            break;
                        }
                        for dx in 0..2usize {
                            let x = px * 2 + dx;
                            if x >= w {
                                break;
                            }
                            let idx = b * s + y * w + x;
                            let v = conv[[c, idx]];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let out_col = b * s_pool + py * pw + px;
                    pooled[[c, out_col]] = best;
                    argmax[c * batch * s_pool + out_col] = best_idx as u32;
                }
            }
        }
    }
    (pooled, argmax)
}
