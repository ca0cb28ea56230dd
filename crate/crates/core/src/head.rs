//! Convolutional detection head: `B` objectness channels followed by `7 * B`
//! box-regression channels, "same" spatial size via zero padding.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{structural, validation, Error, Result, Stage};
use crate::feature::FeatureMap;
use crate::math::sigmoid;
use crate::tensor::Tensor3;

/// Number of regression parameters per anchor: dx, dy, dz, dl, dw, dh, dyaw.
pub const BOX_PARAMS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    in_channels: usize,
    anchors: usize,
    kernel: usize,
    /// `[out][in][ky][kx]`, `out = 8 * anchors`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl HeadWeights {
    pub fn zeros(in_channels: usize, anchors: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(validation("head kernel size must be odd"));
        }
        if in_channels == 0 || anchors == 0 {
            return Err(validation("head needs at least one input channel and one anchor"));
        }
        let out = (1 + BOX_PARAMS) * anchors;
        Ok(Self {
            in_channels,
            anchors,
            kernel,
            weights: vec![0.0; out * in_channels * kernel * kernel],
            bias: vec![0.0; out],
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn out_channels(&self) -> usize {
        (1 + BOX_PARAMS) * self.anchors
    }

    /// Output channel carrying the objectness logit of `anchor`.
    pub fn score_channel(&self, anchor: usize) -> usize {
        anchor
    }

    /// Output channel carrying regression parameter `param` of `anchor`.
    pub fn reg_channel(&self, anchor: usize, param: usize) -> usize {
        self.anchors + anchor * BOX_PARAMS + param
    }

    #[inline]
    fn widx(&self, out: usize, inp: usize, ky: usize, kx: usize) -> usize {
        ((out * self.in_channels + inp) * self.kernel + ky) * self.kernel + kx
    }

    pub fn weight(&self, out: usize, inp: usize, ky: usize, kx: usize) -> f64 {
        self.weights[self.widx(out, inp, ky, kx)]
    }

    pub fn set_weight(&mut self, out: usize, inp: usize, ky: usize, kx: usize, v: f64) {
        let i = self.widx(out, inp, ky, kx);
        self.weights[i] = v;
    }

    pub fn bias(&self, out: usize) -> f64 {
        self.bias[out]
    }

    pub fn set_bias(&mut self, out: usize, v: f64) {
        self.bias[out] = v;
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Head output after the score sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub anchors: usize,
    pub rows: usize,
    pub cols: usize,
    /// `[anchor][row][col]`, each in [0, 1].
    pub scores: Vec<f64>,
    /// `[anchor * 7 + param][row][col]`.
    pub deltas: Vec<f64>,
}

impl RawPrediction {
    #[inline]
    pub fn score(&self, anchor: usize, row: usize, col: usize) -> f64 {
        self.scores[(anchor * self.rows + row) * self.cols + col]
    }

    #[inline]
    pub fn delta(&self, anchor: usize, param: usize, row: usize, col: usize) -> f64 {
        self.deltas[((anchor * BOX_PARAMS + param) * self.rows + row) * self.cols + col]
    }

    pub(crate) fn from_head_output(out: &Tensor3, anchors: usize) -> Self {
        let (_, rows, cols) = out.shape();
        let plane = rows * cols;
        let raw = out.as_slice();
        let scores = raw[..anchors * plane].iter().map(|&l| sigmoid(l)).collect();
        let deltas = raw[anchors * plane..].to_vec();
        Self { anchors, rows, cols, scores, deltas }
    }

    /// Same as [`Self::from_head_output`] but reuses the output buffer for the deltas.
    pub(crate) fn from_owned_head_output(out: Tensor3, anchors: usize) -> Self {
        let (_, rows, cols) = out.shape();
        let split = anchors * rows * cols;
        let mut deltas = out.into_vec();
        let scores = deltas[..split].iter().map(|&l| sigmoid(l)).collect();
        deltas.drain(..split);
        Self { anchors, rows, cols, scores, deltas }
    }
}

/// Runs the head on a fused feature map.
pub fn apply_inference_head(fused: &FeatureMap, head: &HeadWeights) -> Result<RawPrediction> {
    let out = head_forward(&fused.data, head)?;
    Ok(RawPrediction::from_owned_head_output(out, head.anchors))
}

/// Pre-activation head output, `8B x H x W`.
pub fn head_forward(input: &Tensor3, head: &HeadWeights) -> Result<Tensor3> {
    let (channels, rows, cols) = input.shape();
    if channels != head.in_channels {
        return Err(structural("fused channel count does not match the head"));
    }
    let k = head.kernel;
    let pad = k / 2;
    let outs = head.out_channels();
    let mut out = Tensor3::zeros(outs, rows, cols);
    let inp = input.as_slice();
    let plane = rows * cols;
    for o in 0..outs {
        let dst = out.plane_mut(o);
        dst.iter_mut().for_each(|v| *v = head.bias[o]);
        for c in 0..channels {
            let src = &inp[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let w = head.weights[head.widx(o, c, ky, kx)];
                    if w == 0.0 {
                        continue;
                    }
                    // output (r, x) reads input (r + ky - pad, x + kx - pad)
                    let (r0, r1) = valid_range(rows, ky, pad);
                    let (x0, x1) = valid_range(cols, kx, pad);
                    for r in r0..r1 {
                        let sr = r + ky - pad;
                        let d = &mut dst[r * cols + x0..r * cols + x1];
                        let s = &src[sr * cols + x0 + kx - pad..sr * cols + x1 + kx - pad];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += w * sv;
                        }
                    }
                }
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::Numerical { stage: Stage::Head });
    }
    Ok(out)
}

/// Vector-Jacobian product of [`head_forward`] with respect to its input.
pub fn head_backward(grad_out: &Tensor3, head: &HeadWeights) -> Tensor3 {
    let (outs, rows, cols) = grad_out.shape();
    let k = head.kernel;
    let pad = k / 2;
    let channels = head.in_channels;
    let mut grad_in = Tensor3::zeros(channels, rows, cols);
    let plane = rows * cols;
    let g = grad_out.as_slice();
    for c in 0..channels {
        let dst = grad_in.plane_mut(c);
        for o in 0..outs {
            let src = &g[o * plane..(o + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let w = head.weights[head.widx(o, c, ky, kx)];
                    if w == 0.0 {
                        continue;
                    }
                    let (r0, r1) = valid_range(rows, ky, pad);
                    let (x0, x1) = valid_range(cols, kx, pad);
                    for r in r0..r1 {
                        let sr = r + ky - pad;
                        let s = &src[r * cols + x0..r * cols + x1];
                        let d = &mut dst[sr * cols + x0 + kx - pad..sr * cols + x1 + kx - pad];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += w * sv;
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Output indices `i` in `[lo, hi)` for which `i + offset - pad` is inside `[0, len)`.
#[inline]
fn valid_range(len: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset);
    let hi = (len + pad).saturating_sub(offset).min(len);
    (lo.min(hi), hi)
}
