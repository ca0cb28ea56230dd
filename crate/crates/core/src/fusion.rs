//! Per-cell scaled dot-product attention across agents.
//!
//! At every grid cell the ego's channel vector is the query; every agent's
//! vector (ego included) is both key and value. There are no learned
//! projections, so the whole map is a smooth function of its inputs and the
//! backward pass below is exact.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{structural, validation, Error, Result, Stage};
use crate::feature::FeatureMap;
use crate::math::{exp, sqrt};
use crate::tensor::Tensor3;

/// Attention weights kept from the forward pass, laid out `[agent][cell]`.
#[derive(Debug, Clone)]
pub struct FusionCache {
    pub weights: Vec<f64>,
    agents: usize,
}

impl FusionCache {
    pub fn weight(&self, agent: usize, cell: usize) -> f64 {
        self.weights[agent * (self.weights.len() / self.agents) + cell]
    }
}

/// Fuses spatially aligned feature maps into the ego frame.
///
/// The output keeps the ego's identity, pose and timestamp.
pub fn fuse_attention(features: &[FeatureMap], ego_index: usize) -> Result<FeatureMap> {
    if features.is_empty() {
        return Err(structural("fusion needs at least one feature map"));
    }
    if ego_index >= features.len() {
        return Err(structural("ego index out of range"));
    }
    let tensors: Vec<&Tensor3> = features.iter().map(|f| &f.data).collect();
    let (fused, _) = fuse_tensors(&tensors, ego_index)?;
    let ego = &features[ego_index];
    Ok(FeatureMap::new(ego.agent_id, ego.timestamp, ego.pose, ego.resolution, fused))
}

/// Tensor-level fusion used by both the pipeline and the attack gradient.
pub fn fuse_tensors(inputs: &[&Tensor3], ego_index: usize) -> Result<(Tensor3, FusionCache)> {
    let n = inputs.len();
    if n == 0 || ego_index >= n {
        return Err(structural("fusion needs a valid ego among at least one input"));
    }
    let shape = inputs[0].shape();
    if inputs.iter().any(|t| t.shape() != shape) {
        return Err(structural("fused feature maps must share C, H, W"));
    }
    let (channels, rows, cols) = shape;
    if channels == 0 || rows == 0 || cols == 0 {
        return Err(structural("feature map has an empty dimension"));
    }
    let cells = rows * cols;
    let scale = 1.0 / sqrt(channels as f64);
    let ego = inputs[ego_index].as_slice();

    let mut weights = vec![0.0; n * cells];
    let mut fused = Tensor3::zeros(channels, rows, cols);
    if n == 1 {
        weights.iter_mut().for_each(|w| *w = 1.0);
        fused.as_mut_slice().copy_from_slice(ego);
        return check_fused(inputs, fused, FusionCache { weights, agents: 1 });
    }

    // logits, accumulated plane by plane so the inner loops stay contiguous
    for (k, input) in inputs.iter().enumerate() {
        let v = input.as_slice();
        let lk = &mut weights[k * cells..(k + 1) * cells];
        for c in 0..channels {
            let base = c * cells;
            let (e, x) = (&ego[base..base + cells], &v[base..base + cells]);
            for ((l, ev), xv) in lk.iter_mut().zip(e).zip(x) {
                *l += ev * xv;
            }
        }
    }
    for cell in 0..cells {
        let mut arg = 0;
        for k in 1..n {
            if weights[k * cells + cell] > weights[arg * cells + cell] {
                arg = k;
            }
        }
        let max = weights[arg * cells + cell] * scale;
        let mut total = 0.0;
        for k in 0..n {
            let e = if k == arg { 1.0 } else { exp(weights[k * cells + cell] * scale - max) };
            weights[k * cells + cell] = e;
            total += e;
        }
        for k in 0..n {
            weights[k * cells + cell] /= total;
        }
    }

    let out = fused.as_mut_slice();
    for (k, input) in inputs.iter().enumerate() {
        let v = input.as_slice();
        let w = &weights[k * cells..(k + 1) * cells];
        for c in 0..channels {
            let base = c * cells;
            let (o, x) = (&mut out[base..base + cells], &v[base..base + cells]);
            if k == 0 {
                for ((ov, wv), xv) in o.iter_mut().zip(w).zip(x) {
                    *ov = wv * xv;
                }
            } else {
                for ((ov, wv), xv) in o.iter_mut().zip(w).zip(x) {
                    *ov += wv * xv;
                }
            }
        }
    }
    check_fused(inputs, fused, FusionCache { weights, agents: n })
}

// A non-finite input always reaches the output (as inf, or as NaN through
// 0 * inf or inf - inf), so the inputs are only scanned once the output is
// known to be bad, to tell bad input apart from overflow.
fn check_fused(inputs: &[&Tensor3], fused: Tensor3, cache: FusionCache) -> Result<(Tensor3, FusionCache)> {
    if fused.is_finite() {
        return Ok((fused, cache));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(validation("fusion input contains non-finite entries"));
    }
    Err(Error::Numerical { stage: Stage::Fusion })
}

/// Vector-Jacobian product of [`fuse_tensors`]: returns dL/d(input_k) for
/// every input given dL/d(fused).
pub fn fuse_backward(
    inputs: &[&Tensor3],
    ego_index: usize,
    cache: &FusionCache,
    grad_out: &Tensor3,
) -> Vec<Tensor3> {
    let n = inputs.len();
    let (channels, rows, cols) = grad_out.shape();
    let cells = rows * cols;
    let mut grads: Vec<Tensor3> = (0..n).map(|_| Tensor3::zeros(channels, rows, cols)).collect();
    if n == 1 {
        grads[0].as_mut_slice().copy_from_slice(grad_out.as_slice());
        return grads;
    }
    let scale = 1.0 / sqrt(channels as f64);
    let g = grad_out.as_slice();
    let ego = inputs[ego_index].as_slice();
    let mut dw = vec![0.0; n];
    let mut dlogit = vec![0.0; n];

    for cell in 0..cells {
        // dL/dw_k = <g, v_k>
        for (k, input) in inputs.iter().enumerate() {
            let v = input.as_slice();
            let mut dot = 0.0;
            for c in 0..channels {
                let i = c * cells + cell;
                dot += g[i] * v[i];
            }
            dw[k] = dot;
        }
        let mut avg = 0.0;
        for k in 0..n {
            avg += cache.weights[k * cells + cell] * dw[k];
        }
        for k in 0..n {
            let w = cache.weights[k * cells + cell];
            dlogit[k] = w * (dw[k] - avg);
        }
        for k in 0..n {
            let w = cache.weights[k * cells + cell];
            let v = inputs[k].as_slice();
            let coef = dlogit[k] * scale;
            let gk = grads[k].as_mut_slice();
            for c in 0..channels {
                let i = c * cells + cell;
                // value path and key path
                gk[i] += w * g[i] + coef * ego[i];
            }
            // query path lands on the ego
            let ge = grads[ego_index].as_mut_slice();
            for c in 0..channels {
                let i = c * cells + cell;
                ge[i] += coef * v[i];
            }
        }
    }
    grads
}
