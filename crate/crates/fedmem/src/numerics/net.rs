//! Forward and reverse passes for fully connected networks.

use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tensor::Tensor;

/// Intermediate values captured during a forward pass, sufficient to run
/// the reverse pass without recomputation.
pub struct Trace {
    input: Tensor,
    /// Pre-activation values per layer, each `[n, out_l]`.
    pre: Vec<Tensor>,
    /// Post-activation values per layer, each `[n, out_l]`.
    post: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.post.last().expect("network has at least one layer")
    }

    /// Smallest magnitude among all pre-activation entries. Useful to
    /// verify that finite-difference probes stay clear of rectifier kinks.
    pub fn min_preactivation_magnitude(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Parameter and input gradients from one reverse pass.
pub struct Gradients {
    pub params: ParamSet,
    pub input: Tensor,
}

fn check_input(params: &ParamSet, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension {
            context: "network input rank".into(),
            expected: 2,
            actual: x.shape().len(),
        });
    }
    if x.cols() != params.input_dim() {
        return Err(Error::Dimension {
            context: "network input width".into(),
            expected: params.input_dim(),
            actual: x.cols(),
        });
    }
    Ok(())
}

/// Run the network on a batch `x` of shape `[n, in_dim]`, returning the
/// final layer output `[n, out_dim]`.
pub fn forward(params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    Ok(forward_with_trace(params, x)?.0)
}

/// Like [`forward`] but also returns the [`Trace`] needed for a reverse
/// pass.
pub fn forward_with_trace(params: &ParamSet, x: &Tensor) -> Result<(Tensor, Trace)> {
    check_input(params, x)?;
    let n = x.rows();
    let mut pre = Vec::with_capacity(params.layers().len());
    let mut post = Vec::with_capacity(params.layers().len());
    let mut current = x.clone();
    for layer in params.layers() {
        let out_dim = layer.out_dim();
        let in_dim = layer.in_dim();
        let w = layer.weight.data();
        let b = layer.bias.data();
        let mut z = Tensor::zeros(vec![n, out_dim]);
        for i in 0..n {
            let row = current.row(i);
            let zrow = z.row_mut(i);
            for (o, zo) in zrow.iter_mut().enumerate() {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = b[o];
                for (wv, xv) in wrow.iter().zip(row) {
                    acc += wv * xv;
                }
                *zo = acc;
            }
        }
        z.check_finite("forward pass")?;
        let mut h = z.clone();
        for v in h.data_mut() {
            *v = layer.activation.apply(*v);
        }
        pre.push(z);
        current = h.clone();
        post.push(h);
    }
    let trace = Trace {
        input: x.clone(),
        pre,
        post,
    };
    Ok((current, trace))
}

/// Reverse pass from a gradient with respect to the network output.
///
/// `out_grad` must have the output's shape `[n, out_dim]`. Returns the
/// gradients of every parameter and of the input batch. Any reduction
/// (e.g. batch mean) must already be folded into `out_grad`.
pub fn backward_from_output_grad(
    params: &ParamSet,
    trace: &Trace,
    out_grad: &Tensor,
) -> Result<Gradients> {
    let out = trace.output();
    if out_grad.shape() != out.shape() {
        return Err(Error::Dimension {
            context: "output gradient shape".into(),
            expected: out.len(),
            actual: out_grad.len(),
        });
    }
    let n = trace.input.rows();
    let mut grads = params.zeros_like();
    // dL/dz for the layer currently being processed.
    let mut delta = out_grad.clone();
    for (idx, layer) in params.layers().iter().enumerate().rev() {
        let pre = &trace.pre[idx];
        for (d, z) in delta.data_mut().iter_mut().zip(pre.data()) {
            *d *= layer.activation.grad(*z);
        }
        let below: &Tensor = if idx == 0 {
            &trace.input
        } else {
            &trace.post[idx - 1]
        };
        let in_dim = layer.in_dim();
        {
            let glayer = &mut grads.layers_mut()[idx];
            let gw = glayer.weight.data_mut();
            let gb = glayer.bias.data_mut();
            for i in 0..n {
                let drow = delta.row(i);
                let hrow = below.row(i);
                for (o, d) in drow.iter().enumerate() {
                    gb[o] += d;
                    let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (g, h) in grow.iter_mut().zip(hrow) {
                        *g += d * h;
                    }
                }
            }
        }
        // Gradient with respect to the layer's input becomes the next delta.
        let w = layer.weight.data();
        let mut next = Tensor::zeros(vec![n, in_dim]);
        for i in 0..n {
            let drow = delta.row(i);
            let nrow = next.row_mut(i);
            for (o, d) in drow.iter().enumerate() {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (nv, wv) in nrow.iter_mut().zip(wrow) {
                    *nv += d * wv;
                }
            }
        }
        delta = next;
    }
    grads.check_finite("reverse pass")?;
    Ok(Gradients {
        params: grads,
        input: delta,
    })
}

/// Row-wise softmax probabilities, computed with the log-sum-exp shift for
/// stability.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut probs = logits.clone();
    let n = probs.rows();
    for i in 0..n {
        let row = probs.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Mean cross-entropy of softmax(logits) against integer labels, plus the
/// gradient with respect to the logits (already divided by the batch size).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::Dimension {
            context: "cross-entropy labels".into(),
            expected: n,
            actual: labels.len(),
        });
    }
    let mut grad = Tensor::zeros(vec![n, c]);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let y = labels[i];
        if y >= c {
            return Err(Error::Dimension {
                context: "class label".into(),
                expected: c,
                actual: y,
            });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let grow = grad.row_mut(i);
        for (k, g) in grow.iter_mut().enumerate() {
            let p = (row[k] - lse).exp();
            *g = (p - if k == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Convenience wrapper: forward, mean cross-entropy, full reverse pass.
pub struct CeBackward {
    pub loss: f64,
    pub grads: ParamSet,
    pub input_grad: Tensor,
}

pub fn backward_cross_entropy(params: &ParamSet, x: &Tensor, labels: &[usize]) -> Result<CeBackward> {
    let (logits, trace) = forward_with_trace(params, x)?;
    let (loss, out_grad) = softmax_cross_entropy(&logits, labels)?;
    let g = backward_from_output_grad(params, &trace, &out_grad)?;
    Ok(CeBackward {
        loss,
        grads: g.params,
        input_grad: g.input,
    })
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax logit matches the label. Empty input
/// yields `None`.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Option<f64> {
    if labels.is_empty() {
        return None;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(logits.row(*i)) == y)
        .count();
    Some(hits as f64 / labels.len() as f64)
}
