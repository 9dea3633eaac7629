//! Stateful layer wrappers around the functions in [`super::ops`].
//!
//! Each wrapper caches whatever its backward pass needs and exposes its
//! parameters and freshly computed gradients in matching order, which is
//! what both the optimizer and the gradient checker consume.

use crate::{Error, Result};
use rand::Rng;

use super::ops;
use super::Tensor;

/// A differentiable unit: forward, backward, and access to parameters.
///
/// `backward` must be called after `forward` on the same input; layers
/// return [`Error::Shape`] or panic-free errors otherwise. `grads()` and
/// `params_mut()` enumerate tensors in the same order.
pub trait DiffLayer {
    fn name(&self) -> &'static str;

    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    /// Propagates `upstream` (gradient w.r.t. this layer's output) back to
    /// the input, storing parameter gradients internally.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    /// Parameter gradients filled by the most recent `backward`.
    fn grads(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }

    /// Distance from the cached forward pass to the nearest point where the
    /// layer is not differentiable (ReLU corner, pooling tie). Smooth layers
    /// report infinity. The gradient checker skips trials that sit too close
    /// to such a point, where finite differences are meaningless.
    fn kink_distance(&self) -> f64 {
        f64::INFINITY
    }
}

fn need_cache<'a, T>(cache: &'a Option<T>, layer: &str) -> Result<&'a T> {
    cache
        .as_ref()
        .ok_or_else(|| Error::Shape(format!("{layer}: backward called before forward")))
}

pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Dense {
        Dense::from_parts(
            Tensor::glorot(&[n_in, n_out], n_in, n_out, rng),
            Tensor::zeros(&[n_out]),
        )
    }

    pub fn from_parts(w: Tensor, b: Tensor) -> Dense {
        let (gw, gb) = (Tensor::zeros(w.shape()), Tensor::zeros(b.shape()));
        Dense {
            w,
            b,
            grad_w: gw,
            grad_b: gb,
            input: None,
        }
    }
}

impl DiffLayer for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.ensure_finite("dense input")?;
        let y = ops::dense_forward(input, &self.w, &self.b)?;
        self.input = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = need_cache(&self.input, "dense")?;
        let (dx, dw, db) = ops::dense_backward(x, &self.w, upstream)?;
        self.grad_w = dw;
        self.grad_b = db;
        Ok(dx)
    }

    fn grads(&self) -> Vec<&Tensor> {
        vec![&self.grad_w, &self.grad_b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

pub struct Conv1d {
    pub filters: Tensor,
    pub bias: Tensor,
    pub grad_filters: Tensor,
    pub grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Conv1d {
    /// `m` filters of window `h` over inputs of width `k`.
    pub fn new(m: usize, h: usize, k: usize, rng: &mut impl Rng) -> Conv1d {
        Conv1d::from_parts(
            Tensor::glorot(&[m, h, k], h * k, m, rng),
            Tensor::zeros(&[m]),
        )
    }

    pub fn from_parts(filters: Tensor, bias: Tensor) -> Conv1d {
        let (gf, gb) = (Tensor::zeros(filters.shape()), Tensor::zeros(bias.shape()));
        Conv1d {
            filters,
            bias,
            grad_filters: gf,
            grad_bias: gb,
            input: None,
        }
    }
}

impl DiffLayer for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.ensure_finite("conv1d input")?;
        let y = ops::conv1d_forward(input, &self.filters, &self.bias)?;
        self.input = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = need_cache(&self.input, "conv1d")?;
        let (dx, df, db) = ops::conv1d_backward(x, &self.filters, upstream)?;
        self.grad_filters = df;
        self.grad_bias = db;
        Ok(dx)
    }

    fn grads(&self) -> Vec<&Tensor> {
        vec![&self.grad_filters, &self.grad_bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.filters, &mut self.bias]
    }
}

#[derive(Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu::default()
    }
}

impl DiffLayer for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.ensure_finite("relu input")?;
        self.input = Some(input.clone());
        Ok(ops::relu_forward(input))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = need_cache(&self.input, "relu")?;
        ops::relu_backward(x, upstream)
    }

    fn kink_distance(&self) -> f64 {
        match &self.input {
            Some(x) => x.data().iter().fold(f64::INFINITY, |d, v| d.min(v.abs())),
            None => f64::INFINITY,
        }
    }
}

#[derive(Default)]
pub struct MaxPoolOverTime {
    cache: Option<(usize, Vec<usize>)>,
    input: Option<Tensor>,
}

impl MaxPoolOverTime {
    pub fn new() -> MaxPoolOverTime {
        MaxPoolOverTime::default()
    }
}

impl DiffLayer for MaxPoolOverTime {
    fn name(&self) -> &'static str {
        "maxpool"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.ensure_finite("maxpool input")?;
        let (y, argmax) = ops::maxpool_forward(input)?;
        self.cache = Some((input.shape()[0], argmax));
        self.input = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (rows, argmax) = need_cache(&self.cache, "maxpool")?;
        ops::maxpool_backward(*rows, argmax, upstream)
    }

    /// Smallest winner/runner-up gap across columns: finite differences
    /// break down when two rows compete for the maximum.
    fn kink_distance(&self) -> f64 {
        let Some(x) = &self.input else {
            return f64::INFINITY;
        };
        let (l, m) = (x.shape()[0], x.shape()[1]);
        if l < 2 {
            return f64::INFINITY;
        }
        let mut min_gap = f64::INFINITY;
        for c in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for i in 0..l {
                let v = x.data()[i * m + c];
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            min_gap = min_gap.min(best - second);
        }
        min_gap
    }
}

/// Dropout with a mask fixed at construction time.
///
/// Training draws a fresh mask per example via [`ops::dropout_mask`] and
/// applies it functionally; this wrapper exists so a dropout stage can sit
/// inside a gradient-checked stack, where the mask must stay frozen across
/// the many forward evaluations.
pub struct DropoutFixed {
    rate: f64,
    mask: Vec<bool>,
}

impl DropoutFixed {
    pub fn new(len: usize, rate: f64, rng: &mut impl Rng) -> Result<DropoutFixed> {
        let mask = ops::dropout_mask(len, rate, rng)?;
        Ok(DropoutFixed { rate, mask })
    }

    pub fn from_mask(mask: Vec<bool>, rate: f64) -> DropoutFixed {
        DropoutFixed { rate, mask }
    }
}

impl DiffLayer for DropoutFixed {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.ensure_finite("dropout input")?;
        ops::dropout_apply(input, &self.mask, self.rate)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        ops::dropout_backward(upstream, &self.mask, self.rate)
    }
}

/// Softmax + cross-entropy against a fixed target class, emitting the loss
/// as a one-element tensor so it can terminate a gradient-checked stack.
pub struct SoftmaxXent {
    pub target: usize,
    probs: Option<Tensor>,
}

impl SoftmaxXent {
    pub fn new(target: usize) -> SoftmaxXent {
        SoftmaxXent {
            target,
            probs: None,
        }
    }
}

impl DiffLayer for SoftmaxXent {
    fn name(&self) -> &'static str {
        "softmax-xent"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.ensure_finite("softmax-xent input")?;
        let (loss, probs) = ops::softmax_xent_forward(input, self.target)?;
        self.probs = Some(probs);
        Tensor::from_vec(&[1], vec![loss])
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        if upstream.shape() != [1] {
            return Err(Error::Shape(format!(
                "softmax-xent backward: upstream {:?}, expected [1]",
                upstream.shape()
            )));
        }
        let probs = need_cache(&self.probs, "softmax-xent")?;
        let mut d = ops::softmax_xent_backward(probs, self.target)?;
        let scale = upstream.data()[0];
        for v in d.data_mut() {
            *v *= scale;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Dense::new(3, 2, &mut rng);
        let up = Tensor::zeros(&[2]);
        assert!(layer.backward(&up).is_err());
    }

    #[test]
    fn dense_params_and_grads_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Dense::new(3, 2, &mut rng);
        let x = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
        let y = layer.forward(&x).unwrap();
        layer.backward(&Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[2]);
        let shapes: Vec<_> = layer.grads().iter().map(|g| g.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![3, 2], vec![2]]);
        let pshapes: Vec<_> = layer
            .params_mut()
            .iter()
            .map(|p| p.shape().to_vec())
            .collect();
        assert_eq!(pshapes, shapes);
    }

    #[test]
    fn relu_kink_distance_tracks_smallest_magnitude() {
        let mut layer = Relu::new();
        layer
            .forward(&Tensor::from_vec(&[3], vec![-0.5, 0.02, 1.0]).unwrap())
            .unwrap();
        assert!((layer.kink_distance() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn maxpool_kink_distance_is_top_two_gap() {
        let mut layer = MaxPoolOverTime::new();
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 9.0, 4.0, 2.0, 3.5, 0.0]).unwrap();
        layer.forward(&x).unwrap();
        // Column 0: 4.0 vs 3.5 -> 0.5; column 1: 9.0 vs 2.0 -> 7.0.
        assert!((layer.kink_distance() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fixed_dropout_is_stable_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = DropoutFixed::new(8, 0.5, &mut rng).unwrap();
        let x = Tensor::uniform(&[8], -1.0, 1.0, &mut rng);
        let a = layer.forward(&x).unwrap();
        let b = layer.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_xent_emits_scalar_loss() {
        let mut layer = SoftmaxXent::new(0);
        let y = layer
            .forward(&Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(y.shape(), &[1]);
        assert!((y.data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
