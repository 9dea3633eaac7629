//! Pure forward/backward functions for each layer kind.
//!
//! Every function states its shape law in the doc comment and returns
//! `Error::Shape` when the arguments cannot line up. The stateful wrappers
//! in [`super::layers`] and the model builder both delegate here, so these
//! are the single source of truth for the arithmetic.

use crate::{Error, Result};
use rand::Rng;

use super::Tensor;

/// Valid (no padding) 1-D convolution over token positions.
///
/// `x` is `[n, k]` (positions by input width), `filters` is `[m, h, k]`
/// (filter count by window size by input width), `bias` is `[m]`.
/// Output is `[n - h + 1, m]` with
/// `out[i, f] = bias[f] + sum_{j<h, c<k} x[i+j, c] * filters[f, j, c]`.
pub fn conv1d_forward(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, k) = dims2(x, "conv1d input")?;
    let (m, h, kf) = dims3(filters, "conv1d filters")?;
    if kf != k {
        return Err(Error::Shape(format!(
            "conv1d: input width {k} != filter width {kf}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "conv1d: bias shape {:?}, expected [{m}]",
            bias.shape()
        )));
    }
    if h == 0 || h > n {
        return Err(Error::Shape(format!(
            "conv1d: window {h} does not fit {n} positions"
        )));
    }
    let out_len = n - h + 1;
    let mut out = Tensor::zeros(&[out_len, m]);
    let xd = x.data();
    let fd = filters.data();
    let bd = bias.data();
    for i in 0..out_len {
        for f in 0..m {
            let mut acc = bd[f];
            for j in 0..h {
                let xrow = (i + j) * k;
                let frow = (f * h + j) * k;
                for c in 0..k {
                    acc += xd[xrow + c] * fd[frow + c];
                }
            }
            out.data_mut()[i * m + f] = acc;
        }
    }
    Ok(out)
}

/// Gradients for [`conv1d_forward`]. `upstream` is `[n - h + 1, m]`;
/// returns `(d_input [n,k], d_filters [m,h,k], d_bias [m])`.
pub fn conv1d_backward(
    x: &Tensor,
    filters: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, k) = dims2(x, "conv1d input")?;
    let (m, h, _) = dims3(filters, "conv1d filters")?;
    let out_len = n - h + 1;
    if upstream.shape() != [out_len, m] {
        return Err(Error::Shape(format!(
            "conv1d backward: upstream {:?}, expected [{out_len}, {m}]",
            upstream.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[n, k]);
    let mut df = Tensor::zeros(&[m, h, k]);
    let mut db = Tensor::zeros(&[m]);
    let xd = x.data();
    let fd = filters.data();
    let ud = upstream.data();
    for i in 0..out_len {
        for f in 0..m {
            let u = ud[i * m + f];
            if u == 0.0 {
                continue;
            }
            db.data_mut()[f] += u;
            for j in 0..h {
                let xrow = (i + j) * k;
                let frow = (f * h + j) * k;
                for c in 0..k {
                    df.data_mut()[frow + c] += u * xd[xrow + c];
                    dx.data_mut()[xrow + c] += u * fd[frow + c];
                }
            }
        }
    }
    Ok((dx, df, db))
}

/// Fully connected layer: `x` is `[in]`, `w` is `[in, out]`, `b` is `[out]`;
/// output `[out]` with `y[o] = b[o] + sum_i x[i] * w[i, o]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (nin, nout) = dims2(w, "dense weights")?;
    if x.shape() != [nin] {
        return Err(Error::Shape(format!(
            "dense: input {:?}, expected [{nin}]",
            x.shape()
        )));
    }
    if b.shape() != [nout] {
        return Err(Error::Shape(format!(
            "dense: bias {:?}, expected [{nout}]",
            b.shape()
        )));
    }
    let mut y = b.clone();
    for i in 0..nin {
        let xi = x.data()[i];
        if xi == 0.0 {
            continue;
        }
        let row = i * nout;
        for o in 0..nout {
            y.data_mut()[o] += xi * w.data()[row + o];
        }
    }
    Ok(y)
}

/// Gradients for [`dense_forward`]: returns `(d_input, d_weights, d_bias)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (nin, nout) = dims2(w, "dense weights")?;
    if upstream.shape() != [nout] {
        return Err(Error::Shape(format!(
            "dense backward: upstream {:?}, expected [{nout}]",
            upstream.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[nin]);
    let mut dw = Tensor::zeros(&[nin, nout]);
    let db = upstream.clone();
    for i in 0..nin {
        let row = i * nout;
        let mut acc = 0.0;
        let xi = x.data()[i];
        for o in 0..nout {
            let u = upstream.data()[o];
            acc += u * w.data()[row + o];
            dw.data_mut()[row + o] = u * xi;
        }
        dx.data_mut()[i] = acc;
    }
    Ok((dx, dw, db))
}

/// Elementwise `max(0, x)`.
pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Backward pass of ReLU given the *pre-activation* input. The subgradient
/// at exactly zero is taken as zero.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if !x.same_shape(upstream) {
        return Err(Error::Shape(format!(
            "relu backward: input {:?} vs upstream {:?}",
            x.shape(),
            upstream.shape()
        )));
    }
    let mut d = upstream.clone();
    for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
        if *xv <= 0.0 {
            *dv = 0.0;
        }
    }
    Ok(d)
}

/// Max over time: column-wise maximum of an `[l, m]` tensor, yielding `[m]`
/// plus the row index of each winner. Ties go to the smallest row index.
pub fn maxpool_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (l, m) = dims2(x, "maxpool input")?;
    if l == 0 {
        return Err(Error::Shape("maxpool: empty time axis".into()));
    }
    let mut out = Tensor::zeros(&[m]);
    let mut argmax = vec![0usize; m];
    for c in 0..m {
        let mut best = x.data()[c];
        let mut best_i = 0usize;
        for i in 1..l {
            let v = x.data()[i * m + c];
            if v > best {
                best = v;
                best_i = i;
            }
        }
        out.data_mut()[c] = best;
        argmax[c] = best_i;
    }
    Ok((out, argmax))
}

/// Backward pass of max-over-time: routes each upstream component to the
/// row that won the forward pass.
pub fn maxpool_backward(rows: usize, argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    let m = argmax.len();
    if upstream.shape() != [m] {
        return Err(Error::Shape(format!(
            "maxpool backward: upstream {:?}, expected [{m}]",
            upstream.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[rows, m]);
    for c in 0..m {
        dx.data_mut()[argmax[c] * m + c] = upstream.data()[c];
    }
    Ok(dx)
}

/// Draws an inverted-dropout keep mask: each unit survives with probability
/// `1 - rate`. Always consumes exactly `len` draws from `rng`, so callers
/// can reason about RNG stream positions regardless of the rate.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    check_rate(rate)?;
    Ok((0..len).map(|_| rng.random::<f64>() >= rate).collect())
}

/// Applies a keep mask with inverted scaling: survivors are multiplied by
/// `1 / (1 - rate)` so the expected activation is unchanged and inference
/// needs no compensation.
pub fn dropout_apply(x: &Tensor, mask: &[bool], rate: f64) -> Result<Tensor> {
    check_rate(rate)?;
    if mask.len() != x.len() {
        return Err(Error::Shape(format!(
            "dropout: mask length {} vs input length {}",
            mask.len(),
            x.len()
        )));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut y = x.clone();
    for (v, &keep) in y.data_mut().iter_mut().zip(mask) {
        *v = if keep { *v * scale } else { 0.0 };
    }
    Ok(y)
}

/// Backward pass of [`dropout_apply`]: same mask, same scaling.
pub fn dropout_backward(upstream: &Tensor, mask: &[bool], rate: f64) -> Result<Tensor> {
    dropout_apply(upstream, mask, rate)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 || logits.is_empty() {
        return Err(Error::Shape(format!(
            "softmax: expected non-empty rank-1 input, got {:?}",
            logits.shape()
        )));
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut y = logits.clone();
    let mut sum = 0.0;
    for v in y.data_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in y.data_mut() {
        *v /= sum;
    }
    Ok(y)
}

/// Fused softmax + cross-entropy. Returns the scalar loss
/// `-ln p[target]` and the probability vector.
pub fn softmax_xent_forward(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let probs = softmax(logits)?;
    if target >= probs.len() {
        return Err(Error::Shape(format!(
            "cross-entropy: target {target} out of range for {} classes",
            probs.len()
        )));
    }
    // Clamp away from zero so a confidently wrong model yields a large
    // finite loss instead of inf.
    let p = probs.data()[target].max(1e-300);
    Ok((-p.ln(), probs))
}

/// Gradient of the fused loss with respect to the logits: `p - onehot(target)`.
pub fn softmax_xent_backward(probs: &Tensor, target: usize) -> Result<Tensor> {
    if target >= probs.len() {
        return Err(Error::Shape(format!(
            "cross-entropy backward: target {target} out of range for {} classes",
            probs.len()
        )));
    }
    let mut d = probs.clone();
    d.data_mut()[target] -= 1.0;
    Ok(d)
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::Shape(format!("{what}: expected rank 2, got {s:?}"))),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::Shape(format!("{what}: expected rank 3, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_computed() {
        // n=3, k=2; one filter of window 2: f = [[1, 0], [0, 1]], bias 0.5.
        // out[i] = x[i,0] + x[i+1,1] + 0.5
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[1], &[0.5]);
        let y = conv1d_forward(&x, &f, &b).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[1.0 + 4.0 + 0.5, 3.0 + 6.0 + 0.5]);
    }

    #[test]
    fn conv1d_window_one_is_positionwise_dense() {
        // With h=1 each output row is an independent linear map of its row.
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let f = t(&[2, 1, 2], &[1.0, 1.0, 2.0, -1.0]);
        let b = t(&[2], &[0.0, 1.0]);
        let y = conv1d_forward(&x, &f, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[3.0, 1.0, 7.0, 3.0]);
    }

    #[test]
    fn conv1d_output_length_law() {
        for n in 1..=20 {
            for h in 1..=3 {
                let x = Tensor::zeros(&[n, 4]);
                let f = Tensor::zeros(&[2, h, 4]);
                let b = Tensor::zeros(&[2]);
                let out = conv1d_forward(&x, &f, &b);
                if h > n {
                    assert!(out.is_err(), "n={n} h={h} should not fit");
                } else {
                    assert_eq!(out.unwrap().shape(), &[n - h + 1, 2]);
                }
            }
        }
    }

    #[test]
    fn conv1d_rejects_width_mismatch() {
        let x = Tensor::zeros(&[4, 3]);
        let f = Tensor::zeros(&[1, 2, 5]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv1d_forward(&x, &f, &b),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn dense_hand_computed() {
        let x = t(&[2], &[1.0, -2.0]);
        let w = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], &[0.1, 0.2, 0.3]);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0 - 8.0 + 0.1, 2.0 - 10.0 + 0.2, 3.0 - 12.0 + 0.3]);
    }

    #[test]
    fn dense_backward_matches_transpose() {
        let x = t(&[2], &[1.0, -2.0]);
        let w = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let up = t(&[3], &[1.0, 0.0, -1.0]);
        let (dx, dw, db) = dense_backward(&x, &w, &up).unwrap();
        assert_eq!(dx.data(), &[1.0 - 3.0, 4.0 - 6.0]);
        assert_eq!(dw.data(), &[1.0, 0.0, -1.0, -2.0, 0.0, 2.0]);
        assert_eq!(db.data(), up.data());
    }

    #[test]
    fn relu_clamps_and_gates() {
        let x = t(&[4], &[-1.0, 0.0, 2.0, -0.5]);
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let up = t(&[4], &[1.0, 1.0, 1.0, 1.0]);
        let d = relu_backward(&x, &up).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_first_winner_on_ties() {
        let x = t(&[3, 2], &[1.0, 5.0, 7.0, 5.0, 7.0, 2.0]);
        let (y, arg) = maxpool_forward(&x).unwrap();
        assert_eq!(y.data(), &[7.0, 5.0]);
        // Column 0 has 7.0 at rows 1 and 2 -> row 1 wins.
        // Column 1 has 5.0 at rows 0 and 1 -> row 0 wins.
        assert_eq!(arg, vec![1, 0]);
        let up = t(&[2], &[10.0, 20.0]);
        let dx = maxpool_backward(3, &arg, &up).unwrap();
        assert_eq!(dx.data(), &[0.0, 20.0, 10.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_scales_survivors() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let mask = vec![true, false, true, false];
        let y = dropout_apply(&x, &mask, 0.5).unwrap();
        assert_eq!(y.data(), &[2.0, 0.0, 6.0, 0.0]);
        // rate 0 keeps everything untouched regardless of the mask scale.
        let y0 = dropout_apply(&x, &[true; 4], 0.0).unwrap();
        assert_eq!(y0.data(), x.data());
    }

    #[test]
    fn dropout_mask_is_unbiased_enough() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mask = dropout_mask(10_000, 0.3, &mut rng).unwrap();
        let kept = mask.iter().filter(|&&k| k).count() as f64 / 10_000.0;
        assert!((kept - 0.7).abs() < 0.02, "keep rate {kept}");
        assert!(dropout_mask(4, 1.0, &mut rng).is_err());
        assert!(dropout_mask(4, -0.1, &mut rng).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let a = softmax(&t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let b = softmax(&t(&[3], &[1001.0, 1002.0, 1003.0])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn xent_loss_matches_log_prob() {
        let logits = t(&[2], &[0.0, 0.0]);
        let (loss, probs) = softmax_xent_forward(&logits, 1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let d = softmax_xent_backward(&probs, 1).unwrap();
        assert!((d.data()[0] - 0.5).abs() < 1e-12);
        assert!((d.data()[1] + 0.5).abs() < 1e-12);
    }
}
