//! Forward kernels and their vector-Jacobian products.
//!
//! Every forward kernel checks its output for NaN/Inf and reports it as
//! [`Error::NonFinite`] rather than passing it downstream.

use super::{Rng, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.044_715;
// sqrt(2/pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, b) in orow.iter_mut().zip(brow) {
                *o += aip * b;
            }
        }
    }
    Tensor::new(vec![m, n], out)?.check_finite("matmul")
}

/// Gradients of `a·b` with respect to `a` and `b`, given the upstream `dout`.
pub fn matmul_grad(a: &Tensor, b: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, _) = a.dims2()?;
    let (_, n) = b.dims2()?;
    if dout.dims2()? != (m, n) {
        return Err(Error::Shape(format!(
            "matmul_grad upstream {:?}, expected {m}x{n}",
            dout.shape()
        )));
    }
    let da = matmul(dout, &b.transpose()?)?;
    let db = matmul(&a.transpose()?, dout)?;
    Ok((da, db))
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let (r, _) = x.dims2()?;
    let mut out = Tensor::zeros(x.shape());
    for i in 0..r {
        softmax_row(x.row(i), out.row_mut(i));
    }
    out.check_finite("softmax")
}

/// Row-wise softmax where columns with `key_mask[j] == false` get zero weight.
pub fn masked_softmax(x: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
    let (r, c) = x.dims2()?;
    if key_mask.len() != c {
        return Err(Error::Shape(format!(
            "mask of length {} for {} keys",
            key_mask.len(),
            c
        )));
    }
    if !key_mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "every key is masked; attention row cannot be normalized".into(),
        ));
    }
    let mut out = Tensor::zeros(x.shape());
    let mut buf = vec![0.0; c];
    for i in 0..r {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = if key_mask[j] {
                x.get(i, j)
            } else {
                f64::NEG_INFINITY
            };
        }
        if buf.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("masked_softmax input".into()));
        }
        softmax_row(&buf, out.row_mut(i));
    }
    out.check_finite("masked_softmax")
}

/// VJP of row-wise softmax given its output `y`.
pub fn softmax_grad(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "softmax_grad {:?} vs {:?}",
            y.shape(),
            dy.shape()
        )));
    }
    let (r, _) = y.dims2()?;
    let mut dx = Tensor::zeros(y.shape());
    for i in 0..r {
        let (yr, dyr) = (y.row(i), dy.row(i));
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dx.row_mut(i).iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    Ok(dx)
}

/// What [`layer_norm_grad`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCtx {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCtx)> {
    let (r, h) = x.dims2()?;
    if h == 0 {
        return Err(Error::Shape("layer_norm over zero features".into()));
    }
    if gamma.len() != h || beta.len() != h {
        return Err(Error::Shape(format!(
            "layer_norm gamma/beta of length {}/{} for width {h}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut normalized = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let nrow = normalized.row_mut(i);
        for (n, v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * is;
        }
        let nrow = normalized.row(i).to_vec();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gamma.data()[j] * nrow[j] + beta.data()[j];
        }
    }
    let out = out.check_finite("layer_norm")?;
    Ok((out, LayerNormCtx { normalized, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_grad(
    ctx: &LayerNormCtx,
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (r, h) = ctx.normalized.dims2()?;
    if dy.dims2()? != (r, h) || gamma.len() != h || ctx.inv_std.len() != r {
        return Err(Error::Shape(format!(
            "layer_norm_grad context {r}x{h} vs upstream {:?}",
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[r, h]);
    let mut dgamma = vec![0.0; h];
    let mut dbeta = vec![0.0; h];
    let mut dxhat = vec![0.0; h];
    let hf = h as f64;
    for i in 0..r {
        let (xh, g) = (ctx.normalized.row(i), dy.row(i));
        for j in 0..h {
            dgamma[j] += g[j] * xh[j];
            dbeta[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
        }
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let scale = ctx.inv_std[i] / hf;
        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
            *d = scale * (hf * dxhat[j] - sum - xh[j] * dot);
        }
    }
    Ok((dx, Tensor::vector(dgamma), Tensor::vector(dbeta)))
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

/// d/dx of the tanh-approximated GELU.
pub fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFinite("gelu input".into()));
    }
    x.map(gelu_scalar).check_finite("gelu")
}

/// VJP of GELU given its input `x`.
pub fn gelu_grad(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "gelu_grad {:?} vs {:?}",
            x.shape(),
            dy.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| g * gelu_derivative(v))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Per-entry multipliers applied by a training-mode dropout; `None` means identity.
#[derive(Debug, Clone, Default)]
pub struct DropoutMask(Option<Tensor>);

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask(None)
    }

    pub fn scales(&self) -> Option<&Tensor> {
        self.0.as_ref()
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` so inference is the identity.
pub fn dropout(
    x: &Tensor,
    p: f64,
    rng: Option<&mut Rng>,
    training: bool,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("dropout input".into()));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let rng = rng.ok_or_else(|| {
        Error::InvalidArgument("training-mode dropout needs a random stream".into())
    })?;
    let keep = 1.0 / (1.0 - p);
    let scales: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    let scales = Tensor::new(x.shape().to_vec(), scales)?;
    let out: Vec<f64> = x
        .data()
        .iter()
        .zip(scales.data())
        .map(|(a, s)| a * s)
        .collect();
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        DropoutMask(Some(scales)),
    ))
}

pub fn dropout_grad(mask: &DropoutMask, dy: &Tensor) -> Result<Tensor> {
    match &mask.0 {
        None => Ok(dy.clone()),
        Some(s) if s.shape() == dy.shape() => {
            let data = s.data().iter().zip(dy.data()).map(|(a, b)| a * b).collect();
            Tensor::new(dy.shape().to_vec(), data)
        }
        Some(s) => Err(Error::Shape(format!(
            "dropout mask {:?} vs upstream {:?}",
            s.shape(),
            dy.shape()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t(&[&[1.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = t(&[&[1.5, -2.0, 0.25], &[3.0, 4.0, -1.0]]);
        assert_eq!(matmul(&a, &Tensor::identity(3)).unwrap(), a);
        let z = matmul(&Tensor::zeros(&[4, 2]), &a).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_values() {
        let y = softmax(&t(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&t(&[&[1.0, 2.0, 3.0]])).unwrap();
        for (got, want) in y.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 5e-6);
        }
        let shifted = softmax(&t(&[&[101.0, 102.0, 103.0]])).unwrap();
        assert!(y.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax(&t(&[&[f64::NAN, 0.0]])).is_err());
    }

    #[test]
    fn masked_softmax_all_masked_errors() {
        assert!(masked_softmax(&t(&[&[1.0, 2.0]]), &[false, false]).is_err());
        let y = masked_softmax(&t(&[&[1.0, 2.0, 3.0]]), &[true, false, true]).unwrap();
        assert_eq!(y.get(0, 1), 0.0);
        assert!((y.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_grad_of_constant_row_against_uniform_upstream() {
        let y = softmax(&t(&[&[3.0, 3.0, 3.0, 3.0]])).unwrap();
        let dx = softmax_grad(&y, &Tensor::filled(&[1, 4], 1.0)).unwrap();
        assert!(dx.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let (y, _) = layer_norm(&t(&[&[2.0, 2.0, 2.0]]), &ones, &zeros, LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let (y, _) = layer_norm(&t(&[&[1.0, -4.0, 9.0]]), &ones, &zeros, LAYER_NORM_EPS).unwrap();
        let mean = y.data().iter().sum::<f64>() / 3.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);

        let beta = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let (y, _) = layer_norm(&t(&[&[1.0, -4.0, 9.0]]), &zeros, &beta, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), beta.data());
    }

    #[test]
    fn gelu_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(1.0) - 0.84119).abs() < 1e-5);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert_eq!(gelu_derivative(0.0), 0.5);
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::filled(&[4, 4], 2.0);
        let mut rng = Rng::new(3, "dropout");
        let (y, _) = dropout(&x, 0.0, Some(&mut rng), true).unwrap();
        assert_eq!(y, x);
        let (y, _) = dropout(&x, 0.7, None, false).unwrap();
        assert_eq!(y, x);
        assert!(dropout(&x, 1.0, None, false).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let x = Tensor::filled(&[1_000_000], 1.0);
        let mut rng = Rng::new(11, "dropout");
        let (y, _) = dropout(&x, 0.5, Some(&mut rng), true).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dropout_grad_uses_mask() {
        let x = Tensor::filled(&[2, 3], 1.0);
        let mut rng = Rng::new(5, "dropout");
        let (y, mask) = dropout(&x, 0.5, Some(&mut rng), true).unwrap();
        let g = dropout_grad(&mask, &Tensor::filled(&[2, 3], 1.0)).unwrap();
        assert_eq!(g, y);
        assert!(dropout_grad(&mask, &Tensor::zeros(&[3, 2])).is_err());
    }
}
