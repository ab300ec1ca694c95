//! Central finite differences against every backward kernel.

use pctnews::numerics::{
    dropout, dropout_grad, gelu, gelu_grad, layer_norm, layer_norm_grad, matmul, matmul_grad,
    softmax, softmax_grad, Rng, Tensor, LAYER_NORM_EPS,
};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;
const CASES: u64 = 100;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Numerical gradient of `f` at `x`.
fn numeric(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= STEP;
        g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * STEP);
    }
    g
}

fn rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / (norm(analytic) + norm(numeric)).max(1e-12)
}

#[test]
fn matmul_grad_matches_finite_differences() {
    let mut rng = Rng::new(1, "fd-matmul");
    for _ in 0..CASES {
        let a = random(&mut rng, &[4, 4]);
        let b = random(&mut rng, &[4, 4]);
        let up = random(&mut rng, &[4, 4]);
        let (da, db) = matmul_grad(&a, &b, &up).unwrap();
        let na = numeric(&a, |x| dot(&matmul(x, &b).unwrap(), &up));
        let nb = numeric(&b, |x| dot(&matmul(&a, x).unwrap(), &up));
        assert!(rel_err(&da, &na) < TOL);
        assert!(rel_err(&db, &nb) < TOL);
    }
}

#[test]
fn softmax_grad_matches_finite_differences() {
    let mut rng = Rng::new(2, "fd-softmax");
    for _ in 0..CASES {
        let x = random(&mut rng, &[4, 4]);
        let up = random(&mut rng, &[4, 4]);
        let y = softmax(&x).unwrap();
        let dx = softmax_grad(&y, &up).unwrap();
        let nx = numeric(&x, |x| dot(&softmax(x).unwrap(), &up));
        assert!(rel_err(&dx, &nx) < TOL, "{}", rel_err(&dx, &nx));
    }
}

#[test]
fn layer_norm_grad_matches_finite_differences() {
    let mut rng = Rng::new(3, "fd-ln");
    for _ in 0..CASES {
        let x = random(&mut rng, &[4, 4]);
        let gamma = random(&mut rng, &[4]);
        let beta = random(&mut rng, &[4]);
        let up = random(&mut rng, &[4, 4]);
        let (_, ctx) = layer_norm(&x, &gamma, &beta, LAYER_NORM_EPS).unwrap();
        let (dx, dg, db) = layer_norm_grad(&ctx, &gamma, &up).unwrap();
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| {
            dot(&layer_norm(x, g, b, LAYER_NORM_EPS).unwrap().0, &up)
        };
        assert!(rel_err(&dx, &numeric(&x, |v| f(v, &gamma, &beta))) < TOL);
        assert!(rel_err(&dg, &numeric(&gamma, |v| f(&x, v, &beta))) < TOL);
        assert!(rel_err(&db, &numeric(&beta, |v| f(&x, &gamma, v))) < TOL);
    }
}

#[test]
fn gelu_grad_matches_finite_differences() {
    let mut rng = Rng::new(4, "fd-gelu");
    for _ in 0..CASES {
        let x = random(&mut rng, &[4, 4]).scale(2.0);
        let up = random(&mut rng, &[4, 4]);
        let dx = gelu_grad(&x, &up).unwrap();
        let nx = numeric(&x, |x| dot(&gelu(x).unwrap(), &up));
        assert!(rel_err(&dx, &nx) < TOL);
    }
}

#[test]
fn dropout_grad_matches_finite_differences() {
    let mut rng = Rng::new(5, "fd-dropout");
    for case in 0..CASES {
        let x = random(&mut rng, &[4, 4]);
        let up = random(&mut rng, &[4, 4]);
        // Replaying the same stream reproduces the mask for every perturbed input.
        let stream = format!("mask-{case}");
        let (_, mask) = dropout(&x, 0.3, Some(&mut Rng::new(9, &stream)), true).unwrap();
        let dx = dropout_grad(&mask, &up).unwrap();
        let nx = numeric(&x, |x| {
            dot(
                &dropout(x, 0.3, Some(&mut Rng::new(9, &stream)), true).unwrap().0,
                &up,
            )
        });
        assert!(rel_err(&dx, &nx) < TOL);
    }
}
