//! Demonstrates the invariances that make linear CKA a usable representation
//! similarity measure: invariance to orthogonal transforms and isotropic
//! scaling, sensitivity to genuinely different features, and the agreement
//! between the mini-batch estimator and the full-batch statistic.
//!
//! Run with: cargo run --example cka_basics

use biaslens::cka::{cka_full, cka_minibatch};
use biaslens::matrix::Matrix;
use biaslens::rng::Rng;

fn random_features(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.normal())
}

fn random_rotation(rng: &mut Rng, d: usize) -> Matrix {
    // Gram-Schmidt on random Gaussian rows.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= dot * ri;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for vi in &mut v {
                *vi /= norm;
            }
            rows.push(v);
        }
    }
    Matrix::from_fn(d, d, |i, j| rows[i][j])
}

fn main() {
    let mut rng = Rng::new(29);
    let x = random_features(&mut rng, 64, 8);
    let y = random_features(&mut rng, 64, 8);

    println!("cka(x, x)              = {:.12}", cka_full(&x, &x).unwrap());
    println!("cka(x, y)  (unrelated) = {:.12}", cka_full(&x, &y).unwrap());

    let q = random_rotation(&mut rng, 8);
    let rotated = x.matmul(&q).unwrap();
    println!("cka(x, xQ) (rotation)  = {:.12}", cka_full(&x, &rotated).unwrap());
    println!("cka(x, 3x) (scaling)   = {:.12}", cka_full(&x, &x.scale(3.0)).unwrap());

    // The mini-batch estimator accumulates unbiased HSIC over batches and
    // stays close to the full-batch value.
    let full = cka_full(&x, &rotated).unwrap();
    let slice = |m: &Matrix, b: usize| Matrix::from_fn(16, 8, |i, j| m[(b * 16 + i, j)]);
    let xs: Vec<Matrix> = (0..4).map(|b| slice(&x, b)).collect();
    let ys: Vec<Matrix> = (0..4).map(|b| slice(&rotated, b)).collect();
    let mb = cka_minibatch(&xs, &ys).unwrap();
    println!("\nfull-batch cka    = {full:.6}");
    println!("mini-batch (4x16) = {mb:.6}");
    println!("difference        = {:.6}", (full - mb).abs());
}
