#![allow(dead_code)]

use dbloss_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

/// Recursive EMA along the time axis of a `[B, T, N]` buffer.
pub fn ema_oracle(x: &[f64], shape: [usize; 3], alpha: f64) -> Vec<f64> {
    let [b, t, n] = shape;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for c in 0..n {
            let at = |s: usize| (bi * t + s) * n + c;
            out[at(0)] = x[at(0)];
            for s in 1..t {
                out[at(s)] = alpha * x[at(s)] + (1.0 - alpha) * out[at(s - 1)];
            }
        }
    }
    out
}

pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn tensor(shape: &[usize], v: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `max|a − b| / max(max|b|, floor)`.
pub fn normwise_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Solves `A x = b` for square `A` (row-major) by Gaussian elimination with
/// partial pivoting. `b` may hold several right-hand sides, one per column.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize, rhs: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        for k in 0..n {
            a.swap(col * n + k, pivot * n + k);
        }
        for k in 0..rhs {
            b.swap(col * rhs + k, pivot * rhs + k);
        }
        let d = a[col * n + col];
        assert!(d.abs() > 1e-300, "singular system");
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            for k in 0..rhs {
                b[row * rhs + k] -= f * b[col * rhs + k];
            }
        }
    }
    let mut x = vec![0.0; n * rhs];
    for row in (0..n).rev() {
        for k in 0..rhs {
            let mut s = b[row * rhs + k];
            for j in row + 1..n {
                s -= a[row * n + j] * x[j * rhs + k];
            }
            x[row * rhs + k] = s / a[row * n + row];
        }
    }
    x
}
