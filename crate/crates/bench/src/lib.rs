//! Shared fixtures for the criterion benchmarks.

use dbloss_core::Tensor;

/// Deterministic `[b, t, n]` input: a few incommensurate sines per channel.
pub fn signal(b: usize, t: usize, n: usize) -> Tensor {
    let values = (0..b * t * n)
        .map(|i| {
            let (step, c) = ((i / n) % t, i % n);
            let s = step as f64;
            (0.13 * s + c as f64).sin() + 0.5 * (0.71 * s).cos() + 0.01 * (i % 7) as f64
        })
        .collect();
    Tensor::new(vec![b, t, n], values).expect("shape matches value count")
}
