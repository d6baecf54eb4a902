use criterion::{criterion_group, criterion_main, Criterion};
use dbloss_bench::signal;
use dbloss_core::train::{adam_step, AdamState};
use dbloss_core::{DbLossConfig, Graph, LossKind, ModelKind, ModelParams};

/// One optimizer step of DLinear at lookback 96 / horizon 96 on a batch of
/// 64 seven-channel windows: forward, loss, backward, Adam.
fn train_step(c: &mut Criterion) {
    let (x, y) = (signal(64, 96, 7), signal(64, 96, 7).mul_scalar(0.5).unwrap());
    let db = DbLossConfig::default();
    for loss in [LossKind::Mse, LossKind::DbLoss] {
        let mut params = ModelParams::init(ModelKind::DLinear, 96, 96, 1).unwrap();
        let mut adam = AdamState::new(&params);
        c.bench_function(&format!("dlinear_step/{loss}"), |b| {
            b.iter(|| {
                let graph = Graph::new();
                let weights = params.register(&graph);
                let pred = params.forward(&weights, &x).unwrap();
                let grads = loss.objective(&pred, &y, &db).unwrap().backward().unwrap();
                let g: Vec<Vec<f64>> = weights.iter().map(|w| grads.wrt(w)).collect();
                adam_step(&mut params, &g, &mut adam, 1e-4).unwrap();
            })
        });
    }
}

criterion_group!(benches, train_step);
criterion_main!(benches);
