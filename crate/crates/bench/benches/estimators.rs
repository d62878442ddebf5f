use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use paneltx_bench::bench_data;
use paneltx_core::forest::{self, CapeSet, ForestConfig};
use paneltx_core::nuisance::{fit_lasso, lambda_grid, CrossFitPlan};
use paneltx_core::overlap;

fn forest_benches(c: &mut Criterion) {
    let data = bench_data(2000, 7);
    let mut group = c.benchmark_group("causal_forest");
    group.sample_size(10);
    for trees in [200usize, 500] {
        let cfg = {
            let mut cfg = ForestConfig::default_for(data.x.ncols());
            cfg.num_trees = trees;
            cfg.master_seed = 11;
            cfg
        };
        group.bench_with_input(BenchmarkId::new("fit", trees), &cfg, |b, cfg| {
            b.iter(|| {
                forest::fit_causal_forest(
                    black_box(&data.x),
                    &data.y,
                    &data.p,
                    &data.y_hat,
                    &data.p_hat,
                    cfg,
                )
                .unwrap()
            })
        });
    }

    let cfg = {
        let mut cfg = ForestConfig::default_for(data.x.ncols());
        cfg.num_trees = 500;
        cfg.master_seed = 11;
        cfg
    };
    let model =
        forest::fit_causal_forest(&data.x, &data.y, &data.p, &data.y_hat, &data.p_hat, &cfg)
            .unwrap();
    let labels = CapeSet::index_labels(data.x.nrows());
    group.bench_function("predict_cape_2000_targets", |b| {
        b.iter(|| {
            forest::predict_cape(
                black_box(&model),
                &data.x,
                &labels,
                &data.y,
                &data.p,
                &data.y_hat,
                &data.p_hat,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn lasso_benches(c: &mut Criterion) {
    let data = bench_data(2000, 9);
    let x = &data.x;
    let y = &data.y;
    let grid = lambda_grid(x, y, 20, 1e-3);
    c.bench_function("lasso_path_20_points", |b| {
        b.iter(|| {
            let mut last = None;
            for &l in &grid {
                last = Some(fit_lasso(black_box(x), y, l).unwrap());
            }
            last
        })
    });

    let treated = data.ds.treated_flags();
    c.bench_function("stratified_plan", |b| {
        b.iter(|| CrossFitPlan::stratified(black_box(&treated), 5, 3).unwrap())
    });
}

fn overlap_benches(c: &mut Criterion) {
    let data = bench_data(5000, 13);
    let treated = data.ds.treated_flags();
    let scores: Vec<f64> = (0..data.ds.len()).map(|i| (i as f64 * 0.618) % 1.0).collect();
    c.bench_function("close_comparisons_5000", |b| {
        b.iter(|| overlap::close_comparisons(black_box(&scores), &treated, 0.10).unwrap())
    });
}

criterion_group!(benches, forest_benches, lasso_benches, overlap_benches);
criterion_main!(benches);
