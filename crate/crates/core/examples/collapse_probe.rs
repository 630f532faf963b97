//! Trains the toy model on balanced blobs and prints collapse diagnostics
//! at a few epochs. Usage: collapse_probe [epochs] [lr] [weight_decay] [batch]

use std::collections::BTreeMap;

use ncal_core::collapse::collapse_report;
use ncal_core::trainer::{generate_blobs, BlobSpec, ToyModel, TrainConfig};
use ncal_core::PoolState;

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let d = TrainConfig::default();
    let epochs = args.first().map_or(d.epochs, |&v| v as usize);
    let lr = args.get(1).copied().unwrap_or(d.learning_rate);
    let wd = args.get(2).copied().unwrap_or(d.weight_decay);
    let batch = args.get(3).map_or(d.batch_size, |&v| v as usize);
    for seed in 0..3u64 {
        let ds = generate_blobs(&BlobSpec::balanced(4, 200, 8, 6.0, 1.0, seed)).unwrap();
        let labeled: Vec<(u64, usize)> = ds.features.ids().iter().copied().zip(ds.labels.iter().copied()).collect();
        let cfg = TrainConfig { epochs, learning_rate: lr, weight_decay: wd, batch_size: batch, seed, ..TrainConfig::default() };
        let mut model = ToyModel::new(8, cfg.hidden, 4, seed);
        let t0 = std::time::Instant::now();
        let trace = model.train(&cfg, &ds.features, &labeled, &[]).unwrap();
        let hidden = model.embed(&ds.features).unwrap();
        let pool = PoolState::with_labels(ds.features.ids().iter().copied(), 4, labeled.iter().copied()).unwrap();
        let preds: BTreeMap<u64, usize> = ds.features.rows().map(|(id, x)| (id, model.predict(x))).collect();
        let r = collapse_report(&hidden, &pool, &preds).unwrap();
        println!(
            "seed {seed}: acc {:.4} tpt ({}, {}) nc1 {:.4} nc2 {:.4}±{:.4} nc4 {:.4} loss {:.4} [{:?}]",
            trace.train_accuracy.last().unwrap(), trace.tpt_start, trace.tpt_end,
            r.nc1_ratio, r.nc2_cos_mean, r.nc2_cos_std, r.nc4_agreement, trace.train_loss.last().unwrap(), t0.elapsed()
        );
    }
}
