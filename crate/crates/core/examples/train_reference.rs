//! Trains the reference shapes model and prints the per-epoch log and the
//! validation confusion matrix. Pass a path to also save the model.

use std::time::Instant;

use tivis_core::dataset::generate_dataset;
use tivis_core::nn;
use tivis_core::train::{self, TrainConfig, REFERENCE_COUNT_PER_CLASS, REFERENCE_SEED};

fn main() {
    // optional: output path for the trained model
    let save_to = std::env::args().nth(1);
    let config = TrainConfig::reference();
    let t = Instant::now();
    let ds = generate_dataset(REFERENCE_SEED, REFERENCE_COUNT_PER_CLASS).unwrap();
    let template = train::reference_architecture(REFERENCE_SEED, ds.class_names.clone()).unwrap();
    let outcome = train::train(&ds, &template, &config).unwrap();
    print!("{}", outcome.log_text());
    let mut confusion = vec![[0usize; 6]; 6];
    for &i in &outcome.val_indices {
        let p = nn::forward(&outcome.model, &ds.images[i]).unwrap();
        confusion[ds.labels[i]][p.top1()] += 1;
    }
    for (name, row) in ds.class_names.iter().zip(&confusion) {
        println!("{name:>12} {row:?}");
    }
    if let Some(path) = save_to {
        tivis_core::save_model(&outcome.model, path).unwrap();
    }
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
}
