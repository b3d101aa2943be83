//! Trains MRCo on the synthetic benchmark with 30% of the augmented labels
//! flipped and reports how the learned weights separate clean from flipped
//! augmentations, per seed.
//!
//! cargo run --release --example weight_separation [key=value ...]

use mrco::config::{ExperimentConfig, Method};
use mrco::harness::{prepare_data, run_seed};

fn main() -> mrco::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.methods = vec![Method::Mrco];
    cfg.augment.flip_rate = 0.3;
    for arg in std::env::args().skip(1) {
        cfg.apply_override(&arg)?;
    }
    let data = prepare_data(&cfg, false)?;
    let flipped = data.augmented.examples.iter().filter(|e| e.is_flipped()).count();
    println!("{} augmented examples, {flipped} flipped", data.augmented.len());

    let start = std::time::Instant::now();
    let mut below = 0;
    let mut gaps = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_seed(&cfg, &data, Method::Mrco, seed, None)?;
        let w = run.weights.as_ref().expect("mrco learns weights");
        let (clean, flip) = (w.clean_mean().unwrap_or(f64::NAN), w.flipped_mean().unwrap_or(f64::NAN));
        let gap = clean - flip;
        if flip < clean {
            below += 1;
        }
        gaps.push(gap);
        println!(
            "seed {seed}: clean {clean:.4} flipped {flip:.4} gap {gap:+.4} dev acc {:.4}",
            run.final_eval().accuracy
        );
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!(
        "flipped below clean in {below}/{} seeds, mean gap {mean_gap:.4}, {:.1?}",
        cfg.seeds.len(),
        start.elapsed()
    );
    Ok(())
}
