//! Builds the augmented corpus for the synthetic benchmark and shows what
//! each augmenter produced: counts, flipped labels, readability and a few
//! samples next to their originals.
//!
//! cargo run --release --example augment_corpus [key=value ...]

use std::collections::BTreeMap;

use mrco::augment::flesch_score;
use mrco::config::ExperimentConfig;
use mrco::harness::prepare_data;

fn main() -> mrco::Result<()> {
    let mut cfg = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        cfg.apply_override(&arg)?;
    }
    let data = prepare_data(&cfg, false)?;
    let aug = &data.augmented;
    println!("{} raw, {} augmented, vocabulary {}", data.train.len(), aug.len(), data.vocab.len());

    // augmenter -> (count, flipped, readability sum)
    let mut by: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for e in &aug.examples {
        let name = e.augmenter.split('+').next().unwrap_or(&e.augmenter);
        let s = by.entry(name).or_default();
        s.0 += 1;
        s.1 += usize::from(e.is_flipped());
        s.2 += flesch_score(&e.text);
    }
    println!("{:<10} {:>6} {:>8} {:>12}", "augmenter", "count", "flipped", "readability");
    for (name, (n, f, r)) in &by {
        println!("{name:<10} {n:>6} {f:>8} {:>12.1}", r / *n as f64);
    }

    println!();
    for e in aug.examples.iter().step_by(aug.len() / 5 + 1).take(5) {
        let origin = data.train.examples.iter().find(|r| r.id == e.origin_id).expect("origin exists");
        println!("[{}] {}", data.train.label_names[origin.label], origin.text());
        println!("  {} [{}] {}", e.augmenter, aug.label_names[e.label], e.text);
    }
    Ok(())
}
