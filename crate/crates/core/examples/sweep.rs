//! A small grid over the contrastive weight and queue size, one seed and
//! three epochs per point. Results land in `<tmp>/mrco-sweep/sweep.csv`.
//!
//! cargo run --release --example sweep [key=value ...]

use mrco::config::{ExperimentConfig, Method};
use mrco::harness::run_sweep;

fn main() -> mrco::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.methods = vec![Method::Mrco];
    cfg.seeds = vec![0];
    cfg.train.epochs = 3;
    cfg.sweep.lambda = vec![0.0, 0.1, 1.0];
    cfg.sweep.n_neg = vec![16, 64];
    for arg in std::env::args().skip(1) {
        cfg.apply_override(&arg)?;
    }
    let out = std::env::temp_dir().join("mrco-sweep");
    std::fs::create_dir_all(&out)?;
    let points = run_sweep(&cfg, &out, &|msg: &str| eprintln!("{msg}"))?;
    println!("{:>6} {:>7} {:>10}", "n_neg", "lambda", "dev acc");
    for (p, results) in &points {
        for r in results {
            println!("{:>6} {:>7} {:>10.4}", p.n_neg, p.lambda, r.accuracy().0);
        }
    }
    println!("written to {}", out.join("sweep.csv").display());
    Ok(())
}
