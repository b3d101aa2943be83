//! Baselines against MRCo and its ablations on the synthetic benchmark:
//! 500 raw training sentences, 3000 augmentations with 30% of their labels
//! flipped, five seeds. Prints mean ± sample std of final dev accuracy.
//!
//! cargo run --release --example train_compare [key=value ...]

use mrco::config::{ExperimentConfig, Method};
use mrco::harness::{prepare_data, run_seed, RunResult};

fn main() -> mrco::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.methods = vec![Method::Plain, Method::Aug, Method::AugFilter, Method::MrcoNoContrastive, Method::MrcoFifo, Method::Mrco];
    for arg in std::env::args().skip(1) {
        cfg.apply_override(&arg)?;
    }
    let data = prepare_data(&cfg, false)?;
    println!("{:<22} {:>18} {:>18}", "method", "dev accuracy", "dev mcc");
    for &method in &cfg.methods {
        let runs = cfg
            .seeds
            .iter()
            .map(|&seed| run_seed(&cfg, &data, method, seed, None))
            .collect::<mrco::Result<Vec<_>>>()?;
        let r = RunResult { method, runs };
        let (a, asd) = r.accuracy();
        let (m, msd) = r.mcc();
        println!("{:<22} {a:>9.4} ± {asd:<6.4} {m:>9.4} ± {msd:<6.4}", method.name());
    }
    Ok(())
}
