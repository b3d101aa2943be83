//! Minimizing the reweighted task loss jointly over both networks drives
//! every augmentation weight to zero; the meta step keeps them alive. Both
//! runs repeat one fixed batch.
//!
//! cargo run --release --example collapse [key=value ...]

use mrco::config::ExperimentConfig;
use mrco::harness::{collapse_trace, prepare_data, CollapseSettings};

fn main() -> mrco::Result<()> {
    let mut cfg = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        cfg.apply_override(&arg)?;
    }
    let data = prepare_data(&cfg, false)?;
    let settings = CollapseSettings {
        record_every: 250,
        ..CollapseSettings::default()
    };
    println!("{:>6} {:>10} {:>10}", "step", "joint", "bilevel");
    for p in collapse_trace(&cfg, &data, &settings)? {
        println!("{:>6} {:>10.4} {:>10.4}", p.step, p.joint, p.bilevel);
    }
    Ok(())
}
