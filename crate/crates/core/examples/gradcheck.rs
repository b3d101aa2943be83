//! Finite-difference verification of the autodiff primitives, the composed
//! losses and the meta-gradient.
//!
//! cargo run --release --example gradcheck

use mrco::verify::{format_table, gradient_suite, meta_gradient_check, SuiteSettings};

fn main() -> mrco::Result<()> {
    let start = std::time::Instant::now();
    let cases = gradient_suite(&SuiteSettings::default())?;
    print!("{}", format_table(&cases));
    let meta = meta_gradient_check(0, 0.5, 1e-5, 1e-3)?;
    println!(
        "meta-gradient: {} main + {} reweight parameters, max rel. error {:.3e} ({})",
        meta.main_params,
        meta.reweight_params,
        meta.max_rel_error,
        if meta.passed() { "pass" } else { "FAIL" }
    );
    println!("{:.1?}", start.elapsed());
    Ok(())
}
