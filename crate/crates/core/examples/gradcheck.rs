//! Finite-difference check of every layer and both training losses.

use diffcast::gradsuite::{gradient_suite, SUITE_PROBES, SUITE_TOLERANCE};

fn main() -> diffcast::Result<()> {
    let report = gradient_suite(0, SUITE_PROBES)?;
    for (component, group, probes, err) in report.rows() {
        println!("{component:<16} {group:<40} {probes:>3} probes  {err:.2e}");
    }
    println!(
        "worst relative error {:.2e} (tolerance {SUITE_TOLERANCE:e}): {}",
        report.max_rel_error(),
        if report.passes(SUITE_TOLERANCE) { "pass" } else { "FAIL" }
    );
    Ok(())
}
