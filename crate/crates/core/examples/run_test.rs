//! Runs all four rank tests on one heavy-tailed panel.
//!
//! Critical values come from the limit experiment at the plug-in
//! `(Σ̂, Ĵ)`; the first call builds the shared null tables.

use semicoint::dgp::{generate_panel, make_local_c, EcmConfig, InnovationSpec};
use semicoint::limit::{CritvalCache, CritvalMode};
use semicoint::linalg::Mat;
use semicoint::pipeline::{run_tests, CritvalSource, TestOptions};
use semicoint::stats::TestKind;

fn main() -> semicoint::Result<()> {
    let config = EcmConfig { c: make_local_c(-10.0, 2), ..EcmConfig::null(2, 500, 11) };
    let panel = generate_panel(&config, &InnovationSpec::student_t(3.0, Mat::identity(2, 2)))?;

    let cache = CritvalCache::new(1000, 5000, 20_240_601);
    let source = CritvalSource::Table { cache: &cache, mode: CritvalMode::Cache };
    let results = run_tests(&panel, &TestKind::ALL, 0.05, &TestOptions::default(), source)?;

    println!("{:<18}{:>10}{:>10}  decision", "test", "stat", "cv");
    for r in &results {
        let decision = if r.reject { "reject" } else { "accept" };
        println!("{:<18}{:>10.3}{:>10.3}  {decision}", r.kind.as_str(), r.statistic, r.critical_value);
    }
    println!("Ĵ = {}", results[1].diagnostics.j_hat);
    Ok(())
}
