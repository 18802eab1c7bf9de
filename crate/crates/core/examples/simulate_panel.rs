//! Simulates a trending bivariate panel under a local alternative and writes
//! it as CSV to stdout.

use semicoint::dgp::{generate_panel, make_local_c, EcmConfig, InnovationSpec};
use semicoint::linalg::{Mat, Vector};

fn main() -> semicoint::Result<()> {
    let config = EcmConfig {
        p: 2,
        t: 250,
        c: make_local_c(-5.0, 2),
        mu: Vector::from_vec(vec![10.0, -3.0]),
        tau: Vector::from_vec(vec![0.05, 0.02]),
        seed: 7,
    };
    let spec = InnovationSpec::student_t(3.0, Mat::identity(2, 2));
    let panel = generate_panel(&config, &spec)?;
    eprintln!("simulated {} observations of a {}-dimensional series", panel.len(), panel.dim());
    panel.write_csv(std::io::stdout().lock())
}
