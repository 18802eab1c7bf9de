//! Finite-sample central sequence against its Brownian limit (Gaussian
//! innovations), coupled through a shared fine path.

use semicoint::dgp::make_local_c;
use semicoint::limit::labf_diagnostic;
use semicoint::linalg::Mat;

fn main() -> semicoint::Result<()> {
    let c = make_local_c(-0.5, 2);
    let report = labf_diagnostic(&[100, 400, 1600], &Mat::identity(2, 2), &c, 1000, 2, 3)?;
    println!("{:>6}{:>12}{:>12}{:>12}", "T", "var Δ", "moment d", "L2 d");
    for row in &report.rows {
        println!("{:>6}{:>12.4}{:>12.5}{:>12.5}", row.t, row.var_delta, row.moment_distance, row.l2_distance);
    }
    let lim = &report.limit;
    println!("limit: var Δ = {:.4} (exact {:.4})", lim.var_delta, lim.var_delta_exact);
    println!("E[exp L] = {:.4} ± {:.4}", lim.exp_l_mean, lim.exp_l_se);
    Ok(())
}
