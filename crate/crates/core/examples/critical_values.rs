//! Null quantiles of the trace statistics in the limit experiment.
//!
//! The Gaussian statistics have a pivotal null law. The semiparametric ones
//! depend on `(Σ, J)` through the eigenvalues of `L'JL` (`Σ = LL'`), so a
//! bivariate t3 law gives different quantiles.

use semicoint::dgp::InnovationSpec;
use semicoint::limit::{critical_value, LimitSpec};
use semicoint::linalg::Mat;
use semicoint::stats::TestKind;

fn main() -> semicoint::Result<()> {
    let t3 = InnovationSpec::student_t(3.0, Mat::identity(2, 2));
    let specs = [
        ("gaussian", LimitSpec::gaussian(Mat::identity(2, 2), 1000, 5000, 1)?),
        ("t3", LimitSpec::new(t3.sigma.clone(), t3.fisher_information()?, 1000, 5000, 1)?),
    ];
    println!("{:<10}{:<18}{:>8}{:>8}{:>8}", "law", "test", "10%", "5%", "1%");
    for (name, spec) in &specs {
        for kind in TestKind::ALL {
            let q: Vec<f64> =
                [0.10, 0.05, 0.01].iter().map(|&a| critical_value(kind, spec, a)).collect::<Result<_, _>>()?;
            println!("{name:<10}{:<18}{:>8.2}{:>8.2}{:>8.2}", kind.as_str(), q[0], q[1], q[2]);
        }
    }
    Ok(())
}
