//! From an observed panel to a test decision: `Σ̂`, bandwidths, kernel
//! scores, `Ĵ`, plug-in processes, the statistic and a plug-in critical value.

use serde::{Deserialize, Serialize};

use crate::dgp::Panel;
use crate::error::{Error, Result, StageExt};
use crate::kde::{fisher_info_hat, score_set, standardize_scores, BandwidthRule, KdeConfig};
use crate::limit::{clip_information, Critval, CritvalCache, CritvalMode};
use crate::linalg::{serde_rows, Mat};
use crate::process::{build_plugins, partial_sum, sigma_hat, PluginDiagnostics, PluginSet};
use crate::stats::{point_optimal, statistic, Flavor, LrInputs, TestKind, TrendCase};

/// Estimation settings for the kernel step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TestOptions {
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    /// Denominator floor `b_T`.
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub scaling: ScoreScaling,
}

/// Post-processing of the kernel scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreScaling {
    /// Scores as estimated.
    Raw,
    /// Scores multiplied by `K̂⁻¹`, the inverse of their sample cross moment
    /// with the increments (see [`standardize_scores`]).
    #[default]
    Standardized,
}

/// Where critical values come from.
#[derive(Clone, Copy)]
pub enum CritvalSource<'a> {
    Table { cache: &'a CritvalCache, mode: CritvalMode },
    /// A user-supplied value.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestDiagnostics {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(with = "serde_rows")]
    pub sigma_hat: Mat,
    /// Present for semiparametric kinds.
    pub kde: Option<PluginDiagnostics>,
    /// `K̂` before standardization, when the scores were standardized.
    #[serde(serialize_with = "opt_rows")]
    pub cross_moment: Option<Mat>,
    #[serde(with = "serde_rows")]
    pub j_hat: Mat,
    /// `Ĵ` was projected onto `{J ⪰ Σ̂⁻¹}` before simulating the critical value.
    pub j_clipped: bool,
    pub critval: Option<Critval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub trend: TrendCase,
    pub statistic: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub diagnostics: TestDiagnostics,
}

/// Estimated nuisance objects for one panel, reusable across test kinds.
#[derive(Debug, Clone)]
pub struct Estimates {
    t: usize,
    sigma_hat: Mat,
    gaussian: LrInputs,
    semipar: Option<(LrInputs, PluginDiagnostics, Option<Mat>)>,
}

fn opt_rows<S: serde::Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => serde_rows::serialize(m, s),
        None => s.serialize_none(),
    }
}

impl Estimates {
    /// Runs the estimation stages. The kernel step is skipped unless
    /// `semiparametric` is set.
    pub fn new(panel: &Panel, options: &TestOptions, semiparametric: bool) -> Result<Self> {
        if panel.len() < 3 {
            return Err(Error::config("a panel needs at least 3 observations"));
        }
        let sigma = sigma_hat(panel).stage("sigma_hat")?;
        let w = partial_sum(&panel.differences()).stage("partial_sum")?;
        let gaussian = LrInputs::gaussian(w, sigma.clone()).stage("plugins")?;
        let semipar = if semiparametric {
            let (plugins, k) = kernel_plugins(panel, &sigma, options)?;
            let diag = plugins.diagnostics.clone();
            Some((LrInputs::from_plugins(&plugins).stage("plugins")?, diag, k))
        } else {
            None
        };
        Ok(Self { t: panel.len(), sigma_hat: sigma, gaussian, semipar })
    }

    pub fn sigma_hat(&self) -> &Mat {
        &self.sigma_hat
    }

    /// Statistic inputs for `flavor`.
    pub fn inputs(&self, flavor: Flavor) -> Result<&LrInputs> {
        match flavor {
            Flavor::Gaussian => Ok(&self.gaussian),
            Flavor::Semiparametric => self
                .semipar
                .as_ref()
                .map(|(i, _, _)| i)
                .ok_or_else(|| Error::config("kernel scores were not estimated")),
        }
    }

    /// Computes the statistic of `kind` and compares it with a critical value.
    pub fn test(&self, kind: TestKind, alpha: f64, source: CritvalSource<'_>) -> Result<TestResult> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let inputs = self.inputs(kind.flavor())?;
        let semi = self.semipar.as_ref().filter(|_| kind.flavor() == Flavor::Semiparametric);
        let stat = statistic(kind, inputs).stage("statistic")?;
        let (j_used, j_clipped) = clip_information(&self.sigma_hat, inputs.j()).stage("critical_value")?;
        let critval = match source {
            CritvalSource::Fixed(_) => None,
            CritvalSource::Table { cache, mode } => {
                Some(cache.lookup(kind, &self.sigma_hat, &j_used, alpha, mode).stage("critical_value")?)
            }
        };
        let critical_value = match (&critval, source) {
            (Some(cv), _) => cv.value,
            (None, CritvalSource::Fixed(v)) => v,
            (None, CritvalSource::Table { .. }) => unreachable!(),
        };
        Ok(TestResult {
            kind,
            trend: kind.trend(),
            statistic: stat,
            critical_value,
            alpha,
            reject: stat > critical_value,
            diagnostics: TestDiagnostics {
                t: self.t,
                sigma_hat: self.sigma_hat.clone(),
                kde: semi.map(|(_, d, _)| d.clone()),
                cross_moment: semi.and_then(|(_, _, k)| k.clone()),
                j_hat: inputs.j().clone(),
                j_clipped,
                critval,
            },
        })
    }
}

impl Estimates {
    /// Feasible point-optimal statistic `L̂(C̄)`: [`point_optimal`] on the
    /// kernel plug-ins.
    pub fn point_optimal(&self, cbar: &Mat, trend: TrendCase) -> Result<f64> {
        point_optimal(cbar, trend, self.inputs(Flavor::Semiparametric)?).stage("statistic")
    }
}

/// Bandwidths, kernel scores, `Ĵ` and the plug-in processes, plus `K̂`
/// when the scores were standardized.
pub fn kernel_plugins(panel: &Panel, sigma: &Mat, options: &TestOptions) -> Result<(PluginSet, Option<Mat>)> {
    let bandwidths = options.bandwidth.bandwidths(sigma, panel.len()).stage("bandwidths")?;
    let config = KdeConfig::new(bandwidths).with_floor(options.floor);
    let mut scores = score_set(panel, &config).stage("scores")?;
    let mut k = None;
    if options.scaling == ScoreScaling::Standardized {
        let (std, km) = standardize_scores(&scores, &panel.differences()).stage("scores")?;
        scores = std;
        k = Some(km);
    }
    let j_hat = fisher_info_hat(&scores).stage("fisher_info")?;
    let plugins = build_plugins(panel, &scores, j_hat, sigma.clone()).stage("plugins")?;
    Ok((plugins, k))
}

/// Runs one test on `panel`.
pub fn run_test(
    panel: &Panel,
    kind: TestKind,
    alpha: f64,
    options: &TestOptions,
    source: CritvalSource<'_>,
) -> Result<TestResult> {
    let est = Estimates::new(panel, options, kind.flavor() == Flavor::Semiparametric)?;
    est.test(kind, alpha, source)
}

/// Runs several tests on `panel`, estimating the scores at most once.
pub fn run_tests(
    panel: &Panel,
    kinds: &[TestKind],
    alpha: f64,
    options: &TestOptions,
    source: CritvalSource<'_>,
) -> Result<Vec<TestResult>> {
    let semi = kinds.iter().any(|k| k.flavor() == Flavor::Semiparametric);
    let est = Estimates::new(panel, options, semi)?;
    kinds.iter().map(|&k| est.test(k, alpha, source)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_panel, EcmConfig, InnovationSpec};
    use crate::linalg::Vector;

    fn panel(seed: u64) -> Panel {
        let cfg = EcmConfig::null(2, 120, seed);
        generate_panel(&cfg, &InnovationSpec::gaussian(Mat::identity(2, 2))).unwrap()
    }

    #[test]
    fn fixed_critical_value_decides() {
        let p = panel(1);
        let opts = TestOptions::default();
        let res = run_tests(&p, &TestKind::ALL, 0.05, &opts, CritvalSource::Fixed(1e9)).unwrap();
        assert_eq!(res.len(), 4);
        for r in &res {
            assert!(!r.reject);
            assert!(r.statistic >= 0.0);
            assert_eq!(r.diagnostics.kde.is_some(), r.kind.flavor() == Flavor::Semiparametric);
        }
        let single = run_test(&p, TestKind::SlSemipar, 0.05, &opts, CritvalSource::Fixed(0.0)).unwrap();
        assert_eq!(single.statistic, res[3].statistic);
        assert!(single.reject);
    }

    #[test]
    fn stage_labels_surface() {
        let flat = Panel::external(Mat::from_fn(2, 20, |i, t| (i + t) as f64)).unwrap();
        let err = run_test(&flat, TestKind::JohansenGauss, 0.05, &TestOptions::default(), CritvalSource::Fixed(1.0))
            .unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "sigma_hat", .. }), "{err}");
        let err = run_test(&panel(2), TestKind::JohansenGauss, 1.5, &TestOptions::default(), CritvalSource::Fixed(1.0))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dyadic_level_shift_is_bit_identical() {
        let base = panel(3);
        let y = base.y.map(|v| (v * 4096.0).round() / 4096.0);
        let a = Panel::external(y).unwrap();
        let b = a.shifted(&Vector::from_vec(vec![256.0, -0.5]));
        let cache = CritvalCache::new(100, 1000, 0);
        let src = CritvalSource::Table { cache: &cache, mode: CritvalMode::Cache };
        let ra = run_tests(&a, &TestKind::ALL, 0.05, &TestOptions::default(), src).unwrap();
        let rb = run_tests(&b, &TestKind::ALL, 0.05, &TestOptions::default(), src).unwrap();
        assert_eq!(ra, rb);
    }
}
