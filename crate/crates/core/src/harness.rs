//! Monte Carlo size and power studies over a grid of local alternatives.
//!
//! Replication `r` draws its innovations from `derive_seed(master_seed, [r])`
//! at every `c`, so the curves are built on common random numbers and the
//! output does not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{PowerCurve, PowerRow};
use crate::dgp::{generate_panel, local_direction, EcmConfig, InnovationSpec};
use crate::error::{Error, Result};
use crate::limit::{CritvalCache, CritvalMode};
use crate::linalg::{Mat, Vector};
use crate::pipeline::{run_tests, CritvalSource, TestOptions, TestResult};
use crate::rng::derive_seed;
use crate::stats::TestKind;

/// Desk-scale replication count.
pub const DESK_REPS: usize = 2000;
pub const FULL_SCALE_REPS: usize = 20_000;
pub const FULL_SCALE_T: usize = 2500;

/// Limit-experiment settings for the per-replication critical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritvalSettings {
    pub mode: CritvalMode,
    pub grid_n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Persisted tables; `None` keeps them in memory.
    pub cache: Option<PathBuf>,
}

impl Default for CritvalSettings {
    fn default() -> Self {
        Self { mode: CritvalMode::Cache, grid_n: 1000, reps: 5000, seed: 20_240_601, cache: None }
    }
}

impl CritvalSettings {
    pub fn open(&self) -> Result<CritvalCache> {
        match &self.cache {
            Some(path) => CritvalCache::open(path, self.grid_n, self.reps, self.seed),
            None => Ok(CritvalCache::new(self.grid_n, self.reps, self.seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub innovations: InnovationSpec,
    /// Level `mu`; zeros when absent.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    /// Trend slope `tau` on the raw scale; zeros when absent.
    #[serde(default)]
    pub tau: Option<Vec<f64>>,
    pub c_grid: Vec<f64>,
    /// `C = c * direction`; the rank-one design direction when absent.
    #[serde(default)]
    pub direction: Option<Vec<Vec<f64>>>,
    pub tests: Vec<TestKind>,
    pub alpha: f64,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub options: TestOptions,
    #[serde(default)]
    pub critvals: CritvalSettings,
    /// Largest tolerated fraction of failed replications.
    #[serde(default = "default_budget")]
    pub failure_budget: f64,
}

fn default_budget() -> f64 {
    0.01
}

impl StudyConfig {
    /// Desk-scale defaults for `p = innovations.dim()`.
    pub fn desk(innovations: InnovationSpec, t: usize, c_grid: Vec<f64>, tests: Vec<TestKind>) -> Self {
        Self {
            t,
            innovations,
            mu: None,
            tau: None,
            c_grid,
            direction: None,
            tests,
            alpha: 0.05,
            reps: DESK_REPS,
            master_seed: 1,
            options: TestOptions::default(),
            critvals: CritvalSettings::default(),
            failure_budget: default_budget(),
        }
    }

    pub fn p(&self) -> usize {
        self.innovations.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.innovations.validate()?;
        let p = self.p();
        if self.reps < 100 {
            return Err(Error::config("a study needs at least 100 replications"));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(c.is_finite() && *c <= 0.0)) {
            return Err(Error::config("c_grid must be a non-empty list of non-positive numbers"));
        }
        if self.tests.is_empty() {
            return Err(Error::config("no tests selected"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.failure_budget) {
            return Err(Error::config("failure_budget must lie in [0, 1)"));
        }
        for v in [&self.mu, &self.tau].into_iter().flatten() {
            if v.len() != p {
                return Err(Error::dim("mu and tau must have length p"));
            }
        }
        self.direction()?;
        EcmConfig::null(p, self.t, 0).validate()
    }

    pub fn direction(&self) -> Result<Mat> {
        let p = self.p();
        match &self.direction {
            None => Ok(local_direction(p)),
            Some(rows) => {
                let m = crate::linalg::from_rows(rows)?;
                if m.shape() != (p, p) {
                    return Err(Error::dim("direction must be p x p"));
                }
                Ok(m)
            }
        }
    }

    fn ecm(&self, c: f64, rep: usize, direction: &Mat) -> EcmConfig {
        let p = self.p();
        let vec = |v: &Option<Vec<f64>>| v.as_ref().map_or_else(|| Vector::zeros(p), |x| Vector::from_vec(x.clone()));
        EcmConfig {
            p,
            t: self.t,
            c: direction * c,
            mu: vec(&self.mu),
            tau: vec(&self.tau),
            seed: self.rep_seed(rep),
        }
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.master_seed, &[rep as u64])
    }
}

/// A replication that failed and was left out of the counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedRep {
    pub c: f64,
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

/// Per-test averages over the valid replications at one `c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSummary {
    pub c: f64,
    pub test: TestKind,
    pub valid: usize,
    pub mean_statistic: f64,
    pub mean_critical_value: f64,
    /// Fraction of replications whose `Ĵ` needed clipping.
    pub clipped_fraction: f64,
    pub underflow_total: usize,
    pub degenerate_scores: usize,
    /// Distinct critical-value tables used.
    pub tables: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyOutput {
    pub curve: PowerCurve,
    pub excluded: Vec<ExcludedRep>,
    pub summaries: Vec<TestSummary>,
}

fn summarize(c: f64, test: TestKind, results: &[&TestResult]) -> TestSummary {
    let n = results.len().max(1) as f64;
    let mut tables: Vec<&str> =
        results.iter().filter_map(|r| r.diagnostics.critval.as_ref().map(|cv| cv.key.as_str())).collect();
    tables.sort_unstable();
    tables.dedup();
    TestSummary {
        c,
        test,
        valid: results.len(),
        mean_statistic: results.iter().map(|r| r.statistic).sum::<f64>() / n,
        mean_critical_value: results.iter().map(|r| r.critical_value).sum::<f64>() / n,
        clipped_fraction: results.iter().filter(|r| r.diagnostics.j_clipped).count() as f64 / n,
        underflow_total: results.iter().filter_map(|r| r.diagnostics.kde.as_ref()).map(|d| d.underflow_count).sum(),
        degenerate_scores: results
            .iter()
            .filter(|r| r.diagnostics.kde.as_ref().is_some_and(|d| d.degenerate_scores))
            .count(),
        tables: tables.len(),
    }
}

/// Runs the study with critical values from `cache`.
pub fn run_study_with(config: &StudyConfig, cache: &CritvalCache) -> Result<StudyOutput> {
    config.validate()?;
    let direction = config.direction()?;
    let source = CritvalSource::Table { cache, mode: config.critvals.mode };
    let mut curve = PowerCurve::default();
    let mut excluded = Vec::new();
    let mut summaries = Vec::new();
    for &c in &config.c_grid {
        let outcomes: Vec<Result<Vec<TestResult>>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let panel = generate_panel(&config.ecm(c, rep, &direction), &config.innovations)?;
                run_tests(&panel, &config.tests, config.alpha, &config.options, source)
            })
            .collect();
        let mut valid = Vec::with_capacity(outcomes.len());
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(r) => valid.push(r),
                Err(e) => excluded.push(ExcludedRep { c, rep, seed: config.rep_seed(rep), error: e.to_string() }),
            }
        }
        let failed = config.reps - valid.len();
        if failed as f64 > config.failure_budget * config.reps as f64 {
            return Err(Error::FailureBudget { failed, total: config.reps });
        }
        for (i, &kind) in config.tests.iter().enumerate() {
            let results: Vec<&TestResult> = valid.iter().map(|r| &r[i]).collect();
            let rejections = results.iter().filter(|r| r.reject).count();
            curve.rows.push(PowerRow::from_counts(
                c,
                kind.as_str(),
                kind.trend(),
                rejections,
                results.len(),
                Some(config.t),
            ));
            summaries.push(summarize(c, kind, &results));
        }
    }
    Ok(StudyOutput { curve, excluded, summaries })
}

/// Runs the study, opening (and afterwards saving) the configured cache.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutput> {
    let cache = config.critvals.open()?;
    let out = run_study_with(config, &cache)?;
    cache.save()?;
    Ok(out)
}

#[derive(Serialize)]
struct StudyRecord<'a> {
    config: &'a StudyConfig,
    seeds: Seeds,
    environment: BTreeMap<&'static str, String>,
    excluded: &'a [ExcludedRep],
    diagnostics: &'a [TestSummary],
}

#[derive(Serialize)]
struct Seeds {
    master: u64,
    derivation: &'static str,
    first: Vec<u64>,
}

/// Writes `power.csv` and `study.json` into `dir`.
pub fn write_outputs(dir: &Path, config: &StudyConfig, out: &StudyOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    out.curve.write_csv(fs::File::create(dir.join("power.csv"))?)?;
    let mut environment = BTreeMap::new();
    environment.insert("package", env!("CARGO_PKG_NAME").to_string());
    environment.insert("version", env!("CARGO_PKG_VERSION").to_string());
    environment.insert("os", std::env::consts::OS.to_string());
    environment.insert("arch", std::env::consts::ARCH.to_string());
    let record = StudyRecord {
        config,
        seeds: Seeds {
            master: config.master_seed,
            derivation: "splitmix64 chain over (master_seed, rep)",
            first: (0..config.reps.min(5)).map(|r| config.rep_seed(r)).collect(),
        },
        environment,
        excluded: &out.excluded,
        diagnostics: &out.summaries,
    };
    fs::write(dir.join("study.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_study_is_reproducible() {
        let mut cfg = StudyConfig::desk(
            InnovationSpec::gaussian(Mat::identity(2, 2)),
            60,
            vec![0.0, -10.0],
            vec![TestKind::JohansenGauss, TestKind::SlGauss],
        );
        cfg.reps = 100;
        cfg.critvals.reps = 1000;
        cfg.critvals.grid_n = 100;
        let cache = cfg.critvals.open().unwrap();
        let a = run_study_with(&cfg, &cache).unwrap();
        let b = run_study_with(&cfg, &cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.curve.rows.len(), 4);
        assert!(a.excluded.is_empty());
        assert!(a.curve.rate("johansen-gauss", -10.0) > a.curve.rate("johansen-gauss", 0.0));
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &cfg, &a).unwrap();
        let csv = fs::read_to_string(dir.path().join("power.csv")).unwrap();
        assert!(csv.starts_with("c,test,trend,rate,se,reps,T\n"));
        let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("study.json")).unwrap()).unwrap();
        assert_eq!(json["config"]["reps"], 100);
    }

    #[test]
    fn config_validation() {
        let base = StudyConfig::desk(InnovationSpec::gaussian(Mat::identity(2, 2)), 100, vec![0.0], vec![TestKind::JohansenGauss]);
        assert!(base.validate().is_ok());
        let mut bad = base.clone();
        bad.c_grid = vec![1.0];
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.reps = 50;
        assert!(bad.validate().is_err());
        let mut bad = base;
        bad.mu = Some(vec![1.0]);
        assert!(bad.validate().is_err());
    }
}
