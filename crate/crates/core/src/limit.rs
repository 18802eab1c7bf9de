//! The limit experiment: correlated Brownian motions `(W_ε, W_ℓ)` with
//! `Var(W_ε(1)) = Σ`, `Cov(W_ε(1), W_ℓ(1)) = I` and `Var(W_ℓ(1)) = J`, their
//! Ornstein-Uhlenbeck alternatives, null quantiles of the test statistics,
//! point-optimal power envelopes, and a check of the likelihood expansion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{PowerCurve, PowerRow, ENVELOPE};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, is_symmetric, serde_rows, spd_inverse, sym_apply, sym_eigenvalues, sym_sqrt_psd, Mat,
    Vector,
};
use crate::process::{bridge, StepProcess};
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::stats::{point_optimal, statistic, Flavor, LrInputs, TestKind, TrendCase};

/// Smallest eigenvalue of `[[Σ, I], [I, J]]` accepted as positive semidefinite.
pub const COHERENCE_TOL: f64 = 1e-10;

/// Default path discretization.
pub const DEFAULT_GRID: usize = 10_000;

/// Log-spacing of the eigenvalue fingerprint used to share critical values.
pub const FINGERPRINT_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    #[serde(with = "serde_rows")]
    pub sigma: Mat,
    #[serde(with = "serde_rows")]
    pub j: Mat,
    pub grid_n: usize,
    pub reps: usize,
    pub seed: u64,
}

impl LimitSpec {
    pub fn new(sigma: Mat, j: Mat, grid_n: usize, reps: usize, seed: u64) -> Result<Self> {
        let spec = Self { sigma, j, grid_n, reps, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// The Gaussian case `J = Σ⁻¹`.
    pub fn gaussian(sigma: Mat, grid_n: usize, reps: usize, seed: u64) -> Result<Self> {
        let j = spd_inverse(&sigma)?;
        Self::new(sigma, j, grid_n, reps, seed)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.sigma.nrows();
        if self.sigma.shape() != (p, p) || self.j.shape() != (p, p) || p == 0 {
            return Err(Error::dim("sigma and j must be square and of equal size"));
        }
        if !is_symmetric(&self.sigma, 1e-12) || !is_symmetric(&self.j, 1e-10) {
            return Err(Error::config("sigma and j must be symmetric"));
        }
        if self.grid_n < 100 {
            return Err(Error::config("grid_n must be at least 100"));
        }
        if self.reps == 0 {
            return Err(Error::config("reps must be positive"));
        }
        check_coherence(&self.sigma, &self.j)?;
        Ok(())
    }
}

/// Smallest eigenvalue of `[[Σ, I], [I, J]]`; errors when below `-COHERENCE_TOL`.
pub fn check_coherence(sigma: &Mat, j: &Mat) -> Result<f64> {
    cholesky_lower(sigma)?;
    let p = sigma.nrows();
    let mut block = Mat::zeros(2 * p, 2 * p);
    block.view_mut((0, 0), (p, p)).copy_from(sigma);
    block.view_mut((p, p), (p, p)).copy_from(j);
    for i in 0..p {
        block[(i, p + i)] = 1.0;
        block[(p + i, i)] = 1.0;
    }
    let min = sym_eigenvalues(&block)[0];
    if min < -COHERENCE_TOL {
        return Err(Error::IncoherentPair(min));
    }
    Ok(min)
}

/// Projects `J` onto `{J : J ⪰ Σ⁻¹}` by dropping the negative part of
/// `J - Σ⁻¹`. Returns the projected matrix and whether anything changed.
pub fn clip_information(sigma: &Mat, j: &Mat) -> Result<(Mat, bool)> {
    let sigma_inv = spd_inverse(sigma)?;
    let gap = j - &sigma_inv;
    if sym_eigenvalues(&gap)[0] >= 0.0 {
        return Ok((j.clone(), false));
    }
    Ok((sigma_inv + sym_apply(&gap, |x| x.max(0.0)), true))
}

/// Joint paths on the grid `k = 0..=grid_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitDraw {
    pub w_eps: StepProcess,
    pub w_lf: StepProcess,
}

impl LimitDraw {
    /// Statistic inputs `(W_ε, bridge(W_ℓ), Σ, J)`.
    pub fn inputs(&self, sigma: &Mat, j: &Mat) -> Result<LrInputs> {
        LrInputs::new(self.w_eps.clone(), bridge(&self.w_lf), sigma.clone(), j.clone())
    }
}

/// Precomputed factors for drawing paths under one `(Σ, J)`.
struct Sampler {
    p: usize,
    n: usize,
    chol: Mat,
    sigma_inv: Mat,
    root: Mat,
    j: Mat,
}

impl Sampler {
    fn new(spec: &LimitSpec) -> Result<Self> {
        spec.validate()?;
        let sigma_inv = spd_inverse(&spec.sigma)?;
        Ok(Self {
            p: spec.dim(),
            n: spec.grid_n,
            chol: cholesky_lower(&spec.sigma)?,
            root: sym_sqrt_psd(&(&spec.j - &sigma_inv)),
            sigma_inv,
            j: spec.j.clone(),
        })
    }

    /// Euler scheme for
    /// `dW_ε = (C W_ε + d_C(u) δ) du + dZ_ε`, `dW_ℓ = J (C W_ε + d_C(u) δ) du + dZ_ℓ`.
    fn draw(&self, drift: Option<(&Mat, &Vector)>, seed: u64) -> LimitDraw {
        let (p, n) = (self.p, self.n);
        let mut rng = rng_from_seed(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let step = 1.0 / n as f64;
        let mut we = Mat::zeros(p, n + 1);
        let mut wl = Mat::zeros(p, n + 1);
        let (ch, si, rt, jm) =
            (self.chol.as_slice(), self.sigma_inv.as_slice(), self.root.as_slice(), self.j.as_slice());
        let drift = drift.map(|(c, d)| (c.as_slice(), d.as_slice()));
        let (mut g1, mut g2) = (vec![0.0; p], vec![0.0; p]);
        let (mut ze, mut zl, mut mu) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
        let (es, ls) = (we.as_mut_slice(), wl.as_mut_slice());
        for k in 0..n {
            for i in 0..p {
                g1[i] = rng.sample(StandardNormal);
                g2[i] = rng.sample(StandardNormal);
            }
            // column-major: entry (a, b) of a p x p factor sits at b * p + a
            for a in 0..p {
                ze[a] = scale * (0..p).map(|b| ch[b * p + a] * g1[b]).sum::<f64>();
            }
            for a in 0..p {
                zl[a] = (0..p).map(|b| si[b * p + a] * ze[b]).sum::<f64>()
                    + scale * (0..p).map(|b| rt[b * p + a] * g2[b]).sum::<f64>();
            }
            let (cur, next) = (k * p, (k + 1) * p);
            if let Some((c, delta)) = drift {
                let u = k as f64 * step;
                // C w + (I - u C) δ
                for a in 0..p {
                    mu[a] = delta[a]
                        + (0..p).map(|b| c[b * p + a] * (es[cur + b] - u * delta[b])).sum::<f64>();
                }
                for a in 0..p {
                    es[next + a] = es[cur + a] + ze[a] + step * mu[a];
                    ls[next + a] =
                        ls[cur + a] + zl[a] + step * (0..p).map(|b| jm[b * p + a] * mu[b]).sum::<f64>();
                }
            } else {
                for a in 0..p {
                    es[next + a] = es[cur + a] + ze[a];
                    ls[next + a] = ls[cur + a] + zl[a];
                }
            }
        }
        LimitDraw {
            w_eps: StepProcess::new(we, 0).expect("grid starts at zero"),
            w_lf: StepProcess::new(wl, 0).expect("grid starts at zero"),
        }
    }
}

/// One draw of `(W_ε, W_ℓ)` under the null.
pub fn draw_null_paths(spec: &LimitSpec, rep_seed: u64) -> Result<LimitDraw> {
    Ok(Sampler::new(spec)?.draw(None, rep_seed))
}

/// One draw under the local alternative `(C, δ)`; at `C = 0, δ = 0` this is
/// [`draw_null_paths`] with the same stream.
pub fn simulate_ou(spec: &LimitSpec, c: &Mat, delta: &Vector, rep_seed: u64) -> Result<LimitDraw> {
    let p = spec.dim();
    if c.shape() != (p, p) || delta.len() != p {
        return Err(Error::dim("C and delta must match sigma"));
    }
    let sampler = Sampler::new(spec)?;
    let null = c.iter().all(|&v| v == 0.0) && delta.iter().all(|&v| v == 0.0);
    Ok(sampler.draw(if null { None } else { Some((c, delta)) }, rep_seed))
}

/// Null statistics of one kind, sorted ascending, plus the number of draws
/// whose information matrix was degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSample {
    pub sorted: Vec<f64>,
    pub failures: usize,
}

impl NullSample {
    pub fn quantile(&self, alpha: f64) -> f64 {
        quantile(&self.sorted, alpha)
    }
}

/// Empirical `1 - alpha` quantile: the `⌈(1-α)R⌉`-th order statistic.
pub fn quantile(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let r = sorted.len();
    let idx = ((1.0 - alpha) * r as f64).ceil() as usize;
    sorted[idx.clamp(1, r) - 1]
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn sort_sample(results: Vec<Option<f64>>) -> Result<NullSample> {
    let total = results.len();
    let mut sorted: Vec<f64> = results.into_iter().flatten().collect();
    let failures = total - sorted.len();
    if failures * 100 > total {
        return Err(Error::FailureBudget { failed: failures, total });
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(NullSample { sorted, failures })
}

fn kinds_on_draw(kinds: &[TestKind], draw: &LimitDraw, spec: &LimitSpec) -> Vec<Option<f64>> {
    match draw.inputs(&spec.sigma, &spec.j) {
        Ok(inputs) => kinds.iter().map(|&k| statistic(k, &inputs).ok()).collect(),
        Err(_) => vec![None; kinds.len()],
    }
}

/// Simulates the null laws of `kinds` at `spec` on shared draws, one seed
/// per replication.
pub fn null_samples(kinds: &[TestKind], spec: &LimitSpec, parallel: bool) -> Result<Vec<NullSample>> {
    let sampler = Sampler::new(spec)?;
    let one = |rep: usize| {
        let draw = sampler.draw(None, derive_seed(spec.seed, &[rep as u64]));
        kinds_on_draw(kinds, &draw, spec)
    };
    let per_rep: Vec<Vec<Option<f64>>> = if parallel {
        (0..spec.reps).into_par_iter().map(one).collect()
    } else {
        (0..spec.reps).map(one).collect()
    };
    (0..kinds.len()).map(|i| sort_sample(per_rep.iter().map(|r| r[i]).collect())).collect()
}

/// Simulates the null law of `kind` at `spec`.
pub fn null_sample(kind: TestKind, spec: &LimitSpec, parallel: bool) -> Result<NullSample> {
    Ok(null_samples(&[kind], spec, parallel)?.remove(0))
}

/// Null law of the point-optimal statistic at `C̄ = cbar`.
pub fn point_optimal_null(spec: &LimitSpec, cbar: &Mat, trend: TrendCase) -> Result<NullSample> {
    let sampler = Sampler::new(spec)?;
    let results: Vec<Option<f64>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let draw = sampler.draw(None, derive_seed(spec.seed, &[0, rep as u64]));
            let inputs = draw.inputs(&spec.sigma, &spec.j).ok()?;
            point_optimal(cbar, trend, &inputs).ok()
        })
        .collect();
    sort_sample(results)
}

/// `1 - alpha` null quantile of `kind`, simulated at exactly `spec`.
pub fn critical_value(kind: TestKind, spec: &LimitSpec, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if spec.reps < 1000 {
        return Err(Error::config("critical values need at least 1000 replications"));
    }
    let seeded = LimitSpec { seed: derive_seed(spec.seed, &[fnv1a(kind.as_str().as_bytes())]), ..spec.clone() };
    Ok(null_sample(kind, &seeded, true)?.quantile(alpha))
}

/// Rounded log-eigenvalues of `Σ^{1/2} J Σ^{1/2}`, ascending.
///
/// The null law of every statistic depends on `(Σ, J)` only through these
/// eigenvalues; Gaussian kinds do not depend on them at all.
pub fn fingerprint(sigma: &Mat, j: &Mat) -> Result<Vec<i64>> {
    let l = cholesky_lower(sigma)?;
    let m = l.transpose() * j * &l;
    Ok(sym_eigenvalues(&m)
        .into_iter()
        .map(|ev| (ev.max(1.0).ln() / FINGERPRINT_STEP).round() as i64)
        .collect())
}

/// `(Σ, J) = (I, diag(exp(step * k)))` for a fingerprint `k`.
pub fn canonical_pair(fp: &[i64]) -> (Mat, Mat) {
    let p = fp.len();
    let diag = Vector::from_iterator(p, fp.iter().map(|&k| (k as f64 * FINGERPRINT_STEP).exp()));
    (Mat::identity(p, p), Mat::from_diagonal(&diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritvalMode {
    /// Shared tables keyed by the rounded eigenvalue fingerprint.
    #[default]
    Cache,
    /// A fresh simulation at the exact `(Σ, J)`.
    Exact,
}

/// A critical value together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critval {
    pub value: f64,
    /// Table key; each table holds both trend cases of one flavor.
    pub key: String,
    pub fingerprint: Vec<i64>,
    pub reps: usize,
    pub grid_n: usize,
    pub failures: usize,
}

const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    tables: BTreeMap<String, Table>,
}

/// Null samples of one flavor, keyed by test name.
type Table = BTreeMap<String, NullSample>;

type Slot = Arc<Mutex<Option<Arc<Table>>>>;

/// Null tables shared across replications and, optionally, across runs
/// through a versioned JSON file.
///
/// Each table's seed is a function of its key alone, so the values do not
/// depend on the order in which tables are first requested.
pub struct CritvalCache {
    grid_n: usize,
    reps: usize,
    base_seed: u64,
    path: Option<PathBuf>,
    slots: Mutex<BTreeMap<String, Slot>>,
}

impl CritvalCache {
    pub fn new(grid_n: usize, reps: usize, base_seed: u64) -> Self {
        Self { grid_n, reps, base_seed, path: None, slots: Mutex::new(BTreeMap::new()) }
    }

    /// Opens a cache backed by `path`, loading it when it exists.
    pub fn open(path: impl AsRef<Path>, grid_n: usize, reps: usize, base_seed: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut cache = Self::new(grid_n, reps, base_seed);
        if path.exists() {
            let file: CacheFile = serde_json::from_slice(&fs::read(&path)?)?;
            if file.version != CACHE_VERSION {
                return Err(Error::config(format!(
                    "critical-value cache version {} (expected {CACHE_VERSION})",
                    file.version
                )));
            }
            let slots = cache.slots.get_mut().expect("fresh mutex");
            for (k, v) in file.tables {
                slots.insert(k, Arc::new(Mutex::new(Some(Arc::new(v)))));
            }
        }
        cache.path = Some(path);
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn len(&self) -> usize {
        self.tables().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tables(&self) -> BTreeMap<String, Table> {
        let slots = self.slots.lock().expect("cache lock poisoned");
        slots
            .iter()
            .filter_map(|(k, slot)| {
                let v = slot.lock().expect("cache lock poisoned").clone()?;
                Some((k.clone(), (*v).clone()))
            })
            .collect()
    }

    /// Writes every computed table to the backing file, if any.
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let file = CacheFile { version: CACHE_VERSION, tables: self.tables() };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    fn key(&self, flavor: Flavor, p: usize, tag: &str) -> String {
        let label = match flavor {
            Flavor::Gaussian => "gaussian",
            Flavor::Semiparametric => "semipar",
        };
        format!(
            "{label}|p={p}|grid={}|reps={}|seed={}|{tag}",
            self.grid_n, self.reps, self.base_seed
        )
    }

    /// Critical value of `kind` at level `alpha` for the plug-in pair `(Σ, J)`.
    pub fn lookup(&self, kind: TestKind, sigma: &Mat, j: &Mat, alpha: f64, mode: CritvalMode) -> Result<Critval> {
        check_alpha(alpha)?;
        let p = sigma.nrows();
        let flavor = kind.flavor();
        let (key, fp, spec_pair) = match (mode, flavor) {
            (CritvalMode::Cache, Flavor::Gaussian) => {
                (self.key(flavor, p, "gauss"), Vec::new(), (Mat::identity(p, p), Mat::identity(p, p)))
            }
            (CritvalMode::Cache, Flavor::Semiparametric) => {
                let fp = fingerprint(sigma, j)?;
                let tag = format!(
                    "fp={}",
                    fp.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
                );
                (self.key(flavor, p, &tag), fp.clone(), canonical_pair(&fp))
            }
            (CritvalMode::Exact, _) => {
                let bits: Vec<String> =
                    sigma.iter().chain(j.iter()).map(|v| format!("{:016x}", v.to_bits())).collect();
                (self.key(flavor, p, &format!("exact={}", bits.join(""))), Vec::new(), (sigma.clone(), j.clone()))
            }
        };
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock poisoned");
            slots.entry(key.clone()).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache lock poisoned");
        let table = match guard.as_ref() {
            Some(t) => t.clone(),
            None => {
                let spec = LimitSpec::new(
                    spec_pair.0,
                    spec_pair.1,
                    self.grid_n,
                    self.reps,
                    derive_seed(self.base_seed, &[fnv1a(key.as_bytes())]),
                )?;
                let kinds = [TestKind::new(TrendCase::InterceptOnly, flavor), TestKind::new(TrendCase::LinearTrend, flavor)];
                // serial: callers may already be inside a parallel loop
                let samples = null_samples(&kinds, &spec, false)?;
                let t: Table = kinds.iter().map(|k| k.as_str().to_string()).zip(samples).collect();
                let t = Arc::new(t);
                *guard = Some(t.clone());
                t
            }
        };
        let table = table
            .get(kind.as_str())
            .ok_or_else(|| Error::config(format!("cache table {key} has no entry for {kind}")))?;
        Ok(Critval {
            value: table.quantile(alpha),
            key,
            fingerprint: fp,
            reps: table.sorted.len(),
            grid_n: self.grid_n,
            failures: table.failures,
        })
    }
}

/// Rejection frequencies in the limit experiment along `C = c * direction`.
///
/// With `envelope` set, adds the point-optimal test at `C̄ = C`, whose
/// rejection rate at each `c` bounds every invariant test of level `alpha`.
/// All rows share the same null and alternative draws. The reported `se` is
/// binomial given the simulated critical values; their own sampling error
/// adds to it, noticeably so when the envelope is close to one.
pub fn limit_power(
    spec: &LimitSpec,
    trend: TrendCase,
    c_grid: &[f64],
    alpha: f64,
    kinds: &[TestKind],
    envelope: bool,
    direction: &Mat,
) -> Result<PowerCurve> {
    check_alpha(alpha)?;
    let p = spec.dim();
    if direction.shape() != (p, p) {
        return Err(Error::dim("direction must be p x p"));
    }
    let sampler = Sampler::new(spec)?;
    let null_seed = |rep: usize| derive_seed(spec.seed, &[0, rep as u64]);
    let alt_seed = |rep: usize| derive_seed(spec.seed, &[1, rep as u64]);
    let zero = Vector::zeros(p);

    let kind_nulls: Vec<NullSample> = {
        let per_rep: Vec<Vec<Option<f64>>> = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                let draw = sampler.draw(None, null_seed(rep));
                kinds_on_draw(kinds, &draw, spec)
            })
            .collect();
        (0..kinds.len())
            .map(|i| sort_sample(per_rep.iter().map(|r| r[i]).collect()))
            .collect::<Result<_>>()?
    };

    let mut rows = Vec::new();
    for &c in c_grid {
        let cmat = direction * c;
        let is_null = c == 0.0;
        let env_null = if envelope && !is_null {
            let vals: Vec<Option<f64>> = (0..spec.reps)
                .into_par_iter()
                .map(|rep| {
                    let draw = sampler.draw(None, null_seed(rep));
                    let inputs = draw.inputs(&spec.sigma, &spec.j).ok()?;
                    point_optimal(&cmat, trend, &inputs).ok()
                })
                .collect();
            Some(sort_sample(vals)?)
        } else {
            None
        };
        let alt: Vec<(Vec<Option<f64>>, Option<f64>)> = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                let drift = if is_null { None } else { Some((&cmat, &zero)) };
                let draw = sampler.draw(drift, alt_seed(rep));
                let stats = kinds_on_draw(kinds, &draw, spec);
                let env = if env_null.is_some() {
                    draw.inputs(&spec.sigma, &spec.j).ok().and_then(|i| point_optimal(&cmat, trend, &i).ok())
                } else {
                    None
                };
                (stats, env)
            })
            .collect();
        for (i, &kind) in kinds.iter().enumerate() {
            let kappa = kind_nulls[i].quantile(alpha);
            let valid: Vec<f64> = alt.iter().filter_map(|(s, _)| s[i]).collect();
            let rejections = valid.iter().filter(|&&v| v > kappa).count();
            rows.push(PowerRow::from_counts(c, kind.as_str(), trend, rejections, valid.len(), None));
        }
        if envelope {
            let row = match &env_null {
                // the likelihood ratio is identically zero: the optimal test rejects with probability alpha
                None => PowerRow::from_rate(c, ENVELOPE, trend, alpha, spec.reps, None),
                Some(null) => {
                    let kappa = null.quantile(alpha);
                    let valid: Vec<f64> = alt.iter().filter_map(|(_, e)| *e).collect();
                    let rejections = valid.iter().filter(|&&v| v > kappa).count();
                    PowerRow::from_counts(c, ENVELOPE, trend, rejections, valid.len(), None)
                }
            };
            rows.push(row);
        }
    }
    Ok(PowerCurve::new(rows))
}

/// Point-optimal power envelope along `C = c * direction`.
pub fn power_envelope(
    spec: &LimitSpec,
    trend: TrendCase,
    c_grid: &[f64],
    alpha: f64,
    direction: &Mat,
) -> Result<PowerCurve> {
    limit_power(spec, trend, c_grid, alpha, &[], true, direction)
}

/// Moments of the finite-sample central sequence at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabfRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub mean_delta: f64,
    pub var_delta: f64,
    pub mean_q: f64,
    /// `|mean Δ_T - mean Δ| + |var Δ_T - var Δ| + |mean Q_T - mean Q|`
    pub moment_distance: f64,
    /// Root mean square of `Δ_T - Δ` over coupled draws.
    pub l2_distance: f64,
    /// `(T-1)(T-2) / (2T²) tr(C'Σ⁻¹CΣ)`
    pub var_delta_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabfLimit {
    pub grid_n: usize,
    pub mean_delta: f64,
    pub var_delta: f64,
    pub mean_q: f64,
    /// `½ tr(C'Σ⁻¹CΣ)`
    pub var_delta_exact: f64,
    pub exp_l_mean: f64,
    pub exp_l_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabfReport {
    #[serde(with = "serde_rows")]
    pub c: Mat,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<LabfRow>,
    pub limit: LabfLimit,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Compares the Gaussian central sequence and quadratic term at each sample
/// size with their limits, coupling all sample sizes to one fine Brownian
/// path per replication. `oversample` sets the limit grid as a multiple of
/// the least common multiple of `t_list`.
pub fn labf_diagnostic(
    t_list: &[usize],
    sigma: &Mat,
    c: &Mat,
    reps: usize,
    oversample: usize,
    seed: u64,
) -> Result<LabfReport> {
    let p = sigma.nrows();
    if c.shape() != (p, p) {
        return Err(Error::dim("C must match sigma"));
    }
    if t_list.is_empty() || t_list.iter().any(|&t| t < 3) || reps < 2 || oversample == 0 {
        return Err(Error::config("need sample sizes >= 3, reps >= 2 and oversample >= 1"));
    }
    let lcm = t_list.iter().fold(1usize, |acc, &t| acc / gcd(acc, t) * t);
    let fine = lcm.checked_mul(oversample).filter(|&m| m <= 4_000_000).ok_or_else(|| {
        Error::config("sample sizes have too large a common multiple for a shared fine grid")
    })?;
    let chol = cholesky_lower(sigma)?;
    let sigma_inv = spd_inverse(sigma)?;
    let k = c.transpose() * &sigma_inv * c;
    let tr = (&k * sigma).trace();

    struct Rep {
        finite: Vec<(f64, f64)>,
        limit: (f64, f64),
    }

    let run = |rep: usize| -> Rep {
        let mut rng = rng_from_seed(derive_seed(seed, &[rep as u64]));
        let scale = 1.0 / (fine as f64).sqrt();
        let mut w = Mat::zeros(p, fine + 1);
        let mut g = Vector::zeros(p);
        for step in 0..fine {
            for i in 0..p {
                g[i] = rng.sample(StandardNormal);
            }
            let next = w.column(step) + &chol * &g * scale;
            w.set_column(step + 1, &next);
        }
        let sums = |stride: usize, start: usize| -> (f64, f64) {
            let steps = fine / stride;
            let base = w.column(start * stride).into_owned();
            let (mut d, mut q) = (0.0, 0.0);
            for s in start..steps {
                let x = c * (w.column(s * stride) - &base);
                let dw = w.column((s + 1) * stride) - w.column(s * stride);
                d += x.dot(&(&sigma_inv * dw));
                q += x.dot(&(&sigma_inv * &x));
            }
            (d, q / steps as f64)
        };
        // sample size T sees W at t/T; its sums start at y_1, i.e. grid point 1
        let finite = t_list.iter().map(|&t| sums(fine / t, 1)).collect();
        Rep { finite, limit: sums(1, 0) }
    };
    let draws: Vec<Rep> = (0..reps).into_par_iter().map(run).collect();

    let rf = reps as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let lim_d: Vec<f64> = draws.iter().map(|r| r.limit.0).collect();
    let lim_q: Vec<f64> = draws.iter().map(|r| r.limit.1).collect();
    let exp_l: Vec<f64> = draws.iter().map(|r| (r.limit.0 - 0.5 * r.limit.1).exp()).collect();
    let limit = LabfLimit {
        grid_n: fine,
        mean_delta: mean(&lim_d),
        var_delta: var(&lim_d),
        mean_q: mean(&lim_q),
        var_delta_exact: 0.5 * tr,
        exp_l_mean: mean(&exp_l),
        exp_l_se: (var(&exp_l) / rf).sqrt(),
    };
    let rows = t_list
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let d: Vec<f64> = draws.iter().map(|r| r.finite[i].0).collect();
            let q: Vec<f64> = draws.iter().map(|r| r.finite[i].1).collect();
            let l2 = (draws.iter().map(|r| (r.finite[i].0 - r.limit.0).powi(2)).sum::<f64>() / rf).sqrt();
            let (md, vd, mq) = (mean(&d), var(&d), mean(&q));
            let tf = t as f64;
            LabfRow {
                t,
                mean_delta: md,
                var_delta: vd,
                mean_q: mq,
                moment_distance: (md - limit.mean_delta).abs()
                    + (vd - limit.var_delta).abs()
                    + (mq - limit.mean_q).abs(),
                l2_distance: l2,
                var_delta_exact: (tf - 1.0) * (tf - 2.0) / (2.0 * tf * tf) * tr,
            }
        })
        .collect();
    Ok(LabfReport { c: c.clone(), reps, seed, rows, limit })
}
