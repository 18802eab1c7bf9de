//! Kernel estimates of the innovation score `l = -∇f / f` and of the
//! Fisher information, computed from first differences.
//!
//! The kernel is a product of standard logistic densities,
//! `k(x) = e^{-x} / (1 + e^{-x})^2`, whose log-derivative is `-tanh(x / 2)`.
//! Scores use the full sample, every point included in its own estimate.

use serde::{Deserialize, Serialize};

use crate::dgp::Panel;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeConfig {
    /// Per-coordinate bandwidths.
    pub bandwidths: Vec<f64>,
    /// Additive floor in the score denominator.
    pub floor: f64,
}

impl KdeConfig {
    pub fn new(bandwidths: Vec<f64>) -> Self {
        Self { bandwidths, floor: 0.0 }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.bandwidths.len() != p {
            return Err(Error::dim(format!(
                "{} bandwidths for dimension {p}",
                self.bandwidths.len()
            )));
        }
        if self.bandwidths.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::config("bandwidths must be positive"));
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(Error::config("floor must be non-negative"));
        }
        Ok(())
    }

    fn norm(&self) -> f64 {
        self.bandwidths.iter().product()
    }
}

/// Rule-of-thumb bandwidths `[4 / (T (p + 2))]^{2 / (p + 4)} * sigma_ii`.
pub fn silverman_bandwidths(sigma_hat: &Mat, t: usize, p: usize) -> Result<Vec<f64>> {
    if sigma_hat.shape() != (p, p) {
        return Err(Error::dim("sigma_hat does not match p"));
    }
    if t == 0 {
        return Err(Error::config("sample size must be positive"));
    }
    let factor = (4.0 / (t as f64 * (p as f64 + 2.0))).powf(2.0 / (p as f64 + 4.0));
    (0..p)
        .map(|i| {
            let s = sigma_hat[(i, i)];
            if s.is_finite() && s > 0.0 {
                Ok(factor * s)
            } else {
                Err(Error::config(format!("non-positive variance {s} on the diagonal")))
            }
        })
        .collect()
}

/// Normal-reference bandwidths `[4 / (T (p + 2))]^{1 / (p + 4)} * sigma_i`,
/// the square roots of [`silverman_bandwidths`].
pub fn normal_reference_bandwidths(sigma_hat: &Mat, t: usize, p: usize) -> Result<Vec<f64>> {
    Ok(silverman_bandwidths(sigma_hat, t, p)?.into_iter().map(f64::sqrt).collect())
}

/// How bandwidths are chosen from `Σ̂` and the sample size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// [`silverman_bandwidths`], proportional to the variances.
    Silverman,
    /// [`normal_reference_bandwidths`], proportional to the standard deviations.
    #[default]
    NormalReference,
    Fixed { bandwidths: Vec<f64> },
}

impl BandwidthRule {
    pub fn bandwidths(&self, sigma_hat: &Mat, t: usize) -> Result<Vec<f64>> {
        let p = sigma_hat.nrows();
        match self {
            BandwidthRule::Silverman => silverman_bandwidths(sigma_hat, t, p),
            BandwidthRule::NormalReference => normal_reference_bandwidths(sigma_hat, t, p),
            BandwidthRule::Fixed { bandwidths } => {
                KdeConfig::new(bandwidths.clone()).validate(p)?;
                Ok(bandwidths.clone())
            }
        }
    }
}

/// Logistic density and log-derivative at `x`, sharing one exponential.
#[inline]
fn logistic(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let r = 1.0 / (1.0 + e);
    let th = (1.0 - e) * r;
    (e * r * r, if x >= 0.0 { -th } else { th })
}

fn check_data(point: &[f64], data: &Mat, config: &KdeConfig) -> Result<()> {
    config.validate(data.nrows())?;
    if point.len() != data.nrows() {
        return Err(Error::dim("point and data dimensions differ"));
    }
    if data.ncols() == 0 {
        return Err(Error::config("kernel estimate needs at least one datum"));
    }
    Ok(())
}

/// Unnormalized kernel sum and gradient sum at `point`.
fn kernel_sums(point: &[f64], data: &Mat, bw: &[f64], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut dens = 0.0;
    let p = point.len();
    let mut ratio = vec![0.0; p];
    for col in data.column_iter() {
        let mut prod = 1.0;
        for i in 0..p {
            let (k, r) = logistic((point[i] - col[i]) / bw[i]);
            prod *= k;
            ratio[i] = r / bw[i];
        }
        dens += prod;
        for i in 0..p {
            grad[i] += prod * ratio[i];
        }
    }
    dens
}

/// Kernel density estimate at `point` from the columns of `data`.
pub fn kde_density(point: &[f64], data: &Mat, config: &KdeConfig) -> Result<f64> {
    check_data(point, data, config)?;
    let mut grad = vec![0.0; point.len()];
    let s = kernel_sums(point, data, &config.bandwidths, &mut grad);
    Ok(s / (data.ncols() as f64 * config.norm()))
}

/// Score estimate at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePoint {
    pub score: Vector,
    /// The density estimate fell below the smallest normal float with no
    /// floor to absorb it; the score was clamped to zero.
    pub underflow: bool,
}

/// Score estimate `-∇f̂ / (f̂ + floor)` at `point`.
pub fn kde_score(point: &[f64], data: &Mat, config: &KdeConfig) -> Result<ScorePoint> {
    check_data(point, data, config)?;
    let p = point.len();
    let mut grad = vec![0.0; p];
    let s = kernel_sums(point, data, &config.bandwidths, &mut grad);
    Ok(finish_score(s, &grad, data.ncols() as f64 * config.norm(), config.floor))
}

fn finish_score(dens_sum: f64, grad_sum: &[f64], norm: f64, floor: f64) -> ScorePoint {
    let p = grad_sum.len();
    let f = dens_sum / norm;
    if floor == 0.0 && f < f64::MIN_POSITIVE {
        return ScorePoint { score: Vector::zeros(p), underflow: true };
    }
    // -∇f̂ / (f̂ + b) with both sums carrying the same 1 / norm
    let denom = dens_sum + floor * norm;
    ScorePoint {
        score: Vector::from_iterator(p, grad_sum.iter().map(|g| -g / denom)),
        underflow: false,
    }
}

/// Scores evaluated at every first difference of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    /// `p x (T-1)`; column `k` is the score at `Δy_{k+2}`.
    pub scores: Mat,
    pub config: KdeConfig,
    pub underflow_count: usize,
    /// All score columns coincide (e.g. constant differences).
    pub degenerate: bool,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.scores.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.ncols() == 0
    }

    /// The same scores with `shift` added to every column.
    pub fn shifted(&self, shift: &Vector) -> Self {
        let mut out = self.clone();
        for mut col in out.scores.column_iter_mut() {
            col += shift;
        }
        out
    }
}

/// Scores of the panel's first differences, each evaluated against all of them.
pub fn score_set(panel: &Panel, config: &KdeConfig) -> Result<ScoreSet> {
    if panel.len() < 3 {
        return Err(Error::config("score estimation needs T >= 3"));
    }
    score_set_from_increments(&panel.differences(), config)
}

/// Full-sample scores at each column of `increments`.
///
/// Pairs are visited once: the kernel is symmetric and its gradient
/// antisymmetric, so each pair updates both endpoints. The visiting order is
/// fixed, which makes the result reproducible bit for bit.
pub fn score_set_from_increments(increments: &Mat, config: &KdeConfig) -> Result<ScoreSet> {
    let (p, n) = increments.shape();
    config.validate(p)?;
    if n == 0 {
        return Err(Error::config("no increments"));
    }
    let inv_bw: Vec<f64> = config.bandwidths.iter().map(|a| 1.0 / a).collect();
    let data = increments.as_slice();
    let (dens, grad) = match p {
        1 => pair_sums::<1>(data, &inv_bw),
        2 => pair_sums::<2>(data, &inv_bw),
        3 => pair_sums::<3>(data, &inv_bw),
        _ => pair_sums_dyn(data, p, &inv_bw),
    };
    let norm = n as f64 * config.norm();
    let mut scores = Mat::zeros(p, n);
    let mut underflow_count = 0;
    for s in 0..n {
        let pt = finish_score(dens[s], &grad[s * p..(s + 1) * p], norm, config.floor);
        underflow_count += usize::from(pt.underflow);
        scores.set_column(s, &pt.score);
    }
    let first = scores.column(0).into_owned();
    let degenerate = scores
        .column_iter()
        .all(|c| (c - &first).amax() <= 1e-12 * (1.0 + first.amax()));
    Ok(ScoreSet { scores, config: config.clone(), underflow_count, degenerate })
}

/// Kernel and gradient sums over all ordered pairs, self terms included.
fn pair_sums<const P: usize>(data: &[f64], inv_bw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() / P;
    let ib: [f64; P] = std::array::from_fn(|i| inv_bw[i]);
    let pts: Vec<[f64; P]> = data
        .chunks_exact(P)
        .map(|c| std::array::from_fn(|i| c[i]))
        .collect();
    let mut dens = vec![0.25_f64.powi(P as i32); n];
    let mut grad = vec![[0.0; P]; n];
    for s in 0..n {
        let xs = pts[s];
        let mut ds = 0.0;
        let mut gs = [0.0; P];
        for t in (s + 1)..n {
            let xt = &pts[t];
            let mut prod = 1.0;
            let mut ratio = [0.0; P];
            for i in 0..P {
                let (k, r) = logistic((xs[i] - xt[i]) * ib[i]);
                prod *= k;
                ratio[i] = r * ib[i];
            }
            ds += prod;
            dens[t] += prod;
            let gt = &mut grad[t];
            for i in 0..P {
                let g = prod * ratio[i];
                gs[i] += g;
                gt[i] -= g;
            }
        }
        dens[s] += ds;
        for i in 0..P {
            grad[s][i] += gs[i];
        }
    }
    (dens, grad.into_iter().flatten().collect())
}

fn pair_sums_dyn(data: &[f64], p: usize, inv_bw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() / p;
    let mut dens = vec![0.25_f64.powi(p as i32); n];
    let mut grad = vec![0.0; n * p];
    let mut ratio = vec![0.0; p];
    for s in 0..n {
        for t in (s + 1)..n {
            let mut prod = 1.0;
            for i in 0..p {
                let (k, r) = logistic((data[s * p + i] - data[t * p + i]) * inv_bw[i]);
                prod *= k;
                ratio[i] = r * inv_bw[i];
            }
            dens[s] += prod;
            dens[t] += prod;
            for i in 0..p {
                grad[s * p + i] += prod * ratio[i];
                grad[t * p + i] -= prod * ratio[i];
            }
        }
    }
    (dens, grad)
}

/// Centered second moment of the scores, `(1/N) Σ (l_t - l̄)(l_t - l̄)'`.
pub fn fisher_info_hat(scores: &ScoreSet) -> Result<Mat> {
    let (p, n) = scores.scores.shape();
    if n < 2 {
        return Err(Error::config("need at least two scores"));
    }
    let mean = scores.scores.column_mean();
    let mut j = Mat::zeros(p, p);
    for col in scores.scores.column_iter() {
        let d = col - &mean;
        j.ger(1.0, &d, &d, 1.0);
    }
    j /= n as f64;
    if j.trace() <= 0.0 || !j.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateScores);
    }
    Ok(j)
}

/// Centered cross moment `K̂ = (1/N) Σ (l_t - l̄)(Δy_t - Δȳ)'`.
///
/// The population value is the identity for any density with finite
/// information; kernel scores attenuate it in finite samples.
pub fn cross_moment(scores: &ScoreSet, increments: &Mat) -> Result<Mat> {
    let (p, n) = scores.scores.shape();
    if increments.shape() != (p, n) {
        return Err(Error::dim("scores and increments differ in shape"));
    }
    let ls = scores.scores.column_mean();
    let es = increments.column_mean();
    let mut k = Mat::zeros(p, p);
    for (l, e) in scores.scores.column_iter().zip(increments.column_iter()) {
        k.ger(1.0, &(l - &ls), &(e - &es), 1.0);
    }
    Ok(k / n as f64)
}

/// Rescales the scores by `K̂⁻¹` so that their sample cross moment with the
/// increments is exactly the identity. Returns the new set and `K̂`.
///
/// After rescaling, `Ĵ - Σ̂⁻¹` is positive semidefinite (both with divisor
/// `N`), because the joint sample covariance of `(Δy, l)` is.
pub fn standardize_scores(scores: &ScoreSet, increments: &Mat) -> Result<(ScoreSet, Mat)> {
    let k = cross_moment(scores, increments)?;
    let k_inv = k.clone().try_inverse().ok_or(Error::DegenerateScores)?;
    if !k_inv.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateScores);
    }
    let mut out = scores.clone();
    out.scores = &k_inv * &scores.scores;
    Ok((out, k))
}
