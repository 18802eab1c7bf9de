//! Likelihood-ratio functionals of the limit experiment and the four trace
//! statistics built from them.
//!
//! Every functional takes a pair of step processes on a common grid: `w` plays
//! the role of the innovation partial sum and `h` the bridged score partial
//! sum. Stochastic integrals are left-endpoint sums and `du`-integrals are
//! left-endpoint averages `(1/n) Σ_{k<n} g_k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, spd_inverse, sym_eigenvalues, Mat, Vector};
use crate::process::{bridge, PluginSet, StepProcess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrendCase {
    #[serde(rename = "none")]
    InterceptOnly,
    #[serde(rename = "linear")]
    LinearTrend,
}

impl TrendCase {
    pub fn as_str(self) -> &'static str {
        match self {
            TrendCase::InterceptOnly => "none",
            TrendCase::LinearTrend => "linear",
        }
    }
}

impl fmt::Display for TrendCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrendCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "intercept" => Ok(TrendCase::InterceptOnly),
            "linear" | "trend" => Ok(TrendCase::LinearTrend),
            _ => Err(Error::config(format!("unknown trend case {s:?} (expected none or linear)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Gaussian,
    Semiparametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestKind {
    #[serde(rename = "johansen-gauss")]
    JohansenGauss,
    #[serde(rename = "johansen-semipar")]
    JohansenSemipar,
    #[serde(rename = "sl-gauss")]
    SlGauss,
    #[serde(rename = "sl-semipar")]
    SlSemipar,
}

impl TestKind {
    pub const ALL: [TestKind; 4] =
        [TestKind::JohansenGauss, TestKind::JohansenSemipar, TestKind::SlGauss, TestKind::SlSemipar];

    pub fn new(trend: TrendCase, flavor: Flavor) -> Self {
        match (trend, flavor) {
            (TrendCase::InterceptOnly, Flavor::Gaussian) => TestKind::JohansenGauss,
            (TrendCase::InterceptOnly, Flavor::Semiparametric) => TestKind::JohansenSemipar,
            (TrendCase::LinearTrend, Flavor::Gaussian) => TestKind::SlGauss,
            (TrendCase::LinearTrend, Flavor::Semiparametric) => TestKind::SlSemipar,
        }
    }

    /// The trend case a kind is designed for.
    pub fn trend(self) -> TrendCase {
        match self {
            TestKind::JohansenGauss | TestKind::JohansenSemipar => TrendCase::InterceptOnly,
            TestKind::SlGauss | TestKind::SlSemipar => TrendCase::LinearTrend,
        }
    }

    pub fn flavor(self) -> Flavor {
        match self {
            TestKind::JohansenGauss | TestKind::SlGauss => Flavor::Gaussian,
            TestKind::JohansenSemipar | TestKind::SlSemipar => Flavor::Semiparametric,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::JohansenGauss => "johansen-gauss",
            TestKind::JohansenSemipar => "johansen-semipar",
            TestKind::SlGauss => "sl-gauss",
            TestKind::SlSemipar => "sl-semipar",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown test {s:?}")))
    }
}

/// Processes and nuisance matrices a likelihood functional is evaluated on.
#[derive(Debug, Clone)]
pub struct LrInputs {
    w: StepProcess,
    h: StepProcess,
    sigma: Mat,
    j: Mat,
    sigma_inv: Mat,
}

impl LrInputs {
    pub fn new(w: StepProcess, h: StepProcess, sigma: Mat, j: Mat) -> Result<Self> {
        let p = w.dim();
        if !w.same_grid(&h) || h.dim() != p {
            return Err(Error::dim("w and h must share a grid"));
        }
        if sigma.shape() != (p, p) || j.shape() != (p, p) {
            return Err(Error::dim("sigma and j must be p x p"));
        }
        let tol = 1e-10 * (1.0 + sigma.amax().max(j.amax()));
        if !is_symmetric(&sigma, tol) || !is_symmetric(&j, tol) {
            return Err(Error::config("sigma and j must be symmetric"));
        }
        let sigma_inv = spd_inverse(&sigma)?;
        Ok(Self { w, h, sigma, j, sigma_inv })
    }

    /// Gaussian plug-ins: `h = Σ⁻¹ bridge(w)` and `j = Σ⁻¹`.
    pub fn gaussian(w: StepProcess, sigma: Mat) -> Result<Self> {
        let sigma_inv = spd_inverse(&sigma)?;
        let h = bridge(&w).map_linear(&sigma_inv);
        Self::new(w, h, sigma, sigma_inv)
    }

    pub fn from_plugins(plugins: &PluginSet) -> Result<Self> {
        Self::new(
            plugins.w_eps.clone(),
            plugins.b_lf.clone(),
            plugins.sigma_hat.clone(),
            plugins.j_hat.clone(),
        )
    }

    pub fn w(&self) -> &StepProcess {
        &self.w
    }

    pub fn h(&self) -> &StepProcess {
        &self.h
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    pub fn j(&self) -> &Mat {
        &self.j
    }

    pub fn sigma_inv(&self) -> &Mat {
        &self.sigma_inv
    }

    fn n(&self) -> usize {
        self.w.n()
    }

    fn check_square(&self, c: &Mat) -> Result<()> {
        let p = self.w.dim();
        if c.shape() != (p, p) {
            return Err(Error::dim(format!("expected a {p} x {p} matrix")));
        }
        Ok(())
    }

    /// `h_k + Σ⁻¹ end · u_k` on the grid.
    fn drifted(&self, end: &Vector) -> Mat {
        let drift = &self.sigma_inv * end;
        let mut g = self.h.values().clone();
        add_clock_multiple(&mut g, &self.w, 1.0, &drift);
        g
    }

    /// `w_k - u_k δ` on the grid.
    fn dedrifted(&self, delta: &Vector) -> Mat {
        let mut v = self.w.values().clone();
        add_clock_multiple(&mut v, &self.w, -1.0, delta);
        v
    }
}

/// Adds `sign * u_k * v` to column `k` of `m`, with `u_k` the clock of `proc`.
fn add_clock_multiple(m: &mut Mat, proc: &StepProcess, sign: f64, v: &Vector) {
    let p = m.nrows();
    let vs = v.as_slice();
    for (k, col) in m.as_mut_slice().chunks_exact_mut(p).enumerate() {
        let u = sign * proc.clock(k);
        for (x, &d) in col.iter_mut().zip(vs) {
            *x += u * d;
        }
    }
}

/// `Σ_{k<n} x_k (g_{k+1} - g_k)'` for grid-valued matrices with `n + 1` columns.
fn left_sum(x: &Mat, g: &Mat) -> Mat {
    let (p, cols) = x.shape();
    let q = g.nrows();
    let (xs, gs) = (x.as_slice(), g.as_slice());
    let mut out = vec![0.0; p * q];
    for k in 0..cols - 1 {
        let xk = &xs[k * p..(k + 1) * p];
        for b in 0..q {
            let dg = gs[(k + 1) * q + b] - gs[k * q + b];
            for a in 0..p {
                out[b * p + a] += xk[a] * dg;
            }
        }
    }
    Mat::from_vec(p, q, out)
}

/// `(1/n) Σ_{k<n} x_k x_k'` and `(1/n) Σ_{k<n} x_k`.
fn moments(x: &Mat) -> (Mat, Vector) {
    let (p, cols) = x.shape();
    let n = cols - 1;
    let xs = x.as_slice();
    let mut s = vec![0.0; p * p];
    let mut m = vec![0.0; p];
    for k in 0..n {
        let xk = &xs[k * p..(k + 1) * p];
        for b in 0..p {
            m[b] += xk[b];
            for a in 0..p {
                s[b * p + a] += xk[a] * xk[b];
            }
        }
    }
    let nf = n as f64;
    (Mat::from_vec(p, p, s) / nf, Vector::from_vec(m) / nf)
}

/// Left-endpoint Itô sum `Σ_k X(k/n) (H((k+1)/n) - H(k/n))'`.
pub fn ito_sum(integrand: &StepProcess, integrator: &StepProcess) -> Result<Mat> {
    if integrand.n() != integrator.n() {
        return Err(Error::dim("integrand and integrator grids differ"));
    }
    Ok(left_sum(integrand.values(), integrator.values()))
}

/// Linear and quadratic parts `(Δ, Q)` of the likelihood at `cbar`, for an
/// integrand path `x` and integrator path `g`.
fn delta_and_q(cbar: &Mat, x: &Mat, g: &Mat, sigma_inv: &Mat, j: &Mat) -> (f64, f64) {
    let delta = (cbar * left_sum(x, g)).trace();
    let (sxx, xbar) = moments(x);
    let cjc = cbar.transpose() * j * cbar;
    let cx = cbar * xbar;
    let q = (cjc * sxx).trace() + cx.dot(&((sigma_inv - j) * &cx));
    (delta, q)
}

/// Log-likelihood ratio of the maximal invariant at `cbar` with no trend.
pub fn l_mu_star(cbar: &Mat, inputs: &LrInputs) -> Result<f64> {
    inputs.check_square(cbar)?;
    let g = inputs.drifted(&inputs.w.endpoint());
    let (d, q) = delta_and_q(cbar, inputs.w.values(), &g, &inputs.sigma_inv, &inputs.j);
    Ok(d - 0.5 * q)
}

/// `s' M⁻¹ s` for the likelihood `tr(C̄ X) - ½ vec(C̄)' M vec(C̄)`.
fn trace_form(x: &Mat, g: &Mat, sigma_inv: &Mat, j: &Mat) -> Result<f64> {
    let s_mat = left_sum(x, g).transpose();
    let (sxx, xbar) = moments(x);
    let m = sxx.kronecker(j) + (&xbar * xbar.transpose()).kronecker(&(sigma_inv - j));
    quadratic_solve(&s_mat, m)
}

/// `vec(S)' M⁻¹ vec(S)` with `M` required positive definite.
fn quadratic_solve(s_mat: &Mat, m: Mat) -> Result<f64> {
    let s = Vector::from_column_slice(s_mat.as_slice());
    let m = (&m + m.transpose()) * 0.5;
    match m.clone().cholesky() {
        Some(ch) => {
            let sol = ch.solve(&s);
            Ok(s.dot(&sol).max(0.0))
        }
        None => Err(Error::DegenerateInformation { eigenvalues: sym_eigenvalues(&m) }),
    }
}

/// `vec(Σ⁻¹ Σ dX X')' (S_XX ⊗ Σ⁻¹)⁻¹ vec(·)`, the Gaussian trace form.
fn gaussian_form(x: &Mat, sigma_inv: &Mat) -> Result<f64> {
    let s_mat = sigma_inv * left_sum(x, x).transpose();
    let (sxx, _) = moments(x);
    quadratic_solve(&s_mat, sxx.kronecker(sigma_inv))
}

/// Trace statistic for the intercept-only case: twice the maximum of
/// [`l_mu_star`] over `C̄`.
pub fn johansen_stat(inputs: &LrInputs, flavor: Flavor) -> Result<f64> {
    match flavor {
        Flavor::Gaussian => gaussian_form(inputs.w.values(), &inputs.sigma_inv),
        Flavor::Semiparametric => {
            let g = inputs.drifted(&inputs.w.endpoint());
            trace_form(inputs.w.values(), &g, &inputs.sigma_inv, &inputs.j)
        }
    }
}

/// Trend estimate maximizing the likelihood at `C̄* = cstar`.
pub fn profile_delta(cstar: &Mat, inputs: &LrInputs) -> Result<Vector> {
    inputs.check_square(cstar)?;
    let w = &inputs.w;
    if cstar.iter().all(|&c| c == 0.0) {
        return Ok(w.endpoint());
    }
    let p = w.dim();
    let n = inputs.n();
    let nf = n as f64;
    let (sigma_inv, j) = (&inputs.sigma_inv, &inputs.j);
    let g = inputs.drifted(&w.endpoint());
    let wbar = w.mean();
    let jc = j * cstar;
    let shift = sigma_inv * cstar * &wbar;
    // d_k = I - u_k C*, so every sum splits into moments of u_k
    let (ws, gs, jcs) = (w.values().as_slice(), g.as_slice(), jc.as_slice());
    let (mut s0, mut s1) = (vec![0.0; p], vec![0.0; p]);
    let (mut u1, mut u2) = (0.0, 0.0);
    let mut v = vec![0.0; p];
    for k in 0..n {
        let u = w.clock(k);
        let wk = &ws[k * p..(k + 1) * p];
        for a in 0..p {
            let mut jcw = 0.0;
            for b in 0..p {
                jcw += jcs[b * p + a] * (wk[b] - wbar[b]);
            }
            v[a] = gs[(k + 1) * p + a] - gs[k * p + a] - (jcw + shift[a]) / nf;
        }
        for a in 0..p {
            s0[a] += v[a];
            s1[a] += u * v[a];
        }
        u1 += u;
        u2 += u * u;
    }
    let a = Vector::from_vec(s0) - cstar.transpose() * Vector::from_vec(s1);
    let ctj = cstar.transpose() * j;
    let bj = j * nf - (&ctj + ctj.transpose()) * u1 + &ctj * cstar * u2;
    let dbar = Mat::identity(p, p) - cstar * (u1 / nf);
    let b = bj / nf + dbar.transpose() * (sigma_inv - j) * &dbar;
    let b = (&b + b.transpose()) * 0.5;
    b.clone()
        .cholesky()
        .map(|ch| ch.solve(&a))
        .ok_or(Error::DegenerateInformation { eigenvalues: sym_eigenvalues(&b) })
}

/// Profile log-likelihood ratio with the trend estimated under `cstar` and
/// evaluated at `cbar`.
pub fn l_tau_star(cbar: &Mat, cstar: &Mat, inputs: &LrInputs) -> Result<f64> {
    inputs.check_square(cbar)?;
    let delta = profile_delta(cstar, inputs)?;
    let x = inputs.dedrifted(&delta);
    let end = x.column(inputs.n()).into_owned();
    let g = inputs.drifted(&end);
    let (d, q) = delta_and_q(cbar, &x, &g, &inputs.sigma_inv, &inputs.j);
    Ok(d - 0.5 * q - 0.5 * end.dot(&(&inputs.sigma_inv * &end)))
}

/// Trace statistic for the linear-trend case: twice the maximum of
/// [`l_tau_star`]`(·; 0)` over `C̄`, with the innovation path bridged.
pub fn sl_stat(inputs: &LrInputs, flavor: Flavor) -> Result<f64> {
    let b = bridge(&inputs.w);
    match flavor {
        Flavor::Gaussian => gaussian_form(b.values(), &inputs.sigma_inv),
        // the bridged path ends at zero, so the drift add-back vanishes
        Flavor::Semiparametric => trace_form(b.values(), inputs.h.values(), &inputs.sigma_inv, &inputs.j),
    }
}

pub fn statistic(kind: TestKind, inputs: &LrInputs) -> Result<f64> {
    match kind.trend() {
        TrendCase::InterceptOnly => johansen_stat(inputs, kind.flavor()),
        TrendCase::LinearTrend => sl_stat(inputs, kind.flavor()),
    }
}

/// Point-optimal statistic used for the power envelope: `l_mu_star(C)` or
/// `l_tau_star(C; C)`.
pub fn point_optimal(c: &Mat, trend: TrendCase, inputs: &LrInputs) -> Result<f64> {
    match trend {
        TrendCase::InterceptOnly => l_mu_star(c, inputs),
        TrendCase::LinearTrend => l_tau_star(c, c, inputs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_panel, make_local_c, EcmConfig, InnovationSpec, Panel};
    use crate::process::{partial_sum, sigma_hat};
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_mat(p: usize, rng: &mut impl Rng) -> Mat {
        Mat::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_spd(p: usize, rng: &mut impl Rng) -> Mat {
        let a = random_mat(p, rng);
        &a * a.transpose() + Mat::identity(p, p) * 0.5
    }

    fn brownian(p: usize, n: usize, lead: usize, rng: &mut impl Rng) -> StepProcess {
        let inc = Mat::from_fn(p, n - lead, |_, _| rng.sample::<f64, _>(StandardNormal));
        StepProcess::cumulate(&inc, lead, 1.0 / ((n - lead) as f64).sqrt())
    }

    /// Inputs with `J = Σ⁻¹ + PSD` and a correlated score path.
    fn random_inputs(p: usize, n: usize, lead: usize, seed: u64) -> LrInputs {
        let mut rng = rng_from_seed(seed);
        let sigma = random_spd(p, &mut rng);
        let extra = random_spd(p, &mut rng) * 0.3;
        let sigma_inv = spd_inverse(&sigma).unwrap();
        let j = &sigma_inv + extra;
        let w = brownian(p, n, lead, &mut rng);
        let noise = brownian(p, n, lead, &mut rng);
        let raw = StepProcess::new(&sigma_inv * w.values() + noise.values(), lead).unwrap();
        LrInputs::new(w, bridge(&raw), sigma, j).unwrap()
    }

    fn panel_fixture(seed: u64, t: usize, c: f64, tau: f64) -> Panel {
        let sigma = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let mut cfg = EcmConfig::null(2, t, seed);
        cfg.c = make_local_c(c, 2);
        cfg.mu = Vector::from_vec(vec![1.0, -2.0]);
        cfg.tau = Vector::from_vec(vec![tau, -tau]);
        generate_panel(&cfg, &InnovationSpec::gaussian(sigma)).unwrap()
    }

    /// Wald statistic for `Π = 0` in `Δy_t = Π z_{t-1} + e_t` with weight `Σ̂⁻¹`.
    fn ols_wald(dy: &[Vector], z: &[Vector], sigma: &Mat) -> f64 {
        let p = sigma.nrows();
        let mut szz = Mat::zeros(p, p);
        let mut syz = Mat::zeros(p, p);
        for (y, x) in dy.iter().zip(z) {
            szz += x * x.transpose();
            syz += y * x.transpose();
        }
        let pi = &syz * szz.clone().try_inverse().unwrap();
        let sinv = sigma.clone().try_inverse().unwrap();
        (pi.transpose() * sinv * &pi * szz).trace()
    }

    #[test]
    fn ito_sum_trivial_cases() {
        let mut rng = rng_from_seed(1);
        let x = brownian(2, 50, 0, &mut rng);
        let flat = StepProcess::new(Mat::zeros(2, 51), 0).unwrap();
        assert_eq!(ito_sum(&x, &flat).unwrap(), Mat::zeros(2, 2));
        let h = brownian(3, 50, 0, &mut rng);
        let x0 = Vector::from_vec(vec![1.5, -0.5]);
        let mut vals = Mat::zeros(2, 51);
        for k in 0..51 {
            vals.set_column(k, &x0);
        }
        let got = left_sum(&vals, h.values());
        let expect = &x0 * h.endpoint().transpose();
        assert!((got - expect).amax() < 1e-12);
    }

    #[test]
    fn ito_identity_scalar() {
        let mut rng = rng_from_seed(2);
        let n = 10_000;
        let mut err = 0.0;
        for _ in 0..200 {
            let w = brownian(1, n, 0, &mut rng);
            let s = ito_sum(&w, &w).unwrap()[(0, 0)];
            let e = w.endpoint()[0];
            err += (s - (e * e - 1.0) / 2.0).abs();
        }
        assert!(err / 200.0 < 0.02);
    }

    #[test]
    fn l_mu_star_zero_at_origin() {
        let inp = random_inputs(2, 200, 0, 3);
        assert_eq!(l_mu_star(&Mat::zeros(2, 2), &inp).unwrap(), 0.0);
        assert_eq!(l_tau_star(&Mat::zeros(2, 2), &Mat::zeros(2, 2), &inp).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_reduction_of_each_statistic() {
        for seed in 0..20 {
            let mut rng = rng_from_seed(100 + seed);
            let p = 1 + (seed as usize % 3);
            let sigma = random_spd(p, &mut rng);
            let w = brownian(p, 300, (seed % 2) as usize, &mut rng);
            let inp = LrInputs::gaussian(w, sigma).unwrap();
            for stat in [johansen_stat, sl_stat] {
                let a = stat(&inp, Flavor::Gaussian).unwrap();
                let b = stat(&inp, Flavor::Semiparametric).unwrap();
                assert!((a - b).abs() <= 1e-10 * (1.0 + a), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gaussian_johansen_matches_ols_wald() {
        for seed in 0..5 {
            let panel = panel_fixture(seed, 120, -4.0, 0.0);
            let sigma = sigma_hat(&panel).unwrap();
            let dy = panel.differences();
            let inp = LrInputs::gaussian(partial_sum(&dy).unwrap(), sigma.clone()).unwrap();
            let stat = johansen_stat(&inp, Flavor::Gaussian).unwrap();
            let y1 = panel.y.column(0).into_owned();
            let lhs: Vec<Vector> = (1..panel.len()).map(|t| dy.column(t - 1).into_owned()).collect();
            let z: Vec<Vector> = (1..panel.len()).map(|t| panel.y.column(t - 1) - &y1).collect();
            let oracle = ols_wald(&lhs, &z, &sigma);
            assert!((stat - oracle).abs() <= 1e-8 * (1.0 + oracle), "{stat} vs {oracle}");
        }
    }

    #[test]
    fn gaussian_sl_matches_detrended_regression() {
        for seed in 0..5 {
            let panel = panel_fixture(seed, 150, -6.0, 0.4);
            let sigma = sigma_hat(&panel).unwrap();
            let dy = panel.differences();
            let inp = LrInputs::gaussian(partial_sum(&dy).unwrap(), sigma.clone()).unwrap();
            let stat = sl_stat(&inp, Flavor::Gaussian).unwrap();
            let t = panel.len();
            let mean = dy.column_mean();
            let y1 = panel.y.column(0).into_owned();
            // rows t = 2..T, regressor uses y_{t-1}
            let lhs: Vec<Vector> = (2..=t).map(|s| dy.column(s - 2) - &mean).collect();
            let z: Vec<Vector> = (2..=t)
                .map(|s| panel.y.column(s - 2) - &y1 - &mean * (s as f64 - 2.0))
                .collect();
            let oracle = ols_wald(&lhs, &z, &sigma);
            assert!((stat - oracle).abs() <= 1e-8 * (1.0 + oracle), "{stat} vs {oracle}");
        }
    }

    /// Direct evaluation of the maximal-invariant likelihood at `(C, δ)`.
    fn l_m(c: &Mat, delta: &Vector, inp: &LrInputs) -> f64 {
        let w = inp.w();
        let n = w.n();
        let p = w.dim();
        let end = w.endpoint();
        let drift = inp.sigma_inv() * &end;
        let mut lin = 0.0;
        let mut quad = 0.0;
        let mut ybar = Vector::zeros(p);
        for k in 0..n {
            let d = Mat::identity(p, p) - c * w.clock(k);
            let y = c * w.at(k) + d * delta;
            let dg = inp.h().at(k + 1) - inp.h().at(k) + &drift * (w.clock(k + 1) - w.clock(k));
            lin += y.dot(&dg);
            quad += y.dot(&(inp.j() * &y)) / n as f64;
            ybar += &y / n as f64;
        }
        quad += ybar.dot(&((inp.sigma_inv() - inp.j()) * &ybar));
        lin - 0.5 * quad
    }

    #[test]
    fn l_mu_star_is_the_zero_trend_likelihood() {
        for lead in [0, 1] {
            let inp = random_inputs(2, 400, lead, 7 + lead as u64);
            let mut rng = rng_from_seed(8);
            let c = random_mat(2, &mut rng);
            let a = l_mu_star(&c, &inp).unwrap();
            let b = l_m(&c, &Vector::zeros(2), &inp);
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn profile_delta_maximizes_likelihood() {
        for lead in [0, 1] {
            let inp = random_inputs(2, 300, lead, 11 + lead as u64);
            let mut rng = rng_from_seed(12);
            let c = random_mat(2, &mut rng) * 3.0;
            let d = profile_delta(&c, &inp).unwrap();
            let base = l_m(&c, &d, &inp);
            for i in 0..2 {
                for sign in [-1.0, 1.0] {
                    let mut e = d.clone();
                    e[i] += sign * 1e-3;
                    assert!(l_m(&c, &e, &inp) < base);
                }
            }
        }
    }

    #[test]
    fn profile_delta_at_zero_and_its_information() {
        let inp = random_inputs(2, 250, 0, 13);
        assert_eq!(profile_delta(&Mat::zeros(2, 2), &inp).unwrap(), inp.w().endpoint());
        // a tiny C exercises the general branch; B(0) = Σ⁻¹ makes δ̂ ≈ W(1)
        let tiny = Mat::from_element(2, 2, 1e-12);
        let d = profile_delta(&tiny, &inp).unwrap();
        assert!((d - inp.w().endpoint()).amax() < 1e-8);
    }

    #[test]
    fn l_tau_star_is_profile_difference() {
        for lead in [0, 1] {
            let inp = random_inputs(2, 300, lead, 21 + lead as u64);
            let mut rng = rng_from_seed(22);
            let cbar = random_mat(2, &mut rng) * 2.0;
            let cstar = random_mat(2, &mut rng) * 2.0;
            let dstar = profile_delta(&cstar, &inp).unwrap();
            let d0 = profile_delta(&Mat::zeros(2, 2), &inp).unwrap();
            let direct = l_m(&cbar, &dstar, &inp) - l_m(&Mat::zeros(2, 2), &d0, &inp);
            let got = l_tau_star(&cbar, &cstar, &inp).unwrap();
            // exact when the clock steps match the du weights 1/n; O(1/n) otherwise
            let tol = if lead == 0 { 1e-9 } else { 1e-3 };
            assert!((got - direct).abs() < tol * (1.0 + direct.abs()), "{got} vs {direct}");
        }
    }

    /// Maximizes a quadratic in `vec(C̄)` by finite-difference Newton.
    fn numeric_max(f: impl Fn(&Mat) -> f64, p: usize) -> f64 {
        let m = p * p;
        let unit = |i: usize, h: f64| {
            let mut c = Mat::zeros(p, p);
            c.as_mut_slice()[i] = h;
            c
        };
        let h = 1.0;
        let f0 = f(&Mat::zeros(p, p));
        let mut grad = Vector::zeros(m);
        let mut hess = Mat::zeros(m, m);
        for i in 0..m {
            grad[i] = (f(&unit(i, h)) - f(&unit(i, -h))) / (2.0 * h);
            for jdx in 0..m {
                let pp = f(&(unit(i, h) + unit(jdx, h)));
                let pm = f(&(unit(i, h) - unit(jdx, h)));
                let mp = f(&(unit(jdx, h) - unit(i, h)));
                let mm = f(&(-unit(i, h) - unit(jdx, h)));
                hess[(i, jdx)] = (pp - pm - mp + mm) / (4.0 * h * h);
            }
        }
        let step = hess.lu().solve(&(-&grad)).unwrap();
        let c = Mat::from_column_slice(p, p, step.as_slice());
        f(&c) - f0
    }

    #[test]
    fn closed_form_equals_numerical_maximum() {
        for seed in 0..5 {
            let inp = random_inputs(2, 300, (seed % 2) as usize, 40 + seed);
            let jo = johansen_stat(&inp, Flavor::Semiparametric).unwrap();
            let num = 2.0 * numeric_max(|c| l_mu_star(c, &inp).unwrap(), 2);
            assert!((jo - num).abs() < 1e-6 * (1.0 + jo), "{jo} vs {num}");
            let sl = sl_stat(&inp, Flavor::Semiparametric).unwrap();
            let zero = Mat::zeros(2, 2);
            let num = 2.0 * numeric_max(|c| l_tau_star(c, &zero, &inp).unwrap(), 2);
            assert!((sl - num).abs() < 1e-6 * (1.0 + sl), "{sl} vs {num}");
        }
    }

    #[test]
    fn statistics_are_non_negative() {
        for seed in 0..30 {
            let inp = random_inputs(2, 100, 1, 60 + seed);
            for kind in TestKind::ALL {
                assert!(statistic(kind, &inp).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn incoherent_information_is_reported() {
        let mut inp = random_inputs(2, 100, 0, 90);
        inp.j = Mat::from_diagonal(&Vector::from_vec(vec![-5.0, -5.0]));
        match johansen_stat(&inp, Flavor::Semiparametric) {
            Err(Error::DegenerateInformation { eigenvalues }) => assert_eq!(eigenvalues.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn names_round_trip() {
        for k in TestKind::ALL {
            assert_eq!(k.as_str().parse::<TestKind>().unwrap(), k);
            assert_eq!(TestKind::new(k.trend(), k.flavor()), k);
        }
        assert!("johansen".parse::<TestKind>().is_err());
        assert_eq!("linear".parse::<TrendCase>().unwrap(), TrendCase::LinearTrend);
    }
}
