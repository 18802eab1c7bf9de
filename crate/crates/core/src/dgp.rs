//! Error-correction panels under local-to-unity alternatives.
//!
//! A panel is generated as `y_t = mu + tau * t + x_t` with
//! `x_t = (I + C/T) x_{t-1} + eps_t` and `x_0 = 0`. Innovations are i.i.d.
//! and rescaled so that their population covariance equals the target
//! `sigma` exactly.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, is_symmetric, serde_rows, serde_vec, spd_inverse, Mat, Vector};
use crate::rng::rng_from_seed;

/// Shape of the innovation density before the covariance map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    /// Multivariate Student t: a Gaussian vector over one shared chi scale.
    StudentT { dof: f64 },
    /// Independent Azzalini skew-t components with per-component slant.
    SkewedT { dof: f64, slant: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    #[serde(flatten)]
    pub family: Family,
    /// Target covariance of the innovations.
    #[serde(with = "serde_rows")]
    pub sigma: Mat,
}

impl InnovationSpec {
    pub fn gaussian(sigma: Mat) -> Self {
        Self { family: Family::Gaussian, sigma }
    }

    pub fn student_t(dof: f64, sigma: Mat) -> Self {
        Self { family: Family::StudentT { dof }, sigma }
    }

    pub fn skewed_t(dof: f64, slant: Vec<f64>, sigma: Mat) -> Self {
        Self { family: Family::SkewedT { dof, slant }, sigma }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if p == 0 || !self.sigma.is_square() {
            return Err(Error::dim("sigma must be a non-empty square matrix"));
        }
        if self.sigma.iter().any(|x| !x.is_finite()) || !is_symmetric(&self.sigma, 1e-12) {
            return Err(Error::NotPositiveDefinite);
        }
        cholesky_lower(&self.sigma)?;
        match &self.family {
            Family::Gaussian => {}
            Family::StudentT { dof } => check_dof(*dof)?,
            Family::SkewedT { dof, slant } => {
                check_dof(*dof)?;
                if slant.len() != p {
                    return Err(Error::dim(format!("slant has length {}, expected {p}", slant.len())));
                }
                if slant.iter().any(|a| !a.is_finite()) {
                    return Err(Error::config("slant must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Location Fisher information `E[l l']` of the innovation density.
    ///
    /// Closed form for the Gaussian and multivariate t families; the skew-t
    /// components are integrated numerically.
    pub fn fisher_information(&self) -> Result<Mat> {
        self.validate()?;
        let p = self.dim();
        let sigma_inv = spd_inverse(&self.sigma)?;
        match &self.family {
            Family::Gaussian => Ok(sigma_inv),
            Family::StudentT { dof } => {
                let nu = *dof;
                let pf = p as f64;
                Ok(sigma_inv * ((nu + pf) * nu / ((nu + pf + 2.0) * (nu - 2.0))))
            }
            Family::SkewedT { dof, slant } => {
                let l = cholesky_lower(&self.sigma)?;
                let l_inv = l.clone().try_inverse().ok_or(Error::NotPositiveDefinite)?;
                let d = Mat::from_diagonal(&Vector::from_iterator(
                    p,
                    slant.iter().map(|&a| SkewT::new(*dof, a).standardized_fisher_information()),
                ));
                Ok(l_inv.transpose() * d * l_inv)
            }
        }
    }
}

fn check_dof(dof: f64) -> Result<()> {
    if !dof.is_finite() || dof <= 2.0 {
        return Err(Error::InfiniteVariance(dof));
    }
    Ok(())
}

/// Univariate Azzalini skew-t with its first two moments.
#[derive(Debug, Clone, Copy)]
struct SkewT {
    dof: f64,
    slant: f64,
}

impl SkewT {
    fn new(dof: f64, slant: f64) -> Self {
        Self { dof, slant }
    }

    fn delta(&self) -> f64 {
        self.slant / (1.0 + self.slant * self.slant).sqrt()
    }

    fn mean(&self) -> f64 {
        let nu = self.dof;
        self.delta()
            * (nu / std::f64::consts::PI).sqrt()
            * (ln_gamma((nu - 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp()
    }

    fn sd(&self) -> f64 {
        let m = self.mean();
        (self.dof / (self.dof - 2.0) - m * m).sqrt()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, chi: &ChiSquared<f64>) -> f64 {
        let d = self.delta();
        let u0: f64 = rng.sample(StandardNormal);
        let u1: f64 = rng.sample(StandardNormal);
        let z = d * u0.abs() + (1.0 - d * d).sqrt() * u1;
        let v = chi.sample(rng);
        z / (v / self.dof).sqrt()
    }

    fn log_density(&self, x: f64, t_nu: &StudentsT, t_nu1: &StudentsT) -> f64 {
        use statrs::distribution::Continuous;
        let nu = self.dof;
        let arg = self.slant * x * ((nu + 1.0) / (nu + x * x)).sqrt();
        std::f64::consts::LN_2 + t_nu.ln_pdf(x) + t_nu1.cdf(arg).ln()
    }

    /// Fisher information of the zero-mean, unit-variance version.
    fn standardized_fisher_information(&self) -> f64 {
        let t_nu = StudentsT::new(0.0, 1.0, self.dof).expect("dof > 2");
        let t_nu1 = StudentsT::new(0.0, 1.0, self.dof + 1.0).expect("dof > 2");
        // x = sinh(s) spreads nodes into the polynomial tails
        let (lo, hi, n) = (-9.0_f64, 9.0_f64, 36_000usize);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let s = lo + h * i as f64;
            let x = s.sinh();
            let jac = s.cosh();
            let eps = 1e-5 * (1.0 + x.abs());
            let lp = self.log_density(x + eps, &t_nu, &t_nu1);
            let lm = self.log_density(x - eps, &t_nu, &t_nu1);
            let score = -(lp - lm) / (2.0 * eps);
            let dens = self.log_density(x, &t_nu, &t_nu1).exp();
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let term = score * score * dens * jac;
            if term.is_finite() {
                acc += w * term;
            }
        }
        let sd = self.sd();
        acc * h / 3.0 * sd * sd
    }
}

/// Draws `t` i.i.d. innovations as the columns of a `p x t` matrix.
pub fn sample_innovations(spec: &InnovationSpec, t: usize, seed: u64) -> Result<Mat> {
    spec.validate()?;
    if t == 0 {
        return Err(Error::config("need at least one innovation"));
    }
    let p = spec.dim();
    let l = cholesky_lower(&spec.sigma)?;
    let mut rng = rng_from_seed(seed);
    let mut z = Mat::zeros(p, t);
    match &spec.family {
        Family::Gaussian => {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        Family::StudentT { dof } => {
            let chi = ChiSquared::new(*dof).map_err(|e| Error::config(e.to_string()))?;
            // Var(g * sqrt(nu / V)) = nu / (nu - 2), so rescale by sqrt((nu - 2) / nu)
            for mut col in z.column_iter_mut() {
                for v in col.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let scale = ((dof - 2.0) / chi.sample(&mut rng)).sqrt();
                col *= scale;
            }
        }
        Family::SkewedT { dof, slant } => {
            let chi = ChiSquared::new(*dof).map_err(|e| Error::config(e.to_string()))?;
            let comps: Vec<(SkewT, f64, f64)> = slant
                .iter()
                .map(|&a| {
                    let st = SkewT::new(*dof, a);
                    (st, st.mean(), st.sd())
                })
                .collect();
            for mut col in z.column_iter_mut() {
                for (v, (st, m, sd)) in col.iter_mut().zip(&comps) {
                    *v = (st.sample(&mut rng, &chi) - m) / sd;
                }
            }
        }
    }
    Ok(l * z)
}

/// Parameters of one error-correction panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcmConfig {
    pub p: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Local parameter; the feedback matrix is `C / T`.
    #[serde(with = "serde_rows")]
    pub c: Mat,
    #[serde(with = "serde_vec")]
    pub mu: Vector,
    /// Trend slope on the raw scale.
    #[serde(with = "serde_vec")]
    pub tau: Vector,
    pub seed: u64,
}

impl EcmConfig {
    /// A null configuration (`C = 0`, no level, no trend).
    pub fn null(p: usize, t: usize, seed: u64) -> Self {
        Self {
            p,
            t,
            c: Mat::zeros(p, p),
            mu: Vector::zeros(p),
            tau: Vector::zeros(p),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 10 {
            return Err(Error::config(format!("T = {} is below the minimum of 10", self.t)));
        }
        if self.c.shape() != (self.p, self.p) || self.mu.len() != self.p || self.tau.len() != self.p {
            return Err(Error::dim(format!("EcmConfig entries do not match p = {}", self.p)));
        }
        let finite = self.c.iter().chain(self.mu.iter()).chain(self.tau.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::config("EcmConfig entries must be finite"));
        }
        Ok(())
    }

    /// Local trend parameter `delta = sqrt(T) * tau`.
    pub fn delta(&self) -> Vector {
        &self.tau * (self.t as f64).sqrt()
    }

    /// Feedback matrix `Pi = C / T`.
    pub fn pi(&self) -> Mat {
        &self.c / self.t as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelMeta {
    Generated(EcmConfig),
    External,
}

/// Observed series, one column per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub y: Mat,
    pub meta: PanelMeta,
}

impl Panel {
    pub fn external(y: Mat) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("panel contains non-finite values"));
        }
        Ok(Self { y, meta: PanelMeta::External })
    }

    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    /// First differences `Δy_t` for `t = 2..T`, as a `p x (T-1)` matrix.
    pub fn differences(&self) -> Mat {
        let (p, t) = self.y.shape();
        Mat::from_fn(p, t.saturating_sub(1), |i, k| self.y[(i, k + 1)] - self.y[(i, k)])
    }

    /// Adds `shift` to every observation.
    pub fn shifted(&self, shift: &Vector) -> Self {
        let mut y = self.y.clone();
        for mut col in y.column_iter_mut() {
            col += shift;
        }
        Self { y, meta: self.meta.clone() }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((1..=self.dim()).map(|i| format!("y{i}")))?;
        for col in self.y.column_iter() {
            wr.write_record(col.iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a panel with header `y1,...,yp` and one row per time point.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let p = rd.headers()?.len();
        if p == 0 {
            return Err(Error::config("panel CSV has no columns"));
        }
        let mut data = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("not a number: {field:?}")))?;
                data.push(v);
            }
        }
        let t = data.len() / p;
        Panel::external(Mat::from_vec(p, t, data))
    }
}

/// Runs the error-correction recursion on given innovations.
pub fn simulate_ecm(config: &EcmConfig, eps: &Mat) -> Result<Panel> {
    config.validate()?;
    if eps.shape() != (config.p, config.t) {
        return Err(Error::dim(format!(
            "innovations are {:?}, expected ({}, {})",
            eps.shape(),
            config.p,
            config.t
        )));
    }
    let transition = Mat::identity(config.p, config.p) + config.pi();
    let mut y = Mat::zeros(config.p, config.t);
    let mut x = Vector::zeros(config.p);
    for t in 0..config.t {
        x = &transition * &x + eps.column(t);
        let trend = &config.tau * (t + 1) as f64;
        y.set_column(t, &(&config.mu + trend + &x));
    }
    Ok(Panel { y, meta: PanelMeta::Generated(config.clone()) })
}

/// Draws innovations from `spec` with the config's seed and simulates the panel.
pub fn generate_panel(config: &EcmConfig, spec: &InnovationSpec) -> Result<Panel> {
    if spec.dim() != config.p {
        return Err(Error::dim("innovation spec and config disagree on p"));
    }
    let eps = sample_innovations(spec, config.t, config.seed)?;
    simulate_ecm(config, &eps)
}

/// The rank-one design direction: ones in the first row, zeros elsewhere.
///
/// For `p = 2` this is `[[1, 1], [0, 0]]`.
pub fn local_direction(p: usize) -> Mat {
    Mat::from_fn(p, p, |i, _| if i == 0 { 1.0 } else { 0.0 })
}

/// `c` times the design direction.
pub fn make_local_c(c: f64, p: usize) -> Mat {
    local_direction(p) * c
}

/// `c` times a caller-supplied direction.
pub fn make_local_c_along(c: f64, direction: &Mat) -> Mat {
    direction * c
}
