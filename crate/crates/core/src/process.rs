//! Step processes on a uniform grid: partial sums, bridges, and the plug-in
//! objects every statistic consumes.

use std::io::{Read, Write};

use serde::Serialize;

use crate::dgp::Panel;
use crate::error::{Error, Result};
use crate::kde::ScoreSet;
use crate::linalg::{cholesky_lower, symmetrize, Mat, Vector};

/// A p-dimensional step function on the grid `k = 0..=n`.
///
/// `lead` is the number of leading grid points before the first increment
/// arrives: feasible partial sums start at `t = 2`, so they carry `lead = 1`,
/// while simulated Brownian paths carry `lead = 0`. The bridge clock
/// `u_k = (k - lead)⁺ / (n - lead)` runs from 0 to 1 over the active part.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProcess {
    values: Mat,
    lead: usize,
}

impl StepProcess {
    /// Wraps a `p x (n+1)` matrix of grid values. Column 0 must be zero.
    pub fn new(values: Mat, lead: usize) -> Result<Self> {
        let cols = values.ncols();
        if cols < 2 {
            return Err(Error::config("step process needs at least two grid points"));
        }
        if lead + 1 >= cols {
            return Err(Error::config("lead leaves no increments"));
        }
        if values.column(0).iter().any(|&v| v != 0.0) {
            return Err(Error::config("step process must start at zero"));
        }
        Ok(Self { values, lead })
    }

    /// `scale * Σ_{j < (k - lead)⁺} increments_j` at each `k = 0..=lead+m`,
    /// for `m` increment columns.
    pub fn cumulate(increments: &Mat, lead: usize, scale: f64) -> Self {
        let (p, m) = increments.shape();
        let n = m + lead;
        let mut values = Mat::zeros(p, n + 1);
        let mut acc = vec![0.0; p];
        let inc = increments.as_slice();
        let out = values.as_mut_slice();
        for j in 0..m {
            let base = (lead + j + 1) * p;
            for i in 0..p {
                acc[i] += inc[j * p + i];
                out[base + i] = acc[i] * scale;
            }
        }
        Self { values, lead }
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn into_values(self) -> Mat {
        self.values
    }

    pub fn lead(&self) -> usize {
        self.lead
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Grid size `n`; the process has `n + 1` grid values.
    pub fn n(&self) -> usize {
        self.values.ncols() - 1
    }

    /// Bridge clock at grid point `k`.
    pub fn clock(&self, k: usize) -> f64 {
        k.saturating_sub(self.lead) as f64 / (self.n() - self.lead) as f64
    }

    pub fn at(&self, k: usize) -> Vector {
        self.values.column(k).into_owned()
    }

    pub fn endpoint(&self) -> Vector {
        self.at(self.n())
    }

    /// Left-endpoint time average `(1/n) Σ_{k<n} X_k`.
    pub fn mean(&self) -> Vector {
        let n = self.n();
        self.values.columns(0, n).column_sum() / n as f64
    }

    /// `X_{k+1} - X_k` for `k = 0..n`.
    pub fn increments(&self) -> Mat {
        let n = self.n();
        self.values.columns(1, n) - self.values.columns(0, n)
    }

    pub fn same_grid(&self, other: &StepProcess) -> bool {
        self.values.shape() == other.values.shape() && self.lead == other.lead
    }

    pub fn map_linear(&self, a: &Mat) -> Self {
        Self { values: a * &self.values, lead: self.lead }
    }

    /// Writes the grid as CSV with columns `k,x1..xp`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        out.write_record(&header)?;
        for (k, col) in self.values.column_iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(col.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, lead: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::config(format!("bad value {s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            cols.push(vals);
        }
        let p = cols.first().map_or(0, Vec::len);
        if p == 0 || cols.iter().any(|c| c.len() != p) {
            return Err(Error::dim("ragged or empty process file"));
        }
        let values = Mat::from_fn(p, cols.len(), |i, k| cols[k][i]);
        Self::new(values, lead)
    }
}

/// `Ŵ(k/T) = T^{-1/2} Σ_{t=2}^{k} Δy_t` from the `p x (T-1)` differences.
pub fn partial_sum(increments: &Mat) -> Result<StepProcess> {
    let t = increments.ncols() + 1;
    if t < 3 {
        return Err(Error::config("partial sums need T >= 3"));
    }
    Ok(StepProcess::cumulate(increments, 1, 1.0 / (t as f64).sqrt()))
}

/// `X_k - u_k X_n`, formed as `((n - lead) X_k - (k - lead)⁺ X_n) / (n - lead)`.
pub fn bridge(proc: &StepProcess) -> StepProcess {
    let n = proc.n();
    let active = (n - proc.lead) as f64;
    let p = proc.dim();
    let src = proc.values.as_slice();
    let end = &src[n * p..];
    let mut values = Mat::zeros(p, n + 1);
    let out = values.as_mut_slice();
    for k in 0..=n {
        let m = k.saturating_sub(proc.lead) as f64;
        for i in 0..p {
            out[k * p + i] = (src[k * p + i] * active - end[i] * m) / active;
        }
    }
    StepProcess { values, lead: proc.lead }
}

/// Bridge of the scaled partial sums of `increments`, built from unscaled
/// prefix sums so that adding a constant to every increment cancels without
/// rounding whenever the prefix sums are exact.
pub fn bridged_partial_sum(increments: &Mat, lead: usize, scale: f64) -> StepProcess {
    let raw = StepProcess::cumulate(increments, lead, 1.0);
    let mut out = bridge(&raw);
    out.values *= scale;
    out
}

/// Centered covariance of the first differences, divisor `T - 1`.
pub fn sigma_hat(panel: &Panel) -> Result<Mat> {
    if panel.len() < 3 {
        return Err(Error::config("sigma_hat needs T >= 3"));
    }
    sigma_hat_from_increments(&panel.differences())
}

pub fn sigma_hat_from_increments(dy: &Mat) -> Result<Mat> {
    let (p, n) = dy.shape();
    let mean = dy.column_mean();
    let mut s = Mat::zeros(p, p);
    for col in dy.column_iter() {
        let d = col - &mean;
        s.ger(1.0, &d, &d, 1.0);
    }
    s /= n as f64;
    let s = symmetrize(&s);
    // relative pivot check: a rank-deficient Σ̂ can pass Cholesky by rounding
    let scale = s.diagonal().max();
    match cholesky_lower(&s) {
        Ok(l) if scale > 0.0 && l.diagonal().min() > 1e-7 * scale.sqrt() => Ok(s),
        _ => Err(Error::DegeneratePanel),
    }
}

/// The four empirical objects behind every feasible statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginSet {
    pub w_eps: StepProcess,
    pub b_lf: StepProcess,
    pub sigma_hat: Mat,
    pub j_hat: Mat,
    pub diagnostics: PluginDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PluginDiagnostics {
    pub bandwidths: Vec<f64>,
    pub floor: f64,
    pub underflow_count: usize,
    pub degenerate_scores: bool,
}

pub fn build_plugins(panel: &Panel, scores: &ScoreSet, j_hat: Mat, sigma_hat: Mat) -> Result<PluginSet> {
    let p = panel.dim();
    let dy = panel.differences();
    if scores.scores.shape() != dy.shape() {
        return Err(Error::dim("score set does not match the panel"));
    }
    if j_hat.shape() != (p, p) || sigma_hat.shape() != (p, p) {
        return Err(Error::dim("plug-in matrices do not match the panel"));
    }
    let scale = 1.0 / (panel.len() as f64).sqrt();
    Ok(PluginSet {
        w_eps: partial_sum(&dy)?,
        b_lf: bridged_partial_sum(&scores.scores, 1, scale),
        sigma_hat,
        j_hat,
        diagnostics: PluginDiagnostics {
            bandwidths: scores.config.bandwidths.clone(),
            floor: scores.config.floor,
            underflow_count: scores.underflow_count,
            degenerate_scores: scores.degenerate,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_panel, EcmConfig, InnovationSpec};
    use proptest::prelude::*;

    #[test]
    fn partial_sum_constant_increment() {
        let t = 9;
        let inc = Mat::from_element(2, t - 1, 0.5);
        let w = partial_sum(&inc).unwrap();
        assert_eq!(w.n(), t);
        assert_eq!(w.at(0), Vector::zeros(2));
        assert_eq!(w.at(1), Vector::zeros(2));
        let expect = (t - 1) as f64 * 0.5 / (t as f64).sqrt();
        assert!((w.endpoint()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn partial_sum_single_jump() {
        let mut inc = Mat::zeros(1, 5);
        inc[(0, 0)] = 1.0;
        let w = partial_sum(&inc).unwrap();
        let v: Vec<f64> = w.values().iter().copied().collect();
        let s = 1.0 / 6f64.sqrt();
        assert_eq!(v, vec![0.0, 0.0, s, s, s, s, s]);
    }

    #[test]
    fn bridge_hand_computation() {
        // T = 4, increments e1 at t = 2 only
        let mut inc = Mat::zeros(2, 3);
        inc[(0, 0)] = 1.0;
        let b = bridge(&partial_sum(&inc).unwrap());
        let expect = [0.0, 0.0, 0.5 * (1.0 - 1.0 / 3.0), 0.5 * (1.0 - 2.0 / 3.0), 0.0];
        for (k, e) in expect.iter().enumerate() {
            assert!((b.at(k)[0] - e).abs() < 1e-15, "k = {k}");
            assert_eq!(b.at(k)[1], 0.0);
        }
    }

    #[test]
    fn bridge_of_constant_increments_vanishes() {
        let inc = Mat::from_element(3, 50, 0.375);
        for lead in [0, 1, 4] {
            let b = bridged_partial_sum(&inc, lead, 0.1);
            assert!(b.values().iter().all(|&v| v == 0.0), "lead {lead}");
        }
    }

    #[test]
    fn clock_spans_active_grid() {
        let w = partial_sum(&Mat::zeros(1, 9)).unwrap();
        assert_eq!(w.clock(0), 0.0);
        assert_eq!(w.clock(1), 0.0);
        assert_eq!(w.clock(10), 1.0);
        assert!((w.clock(4) - 3.0 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn sigma_hat_rank_one_is_degenerate() {
        let v = [1.0, 2.0];
        let dy = Mat::from_fn(2, 20, |i, t| if t % 2 == 0 { v[i] } else { -v[i] });
        assert!(matches!(sigma_hat_from_increments(&dy), Err(Error::DegeneratePanel)));
        let p1 = Mat::from_fn(1, 20, |_, t| if t % 2 == 0 { 1.0 } else { -1.0 });
        let s = sigma_hat_from_increments(&p1).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_hat_large_sample() {
        let sigma = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]));
        let spec = InnovationSpec::gaussian(sigma.clone());
        let panel = generate_panel(&EcmConfig::null(2, 100_000, 5), &spec).unwrap();
        let s = sigma_hat(&panel).unwrap();
        assert!((s - sigma).amax() < 0.05);
    }

    #[test]
    fn csv_round_trip() {
        let w = StepProcess::cumulate(&Mat::from_fn(2, 6, |i, j| (i + j) as f64 * 0.1), 1, 0.5);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = StepProcess::read_csv(buf.as_slice(), 1).unwrap();
        assert_eq!(back, w);
    }

    proptest! {
        #[test]
        fn bridge_endpoint_is_exactly_zero(
            inc in proptest::collection::vec(-1e3..1e3_f64, 4..60),
            lead in 0usize..3,
            scale in 1e-3..10.0_f64,
        ) {
            let m = Mat::from_row_slice(1, inc.len(), &inc);
            let b = bridged_partial_sum(&m, lead, scale);
            prop_assert_eq!(b.endpoint()[0], 0.0);
            prop_assert_eq!(bridge(&StepProcess::cumulate(&m, lead, scale)).endpoint()[0], 0.0);
        }

        #[test]
        fn dyadic_shift_leaves_bridge_bit_identical(
            ints in proptest::collection::vec(-512i32..512, 4..80),
            shift in -64i32..64,
        ) {
            // values on a 1/8 grid keep every prefix sum exact
            let inc: Vec<f64> = ints.iter().map(|&v| v as f64 / 8.0).collect();
            let m = Mat::from_row_slice(1, inc.len(), &inc);
            let moved = m.map(|v| v + shift as f64 / 4.0);
            let a = bridged_partial_sum(&m, 1, 0.1);
            let b = bridged_partial_sum(&moved, 1, 0.1);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn general_shift_cancels_to_rounding(
            inc in proptest::collection::vec(-10.0..10.0_f64, 4..80),
            shift in -10.0..10.0_f64,
        ) {
            let m = Mat::from_row_slice(1, inc.len(), &inc);
            let moved = m.map(|v| v + shift);
            let a = bridged_partial_sum(&m, 1, 1.0);
            let b = bridged_partial_sum(&moved, 1, 1.0);
            prop_assert!((a.values() - b.values()).amax() < 1e-10);
        }
    }
}
