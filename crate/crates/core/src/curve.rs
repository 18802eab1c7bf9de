//! Rejection-rate tables shared by the simulators and the study harness.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::TrendCase;

/// Label used for point-optimal envelope rows.
pub const ENVELOPE: &str = "envelope";

/// One rejection frequency. `T` is empty for rows simulated in the limit
/// experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub c: f64,
    pub test: String,
    pub trend: TrendCase,
    pub rate: f64,
    pub se: f64,
    pub reps: usize,
    #[serde(rename = "T")]
    pub t: Option<usize>,
}

impl PowerRow {
    pub fn from_counts(
        c: f64,
        test: impl Into<String>,
        trend: TrendCase,
        rejections: usize,
        reps: usize,
        t: Option<usize>,
    ) -> Self {
        let rate = if reps == 0 { 0.0 } else { rejections as f64 / reps as f64 };
        Self::from_rate(c, test, trend, rate, reps, t)
    }

    pub fn from_rate(
        c: f64,
        test: impl Into<String>,
        trend: TrendCase,
        rate: f64,
        reps: usize,
        t: Option<usize>,
    ) -> Self {
        let se = if reps == 0 { 0.0 } else { (rate * (1.0 - rate) / reps as f64).sqrt() };
        Self { c, test: test.into(), trend, rate, se, reps, t }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub rows: Vec<PowerRow>,
}

impl PowerCurve {
    pub fn new(rows: Vec<PowerRow>) -> Self {
        Self { rows }
    }

    pub fn get(&self, test: &str, c: f64) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.test == test && r.c == c)
    }

    pub fn rate(&self, test: &str, c: f64) -> Option<f64> {
        self.get(test, c).map(|r| r.rate)
    }

    pub fn extend(&mut self, other: PowerCurve) {
        self.rows.extend(other.rows);
    }

    /// CSV with header `c,test,trend,rate,se,reps,T`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        if self.rows.is_empty() {
            out.write_record(["c", "test", "trend", "rate", "se", "reps", "T"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<PowerRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_limit_rows() {
        let curve = PowerCurve::new(vec![
            PowerRow::from_counts(-5.0, "johansen-gauss", TrendCase::InterceptOnly, 30, 100, Some(250)),
            PowerRow::from_rate(-5.0, ENVELOPE, TrendCase::InterceptOnly, 0.4, 1000, None),
        ]);
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("c,test,trend,rate,se,reps,T\n"));
        assert!(text.contains("-5.0,envelope,none,0.4,"));
        assert_eq!(PowerCurve::read_csv(buf.as_slice()).unwrap(), curve);
    }

    #[test]
    fn standard_error_formula() {
        let row = PowerRow::from_counts(0.0, "x", TrendCase::LinearTrend, 25, 100, Some(10));
        assert_eq!(row.rate, 0.25);
        assert!((row.se - (0.25_f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
    }
}
