//! Quantitative limits extracted from the pure-boundary iteration: the
//! critical power-law constant and the subcritical exponential rate, plus
//! machine-readable reports.
//!
//! Every estimator consumes deviations `eps = r - 1` directly, never the
//! reconstructed ratio, so no precision is lost near the fixed point. Even
//! and odd indices are tracked separately: the iteration alternates sides of
//! the fixed point, so the two parities form interleaved monotone sequences.

use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Regime};
use crate::recursion::{pure_deviation_sequence, pure_marginal_deviation, Deviation};

/// One estimator outcome against its closed-form target.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateEstimate {
    pub estimator_value: f64,
    pub target: f64,
    pub n_used: usize,
    pub relative_error: f64,
}

impl RateEstimate {
    pub fn new(estimator_value: f64, target: f64, n_used: usize) -> Self {
        RateEstimate {
            estimator_value,
            target,
            n_used,
            relative_error: (estimator_value - target).abs() / target.abs(),
        }
    }
}

/// Closed-form ratio-level power-law constant `(d^2 - 1) / (6 d^2)`.
pub fn ratio_rate_target(params: &ModelParams) -> f64 {
    let d = params.d as f64;
    (d * d - 1.0) / (6.0 * d * d)
}

/// Closed-form probability-level constant
/// `(d^2-1)/(6d^2) * (q^2/(q-1))^2`.
pub fn probability_rate_target(params: &ModelParams) -> f64 {
    let q = params.q as f64;
    let f = q * q / (q - 1.0);
    ratio_rate_target(params) * f * f
}

/// Closed-form subcritical decay rate `ln(A/B) = ln(d(1-p)/(p+q-1))`.
pub fn exponential_rate_target(params: &ModelParams) -> f64 {
    params.rate().ln()
}

/// Power-law estimates at criticality.
#[derive(Debug, Clone, Serialize)]
pub struct PowerLawReport {
    /// `(1/n) |eps_n|^{-2}` at the largest even index, against `(d^2-1)/(6d^2)`.
    pub ratio_even: RateEstimate,
    /// Same estimator at the largest odd index.
    pub ratio_odd: RateEstimate,
    /// `(1/n) |mu_n - 1/q|^{-2}` at the largest even index, against the
    /// probability-level constant.
    pub probability: RateEstimate,
}

/// Runs the pure-boundary iteration to `n` and evaluates the critical
/// power-law estimators. Rejects non-critical parameters.
pub fn power_law_constant(params: &ModelParams, n: usize) -> Result<PowerLawReport> {
    params.require_critical()?;
    if n < 4 {
        return Err(Error::InvalidParameter {
            field: "n",
            value: n as f64,
            constraint: "power-law estimation needs n >= 4 (recommended n >= 1000)",
        });
    }
    let devs = pure_deviation_sequence(params, n);
    let eps_at = |k: usize| devs[k - 1].eps;

    let n_even = n - n % 2;
    let n_odd = n_even - 1;
    let inv_sq = |e: f64| 1.0 / (e * e);

    let ratio_even = RateEstimate::new(
        inv_sq(eps_at(n_even)) / n_even as f64,
        ratio_rate_target(params),
        n_even,
    );
    let ratio_odd = RateEstimate::new(
        inv_sq(eps_at(n_odd)) / n_odd as f64,
        ratio_rate_target(params),
        n_odd,
    );
    let probability = RateEstimate::new(
        inv_sq(pure_marginal_deviation(params.q, eps_at(n_even))) / n_even as f64,
        probability_rate_target(params),
        n_even,
    );
    Ok(PowerLawReport {
        ratio_even,
        ratio_odd,
        probability,
    })
}

/// Subcritical exponential-rate estimates.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentialRateReport {
    /// Primary estimator: the log-slope of the marginal deviation across the
    /// even-index subsequence, `(ln|dev_{n2}| - ln|dev_{n1}|)/(n2 - n1)` with
    /// `n1 = n2/2`. Differencing cancels the n-independent prefactor that a
    /// single-point estimator carries as an O(1/n) bias.
    pub slope: RateEstimate,
    /// Diagnostic single-point estimator `(1/n) ln|dev_n|`; biased by
    /// `ln(C)/n` but monotonically converging.
    pub direct: RateEstimate,
}

/// Estimates the exponential decay rate of the marginal deviation in the
/// subcritical phase, against `ln(A/B)`. Uses the even-index subsequence so
/// the alternation of the iterate's sign never enters. Rejects parameters
/// that are not strictly subcritical.
pub fn exponential_rate(params: &ModelParams, n: usize) -> Result<ExponentialRateReport> {
    params.require_subcritical()?;
    if n < 8 {
        return Err(Error::InvalidParameter {
            field: "n",
            value: n as f64,
            constraint: "rate estimation needs n >= 8 (recommended n >= 50)",
        });
    }
    let devs = pure_deviation_sequence(params, n);
    let n2 = n - n % 2;
    let n1 = {
        let half = n2 / 2;
        half - half % 2
    };
    let dev = |k: usize| pure_marginal_deviation(params.q, devs[k - 1].eps).abs();
    let (d1, d2) = (dev(n1), dev(n2));
    if d1 == 0.0 || d2 == 0.0 {
        return Err(Error::Underflow {
            n: if d1 == 0.0 { n1 } else { n2 },
        });
    }
    let target = exponential_rate_target(params);
    let slope = RateEstimate::new((d2.ln() - d1.ln()) / (n2 - n1) as f64, target, n2);
    let direct = RateEstimate::new(d2.ln() / n2 as f64, target, n2);
    Ok(ExponentialRateReport { slope, direct })
}

/// Telescoping increments `eps_{2k+2}^{-2} - eps_{2k}^{-2}` for
/// `k = 1, 2, ...` while `2k+2 <= n`. At criticality their Cesaro mean
/// converges to `(d^2-1)/(3d^2)`, twice the per-index constant.
pub fn telescoping_series(params: &ModelParams, n: usize) -> Result<Vec<f64>> {
    params.require_critical()?;
    let devs = pure_deviation_sequence(params, n);
    let eps_at = |k: usize| devs[k - 1].eps;
    let mut out = Vec::new();
    let mut k = 1usize;
    while 2 * k + 2 <= n {
        let a = eps_at(2 * k);
        let b = eps_at(2 * k + 2);
        out.push(1.0 / (b * b) - 1.0 / (a * a));
        k += 1;
    }
    Ok(out)
}

pub fn cesaro_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Secondary diagnostic for the critical decay: least-squares slope of
/// `ln|eps_n|` against `ln n` over even indices in `[n/2, n]`, against the
/// target exponent `-1/2`. The asserted pipeline uses the direct estimators;
/// this fit is reported only.
pub fn power_law_regression(params: &ModelParams, n: usize) -> Result<RateEstimate> {
    params.require_critical()?;
    if n < 16 {
        return Err(Error::InvalidParameter {
            field: "n",
            value: n as f64,
            constraint: "regression diagnostic needs n >= 16",
        });
    }
    let devs = pure_deviation_sequence(params, n);
    let lo = {
        let h = n / 2;
        (h - h % 2).max(2)
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut k = lo;
    while k <= n {
        xs.push((k as f64).ln());
        ys.push(devs[k - 1].eps.abs().ln());
        k += 2;
    }
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    Ok(RateEstimate::new(num / den, -0.5, n))
}

/// A named estimate inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct NamedEstimate {
    pub name: String,
    pub estimate: RateEstimate,
}

/// Machine-readable analysis report.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    pub d: usize,
    pub q: usize,
    pub p: f64,
    pub regime: Regime,
    /// How the iteration is anchored: the height-1 pure-boundary ratio.
    pub seed_convention: String,
    pub estimates: Vec<NamedEstimate>,
}

impl AnalysisReport {
    pub fn new(params: &ModelParams) -> Self {
        AnalysisReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            d: params.d,
            q: params.q,
            p: params.p,
            regime: params.regime(),
            seed_convention: "ratio sequence starts at height 1 with r_1 = p^d".to_string(),
            estimates: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, estimate: RateEstimate) {
        self.estimates.push(NamedEstimate {
            name: name.to_string(),
            estimate,
        });
    }
}

/// Serializes the report as pretty JSON to `path`.
pub fn emit_report(report: &AnalysisReport, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    let body = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Malformed(format!("report serialization failed: {e}")))?;
    writeln!(file, "{body}").map_err(io_err)
}

/// One row of the iterate dump: index, deviation, and the boundary-color
/// marginal deviation from 1/q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequenceRow {
    pub n: usize,
    pub eps: f64,
    pub marginal_dev: f64,
}

/// The full iterate table for `n` steps.
pub fn sequence_rows(params: &ModelParams, n: usize) -> Vec<SequenceRow> {
    pure_deviation_sequence(params, n)
        .iter()
        .enumerate()
        .map(|(i, Deviation { eps })| SequenceRow {
            n: i + 1,
            eps: *eps,
            marginal_dev: pure_marginal_deviation(params.q, *eps),
        })
        .collect()
}

/// Writes rows as CSV with 17 significant digits, enough for bit-exact
/// re-parsing of every double.
pub fn write_sequence_csv<W: IoWrite>(mut out: W, rows: &[SequenceRow]) -> std::io::Result<()> {
    writeln!(out, "n,eps,marginal_dev")?;
    for row in rows {
        writeln!(out, "{},{:.16e},{:.16e}", row.n, row.eps, row.marginal_dev)?;
    }
    Ok(())
}

pub fn write_sequence_csv_file(path: &Path, rows: &[SequenceRow]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_sequence_csv(std::io::BufWriter::new(file), rows).map_err(io_err)
}

pub fn read_sequence_csv(path: &Path) -> Result<Vec<SequenceRow>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = BufReader::new(file).lines();
    match reader.next() {
        Some(Ok(header)) if header.trim() == "n,eps,marginal_dev" => {}
        other => return Err(Error::Malformed(format!("bad csv header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in reader.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse_err = || Error::Malformed(format!("csv line {}: {line:?}", lineno + 2));
        let n = parts
            .next()
            .ok_or_else(parse_err)?
            .trim()
            .parse()
            .map_err(|_| parse_err())?;
        let eps = parts
            .next()
            .ok_or_else(parse_err)?
            .trim()
            .parse()
            .map_err(|_| parse_err())?;
        let marginal_dev = parts
            .next()
            .ok_or_else(parse_err)?
            .trim()
            .parse()
            .map_err(|_| parse_err())?;
        rows.push(SequenceRow {
            n,
            eps,
            marginal_dev,
        });
    }
    Ok(rows)
}
