//! Closed forms for the ratio iteration maps, their compositions and
//! derivatives, the auxiliary functions controlling the two-step contraction,
//! and grid audits of the contraction bounds.
//!
//! The one-step map of multiplicity `m` is
//!
//! ```text
//! f_m(x) = ((B + (m-1+p)(x-1)) / (B + m(x-1)))^d,      B = p + q - 1,
//! ```
//!
//! with `f = f_1` driving the pure-boundary ratio iteration. Every map has a
//! direct form (used away from the fixed point) and a deviation form in
//! `eps = x - 1` (used near it): subtracting 1 from the direct form near the
//! fixed point cancels catastrophically, while the factored difference
//!
//! ```text
//! f_m(1+eps) - 1 = (p-1) * eps * sum_{i<d} (a/b)^i / b,
//!     a = B + (m-1+p) eps,   b = B + m eps,
//! ```
//!
//! keeps full relative precision. The dispatch threshold between the two
//! forms is [`DEVIATION_BAND`]; both forms agree to 1e-10 across the band.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// `|x - 1|` below which map evaluations route through the deviation form.
pub const DEVIATION_BAND: f64 = 1e-2;

/// A one-step map of multiplicity `m` together with its model parameters.
///
/// `m` counts how many of the `q-1` non-reference colors sit at the ratio
/// value; `m = 1` is the pure-boundary map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapParams {
    pub base: ModelParams,
    /// Multiplicity, `1 <= m <= q-1`.
    pub m: usize,
    /// `C_m = 2m - 1 + p`.
    pub c_m: f64,
}

/// Derivatives of the two-step composition at the fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorCoeffs {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// The four constants in the closed-form second derivatives of the auxiliary
/// functions: `H'' = m g^{d-2} (B+m(x-1))^{-4} (gamma_h + beta_h (x-1))` and
/// `K'' = (1-p) g^{d-2} (B+m(x-1))^{-4} (gamma_k + beta_k (x-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondDerivCoeffs {
    pub beta_h: f64,
    pub gamma_h: f64,
    pub beta_k: f64,
    pub gamma_k: f64,
}

impl MapParams {
    pub fn new(base: ModelParams, m: usize) -> Result<Self> {
        if m < 1 || m > base.q - 1 {
            return Err(Error::InvalidParameter {
                field: "m",
                value: m as f64,
                constraint: "multiplicity must lie in 1..=q-1",
            });
        }
        Ok(MapParams {
            base,
            m,
            c_m: 2.0 * m as f64 - 1.0 + base.p,
        })
    }

    /// The pure-boundary map `f = f_1`.
    pub fn one_step(base: ModelParams) -> Self {
        Self::new(base, 1).expect("q >= 2 admits m = 1")
    }

    /// `x` below which the Moebius denominator `B + m(x-1)` is nonpositive.
    fn domain_threshold(&self) -> f64 {
        1.0 - self.base.b / self.m as f64
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let threshold = self.domain_threshold();
        if x <= threshold {
            Err(Error::OutsideDomain { x, threshold })
        } else {
            Ok(())
        }
    }

    /// `f_m(x)`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        let t = x - 1.0;
        if t.abs() < DEVIATION_BAND {
            Ok(1.0 + self.deviation_unchecked(t))
        } else {
            Ok(self.eval_direct(x))
        }
    }

    fn eval_direct(&self, x: f64) -> f64 {
        let b = self.base.b;
        let (m, p, d) = (self.m as f64, self.base.p, self.base.d as i32);
        let t = x - 1.0;
        ((b + (m - 1.0 + p) * t) / (b + m * t)).powi(d)
    }

    /// `f_m(1 + eps) - 1`, cancellation-free.
    pub fn deviation(&self, eps: f64) -> Result<f64> {
        self.check_domain(1.0 + eps)?;
        Ok(self.deviation_unchecked(eps))
    }

    fn deviation_unchecked(&self, eps: f64) -> f64 {
        let b0 = self.base.b;
        let (m, p) = (self.m as f64, self.base.p);
        let a = b0 + (m - 1.0 + p) * eps;
        let b = b0 + m * eps;
        // (a/b)^d - 1 = (a - b) * sum_{i<d} (a/b)^i / b, with a - b = (p-1) eps.
        let rho = a / b;
        let mut sum = 0.0;
        let mut pow = 1.0;
        for _ in 0..self.base.d {
            sum += pow;
            pow *= rho;
        }
        (p - 1.0) * eps * sum / b
    }

    /// Analytic `f_m'(x) = d g^{d-1} g'` with `g' = B(p-1)/(B + m(x-1))^2`.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        let b0 = self.base.b;
        let (m, p) = (self.m as f64, self.base.p);
        let t = x - 1.0;
        let den = b0 + m * t;
        let g = (b0 + (m - 1.0 + p) * t) / den;
        let gp = b0 * (p - 1.0) / (den * den);
        Ok(self.base.d as f64 * g.powi(self.base.d as i32 - 1) * gp)
    }

    /// `(f_m . f_m)(x)`.
    pub fn two_step(&self, x: f64) -> Result<f64> {
        self.eval(self.eval(x)?)
    }

    /// `(f_m . f_m)(1 + eps) - 1`, cancellation-free.
    pub fn two_step_deviation(&self, eps: f64) -> Result<f64> {
        self.deviation(self.deviation(eps)?)
    }

    /// Analytic `(f_m . f_m)'(x)` via the chain rule.
    pub fn two_step_derivative(&self, x: f64) -> Result<f64> {
        let fx = self.eval(x)?;
        Ok(self.derivative(fx)? * self.derivative(x)?)
    }

    /// `f_m(x) - 1` routed through whichever form is stable at `x`.
    fn image_deviation(&self, x: f64) -> Result<f64> {
        let t = x - 1.0;
        if t.abs() < DEVIATION_BAND {
            self.deviation(t)
        } else {
            Ok(self.eval_direct(x) - 1.0)
        }
    }

    /// Auxiliary `H_m(x) = (B + m(x-1))(B + m(f_m(x)-1)) - B^2`.
    ///
    /// Expanded as `mB(t + e) + m^2 t e` with `t = x-1`, `e = f_m(x)-1`, so
    /// that `H_m(1) = 0` holds exactly.
    pub fn h_m(&self, x: f64) -> Result<f64> {
        let t = x - 1.0;
        let e = self.image_deviation(x)?;
        let m = self.m as f64;
        Ok(m * self.base.b * (t + e) + m * m * t * e)
    }

    /// Auxiliary `K_m(x)`, the excess of the `m`-product over the
    /// `(m-1+p)`-product; expands to `(1-p)(B(t+e) + C_m t e)`.
    pub fn k_m(&self, x: f64) -> Result<f64> {
        let t = x - 1.0;
        let e = self.image_deviation(x)?;
        Ok((1.0 - self.base.p) * (self.base.b * (t + e) + self.c_m * t * e))
    }

    /// Analytic `H_m'(x) = m[(B + m(f_m(x)-1)) + f_m'(x)(B + m(x-1))]`.
    pub fn h_m_prime(&self, x: f64) -> Result<f64> {
        let t = x - 1.0;
        let e = self.image_deviation(x)?;
        let fp = self.derivative(x)?;
        let m = self.m as f64;
        let b = self.base.b;
        Ok(m * ((b + m * e) + fp * (b + m * t)))
    }

    /// Analytic `K_m'(x) = (1-p)[f_m'(x)(B + C_m(x-1)) + (B + C_m(f_m(x)-1))]`.
    pub fn k_m_prime(&self, x: f64) -> Result<f64> {
        let t = x - 1.0;
        let e = self.image_deviation(x)?;
        let fp = self.derivative(x)?;
        let b = self.base.b;
        Ok((1.0 - self.base.p) * (fp * (b + self.c_m * t) + (b + self.c_m * e)))
    }

    /// The closed-form constants of the second derivatives.
    pub fn second_derivative_coeffs(&self) -> SecondDerivCoeffs {
        let (a, b) = (self.base.a, self.base.b);
        let m = self.m as f64;
        let dm1 = 1.0 - 1.0 / self.base.d as f64;
        let cm = self.c_m;
        SecondDerivCoeffs {
            beta_h: dm1 * m * a * a * b * b,
            gamma_h: dm1 * a * a * b * b * b,
            beta_k: a * b * b * (-2.0 * (cm - m) * (cm - m) + dm1 * a * cm),
            gamma_k: a * b * b * b * (a - cm),
        }
    }

    /// Closed-form `H_m''(x) = m g^{d-2} (B+m(x-1))^{-4} (gamma_h + beta_h (x-1))`.
    pub fn h_m_second(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        let c = self.second_derivative_coeffs();
        let t = x - 1.0;
        Ok(self.m as f64 * self.second_common(x) * (c.gamma_h + c.beta_h * t))
    }

    /// Closed-form `K_m''(x) = (1-p) g^{d-2} (B+m(x-1))^{-4} (gamma_k + beta_k (x-1))`.
    pub fn k_m_second(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        let c = self.second_derivative_coeffs();
        let t = x - 1.0;
        Ok((1.0 - self.base.p) * self.second_common(x) * (c.gamma_k + c.beta_k * t))
    }

    fn second_common(&self, x: f64) -> f64 {
        let b0 = self.base.b;
        let (m, p) = (self.m as f64, self.base.p);
        let t = x - 1.0;
        let den = b0 + m * t;
        let g = (b0 + (m - 1.0 + p) * t) / den;
        g.powi(self.base.d as i32 - 2) / (den * den * den * den)
    }

    /// The normalized two-step slope
    /// `G_m(x) = (1 - H/(B^2+H))^2 (1 - K/(B^2+H))^{d-1}`,
    /// equal to `(f_m . f_m)'(x) (B/A)^2`; bounded by 1 on `[1, inf)` with
    /// equality only at `x = 1`.
    pub fn g_m(&self, x: f64) -> Result<f64> {
        let h = self.h_m(x)?;
        let k = self.k_m(x)?;
        let pden = self.base.b * self.base.b + h;
        let sq = 1.0 - h / pden;
        Ok(sq * sq * (1.0 - k / pden).powi(self.base.d as i32 - 1))
    }
}

/// Logarithmic audit grid on `[1, x_max]`; the first point is exactly 1.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub x_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_max: 1e4,
            points: 10_000,
        }
    }
}

impl GridSpec {
    pub fn log_grid(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let l = self.x_max.log10();
        (0..n)
            .map(|k| 10f64.powf(k as f64 * l / (n - 1) as f64))
            .collect()
    }
}

/// One failed check at one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub x: f64,
    pub kind: &'static str,
    pub value: f64,
    pub bound: f64,
}

/// Per-multiplicity audit summary.
#[derive(Debug, Clone, Serialize)]
pub struct MapAudit {
    pub m: usize,
    pub sup_derivative: f64,
    pub argsup: f64,
    pub violations: Vec<Violation>,
}

/// Grid audit of the two-step contraction bounds for every multiplicity.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub d: usize,
    pub q: usize,
    pub p: f64,
    /// `(A/B)^2`, the supremum the two-step slope may attain.
    pub bound: f64,
    pub x_max: f64,
    pub points: usize,
    pub per_m: Vec<MapAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.per_m.iter().all(|a| a.violations.is_empty())
    }
}

/// Abscissas at which the closed-form second derivatives are cross-checked
/// against finite differences.
pub const FD_CHECK_XS: [f64; 5] = [1.25, 1.75, 2.5, 4.0, 8.0];

/// Verifies, for every `m` in `1..=q-1` on a log grid over `[1, x_max]`:
/// `0 < (f_m . f_m)'(x) <= (A/B)^2 + 1e-12`, `G_m(x) <= 1 + 1e-12`, and
/// `(d-1) K_m'(x) + 2 H_m'(x) > 0` for `x > 1`; additionally cross-checks the
/// closed-form second derivatives against Richardson-extrapolated central
/// differences at [`FD_CHECK_XS`]. Violations are recorded, not thrown.
pub fn audit_two_step(params: &ModelParams, grid: &GridSpec) -> AuditReport {
    let xs = grid.log_grid();
    let rate = params.rate();
    let bound = rate * rate;
    let per_m = (1..params.q)
        .map(|m| {
            let mp = MapParams::new(*params, m).expect("m in 1..=q-1");
            audit_one_m(&mp, &xs, bound)
        })
        .collect();
    AuditReport {
        d: params.d,
        q: params.q,
        p: params.p,
        bound,
        x_max: grid.x_max,
        points: grid.points,
        per_m,
    }
}

fn audit_one_m(mp: &MapParams, xs: &[f64], bound: f64) -> MapAudit {
    const CHUNK: usize = 1024;
    let d = mp.base.d as f64;

    let chunks: Vec<(f64, f64, Vec<Violation>)> = xs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sup = f64::NEG_INFINITY;
            let mut argsup = f64::NAN;
            let mut violations = Vec::new();
            for &x in chunk {
                let ts = mp.two_step_derivative(x).expect("grid inside domain");
                if ts > sup {
                    sup = ts;
                    argsup = x;
                }
                if ts <= 0.0 || ts.is_nan() {
                    violations.push(Violation {
                        x,
                        kind: "two_step_derivative_positive",
                        value: ts,
                        bound: 0.0,
                    });
                }
                if ts > bound + 1e-12 {
                    violations.push(Violation {
                        x,
                        kind: "two_step_derivative_bound",
                        value: ts,
                        bound,
                    });
                }
                let g = mp.g_m(x).expect("grid inside domain");
                if g > 1.0 + 1e-12 {
                    violations.push(Violation {
                        x,
                        kind: "g_m_bound",
                        value: g,
                        bound: 1.0,
                    });
                }
                if x > 1.0 {
                    let obs = (d - 1.0) * mp.k_m_prime(x).unwrap() + 2.0 * mp.h_m_prime(x).unwrap();
                    if obs <= 0.0 || obs.is_nan() {
                        violations.push(Violation {
                            x,
                            kind: "hk_observation_positive",
                            value: obs,
                            bound: 0.0,
                        });
                    }
                }
            }
            (sup, argsup, violations)
        })
        .collect();

    let mut sup = f64::NEG_INFINITY;
    let mut argsup = f64::NAN;
    let mut violations = Vec::new();
    for (s, a, v) in chunks {
        if s > sup {
            sup = s;
            argsup = a;
        }
        violations.extend(v);
    }

    // Closed-form second derivatives vs finite differences. The comparison is
    // relative, with an absolute floor tied to the overall scale so that a
    // sign change of K'' at a check point cannot blow up the quotient.
    let h_closed: Vec<f64> = FD_CHECK_XS
        .iter()
        .map(|&x| mp.h_m_second(x).unwrap())
        .collect();
    let k_closed: Vec<f64> = FD_CHECK_XS
        .iter()
        .map(|&x| mp.k_m_second(x).unwrap())
        .collect();
    let h_scale = h_closed.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let k_scale = k_closed.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    // 1e-3 * scale rather than the generic 1e-4: H and K grow linearly in x
    // while their curvature decays, so at the right end of the check range
    // the second difference cancels ~10 digits and needs the larger step to
    // keep roundoff below the 1e-5 comparison tolerance.
    for (i, &x) in FD_CHECK_XS.iter().enumerate() {
        let h_fd = fd::richardson_second(|y| mp.h_m(y).unwrap(), x, 1e-3 * x.max(1.0));
        let k_fd = fd::richardson_second(|y| mp.k_m(y).unwrap(), x, 1e-3 * x.max(1.0));
        if !close_rel_floor(h_closed[i], h_fd, 1e-5, 1e-8 * h_scale) {
            violations.push(Violation {
                x,
                kind: "h_second_fd_mismatch",
                value: h_fd,
                bound: h_closed[i],
            });
        }
        if !close_rel_floor(k_closed[i], k_fd, 1e-5, 1e-8 * k_scale) {
            violations.push(Violation {
                x,
                kind: "k_second_fd_mismatch",
                value: k_fd,
                bound: k_closed[i],
            });
        }
    }

    MapAudit {
        m: mp.m,
        sup_derivative: sup,
        argsup,
        violations,
    }
}

fn close_rel_floor(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= rel * a.abs().max(b.abs()) || diff <= floor
}

/// Derivatives of the two-step composition at the fixed point, by hand-coded
/// chain rule on the exact derivatives of `f` at 1. Requires critical
/// parameters: away from criticality the coefficients are not the ones that
/// control the power law, and the composition's second derivative no longer
/// vanishes.
///
/// At criticality: `c1 = 1`, `c2 = 0`, `c3 = -(d^2-1)/d^2`.
pub fn taylor_c123(params: &ModelParams) -> Result<TaylorCoeffs> {
    params.require_critical()?;
    let d = params.d as f64;
    let (p, b) = (params.p, params.b);
    // Moebius block g = (B + p(x-1))/(B + (x-1)) at x = 1:
    let gp = (p - 1.0) / b;
    let gpp = 2.0 * (1.0 - p) / (b * b);
    let gppp = -6.0 * (1.0 - p) / (b * b * b);
    // f = g^d at x = 1 (g(1) = 1):
    let fp = d * gp;
    let fpp = d * (d - 1.0) * gp * gp + d * gpp;
    let fppp = d * (d - 1.0) * (d - 2.0) * gp.powi(3) + 3.0 * d * (d - 1.0) * gp * gpp + d * gppp;
    // Composition (f . f) at the fixed point f(1) = 1:
    let c1 = fp * fp;
    let c2 = fpp * fp * fp + fp * fpp;
    let c3 = fppp * fp.powi(3) + 3.0 * fpp * fpp * fp + fp * fppp;
    Ok(TaylorCoeffs { c1, c2, c3 })
}

/// Finite-difference value of `(f . f)'(1)`, the independent cross-check for
/// `c1`. Computed on deviations so the quotient keeps full precision.
pub fn two_step_c1_fd(params: &ModelParams) -> f64 {
    let mp = MapParams::one_step(*params);
    let dev = |e: f64| mp.two_step_deviation(e).expect("inside domain");
    let h = 1e-6;
    let d1 = (dev(h) - dev(-h)) / (2.0 * h);
    let d2 = (dev(h / 2.0) - dev(-h / 2.0)) / h;
    (4.0 * d2 - d1) / 3.0
}

/// The telescoping increment `((f.f)(x) - 1)^{-2} - (x - 1)^{-2}` at critical
/// parameters, evaluated in deviation coordinates. As `x` decreases to 1 it
/// converges to `-c3/3 = (d^2-1)/(3d^2)`.
pub fn telescoping_increment(params: &ModelParams, x: f64) -> Result<f64> {
    params.require_critical()?;
    if x <= 1.0 || x.is_nan() {
        return Err(Error::InvalidParameter {
            field: "x",
            value: x,
            constraint: "telescoping increment requires x > 1",
        });
    }
    let mp = MapParams::one_step(*params);
    let e0 = x - 1.0;
    let e2 = mp.two_step_deviation(e0)?;
    Ok((e0 - e2) * (e0 + e2) / (e0 * e0 * e2 * e2))
}

/// Central finite differences with one Richardson extrapolation level.
pub mod fd {
    /// `(f(x+h) - f(x-h)) / 2h`.
    pub fn central_first(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// Richardson-extrapolated first derivative: `(4 D(h/2) - D(h)) / 3`.
    pub fn richardson_first(f: impl Fn(f64) -> f64 + Copy, x: f64, h: f64) -> f64 {
        let d1 = central_first(f, x, h);
        let d2 = central_first(f, x, h / 2.0);
        (4.0 * d2 - d1) / 3.0
    }

    /// `(f(x+h) - 2 f(x) + f(x-h)) / h^2`.
    pub fn central_second(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
    }

    /// Richardson-extrapolated second derivative.
    pub fn richardson_second(f: impl Fn(f64) -> f64 + Copy, x: f64, h: f64) -> f64 {
        let s1 = central_second(f, x, h);
        let s2 = central_second(f, x, h / 2.0);
        (4.0 * s2 - s1) / 3.0
    }
}
