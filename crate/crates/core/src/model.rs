//! Model parameters, derived constants, and regime classification.
//!
//! The model lives on the d-ary tree of height n: every non-leaf vertex has
//! `d` children, spins take values in `1..=q`, and each monochromatic edge
//! contributes a factor `p` to the configuration weight, `0 < p < 1`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on `p - p_c` below which parameters count as critical.
pub const CRITICAL_TOL: f64 = 1e-12;

/// The parameter triple `(d, q, p)` with the derived constants
/// `A = d(1-p)` and `B = p + q - 1`.
///
/// `A/B` is the linearized contraction rate of the ratio iteration at its
/// fixed point; `A <= B` exactly when `p >= 1 - q/(d+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    /// Branching factor (children per internal vertex), >= 1.
    pub d: usize,
    /// Number of colors, >= 2.
    pub q: usize,
    /// Monochromatic edge weight, in (0, 1).
    pub p: f64,
    /// `d * (1 - p)`.
    pub a: f64,
    /// `p + q - 1`.
    pub b: f64,
}

/// Position of `p` relative to the critical weight `p_c = 1 - q/(d+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `p < p_c`: the linearized rate A/B exceeds 1.
    Supercritical,
    /// `|p - p_c| <= CRITICAL_TOL`: A = B up to roundoff.
    Critical,
    /// `p > p_c`: strict contraction, A/B < 1.
    Subcritical,
}

/// The critical weight `1 - q/(d+1)`.
///
/// May be <= 0 (for `q >= d+1`), in which case every admissible `p` in
/// (0,1) is above critical.
pub fn critical_p(d: usize, q: usize) -> f64 {
    1.0 - q as f64 / (d as f64 + 1.0)
}

impl ModelParams {
    /// Validates `(d, q, p)` and computes the derived constants once, so that
    /// every module works from identical values of A and B.
    pub fn new(d: usize, q: usize, p: f64) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidParameter {
                field: "d",
                value: d as f64,
                constraint: "branching factor must be >= 1",
            });
        }
        if q < 2 {
            return Err(Error::InvalidParameter {
                field: "q",
                value: q as f64,
                constraint: "color count must be >= 2",
            });
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter {
                field: "p",
                value: p,
                constraint: "edge weight must lie in the open interval (0, 1)",
            });
        }
        Ok(ModelParams {
            d,
            q,
            p,
            a: d as f64 * (1.0 - p),
            b: p + q as f64 - 1.0,
        })
    }

    /// Parameters at the critical weight `p_c = 1 - q/(d+1)`.
    ///
    /// Fails when `p_c <= 0`, i.e. `q >= d+1` (the zero-temperature regime,
    /// where no positive critical weight exists).
    pub fn critical(d: usize, q: usize) -> Result<Self> {
        let pc = critical_p(d, q);
        if pc <= 0.0 {
            return Err(Error::InvalidParameter {
                field: "p",
                value: pc,
                constraint: "critical weight 1 - q/(d+1) is nonpositive for q >= d+1",
            });
        }
        Self::new(d, q, pc)
    }

    /// The critical weight for this `(d, q)`.
    pub fn critical_p(&self) -> f64 {
        critical_p(self.d, self.q)
    }

    /// Classifies `p` against `p_c` with absolute tolerance [`CRITICAL_TOL`].
    pub fn regime(&self) -> Regime {
        let pc = self.critical_p();
        if (self.p - pc).abs() <= CRITICAL_TOL {
            Regime::Critical
        } else if self.p > pc {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        }
    }

    /// The linearized contraction rate `A/B` at the fixed point.
    pub fn rate(&self) -> f64 {
        self.a / self.b
    }

    pub fn is_critical(&self) -> bool {
        self.regime() == Regime::Critical
    }

    /// Errors unless the regime is critical.
    pub fn require_critical(&self) -> Result<()> {
        if self.is_critical() {
            Ok(())
        } else {
            Err(Error::NotCritical {
                p: self.p,
                p_c: self.critical_p(),
            })
        }
    }

    /// Errors unless `p` lies strictly above the critical weight.
    pub fn require_subcritical(&self) -> Result<()> {
        if self.regime() == Regime::Subcritical {
            Ok(())
        } else {
            Err(Error::NotSubcritical {
                p: self.p,
                p_c: self.critical_p(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_constants() {
        let mp = ModelParams::new(3, 3, 0.25).unwrap();
        assert_eq!(mp.a, 2.25);
        assert_eq!(mp.b, 2.25);

        let mp = ModelParams::new(1, 2, 0.5).unwrap();
        assert_eq!(mp.a, 0.5);
        assert_eq!(mp.b, 1.5);
    }

    #[test]
    fn rejects_out_of_range() {
        for (d, q, p, field) in [
            (3, 3, 1.0, "p"),
            (3, 3, 0.0, "p"),
            (3, 3, -0.1, "p"),
            (3, 1, 0.5, "q"),
            (0, 3, 0.5, "d"),
        ] {
            match ModelParams::new(d, q, p) {
                Err(Error::InvalidParameter { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected InvalidParameter for ({d},{q},{p}), got {other:?}"),
            }
        }
    }

    #[test]
    fn critical_weight_values() {
        assert_eq!(critical_p(3, 3), 0.25);
        assert_eq!(critical_p(2, 3), 0.0);
        assert!((critical_p(5, 4) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regime_classification() {
        assert_eq!(
            ModelParams::new(3, 3, 0.25).unwrap().regime(),
            Regime::Critical
        );
        assert_eq!(
            ModelParams::new(3, 3, 0.5).unwrap().regime(),
            Regime::Subcritical
        );
        assert_eq!(
            ModelParams::new(3, 3, 0.1).unwrap().regime(),
            Regime::Supercritical
        );
    }

    #[test]
    fn critical_identity_a_equals_b() {
        // d(1 - p_c) = p_c + q - 1 whenever p_c > 0.
        for (d, q) in [(3, 3), (4, 3), (5, 4), (6, 4), (9, 5), (7, 2)] {
            let mp = ModelParams::critical(d, q).unwrap();
            assert!(
                (mp.a - mp.b).abs() <= 1e-12 * mp.b,
                "A != B at critical ({d},{q}): {} vs {}",
                mp.a,
                mp.b
            );
            assert_eq!(mp.regime(), Regime::Critical);
        }
    }

    #[test]
    fn critical_rejects_zero_temperature() {
        assert!(ModelParams::critical(2, 3).is_err());
        assert!(ModelParams::critical(3, 4).is_err());
    }

    #[test]
    fn regime_monotone_in_p() {
        let rank = |r: Regime| match r {
            Regime::Supercritical => 0,
            Regime::Critical => 1,
            Regime::Subcritical => 2,
        };
        let mut prev = 0;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let r = rank(ModelParams::new(3, 3, p).unwrap().regime());
            assert!(r >= prev, "regime regressed at p={p}");
            prev = r;
        }
    }
}
