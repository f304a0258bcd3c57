//! Separable sparsity penalties (MCP, SCAD, L1) and their scalar proximal maps.
//!
//! All penalties act on a single coefficient; the vector penalty is the sum over
//! the regression coefficients (the intercept is never penalized). MCP and SCAD
//! are weakly convex: `g(w) + rho/2 * w^2` is convex for the `rho` returned by
//! [`PenaltyConfig::rho`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyKind {
    #[serde(rename = "MCP")]
    Mcp,
    #[serde(rename = "SCAD")]
    Scad,
    L1,
    None,
}

/// Penalty kind plus its level `lambda` and concavity `gamma`.
///
/// Construct through [`PenaltyConfig::new`] (or deserialize), both of which
/// reject `gamma < 1` for MCP, `gamma < 2` for SCAD and negative `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPenalty", into = "RawPenalty")]
pub struct PenaltyConfig {
    kind: PenaltyKind,
    lambda: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPenalty {
    kind: PenaltyKind,
    #[serde(default)]
    lambda: f64,
    #[serde(default)]
    gamma: f64,
}

impl TryFrom<RawPenalty> for PenaltyConfig {
    type Error = Error;

    fn try_from(raw: RawPenalty) -> Result<Self> {
        PenaltyConfig::new(raw.kind, raw.lambda, raw.gamma)
    }
}

impl From<PenaltyConfig> for RawPenalty {
    fn from(cfg: PenaltyConfig) -> Self {
        RawPenalty {
            kind: cfg.kind,
            lambda: cfg.lambda,
            gamma: cfg.gamma,
        }
    }
}

/// Weak-convexity modulus of a penalty.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WeakConvexityRho(f64);

impl WeakConvexityRho {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn soft_threshold(a: f64, thresh: f64) -> f64 {
    sign(a) * (a.abs() - thresh).max(0.0)
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind, lambda: f64, gamma: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::config(format!(
                "penalty lambda must be finite and >= 0, got {lambda}"
            )));
        }
        match kind {
            PenaltyKind::Mcp if !(gamma >= 1.0 && gamma.is_finite()) => Err(Error::config(
                format!("MCP requires gamma >= 1, got {gamma}"),
            )),
            PenaltyKind::Scad if !(gamma >= 2.0 && gamma.is_finite()) => Err(Error::config(
                format!("SCAD requires gamma >= 2, got {gamma}"),
            )),
            _ => Ok(PenaltyConfig {
                kind,
                lambda,
                gamma,
            }),
        }
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyKind::Mcp, lambda, gamma)
    }

    pub fn scad(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad, lambda, gamma)
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::L1, lambda, 0.0)
    }

    pub fn none() -> Self {
        PenaltyConfig {
            kind: PenaltyKind::None,
            lambda: 0.0,
            gamma: 0.0,
        }
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Penalty of a single coefficient.
    pub fn value(&self, w: f64) -> f64 {
        let (lam, gam) = (self.lambda, self.gamma);
        let x = w.abs();
        match self.kind {
            PenaltyKind::Mcp => {
                if x <= gam * lam {
                    lam * x - x * x / (2.0 * gam)
                } else {
                    gam * lam * lam / 2.0
                }
            }
            PenaltyKind::Scad => {
                if x <= lam {
                    lam * x
                } else if x <= gam * lam {
                    -(x * x - 2.0 * gam * lam * x + lam * lam) / (2.0 * (gam - 1.0))
                } else {
                    (gam + 1.0) * lam * lam / 2.0
                }
            }
            PenaltyKind::L1 => lam * x,
            PenaltyKind::None => 0.0,
        }
    }

    /// Sum of the penalty over a coefficient slice.
    pub fn total(&self, coeffs: &[f64]) -> f64 {
        coeffs.iter().map(|&w| self.value(w)).sum()
    }

    pub fn rho(&self) -> WeakConvexityRho {
        WeakConvexityRho(match self.kind {
            PenaltyKind::Mcp => 1.0 / self.gamma,
            PenaltyKind::Scad => 1.0 / (self.gamma - 1.0),
            PenaltyKind::L1 | PenaltyKind::None => 0.0,
        })
    }

    /// Largest admissible prox step (exclusive); `None` when every step is fine.
    pub fn prox_step_limit(&self) -> Option<f64> {
        match self.kind {
            PenaltyKind::Mcp => Some(self.gamma),
            PenaltyKind::Scad => Some(self.gamma - 1.0),
            PenaltyKind::L1 | PenaltyKind::None => None,
        }
    }

    /// `argmin_w t*g(w) + (w - a)^2 / 2`.
    ///
    /// Fails with [`Error::Convexity`] when `t` is at or past the step limit, where
    /// the subproblem stops being strongly convex.
    pub fn prox(&self, a: f64, t: f64) -> Result<f64> {
        if let Some(limit) = self.prox_step_limit() {
            if !(t < limit) {
                return Err(Error::Convexity { t, limit });
            }
        }
        let (lam, gam) = (self.lambda, self.gamma);
        let x = a.abs();
        Ok(match self.kind {
            PenaltyKind::Mcp => {
                if x <= t * lam {
                    0.0
                } else if x <= gam * lam {
                    sign(a) * (x - t * lam) / (1.0 - t / gam)
                } else {
                    a
                }
            }
            PenaltyKind::Scad => {
                if x <= (1.0 + t) * lam {
                    soft_threshold(a, t * lam)
                } else if x <= gam * lam {
                    ((gam - 1.0) * a - sign(a) * gam * lam * t) / (gam - 1.0 - t)
                } else {
                    a
                }
            }
            PenaltyKind::L1 => soft_threshold(a, t * lam),
            PenaltyKind::None => a,
        })
    }

    /// Derivative away from zero, and the symmetric subgradient choice 0 at zero.
    pub fn subgradient(&self, w: f64) -> f64 {
        let (lo, hi) = self.subdifferential(w);
        if lo == hi {
            lo
        } else {
            0.0
        }
    }

    /// Clarke subdifferential as a closed interval `[lo, hi]`.
    pub fn subdifferential(&self, w: f64) -> (f64, f64) {
        let (lam, gam) = (self.lambda, self.gamma);
        if w == 0.0 {
            return match self.kind {
                PenaltyKind::None => (0.0, 0.0),
                _ => (-lam, lam),
            };
        }
        let x = w.abs();
        let d = match self.kind {
            PenaltyKind::Mcp => {
                if x <= gam * lam {
                    lam - x / gam
                } else {
                    0.0
                }
            }
            PenaltyKind::Scad => {
                if x <= lam {
                    lam
                } else if x <= gam * lam {
                    (gam * lam - x) / (gam - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyKind::L1 => lam,
            PenaltyKind::None => 0.0,
        };
        (sign(w) * d, sign(w) * d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        while hi - lo > tol {
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - inv_phi * (hi - lo);
            d = lo + inv_phi * (hi - lo);
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn rejects_bad_gamma_and_lambda() {
        assert!(PenaltyConfig::mcp(0.1, 0.9).is_err());
        assert!(PenaltyConfig::scad(0.1, 1.5).is_err());
        assert!(PenaltyConfig::l1(-0.1).is_err());
        assert!(PenaltyConfig::mcp(0.1, 1.0).is_ok());
        assert!(PenaltyConfig::scad(0.1, 2.0).is_ok());
    }

    #[test]
    fn deserialize_validates() {
        let bad: std::result::Result<PenaltyConfig, _> =
            serde_json::from_str(r#"{"kind":"SCAD","lambda":0.1,"gamma":1.2}"#);
        assert!(bad.is_err());
        let ok: PenaltyConfig =
            serde_json::from_str(r#"{"kind":"MCP","lambda":0.055,"gamma":2.4}"#).unwrap();
        assert_eq!(ok, PenaltyConfig::mcp(0.055, 2.4).unwrap());
    }

    #[test]
    fn value_examples() {
        let mcp = PenaltyConfig::mcp(0.055, 2.4).unwrap();
        assert_eq!(mcp.value(0.0), 0.0);
        assert!((mcp.value(1.0) - 0.003630).abs() < 1e-12);
        assert_eq!(mcp.value(-1.0), mcp.value(1.0));
        let scad = PenaltyConfig::scad(0.055, 3.1).unwrap();
        assert!((scad.value(0.5) - 4.1 * 0.055 * 0.055 / 2.0).abs() < 1e-15);
        assert!((scad.value(0.5) - 0.00620125).abs() < 1e-12);
    }

    #[test]
    fn continuity_at_branch_points() {
        for &(lam, gam) in &[(0.055, 2.4), (0.3, 1.0), (1.0, 7.5)] {
            let mcp = PenaltyConfig::mcp(lam, gam).unwrap();
            let b = gam * lam;
            assert!((mcp.value(b) - mcp.value(b * (1.0 + 1e-15))).abs() < 1e-12);
        }
        let scad = PenaltyConfig::scad(0.055, 3.1).unwrap();
        for b in [0.055, 3.1 * 0.055] {
            let eps = 1e-14;
            assert!((scad.value(b - eps) - scad.value(b + eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn prox_examples() {
        let mcp = PenaltyConfig::mcp(0.055, 2.4).unwrap();
        assert_eq!(mcp.prox(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(mcp.prox(5.0, 0.5).unwrap(), 5.0);
        let expected = (0.1 - 0.0275) / (1.0 - 0.5 / 2.4);
        let got = mcp.prox(0.1, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-15);
        let oracle = golden_section(|w| 0.5 * mcp.value(w) + 0.5 * (w - 0.1).powi(2), -1.0, 1.0, 1e-10);
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        assert_eq!(PenaltyConfig::scad(0.1, 3.0).unwrap().prox(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(PenaltyConfig::none().prox(-2.5, 100.0).unwrap(), -2.5);
        assert!((PenaltyConfig::l1(0.2).unwrap().prox(-1.0, 2.0).unwrap() + 0.6).abs() < 1e-15);
    }

    #[test]
    fn prox_rejects_large_step() {
        let mcp = PenaltyConfig::mcp(0.055, 2.4).unwrap();
        assert!(matches!(mcp.prox(0.3, 2.4), Err(Error::Convexity { .. })));
        let scad = PenaltyConfig::scad(0.055, 3.1).unwrap();
        assert!(matches!(scad.prox(0.3, 2.1), Err(Error::Convexity { .. })));
        assert!(scad.prox(0.3, 2.09).is_ok());
    }

    #[test]
    fn rho_values() {
        assert!((PenaltyConfig::mcp(0.1, 2.4).unwrap().rho().value() - 1.0 / 2.4).abs() < 1e-15);
        assert!((PenaltyConfig::scad(0.1, 3.1).unwrap().rho().value() - 1.0 / 2.1).abs() < 1e-15);
        assert_eq!(PenaltyConfig::l1(0.1).unwrap().rho().value(), 0.0);
    }

    #[test]
    fn subdifferential_matches_derivative() {
        let scad = PenaltyConfig::scad(0.2, 3.1).unwrap();
        for &w in &[0.05, 0.3, -0.5, 0.9] {
            let h = 1e-6;
            let fd = (scad.value(w + h) - scad.value(w - h)) / (2.0 * h);
            assert!((scad.subgradient(w) - fd).abs() < 1e-6);
        }
        assert_eq!(scad.subdifferential(0.0), (-0.2, 0.2));
        assert_eq!(scad.subgradient(0.0), 0.0);
    }
}
