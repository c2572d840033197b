//! Separable Bregman divergences.
//!
//! Every supported generator is a sum of scalar convex functions, so all
//! quantities (the generator `phi`, its gradient, the gradient inverse, the
//! Legendre dual `psi` and the divergence itself) are evaluated coordinatewise.
//!
//! | token           | domain        | phi(p)                         |
//! |-----------------|---------------|--------------------------------|
//! | `squared`       | R             | p^2                            |
//! | `logistic`      | [0, 1]        | p ln p + (1 - p) ln(1 - p)     |
//! | `bose-einstein` | R+            | p ln p - (1 + p) ln(1 + p)     |
//! | `itakura-saito` | R++           | -ln p                          |
//! | `euclidean`     | R^k           | ‖p‖²                           |
//! | `kl`            | k-simplex     | Σ p log2 p                     |
//! | `gen-i`         | R+^k          | Σ p ln p                       |
//!
//! Scalar rows are extended to `k` coordinates by summation. Inputs to the
//! log-based rows are clamped to `domain_floor` (and to `1 - domain_floor` for
//! `logistic`) so that hard zeros coming out of classifiers stay evaluable.

use std::f64::consts::{LN_2, LOG2_E};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_DOMAIN_FLOOR: f64 = 1e-12;

/// Tolerance on `|Σ p - 1|` for points of the `kl` divergence.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// `(1 + d) ln(1 + d) - d` for `d > -1`.
fn xlogx_excess(d: f64) -> f64 {
    if d.abs() < 1e-4 {
        let d2 = d * d;
        d2 * (0.5 - d / 6.0 + d2 / 12.0 - d * d2 / 20.0)
    } else {
        (1.0 + d) * d.ln_1p() - d
    }
}

/// `d - ln(1 + d)` for `d > -1`.
fn log_excess(d: f64) -> f64 {
    if d.abs() < 1e-4 {
        let d2 = d * d;
        d2 * (0.5 - d / 3.0 + d2 / 4.0 - d * d2 / 5.0)
    } else {
        d - d.ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DivergenceKind {
    SquaredLoss,
    LogisticLoss,
    BoseEinstein,
    ItakuraSaito,
    SquaredEuclidean,
    KLDivergence,
    GeneralizedI,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 7] = [
        DivergenceKind::SquaredLoss,
        DivergenceKind::LogisticLoss,
        DivergenceKind::BoseEinstein,
        DivergenceKind::ItakuraSaito,
        DivergenceKind::SquaredEuclidean,
        DivergenceKind::KLDivergence,
        DivergenceKind::GeneralizedI,
    ];

    /// Command-line token.
    pub fn token(self) -> &'static str {
        match self {
            DivergenceKind::SquaredLoss => "squared",
            DivergenceKind::LogisticLoss => "logistic",
            DivergenceKind::BoseEinstein => "bose-einstein",
            DivergenceKind::ItakuraSaito => "itakura-saito",
            DivergenceKind::SquaredEuclidean => "euclidean",
            DivergenceKind::KLDivergence => "kl",
            DivergenceKind::GeneralizedI => "gen-i",
        }
    }

    /// Points must lie on the probability simplex.
    pub fn is_simplex(self) -> bool {
        self == DivergenceKind::KLDivergence
    }

    /// The domain includes negative values, so L1 normalization is not a
    /// projection onto the domain.
    pub fn is_signed(self) -> bool {
        matches!(
            self,
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean
        )
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .into_iter()
            .find(|kind| kind.token() == s)
            .ok_or_else(|| {
                let tokens: Vec<_> = DivergenceKind::ALL.iter().map(|k| k.token()).collect();
                Error::Argument(format!(
                    "unknown divergence `{s}`, expected one of {}",
                    tokens.join(", ")
                ))
            })
    }
}

/// A member of the divergence family together with its clamping floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    kind: DivergenceKind,
    domain_floor: f64,
}

impl Divergence {
    pub fn new(kind: DivergenceKind) -> Self {
        Divergence {
            kind,
            domain_floor: DEFAULT_DOMAIN_FLOOR,
        }
    }

    pub fn with_floor(kind: DivergenceKind, domain_floor: f64) -> Result<Self> {
        if !(domain_floor > 0.0 && domain_floor < 0.5) {
            return Err(Error::Argument(format!(
                "domain floor must lie in (0, 0.5), got {domain_floor}"
            )));
        }
        Ok(Divergence { kind, domain_floor })
    }

    pub fn kind(&self) -> DivergenceKind {
        self.kind
    }

    pub fn domain_floor(&self) -> f64 {
        self.domain_floor
    }

    /// Clamps one coordinate into the domain, failing if it lies outside by
    /// more than the floor.
    pub fn clamp_coord(&self, index: usize, x: f64) -> Result<f64> {
        let floor = self.domain_floor;
        let outside = || Error::Domain {
            kind: self.kind,
            index,
            value: x,
        };
        if !x.is_finite() {
            return Err(outside());
        }
        match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => Ok(x),
            DivergenceKind::LogisticLoss => {
                if x < -floor || x > 1.0 + floor {
                    Err(outside())
                } else {
                    Ok(x.clamp(floor, 1.0 - floor))
                }
            }
            DivergenceKind::BoseEinstein
            | DivergenceKind::ItakuraSaito
            | DivergenceKind::KLDivergence
            | DivergenceKind::GeneralizedI => {
                if x < -floor {
                    Err(outside())
                } else {
                    Ok(x.max(floor))
                }
            }
        }
    }

    fn check_simplex(&self, p: &[f64]) -> Result<()> {
        if self.kind.is_simplex() {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::OffSimplex {
                    kind: self.kind,
                    sum,
                });
            }
        }
        Ok(())
    }

    /// Clamped copy of `p`; checks the simplex constraint for `kl`.
    pub fn clamp(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_simplex(p)?;
        p.iter()
            .enumerate()
            .map(|(i, &x)| self.clamp_coord(i, x))
            .collect()
    }

    /// Clamps `p` in place without the simplex check.
    pub fn clamp_in_place(&self, p: &mut [f64]) -> Result<()> {
        for (i, x) in p.iter_mut().enumerate() {
            *x = self.clamp_coord(i, *x)?;
        }
        Ok(())
    }

    pub fn phi(&self, p: &[f64]) -> Result<f64> {
        self.check_simplex(p)?;
        let mut total = 0.0;
        for (i, &x) in p.iter().enumerate() {
            total += self.phi_scalar(self.clamp_coord(i, x)?);
        }
        Ok(total)
    }

    pub fn grad_phi(&self, p: &[f64]) -> Result<Vec<f64>> {
        p.iter()
            .enumerate()
            .map(|(i, &x)| Ok(self.grad_scalar(self.clamp_coord(i, x)?)))
            .collect()
    }

    /// Writes `∇φ(p)` into `out`. No simplex check.
    pub fn grad_phi_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, (&x, o)) in p.iter().zip(out.iter_mut()).enumerate() {
            *o = self.grad_scalar(self.clamp_coord(i, x)?);
        }
        Ok(())
    }

    pub fn grad_phi_inv(&self, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; g.len()];
        self.grad_phi_inv_into(g, &mut out)?;
        Ok(out)
    }

    pub fn grad_phi_inv_into(&self, g: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, (&x, o)) in g.iter().zip(out.iter_mut()).enumerate() {
            *o = self.inv_scalar(i, x)?;
        }
        Ok(())
    }

    /// Diagonal of `∇²φ(p)`.
    pub fn hess_phi_diag(&self, p: &[f64]) -> Result<Vec<f64>> {
        p.iter()
            .enumerate()
            .map(|(i, &x)| Ok(self.hess_scalar(self.clamp_coord(i, x)?)))
            .collect()
    }

    /// `d_φ(p, q) = φ(p) − φ(q) − ⟨p − q, ∇φ(q)⟩`, evaluated in closed form.
    pub fn bregman(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        if p.len() != q.len() {
            return Err(Error::Shape(format!(
                "divergence arguments have lengths {} and {}",
                p.len(),
                q.len()
            )));
        }
        self.check_simplex(p)?;
        self.check_simplex(q)?;
        let mut total = 0.0;
        for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
            let a = self.clamp_coord(i, a)?;
            let b = self.clamp_coord(i, b)?;
            total += self.div_scalar(a, b);
        }
        Ok(total)
    }

    /// Legendre dual `ψ(y) = ⟨y, ∇φ⁻¹(y)⟩ − φ(∇φ⁻¹(y))`.
    pub fn psi(&self, y: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &g) in y.iter().enumerate() {
            total += self.psi_scalar(i, g)?;
        }
        Ok(total)
    }

    /// Bregman divergence generated by `ψ`; its gradient is `∇φ⁻¹`.
    pub fn dual_bregman(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "divergence arguments have lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        let mut total = 0.0;
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            total += self.psi_scalar(i, x)? - self.psi_scalar(i, y)? - (x - y) * self.inv_scalar(i, y)?;
        }
        Ok(total)
    }

    // Scalar primitives. Arguments are assumed to be clamped already.

    pub(crate) fn phi_scalar(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => x * x,
            DivergenceKind::LogisticLoss => x * x.ln() + (1.0 - x) * (-x).ln_1p(),
            DivergenceKind::BoseEinstein => x * x.ln() - (1.0 + x) * x.ln_1p(),
            DivergenceKind::ItakuraSaito => -x.ln(),
            DivergenceKind::KLDivergence => x * x.log2(),
            DivergenceKind::GeneralizedI => x * x.ln(),
        }
    }

    pub(crate) fn grad_scalar(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => 2.0 * x,
            DivergenceKind::LogisticLoss => x.ln() - (-x).ln_1p(),
            DivergenceKind::BoseEinstein => x.ln() - x.ln_1p(),
            DivergenceKind::ItakuraSaito => -1.0 / x,
            DivergenceKind::KLDivergence => (x.ln() + 1.0) * LOG2_E,
            DivergenceKind::GeneralizedI => 1.0 + x.ln(),
        }
    }

    pub(crate) fn hess_scalar(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => 2.0,
            DivergenceKind::LogisticLoss => 1.0 / (x * (1.0 - x)),
            DivergenceKind::BoseEinstein => 1.0 / (x * (1.0 + x)),
            DivergenceKind::ItakuraSaito => 1.0 / (x * x),
            DivergenceKind::KLDivergence => LOG2_E / x,
            DivergenceKind::GeneralizedI => 1.0 / x,
        }
    }

    pub(crate) fn div_scalar(&self, p: f64, q: f64) -> f64 {
        // Written as sums of nonnegative terms so that d(p, q) keeps relative
        // accuracy when p is close to q.
        match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => (p - q) * (p - q),
            DivergenceKind::LogisticLoss => {
                q * xlogx_excess((p - q) / q) + (1.0 - q) * xlogx_excess((q - p) / (1.0 - q))
            }
            DivergenceKind::BoseEinstein => {
                (q * xlogx_excess((p - q) / q) - (1.0 + q) * xlogx_excess((p - q) / (1.0 + q))).max(0.0)
            }
            DivergenceKind::ItakuraSaito => log_excess((p - q) / q),
            DivergenceKind::KLDivergence => q * xlogx_excess((p - q) / q) * LOG2_E,
            DivergenceKind::GeneralizedI => q * xlogx_excess((p - q) / q),
        }
    }

    pub(crate) fn inv_scalar(&self, index: usize, g: f64) -> Result<f64> {
        let out_of_range = || Error::Range {
            kind: self.kind,
            index,
            value: g,
        };
        if !g.is_finite() {
            return Err(out_of_range());
        }
        Ok(match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => 0.5 * g,
            DivergenceKind::LogisticLoss => {
                if g >= 0.0 {
                    1.0 / (1.0 + (-g).exp())
                } else {
                    let e = g.exp();
                    e / (1.0 + e)
                }
            }
            DivergenceKind::BoseEinstein => {
                if g >= 0.0 {
                    return Err(out_of_range());
                }
                1.0 / (-g).exp_m1()
            }
            DivergenceKind::ItakuraSaito => {
                if g >= 0.0 {
                    return Err(out_of_range());
                }
                -1.0 / g
            }
            DivergenceKind::KLDivergence => (g * LN_2 - 1.0).exp(),
            DivergenceKind::GeneralizedI => (g - 1.0).exp(),
        })
    }

    pub(crate) fn psi_scalar(&self, index: usize, g: f64) -> Result<f64> {
        // Validates the range as a side effect.
        let p = self.inv_scalar(index, g)?;
        Ok(match self.kind {
            DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => 0.25 * g * g,
            // softplus
            DivergenceKind::LogisticLoss => g.max(0.0) + (-g.abs()).exp().ln_1p(),
            DivergenceKind::BoseEinstein => -(-g.exp_m1()).ln(),
            DivergenceKind::ItakuraSaito => -1.0 - (-g).ln(),
            DivergenceKind::KLDivergence => p * LOG2_E,
            DivergenceKind::GeneralizedI => p,
        })
    }
}
