//! Polynomial couplings `G(x₁, x₂)` and the growth admissibility test.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

/// `coeff · x₁^i · x₂^j`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub i: u32,
    pub j: u32,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Zero,
    /// `(κ/2) x₁²`
    QuadraticU { kappa: f64 },
    /// `(μ/2) x₂²`
    QuadraticV { mu: f64 },
    /// `λ x₁ x₂`
    Bilinear { lambda: f64 },
    /// `(κ/2) x₁² − (γ/4) x₁⁴`
    PitchforkU { kappa: f64, gamma: f64 },
    Custom { terms: Vec<Monomial> },
}

impl Family {
    fn terms(&self) -> Vec<Monomial> {
        let m = |i, j, coeff| Monomial { i, j, coeff };
        match self {
            Family::Zero => Vec::new(),
            Family::QuadraticU { kappa } => alloc::vec![m(2, 0, 0.5 * kappa)],
            Family::QuadraticV { mu } => alloc::vec![m(0, 2, 0.5 * mu)],
            Family::Bilinear { lambda } => alloc::vec![m(1, 1, *lambda)],
            Family::PitchforkU { kappa, gamma } => alloc::vec![m(2, 0, 0.5 * kappa), m(4, 0, -0.25 * gamma)],
            Family::Custom { terms } => terms.clone(),
        }
    }

    /// Smallest exponents that bound this family.
    pub fn default_exponents(&self) -> (f64, f64) {
        match self {
            Family::Zero => (0.0, 0.0),
            Family::QuadraticU { .. } => (2.0, 0.0),
            Family::QuadraticV { .. } => (0.0, 2.0),
            Family::Bilinear { .. } => (2.0, 2.0),
            Family::PitchforkU { .. } => (4.0, 0.0),
            Family::Custom { terms } => {
                let di = terms.iter().filter(|t| t.coeff != 0.0).map(|t| t.i + t.j).max().unwrap_or(0);
                (di as f64, di as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GValue {
    Value(f64),
    /// `(∂₁G, ∂₂G)`
    Gradient([f64; 2]),
    /// `(∂₁₁G, ∂₁₂G, ∂₂₂G)`
    Hessian([f64; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearitySpec {
    family: Family,
    alpha1: f64,
    alpha2: f64,
    terms: Vec<Monomial>,
}

impl NonlinearitySpec {
    /// Every monomial `x₁^i x₂^j` must satisfy `i/α₁ + j/α₂ ≤ 1`, so that
    /// `|G| ≲ 1 + |x₁|^α₁ + |x₂|^α₂` by Young's inequality.
    pub fn new(family: Family, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 >= 0.0 && alpha2 >= 0.0) || !alpha1.is_finite() || !alpha2.is_finite() {
            return Err(Error::Config(format!("growth exponents must be nonnegative, got ({alpha1}, {alpha2})")));
        }
        let terms: Vec<Monomial> = family.terms().into_iter().filter(|t| t.coeff != 0.0).collect();
        for t in &terms {
            if !t.coeff.is_finite() {
                return Err(Error::Config(format!("non-finite coefficient in {t:?}")));
            }
            let part = |deg: u32, alpha: f64| -> Option<f64> {
                match (deg, alpha) {
                    (0, _) => Some(0.0),
                    (_, a) if a == 0.0 => None,
                    (d, a) => Some(d as f64 / a),
                }
            };
            let ok = match (part(t.i, alpha1), part(t.j, alpha2)) {
                (Some(a), Some(b)) => a + b <= 1.0 + 1e-12,
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "monomial x1^{} x2^{} is not bounded by exponents ({alpha1}, {alpha2})",
                    t.i, t.j
                )));
            }
        }
        Ok(Self {
            family,
            alpha1,
            alpha2,
            terms,
        })
    }

    pub fn with_default_exponents(family: Family) -> Result<Self> {
        let (a1, a2) = family.default_exponents();
        Self::new(family, a1, a2)
    }

    pub fn zero() -> Self {
        Self::with_default_exponents(Family::Zero).expect("zero family is valid")
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when `G` does not involve `x₂`.
    pub fn depends_only_on_u(&self) -> bool {
        self.terms.iter().all(|t| t.j == 0)
    }

    pub fn depends_only_on_v(&self) -> bool {
        self.terms.iter().all(|t| t.i == 0)
    }

    pub fn is_even_in_u(&self) -> bool {
        self.terms.iter().all(|t| t.i % 2 == 0)
    }

    pub fn is_even_in_v(&self) -> bool {
        self.terms.iter().all(|t| t.j % 2 == 0)
    }

    /// `(1 − t) G₀ + t G₁` with the larger declared exponents.
    pub fn blend(g0: &Self, g1: &Self, t: f64) -> Result<Self> {
        let mut terms: Vec<Monomial> = Vec::new();
        let mut push = |m: Monomial| {
            if let Some(e) = terms.iter_mut().find(|e| e.i == m.i && e.j == m.j) {
                e.coeff += m.coeff;
            } else {
                terms.push(m);
            }
        };
        for m in &g0.terms {
            push(Monomial { coeff: (1.0 - t) * m.coeff, ..*m });
        }
        for m in &g1.terms {
            push(Monomial { coeff: t * m.coeff, ..*m });
        }
        Self::new(Family::Custom { terms }, g0.alpha1.max(g1.alpha1), g0.alpha2.max(g1.alpha2))
    }

    #[inline]
    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        self.terms.iter().map(|t| t.coeff * x1.powi(t.i as i32) * x2.powi(t.j as i32)).sum()
    }

    #[inline]
    pub fn gradient(&self, x1: f64, x2: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for t in &self.terms {
            if t.i > 0 {
                g[0] += t.coeff * t.i as f64 * x1.powi(t.i as i32 - 1) * x2.powi(t.j as i32);
            }
            if t.j > 0 {
                g[1] += t.coeff * t.j as f64 * x1.powi(t.i as i32) * x2.powi(t.j as i32 - 1);
            }
        }
        g
    }

    #[inline]
    pub fn hessian(&self, x1: f64, x2: f64) -> [f64; 3] {
        let mut h = [0.0; 3];
        for t in &self.terms {
            let (i, j) = (t.i as i32, t.j as i32);
            if i > 1 {
                h[0] += t.coeff * (i * (i - 1)) as f64 * x1.powi(i - 2) * x2.powi(j);
            }
            if i > 0 && j > 0 {
                h[1] += t.coeff * (i * j) as f64 * x1.powi(i - 1) * x2.powi(j - 1);
            }
            if j > 1 {
                h[2] += t.coeff * (j * (j - 1)) as f64 * x1.powi(i) * x2.powi(j - 2);
            }
        }
        h
    }

    /// Largest second derivative at the origin; sets the scale of active modes.
    pub fn origin_curvature(&self) -> f64 {
        let h = self.hessian(0.0, 0.0);
        h.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }
}

pub fn eval_g(spec: &NonlinearitySpec, x1: f64, x2: f64, order: u8) -> Result<GValue> {
    match order {
        0 => Ok(GValue::Value(spec.value(x1, x2))),
        1 => Ok(GValue::Gradient(spec.gradient(x1, x2))),
        2 => Ok(GValue::Hessian(spec.hessian(x1, x2))),
        o => Err(Error::Domain(format!("derivative order must be 0, 1 or 2, got {o}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Strict,
    Refined { epsilon: f64 },
    Inadmissible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthCheck {
    pub name: String,
    pub epsilon: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; strict inequalities need a positive margin.
    pub margin: f64,
    pub strict: bool,
}

impl GrowthCheck {
    pub fn passed(&self) -> bool {
        if self.strict {
            self.margin > 0.0
        } else {
            self.margin >= 0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthVerdict {
    pub admissible: bool,
    pub regime: Regime,
    pub checks: Vec<GrowthCheck>,
}

pub const REFINED_EPSILONS: [f64; 3] = [0.1, 0.01, 0.001];

/// Growth admissibility of `spec` for exponents `p, q` on a domain of
/// dimension `dim`.
pub fn validate_growth(spec: &NonlinearitySpec, p: f64, q: f64, dim: usize) -> Result<GrowthVerdict> {
    let half = dim as f64 / 2.0;
    if !(p > half) || !(q > half) {
        return Err(Error::Config(format!("exponents must exceed n/2 = {half}, got p = {p}, q = {q}")));
    }
    let (a1, a2) = (spec.alpha1, spec.alpha2);
    let mut checks = Vec::new();
    let check = |name: &str, eps: Option<f64>, lhs: f64, rhs: f64, strict: bool| GrowthCheck {
        name: name.into(),
        epsilon: eps,
        lhs,
        rhs,
        margin: rhs - lhs,
        strict,
    };
    let m = p.min(q);
    let strict = [
        check("alpha1 < min(p,q)", None, a1, m, true),
        check("alpha2 < min(p,q)", None, a2, m, true),
    ];
    let strict_ok = strict.iter().all(GrowthCheck::passed);
    checks.extend(strict);

    let cap = (2.0 * p - 1.0).min(2.0 * q - 1.0);
    let mut refined_eps = None;
    for &eps in &REFINED_EPSILONS {
        let s2 = 2.0 * p - eps;
        let s1 = 2.0 * q - eps;
        let r1 = s1 / (s1 - 1.0);
        let r2 = s2 / (s2 - 1.0);
        let group = [
            check("max(s2, alpha1+1, r1*alpha1) < 2p", Some(eps), s2.max(a1 + 1.0).max(r1 * a1), 2.0 * p, true),
            check("max(s1, alpha2+1, r2*alpha2) < 2q", Some(eps), s1.max(a2 + 1.0).max(r2 * a2), 2.0 * q, true),
            check("alpha1 <= min(2p-1, 2q-1)", Some(eps), a1, cap, false),
            check("alpha2 <= min(2p-1, 2q-1)", Some(eps), a2, cap, false),
        ];
        if refined_eps.is_none() && group.iter().all(GrowthCheck::passed) {
            refined_eps = Some(eps);
        }
        checks.extend(group);
    }
    let regime = if strict_ok {
        Regime::Strict
    } else if let Some(epsilon) = refined_eps {
        Regime::Refined { epsilon }
    } else {
        Regime::Inadmissible
    };
    Ok(GrowthVerdict {
        admissible: regime != Regime::Inadmissible,
        regime,
        checks,
    })
}
