//! The monotone operators `D_p`, the compact couplings `K_u`, `K_v` and the
//! Newton inversion of `D_p`.
//!
//! `D_p(u)[ξ] = ∫ (1+|∇u|²)^{p−1} ∇u·∇ξ` is the gradient of the strictly convex
//! energy `u ↦ 1/(2p) ∫ (1+|∇u|²)^p`, so `D_p⁻¹ φ` is the minimiser of that
//! energy minus `φ[u]`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DVector;
use num_traits::Float;

use crate::banded::{BandedCholesky, BandedSym};
use crate::error::{Error, Result};
use crate::functional::FunctionalConfig;
use crate::mesh::{GridFunction, Mesh, NormKind, State};

/// One value per node, paired against the nodal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub mesh: Arc<Mesh>,
    pub values: DVector<f64>,
}

/// `(1+m)^{p−1}` and `2(p−1)(1+m)^{p−2}` for `m = |∇u|²`.
#[inline]
pub fn gradient_weights(p: f64, m: f64) -> (f64, f64) {
    let base = 1.0 + m;
    let a = base.powf(p - 1.0);
    (a, 2.0 * (p - 1.0) * a / base)
}

/// Assembled `D_p(u)` for nodal coefficients `u`.
pub fn apply_dp_raw(mesh: &Mesh, p: f64, u: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(mesh.num_nodes());
    for e in mesh.elements() {
        let g = mesh.gradient(e, u);
        let a = (1.0 + g[0] * g[0] + g[1] * g[1]).powf(p - 1.0);
        for k in 0..mesh.local_nodes() {
            if let Some(i) = e.nodes[k] {
                out[i] += e.measure * a * (g[0] * e.grads[k][0] + g[1] * e.grads[k][1]);
            }
        }
    }
    out
}

/// `1/(2p) ∫ (1+|∇u|²)^p`.
pub fn energy_raw(mesh: &Mesh, p: f64, u: &[f64]) -> f64 {
    let mut s = 0.0;
    for e in mesh.elements() {
        let g = mesh.gradient(e, u);
        s += e.measure * (1.0 + g[0] * g[0] + g[1] * g[1]).powf(p);
    }
    s / (2.0 * p)
}

/// Derivative of `D_p` at `u`; this is also the weighted Gram block at `u`.
pub fn dp_jacobian(mesh: &Mesh, p: f64, u: &[f64]) -> BandedSym {
    let grads: Vec<[f64; 2]> = mesh.elements().iter().map(|e| mesh.gradient(e, u)).collect();
    mesh.assemble_gradient_form(|ei| {
        let g = grads[ei];
        let (a, b) = gradient_weights(p, g[0] * g[0] + g[1] * g[1]);
        (a, b, g)
    })
}

pub fn apply_dp(p: f64, g: &GridFunction) -> DualVector {
    DualVector {
        mesh: g.mesh.clone(),
        values: apply_dp_raw(&g.mesh, p, g.values.as_slice()),
    }
}

/// `D_q` is `D_p` with the other exponent.
pub fn apply_dq(q: f64, g: &GridFunction) -> DualVector {
    apply_dp(q, g)
}

/// Load vector of `∂₁G(u, v)`.
pub fn apply_ku(cfg: &FunctionalConfig, s: &State) -> Result<DualVector> {
    cfg.check_state(s)?;
    let (ku, _) = cfg.loads(s.u.values.as_slice(), s.v.values.as_slice());
    Ok(DualVector {
        mesh: cfg.mesh().clone(),
        values: ku,
    })
}

/// Load vector of `∂₂G(u, v)`.
pub fn apply_kv(cfg: &FunctionalConfig, s: &State) -> Result<DualVector> {
    cfg.check_state(s)?;
    let (_, kv) = cfg.loads(s.u.values.as_slice(), s.v.values.as_slice());
    Ok(DualVector {
        mesh: cfg.mesh().clone(),
        values: kv,
    })
}

/// Result of a `D_p` inversion.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub solution: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `D_p(u) = φ` by damped Newton on the convex energy.
///
/// `precond` is the factored stiffness matrix; residuals are measured in the
/// dual norm it induces. The stopping test is `‖D_p(u) − φ‖_* ≤ tol` with a
/// round-off floor proportional to `‖φ‖_*`.
pub fn solve_dp(
    mesh: &Mesh,
    precond: &BandedCholesky,
    p: f64,
    phi: &[f64],
    tol: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
) -> Result<Inversion> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let n = mesh.num_nodes();
    if phi.len() != n {
        return Err(Error::Shape(format!("{} load entries for {n} nodes", phi.len())));
    }
    let phi_norm = precond.inverse_quadratic(phi).max(0.0).sqrt();
    if phi_norm == 0.0 {
        return Ok(Inversion {
            solution: DVector::zeros(n),
            iterations: 0,
            residual: 0.0,
        });
    }
    let floor = tol.max(4e-14 * phi_norm);
    let energy = |u: &[f64]| energy_raw(mesh, p, u) - dot(phi, u);

    let mut u = ray_seed(mesh, precond, p, phi);
    if let Some(w) = warm {
        if w.len() == n && energy(w) < energy(&u) {
            u = w.to_vec();
        }
    }
    let mut e_cur = energy(&u);
    let mut r = residual_vec(mesh, p, &u, phi);
    let mut r_norm = precond.inverse_quadratic(&r).max(0.0).sqrt();
    for it in 0..max_iter {
        if r_norm <= floor {
            return Ok(Inversion {
                solution: DVector::from_vec(u),
                iterations: it,
                residual: r_norm,
            });
        }
        let h = dp_jacobian(mesh, p, &u).cholesky()?;
        let mut step: Vec<f64> = r.iter().map(|x| -x).collect();
        h.solve_in_place(&mut step);
        let slope = dot(&r, &step);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=40 {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, d)| a + alpha * d).collect();
            let e_new = energy(&trial);
            let r_new = residual_vec(mesh, p, &trial, phi);
            let rn_new = precond.inverse_quadratic(&r_new).max(0.0).sqrt();
            // near the minimiser energy differences drown in round-off; a
            // smaller residual is then the meaningful progress measure
            if e_new <= e_cur + 1e-4 * alpha * slope || rn_new < r_norm {
                u = trial;
                e_cur = e_new;
                r = r_new;
                r_norm = rn_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r_norm <= floor {
        return Ok(Inversion {
            solution: DVector::from_vec(u),
            iterations: max_iter,
            residual: r_norm,
        });
    }
    Err(Error::Convergence {
        what: "D_p inversion",
        iterations: max_iter,
        residual: r_norm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual_vec(mesh: &Mesh, p: f64, u: &[f64], phi: &[f64]) -> Vec<f64> {
    let d = apply_dp_raw(mesh, p, u);
    d.iter().zip(phi).map(|(a, b)| a - b).collect()
}

/// `t·S⁻¹φ` with `t ∈ (0, 1]` minimising the energy along the ray.
fn ray_seed(mesh: &Mesh, precond: &BandedCholesky, p: f64, phi: &[f64]) -> Vec<f64> {
    let w = precond.solve(phi);
    let target = dot(phi, &w);
    let grad2: Vec<(f64, f64)> = mesh
        .elements()
        .iter()
        .map(|e| {
            let g = mesh.gradient(e, &w);
            (e.measure, g[0] * g[0] + g[1] * g[1])
        })
        .collect();
    // derivative of the energy along the ray, increasing in t
    let slope = |t: f64| -> f64 {
        grad2
            .iter()
            .map(|(m, g2)| m * (1.0 + t * t * g2).powf(p - 1.0) * t * g2)
            .sum::<f64>()
            - target
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    w.iter().map(|x| t * x).collect()
}

/// Inverts `D_p` on a dual vector, building the stiffness preconditioner.
pub fn invert_dp(p: f64, phi: &DualVector, tol: f64, max_iter: usize) -> Result<GridFunction> {
    if !(p > 1.0) {
        return Err(Error::Domain(format!("exponent must exceed 1, got {p}")));
    }
    let chol = phi.mesh.stiffness().cholesky()?;
    let inv = solve_dp(&phi.mesh, &chol, p, phi.values.as_slice(), tol, max_iter, None)?;
    GridFunction::new(phi.mesh.clone(), inv.solution)
}

pub fn invert_dq(q: f64, phi: &DualVector, tol: f64, max_iter: usize) -> Result<GridFunction> {
    invert_dp(q, phi, tol, max_iter)
}

/// The pairing `(D_p(g₁) − D_p(g₂))[g₁ − g₂]` with the two norms it controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityGap {
    pub gap: f64,
    /// `‖∇(g₁ − g₂)‖_{2p}`
    pub sobolev_norm: f64,
    /// `‖D_p(g₁) − D_p(g₂)‖_*`
    pub dual_norm: f64,
}

impl MonotonicityGap {
    /// Constant `c` in `gap ≥ 4c‖g₁−g₂‖^{2p}`.
    pub fn sobolev_constant(&self, p: f64) -> f64 {
        self.gap / (4.0 * self.sobolev_norm.powf(2.0 * p))
    }

    /// Constant `c` in `gap ≥ 4c‖D_p g₁ − D_p g₂‖_*^{p'}`, `p' = 2p/(2p−1)`.
    pub fn dual_constant(&self, p: f64) -> f64 {
        self.gap / (4.0 * self.dual_norm.powf(2.0 * p / (2.0 * p - 1.0)))
    }
}

pub fn monotonicity_gap(p: f64, g1: &GridFunction, g2: &GridFunction) -> Result<MonotonicityGap> {
    if !(p > 1.0) {
        return Err(Error::Domain(format!("exponent must exceed 1, got {p}")));
    }
    if !g1.mesh.compatible(&g2.mesh) {
        return Err(Error::Shape("grid functions on different grids".into()));
    }
    let mesh = &g1.mesh;
    let chol = mesh.stiffness().cholesky()?;
    let d = apply_dp_raw(mesh, p, g1.values.as_slice()) - apply_dp_raw(mesh, p, g2.values.as_slice());
    let diff = &g1.values - &g2.values;
    Ok(MonotonicityGap {
        gap: d.dot(&diff),
        sobolev_norm: mesh.norm_of(diff.as_slice(), NormKind::SobolevGrad(2.0 * p))?,
        dual_norm: chol.inverse_quadratic(d.as_slice()).max(0.0).sqrt(),
    })
}
