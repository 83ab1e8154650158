//! The functional `f`, its first and second differentials, and the residual.
//!
//! Internally states are flat vectors `[u; v]` of length `2·nodes`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::banded::{BandedCholesky, BandedSym};
use crate::duality::{apply_dp_raw, dp_jacobian, energy_raw};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, State};
use crate::nonlinearity::{validate_growth, GrowthVerdict, NonlinearitySpec};

#[derive(Debug, Clone)]
pub struct FunctionalConfig {
    mesh: Arc<Mesh>,
    p: f64,
    q: f64,
    g: NonlinearitySpec,
    verdict: GrowthVerdict,
    stiffness: BandedSym,
    stiffness_chol: BandedCholesky,
}

/// The three blocks of the second differential.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    pub uu: BandedSym,
    /// `−∫∂₁₂G φ_i φ_j`, symmetric because u and v share one grid.
    pub uv: BandedSym,
    pub vv: BandedSym,
}

impl HessianBlocks {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.uu.dim();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&self.uu.to_dense());
        a.view_mut((n, n), (n, n)).copy_from(&self.vv.to_dense());
        let c = self.uv.to_dense();
        a.view_mut((0, n), (n, n)).copy_from(&c);
        a.view_mut((n, 0), (n, n)).copy_from(&c);
        a
    }
}

impl FunctionalConfig {
    /// Requires `p, q > max(1, n/2)` and admissible growth of `g`.
    pub fn new(mesh: Arc<Mesh>, p: f64, q: f64, g: NonlinearitySpec) -> Result<Self> {
        let floor = (mesh.dim() as f64 / 2.0).max(1.0);
        if !(p > floor) || !(q > floor) {
            return Err(Error::Config(format!("p and q must exceed max(1, n/2) = {floor}, got p = {p}, q = {q}")));
        }
        let verdict = validate_growth(&g, p, q, mesh.dim())?;
        if !verdict.admissible {
            return Err(Error::Config(format!(
                "growth exponents ({}, {}) are inadmissible for p = {p}, q = {q}",
                g.alpha1(),
                g.alpha2()
            )));
        }
        let stiffness = mesh.stiffness();
        let stiffness_chol = stiffness.cholesky()?;
        Ok(Self {
            mesh,
            p,
            q,
            g,
            verdict,
            stiffness,
            stiffness_chol,
        })
    }

    /// Same exponents and grid with another coupling.
    pub fn with_nonlinearity(&self, g: NonlinearitySpec) -> Result<Self> {
        Self::new(self.mesh.clone(), self.p, self.q, g)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.g
    }

    pub fn verdict(&self) -> &GrowthVerdict {
        &self.verdict
    }

    pub fn stiffness(&self) -> &BandedSym {
        &self.stiffness
    }

    pub fn stiffness_chol(&self) -> &BandedCholesky {
        &self.stiffness_chol
    }

    /// Nodes per component.
    pub fn nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn dim(&self) -> usize {
        2 * self.mesh.num_nodes()
    }

    pub fn check_state(&self, s: &State) -> Result<()> {
        if !self.mesh.compatible(&s.u.mesh) || !self.mesh.compatible(&s.v.mesh) {
            return Err(Error::Shape("state grid does not match the configuration".into()));
        }
        Ok(())
    }

    pub fn check_flat(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("state of length {} for {} unknowns", x.len(), self.dim())));
        }
        Ok(())
    }

    pub fn split<'a>(&self, x: &'a DVector<f64>) -> (&'a [f64], &'a [f64]) {
        x.as_slice().split_at(self.nodes())
    }

    pub fn state(&self, x: &DVector<f64>) -> Result<State> {
        State::from_flat(self.mesh.clone(), x)
    }

    /// Evaluates `sample(G, u(x_q), v(x_q))` at every quadrature point, element-major.
    pub fn sample_quadrature<T>(&self, u: &[f64], v: &[f64], sample: impl Fn(&NonlinearitySpec, f64, f64) -> T) -> Vec<T> {
        let quad = self.mesh.quad();
        let mut out = Vec::with_capacity(self.mesh.elements().len() * quad.weights.len());
        for e in self.mesh.elements() {
            let lu = self.mesh.local_values(e, u);
            let lv = self.mesh.local_values(e, v);
            for b in &quad.bary {
                let uq = b[0] * lu[0] + b[1] * lu[1] + b[2] * lu[2];
                let vq = b[0] * lv[0] + b[1] * lv[1] + b[2] * lv[2];
                out.push(sample(&self.g, uq, vq));
            }
        }
        out
    }

    /// Load vectors of `∂₁G` and `∂₂G`.
    pub fn loads(&self, u: &[f64], v: &[f64]) -> (DVector<f64>, DVector<f64>) {
        if self.g.is_zero() {
            return (DVector::zeros(self.nodes()), DVector::zeros(self.nodes()));
        }
        let grads = self.sample_quadrature(u, v, |g, a, b| g.gradient(a, b));
        let g1: Vec<f64> = grads.iter().map(|g| g[0]).collect();
        let g2: Vec<f64> = grads.iter().map(|g| g[1]).collect();
        (self.mesh.assemble_load(&g1), self.mesh.assemble_load(&g2))
    }

    /// Weighted mass matrices of `∂₁₁G`, `∂₁₂G`, `∂₂₂G`.
    pub fn coupling_masses(&self, u: &[f64], v: &[f64]) -> [BandedSym; 3] {
        let h = self.sample_quadrature(u, v, |g, a, b| g.hessian(a, b));
        let pick = |k: usize| -> Vec<f64> { h.iter().map(|x| x[k]).collect() };
        [
            self.mesh.assemble_weighted_mass(&pick(0)),
            self.mesh.assemble_weighted_mass(&pick(1)),
            self.mesh.assemble_weighted_mass(&pick(2)),
        ]
    }

    pub fn f(&self, x: &DVector<f64>) -> f64 {
        let (u, v) = self.split(x);
        let gint: f64 = if self.g.is_zero() {
            0.0
        } else {
            let vals = self.sample_quadrature(u, v, |g, a, b| g.value(a, b));
            let quad = self.mesh.quad();
            let nq = quad.weights.len();
            self.mesh
                .elements()
                .iter()
                .enumerate()
                .map(|(ei, e)| e.measure * (0..nq).map(|k| quad.weights[k] * vals[ei * nq + k]).sum::<f64>())
                .sum()
        };
        energy_raw(&self.mesh, self.p, u) - energy_raw(&self.mesh, self.q, v) - gint
    }

    pub fn df(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.nodes();
        let (u, v) = self.split(x);
        let (ku, kv) = self.loads(u, v);
        let du = apply_dp_raw(&self.mesh, self.p, u) - ku;
        let dv = -apply_dp_raw(&self.mesh, self.q, v) - kv;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&du);
        out.rows_mut(n, n).copy_from(&dv);
        out
    }

    pub fn hessian_blocks(&self, x: &DVector<f64>) -> HessianBlocks {
        let n = self.nodes();
        let (u, v) = self.split(x);
        let mut uu = dp_jacobian(&self.mesh, self.p, u);
        let mut vv = dp_jacobian(&self.mesh, self.q, v);
        let mut uv = BandedSym::zeros(n, self.mesh.bandwidth());
        if !self.g.is_zero() {
            let [m11, m12, m22] = self.coupling_masses(u, v);
            let bw = self.mesh.bandwidth();
            for i in 0..n {
                for j in i.saturating_sub(bw)..=i {
                    uu.add(i, j, -m11.get(i, j));
                    uv.add(i, j, -m12.get(i, j));
                    vv.add(i, j, m22.get(i, j));
                }
            }
        }
        // vv currently holds D_q' + M22; negate the whole block
        let mut neg = BandedSym::zeros(n, self.mesh.bandwidth());
        let bw = self.mesh.bandwidth();
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                neg.add(i, j, -vv.get(i, j));
            }
        }
        vv = neg;
        HessianBlocks { uu, uv, vv }
    }

    pub fn d2f_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.hessian_blocks(x).to_dense()
    }

    /// `d²f(x)[h₁, h₂]`, evaluated elementwise so that swapping the
    /// arguments reproduces the value bit for bit.
    pub fn d2f_bilinear(&self, x: &DVector<f64>, h1: &DVector<f64>, h2: &DVector<f64>) -> f64 {
        let (u, v) = self.split(x);
        let (a1, b1) = self.split(h1);
        let (a2, b2) = self.split(h2);
        let mesh = &self.mesh;
        let quad = mesh.quad();
        let mut total = 0.0;
        for e in mesh.elements() {
            let mut elem = 0.0;
            for (ubar, xi1, xi2, p, sign) in [(u, a1, a2, self.p, 1.0), (v, b1, b2, self.q, -1.0)] {
                let g = mesh.gradient(e, ubar);
                let g1 = mesh.gradient(e, xi1);
                let g2 = mesh.gradient(e, xi2);
                let (a, b) = crate::duality::gradient_weights(p, g[0] * g[0] + g[1] * g[1]);
                let d1 = g[0] * g1[0] + g[1] * g1[1];
                let d2 = g[0] * g2[0] + g[1] * g2[1];
                elem += sign * (a * (g1[0] * g2[0] + g1[1] * g2[1]) + b * (d1 * d2));
            }
            if !self.g.is_zero() {
                let (lu, lv) = (mesh.local_values(e, u), mesh.local_values(e, v));
                let (l1, m1) = (mesh.local_values(e, a1), mesh.local_values(e, b1));
                let (l2, m2) = (mesh.local_values(e, a2), mesh.local_values(e, b2));
                let at = |l: &[f64; 3], b: &[f64; 3]| b[0] * l[0] + b[1] * l[1] + b[2] * l[2];
                let mut gpart = 0.0;
                for (bc, w) in quad.bary.iter().zip(&quad.weights) {
                    let h = self.g.hessian(at(&lu, bc), at(&lv, bc));
                    let (x1, y1, x2, y2) = (at(&l1, bc), at(&m1, bc), at(&l2, bc), at(&m2, bc));
                    gpart += w * (h[0] * (x1 * x2) + h[1] * (x1 * y2 + x2 * y1) + h[2] * (y1 * y2));
                }
                elem -= gpart;
            }
            total += e.measure * elem;
        }
        total
    }

    /// `sqrt(g_uᵀ S⁻¹ g_u + g_vᵀ S⁻¹ g_v)` with `S` the stiffness matrix.
    pub fn dual_norm(&self, g: &DVector<f64>) -> f64 {
        let (a, b) = self.split(g);
        (self.stiffness_chol.inverse_quadratic(a) + self.stiffness_chol.inverse_quadratic(b))
            .max(0.0)
            .sqrt()
    }

    /// Norm induced by the stiffness Gram at the origin.
    pub fn origin_norm(&self, x: &DVector<f64>) -> f64 {
        let (a, b) = self.split(x);
        let sa = self.stiffness.mul_vec(a);
        let sb = self.stiffness.mul_vec(b);
        let q: f64 = sa.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() + sb.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        q.max(0.0).sqrt()
    }

    /// `‖∇u‖_{2p} + ‖∇v‖_{2q}`.
    pub fn x_norm(&self, x: &DVector<f64>) -> f64 {
        use crate::mesh::NormKind::SobolevGrad;
        let (u, v) = self.split(x);
        self.mesh.norm_of(u, SobolevGrad(2.0 * self.p)).unwrap_or(f64::NAN)
            + self.mesh.norm_of(v, SobolevGrad(2.0 * self.q)).unwrap_or(f64::NAN)
    }

    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        self.dual_norm(&self.df(x))
    }
}

pub fn eval_f(cfg: &FunctionalConfig, s: &State) -> Result<f64> {
    cfg.check_state(s)?;
    Ok(cfg.f(&s.to_flat()))
}

pub fn eval_df(cfg: &FunctionalConfig, s: &State) -> Result<DVector<f64>> {
    cfg.check_state(s)?;
    Ok(cfg.df(&s.to_flat()))
}

pub fn eval_d2f(cfg: &FunctionalConfig, s: &State, h1: &State, h2: &State) -> Result<f64> {
    cfg.check_state(s)?;
    cfg.check_state(h1)?;
    cfg.check_state(h2)?;
    Ok(cfg.d2f_bilinear(&s.to_flat(), &h1.to_flat(), &h2.to_flat()))
}

pub fn assemble_d2f(cfg: &FunctionalConfig, s: &State) -> Result<DMatrix<f64>> {
    cfg.check_state(s)?;
    Ok(cfg.d2f_matrix(&s.to_flat()))
}

pub fn system_residual(cfg: &FunctionalConfig, s: &State) -> Result<f64> {
    cfg.check_state(s)?;
    Ok(cfg.residual(&s.to_flat()))
}
