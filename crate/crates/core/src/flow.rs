//! Gradient-like fields, their flows and Palais–Smale diagnostics.
//!
//! Away from critical points the field is
//! `V(u, v) = (−u + D_p⁻¹ K_u(u, v), v + D_q⁻¹ K_v(u, v))`, which vanishes
//! exactly where `df` does and satisfies `df[V] < 0` elsewhere. Around each
//! certified critical point it is blended into the hyperbolic linear field of
//! the local certificate with a quintic smoothstep on the annulus `[r/2, r]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::{BandedCholesky, BandedSym};
use crate::duality::{dp_jacobian, solve_dp};
use crate::error::{Error, Result};
use crate::functional::FunctionalConfig;
use crate::mesh::NormKind;
use crate::nonlinearity::Regime;
use crate::spectral::{gaussian, LocalLinearField};

/// Tolerance of the inner `D_p` inversions.
pub const INNER_TOL: f64 = 1e-13;
const INNER_MAX_ITER: usize = 80;

#[derive(Debug, Clone)]
pub struct Patch {
    /// Catalogue id of the critical point.
    pub id: usize,
    pub local: LocalLinearField,
}

/// Blend weight `χ(d)`: one on `[0, r/2]`, zero beyond `r`, quintic in between.
#[inline]
pub fn blend_weight(d: f64, r: f64) -> (f64, f64) {
    let half = 0.5 * r;
    if d <= half {
        (1.0, 0.0)
    } else if d >= r {
        (0.0, 0.0)
    } else {
        let t = (d - half) / half;
        let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        (1.0 - s, -ds / half)
    }
}

/// Smooth bounded low-rank field `ĉ(x) = Σ_k sin(ω_k ⟨θ_k, x⟩ + φ_k) w_k`
/// built from low Dirichlet modes, scaled by `scale`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub seed: u64,
    pub amplitude: f64,
    /// Effective multiplier chosen by calibration.
    pub scale: f64,
    directions: Vec<DVector<f64>>,
    probes: Vec<DVector<f64>>,
    freqs: Vec<f64>,
    phases: Vec<f64>,
}

impl Perturbation {
    pub const RANK: usize = 3;

    pub fn new(cfg: &FunctionalConfig, seed: u64, amplitude: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::Config(format!("perturbation amplitude must lie in [0, 1], got {amplitude}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = low_modes(cfg, 3);
        let mut directions = Vec::new();
        let mut probes = Vec::new();
        let mut freqs = Vec::new();
        let mut phases = Vec::new();
        for _ in 0..Self::RANK {
            let mut pick = || {
                let mut d = DVector::zeros(cfg.dim());
                for m in &modes {
                    d += m * gaussian(&mut rng);
                }
                let norm = cfg.origin_norm(&d);
                d / norm
            };
            let w = pick();
            let psi = pick();
            let n = cfg.nodes();
            // θ = S₀ ψ so that ⟨θ, x⟩ is the origin inner product with ψ
            let mut theta = DVector::zeros(cfg.dim());
            theta.as_mut_slice()[..n].copy_from_slice(&cfg.stiffness().mul_vec(&psi.as_slice()[..n]));
            theta.as_mut_slice()[n..].copy_from_slice(&cfg.stiffness().mul_vec(&psi.as_slice()[n..]));
            directions.push(w);
            probes.push(theta);
            freqs.push(rng.random_range(1.0..3.0));
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        Ok(Self {
            seed,
            amplitude,
            scale: 0.0,
            directions,
            probes,
            freqs,
            phases,
        })
    }

    pub fn raw(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for k in 0..self.directions.len() {
            let a = (self.freqs[k] * self.probes[k].dot(x) + self.phases[k]).sin();
            out.axpy(a, &self.directions[k], 1.0);
        }
        out
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.raw(x) * self.scale
    }

    fn jacobian_apply(&self, x: &DVector<f64>, dx: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dx.nrows(), dx.ncols());
        for k in 0..self.directions.len() {
            let c = self.scale * self.freqs[k] * (self.freqs[k] * self.probes[k].dot(x) + self.phases[k]).cos();
            let row = self.probes[k].transpose() * dx;
            out += &self.directions[k] * (row * c);
        }
        out
    }
}

/// Piecewise-linear interpolants of the lowest Dirichlet modes in u and in v.
pub fn low_modes(cfg: &FunctionalConfig, per_axis: usize) -> Vec<DVector<f64>> {
    let mesh = cfg.mesh();
    let ext = mesh.extents().to_vec();
    let n = cfg.nodes();
    let mut shapes = Vec::new();
    let ky = if mesh.dim() == 2 { per_axis } else { 1 };
    for k in 1..=per_axis {
        for l in 1..=ky {
            let lx = ext[0];
            let ly = if mesh.dim() == 2 { ext[1] } else { 1.0 };
            let g = mesh.interpolate(|x| {
                let y = if mesh.dim() == 2 { (l as f64 * PI * x[1] / ly).sin() } else { 1.0 };
                (k as f64 * PI * x[0] / lx).sin() * y
            });
            shapes.push(g.values);
        }
    }
    let mut out = Vec::new();
    for s in &shapes {
        for half in 0..2 {
            let mut d = DVector::zeros(2 * n);
            d.rows_mut(half * n, n).copy_from(s);
            out.push(d);
        }
    }
    out
}

/// Base part, compact part and their sum.
#[derive(Debug, Clone)]
pub struct FieldParts {
    /// `(−u, v)`
    pub base: DVector<f64>,
    pub compact: DVector<f64>,
    pub total: DVector<f64>,
}

/// Everything needed to apply the derivative of the field at one point.
#[derive(Debug, Clone)]
pub struct FieldPoint {
    pub x: DVector<f64>,
    pub value: DVector<f64>,
    /// Patch index and blend weight when inside some patch radius.
    patch: Option<(usize, f64)>,
    grad_chi: Option<DVector<f64>>,
    /// `L(x − c) − V(x) − C(x)` in the annulus.
    blend_diff: Option<DVector<f64>>,
    couplings: Option<Couplings>,
}

#[derive(Debug, Clone)]
struct Couplings {
    hp: BandedCholesky,
    hq: BandedCholesky,
    m: [BandedSym; 3],
}

#[derive(Debug, Clone)]
pub struct FieldSpec {
    cfg: FunctionalConfig,
    pub patches: Vec<Patch>,
    pub perturbation: Option<Perturbation>,
}

impl FieldSpec {
    /// `V` itself: no patches, no perturbation.
    pub fn plain(cfg: &FunctionalConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            patches: Vec::new(),
            perturbation: None,
        }
    }

    pub fn cfg(&self) -> &FunctionalConfig {
        &self.cfg
    }

    /// `(D_p⁻¹ K_u, D_q⁻¹ K_v)`.
    pub fn v_compact(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let cfg = &self.cfg;
        let n = cfg.nodes();
        let (u, v) = cfg.split(x);
        let (ku, kv) = cfg.loads(u, v);
        let mut out = DVector::zeros(2 * n);
        if ku.iter().any(|&c| c != 0.0) {
            let w = solve_dp(cfg.mesh(), cfg.stiffness_chol(), cfg.p(), ku.as_slice(), INNER_TOL, INNER_MAX_ITER, None)?;
            out.rows_mut(0, n).copy_from(&w.solution);
        }
        if kv.iter().any(|&c| c != 0.0) {
            let z = solve_dp(cfg.mesh(), cfg.stiffness_chol(), cfg.q(), kv.as_slice(), INNER_TOL, INNER_MAX_ITER, None)?;
            out.rows_mut(n, n).copy_from(&z.solution);
        }
        Ok(out)
    }

    pub fn base(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.cfg.nodes();
        let mut b = x.clone();
        b.rows_mut(0, n).neg_mut();
        b
    }

    pub fn eval_v(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.base(x) + self.v_compact(x)?)
    }

    /// Patch whose outer radius contains `x`, with distance.
    pub fn locate(&self, x: &DVector<f64>) -> Option<(usize, f64)> {
        self.patches.iter().enumerate().find_map(|(k, p)| {
            let d = p.local.distance(x);
            (d < p.local.radius).then_some((k, d))
        })
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.eval_parts(x)?.total)
    }

    pub fn eval_parts(&self, x: &DVector<f64>) -> Result<FieldParts> {
        self.cfg.check_flat(x)?;
        let base = self.base(x);
        let located = self.locate(x);
        if let Some((k, d)) = located {
            let local = &self.patches[k].local;
            let (chi, _) = blend_weight(d, local.radius);
            if chi == 1.0 {
                let total = local.eval(x);
                let compact = &total - &base;
                return Ok(FieldParts { base, compact, total });
            }
        }
        let mut compact = self.v_compact(x)?;
        if let Some(c) = &self.perturbation {
            compact += c.eval(x);
        }
        if let Some((k, d)) = located {
            let local = &self.patches[k].local;
            let (chi, _) = blend_weight(d, local.radius);
            let lin = local.eval(x);
            let far = &base + &compact;
            let total = lin * chi + far * (1.0 - chi);
            let compact = &total - &base;
            return Ok(FieldParts { base, compact, total });
        }
        let total = &base + &compact;
        Ok(FieldParts { base, compact, total })
    }

    /// Value of the field together with the data needed for its derivative.
    pub fn linearize(&self, x: &DVector<f64>) -> Result<FieldPoint> {
        self.cfg.check_flat(x)?;
        let cfg = &self.cfg;
        let located = self.locate(x);
        if let Some((k, d)) = located {
            let local = &self.patches[k].local;
            if blend_weight(d, local.radius).0 == 1.0 {
                return Ok(FieldPoint {
                    x: x.clone(),
                    value: local.eval(x),
                    patch: Some((k, 1.0)),
                    grad_chi: None,
                    blend_diff: None,
                    couplings: None,
                });
            }
        }
        let comp = self.v_compact(x)?;
        let n = cfg.nodes();
        let couplings = if cfg.nonlinearity().is_zero() {
            None
        } else {
            let (u, v) = cfg.split(x);
            let w = &comp.as_slice()[..n];
            let z = &comp.as_slice()[n..];
            Some(Couplings {
                hp: dp_jacobian(cfg.mesh(), cfg.p(), w).cholesky()?,
                hq: dp_jacobian(cfg.mesh(), cfg.q(), z).cholesky()?,
                m: cfg.coupling_masses(u, v),
            })
        };
        let mut pushed = comp.clone();
        if let Some(c) = &self.perturbation {
            pushed += c.eval(x);
        }
        let far = self.base(x) + pushed;
        if let Some((k, d)) = located {
            let local = &self.patches[k].local;
            let (chi, dchi) = blend_weight(d, local.radius);
            let lin = local.eval(x);
            let y = x - &local.center;
            let grad_chi = local.gram.mul(&y) * (dchi / d);
            let value = &lin * chi + &far * (1.0 - chi);
            return Ok(FieldPoint {
                x: x.clone(),
                value,
                patch: Some((k, chi)),
                grad_chi: Some(grad_chi),
                blend_diff: Some(lin - far),
                couplings,
            });
        }
        Ok(FieldPoint {
            x: x.clone(),
            value: far,
            patch: None,
            grad_chi: None,
            blend_diff: None,
            couplings,
        })
    }

    /// Derivative of `V + C` applied to the columns of `dx`.
    fn far_jacobian(&self, pt: &FieldPoint, dx: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.cfg.nodes();
        let mut out = dx.clone();
        out.rows_mut(0, n).neg_mut();
        if let Some(c) = &pt.couplings {
            let [m11, m12, m22] = &c.m;
            for j in 0..dx.ncols() {
                let col = dx.column(j);
                let (du, dv) = col.as_slice().split_at(n);
                let a = m11.mul_vec(du);
                let b = m12.mul_vec(dv);
                let mut ru: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                c.hp.solve_in_place(&mut ru);
                let a = m12.mul_vec(du);
                let b = m22.mul_vec(dv);
                let mut rv: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                c.hq.solve_in_place(&mut rv);
                let mut oc = out.column_mut(j);
                for i in 0..n {
                    oc[i] += ru[i];
                    oc[n + i] += rv[i];
                }
            }
        }
        if let Some(p) = &self.perturbation {
            out += p.jacobian_apply(&pt.x, dx);
        }
        out
    }

    /// `dW(x) · dx` for a block of tangent vectors.
    pub fn apply_jacobian(&self, pt: &FieldPoint, dx: &DMatrix<f64>) -> DMatrix<f64> {
        let lin = |local: &LocalLinearField| -> DMatrix<f64> {
            let mut out = -dx.clone();
            if local.unstable.ncols() > 0 {
                out += &local.unstable * (&local.unstable_coords * dx) * 2.0;
            }
            out
        };
        match pt.patch {
            Some((k, chi)) if chi == 1.0 => lin(&self.patches[k].local),
            Some((k, chi)) => {
                let local = &self.patches[k].local;
                let mut out = lin(local) * chi + self.far_jacobian(pt, dx) * (1.0 - chi);
                if let (Some(g), Some(diff)) = (&pt.grad_chi, &pt.blend_diff) {
                    out += diff * (g.transpose() * dx);
                }
                out
            }
            None => self.far_jacobian(pt, dx),
        }
    }
}

/// `V(s)` as a flat vector.
pub fn eval_v(cfg: &FunctionalConfig, x: &DVector<f64>) -> Result<DVector<f64>> {
    FieldSpec::plain(cfg).eval_v(x)
}

/// Builds `W` from certified critical points and an optional perturbation.
///
/// `centers` pairs catalogue ids with their local certificates. With a
/// perturbation, its scale is calibrated so that `|df[C]|` never exceeds half
/// of `|df[W]|` on calibration samples outside the half radii.
pub fn assemble_w(cfg: &FunctionalConfig, centers: Vec<Patch>, perturbation: Option<Perturbation>) -> Result<FieldSpec> {
    for (i, a) in centers.iter().enumerate() {
        cfg.check_flat(&a.local.center)?;
        for b in &centers[i + 1..] {
            // B ≥ S₀, so B-balls sit inside S₀-balls of the same radius
            let d = cfg.origin_norm(&(&a.local.center - &b.local.center));
            if d <= a.local.radius + b.local.radius {
                return Err(Error::Config(format!(
                    "patches {} and {} overlap: distance {d:e}, radii {:e} + {:e}",
                    a.id, b.id, a.local.radius, b.local.radius
                )));
            }
        }
    }
    let mut field = FieldSpec {
        cfg: cfg.clone(),
        patches: centers,
        perturbation: None,
    };
    if let Some(mut c) = perturbation {
        c.scale = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0xC0FF_EE00);
        let samples = calibration_samples(&field, 400, &mut rng);
        let mut ratio = f64::INFINITY;
        for x in &samples {
            let chi = field
                .locate(x)
                .map(|(k, d)| blend_weight(d, field.patches[k].local.radius).0)
                .unwrap_or(0.0);
            if chi >= 1.0 {
                continue;
            }
            let df = cfg.df(x);
            let descent = df.dot(&field.eval(x)?).abs();
            let push = (1.0 - chi) * df.dot(&c.raw(x)).abs();
            if push > 0.0 {
                ratio = ratio.min(descent / push);
            }
        }
        c.scale = if ratio.is_finite() { 0.5 * c.amplitude * ratio } else { c.amplitude };
        field.perturbation = Some(c);
    }
    Ok(field)
}

/// States around patches and across scales, excluding patch half radii.
pub fn calibration_samples(field: &FieldSpec, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let cfg = field.cfg();
    let modes = low_modes(cfg, 4);
    let dim = cfg.dim();
    let mut out = Vec::with_capacity(count);
    let mut guard = 0;
    while out.len() < count && guard < 50 * count {
        guard += 1;
        let k = out.len();
        let mut dir = DVector::zeros(dim);
        if k % 3 == 0 {
            for i in 0..dim {
                dir[i] = gaussian(rng);
            }
            dir /= cfg.origin_norm(&dir);
            // rough fields have large gradients; keep them modest
            dir *= 0.2;
        } else {
            for m in &modes {
                dir += m * gaussian(rng);
            }
            dir /= cfg.origin_norm(&dir);
        }
        let x = if !field.patches.is_empty() && k % 2 == 0 {
            let p = &field.patches[(k / 2) % field.patches.len()].local;
            let nd = p.gram.norm(&dir);
            &p.center + dir * (p.radius * rng.random_range(0.5..4.0) / nd)
        } else {
            dir * 10f64.powf(rng.random_range(-2.0..1.5))
        };
        let inside = field.locate(&x).map(|(j, d)| d <= 0.5 * field.patches[j].local.radius).unwrap_or(false);
        if !inside {
            out.push(x);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest `df[W] / (‖df‖_* ‖W‖_{S₀})` seen; negative means strict descent.
    pub worst_cosine: f64,
}

/// Samples `df[W] < 0` outside the patch half radii.
pub fn lyapunov_report(field: &FieldSpec, n_samples: usize, seed: u64) -> Result<LyapunovReport> {
    let cfg = field.cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = calibration_samples(field, n_samples, &mut rng);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for x in &samples {
        let df = cfg.df(x);
        let w = field.eval(x)?;
        let d = df.dot(&w);
        if !(d < 0.0) {
            violations += 1;
        }
        let scale = cfg.dual_norm(&df) * cfg.origin_norm(&w);
        if scale > 0.0 {
            worst = worst.max(d / scale);
        }
    }
    Ok(LyapunovReport {
        samples: samples.len(),
        violations,
        worst_cosine: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Stop when `‖∇u‖_{2p} + ‖∇v‖_{2q}` exceeds this.
    pub escape_radius: f64,
    /// Distance to a patch center that counts as arrival even for
    /// trajectories that start inside the half radius.
    pub converge_radius: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-8,
            h0: 1e-2,
            h_min: 1e-12,
            h_max: 1.0,
            max_steps: 200_000,
            escape_radius: 1e4,
            converge_radius: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Converged { id: usize },
    MaxTime,
    Escaped,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub f_values: Vec<f64>,
    pub field_norms: Vec<f64>,
    pub terminal: Terminal,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Duration of the integration.
    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Largest increase of f between consecutive records.
    pub fn max_f_increase(&self) -> f64 {
        self.f_values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Adaptive Bogacki–Shampine 3(2) integration of `ẋ = W(x)`.
pub fn integrate(field: &FieldSpec, s0: &DVector<f64>, t_max: f64, ctrl: &StepControl) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::Domain(format!("t_max must be positive, got {t_max}")));
    }
    let cfg = field.cfg();
    cfg.check_flat(s0)?;
    let mut outside: Vec<bool> = field
        .patches
        .iter()
        .map(|p| p.local.distance(s0) > 0.5 * p.local.radius)
        .collect();
    let arrived = |x: &DVector<f64>, outside: &mut [bool]| -> Option<usize> {
        let mut hit = None;
        for (k, p) in field.patches.iter().enumerate() {
            let d = p.local.distance(x);
            if d > 0.5 * p.local.radius {
                outside[k] = true;
            } else if outside[k] || d <= ctrl.converge_radius {
                hit = Some(p.id);
            }
        }
        hit
    };
    let mut t = 0.0;
    let mut x = s0.clone();
    let mut k1 = field.eval(&x)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        f_values: vec![cfg.f(&x)],
        field_norms: vec![cfg.origin_norm(&k1)],
        terminal: Terminal::MaxTime,
    };
    if let Some(id) = arrived(&x, &mut outside) {
        traj.terminal = Terminal::Converged { id };
        return Ok(traj);
    }
    let mut h = ctrl.h0.min(t_max);
    for _ in 0..ctrl.max_steps {
        if t >= t_max {
            return Ok(traj);
        }
        h = h.min(t_max - t).min(ctrl.h_max);
        let k2 = field.eval(&(&x + &k1 * (0.5 * h)))?;
        let k3 = field.eval(&(&x + &k2 * (0.75 * h)))?;
        let x1 = &x + (&k1 * (2.0 / 9.0) + &k2 * (1.0 / 3.0) + &k3 * (4.0 / 9.0)) * h;
        let k4 = field.eval(&x1)?;
        let err = (&k1 * (-5.0 / 72.0) + &k2 * (1.0 / 12.0) + &k3 * (1.0 / 9.0) + &k4 * (-1.0 / 8.0)) * h;
        let mut acc = 0.0;
        for i in 0..x.len() {
            let sc = ctrl.atol + ctrl.rtol * x[i].abs().max(x1[i].abs());
            acc += (err[i] / sc).powi(2);
        }
        let e = (acc / x.len() as f64).sqrt();
        if e <= 1.0 {
            t += h;
            x = x1;
            k1 = k4;
            traj.times.push(t);
            traj.f_values.push(cfg.f(&x));
            traj.field_norms.push(cfg.origin_norm(&k1));
            traj.states.push(x.clone());
            if let Some(id) = arrived(&x, &mut outside) {
                traj.terminal = Terminal::Converged { id };
                return Ok(traj);
            }
            if cfg.x_norm(&x) > ctrl.escape_radius {
                traj.terminal = Terminal::Escaped;
                return Ok(traj);
            }
        }
        let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
        h *= factor;
        if h < ctrl.h_min {
            return Err(Error::Stiffness {
                t,
                h,
                field_norm: cfg.origin_norm(&k1),
            });
        }
    }
    Err(Error::Convergence {
        what: "flow integration",
        iterations: ctrl.max_steps,
        residual: t,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsReport {
    /// Exponents on `‖∇u‖_{2p}` and `‖∇v‖_{2q}` in the boundedness estimate.
    pub exponents: (f64, f64),
    pub fitted_constant: f64,
    /// Radius in `‖∇u‖_{2p} + ‖∇v‖_{2q}` containing every Palais–Smale sequence.
    pub radius: f64,
    /// Low-gradient states found by Newton iterations and their largest norm.
    pub low_gradient_states: usize,
    pub low_gradient_max_norm: f64,
    pub critical_max_norm: f64,
    pub critical_inside: bool,
    /// `sup ‖W(s)‖ / (1 + ‖s‖)` over the sampled states.
    pub growth_ratio: f64,
    pub growth_max_state_norm: f64,
    /// Fitted log-log slope of the compact part, `None` when it vanishes.
    pub compact_exponent: Option<f64>,
    /// `max{α₁, α₂} / (2 min{p, q} − 1)`.
    pub compact_exponent_bound: f64,
}

/// Palais–Smale diagnostics for `cfg` and the field `W`.
pub fn ps_diagnostics(field: &FieldSpec, critical: &[DVector<f64>], seed: u64) -> Result<PsReport> {
    let cfg = field.cfg();
    let (p, q) = (cfg.p(), cfg.q());
    let g = cfg.nonlinearity();
    let (a1, a2) = (g.alpha1(), g.alpha2());
    let exponents = match cfg.verdict().regime {
        Regime::Refined { epsilon } => {
            let s2 = 2.0 * p - epsilon;
            let s1 = 2.0 * q - epsilon;
            let r1 = s1 / (s1 - 1.0);
            let r2 = s2 / (s2 - 1.0);
            (s2.max(a1 + 1.0).max(r1 * a1), s1.max(a2 + 1.0).max(r2 * a2))
        }
        _ => (2.0f64.max(a1 + 1.0).max(2.0 * a1), 2.0f64.max(a2 + 1.0).max(2.0 * a2)),
    };
    let mesh = cfg.mesh();
    let xu = |x: &DVector<f64>| mesh.norm_of(cfg.split(x).0, NormKind::SobolevGrad(2.0 * p)).unwrap_or(0.0);
    let xv = |x: &DVector<f64>| mesh.norm_of(cfg.split(x).1, NormKind::SobolevGrad(2.0 * q)).unwrap_or(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = low_modes(cfg, 4);
    let random_state = |rng: &mut ChaCha8Rng, norm: f64| -> DVector<f64> {
        let mut d = DVector::zeros(cfg.dim());
        for m in &modes {
            d += m * gaussian(rng);
        }
        let nx = cfg.x_norm(&d);
        d * (norm / nx)
    };
    let mut samples: Vec<DVector<f64>> = (0..300)
        .map(|_| {
            let norm = 10f64.powf(rng.random_range(-2.0..3.0));
            random_state(&mut rng, norm)
        })
        .collect();
    samples.extend(critical.iter().cloned());
    // sup of the coupling pairings relative to the right-hand side
    let mut constant = 0.0f64;
    for x in &samples {
        let (u, v) = cfg.split(x);
        let (ku, kv) = cfg.loads(u, v);
        let lhs = dot(ku.as_slice(), u).abs() + dot(kv.as_slice(), v).abs();
        let rhs = 1.0 + xu(x).powf(exponents.0) + xv(x).powf(exponents.1);
        constant = constant.max(lhs / rhs);
    }
    // t^{2p} − C t^{e} is bounded below; the PS bound forces each component below
    // the largest root of t^{2p} − C t^{e} = C + (slack of the other component)
    let slack = |pow: f64, e: f64| -> f64 {
        // −min_t (t^{pow} − C t^{e}) for e < pow
        if constant == 0.0 {
            return 0.0;
        }
        let tstar = (constant * e / pow).powf(1.0 / (pow - e));
        -(tstar.powf(pow) - constant * tstar.powf(e))
    };
    let root = |pow: f64, e: f64, level: f64| -> f64 {
        if constant == 0.0 && level == 0.0 {
            return 0.0;
        }
        let phi = |t: f64| t.powf(pow) - constant * t.powf(e) - level;
        let mut hi = 1.0;
        while phi(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let su = slack(2.0 * p, exponents.0);
    let sv = slack(2.0 * q, exponents.1);
    let radius = root(2.0 * p, exponents.0, constant + sv) + root(2.0 * q, exponents.1, constant + su);

    // low-gradient sequences: Newton iterates on df from random seeds
    let mut low = 0;
    let mut low_max = 0.0f64;
    for _ in 0..12 {
        let norm = 10f64.powf(rng.random_range(-1.5..0.5));
        let mut x = random_state(&mut rng, norm);
        for _ in 0..25 {
            let r = cfg.df(&x);
            let res = cfg.dual_norm(&r);
            if res <= 1e-3 {
                low += 1;
                low_max = low_max.max(cfg.x_norm(&x));
            }
            if res <= 1e-11 {
                break;
            }
            let Some(step) = cfg.d2f_matrix(&x).lu().solve(&(-r)) else { break };
            x += step;
        }
    }
    let critical_max_norm = critical.iter().map(|c| cfg.x_norm(c)).fold(0.0, f64::max);

    // linear growth of W and the sublinear growth of its compact part
    let mut growth = 0.0f64;
    let mut growth_max = 0.0f64;
    for k in 0..60 {
        let norm = 10f64.powf(-1.0 + 4.0 * k as f64 / 59.0);
        let x = random_state(&mut rng, norm);
        let w = field.eval(&x)?;
        growth = growth.max(cfg.x_norm(&w) / (1.0 + cfg.x_norm(&x)));
        growth_max = growth_max.max(cfg.x_norm(&x));
    }
    let mut compact_exponent: Option<f64> = None;
    for _ in 0..4 {
        let dir = random_state(&mut rng, 1.0);
        let mut pts = Vec::new();
        for k in 0..9 {
            let t = 10f64.powf(1.0 + 2.0 * k as f64 / 8.0);
            let c = field.v_compact(&(&dir * t))?;
            let nc = cfg.x_norm(&c);
            if nc > 0.0 {
                pts.push((t.ln(), nc.ln()));
            }
        }
        if pts.len() >= 3 {
            let slope = regression_slope(&pts);
            compact_exponent = Some(compact_exponent.map_or(slope, |s: f64| s.max(slope)));
        }
    }
    Ok(PsReport {
        exponents,
        fitted_constant: constant,
        radius,
        low_gradient_states: low,
        low_gradient_max_norm: low_max,
        critical_max_norm,
        critical_inside: critical_max_norm <= radius,
        growth_ratio: growth,
        growth_max_state_norm: growth_max,
        compact_exponent,
        compact_exponent_bound: a1.max(a2) / (2.0 * p.min(q) - 1.0),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::nonlinearity::{Family, NonlinearitySpec};
    use crate::spectral::{default_r_grid, local_field, split_at, TOL_DEG};
    use alloc::sync::Arc;

    fn cfg(n: usize, family: Family) -> FunctionalConfig {
        let mesh = Arc::new(Mesh::new(1, &[1.0], n, 3).unwrap());
        FunctionalConfig::new(mesh, 3.0, 3.0, NonlinearitySpec::with_default_exponents(family).unwrap()).unwrap()
    }

    fn origin_patch(c: &FunctionalConfig, r_max: f64) -> Patch {
        let split = split_at(c, &DVector::zeros(c.dim()), TOL_DEG).unwrap();
        Patch {
            id: 0,
            local: local_field(c, &split, &default_r_grid(r_max), 1).unwrap(),
        }
    }

    #[test]
    fn blend_weight_is_c2_smoothstep() {
        assert_eq!(blend_weight(0.2, 1.0), (1.0, 0.0));
        assert_eq!(blend_weight(1.0, 1.0), (0.0, 0.0));
        let (mid, _) = blend_weight(0.75, 1.0);
        assert!((mid - 0.5).abs() < 1e-15);
        // derivative matches finite differences
        let h = 1e-6;
        for d in [0.55, 0.7, 0.9] {
            let fd = (blend_weight(d + h, 1.0).0 - blend_weight(d - h, 1.0).0) / (2.0 * h);
            assert!((fd - blend_weight(d, 1.0).1).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_coupling_field_is_base() {
        let c = cfg(12, Family::Zero);
        let x = DVector::from_fn(c.dim(), |i, _| (i as f64 * 0.3).sin());
        let v = eval_v(&c, &x).unwrap();
        let n = c.nodes();
        for i in 0..n {
            assert_eq!(v[i], -x[i]);
            assert_eq!(v[n + i], x[n + i]);
        }
    }

    #[test]
    fn field_is_linear_inside_half_radius() {
        let c = cfg(12, Family::Zero);
        let w = assemble_w(&c, vec![origin_patch(&c, 0.5)], None).unwrap();
        let r = w.patches[0].local.radius;
        let mut x = DVector::from_fn(c.dim(), |i, _| ((i * i) as f64).cos());
        x *= 0.4 * r / c.origin_norm(&x);
        let lx = w.patches[0].local.eval(&x);
        assert_eq!(w.eval(&x).unwrap(), lx);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = cfg(16, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let pert = Perturbation::new(&c, 5, 1.0).unwrap();
        let w = assemble_w(&c, vec![origin_patch(&c, 0.1)], Some(pert)).unwrap();
        let r = w.patches[0].local.radius;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scale in [0.3 * r, 0.75 * r, 3.0 * r] {
            let mut x = DVector::from_fn(c.dim(), |_, _| gaussian(&mut rng));
            x *= scale / w.patches[0].local.gram.norm(&x);
            let dx = DMatrix::from_fn(c.dim(), 2, |_, _| gaussian(&mut rng)) * 1e-2;
            let pt = w.linearize(&x).unwrap();
            assert_eq!(pt.value, w.eval(&x).unwrap());
            let jd = w.apply_jacobian(&pt, &dx);
            let eps = 1e-5;
            for j in 0..2 {
                let col = dx.column(j).into_owned();
                let fd = (w.eval(&(&x + &col * eps)).unwrap() - w.eval(&(&x - &col * eps)).unwrap()) / (2.0 * eps);
                let err = (&fd - jd.column(j)).amax();
                assert!(err < 1e-6 * (1.0 + fd.amax()), "scale {scale}: {err}");
            }
        }
    }

    #[test]
    fn decomposition_is_base_plus_compact() {
        let c = cfg(16, Family::Bilinear { lambda: 2.0 });
        let w = FieldSpec::plain(&c);
        let x = DVector::from_fn(c.dim(), |i, _| (i as f64 * 0.17).sin());
        let parts = w.eval_parts(&x).unwrap();
        let n = c.nodes();
        for i in 0..n {
            assert_eq!(parts.base[i], -x[i]);
            assert_eq!(parts.base[n + i], x[n + i]);
        }
        assert_eq!(parts.total, &parts.base + &parts.compact);
    }

    #[test]
    fn linear_flow_decays_exponentially() {
        let c = cfg(10, Family::Zero);
        let w = assemble_w(&c, vec![origin_patch(&c, 0.5)], None).unwrap();
        let n = c.nodes();
        let mut x0 = DVector::zeros(c.dim());
        for i in 0..n {
            x0[i] = 0.8 * ((i + 1) as f64 * PI / 11.0).sin();
        }
        let traj = integrate(&w, &x0, 50.0, &StepControl::default()).unwrap();
        assert_eq!(traj.terminal, Terminal::Converged { id: 0 });
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let expect = &x0 * (-t).exp();
            assert!((s - expect).amax() < 1e-6, "t = {t}");
        }
        assert!(traj.max_f_increase() <= 0.0);
    }

    #[test]
    fn starting_at_a_center_is_stationary() {
        let c = cfg(10, Family::Zero);
        let w = assemble_w(&c, vec![origin_patch(&c, 0.5)], None).unwrap();
        let traj = integrate(&w, &DVector::zeros(c.dim()), 5.0, &StepControl::default()).unwrap();
        assert_eq!(traj.terminal, Terminal::Converged { id: 0 });
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.duration(), 0.0);
    }

    #[test]
    fn overlapping_patches_are_rejected() {
        let c = cfg(10, Family::Zero);
        let a = origin_patch(&c, 0.5);
        let mut b = a.clone();
        b.id = 1;
        assert!(matches!(assemble_w(&c, vec![a, b], None), Err(Error::Config(_))));
    }

    #[test]
    fn plain_field_descends_and_vanishes_at_critical_points() {
        let c = cfg(16, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let w = FieldSpec::plain(&c);
        let report = lyapunov_report(&w, 200, 9).unwrap();
        assert_eq!(report.samples, 200);
        assert_eq!(report.violations, 0, "{report:?}");
        assert!(w.eval(&DVector::zeros(c.dim())).unwrap().amax() == 0.0);
    }

    #[test]
    fn calibrated_perturbation_keeps_descent() {
        let c = cfg(16, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let pert = Perturbation::new(&c, 11, 1.0).unwrap();
        let w = assemble_w(&c, vec![origin_patch(&c, 0.1)], Some(pert)).unwrap();
        assert!(w.perturbation.as_ref().unwrap().scale > 0.0);
        let report = lyapunov_report(&w, 500, 12).unwrap();
        assert_eq!(report.violations, 0, "{report:?}");
    }

    #[test]
    fn flow_decreases_f() {
        let c = cfg(16, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let w = FieldSpec::plain(&c);
        let modes = low_modes(&c, 2);
        let x0 = &modes[0] * 0.3 + &modes[2] * 0.1;
        let traj = integrate(&w, &x0, 20.0, &StepControl::default()).unwrap();
        assert_eq!(traj.terminal, Terminal::MaxTime);
        assert!(traj.max_f_increase() <= 1e-12);
        assert!(traj.field_norms.last().unwrap() < &(1e-3 * traj.field_norms[0]), "{:?}", traj.field_norms.last());
    }

    #[test]
    fn ps_diagnostics_bound_low_gradient_states() {
        let c = cfg(16, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let w = FieldSpec::plain(&c);
        let report = ps_diagnostics(&w, &[DVector::zeros(c.dim())], 4).unwrap();
        assert!(report.radius.is_finite() && report.radius > 0.0);
        assert!(report.low_gradient_max_norm <= report.radius, "{report:?}");
        assert!(report.growth_ratio.is_finite());
        let slope = report.compact_exponent.unwrap();
        assert!(slope <= report.compact_exponent_bound + 0.05, "{report:?}");
    }

    #[test]
    fn zero_coupling_has_no_compact_exponent() {
        let c = cfg(10, Family::Zero);
        let report = ps_diagnostics(&FieldSpec::plain(&c), &[], 1).unwrap();
        assert_eq!(report.compact_exponent, None);
        assert_eq!(report.radius, 0.0);
    }

    #[test]
    fn perturbation_amplitude_is_bounded() {
        let c = cfg(10, Family::Zero);
        assert!(Perturbation::new(&c, 1, 1.5).is_err());
        assert!(Perturbation::new(&c, 1, -0.1).is_err());
    }
}
