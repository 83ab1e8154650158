//! Multi-start Newton search, certification and continuation of critical points.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::flow::{FieldSpec, Patch};
use crate::functional::FunctionalConfig;
use crate::mesh::Mesh;
use crate::nonlinearity::NonlinearitySpec;
use crate::spectral::{default_r_grid, local_field, split_at, HessianSplit, LocalLinearField, TOL_DEG};

/// Where a Newton run started.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Origin,
    /// `amplitude · mode` placed in the u (`component = 0`) or v block.
    Mode { component: usize, mode: usize, amplitude: f64 },
    /// Endpoint of the minimax flow from a low-mode state.
    MinimaxFlow,
    /// Reflection `u → −u` or `v → −v` of an earlier point.
    Mirror { of: usize, component: usize },
    User { index: usize },
    Continuation { from: usize },
}

/// Index data kept from the Hessian split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub m_minus: usize,
    pub m_zero: usize,
    pub m_plus: usize,
    pub n_v: usize,
    pub index: i64,
    pub gap: f64,
    pub tol_deg: f64,
    /// Ascending pencil eigenvalues.
    pub eigenvalues: Vec<f64>,
}

impl SplitSummary {
    pub fn of(split: &HessianSplit) -> Self {
        Self {
            m_minus: split.m_minus,
            m_zero: split.m_zero,
            m_plus: split.m_plus,
            n_v: split.n_v,
            index: split.relative_index(),
            gap: split.gap,
            tol_deg: split.tol_deg,
            eigenvalues: split.eigenvalues.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub id: usize,
    pub state: DVector<f64>,
    pub f: f64,
    pub residual: f64,
    pub split: SplitSummary,
    /// Certified local linear field; `None` when the point is degenerate.
    pub local: Option<LocalLinearField>,
    /// Reason the certificate was refused.
    pub certificate_error: Option<String>,
    pub provenance: Provenance,
}

impl CriticalPoint {
    pub fn index(&self) -> i64 {
        self.split.index
    }

    pub fn is_certified(&self) -> bool {
        self.local.is_some()
    }

    pub fn radius(&self) -> f64 {
        self.local.as_ref().map_or(0.0, |l| l.radius)
    }

    pub fn margin(&self) -> f64 {
        self.local.as_ref().map_or(0.0, |l| l.margin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    /// Newton stops once the dual norm of `df` drops below this.
    pub tol_crit: f64,
    pub max_newton: usize,
    /// Relative width of the degenerate eigenvalue band.
    pub tol_deg: f64,
    /// Distance in the origin norm below which two points coincide.
    pub dedup_tol: f64,
    /// Seed amplitudes along each active mode, used with both signs.
    pub amplitudes: Vec<f64>,
    /// Seed budget; `None` means `2 + 8·(active modes)`, capped at 200.
    pub budget: Option<usize>,
    pub minimax_seed: bool,
    /// Seeds the certificate sampling.
    pub seed: u64,
}

impl Default for Strategy {
    fn default() -> Self {
        Self {
            tol_crit: 1e-10,
            max_newton: 100,
            tol_deg: TOL_DEG,
            dedup_tol: 1e-6,
            amplitudes: alloc::vec![0.2, 1.0],
            budget: None,
            minimax_seed: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    pub provenance: Provenance,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Catalogue {
    pub points: Vec<CriticalPoint>,
    pub budget: usize,
    pub seeds_tried: usize,
    pub active_modes: usize,
    pub failures: Vec<SeedFailure>,
}

impl Catalogue {
    /// Every point certified nondegenerate.
    pub fn is_morse(&self) -> bool {
        self.points.iter().all(CriticalPoint::is_certified)
    }

    pub fn get(&self, id: usize) -> Option<&CriticalPoint> {
        self.points.iter().find(|p| p.id == id)
    }

    /// Patches for the gradient-like field.
    pub fn patches(&self) -> Result<Vec<Patch>> {
        self.points
            .iter()
            .map(|p| match &p.local {
                Some(local) => Ok(Patch { id: p.id, local: local.clone() }),
                None => Err(Error::Certificate(format!("critical point {} is not certified", p.id))),
            })
            .collect()
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.points.iter().map(|p| p.state.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub state: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton on `df = 0` with a backtracking line search on the dual residual.
pub fn newton(cfg: &FunctionalConfig, x0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<NewtonResult> {
    cfg.check_flat(x0)?;
    let mut x = x0.clone();
    let mut g = cfg.df(&x);
    let mut res = cfg.dual_norm(&g);
    for it in 0..max_iter {
        if res <= tol {
            return Ok(NewtonResult { state: x, residual: res, iterations: it });
        }
        let step = cfg
            .d2f_matrix(&x)
            .lu()
            .solve(&(-&g))
            .ok_or_else(|| Error::Numerical(format!("singular second differential at Newton iteration {it}")))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x + &step * t;
            let gt = cfg.df(&trial);
            let rt = cfg.dual_norm(&gt);
            if rt.is_finite() && rt < (1.0 - 1e-4 * t) * res {
                x = trial;
                g = gt;
                res = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // residual floor reached: accept the full step only if it is tiny
            if res <= 1e3 * tol {
                return Ok(NewtonResult { state: x, residual: res, iterations: it });
            }
            return Err(Error::Convergence { what: "Newton line search", iterations: it, residual: res });
        }
    }
    if res <= tol {
        return Ok(NewtonResult { state: x, residual: res, iterations: max_iter });
    }
    Err(Error::Convergence { what: "Newton", iterations: max_iter, residual: res })
}

/// Nodal Dirichlet modes of the mesh with their discrete Laplacian eigenvalues, ascending.
pub fn dirichlet_modes(mesh: &alloc::sync::Arc<Mesh>, count: usize) -> Vec<(f64, DVector<f64>)> {
    use core::f64::consts::PI;
    let n = mesh.n_per_axis();
    let ext = mesh.extents().to_vec();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    let kmax = (n - 1).min(count.max(1));
    if mesh.dim() == 1 {
        for k in 1..=kmax {
            pairs.push((Mesh::discrete_dirichlet_eigenvalue_1d(n, ext[0], k), k, 1));
        }
    } else {
        for k in 1..=kmax {
            for l in 1..=kmax {
                let lam = Mesh::discrete_dirichlet_eigenvalue_1d(n, ext[0], k) + Mesh::discrete_dirichlet_eigenvalue_1d(n, ext[1], l);
                pairs.push((lam, k, l));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.truncate(count);
    let dim = mesh.dim();
    pairs
        .into_iter()
        .map(|(lam, k, l)| {
            let g = mesh.interpolate(|x| {
                let y = if dim == 2 { (l as f64 * PI * x[1] / ext[1]).sin() } else { 1.0 };
                (k as f64 * PI * x[0] / ext[0]).sin() * y
            });
            (lam, g.values)
        })
        .collect()
}

/// `1 + #{discrete Dirichlet eigenvalues below the curvature of G at the origin}`.
pub fn active_modes(cfg: &FunctionalConfig) -> usize {
    let curv = cfg.nonlinearity().origin_curvature();
    let modes = dirichlet_modes(cfg.mesh(), 64);
    1 + modes.iter().filter(|(lam, _)| *lam < curv).count()
}

/// Default seed list: origin, a minimax-flow endpoint, then `±a·mode` in each block.
pub fn default_seeds(cfg: &FunctionalConfig, strategy: &Strategy) -> Vec<(Provenance, DVector<f64>)> {
    let dim = cfg.dim();
    let n = cfg.nodes();
    let active = active_modes(cfg);
    let modes = dirichlet_modes(cfg.mesh(), active);
    let mut seeds = alloc::vec![(Provenance::Origin, DVector::zeros(dim))];
    if strategy.minimax_seed && !cfg.nonlinearity().is_zero() {
        let mut x0 = DVector::zeros(dim);
        for (k, (_, m)) in modes.iter().enumerate() {
            let w = 0.5 / (k + 1) as f64;
            x0.rows_mut(0, n).axpy(w, m, 1.0);
            x0.rows_mut(n, n).axpy(w, m, 1.0);
        }
        if let Ok(end) = minimax_endpoint(cfg, &x0, 0.05, 400) {
            seeds.push((Provenance::MinimaxFlow, end));
        }
    }
    for (k, (_, m)) in modes.iter().enumerate() {
        for component in 0..2 {
            for &a in &strategy.amplitudes {
                for sign in [1.0, -1.0] {
                    let mut x = DVector::zeros(dim);
                    x.rows_mut(component * n, n).axpy(sign * a, m, 0.0);
                    seeds.push((Provenance::Mode { component, mode: k + 1, amplitude: sign * a }, x));
                }
            }
        }
    }
    seeds
}

/// RK4 along `(V_u, −V_v)`, which descends in u and ascends in v.
fn minimax_endpoint(cfg: &FunctionalConfig, x0: &DVector<f64>, h: f64, steps: usize) -> Result<DVector<f64>> {
    let field = FieldSpec::plain(cfg);
    let n = cfg.nodes();
    let eval = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let mut v = field.eval_v(x)?;
        v.rows_mut(n, n).neg_mut();
        Ok(v)
    };
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = eval(&x)?;
        let k2 = eval(&(&x + &k1 * (0.5 * h)))?;
        let k3 = eval(&(&x + &k2 * (0.5 * h)))?;
        let k4 = eval(&(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !x.iter().all(|c| c.is_finite()) {
            return Err(Error::Numerical("minimax flow diverged".into()));
        }
    }
    Ok(x)
}

/// Runs Newton from the default seeds (up to the budget) and from `extra`,
/// deduplicates, closes the set under the symmetries of `G`, and certifies.
pub fn find_critical_points(cfg: &FunctionalConfig, extra: &[DVector<f64>], strategy: &Strategy) -> Result<Catalogue> {
    let active = active_modes(cfg);
    let budget = strategy.budget.unwrap_or((2 + 8 * active).min(200));
    let mut seeds = default_seeds(cfg, strategy);
    seeds.truncate(budget);
    for (index, x) in extra.iter().enumerate() {
        cfg.check_flat(x)?;
        seeds.push((Provenance::User { index }, x.clone()));
    }
    let seeds_tried = seeds.len();
    let mut found: Vec<(Provenance, NewtonResult)> = Vec::new();
    let mut failures = Vec::new();
    let absorb = |prov: Provenance, x: &DVector<f64>, found: &mut Vec<(Provenance, NewtonResult)>, failures: &mut Vec<SeedFailure>| {
        match newton(cfg, x, strategy.tol_crit, strategy.max_newton) {
            Ok(r) => {
                if !found.iter().any(|(_, q)| cfg.origin_norm(&(&q.state - &r.state)) <= strategy.dedup_tol) {
                    found.push((prov, r));
                }
            }
            Err(e) => failures.push(SeedFailure { provenance: prov, message: format!("{e}") }),
        }
    };
    for (prov, x) in &seeds {
        absorb(prov.clone(), x, &mut found, &mut failures);
    }
    // reflections of G's symmetries map critical points to critical points
    let g = cfg.nonlinearity();
    let n = cfg.nodes();
    let mut k = 0;
    while k < found.len() {
        for component in 0..2 {
            let even = if component == 0 { g.is_even_in_u() } else { g.is_even_in_v() };
            if !even {
                continue;
            }
            let mut m = found[k].1.state.clone();
            m.rows_mut(component * n, n).neg_mut();
            if !found.iter().any(|(_, q)| cfg.origin_norm(&(&q.state - &m)) <= strategy.dedup_tol) {
                absorb(Provenance::Mirror { of: k, component }, &m, &mut found, &mut failures);
            }
        }
        k += 1;
    }
    if found.is_empty() {
        return Err(Error::Consistency(format!("no seed converged ({} failures)", failures.len())));
    }
    // deterministic order: by f, then by u-mass sign
    found.sort_by(|a, b| {
        let fa = cfg.f(&a.1.state);
        let fb = cfg.f(&b.1.state);
        fb.total_cmp(&fa).then_with(|| b.1.state.sum().total_cmp(&a.1.state.sum()))
    });
    let states: Vec<DVector<f64>> = found.iter().map(|(_, r)| r.state.clone()).collect();
    let mut points = Vec::with_capacity(found.len());
    for (id, (prov, r)) in found.into_iter().enumerate() {
        points.push(certify(cfg, id, r.state, r.residual, prov, &states, strategy)?);
    }
    // mirror provenance refers to the id of the reflected partner
    for k in 0..points.len() {
        if let Provenance::Mirror { component, .. } = points[k].provenance {
            let mut m = points[k].state.clone();
            m.rows_mut(component * n, n).neg_mut();
            if let Some(j) = points.iter().position(|q| cfg.origin_norm(&(&q.state - &m)) <= strategy.dedup_tol) {
                points[k].provenance = Provenance::Mirror { of: points[j].id, component };
            }
        }
    }
    Ok(Catalogue { points, budget, seeds_tried, active_modes: active, failures })
}

/// Splits the Hessian and fits a local Lyapunov certificate with radius below
/// 0.45 of the distance to the nearest other point.
pub fn certify(
    cfg: &FunctionalConfig,
    id: usize,
    state: DVector<f64>,
    residual: f64,
    provenance: Provenance,
    others: &[DVector<f64>],
    strategy: &Strategy,
) -> Result<CriticalPoint> {
    let split = split_at(cfg, &state, strategy.tol_deg)?;
    let nearest = others
        .iter()
        .map(|o| cfg.origin_norm(&(o - &state)))
        .filter(|d| *d > strategy.dedup_tol)
        .fold(f64::INFINITY, f64::min);
    let r_max = if nearest.is_finite() { (0.45 * nearest).min(1.0) } else { 1.0 };
    let (local, certificate_error) = if split.is_degenerate() {
        (None, Some(format!("{} eigenvalues within {:e} of zero", split.m_zero, split.tol_deg)))
    } else {
        match local_field(cfg, &split, &default_r_grid(r_max), strategy.seed ^ id as u64) {
            Ok(l) => (Some(l), None),
            Err(e) => (None, Some(format!("{e}"))),
        }
    };
    Ok(CriticalPoint {
        id,
        f: cfg.f(&state),
        residual,
        split: SplitSummary::of(&split),
        state,
        local,
        certificate_error,
        provenance,
    })
}

/// A critical point followed through the homotopy.
#[derive(Debug, Clone)]
pub struct Track {
    pub from: usize,
    /// Matching id in the target catalogue.
    pub to: usize,
    pub index: i64,
    pub path: Vec<(f64, DVector<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Correspondence {
    pub from: Catalogue,
    pub to: Catalogue,
    pub tracks: Vec<Track>,
}

/// Tracks every critical point of `cfg_from` along `G_t = (1 − t) G₀ + t G₁`.
///
/// A change of `m⁻` or a closing gap between two steps is located by bisection
/// and reported as [`Error::Bifurcation`].
pub fn continuation(cfg_from: &FunctionalConfig, cfg_to: &FunctionalConfig, steps: usize, strategy: &Strategy) -> Result<Correspondence> {
    if steps == 0 {
        return Err(Error::Config("continuation needs at least one step".into()));
    }
    if !cfg_from.mesh().compatible(cfg_to.mesh()) || cfg_from.p() != cfg_to.p() || cfg_from.q() != cfg_to.q() {
        return Err(Error::Config("continuation endpoints must share mesh, p and q".into()));
    }
    let g0 = cfg_from.nonlinearity().clone();
    let g1 = cfg_to.nonlinearity().clone();
    let at = |t: f64| -> Result<FunctionalConfig> { cfg_from.with_nonlinearity(NonlinearitySpec::blend(&g0, &g1, t)?) };
    let from = find_critical_points(cfg_from, &[], strategy)?;
    if !from.is_morse() {
        return Err(Error::Certificate("continuation start is not Morse".into()));
    }
    let mut tracks = Vec::new();
    for p in &from.points {
        let mut x = p.state.clone();
        let m_minus = p.split.m_minus;
        let mut t_prev = 0.0;
        let mut path = alloc::vec![(0.0, x.clone())];
        for k in 1..=steps {
            let t = k as f64 / steps as f64;
            let step = probe(&at(t)?, &x, strategy);
            match step {
                Some((y, m)) if m == m_minus => {
                    x = y;
                    path.push((t, x.clone()));
                    t_prev = t;
                }
                _ => {
                    // bisect for the first parameter where tracking breaks
                    let (mut lo, mut hi) = (t_prev, t);
                    let mut x_lo = x.clone();
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        match probe(&at(mid)?, &x_lo, strategy) {
                            Some((y, m)) if m == m_minus => {
                                lo = mid;
                                x_lo = y;
                            }
                            _ => hi = mid,
                        }
                    }
                    return Err(Error::Bifurcation { t: 0.5 * (lo + hi) });
                }
            }
        }
        tracks.push((p.id, p.split.index, path));
    }
    let to = find_critical_points(cfg_to, &tracks.iter().map(|t| t.2.last().unwrap().1.clone()).collect::<Vec<_>>(), strategy)?;
    if !to.is_morse() {
        return Err(Error::Certificate("continuation target is not Morse".into()));
    }
    let mut out = Vec::new();
    for (id, index, path) in tracks {
        let end = &path.last().unwrap().1;
        let to_id = to
            .points
            .iter()
            .find(|q| cfg_to.origin_norm(&(&q.state - end)) <= 1e3 * strategy.dedup_tol)
            .map(|q| q.id)
            .ok_or_else(|| Error::Consistency(format!("tracked point {id} has no match at the target")))?;
        out.push(Track { from: id, to: to_id, index, path });
    }
    Ok(Correspondence { from, to, tracks: out })
}

/// Newton from `x` and the number of negative pencil eigenvalues, `None` when
/// Newton fails or the split is degenerate.
fn probe(cfg: &FunctionalConfig, x: &DVector<f64>, strategy: &Strategy) -> Option<(DVector<f64>, usize)> {
    let r = newton(cfg, x, strategy.tol_crit, strategy.max_newton).ok()?;
    let split = split_at(cfg, &r.state, strategy.tol_deg).ok()?;
    if split.is_degenerate() {
        return None;
    }
    Some((r.state, split.m_minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::Family;
    use alloc::sync::Arc;

    fn cfg(n: usize, family: Family) -> FunctionalConfig {
        let mesh = Arc::new(Mesh::new(1, &[1.0], n, 3).unwrap());
        FunctionalConfig::new(mesh, 3.0, 3.0, NonlinearitySpec::with_default_exponents(family).unwrap()).unwrap()
    }

    #[test]
    fn zero_coupling_has_only_the_origin() {
        let c = cfg(32, Family::Zero);
        let cat = find_critical_points(&c, &[], &Strategy::default()).unwrap();
        assert_eq!(cat.points.len(), 1);
        assert_eq!(cat.points[0].index(), 0);
        assert!(cat.points[0].state.amax() < 1e-12);
        assert!(cat.is_morse());
    }

    #[test]
    fn quadratic_u_gains_a_symmetric_pair() {
        // the gradient weight stiffens with amplitude, so the unstable first
        // mode saturates at a nonzero minimizer ±u*
        let c = cfg(32, Family::QuadraticU { kappa: 15.0 });
        let cat = find_critical_points(&c, &[], &Strategy::default()).unwrap();
        let idx: Vec<i64> = cat.points.iter().map(|p| p.index()).collect();
        assert_eq!(idx, [1, 0, 0]);
        assert!(cat.points[0].state.amax() < 1e-12);
        assert!(cat.points[1].f < 0.0);
    }

    #[test]
    fn pitchfork_has_three_points() {
        let c = cfg(32, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let cat = find_critical_points(&c, &[], &Strategy::default()).unwrap();
        assert_eq!(cat.points.len(), 3);
        let idx: Vec<i64> = cat.points.iter().map(|p| p.index()).collect();
        assert_eq!(idx, [1, 0, 0]);
        assert!((cat.points[1].f - cat.points[2].f).abs() < 1e-12);
        assert!(cat.is_morse());
        let n = c.nodes();
        let mirrored = -cat.points[1].state.rows(0, n).into_owned();
        assert!((mirrored - cat.points[2].state.rows(0, n)).amax() < 1e-8);
        for p in &cat.points {
            assert!(p.residual <= 1e-10);
            // one extra Newton step keeps the point
            let again = newton(&c, &p.state, 1e-12, 3).unwrap();
            assert!(c.origin_norm(&(&again.state - &p.state)) < 1e-8);
        }
    }

    #[test]
    fn identity_continuation_is_identity() {
        let c = cfg(24, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let corr = continuation(&c, &c, 2, &Strategy::default()).unwrap();
        for t in &corr.tracks {
            assert_eq!(t.from, t.to);
        }
    }

    #[test]
    fn small_bilinear_continuation_keeps_index() {
        let c0 = cfg(24, Family::Zero);
        let c1 = cfg(24, Family::Bilinear { lambda: 0.1 });
        let corr = continuation(&c0, &c1, 4, &Strategy::default()).unwrap();
        assert_eq!(corr.tracks.len(), 1);
        assert_eq!(corr.to.points[corr.tracks[0].to].index(), 0);
    }

    #[test]
    fn pitchfork_continuation_detects_bifurcation() {
        let n = 24;
        let c0 = cfg(n, Family::PitchforkU { kappa: 5.0, gamma: 1.0 });
        let c1 = cfg(n, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        match continuation(&c0, &c1, 10, &Strategy::default()) {
            Err(Error::Bifurcation { t }) => {
                let kappa = 5.0 + 10.0 * t;
                let lam = Mesh::discrete_dirichlet_eigenvalue_1d(n, 1.0, 1);
                assert!((kappa - lam).abs() < 1e-3, "kappa {kappa} vs {lam}");
            }
            other => panic!("expected bifurcation, got {:?}", other.map(|c| c.tracks.len())),
        }
    }
}
