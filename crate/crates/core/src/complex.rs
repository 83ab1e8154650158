//! Connecting orbits, the mod-2 Morse complex and its homology.
//!
//! Orbits leave `x₋` from the sphere `x₋ + ρ E⁻ c`, `|c| = 1`, inside the
//! unstable space of its patch and are integrated with fixed-step RK4. A
//! probe converging into the half radius of `x₊` seeds a shooting Newton on
//! `c` that zeroes the unstable coordinates of the endpoint at `x₊`. The
//! derivative of the RK4 map doubles as the transfer map of the linearized
//! operator, whose kernel certifies transversality.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::critical::{find_critical_points, Catalogue, CriticalPoint, Strategy};
use crate::error::{Error, Result};
use crate::flow::{assemble_w, ps_diagnostics, FieldSpec, Perturbation, PsReport, Terminal};
use crate::fredholm::{condensed_index, range_basis, RankPolicy};
use crate::functional::FunctionalConfig;
use crate::gf2::Gf2Matrix;
use crate::spectral::LocalLinearField;

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitOptions {
    /// RK4 step.
    pub h: f64,
    /// Probe horizon.
    pub t_max: f64,
    /// Sphere radius as a fraction of the source patch radius.
    pub rho_fraction: f64,
    /// Unstable directions used for rays, ranked by their u-weight.
    pub top_k: usize,
    pub arc_points: usize,
    pub bisection_depth: usize,
    /// Probe trajectories allowed per pair.
    pub budget: usize,
    pub tol_orbit: f64,
    pub newton_max: usize,
    /// Probes passing within this multiple of the target radius seed shooting.
    pub seed_reach: f64,
    /// Horizon extensions allowed when a shot ends outside the target half radius.
    pub extensions: usize,
    /// Max-over-time distance in the origin norm below which two orbits coincide.
    pub dedup_tol: f64,
    pub escape_radius: f64,
    pub rank: RankPolicy,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            h: 0.05,
            t_max: 40.0,
            rho_fraction: 0.25,
            top_k: 3,
            arc_points: 12,
            bisection_depth: 8,
            budget: 200,
            tol_orbit: 1e-9,
            newton_max: 20,
            seed_reach: 2.0,
            extensions: 4,
            dedup_tol: 1e-4,
            escape_radius: 1e3,
            rank: RankPolicy::default(),
        }
    }
}

/// One RK4 step of `ẋ = W(x)`.
pub fn rk4_step(field: &FieldSpec, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let k1 = field.eval(x)?;
    let k2 = field.eval(&(x + &k1 * (0.5 * h)))?;
    let k3 = field.eval(&(x + &k2 * (0.5 * h)))?;
    let k4 = field.eval(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Derivative of the RK4 map at `x` applied to the columns of `dx`.
pub fn rk4_tangent(field: &FieldSpec, x: &DVector<f64>, h: f64, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p1 = field.linearize(x)?;
    let d1 = field.apply_jacobian(&p1, dx);
    let p2 = field.linearize(&(x + &p1.value * (0.5 * h)))?;
    let d2 = field.apply_jacobian(&p2, &(dx + &d1 * (0.5 * h)));
    let p3 = field.linearize(&(x + &p2.value * (0.5 * h)))?;
    let d3 = field.apply_jacobian(&p3, &(dx + &d2 * (0.5 * h)));
    let p4 = field.linearize(&(x + &p3.value * h))?;
    let d4 = field.apply_jacobian(&p4, &(dx + &d3 * h));
    Ok(dx + (d1 + d2 * 2.0 + d3 * 2.0 + d4) * (h / 6.0))
}

#[derive(Debug, Clone)]
struct Probe {
    terminal: Terminal,
    /// Step of closest approach to the target and the distance there.
    closest: (usize, f64),
}

fn probe(field: &FieldSpec, x0: &DVector<f64>, target: &LocalLinearField, opts: &OrbitOptions) -> Result<Probe> {
    let cfg = field.cfg();
    let steps = (opts.t_max / opts.h).ceil() as usize;
    let mut x = x0.clone();
    let mut outside: Vec<bool> = field.patches.iter().map(|p| p.local.distance(&x) > 0.5 * p.local.radius).collect();
    let mut closest = (0, target.distance(&x));
    for j in 1..=steps {
        x = rk4_step(field, &x, opts.h)?;
        let d = target.distance(&x);
        if d < closest.1 {
            closest = (j, d);
        }
        for (k, p) in field.patches.iter().enumerate() {
            if p.local.distance(&x) > 0.5 * p.local.radius {
                outside[k] = true;
            } else if outside[k] {
                return Ok(Probe { terminal: Terminal::Converged { id: p.id }, closest });
            }
        }
        if !x.iter().all(|c| c.is_finite()) || cfg.x_norm(&x) > opts.escape_radius {
            return Ok(Probe { terminal: Terminal::Escaped, closest });
        }
    }
    Ok(Probe { terminal: Terminal::MaxTime, closest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransversalityReport {
    pub index: i64,
    pub kernel: usize,
    pub cokernel: usize,
    /// Sine of the angle between the kernel and `W` at the endpoint, in the target's weighted norm.
    pub kernel_angle: f64,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConnectingOrbit {
    pub from: usize,
    pub to: usize,
    /// Unit coordinates of the start on the unstable sphere.
    pub sphere_point: DVector<f64>,
    pub h: f64,
    pub states: Vec<DVector<f64>>,
    pub f_values: Vec<f64>,
    pub residual: f64,
    pub transversality: TransversalityReport,
}

impl ConnectingOrbit {
    /// The kernel contains the flow direction up to the given sine.
    pub fn kernel_aligned(&self, tol: f64) -> bool {
        self.transversality.kernel == 1 && self.transversality.kernel_angle <= tol
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|j| j as f64 * self.h).collect()
    }
}

#[derive(Debug, Clone)]
pub struct OrbitSearch {
    pub from: usize,
    pub to: usize,
    pub orbits: Vec<ConnectingOrbit>,
    pub probes_used: usize,
    pub newton_failures: Vec<String>,
}

impl OrbitSearch {
    pub fn count(&self) -> usize {
        self.orbits.len()
    }
}

struct Budget {
    left: usize,
    used: usize,
}

impl Budget {
    fn take(&mut self, from: usize, to: usize, what: &str) -> Result<()> {
        if self.left == 0 {
            return Err(Error::CountUncertain {
                from,
                to,
                reason: format!("probe budget exhausted after {} trajectories while {what}", self.used),
            });
        }
        self.left -= 1;
        self.used += 1;
        Ok(())
    }
}

/// Stable-space basis of a patch: the B-orthogonal complement of its unstable space.
fn stable_basis(local: &LocalLinearField) -> DMatrix<f64> {
    let n = local.center.len();
    let k = local.unstable.ncols();
    let proj = DMatrix::identity(n, n) - &local.unstable * &local.unstable_coords;
    range_basis(&proj, n - k)
}

/// Counts orbits from `from` to `to`, which must have index difference one.
pub fn find_orbits(field: &FieldSpec, from: &CriticalPoint, to: &CriticalPoint, opts: &OrbitOptions) -> Result<OrbitSearch> {
    if from.index() - to.index() != 1 {
        return Err(Error::Config(format!(
            "orbit search needs index difference 1, got {} -> {} ({} vs {})",
            from.id,
            to.id,
            from.index(),
            to.index()
        )));
    }
    let (Some(src), Some(dst)) = (&from.local, &to.local) else {
        return Err(Error::NonMorse { degenerate: [from, to].iter().filter(|p| !p.is_certified()).map(|p| p.id).collect() });
    };
    let rho = opts.rho_fraction * src.radius;
    let k = src.unstable.ncols();
    let mut budget = Budget { left: opts.budget, used: 0 };
    let (fid, tid) = (from.id, to.id);

    // rank unstable directions by the weight of their u-part
    let n = field.cfg().nodes();
    let mut ranked: Vec<(f64, usize)> = (0..k)
        .map(|j| {
            let col = src.unstable.column(j).into_owned();
            let mut u = col.clone();
            u.rows_mut(n, n).fill(0.0);
            (src.gram.norm(&u) / src.gram.norm(&col), j)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let dirs: Vec<usize> = ranked.iter().take(opts.top_k.min(k)).map(|r| r.1).collect();
    let unit = |j: usize| -> DVector<f64> {
        let mut c = DVector::zeros(k);
        c[j] = 1.0;
        c
    };
    let start = |c: &DVector<f64>| -> DVector<f64> { &src.center + &src.unstable * c * rho };

    let mut seeds: Vec<(DVector<f64>, usize)> = Vec::new();
    let run = |c: &DVector<f64>, budget: &mut Budget, what: &str| -> Result<Probe> {
        budget.take(fid, tid, what)?;
        probe(field, &start(c), dst, opts)
    };
    let classify = |p: &Probe| -> i64 {
        match p.terminal {
            Terminal::Converged { id } => id as i64,
            Terminal::Escaped => -1,
            Terminal::MaxTime => -2,
        }
    };
    let near = |p: &Probe| p.closest.1 <= opts.seed_reach * dst.radius;

    // rays
    for &j in &dirs {
        for sign in [1.0, -1.0] {
            let c = unit(j) * sign;
            let p = run(&c, &mut budget, "probing rays")?;
            if near(&p) {
                seeds.push((c, p.closest.0));
            }
        }
    }
    // arcs in the planes spanned by the leading direction and the others
    if let Some((&d1, rest)) = dirs.split_first() {
        for &dj in rest {
            let point = |theta: f64| unit(d1) * theta.cos() + unit(dj) * theta.sin();
            let m = opts.arc_points.max(4);
            let mut classes = Vec::with_capacity(m);
            for i in 0..m {
                let theta = 2.0 * PI * i as f64 / m as f64;
                let p = run(&point(theta), &mut budget, "probing arcs")?;
                if near(&p) {
                    seeds.push((point(theta), p.closest.0));
                }
                classes.push(classify(&p));
            }
            // bisect straddles between two classes other than the target
            for i in 0..m {
                let (a, b) = (classes[i], classes[(i + 1) % m]);
                if a == b || a == tid as i64 || b == tid as i64 {
                    continue;
                }
                let mut lo = 2.0 * PI * i as f64 / m as f64;
                let mut hi = lo + 2.0 * PI / m as f64;
                for _ in 0..opts.bisection_depth {
                    let mid = 0.5 * (lo + hi);
                    let p = run(&point(mid), &mut budget, "bisecting an arc")?;
                    if near(&p) {
                        seeds.push((point(mid), p.closest.0));
                        break;
                    }
                    if classify(&p) == a {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }
    }

    let mut orbits: Vec<ConnectingOrbit> = Vec::new();
    let mut newton_failures = Vec::new();
    for (c, closest) in seeds {
        let t_end = closest as f64 * opts.h + 2f64.ln();
        let steps = (t_end / opts.h).ceil() as usize;
        let (c, states, residual) = match shoot_into(field, src, dst, rho, &c, steps, opts) {
            Ok(shot) => shot,
            Err(e) => {
                newton_failures.push(format!("{e}"));
                continue;
            }
        };
        if orbits.iter().any(|o| same_orbit(field.cfg(), &o.states, &states, opts.dedup_tol)) {
            continue;
        }
        match certify_orbit(field, from, to, src, dst, c, states, residual, opts) {
            Ok(orbit) => orbits.push(orbit),
            Err(e @ Error::Certificate(_)) => newton_failures.push(format!("{e}")),
            Err(e) => return Err(e),
        }
    }
    Ok(OrbitSearch { from: fid, to: tid, orbits, probes_used: budget.used, newton_failures })
}

fn same_orbit(cfg: &FunctionalConfig, a: &[DVector<f64>], b: &[DVector<f64>], tol: f64) -> bool {
    let m = a.len().min(b.len());
    (0..m).all(|j| cfg.origin_norm(&(&a[j] - &b[j])) <= tol)
}

/// Shoots with a growing horizon until the endpoint lies inside the target half radius.
fn shoot_into(
    field: &FieldSpec,
    src: &LocalLinearField,
    dst: &LocalLinearField,
    rho: f64,
    c0: &DVector<f64>,
    steps: usize,
    opts: &OrbitOptions,
) -> Result<(DVector<f64>, Vec<DVector<f64>>, f64)> {
    let mut c = c0.clone();
    let mut steps = steps;
    let mut last = f64::INFINITY;
    for _ in 0..=opts.extensions {
        let (c1, states, residual) = shoot(field, src, dst, rho, &c, steps, opts)?;
        let d = dst.distance(states.last().expect("nonempty path"));
        if d <= 0.5 * dst.radius {
            return Ok((c1, states, residual));
        }
        last = d;
        // linear contraction inside the patch is e^{-t}
        steps += ((d / (0.25 * dst.radius)).ln().max(1.0) / opts.h).ceil() as usize;
        c = c1;
    }
    Err(Error::Certificate(format!("shot still ends {last:.3e} from the target after {} extensions", opts.extensions)))
}

/// Newton on the sphere coordinates; returns the refined point, its path and the residual norm.
fn shoot(
    field: &FieldSpec,
    src: &LocalLinearField,
    dst: &LocalLinearField,
    rho: f64,
    c0: &DVector<f64>,
    steps: usize,
    opts: &OrbitOptions,
) -> Result<(DVector<f64>, Vec<DVector<f64>>, f64)> {
    let k = c0.len();
    let residual = |c: &DVector<f64>| -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let mut x = &src.center + &src.unstable * c * rho;
        let mut states = alloc::vec![x.clone()];
        for _ in 0..steps {
            x = rk4_step(field, &x, opts.h)?;
            states.push(x.clone());
        }
        let mut r = DVector::zeros(k);
        r.rows_mut(0, k - 1).copy_from(&dst.unstable_part(&(&x - &dst.center)));
        r[k - 1] = 0.5 * (c.dot(c) - 1.0);
        Ok((r, states))
    };
    let mut c = c0.normalize();
    let (mut r, mut states) = residual(&c)?;
    let mut norm = r.norm();
    for it in 0..opts.newton_max {
        if norm <= opts.tol_orbit {
            return Ok((c, states, norm));
        }
        // Jacobian of the endpoint through the tangent RK4 maps
        let mut tangent = &src.unstable * rho;
        for x in &states[..steps] {
            tangent = rk4_tangent(field, x, opts.h, &tangent)?;
        }
        let mut jac = DMatrix::zeros(k, k);
        jac.rows_mut(0, k - 1).copy_from(&(&dst.unstable_coords * &tangent));
        jac.row_mut(k - 1).copy_from(&c.transpose());
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::Numerical(format!("singular shooting Jacobian at iteration {it}")))?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let trial = &c + &step * t;
            if let Ok((rt, st)) = residual(&trial) {
                let nt = rt.norm();
                if nt.is_finite() && nt < norm {
                    c = trial;
                    r = rt;
                    states = st;
                    norm = nt;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm <= opts.tol_orbit {
        return Ok((c, states, norm));
    }
    Err(Error::Convergence { what: "orbit shooting", iterations: opts.newton_max, residual: norm })
}

#[allow(clippy::too_many_arguments)]
fn certify_orbit(
    field: &FieldSpec,
    from: &CriticalPoint,
    to: &CriticalPoint,
    src: &LocalLinearField,
    dst: &LocalLinearField,
    c: DVector<f64>,
    states: Vec<DVector<f64>>,
    residual: f64,
    opts: &OrbitOptions,
) -> Result<ConnectingOrbit> {
    let cfg = field.cfg();
    let end = states.last().expect("nonempty path");
    if dst.distance(end) > 0.5 * dst.radius {
        return Err(Error::Certificate(format!("orbit {} -> {} ends outside the target half radius", from.id, to.id)));
    }
    let f_values: Vec<f64> = states.iter().map(|x| cfg.f(x)).collect();
    let scale = f_values.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    if f_values.windows(2).any(|w| w[1] > w[0] + 1e-12 * scale) {
        return Err(Error::Certificate(format!("f increases along orbit {} -> {}", from.id, to.id)));
    }
    let steps = states.len() - 1;
    let right = stable_basis(dst);
    let condensed = condensed_index(&src.unstable, &right, steps, &opts.rank, |j, s| rk4_tangent(field, &states[j], opts.h, s))?;
    let index = condensed.kernel as i64 - condensed.cokernel as i64;
    let kernel_angle = if condensed.kernel == 1 {
        let kv = condensed.kernel_right.column(0).into_owned();
        let w = field.eval(end)?;
        let bk = dst.gram.mul(&kv);
        let proj = &kv * (bk.dot(&w) / bk.dot(&kv));
        dst.gram.norm(&(&w - proj)) / dst.gram.norm(&w)
    } else {
        f64::NAN
    };
    if condensed.kernel != 1 || index != from.index() - to.index() {
        return Err(Error::Transversality { from: from.id, to: to.id, kernel: condensed.kernel });
    }
    Ok(ConnectingOrbit {
        from: from.id,
        to: to.id,
        sphere_point: c,
        h: opts.h,
        states,
        f_values,
        residual,
        transversality: TransversalityReport {
            index,
            kernel: condensed.kernel,
            cokernel: condensed.cokernel,
            kernel_angle,
            singular_values: condensed.singular_values,
        },
    })
}

/// Ordered pairs of catalogue ids whose indices differ by one.
pub fn index_one_pairs(catalogue: &Catalogue) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in &catalogue.points {
        for b in &catalogue.points {
            if a.index() - b.index() == 1 {
                out.push((a.id, b.id));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCount {
    pub from: usize,
    pub to: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainComplexData {
    /// Generators (catalogue ids) per grade.
    pub grades: BTreeMap<i64, Vec<usize>>,
    /// `∂_k`: rows are grade `k − 1` generators, columns grade `k` generators.
    pub boundaries: BTreeMap<i64, Gf2Matrix>,
    pub evidence: Vec<PairCount>,
}

/// Builds the mod-2 complex and checks `∂∂ = 0`.
pub fn assemble_complex(catalogue: &Catalogue, counts: &[PairCount]) -> Result<ChainComplexData> {
    if catalogue.points.is_empty() {
        return Err(Error::Consistency("empty catalogue: at least one critical point must exist".into()));
    }
    let mut grades: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for p in &catalogue.points {
        grades.entry(p.index()).or_default().push(p.id);
    }
    for ids in grades.values_mut() {
        ids.sort_unstable();
    }
    let lookup = |a: usize, b: usize| counts.iter().find(|c| c.from == a && c.to == b).map(|c| c.count);
    let mut boundaries = BTreeMap::new();
    for (&k, cols) in &grades {
        let Some(rows) = grades.get(&(k - 1)) else { continue };
        let mut m = Gf2Matrix::zeros(rows.len(), cols.len());
        for (j, &a) in cols.iter().enumerate() {
            for (i, &b) in rows.iter().enumerate() {
                let c = lookup(a, b).ok_or_else(|| Error::Consistency(format!("no orbit count for pair {a} -> {b}")))?;
                m.set(i, j, c % 2 == 1);
            }
        }
        boundaries.insert(k, m);
    }
    for (&k, dk) in &boundaries {
        if let Some(dkm1) = boundaries.get(&(k - 1)) {
            let sq = dkm1.mul(dk);
            if !sq.is_zero() {
                return Err(Error::Consistency(format!("boundary squares to a nonzero map from grade {k} to grade {}", k - 2)));
            }
        }
    }
    Ok(ChainComplexData { grades, boundaries, evidence: counts.to_vec() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomologyReport {
    pub ranks: BTreeMap<i64, usize>,
    /// Rank one in grade zero and nothing else.
    pub matches_point: bool,
}

/// `rank_k = n_k − rank ∂_k − rank ∂_{k+1}`.
pub fn homology(complex: &ChainComplexData) -> HomologyReport {
    let rank = |k: i64| complex.boundaries.get(&k).map_or(0, Gf2Matrix::rank);
    let ranks: BTreeMap<i64, usize> = complex.grades.iter().map(|(&k, g)| (k, g.len() - rank(k) - rank(k + 1))).collect();
    let matches_point = ranks.iter().all(|(&k, &r)| if k == 0 { r == 1 } else { r == 0 }) && ranks.get(&0) == Some(&1);
    HomologyReport { ranks, matches_point }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub strategy: Strategy,
    pub orbits: OrbitOptions,
    /// Seed and amplitude of the compact perturbation.
    pub perturbation: Option<(u64, f64)>,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { strategy: Strategy::default(), orbits: OrbitOptions::default(), perturbation: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct MorseRun {
    pub catalogue: Catalogue,
    pub field: FieldSpec,
    pub ps: PsReport,
    pub searches: Vec<OrbitSearch>,
    pub complex: ChainComplexData,
    pub homology: HomologyReport,
}

/// Catalogue, field and PS radius: everything the orbit searches need.
pub fn prepare(cfg: &FunctionalConfig, opts: &RunOptions) -> Result<(Catalogue, FieldSpec, PsReport)> {
    let catalogue = find_critical_points(cfg, &[], &opts.strategy)?;
    if !catalogue.is_morse() {
        let degenerate = catalogue.points.iter().filter(|p| !p.is_certified()).map(|p| p.id).collect();
        return Err(Error::NonMorse { degenerate });
    }
    let perturbation = match opts.perturbation {
        Some((seed, amplitude)) => Some(Perturbation::new(cfg, seed, amplitude)?),
        None => None,
    };
    let field = assemble_w(cfg, catalogue.patches()?, perturbation)?;
    let ps = ps_diagnostics(&field, &catalogue.states(), opts.seed)?;
    Ok((catalogue, field, ps))
}

/// Full sequential pipeline from critical points to homology.
pub fn morse_homology(cfg: &FunctionalConfig, opts: &RunOptions) -> Result<MorseRun> {
    let (catalogue, field, ps) = prepare(cfg, opts)?;
    let mut orbit_opts = opts.orbits.clone();
    orbit_opts.escape_radius = 10.0 * ps.radius.max(1.0);
    let mut searches = Vec::new();
    for (a, b) in index_one_pairs(&catalogue) {
        let from = catalogue.get(a).expect("pair ids come from the catalogue");
        let to = catalogue.get(b).expect("pair ids come from the catalogue");
        searches.push(find_orbits(&field, from, to, &orbit_opts)?);
    }
    let counts: Vec<PairCount> = searches.iter().map(|s| PairCount { from: s.from, to: s.to, count: s.count() }).collect();
    let complex = assemble_complex(&catalogue, &counts)?;
    let homology = homology(&complex);
    Ok(MorseRun { catalogue, field, ps, searches, complex, homology })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctorialityReport {
    pub ranks: Vec<BTreeMap<i64, usize>>,
    pub consistent: bool,
}

/// Compares homology ranks across runs.
pub fn functoriality_check(reports: &[&HomologyReport]) -> FunctorialityReport {
    let ranks: Vec<BTreeMap<i64, usize>> = reports.iter().map(|r| nonzero(&r.ranks)).collect();
    let consistent = ranks.windows(2).all(|w| w[0] == w[1]);
    FunctorialityReport { ranks, consistent }
}

fn nonzero(ranks: &BTreeMap<i64, usize>) -> BTreeMap<i64, usize> {
    ranks.iter().filter(|(_, &r)| r > 0).map(|(&k, &r)| (k, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::nonlinearity::{Family, NonlinearitySpec};
    use alloc::sync::Arc;
    use alloc::vec;

    fn cfg(n: usize, family: Family) -> FunctionalConfig {
        let mesh = Arc::new(Mesh::new(1, &[1.0], n, 3).unwrap());
        FunctionalConfig::new(mesh, 3.0, 3.0, NonlinearitySpec::with_default_exponents(family).unwrap()).unwrap()
    }

    fn single(index: i64) -> Catalogue {
        let c = cfg(8, Family::Zero);
        let mut cat = find_critical_points(&c, &[], &Strategy::default()).unwrap();
        cat.points[0].split.index = index;
        cat
    }

    #[test]
    fn single_generator_has_point_homology() {
        let cat = single(0);
        let cx = assemble_complex(&cat, &[]).unwrap();
        assert!(cx.boundaries.is_empty());
        let h = homology(&cx);
        assert!(h.matches_point);
        // shifting the grading shifts the ranks
        let h = homology(&assemble_complex(&single(3), &[]).unwrap());
        assert_eq!(h.ranks.get(&3), Some(&1));
        assert!(!h.matches_point);
    }

    #[test]
    fn empty_catalogue_is_refused() {
        let mut cat = single(0);
        cat.points.clear();
        assert!(matches!(assemble_complex(&cat, &[]), Err(Error::Consistency(_))));
    }

    #[test]
    fn rank_formula_on_a_hand_built_complex() {
        let mut grades = BTreeMap::new();
        grades.insert(1, vec![0]);
        grades.insert(0, vec![1, 2]);
        let mut boundaries = BTreeMap::new();
        boundaries.insert(1, Gf2Matrix::from_counts(2, 1, |_, _| 1));
        let cx = ChainComplexData { grades, boundaries, evidence: vec![] };
        let h = homology(&cx);
        assert_eq!(h.ranks[&0], 1);
        assert_eq!(h.ranks[&1], 0);
        assert!(h.matches_point);
    }

    #[test]
    fn same_index_pair_is_rejected() {
        let c = cfg(8, Family::Zero);
        let cat = find_critical_points(&c, &[], &Strategy::default()).unwrap();
        let field = assemble_w(&c, cat.patches().unwrap(), None).unwrap();
        let p = &cat.points[0];
        assert!(matches!(find_orbits(&field, p, p, &OrbitOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn zero_coupling_homology_is_a_point() {
        let c = cfg(16, Family::Zero);
        let run = morse_homology(&c, &RunOptions::default()).unwrap();
        assert!(run.searches.is_empty());
        assert!(run.homology.matches_point);
    }

    #[test]
    fn pitchfork_orbits_and_homology() {
        let c = cfg(24, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let run = morse_homology(&c, &RunOptions::default()).unwrap();
        assert_eq!(run.searches.len(), 2);
        for s in &run.searches {
            assert_eq!(s.count(), 1, "{:?}", s.newton_failures);
            let o = &s.orbits[0];
            assert_eq!(o.transversality.kernel, 1);
            assert_eq!(o.transversality.index, 1);
            assert!(o.residual <= 1e-9);
        }
        assert_eq!(run.complex.boundaries[&1].to_rows(), vec![vec![1], vec![1]]);
        assert!(run.homology.matches_point);
    }

    #[test]
    fn perturbed_pitchfork_keeps_its_boundary() {
        let c = cfg(24, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let opts = RunOptions { perturbation: Some((11, 0.1)), ..RunOptions::default() };
        let run = morse_homology(&c, &opts).unwrap();
        // v-components drift off zero, so the pure-u rays miss and shooting has to correct them
        for s in &run.searches {
            assert_eq!(s.count(), 1, "{:?}", s.newton_failures);
        }
        assert_eq!(run.complex.boundaries[&1].to_rows(), vec![vec![1], vec![1]]);
        assert!(run.homology.matches_point);
    }

    #[test]
    fn starved_budget_is_uncertain() {
        let c = cfg(16, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
        let mut opts = RunOptions::default();
        opts.orbits.budget = 1;
        assert!(matches!(morse_homology(&c, &opts), Err(Error::CountUncertain { .. })));
    }
}
