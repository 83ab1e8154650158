//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::Command as Proc;
use std::sync::Arc;
use std::time::Instant;

use morsekit::config::{FamilyBlock, NonlinearityBlock, PerturbationBlock};
use morsekit::{run, Command, RunConfig, RunReport};
use morsekit_core::complex::{functoriality_check, HomologyReport};
use morsekit_core::critical::{find_critical_points, Strategy};
use morsekit_core::duality::{apply_dp, invert_dp, monotonicity_gap, DualVector};
use morsekit_core::flow::{eval_v, regression_slope};
use morsekit_core::fredholm::{lab, RankPolicy};
use morsekit_core::functional::FunctionalConfig;
use morsekit_core::mesh::{GridFunction, Mesh, NormKind};
use morsekit_core::nonlinearity::{Family, Monomial, NonlinearitySpec};
use morsekit_core::spectral::{split_at, TOL_DEG};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&fixture(name)).expect("fixture parses")
}

fn line(n: usize) -> Arc<Mesh> {
    Arc::new(Mesh::new(1, &[1.0], n, 3).unwrap())
}

fn functional(n: usize, p: f64, q: f64, family: Family) -> FunctionalConfig {
    FunctionalConfig::new(line(n), p, q, NonlinearitySpec::with_default_exponents(family).unwrap()).unwrap()
}

/// Random sine series `Σ a_k sin(kπx)/k`, evaluated anywhere.
#[derive(Clone)]
struct Series(Vec<f64>);

impl Series {
    fn random(rng: &mut ChaCha8Rng, terms: usize, scale: f64) -> Self {
        Series((1..=terms).map(|k| scale * rng.random_range(-1.0..1.0) / k as f64).collect())
    }

    fn at(&self, x: f64) -> f64 {
        self.0.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * PI * x).sin()).sum()
    }

    fn nodal(&self, n: usize) -> Vec<f64> {
        let h = 1.0 / (n + 1) as f64;
        (1..=n).map(|i| self.at(i as f64 * h)).collect()
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    let u = Series::random(rng, 6, scale).nodal(n);
    let v = Series::random(rng, 6, scale).nodal(n);
    DVector::from_iterator(2 * n, u.into_iter().chain(v))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

// 1. central differences of f and df
fn derivative_consistency() -> Verdict {
    let terms = vec![
        Monomial { i: 2, j: 0, coeff: 7.5 },
        Monomial { i: 4, j: 0, coeff: -0.25 },
        Monomial { i: 1, j: 1, coeff: 0.5 },
        Monomial { i: 0, j: 2, coeff: 1.0 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut first = (Vec::new(), 0.0f64);
    let mut against_slope = 0.0f64;
    let mut second = (Vec::new(), 0.0f64);
    {
        let g = NonlinearitySpec::new(Family::Custom { terms }, 4.0, 2.0).unwrap();
        let cfg = FunctionalConfig::new(line(32), 3.0, 3.0, g).unwrap();
        for _ in 0..100 {
            let x = random_state(&mut rng, 32, 1.0);
            let d = random_state(&mut rng, 32, 1.0);
            let grad = cfg.df(&x);
            let slope = grad.dot(&d);
            // a direction nearly orthogonal to the gradient makes |slope| a useless scale
            let scale = grad.norm() * d.norm();
            let hd = cfg.d2f_matrix(&x) * &d;
            let mut e1 = [0.0; 2];
            let mut e2 = [0.0; 2];
            for (k, eps) in [1e-3, 1e-4].into_iter().enumerate() {
                let fd = (cfg.f(&(&x + &d * eps)) - cfg.f(&(&x - &d * eps))) / (2.0 * eps);
                e1[k] = (fd - slope).abs() / scale;
                if k == 1 {
                    against_slope = against_slope.max((fd - slope).abs() / slope.abs());
                }
                let gd = (cfg.df(&(&x + &d * eps)) - cfg.df(&(&x - &d * eps))) / (2.0 * eps);
                e2[k] = (gd - &hd).norm() / hd.norm();
            }
            first.0.push((e1[0] / e1[1]).log10());
            first.1 = first.1.max(e1[1]);
            second.0.push((e2[0] / e2[1]).log10());
            second.1 = second.1.max(e2[1]);
        }
    }
    let (o1, o2) = (median(first.0.clone()), median(second.0.clone()));
    let (m1, m2) = (first.0.iter().cloned().fold(f64::INFINITY, f64::min), second.0.iter().cloned().fold(f64::INFINITY, f64::min));
    let pass = m1 >= 1.9 && m2 >= 1.9 && first.1 <= 1e-5 && second.1 <= 1e-5;
    verdict(
        pass,
        format!(
            "df: order min {m1:.3} median {o1:.3}, max rel err {:.1e} ({against_slope:.1e} against |slope|); d2f: order min {m2:.3} median {o2:.3}, max rel err {:.1e}",
            first.1, second.1
        ),
    )
}

// 2. monotonicity gap and its constants across one refinement
fn monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [2.0, 3.0] {
        let pairs: Vec<(Series, Series)> = (0..200)
            .map(|_| {
                let s = 10f64.powf(rng.random_range(-1.0..0.5));
                (Series::random(&mut rng, 6, s), Series::random(&mut rng, 6, s))
            })
            .collect();
        let mut constants = Vec::new();
        for n in [32, 64] {
            let mesh = line(n);
            let (mut cs, mut cd, mut min_gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
            for (a, b) in &pairs {
                let g1 = GridFunction::new(mesh.clone(), DVector::from_vec(a.nodal(n))).unwrap();
                let g2 = GridFunction::new(mesh.clone(), DVector::from_vec(b.nodal(n))).unwrap();
                let m = monotonicity_gap(p, &g1, &g2).unwrap();
                min_gap = min_gap.min(m.gap);
                cs = cs.min(m.sobolev_constant(p));
                cd = cd.min(m.dual_constant(p));
            }
            ok &= min_gap > 0.0 && cs > 0.0 && cd > 0.0;
            constants.push((cs, cd));
        }
        let rs = constants[1].0 / constants[0].0;
        let rd = constants[1].1 / constants[0].1;
        ok &= (0.5..=2.0).contains(&rs) && (0.5..=2.0).contains(&rd);
        parts.push(format!("p={p}: c_sob {:.3e}->{:.3e}, c_dual {:.3e}->{:.3e}", constants[0].0, constants[1].0, constants[0].1, constants[1].1));
    }
    verdict(ok, parts.join("; "))
}

// 3. D_p round trips and the growth of its inverse
fn inversion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mesh = line(48);
    let chol = mesh.stiffness().cholesky().unwrap();
    let dual = |v: &DVector<f64>| chol.inverse_quadratic(v.as_slice()).max(0.0).sqrt();
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [2.0, 3.0] {
        for _ in 0..25 {
            let g = GridFunction::new(mesh.clone(), DVector::from_vec(Series::random(&mut rng, 6, 2.0).nodal(48))).unwrap();
            let phi = apply_dp(p, &g);
            let back = invert_dp(p, &phi, 1e-13, 100).unwrap();
            worst = worst.max((&back.values - &g.values).amax() / g.values.amax());
            let psi = DualVector { mesh: mesh.clone(), values: DVector::from_vec(Series::random(&mut rng, 6, 5.0).nodal(48)) };
            let u = invert_dp(p, &psi, 1e-13, 100).unwrap();
            worst = worst.max(dual(&(apply_dp(p, &u).values - &psi.values)) / dual(&psi.values));
        }
        let mut slope_max = f64::NEG_INFINITY;
        for _ in 0..5 {
            let base = DVector::from_vec(Series::random(&mut rng, 6, 1.0).nodal(48));
            let pts: Vec<(f64, f64)> = (0..9)
                .map(|k| {
                    let t = 10f64.powf(2.0 + 0.5 * k as f64);
                    let phi = DualVector { mesh: mesh.clone(), values: &base * t };
                    let u = invert_dp(p, &phi, 1e-12, 200).unwrap();
                    (dual(&phi.values).ln(), u.norm(NormKind::SobolevGrad(2.0 * p)).unwrap().ln())
                })
                .collect();
            slope_max = slope_max.max(regression_slope(&pts));
        }
        let bound = 1.0 / (2.0 * p - 1.0) + 0.05;
        ok &= slope_max <= bound;
        parts.push(format!("p={p}: growth exponent {slope_max:.4} (limit {bound:.4})"));
    }
    ok &= worst <= 1e-8;
    verdict(ok, format!("round trip max rel err {worst:.1e}; {}", parts.join("; ")))
}

// 4. df[V] < 0 off the critical set, ≈ 0 on it
fn gradient_like() -> Verdict {
    let cfg = functional(64, 3.0, 3.0, Family::PitchforkU { kappa: 15.0, gamma: 1.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    while count < 200 {
        let scale = 10f64.powf(rng.random_range(-1.5..0.5));
        let x = random_state(&mut rng, 64, scale);
        if cfg.residual(&x) <= 1e-6 {
            continue;
        }
        let d = cfg.df(&x).dot(&eval_v(&cfg, &x).unwrap());
        worst = worst.max(d);
        count += 1;
    }
    let catalogue = find_critical_points(&cfg, &[], &Strategy::default()).unwrap();
    let at_crit = catalogue
        .points
        .iter()
        .filter(|p| p.is_certified())
        .map(|p| cfg.df(&p.state).dot(&eval_v(&cfg, &p.state).unwrap()).abs())
        .fold(0.0f64, f64::max);
    let pass = worst < 0.0 && at_crit <= 1e-8 && !catalogue.points.is_empty();
    verdict(pass, format!("max df[V] over 200 states {worst:.3e}; max |df[V]| at {} critical points {at_crit:.1e}", catalogue.points.len()))
}

// 5. linear growth of W and the compact-part exponent
fn linear_growth(base: &RunReport) -> Verdict {
    let Some(ps) = &base.ps else { return verdict(false, "no PS diagnostics in the pitchfork report") };
    let bound = ps.compact_exponent_bound;
    let pass = ps.growth_ratio.is_finite()
        && ps.growth_max_state_norm >= 999.0
        && ps.compact_exponent.is_some_and(|e| e < 1.0 && e <= bound + 0.05);
    verdict(
        pass,
        format!(
            "sup |W|/(1+|s|) = {:.3} up to |s| = {:.0}; compact exponent {:?} vs max(a1,a2)/(2p-1) = {bound:.3}",
            ps.growth_ratio, ps.growth_max_state_norm, ps.compact_exponent
        ),
    )
}

/// Independent count: each discrete Dirichlet mode below the curvature adds
/// (u block) or removes (v block) one from the index.
fn index_oracle(n: usize, curvature_u: f64, curvature_v: f64) -> i64 {
    let h = 1.0 / (n + 1) as f64;
    let lambda = |k: usize| {
        let c = (k as f64 * PI * h).cos();
        6.0 / (h * h) * (1.0 - c) / (2.0 + c)
    };
    let below = |kappa: f64| (1..=n).filter(|&k| lambda(k) < kappa).count() as i64;
    below(curvature_u) - below(curvature_v)
}

// 6. relative indices at the origin
fn indices() -> Verdict {
    let t0 = Instant::now();
    let cases = [
        ("G=0", Family::Zero, 0, 0.0, 0.0),
        ("G=(15/2)u^2", Family::QuadraticU { kappa: 15.0 }, 1, 15.0, 0.0),
        ("G=-(15/2)v^2", Family::QuadraticV { mu: -15.0 }, -1, 0.0, 15.0),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, family, expected, cu, cv) in cases {
        let mut got = Vec::new();
        for n in [64, 128] {
            let cfg = functional(n, 3.0, 3.0, family.clone());
            let split = split_at(&cfg, &DVector::zeros(2 * n), TOL_DEG).unwrap();
            ok &= !split.is_degenerate() && split.relative_index() == index_oracle(n, cu, cv);
            got.push(split.relative_index());
        }
        ok &= got.iter().all(|&m| m == expected);
        parts.push(format!("{name}: {got:?}"));
    }
    verdict(ok, format!("{} at n = 64, 128 ({:.1} s)", parts.join(", "), t0.elapsed().as_secs_f64()))
}

// 7. spectral index identity on random hyperbolic paths
fn fredholm_lab() -> Verdict {
    let t0 = Instant::now();
    let trials = lab(&[4, 10, 20], 50, 7, &RankPolicy::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let bad = trials.iter().filter(|t| !t.report.formula_holds() || t.report.alternate_index != -t.report.index).count();
    let nonzero = trials.iter().filter(|t| t.report.index != 0).count();
    verdict(bad == 0 && trials.len() == 150 && secs < 60.0, format!("{} trials, {bad} mismatches, {nonzero} with nonzero index, {secs:.1} s", trials.len()))
}

// 8. transversality of every accepted pitchfork orbit
fn transversality(runs: &[(&str, &RunReport)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in runs {
        let orbits: Vec<_> = r.orbits.iter().flat_map(|p| p.orbits.iter()).collect();
        let angle = orbits.iter().map(|o| o.kernel_angle).fold(0.0f64, f64::max);
        ok &= !orbits.is_empty() && orbits.iter().all(|o| o.index == 1 && o.kernel == 1 && o.kernel_angle <= 1e-6);
        parts.push(format!("{name}: {} orbits, max angle {angle:.2e}", orbits.len()));
    }
    verdict(ok, parts.join("; "))
}

struct CliRun {
    code: Option<i32>,
    report: serde_json::Value,
    stderr: String,
}

fn cli(sub: &str, name: &str) -> CliRun {
    let out = std::env::temp_dir().join(format!("morsekit-acceptance-{}-{sub}-{name}.json", std::process::id()));
    let o = Proc::new(env!("CARGO_BIN_EXE_morsekit"))
        .args([sub, fixture(name).to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .expect("binary runs");
    let report = std::fs::read_to_string(&out).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or(serde_json::Value::Null);
    let _ = std::fs::remove_file(&out);
    CliRun { code: o.status.code(), report, stderr: String::from_utf8_lossy(&o.stderr).into_owned() }
}

// 9. point homology for G ≡ 0 through the command line
fn trivial_homology() -> Verdict {
    let r = cli("homology", "zero");
    let ranks = &r.report["homology"]["ranks"];
    let only_zero = ranks.as_object().is_some_and(|m| m.iter().all(|(k, v)| if k == "0" { v == 1 } else { v == 0 }));
    let pass = r.code == Some(0) && only_zero && ranks["0"] == 1 && r.report["homology"]["matches_point"] == true;
    verdict(pass, format!("exit {:?}, ranks {ranks}", r.code))
}

fn nonzero_ranks(r: &RunReport) -> Option<BTreeMap<i64, usize>> {
    r.homology.as_ref().map(|h| h.ranks.iter().filter(|(_, &v)| v > 0).map(|(&k, &v)| (k, v)).collect())
}

fn counts(r: &RunReport) -> Vec<(usize, usize, usize)> {
    r.orbits.iter().map(|p| (p.from, p.to, p.count)).collect()
}

// 10. pitchfork homology and its invariance
fn pitchfork_homology(base: &RunReport, doubled: &RunReport, perturbed: &[RunReport]) -> Verdict {
    let Some(cat) = &base.catalogue else { return verdict(false, format!("no catalogue: {:?}", base.message)) };
    let mut indices: Vec<i64> = cat.points.iter().map(|p| p.index).collect();
    indices.sort_unstable_by(|a, b| b.cmp(a));
    let boundary = base.complex.as_ref().and_then(|c| c.boundaries.get(&1).cloned());
    let squared_zero = base.complex.as_ref().is_some_and(|c| c.boundary_squared_zero);
    let expected: BTreeMap<i64, usize> = [(0, 1)].into();
    let ranks_ok = nonzero_ranks(base).as_ref() == Some(&expected);
    let reference = counts(base);
    let invariant = std::iter::once(doubled).chain(perturbed).all(|r| r.status == "ok" && counts(r) == reference && nonzero_ranks(r).as_ref() == Some(&expected));
    let pass = base.status == "ok"
        && indices == vec![1, 0, 0]
        && boundary == Some(vec![vec![1], vec![1]])
        && squared_zero
        && ranks_ok
        && invariant;
    verdict(
        pass,
        format!(
            "indices {indices:?}, d1 {boundary:?}, ranks {:?}; counts n=64 {reference:?}, n=128 {:?}, perturbed {:?}",
            nonzero_ranks(base),
            counts(doubled),
            perturbed.iter().map(counts).collect::<Vec<_>>()
        ),
    )
}

// 11. rank agreement across couplings
fn functoriality(runs: &[(&str, &RunReport)]) -> Verdict {
    let reports: Option<Vec<HomologyReport>> = runs
        .iter()
        .map(|(_, r)| r.homology.as_ref().map(|h| HomologyReport { ranks: h.ranks.clone(), matches_point: h.matches_point }))
        .collect();
    let Some(reports) = reports else { return verdict(false, "a run produced no homology") };
    let refs: Vec<&HomologyReport> = reports.iter().collect();
    let check = functoriality_check(&refs);
    let labels: Vec<String> = runs.iter().zip(&check.ranks).map(|((n, _), r)| format!("{n} {r:?}")).collect();
    verdict(check.consistent, labels.join(", "))
}

// 12. refusals through the command line
fn refusals() -> Verdict {
    let deg = cli("homology", "degenerate");
    let starved = cli("homology", "starved");
    let refused = |r: &CliRun, reason: &str| {
        r.code == Some(2) && r.report["reason"] == reason && r.report["homology"].is_null() && r.stderr.contains(reason)
    };
    let pass = refused(&deg, "non-Morse") && refused(&starved, "count-uncertain");
    verdict(
        pass,
        format!(
            "degenerate: exit {:?} reason {}; starved: exit {:?} reason {}",
            deg.code, deg.report["reason"], starved.code, starved.report["reason"]
        ),
    )
}

fn homology_run(cfg: &RunConfig) -> RunReport {
    run(Command::Homology, cfg, false).report
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    results.push(("derivative consistency", derivative_consistency()));
    results.push(("monotonicity", monotonicity()));
    results.push(("inversion", inversion()));
    results.push(("gradient-like field", gradient_like()));

    let pitchfork = load("pitchfork");
    let base = homology_run(&pitchfork);
    let mut doubled_cfg = pitchfork.clone();
    doubled_cfg.mesh.n_per_axis = 128;
    let doubled = homology_run(&doubled_cfg);
    let perturbed: Vec<RunReport> = [11, 12]
        .into_iter()
        .map(|seed| {
            let mut c = pitchfork.clone();
            c.perturbation = Some(PerturbationBlock { seed, amplitude: 0.1 });
            homology_run(&c)
        })
        .collect();

    results.push(("linear growth", linear_growth(&base)));
    results.push(("index computations", indices()));
    results.push(("fredholm lab", fredholm_lab()));
    results.push(("transversality", transversality(&[("n=64", &base), ("n=128", &doubled)])));
    results.push(("homology, trivial case", trivial_homology()));
    results.push(("homology, pitchfork", pitchfork_homology(&base, &doubled, &perturbed)));

    let with = |family: FamilyBlock| {
        let mut c = pitchfork.clone();
        c.nonlinearity = NonlinearityBlock { family, alpha1: None, alpha2: None };
        homology_run(&c)
    };
    let zero = with(FamilyBlock::Zero);
    let bilinear = with(FamilyBlock::Bilinear { lambda: 0.1 });
    results.push(("functoriality", functoriality(&[("zero", &zero), ("bilinear 0.1", &bilinear), ("pitchfork", &base)])));
    results.push(("refusals", refusals()));

    let mut failed = 0;
    for (k, (name, v)) in results.iter().enumerate() {
        println!("[{}] {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed in {:.1} s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
