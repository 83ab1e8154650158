//! Stage orchestration, refusal classification and CSV tables.

use std::fmt;
use std::time::Instant;

use morsekit_core::complex::{
    assemble_complex, find_orbits, functoriality_check, homology, index_one_pairs, ChainComplexData, ConnectingOrbit,
    HomologyReport, OrbitSearch, PairCount,
};
use morsekit_core::critical::{find_critical_points, Catalogue};
use morsekit_core::flow::{
    assemble_w, calibration_samples, integrate, lyapunov_report, ps_diagnostics, FieldSpec, Perturbation, PsReport,
    StepControl, Trajectory,
};
use morsekit_core::fredholm::lab_trial;
use morsekit_core::functional::FunctionalConfig;
use morsekit_core::nonlinearity::validate_growth;
use morsekit_core::Error as CoreError;
use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{NonlinearityBlock, RunConfig, Stage, RETRY_AMPLITUDE};
use crate::report::{
    CatalogueReport, ComplexReport, FredholmReport, FunctorialRun, FunctorialSummary, GrowthReport, HomologySummary,
    LyapunovSummary, PairReport, PsSummary, RunReport, TrajectorySummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Critpoints,
    Flow,
    Orbits,
    Homology,
    Fredholm,
    Functorial,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Critpoints => "critpoints",
            Command::Flow => "flow",
            Command::Orbits => "orbits",
            Command::Homology => "homology",
            Command::Fredholm => "fredholm",
            Command::Functorial => "functorial",
            Command::All => "all",
        }
    }

    fn stages(self, cfg: &RunConfig) -> Vec<Stage> {
        use Stage::*;
        match self {
            Command::Validate => vec![Validate],
            Command::Critpoints => vec![Validate, Critpoints],
            Command::Flow => vec![Validate, Critpoints, Flow],
            Command::Orbits => vec![Validate, Critpoints, Orbits],
            Command::Homology => vec![Validate, Critpoints, Orbits, Homology],
            Command::Fredholm => vec![Fredholm],
            Command::Functorial => vec![Validate, Functorial],
            Command::All => {
                let mut s = cfg.stages.clone();
                s.sort_by_key(|&st| st as u8);
                s.dedup();
                s
            }
        }
    }
}

/// A finished CSV table with its file name relative to the report.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        Ok(w.into_inner().map_err(|e| anyhow::anyhow!("flushing csv: {e}"))?)
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub report: RunReport,
    pub exit_code: i32,
    pub tables: Vec<CsvTable>,
}

/// Failure classes; refusals exit with 2, errors with 1.
#[derive(Debug)]
pub enum Failure {
    Refused { reason: String, message: String },
    Failed { reason: String, message: String },
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Refused { reason, message } => write!(f, "refused ({reason}): {message}"),
            Failure::Failed { reason, message } => write!(f, "error ({reason}): {message}"),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        let refused = |reason: &str| Failure::Refused { reason: reason.into(), message: message.clone() };
        let failed = |reason: &str| Failure::Failed { reason: reason.into(), message: message.clone() };
        match e {
            CoreError::NonMorse { .. } => refused("non-Morse"),
            CoreError::CountUncertain { .. } => refused("count-uncertain"),
            CoreError::Transversality { .. } => refused("transversality"),
            CoreError::IndeterminateRank { .. } => refused("indeterminate-rank"),
            CoreError::Hyperbolicity { .. } => refused("non-hyperbolic"),
            CoreError::Bifurcation { .. } => refused("bifurcation"),
            CoreError::Config(_) => failed("config"),
            CoreError::Domain(_) => failed("domain"),
            CoreError::Shape(_) => failed("shape"),
            CoreError::Convergence { .. } => failed("convergence"),
            CoreError::Assembly(_) => failed("assembly"),
            CoreError::Numerical(_) => failed("numerical"),
            CoreError::Certificate(_) => failed("certificate"),
            CoreError::Stiffness { .. } => failed("stiffness"),
            CoreError::Consistency(_) => failed("consistency"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<CoreError>() {
            Ok(core) => core.into(),
            Err(e) => Failure::Failed { reason: "config".into(), message: format!("{e:#}") },
        }
    }
}

type StageResult = std::result::Result<(), Failure>;

/// Orbit-stage products for one field.
pub struct OrbitRun {
    pub field: FieldSpec,
    pub ps: PsReport,
    pub searches: Vec<OrbitSearch>,
}

/// Assembles the field for `perturbation` and searches every index-one pair
/// in parallel; results keep pair order.
pub fn search_pairs(
    fc: &FunctionalConfig,
    catalogue: &Catalogue,
    cfg: &RunConfig,
    perturbation: Option<(u64, f64)>,
) -> Result<OrbitRun, Failure> {
    let pert = match perturbation {
        Some((seed, amp)) => Some(Perturbation::new(fc, seed, amp)?),
        None => None,
    };
    let field = assemble_w(fc, catalogue.patches()?, pert)?;
    let ps = ps_diagnostics(&field, &catalogue.states(), cfg.seed)?;
    let mut opts = cfg.orbit_options()?;
    opts.escape_radius = 10.0 * ps.radius.max(1.0);
    let pairs = index_one_pairs(catalogue);
    let results: Vec<_> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let from = catalogue.get(a).expect("pair ids come from the catalogue");
            let to = catalogue.get(b).expect("pair ids come from the catalogue");
            find_orbits(&field, from, to, &opts)
        })
        .collect();
    let mut searches = Vec::with_capacity(results.len());
    for r in results {
        searches.push(r?);
    }
    Ok(OrbitRun { field, ps, searches })
}

/// Orbit search with fresh perturbation seeds after transversality failures.
pub fn search_with_retries(
    fc: &FunctionalConfig,
    catalogue: &Catalogue,
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<OrbitRun, Failure> {
    let base = cfg.perturbation.as_ref().map(|p| (p.seed, p.amplitude));
    let mut attempt = 0;
    loop {
        let pert = if attempt == 0 {
            base
        } else {
            let (seed, amp) = base.unwrap_or((cfg.seed, RETRY_AMPLITUDE));
            Some((seed.wrapping_add(attempt as u64), amp))
        };
        match search_pairs(fc, catalogue, cfg, pert) {
            Err(Failure::Refused { reason, message }) if reason == "transversality" && attempt < cfg.orbits.transversality_retries => {
                attempt += 1;
                warnings.push(format!("{message}; retrying with perturbation attempt {attempt}"));
            }
            other => return other,
        }
    }
}

pub fn boundary_complex(catalogue: &Catalogue, searches: &[OrbitSearch]) -> Result<ChainComplexData, Failure> {
    let counts: Vec<PairCount> = searches.iter().map(|s| PairCount { from: s.from, to: s.to, count: s.count() }).collect();
    Ok(assemble_complex(catalogue, &counts)?)
}

/// Catalogue through homology for one coupling.
pub fn homology_for(cfg: &RunConfig, g: &NonlinearityBlock, perturbation: Option<(u64, f64)>) -> Result<HomologyReport, Failure> {
    let fc = cfg.functional_with(g)?;
    let catalogue = find_critical_points(&fc, &[], &cfg.strategy())?;
    require_morse(&catalogue)?;
    let mut local = cfg.clone();
    local.perturbation = None;
    let mut warnings = Vec::new();
    let run = match perturbation {
        Some(p) => search_pairs(&fc, &catalogue, &local, Some(p))?,
        None => search_with_retries(&fc, &catalogue, &local, &mut warnings)?,
    };
    let complex = boundary_complex(&catalogue, &run.searches)?;
    Ok(homology(&complex))
}

fn require_morse(c: &Catalogue) -> Result<(), Failure> {
    if c.is_morse() {
        Ok(())
    } else {
        let degenerate = c.points.iter().filter(|p| !p.is_certified()).map(|p| p.id).collect();
        Err(CoreError::NonMorse { degenerate }.into())
    }
}

fn state_header(prefix: &[&str], nodes: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((0..nodes).map(|i| format!("u{i}")));
    h.extend((0..nodes).map(|i| format!("v{i}")));
    h
}

fn trajectory_table(name: String, t: &Trajectory, nodes: usize) -> CsvTable {
    let rows = (0..t.len())
        .map(|k| {
            let mut r = vec![t.times[k], t.f_values[k], t.field_norms[k]];
            r.extend(t.states[k].iter());
            r
        })
        .collect();
    CsvTable { name, header: state_header(&["t", "f", "field_norm"], nodes), rows }
}

fn orbit_table(name: String, o: &ConnectingOrbit, nodes: usize) -> CsvTable {
    let rows = o
        .times()
        .into_iter()
        .zip(&o.f_values)
        .zip(&o.states)
        .map(|((t, &f), x)| {
            let mut r = vec![t, f];
            r.extend(x.iter());
            r
        })
        .collect();
    CsvTable { name, header: state_header(&["t", "f"], nodes), rows }
}

/// Starting states: the softest unstable u-direction at each patch, both
/// signs, then seeded samples away from the patches.
fn trajectory_starts(field: &FieldSpec, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let nodes = field.cfg().nodes();
    let mut starts = Vec::new();
    for patch in &field.patches {
        let l = &patch.local;
        let best = (0..l.unstable.ncols()).max_by(|&a, &b| {
            let w = |j: usize| l.unstable.column(j).rows(0, nodes).norm_squared() / l.unstable.column(j).norm_squared();
            w(a).total_cmp(&w(b))
        });
        if let Some(j) = best {
            let d = l.unstable.column(j).into_owned();
            let step = 0.5 * l.radius / l.gram.norm(&d);
            if l.unstable.column(j).rows(0, nodes).norm_squared() > 0.5 * d.norm_squared() {
                starts.push(&l.center + &d * step);
                starts.push(&l.center - &d * step);
            }
        }
    }
    starts.truncate(count);
    if starts.len() < count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A7E_C70E);
        starts.extend(calibration_samples(field, count - starts.len(), &mut rng));
    }
    starts
}

struct Context<'a> {
    cfg: &'a RunConfig,
    report: RunReport,
    tables: Vec<CsvTable>,
    export: bool,
    functional: Option<FunctionalConfig>,
    catalogue: Option<Catalogue>,
    orbit_run: Option<OrbitRun>,
}

impl Context<'_> {
    fn functional(&mut self) -> Result<&FunctionalConfig, Failure> {
        if self.functional.is_none() {
            self.functional = Some(self.cfg.functional()?);
        }
        Ok(self.functional.as_ref().unwrap())
    }

    fn validate(&mut self) -> StageResult {
        let spec = self.cfg.nonlinearity.to_spec()?;
        let verdict = validate_growth(&spec, self.cfg.p, self.cfg.q, self.cfg.mesh.dim)?;
        self.report.growth = Some(GrowthReport::of(&verdict, spec.alpha1(), spec.alpha2()));
        if !verdict.admissible {
            return Err(Failure::Failed { reason: "inadmissible".into(), message: "growth exponents fail every admissibility regime".into() });
        }
        self.cfg.rank_policy()?;
        self.functional()?;
        Ok(())
    }

    fn critpoints(&mut self) -> StageResult {
        let strategy = self.cfg.strategy();
        let catalogue = find_critical_points(self.functional()?, &[], &strategy)?;
        self.report.catalogue = Some(CatalogueReport::of(&catalogue));
        let morse = require_morse(&catalogue);
        self.catalogue = Some(catalogue);
        morse
    }

    fn ensure_catalogue(&mut self) -> StageResult {
        if self.catalogue.is_none() {
            self.critpoints()?;
        }
        Ok(())
    }

    fn flow(&mut self) -> StageResult {
        self.ensure_catalogue()?;
        let fc = self.functional()?.clone();
        let catalogue = self.catalogue.as_ref().unwrap();
        let pert = match &self.cfg.perturbation {
            Some(p) => Some(Perturbation::new(&fc, p.seed, p.amplitude)?),
            None => None,
        };
        let field = assemble_w(&fc, catalogue.patches()?, pert)?;
        let ps = ps_diagnostics(&field, &catalogue.states(), self.cfg.seed)?;
        let lyap = lyapunov_report(&field, self.cfg.flow.lyapunov_samples, self.cfg.seed)?;
        if lyap.violations > 0 {
            self.report.warnings.push(format!("{} of {} samples violate strict descent", lyap.violations, lyap.samples));
        }
        self.report.ps = Some(PsSummary::of(&ps));
        self.report.lyapunov = Some(LyapunovSummary::of(&lyap));
        let ctrl = StepControl { rtol: self.cfg.flow.rtol, atol: self.cfg.flow.atol, ..StepControl::default() };
        let starts = trajectory_starts(&field, self.cfg.flow.trajectories, self.cfg.seed);
        let t_max = self.cfg.flow.t_max;
        let results: Vec<_> = starts.par_iter().map(|s| integrate(&field, s, t_max, &ctrl)).collect();
        let nodes = fc.nodes();
        for (k, r) in results.into_iter().enumerate() {
            let t = r?;
            if t.max_f_increase() > 1e-8 * (1.0 + t.f_values[0].abs()) {
                self.report.warnings.push(format!("trajectory {k}: f increased by {:e}", t.max_f_increase()));
            }
            let mut s = TrajectorySummary::of(k, &t);
            if self.export {
                let name = format!("trajectory_{k}.csv");
                s.csv = Some(name.clone());
                self.tables.push(trajectory_table(name, &t, nodes));
            }
            self.report.trajectories.push(s);
        }
        Ok(())
    }

    fn orbits(&mut self) -> StageResult {
        self.ensure_catalogue()?;
        let fc = self.functional()?.clone();
        let catalogue = self.catalogue.as_ref().unwrap();
        let run = search_with_retries(&fc, catalogue, self.cfg, &mut self.report.warnings)?;
        if self.report.ps.is_none() {
            self.report.ps = Some(PsSummary::of(&run.ps));
        }
        let nodes = fc.nodes();
        for s in &run.searches {
            let mut pr = PairReport::of(s);
            if self.export {
                for (k, (o, rep)) in s.orbits.iter().zip(pr.orbits.iter_mut()).enumerate() {
                    let name = format!("orbit_{}_{}_{k}.csv", s.from, s.to);
                    rep.csv = Some(name.clone());
                    self.tables.push(orbit_table(name, o, nodes));
                }
            }
            self.report.orbits.push(pr);
        }
        let complex = boundary_complex(catalogue, &run.searches)?;
        self.report.complex = Some(ComplexReport::of(&complex));
        self.orbit_run = Some(run);
        Ok(())
    }

    fn homology(&mut self) -> StageResult {
        if self.orbit_run.is_none() {
            self.orbits()?;
        }
        let catalogue = self.catalogue.as_ref().unwrap();
        let run = self.orbit_run.as_ref().unwrap();
        let complex = boundary_complex(catalogue, &run.searches)?;
        let cx = ComplexReport::of(&complex);
        if !cx.boundary_squared_zero {
            return Err(Failure::Failed { reason: "boundary-squared".into(), message: "composite boundary is nonzero".into() });
        }
        self.report.homology = Some(HomologySummary::of(&homology(&complex)));
        Ok(())
    }

    fn fredholm(&mut self) -> StageResult {
        let policy = self.cfg.rank_policy()?;
        let jobs: Vec<(usize, usize)> =
            self.cfg.fredholm.sizes.iter().flat_map(|&n| (0..self.cfg.fredholm.trials).map(move |t| (n, t))).collect();
        let seed = self.cfg.seed;
        let results: Vec<_> = jobs.par_iter().map(|&(n, t)| lab_trial(n, t, seed, &policy)).collect();
        let mut trials = Vec::with_capacity(results.len());
        for r in results {
            trials.push(r?);
        }
        let rep = FredholmReport::of(&policy, &trials);
        let ok = rep.all_hold;
        self.report.fredholm = Some(rep);
        if ok {
            Ok(())
        } else {
            Err(Failure::Failed { reason: "index-mismatch".into(), message: "a lab trial broke the spectral index identity".into() })
        }
    }

    fn functorial(&mut self) -> StageResult {
        let cfg = self.cfg;
        let base_pert = cfg.perturbation.as_ref().map(|p| (p.seed, p.amplitude));
        let mut jobs: Vec<(String, NonlinearityBlock, Option<(u64, f64)>)> = vec![("base".into(), cfg.nonlinearity.clone(), base_pert)];
        for &s in &cfg.functorial.perturbation_seeds {
            jobs.push((format!("base+perturbation:{s}"), cfg.nonlinearity.clone(), Some((s, cfg.functorial.perturbation_amplitude))));
        }
        for (k, g) in cfg.functorial.compare.iter().enumerate() {
            jobs.push((format!("compare:{k}"), g.clone(), None));
        }
        let results: Vec<_> = jobs.par_iter().map(|(_, g, p)| homology_for(cfg, g, *p)).collect();
        let mut runs = Vec::new();
        let mut reports = Vec::new();
        let mut first_failure = None;
        for ((label, _, _), r) in jobs.into_iter().zip(results) {
            match r {
                Ok(h) => {
                    runs.push(FunctorialRun { label, ranks: None, reason: None });
                    reports.push(h);
                }
                Err(f) => {
                    let reason = match &f {
                        Failure::Refused { reason, .. } | Failure::Failed { reason, .. } => reason.clone(),
                    };
                    runs.push(FunctorialRun { label, ranks: None, reason: Some(reason) });
                    first_failure.get_or_insert(f);
                }
            }
        }
        let refs: Vec<&HomologyReport> = reports.iter().collect();
        let check = functoriality_check(&refs);
        let mut ranks = check.ranks.iter();
        for run in runs.iter_mut().filter(|r| r.reason.is_none()) {
            run.ranks = ranks.next().cloned();
        }
        let consistent = check.consistent && first_failure.is_none();
        self.report.functorial = Some(FunctorialSummary { runs, consistent });
        if let Some(f) = first_failure {
            return Err(f);
        }
        if !check.consistent {
            return Err(Failure::Failed { reason: "functoriality-mismatch".into(), message: "homology ranks differ between runs".into() });
        }
        Ok(())
    }
}

/// Runs `command` on a parsed configuration.
pub fn run(command: Command, cfg: &RunConfig, export: bool) -> Outcome {
    let mut ctx = Context {
        cfg,
        report: RunReport::new(command.name(), cfg),
        tables: Vec::new(),
        export,
        functional: None,
        catalogue: None,
        orbit_run: None,
    };
    let mut exit_code = 0;
    for stage in command.stages(cfg) {
        let start = Instant::now();
        let result = match stage {
            Stage::Validate => ctx.validate(),
            Stage::Critpoints => ctx.critpoints(),
            Stage::Flow => ctx.flow(),
            Stage::Orbits => ctx.orbits(),
            Stage::Homology => ctx.homology(),
            Stage::Fredholm => ctx.fredholm(),
            Stage::Functorial => ctx.functorial(),
        };
        ctx.report.timings.insert(format!("{stage:?}").to_lowercase(), start.elapsed().as_secs_f64());
        if let Err(f) = result {
            let (status, code, reason, message) = match f {
                Failure::Refused { reason, message } => ("refused", 2, reason, message),
                Failure::Failed { reason, message } => ("error", 1, reason, message),
            };
            ctx.report.status = status.into();
            ctx.report.reason = Some(reason);
            ctx.report.message = Some(message);
            ctx.report.homology = None;
            exit_code = code;
            break;
        }
    }
    Outcome { report: ctx.report, exit_code, tables: ctx.tables }
}
