//! Serializable run report.
//!
//! Every numeric field is copied from a core result; nothing here computes.

use std::collections::BTreeMap;

use morsekit_core::complex::{ChainComplexData, ConnectingOrbit, FunctorialityReport, HomologyReport, OrbitSearch};
use morsekit_core::critical::{Catalogue, CriticalPoint, Provenance, SplitSummary};
use morsekit_core::flow::{LyapunovReport, PsReport, Terminal, Trajectory};
use morsekit_core::fredholm::{LabTrial, RankPolicy};
use morsekit_core::nonlinearity::{GrowthVerdict, Regime};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    /// `ok`, `refused` or `error`.
    pub status: String,
    /// Machine-readable code for refusals and errors.
    pub reason: Option<String>,
    pub message: Option<String>,
    pub growth: Option<GrowthReport>,
    pub catalogue: Option<CatalogueReport>,
    pub ps: Option<PsSummary>,
    pub lyapunov: Option<LyapunovSummary>,
    pub trajectories: Vec<TrajectorySummary>,
    pub orbits: Vec<PairReport>,
    pub complex: Option<ComplexReport>,
    pub homology: Option<HomologySummary>,
    pub fredholm: Option<FredholmReport>,
    pub functorial: Option<FunctorialSummary>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per stage; the only nondeterministic field.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.resolved(),
            status: "ok".into(),
            reason: None,
            message: None,
            growth: None,
            catalogue: None,
            ps: None,
            lyapunov: None,
            trajectories: Vec::new(),
            orbits: Vec::new(),
            complex: None,
            homology: None,
            fredholm: None,
            functorial: None,
            warnings: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// JSON text with the timings block emptied, for reproducibility checks.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.timings.clear();
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub admissible: bool,
    /// `strict`, `refined` or `inadmissible`.
    pub regime: String,
    pub epsilon: Option<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub checks: Vec<GrowthCheckReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthCheckReport {
    pub name: String,
    pub epsilon: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub passed: bool,
}

impl GrowthReport {
    pub fn of(v: &GrowthVerdict, alpha1: f64, alpha2: f64) -> Self {
        let (regime, epsilon) = match v.regime {
            Regime::Strict => ("strict", None),
            Regime::Refined { epsilon } => ("refined", Some(epsilon)),
            Regime::Inadmissible => ("inadmissible", None),
        };
        Self {
            admissible: v.admissible,
            regime: regime.into(),
            epsilon,
            alpha1,
            alpha2,
            checks: v
                .checks
                .iter()
                .map(|c| GrowthCheckReport { name: c.name.clone(), epsilon: c.epsilon, lhs: c.lhs, rhs: c.rhs, margin: c.margin, passed: c.passed() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogueReport {
    pub budget: usize,
    pub seeds_tried: usize,
    pub active_modes: usize,
    pub morse: bool,
    pub points: Vec<PointReport>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointReport {
    pub id: usize,
    pub f: f64,
    pub index: i64,
    pub residual: f64,
    pub gap: f64,
    pub m_minus: usize,
    pub m_zero: usize,
    pub n_v: usize,
    /// Radius of the certified linear patch.
    pub radius: f64,
    /// Sampled descent constant inside the patch.
    pub margin: f64,
    pub certified: bool,
    pub certificate_error: Option<String>,
    pub provenance: String,
    /// Lowest and highest `n_v + 5` pencil eigenvalues plus any in the degenerate band.
    pub eigenvalues: Vec<f64>,
}

pub fn provenance_label(p: &Provenance) -> String {
    match p {
        Provenance::Origin => "origin".into(),
        Provenance::Mode { component, mode, amplitude } => {
            format!("mode:{}:{mode}:{amplitude}", if *component == 0 { "u" } else { "v" })
        }
        Provenance::MinimaxFlow => "minimax-flow".into(),
        Provenance::Mirror { of, component } => format!("mirror:{of}:{}", if *component == 0 { "u" } else { "v" }),
        Provenance::User { index } => format!("user:{index}"),
        Provenance::Continuation { from } => format!("continuation:{from}"),
    }
}

pub fn truncated_eigenvalues(s: &SplitSummary) -> Vec<f64> {
    let n = s.eigenvalues.len();
    let keep = s.n_v + 5;
    if 2 * keep >= n {
        return s.eigenvalues.clone();
    }
    s.eigenvalues
        .iter()
        .enumerate()
        .filter(|(i, l)| *i < keep || *i >= n - keep || l.abs() <= s.tol_deg)
        .map(|(_, &l)| l)
        .collect()
}

impl PointReport {
    pub fn of(p: &CriticalPoint) -> Self {
        Self {
            id: p.id,
            f: p.f,
            index: p.index(),
            residual: p.residual,
            gap: p.split.gap,
            m_minus: p.split.m_minus,
            m_zero: p.split.m_zero,
            n_v: p.split.n_v,
            radius: p.radius(),
            margin: p.margin(),
            certified: p.is_certified(),
            certificate_error: p.certificate_error.clone(),
            provenance: provenance_label(&p.provenance),
            eigenvalues: truncated_eigenvalues(&p.split),
        }
    }
}

impl CatalogueReport {
    pub fn of(c: &Catalogue) -> Self {
        Self {
            budget: c.budget,
            seeds_tried: c.seeds_tried,
            active_modes: c.active_modes,
            morse: c.is_morse(),
            points: c.points.iter().map(PointReport::of).collect(),
            failures: c.failures.iter().map(|f| format!("{}: {}", provenance_label(&f.provenance), f.message)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsSummary {
    pub exponents: (f64, f64),
    pub fitted_constant: f64,
    pub radius: f64,
    pub low_gradient_states: usize,
    pub low_gradient_max_norm: f64,
    pub critical_max_norm: f64,
    pub critical_inside: bool,
    pub growth_ratio: f64,
    pub growth_max_state_norm: f64,
    pub compact_exponent: Option<f64>,
    pub compact_exponent_bound: f64,
}

impl PsSummary {
    pub fn of(p: &PsReport) -> Self {
        Self {
            exponents: p.exponents,
            fitted_constant: p.fitted_constant,
            radius: p.radius,
            low_gradient_states: p.low_gradient_states,
            low_gradient_max_norm: p.low_gradient_max_norm,
            critical_max_norm: p.critical_max_norm,
            critical_inside: p.critical_inside,
            growth_ratio: p.growth_ratio,
            growth_max_state_norm: p.growth_max_state_norm,
            compact_exponent: p.compact_exponent,
            compact_exponent_bound: p.compact_exponent_bound,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovSummary {
    pub samples: usize,
    pub violations: usize,
    pub worst_cosine: f64,
}

impl LyapunovSummary {
    pub fn of(l: &LyapunovReport) -> Self {
        Self { samples: l.samples, violations: l.violations, worst_cosine: l.worst_cosine }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: usize,
    pub steps: usize,
    pub duration: f64,
    /// `converged`, `max-time` or `escaped`.
    pub terminal: String,
    pub converged_to: Option<usize>,
    pub f_start: f64,
    pub f_end: f64,
    pub max_f_increase: f64,
    pub final_field_norm: f64,
    pub csv: Option<String>,
}

impl TrajectorySummary {
    pub fn of(index: usize, t: &Trajectory) -> Self {
        let (terminal, converged_to) = match t.terminal {
            Terminal::Converged { id } => ("converged", Some(id)),
            Terminal::MaxTime => ("max-time", None),
            Terminal::Escaped => ("escaped", None),
        };
        Self {
            index,
            steps: t.len(),
            duration: t.duration(),
            terminal: terminal.into(),
            converged_to,
            f_start: t.f_values.first().copied().unwrap_or(f64::NAN),
            f_end: t.f_values.last().copied().unwrap_or(f64::NAN),
            max_f_increase: t.max_f_increase(),
            final_field_norm: t.field_norms.last().copied().unwrap_or(f64::NAN),
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub from: usize,
    pub to: usize,
    pub count: usize,
    pub probes_used: usize,
    pub newton_failures: Vec<String>,
    pub orbits: Vec<OrbitReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitReport {
    pub samples: usize,
    pub h: f64,
    pub residual: f64,
    pub f_start: f64,
    pub f_end: f64,
    pub index: i64,
    pub kernel: usize,
    pub cokernel: usize,
    pub kernel_angle: f64,
    pub csv: Option<String>,
}

impl OrbitReport {
    pub fn of(o: &ConnectingOrbit) -> Self {
        Self {
            samples: o.states.len(),
            h: o.h,
            residual: o.residual,
            f_start: o.f_values.first().copied().unwrap_or(f64::NAN),
            f_end: o.f_values.last().copied().unwrap_or(f64::NAN),
            index: o.transversality.index,
            kernel: o.transversality.kernel,
            cokernel: o.transversality.cokernel,
            kernel_angle: o.transversality.kernel_angle,
            csv: None,
        }
    }
}

impl PairReport {
    pub fn of(s: &OrbitSearch) -> Self {
        Self {
            from: s.from,
            to: s.to,
            count: s.count(),
            probes_used: s.probes_used,
            newton_failures: s.newton_failures.clone(),
            orbits: s.orbits.iter().map(OrbitReport::of).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexReport {
    /// Critical-point ids per grade.
    pub grades: BTreeMap<i64, Vec<usize>>,
    /// Boundary from grade `k` to `k − 1`, rows indexed by grade `k − 1`.
    pub boundaries: BTreeMap<i64, Vec<Vec<u8>>>,
    pub boundary_squared_zero: bool,
}

impl ComplexReport {
    pub fn of(c: &ChainComplexData) -> Self {
        let squared_zero = c.boundaries.iter().all(|(k, d)| match c.boundaries.get(&(k + 1)) {
            Some(next) => d.mul(next).is_zero(),
            None => true,
        });
        Self {
            grades: c.grades.clone(),
            boundaries: c.boundaries.iter().map(|(&k, d)| (k, d.to_rows())).collect(),
            boundary_squared_zero: squared_zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomologySummary {
    pub ranks: BTreeMap<i64, usize>,
    pub matches_point: bool,
}

impl HomologySummary {
    pub fn of(h: &HomologyReport) -> Self {
        Self { ranks: h.ranks.clone(), matches_point: h.matches_point }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FredholmReport {
    pub rank_cut: f64,
    pub straddle_band: (f64, f64),
    pub trials: Vec<FredholmRow>,
    pub all_hold: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FredholmRow {
    pub n: usize,
    pub trial: usize,
    pub kernel: usize,
    pub cokernel: usize,
    pub index: i64,
    pub dim_neg_minus: usize,
    pub dim_neg_plus: usize,
    pub pair_index: i64,
    pub alternate_index: i64,
    pub holds: bool,
}

impl FredholmReport {
    pub fn of(policy: &RankPolicy, trials: &[LabTrial]) -> Self {
        let rows: Vec<FredholmRow> = trials
            .iter()
            .map(|t| FredholmRow {
                n: t.n,
                trial: t.trial,
                kernel: t.report.kernel,
                cokernel: t.report.cokernel,
                index: t.report.index,
                dim_neg_minus: t.report.dim_neg_minus,
                dim_neg_plus: t.report.dim_neg_plus,
                pair_index: t.report.pair_index,
                alternate_index: t.report.alternate_index,
                holds: t.report.formula_holds(),
            })
            .collect();
        Self { rank_cut: policy.cut, straddle_band: policy.band, all_hold: rows.iter().all(|r| r.holds), trials: rows }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctorialSummary {
    pub runs: Vec<FunctorialRun>,
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctorialRun {
    pub label: String,
    /// Nonzero ranks only; `None` when the run was refused.
    pub ranks: Option<BTreeMap<i64, usize>>,
    pub reason: Option<String>,
}

impl FunctorialSummary {
    pub fn of(labels: Vec<String>, check: &FunctorialityReport) -> Self {
        let runs = labels
            .into_iter()
            .zip(&check.ranks)
            .map(|(label, r)| FunctorialRun { label, ranks: Some(r.clone()), reason: None })
            .collect();
        Self { runs, consistent: check.consistent }
    }
}
