//! Run configuration: JSON in, fully resolved echo out.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use morsekit_core::complex::{OrbitOptions, RunOptions};
use morsekit_core::critical::Strategy;
use morsekit_core::fredholm::{RankPolicy, RANK_CUT, STRADDLE_BAND};
use morsekit_core::functional::FunctionalConfig;
use morsekit_core::mesh::Mesh;
use morsekit_core::nonlinearity::{Family, Monomial, NonlinearitySpec};
use morsekit_core::spectral::TOL_DEG;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mesh: MeshBlock,
    pub p: f64,
    pub q: f64,
    pub nonlinearity: NonlinearityBlock,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    /// Stages run by `all`, in pipeline order.
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub critical: CriticalBlock,
    #[serde(default)]
    pub flow: FlowBlock,
    #[serde(default)]
    pub orbits: OrbitBlock,
    #[serde(default)]
    pub perturbation: Option<PerturbationBlock>,
    #[serde(default)]
    pub fredholm: FredholmBlock,
    #[serde(default)]
    pub functorial: FunctorialBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub n_per_axis: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityBlock {
    #[serde(flatten)]
    pub family: FamilyBlock,
    /// Growth exponents; the family's own degrees when absent.
    #[serde(default)]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub alpha2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyBlock {
    Zero,
    QuadraticU { kappa: f64 },
    QuadraticV { mu: f64 },
    Bilinear { lambda: f64 },
    PitchforkU { kappa: f64, gamma: f64 },
    Custom { terms: Vec<TermBlock> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    pub i: u32,
    pub j: u32,
    pub coeff: f64,
}

impl FamilyBlock {
    pub fn to_family(&self) -> Family {
        match self {
            FamilyBlock::Zero => Family::Zero,
            FamilyBlock::QuadraticU { kappa } => Family::QuadraticU { kappa: *kappa },
            FamilyBlock::QuadraticV { mu } => Family::QuadraticV { mu: *mu },
            FamilyBlock::Bilinear { lambda } => Family::Bilinear { lambda: *lambda },
            FamilyBlock::PitchforkU { kappa, gamma } => Family::PitchforkU { kappa: *kappa, gamma: *gamma },
            FamilyBlock::Custom { terms } => Family::Custom {
                terms: terms.iter().map(|t| Monomial { i: t.i, j: t.j, coeff: t.coeff }).collect(),
            },
        }
    }
}

impl NonlinearityBlock {
    pub fn to_spec(&self) -> anyhow::Result<NonlinearitySpec> {
        let family = self.family.to_family();
        let (d1, d2) = family.default_exponents();
        let spec = NonlinearitySpec::new(family, self.alpha1.unwrap_or(d1), self.alpha2.unwrap_or(d2))?;
        Ok(spec)
    }

    /// Same block with the exponents written out.
    pub fn resolved(&self) -> Self {
        let (d1, d2) = self.family.to_family().default_exponents();
        Self { family: self.family.clone(), alpha1: Some(self.alpha1.unwrap_or(d1)), alpha2: Some(self.alpha2.unwrap_or(d2)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol_crit: f64,
    pub tol_deg: f64,
    pub tol_orbit: f64,
    pub rank_cut: f64,
    /// Relative singular values inside this band make a rank indeterminate.
    pub straddle_band: (f64, f64),
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_crit: 1e-10, tol_deg: TOL_DEG, tol_orbit: 1e-9, rank_cut: RANK_CUT, straddle_band: STRADDLE_BAND }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Critpoints,
    Flow,
    Orbits,
    Homology,
    Fredholm,
    Functorial,
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Validate, Stage::Critpoints, Stage::Flow, Stage::Orbits, Stage::Homology, Stage::Fredholm]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticalBlock {
    pub max_newton: usize,
    pub dedup_tol: f64,
    pub amplitudes: Vec<f64>,
    /// Seed budget; `2 + 8·(active modes)` capped at 200 when absent.
    pub budget: Option<usize>,
    pub minimax_seed: bool,
}

impl Default for CriticalBlock {
    fn default() -> Self {
        let s = Strategy::default();
        Self { max_newton: s.max_newton, dedup_tol: s.dedup_tol, amplitudes: s.amplitudes, budget: s.budget, minimax_seed: s.minimax_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowBlock {
    pub lyapunov_samples: usize,
    pub trajectories: usize,
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FlowBlock {
    fn default() -> Self {
        Self { lyapunov_samples: 500, trajectories: 8, t_max: 30.0, rtol: 1e-8, atol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitBlock {
    pub h: f64,
    pub t_max: f64,
    pub rho_fraction: f64,
    pub top_k: usize,
    pub arc_points: usize,
    pub bisection_depth: usize,
    /// Probe trajectories allowed per pair before the count is declared uncertain.
    pub budget: usize,
    pub newton_max: usize,
    /// Probes passing within this many target radii seed shooting.
    pub seed_reach: f64,
    pub extensions: usize,
    pub dedup_tol: f64,
    /// Extra perturbation seeds tried when a transversality certificate fails.
    pub transversality_retries: usize,
}

impl Default for OrbitBlock {
    fn default() -> Self {
        let o = OrbitOptions::default();
        Self {
            h: o.h,
            t_max: o.t_max,
            rho_fraction: o.rho_fraction,
            top_k: o.top_k,
            arc_points: o.arc_points,
            bisection_depth: o.bisection_depth,
            budget: o.budget,
            newton_max: o.newton_max,
            seed_reach: o.seed_reach,
            extensions: o.extensions,
            dedup_tol: o.dedup_tol,
            transversality_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBlock {
    pub seed: u64,
    pub amplitude: f64,
}

pub const RETRY_AMPLITUDE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FredholmBlock {
    pub sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for FredholmBlock {
    fn default() -> Self {
        Self { sizes: vec![4, 10, 20], trials: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctorialBlock {
    /// Perturbation seeds for repeated runs of the base configuration.
    pub perturbation_seeds: Vec<u64>,
    pub perturbation_amplitude: f64,
    /// Other couplings on the same grid and exponents.
    pub compare: Vec<NonlinearityBlock>,
}

impl Default for FunctorialBlock {
    fn default() -> Self {
        Self { perturbation_seeds: vec![1, 2], perturbation_amplitude: 0.1, compare: Vec::new() }
    }
}

impl RunConfig {
    /// Parses JSON text; errors name the offending key path and line.
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            anyhow!("config parse error at key `{path}` (line {}, column {}): {inner}", inner.line(), inner.column())
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", cfg.schema_version);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    /// Copy with every optional value written out, as echoed in reports.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.nonlinearity = self.nonlinearity.resolved();
        out.functorial.compare = self.functorial.compare.iter().map(NonlinearityBlock::resolved).collect();
        out
    }

    pub fn mesh(&self) -> anyhow::Result<Arc<Mesh>> {
        let m = &self.mesh;
        Ok(Arc::new(Mesh::new(m.dim, &m.extents, m.n_per_axis, m.quad_order)?))
    }

    pub fn functional(&self) -> anyhow::Result<FunctionalConfig> {
        self.functional_with(&self.nonlinearity)
    }

    pub fn functional_with(&self, g: &NonlinearityBlock) -> anyhow::Result<FunctionalConfig> {
        Ok(FunctionalConfig::new(self.mesh()?, self.p, self.q, g.to_spec()?)?)
    }

    pub fn rank_policy(&self) -> anyhow::Result<RankPolicy> {
        Ok(RankPolicy::new(self.tolerances.rank_cut, self.tolerances.straddle_band)?)
    }

    pub fn strategy(&self) -> Strategy {
        let c = &self.critical;
        Strategy {
            tol_crit: self.tolerances.tol_crit,
            max_newton: c.max_newton,
            tol_deg: self.tolerances.tol_deg,
            dedup_tol: c.dedup_tol,
            amplitudes: c.amplitudes.clone(),
            budget: c.budget,
            minimax_seed: c.minimax_seed,
            seed: self.seed,
        }
    }

    pub fn orbit_options(&self) -> anyhow::Result<OrbitOptions> {
        let o = &self.orbits;
        Ok(OrbitOptions {
            h: o.h,
            t_max: o.t_max,
            rho_fraction: o.rho_fraction,
            top_k: o.top_k,
            arc_points: o.arc_points,
            bisection_depth: o.bisection_depth,
            budget: o.budget,
            tol_orbit: self.tolerances.tol_orbit,
            newton_max: o.newton_max,
            seed_reach: o.seed_reach,
            extensions: o.extensions,
            dedup_tol: o.dedup_tol,
            rank: self.rank_policy()?,
            ..OrbitOptions::default()
        })
    }

    pub fn run_options(&self) -> anyhow::Result<RunOptions> {
        Ok(RunOptions {
            strategy: self.strategy(),
            orbits: self.orbit_options()?,
            perturbation: self.perturbation.as_ref().map(|p| (p.seed, p.amplitude)),
            seed: self.seed,
        })
    }
}
