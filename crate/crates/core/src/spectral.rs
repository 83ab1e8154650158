//! Weighted inner product, Hessian pencil, relative index and the sampled
//! Lyapunov certificate near a critical point.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::BandedSym;
use crate::duality::dp_jacobian;
use crate::error::{Error, Result};
use crate::functional::FunctionalConfig;
use crate::mesh::State;

/// Default width of the degenerate band relative to the spectral radius.
pub const TOL_DEG: f64 = 1e-8;
/// Number of certificate samples per trial radius.
pub const LYAPUNOV_SAMPLES: usize = 500;

/// Block-diagonal Gram matrix of the weighted inner product at a base state.
#[derive(Debug, Clone)]
pub struct WeightedGram {
    pub uu: BandedSym,
    pub vv: BandedSym,
}

impl WeightedGram {
    pub fn at(cfg: &FunctionalConfig, x: &DVector<f64>) -> Result<Self> {
        cfg.check_flat(x)?;
        let (u, v) = cfg.split(x);
        let g = Self {
            uu: dp_jacobian(cfg.mesh(), cfg.p(), u),
            vv: dp_jacobian(cfg.mesh(), cfg.q(), v),
        };
        g.uu.cholesky()?;
        g.vv.cholesky()?;
        Ok(g)
    }

    pub fn nodes(&self) -> usize {
        self.uu.dim()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.nodes();
        let (a, b) = x.as_slice().split_at(n);
        let mut out = DVector::zeros(2 * n);
        out.as_mut_slice()[..n].copy_from_slice(&self.uu.mul_vec(a));
        out.as_mut_slice()[n..].copy_from_slice(&self.vv.mul_vec(b));
        out
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mul(x)).max(0.0).sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.nodes();
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        b.view_mut((0, 0), (n, n)).copy_from(&self.uu.to_dense());
        b.view_mut((n, n), (n, n)).copy_from(&self.vv.to_dense());
        b
    }
}

pub fn weighted_gram(cfg: &FunctionalConfig, s: &State) -> Result<WeightedGram> {
    cfg.check_state(s)?;
    WeightedGram::at(cfg, &s.to_flat())
}

/// Spectral splitting of `A x = λ B x` with `A = d²f(s)` and `B` the weighted Gram.
#[derive(Debug, Clone)]
pub struct HessianSplit {
    pub base: DVector<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// B-orthonormal columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub gram: WeightedGram,
    pub m_minus: usize,
    pub m_zero: usize,
    pub m_plus: usize,
    /// Smallest `|λ|` outside the degenerate band.
    pub gap: f64,
    /// Absolute width of the degenerate band.
    pub tol_deg: f64,
    pub n_v: usize,
}

impl HessianSplit {
    pub fn is_degenerate(&self) -> bool {
        self.m_zero > 0
    }

    /// `m⁻ − n_v`.
    pub fn relative_index(&self) -> i64 {
        self.m_minus as i64 - self.n_v as i64
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    /// Columns spanning X⁻.
    pub fn negative_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.m_minus).into_owned()
    }

    /// Columns spanning X⁺.
    pub fn positive_basis(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        self.eigenvectors.columns(n - self.m_plus, self.m_plus).into_owned()
    }

    /// Index of the eigenvalue of smallest modulus.
    pub fn softest(&self) -> usize {
        (0..self.eigenvalues.len())
            .min_by(|&a, &b| self.eigenvalues[a].abs().total_cmp(&self.eigenvalues[b].abs()))
            .unwrap_or(0)
    }
}

/// Generalized symmetric-definite eigenproblem `A x = λ B x`, ascending.
pub fn pencil_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Assembly("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let la = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&la.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let x = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok((values, x))
}

/// Splits the Hessian pencil at `x`; `tol_deg` is relative to the spectral radius.
pub fn split_at(cfg: &FunctionalConfig, x: &DVector<f64>, tol_deg: f64) -> Result<HessianSplit> {
    if !(tol_deg > 0.0) {
        return Err(Error::Domain(format!("tol_deg must be positive, got {tol_deg}")));
    }
    let gram = WeightedGram::at(cfg, x)?;
    let a = cfg.d2f_matrix(x);
    let (values, vectors) = pencil_eigen(&a, &gram.to_dense())?;
    let radius = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let band = tol_deg * radius;
    let m_minus = values.iter().filter(|&&l| l < -band).count();
    let m_plus = values.iter().filter(|&&l| l > band).count();
    let m_zero = values.len() - m_minus - m_plus;
    let gap = values
        .iter()
        .filter(|l| l.abs() > band)
        .fold(f64::INFINITY, |m, l| m.min(l.abs()));
    Ok(HessianSplit {
        base: x.clone(),
        eigenvalues: values,
        eigenvectors: vectors,
        gram,
        m_minus,
        m_zero,
        m_plus,
        gap: if gap.is_finite() { gap } else { 0.0 },
        tol_deg: band,
        n_v: cfg.nodes(),
    })
}

pub fn hessian_split(cfg: &FunctionalConfig, s: &State, tol_deg: f64) -> Result<HessianSplit> {
    cfg.check_state(s)?;
    split_at(cfg, &s.to_flat(), tol_deg)
}

/// The hyperbolic linear field `L = id on X⁻, −id on X⁺` around a critical point.
#[derive(Debug, Clone)]
pub struct LocalLinearField {
    pub center: DVector<f64>,
    /// B-orthonormal basis of X⁻.
    pub unstable: DMatrix<f64>,
    /// `unstableᵀ B`, the coordinate map onto X⁻.
    pub unstable_coords: DMatrix<f64>,
    pub gram: WeightedGram,
    pub radius: f64,
    /// Smallest sampled `−df(s+x)[Lx] / ‖x‖²_B`.
    pub margin: f64,
    pub samples: usize,
}

impl LocalLinearField {
    fn build(split: &HessianSplit) -> Self {
        let unstable = split.negative_basis();
        let mut unstable_coords = DMatrix::zeros(unstable.ncols(), split.base.len());
        for (k, c) in unstable.column_iter().enumerate() {
            unstable_coords.row_mut(k).copy_from(&split.gram.mul(&c.into_owned()).transpose());
        }
        Self {
            center: split.base.clone(),
            unstable,
            unstable_coords,
            gram: split.gram.clone(),
            radius: 0.0,
            margin: 0.0,
            samples: 0,
        }
    }

    /// `L y = 2 P⁻ y − y` for a displacement `y`.
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        if self.unstable.ncols() == 0 {
            return -y;
        }
        let c = &self.unstable_coords * y;
        &self.unstable * c * 2.0 - y
    }

    /// `L (x − center)`.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply(&(x - &self.center))
    }

    /// Coordinates of a displacement along X⁻.
    pub fn unstable_part(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.unstable_coords * y
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.gram.norm(&(x - &self.center))
    }

    /// `diag(+1 on X⁻, −1 on X⁺)` in the eigenbasis, ascending eigenvalue order.
    pub fn matrix_in_eigenbasis(&self, total: usize) -> DMatrix<f64> {
        DMatrix::from_fn(total, total, |i, j| {
            if i != j {
                0.0
            } else if i < self.unstable.ncols() {
                1.0
            } else {
                -1.0
            }
        })
    }
}

/// Samples `x` with `‖x‖_B ≤ r`: eigen rays first, then random directions.
fn certificate_samples(split: &HessianSplit, r: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let total = split.eigenvalues.len();
    let mut by_softness: Vec<usize> = (0..total).collect();
    by_softness.sort_by(|&a, &b| split.eigenvalues[a].abs().total_cmp(&split.eigenvalues[b].abs()));
    let mut out = Vec::with_capacity(count);
    for &k in by_softness.iter().take(8) {
        for scale in [1.0, -1.0, 0.5, -0.5] {
            if out.len() < count {
                out.push(split.eigenvectors.column(k) * (scale * r));
            }
        }
    }
    let soft = by_softness.len().min(16);
    while out.len() < count {
        let mut coeffs = DVector::zeros(total);
        if out.len() % 2 == 0 {
            for &k in &by_softness[..soft] {
                coeffs[k] = gaussian(rng);
            }
        } else {
            for k in 0..total {
                coeffs[k] = gaussian(rng);
            }
        }
        let norm = coeffs.norm();
        if norm == 0.0 {
            continue;
        }
        let radius = r * rng.random_range(f64::EPSILON..=1.0).powf(0.25);
        out.push(&split.eigenvectors * coeffs * (radius / norm));
    }
    out
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

/// Largest `r` in `r_grid` passing the sampled Lyapunov test
/// `df(s + x)[L x] < 0` for `‖x‖_B ≤ r`.
pub fn local_field(cfg: &FunctionalConfig, split: &HessianSplit, r_grid: &[f64], seed: u64) -> Result<LocalLinearField> {
    if split.is_degenerate() {
        return Err(Error::Certificate(format!(
            "degenerate Hessian: {} eigenvalues within {:e} of zero",
            split.m_zero, split.tol_deg
        )));
    }
    let mut field = LocalLinearField::build(split);
    let mut grid: Vec<f64> = r_grid.iter().copied().filter(|r| *r > 0.0 && r.is_finite()).collect();
    grid.sort_by(|a, b| b.total_cmp(a));
    for (k, &r) in grid.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut worst = f64::INFINITY;
        let mut ok = true;
        for x in certificate_samples(split, r, LYAPUNOV_SAMPLES, &mut rng) {
            let lx = field.apply(&x);
            let d = cfg.df(&(&split.base + &x)).dot(&lx);
            let nx = split.gram.norm(&x);
            if !(d < 0.0) {
                ok = false;
                break;
            }
            worst = worst.min(-d / (nx * nx));
        }
        if ok {
            field.radius = r;
            field.margin = worst;
            field.samples = LYAPUNOV_SAMPLES;
            return Ok(field);
        }
    }
    Err(Error::Certificate(format!(
        "Lyapunov test failed for every trial radius down to {:e}",
        grid.last().copied().unwrap_or(0.0)
    )))
}

/// Geometric trial radii `r_max · 2^{-k}`.
pub fn default_r_grid(r_max: f64) -> Vec<f64> {
    (0..24).map(|k| r_max * 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceReport {
    pub passed: bool,
    pub worst_margin: f64,
    pub samples: usize,
}

/// Samples base points within `radius` of the split's base and directions in
/// X⁺ and X⁻, checking `±d²f(s′)[h, h] ≥ c′‖h‖²_B` with `c′ = worst margin > 0`.
pub fn splitting_persistence_check(
    cfg: &FunctionalConfig,
    split: &HessianSplit,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> PersistenceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = split.eigenvalues.len();
    let mut worst = f64::INFINITY;
    let mut count = 0;
    let mut margin_of = |base: &DVector<f64>, h: &DVector<f64>, negative: bool| {
        let nh = split.gram.norm(h);
        let q = cfg.d2f_bilinear(base, h, h) / (nh * nh);
        worst = worst.min(if negative { -q } else { q });
        count += 1;
    };
    // eigen directions at the base itself
    for k in 0..total {
        if k < split.m_minus || k >= total - split.m_plus {
            margin_of(&split.base, &split.eigenvectors.column(k).into_owned(), k < split.m_minus);
        }
    }
    for i in 0..n_samples {
        let offset = if radius > 0.0 {
            let c = DVector::from_fn(total, |_, _| gaussian(&mut rng));
            let y = &split.eigenvectors * &c;
            let ny = split.gram.norm(&y);
            y * (radius * rng.random_range(0.0..=1.0) / ny)
        } else {
            DVector::zeros(total)
        };
        let base = &split.base + offset;
        let negative = i % 2 == 0 && split.m_minus > 0 || split.m_plus == 0;
        let range = if negative { 0..split.m_minus } else { (total - split.m_plus)..total };
        let mut c = DVector::zeros(total);
        for k in range {
            c[k] = gaussian(&mut rng);
        }
        let h = &split.eigenvectors * c;
        if h.norm() > 0.0 {
            margin_of(&base, &h, negative);
        }
    }
    PersistenceReport {
        passed: worst > 0.0,
        worst_margin: worst,
        samples: count,
    }
}
