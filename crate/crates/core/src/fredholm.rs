//! Fredholm laboratory for `D_A = d/dt + A(t)` with `A(t) = A₀ + K(t)`.
//!
//! Functions decaying at both ends leave `−∞` inside `V⁻(A(−∞))` and arrive
//! inside `V⁺(A(+∞))`. The midpoint discretization on `[−T, T]` is condensed
//! to the boundary: the left subspace is propagated by the one-step transfer
//! maps and intersected with the right subspace, so kernel and cokernel come
//! from one small SVD.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::gaussian;

/// Real parts closer to zero than this count as non-hyperbolic.
pub const TOL_HYP: f64 = 1e-8;
/// Singular values below `RANK_CUT·σ_max` count as zero.
pub const RANK_CUT: f64 = 1e-8;
/// Singular values inside this band (relative to `σ_max`) make the rank ambiguous.
pub const STRADDLE_BAND: (f64, f64) = (1e-10, 1e-6);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Eigenvalues with negative real part.
    Neg,
    /// Eigenvalues with positive real part.
    Pos,
}

/// Smallest `|Re λ|` over the spectrum of `m`.
pub fn hyperbolicity(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(f64::INFINITY, |a, z| a.min(z.re.abs()))
}

/// Matrix sign function by scaled Newton iteration.
pub fn matrix_sign(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut s = m.clone();
    for it in 0..100 {
        let inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("singular iterate in sign iteration at step {it}")))?;
        let det = s.determinant().abs();
        let c = if it < 20 && det.is_finite() && det > 0.0 { det.powf(-1.0 / n as f64) } else { 1.0 };
        let next = (&s * c + inv / c) * 0.5;
        let delta = (&next - &s).abs().column_sum().max();
        let scale = next.abs().column_sum().max();
        s = next;
        if delta <= 1e-14 * scale && c == 1.0 || delta <= 1e-15 * scale {
            return Ok(s);
        }
        if it >= 20 && delta <= 1e-13 * scale {
            // one more unscaled step settles the last digits
            let inv = s.clone().try_inverse().ok_or_else(|| Error::Numerical("singular sign iterate".into()))?;
            return Ok((&s + inv) * 0.5);
        }
    }
    Err(Error::Convergence { what: "matrix sign iteration", iterations: 100, residual: f64::NAN })
}

/// Real orthonormal basis of the invariant subspace for the chosen half plane.
pub fn spectral_projection(m: &DMatrix<f64>, side: Side) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("spectral projection needs a square map, got {}x{}", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    let eig = m.complex_eigenvalues();
    let min_abs_real = eig.iter().fold(f64::INFINITY, |a, z| a.min(z.re.abs()));
    let scale = eig.iter().fold(1.0f64, |a, z| a.max(z.re.hypot(z.im)));
    if min_abs_real < TOL_HYP * scale {
        return Err(Error::Hyperbolicity { min_abs_real });
    }
    let dim = eig.iter().filter(|z| (z.re < 0.0) == (side == Side::Neg)).count();
    if dim == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if dim == n {
        return Ok(DMatrix::identity(n, n));
    }
    let s = matrix_sign(m)?;
    let sign = if side == Side::Neg { -1.0 } else { 1.0 };
    let proj = (DMatrix::identity(n, n) + s * sign) * 0.5;
    Ok(range_basis(&proj, dim))
}

/// Leading `k` columns of a pivoted QR, an orthonormal basis of the range of a rank-`k` matrix.
pub fn range_basis(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.clone().col_piv_qr().q().columns(0, k).into_owned()
}

/// `A(t) = A₀ + K(t)` with `K` tabulated on a uniform grid and extended by constants.
#[derive(Debug, Clone)]
pub struct OperatorPath {
    pub a0: DMatrix<f64>,
    /// Grid ends; the table spans `[t_min, t_max]`.
    pub t_min: f64,
    pub t_max: f64,
    pub table: Vec<DMatrix<f64>>,
    pub k_minus: DMatrix<f64>,
    pub k_plus: DMatrix<f64>,
}

impl OperatorPath {
    pub fn new(a0: DMatrix<f64>, t_min: f64, t_max: f64, table: Vec<DMatrix<f64>>, k_minus: DMatrix<f64>, k_plus: DMatrix<f64>) -> Result<Self> {
        let n = a0.nrows();
        if !a0.is_square() || table.len() < 2 || !(t_max > t_min) {
            return Err(Error::Config("operator path needs a square A₀, a table of at least two samples and t_max > t_min".into()));
        }
        for k in table.iter().chain([&k_minus, &k_plus]) {
            if k.shape() != (n, n) {
                return Err(Error::Shape(format!("K sample of shape {:?}, expected {n}x{n}", k.shape())));
            }
        }
        let tol = 1e-8 * (1.0 + k_minus.norm().max(k_plus.norm()));
        if (&table[0] - &k_minus).norm() > tol || (table.last().unwrap() - &k_plus).norm() > tol {
            return Err(Error::Config("K table ends do not match the asymptotic values".into()));
        }
        Ok(Self { a0, t_min, t_max, table, k_minus, k_plus })
    }

    /// Constant path `A(t) ≡ A`.
    pub fn constant(a0: DMatrix<f64>, a: &DMatrix<f64>) -> Result<Self> {
        let k = a - &a0;
        Self::new(a0, -1.0, 1.0, alloc::vec![k.clone(), k.clone()], k.clone(), k)
    }

    /// Tabulates `K(t) = K₋ + (K₊ − K₋)(1 + tanh t)/2` on `samples` points of `[−t_end, t_end]`.
    pub fn tanh_blend(a0: DMatrix<f64>, a_minus: &DMatrix<f64>, a_plus: &DMatrix<f64>, t_end: f64, samples: usize) -> Result<Self> {
        let km = a_minus - &a0;
        let kp = a_plus - &a0;
        let table: Vec<DMatrix<f64>> = (0..samples)
            .map(|i| {
                let t = -t_end + 2.0 * t_end * i as f64 / (samples - 1) as f64;
                let w = 0.5 * (1.0 + t.tanh());
                &km * (1.0 - w) + &kp * w
            })
            .collect();
        // the table ends sit within tanh's saturation, snap them to the limits
        let mut table = table;
        table[0] = km.clone();
        *table.last_mut().unwrap() = kp.clone();
        Self::new(a0, -t_end, t_end, table, km, kp)
    }

    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn k_at(&self, t: f64) -> DMatrix<f64> {
        if t <= self.t_min {
            return self.k_minus.clone();
        }
        if t >= self.t_max {
            return self.k_plus.clone();
        }
        let s = (t - self.t_min) / (self.t_max - self.t_min) * (self.table.len() - 1) as f64;
        let i = (s.floor() as usize).min(self.table.len() - 2);
        let w = s - i as f64;
        &self.table[i] * (1.0 - w) + &self.table[i + 1] * w
    }

    pub fn a_at(&self, t: f64) -> DMatrix<f64> {
        &self.a0 + self.k_at(t)
    }

    pub fn a_minus(&self) -> DMatrix<f64> {
        &self.a0 + &self.k_minus
    }

    pub fn a_plus(&self) -> DMatrix<f64> {
        &self.a0 + &self.k_plus
    }
}

/// Kernel and cokernel of the condensed boundary problem.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub kernel: usize,
    pub cokernel: usize,
    pub singular_values: Vec<f64>,
    /// Kernel directions at the right end, orthonormal.
    pub kernel_right: DMatrix<f64>,
}

/// Rank cut and ambiguity band, both relative to the largest singular value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    pub cut: f64,
    pub band: (f64, f64),
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self { cut: RANK_CUT, band: STRADDLE_BAND }
    }
}

impl RankPolicy {
    pub fn new(cut: f64, band: (f64, f64)) -> Result<Self> {
        if !(cut > 0.0 && band.0 > 0.0 && band.0 <= cut && cut <= band.1 && band.1 < 1.0) {
            return Err(Error::Config(format!("rank cut {cut:e} must lie inside the band [{:e}, {:e}] below 1", band.0, band.1)));
        }
        Ok(Self { cut, band })
    }

    /// Rank of a singular-value profile, or an indeterminate-rank error.
    pub fn rank(&self, singular_values: &[f64]) -> Result<usize> {
        let smax = singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        if smax == 0.0 {
            return Ok(0);
        }
        if singular_values.iter().any(|&s| s >= self.band.0 * smax && s <= self.band.1 * smax) {
            return Err(Error::IndeterminateRank { singular_values: singular_values.to_vec() });
        }
        Ok(singular_values.iter().filter(|&&s| s > self.cut * smax).count())
    }
}

/// Rank under the default policy.
pub fn numerical_rank(singular_values: &[f64]) -> Result<usize> {
    RankPolicy::default().rank(singular_values)
}

/// Propagates `left` through `steps` transfer maps, re-orthonormalizing each
/// time, and intersects the result with `right`.
pub fn condensed_index(
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    steps: usize,
    policy: &RankPolicy,
    mut transfer: impl FnMut(usize, &DMatrix<f64>) -> Result<DMatrix<f64>>,
) -> Result<Condensed> {
    let n = left.nrows();
    let kl = left.ncols();
    let kr = right.ncols();
    let mut s = orthonormal(left);
    for j in 0..steps {
        s = orthonormal(&transfer(j, &s)?);
        if s.ncols() != kl {
            return Err(Error::Numerical(format!("propagated subspace lost rank at step {j}")));
        }
    }
    let q = orthonormal(right);
    let mut stacked = DMatrix::zeros(n, kl + kr);
    stacked.columns_mut(0, kl).copy_from(&s);
    stacked.columns_mut(kl, kr).copy_from(&q);
    if kl + kr == 0 {
        return Ok(Condensed { kernel: 0, cokernel: n, singular_values: Vec::new(), kernel_right: DMatrix::zeros(n, 0) });
    }
    // pad to a tall matrix so the SVD returns a full set of right singular vectors
    let cols = kl + kr;
    let mut tall = DMatrix::zeros(n.max(cols), cols);
    tall.rows_mut(0, n).copy_from(&stacked);
    let svd = tall.svd(false, true);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rank = policy.rank(&sv)?;
    let kernel = cols - rank;
    // null vectors of [S, Q] give the intersection S a = −Q b
    let vt = svd.v_t.expect("right singular vectors requested");
    let null = DMatrix::from_fn(cols, kernel, |i, j| vt[(order[rank + j], i)]);
    let kernel_right = orthonormal(&(&s * null.rows(0, kl)));
    Ok(Condensed { kernel, cokernel: n - rank, singular_values: sv, kernel_right })
}

/// Orthonormal basis of the column space (thin QR, full column rank assumed).
pub fn orthonormal(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.clone().qr().q().columns(0, m.ncols()).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub kernel: usize,
    pub cokernel: usize,
    pub index: i64,
    pub dim_neg_minus: usize,
    pub dim_neg_plus: usize,
    /// `dim V⁻(A(−∞)) − dim V⁻(A(+∞))`.
    pub pair_index: i64,
    /// Index of `d/dt − A` on the same path; always `−index`.
    pub alternate_index: i64,
}

impl IndexReport {
    pub fn formula_holds(&self) -> bool {
        self.index == self.pair_index
    }
}

/// One midpoint step of `γ' = −σ A γ`: `(I + σhA/2) γ₊ = (I − σhA/2) γ`.
fn cayley_step(a: &DMatrix<f64>, h: f64, sigma: f64, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let lhs = DMatrix::identity(n, n) + a * (0.5 * sigma * h);
    let rhs = (DMatrix::identity(n, n) - a * (0.5 * sigma * h)) * x;
    lhs.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular midpoint step".into()))
}

fn condensed_for(path: &OperatorPath, t_end: f64, steps: usize, sigma: f64, policy: &RankPolicy) -> Result<Condensed> {
    let (left_side, right_side) = if sigma > 0.0 { (Side::Neg, Side::Pos) } else { (Side::Pos, Side::Neg) };
    let left = spectral_projection(&path.a_minus(), left_side)?;
    let right = spectral_projection(&path.a_plus(), right_side)?;
    let h = 2.0 * t_end / steps as f64;
    condensed_index(&left, &right, steps, policy, |j, x| {
        let t = -t_end + (j as f64 + 0.5) * h;
        cayley_step(&path.a_at(t), h, sigma, x)
    })
}

/// Index of the midpoint discretization of `d/dt + A(t)` on `[−t_end, t_end]`
/// with `steps` uniform steps.
pub fn discretized_index(path: &OperatorPath, t_end: f64, steps: usize) -> Result<IndexReport> {
    discretized_index_with(path, t_end, steps, &RankPolicy::default())
}

pub fn discretized_index_with(path: &OperatorPath, t_end: f64, steps: usize, policy: &RankPolicy) -> Result<IndexReport> {
    if !(t_end > 0.0) || steps == 0 {
        return Err(Error::Config("discretized_index needs t_end > 0 and at least one step".into()));
    }
    let tol = 1e-8 * (1.0 + path.k_minus.norm().max(path.k_plus.norm()));
    if (path.k_at(-t_end) - &path.k_minus).norm() > tol || (path.k_at(t_end) - &path.k_plus).norm() > tol {
        return Err(Error::Config(format!("t_end = {t_end} is too short for K to reach its limits")));
    }
    let n = path.dim();
    let dim_neg_minus = spectral_projection(&path.a_minus(), Side::Neg)?.ncols();
    let dim_neg_plus = spectral_projection(&path.a_plus(), Side::Neg)?.ncols();
    let main = condensed_for(path, t_end, steps, 1.0, policy)?;
    let alt = condensed_for(path, t_end, steps, -1.0, policy)?;
    let index = main.kernel as i64 - main.cokernel as i64;
    let alternate_index = alt.kernel as i64 - alt.cokernel as i64;
    if alternate_index != -index {
        return Err(Error::Consistency(format!(
            "sign conventions disagree: index {index}, alternate {alternate_index} (N = {n})"
        )));
    }
    Ok(IndexReport {
        kernel: main.kernel,
        cokernel: main.cokernel,
        index,
        dim_neg_minus,
        dim_neg_plus,
        pair_index: dim_neg_minus as i64 - dim_neg_plus as i64,
        alternate_index,
    })
}

/// Random hyperbolic endpoints `P diag(±U(0.5, 2)) P⁻¹` around `A₀ = diag(+I, −I)`.
pub fn random_path(n: usize, rng: &mut ChaCha8Rng, t_end: f64) -> Result<OperatorPath> {
    let half = n / 2;
    let a0 = DMatrix::from_fn(n, n, |i, j| if i != j { 0.0 } else if i < half { 1.0 } else { -1.0 });
    let endpoint = |rng: &mut ChaCha8Rng| -> Result<DMatrix<f64>> {
        let p = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| gaussian(rng)) * (0.3 / (n as f64).sqrt());
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
            let mag = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) { mag } else { -mag }
        }));
        let inv = p.clone().try_inverse().ok_or_else(|| Error::Numerical("singular similarity".into()))?;
        Ok(&p * d * inv)
    };
    let am = endpoint(rng)?;
    let ap = endpoint(rng)?;
    OperatorPath::tanh_blend(a0, &am, &ap, t_end, 801)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabTrial {
    pub n: usize,
    pub trial: usize,
    pub report: IndexReport,
}

/// `trials` random paths at each size; each trial records the index and the spectral count.
pub fn lab(sizes: &[usize], trials: usize, seed: u64, policy: &RankPolicy) -> Result<Vec<LabTrial>> {
    let mut out = Vec::new();
    for &n in sizes {
        for trial in 0..trials {
            out.push(lab_trial(n, trial, seed, policy)?);
        }
    }
    Ok(out)
}

/// One reproducible trial; the stream depends only on `(n, trial, seed)`.
pub fn lab_trial(n: usize, trial: usize, seed: u64, policy: &RankPolicy) -> Result<LabTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32) ^ trial as u64);
    let path = random_path(n, &mut rng, 20.0)?;
    let report = discretized_index_with(&path, 20.0, 400, policy)?;
    Ok(LabTrial { n, trial, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense midpoint operator on `[−T, T]`, unknowns `(a, γ₁..γ_{M−1}, b)`.
    fn dense_index(path: &OperatorPath, t_end: f64, steps: usize) -> (usize, usize) {
        let n = path.dim();
        let left = spectral_projection(&path.a_minus(), Side::Neg).unwrap();
        let right = spectral_projection(&path.a_plus(), Side::Pos).unwrap();
        let (kl, kr) = (left.ncols(), right.ncols());
        let cols = kl + n * (steps - 1) + kr;
        let rows = n * steps;
        let h = 2.0 * t_end / steps as f64;
        let mut d = DMatrix::zeros(rows, cols);
        let eye = DMatrix::<f64>::identity(n, n);
        for j in 0..steps {
            let a = path.a_at(-t_end + (j as f64 + 0.5) * h);
            let minus = &eye / h - &a * 0.5;
            let plus = &eye / h + &a * 0.5;
            // row block j: plus·γ_{j+1} − minus·γ_j
            let r0 = j * n;
            if j == 0 {
                d.view_mut((r0, 0), (n, kl)).copy_from(&(-(&minus * &left)));
            } else {
                let c0 = kl + (j - 1) * n;
                d.view_mut((r0, c0), (n, n)).copy_from(&(-&minus));
            }
            if j == steps - 1 {
                d.view_mut((r0, cols - kr), (n, kr)).copy_from(&(&plus * &right));
            } else {
                let c0 = kl + j * n;
                d.view_mut((r0, c0), (n, n)).copy_from(&plus);
            }
        }
        let sv = d.svd(false, false).singular_values;
        let mut all: Vec<f64> = sv.iter().copied().collect();
        all.sort_by(|a, b| b.total_cmp(a));
        let rank = numerical_rank(&all).unwrap();
        (cols - rank, rows - rank)
    }

    #[test]
    fn projection_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![-2.0, 3.0]));
        let neg = spectral_projection(&m, Side::Neg).unwrap();
        assert_eq!(neg.ncols(), 1);
        assert!((neg[(0, 0)].abs() - 1.0).abs() < 1e-14 && neg[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn rotation_is_not_hyperbolic() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(spectral_projection(&m, Side::Neg), Err(Error::Hyperbolicity { .. })));
    }

    #[test]
    fn random_projections_are_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let path = random_path(10, &mut rng, 20.0).unwrap();
            let m = path.a_minus();
            let neg = spectral_projection(&m, Side::Neg).unwrap();
            let pos = spectral_projection(&m, Side::Pos).unwrap();
            assert_eq!(neg.ncols() + pos.ncols(), 10);
            for basis in [&neg, &pos] {
                // M·basis stays in the span of basis
                let mb = &m * basis;
                let resid = &mb - basis * (basis.transpose() * &mb);
                assert!(resid.amax() < 1e-10 * m.amax(), "{}", resid.amax());
            }
        }
    }

    #[test]
    fn constant_path_has_index_zero() {
        let a0 = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, -1.0, 2.0]));
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.2, -1.5, 0.1, 0.0, 0.4, 2.0]);
        let path = OperatorPath::constant(a0, &a).unwrap();
        let r = discretized_index(&path, 5.0, 100).unwrap();
        assert_eq!((r.kernel, r.cokernel, r.index), (0, 0, 0));
    }

    #[test]
    fn two_dimensional_crossing_has_index_one() {
        let a0 = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, -1.0]));
        let am = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![-1.0, -1.0]));
        let ap = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, -1.0]));
        let path = OperatorPath::tanh_blend(a0, &am, &ap, 20.0, 801).unwrap();
        let r = discretized_index(&path, 20.0, 400).unwrap();
        assert_eq!(r.index, 1);
        assert_eq!(r.kernel, 1);
        assert_eq!(r.pair_index, 1);
        assert_eq!(r.alternate_index, -1);
    }

    #[test]
    fn condensed_matches_dense_collocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..6 {
            let path = random_path(4, &mut rng, 12.0).unwrap();
            let r = discretized_index(&path, 12.0, 120).unwrap();
            let (k, c) = dense_index(&path, 12.0, 120);
            assert_eq!((r.kernel, r.cokernel), (k, c));
            assert!(r.formula_holds());
        }
    }

    #[test]
    fn doubling_resolution_keeps_integers() {
        for trial in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let path = random_path(6, &mut rng, 20.0).unwrap();
            let base = discretized_index(&path, 20.0, 400).unwrap();
            assert_eq!(base, discretized_index(&path, 20.0, 800).unwrap());
            let longer = OperatorPath::new(path.a0.clone(), -40.0, 40.0, {
                // same K on a longer grid with constant extension
                (0..1601).map(|i| path.k_at(-40.0 + 0.05 * i as f64)).collect()
            }, path.k_minus.clone(), path.k_plus.clone()).unwrap();
            assert_eq!(base, discretized_index(&longer, 40.0, 800).unwrap());
        }
    }

    #[test]
    fn lab_formula_holds_for_small_sizes() {
        for t in lab(&[4], 10, 7, &RankPolicy::default()).unwrap() {
            assert!(t.report.formula_holds(), "{t:?}");
        }
    }

    #[test]
    fn straddling_profile_is_indeterminate() {
        assert!(matches!(numerical_rank(&[1.0, 1e-7]), Err(Error::IndeterminateRank { .. })));
        assert_eq!(numerical_rank(&[1.0, 1e-12]).unwrap(), 1);
        assert_eq!(numerical_rank(&[1.0, 1e-3]).unwrap(), 2);
        assert!(RankPolicy::new(1e-5, (1e-10, 1e-6)).is_err());
        assert_eq!(RankPolicy::new(1e-9, (1e-11, 1e-7)).unwrap().rank(&[1.0, 1e-6]).unwrap(), 2);
    }
}
