use std::collections::BTreeMap;
use std::sync::Arc;

use morsekit_core::complex::{homology, ChainComplexData};
use morsekit_core::duality::{apply_dp, invert_dp, monotonicity_gap};
use morsekit_core::fredholm::{discretized_index, random_path};
use morsekit_core::functional::FunctionalConfig;
use morsekit_core::gf2::Gf2Matrix;
use morsekit_core::mesh::{GridFunction, Mesh, NormKind};
use morsekit_core::nonlinearity::{validate_growth, Family, Monomial, NonlinearitySpec};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn line(n: usize) -> Arc<Mesh> {
    Arc::new(Mesh::new(1, &[1.0], n, 3).unwrap())
}

fn grid(mesh: &Arc<Mesh>, values: &[f64]) -> GridFunction {
    GridFunction::new(mesh.clone(), DVector::from_column_slice(values)).unwrap()
}

fn nodal(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn nonzero_nodal(n: usize) -> impl Strategy<Value = Vec<f64>> {
    nodal(n).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn directional_derivative_matches_central_difference(x in nodal(24), d in nonzero_nodal(24), kappa in 1.0f64..30.0) {
        let g = NonlinearitySpec::new(
            Family::Custom { terms: vec![Monomial { i: 2, j: 0, coeff: kappa / 2.0 }, Monomial { i: 1, j: 1, coeff: 0.3 }] },
            2.0,
            2.0,
        )
        .unwrap();
        let cfg = FunctionalConfig::new(line(12), 3.0, 3.0, g).unwrap();
        let (x, d) = (DVector::from_vec(x) * 0.3, DVector::from_vec(d));
        let grad = cfg.df(&x);
        let eps = 1e-4;
        let fd = (cfg.f(&(&x + &d * eps)) - cfg.f(&(&x - &d * eps))) / (2.0 * eps);
        prop_assert!((fd - grad.dot(&d)).abs() <= 1e-6 * grad.norm() * d.norm() + 1e-9);
        let hd = cfg.d2f_matrix(&x) * &d;
        let gd = (cfg.df(&(&x + &d * eps)) - cfg.df(&(&x - &d * eps))) / (2.0 * eps);
        prop_assert!((gd - &hd).norm() <= 1e-6 * hd.norm() + 1e-9);
    }

    #[test]
    fn admissibility_survives_smaller_exponents(a1 in 0.0f64..6.0, a2 in 0.0f64..6.0, shrink in 0.0f64..1.0, p in 1.0f64..4.0) {
        let spec = |a: f64, b: f64| NonlinearitySpec::new(Family::Zero, a, b).unwrap();
        let big = validate_growth(&spec(a1, a2), p, p, 1).unwrap();
        let small = validate_growth(&spec(a1 * shrink, a2 * shrink), p, p, 1).unwrap();
        prop_assert!(!big.admissible || small.admissible);
        let wider = validate_growth(&spec(a1, a2), p + 1.0, p + 1.0, 1).unwrap();
        prop_assert!(!big.admissible || wider.admissible);
    }

    #[test]
    fn norms_are_absolutely_homogeneous(v in nodal(20), t in -5.0f64..5.0, s in 1.2f64..6.0) {
        let mesh = line(20);
        let g = grid(&mesh, &v);
        let scaled = grid(&mesh, &v.iter().map(|x| t * x).collect::<Vec<_>>());
        for kind in [NormKind::Lebesgue(s), NormKind::SobolevGrad(s)] {
            let (a, b) = (scaled.norm(kind).unwrap(), t.abs() * g.norm(kind).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn duality_map_round_trips(v in nodal(20), p in 1.6f64..4.0) {
        let mesh = line(20);
        let chol = mesh.stiffness().cholesky().unwrap();
        let dual = |w: &DVector<f64>| chol.inverse_quadratic(w.as_slice()).max(0.0).sqrt();
        // rough data: D_p weights reach 1e9, so only the residual is sharp
        let phi = apply_dp(p, &grid(&mesh, &v));
        let back = invert_dp(p, &phi, 1e-13, 200).unwrap();
        prop_assert!(dual(&(apply_dp(p, &back).values - &phi.values)) <= 1e-10 * dual(&phi.values));
        let mild = grid(&mesh, &v.iter().map(|x| 0.05 * x).collect::<Vec<_>>());
        let back = invert_dp(p, &apply_dp(p, &mild), 1e-13, 200).unwrap();
        prop_assert!((&back.values - &mild.values).amax() <= 1e-8 * (1.0 + mild.values.amax()));
    }

    #[test]
    fn monotonicity_gap_is_positive(a in nodal(16), b in nodal(16), p in 1.6f64..4.0) {
        prop_assume!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
        let mesh = line(16);
        let m = monotonicity_gap(p, &grid(&mesh, &a), &grid(&mesh, &b)).unwrap();
        prop_assert!(m.gap > 0.0);
        prop_assert!(m.sobolev_constant(p) > 0.0);
    }
}

/// Column bitmasks over GF(2).
fn kernel(cols: &[u64], rows: usize) -> Vec<u64> {
    // reduce [A; I] column-wise; columns whose A part vanishes give the kernel
    let mut work: Vec<(u64, u64)> = cols.iter().enumerate().map(|(j, &c)| (c, 1u64 << j)).collect();
    let mut basis = Vec::new();
    for r in 0..rows {
        let Some(pivot) = work.iter().position(|(c, _)| c >> r & 1 == 1) else { continue };
        let (pc, pt) = work.remove(pivot);
        for (c, t) in work.iter_mut() {
            if *c >> r & 1 == 1 {
                *c ^= pc;
                *t ^= pt;
            }
        }
    }
    for (c, t) in work {
        if c == 0 {
            basis.push(t);
        }
    }
    basis
}

fn rank(cols: &[u64]) -> usize {
    let mut work: Vec<u64> = cols.to_vec();
    let mut r = 0;
    for bit in 0..64 {
        let Some(pivot) = work.iter().position(|c| c >> bit & 1 == 1) else { continue };
        let p = work.remove(pivot);
        for c in work.iter_mut() {
            if *c >> bit & 1 == 1 {
                *c ^= p;
            }
        }
        r += 1;
    }
    r
}

fn to_matrix(cols: &[u64], rows: usize) -> Gf2Matrix {
    let mut m = Gf2Matrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for i in 0..rows {
            m.set(i, j, c >> i & 1 == 1);
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn boundaries_built_from_cycles_square_to_zero(
        n0 in 1usize..8,
        n1 in 1usize..10,
        n2 in 0usize..8,
        bits in prop::collection::vec(any::<u64>(), 20),
    ) {
        let d1: Vec<u64> = (0..n1).map(|j| bits[j] & ((1u64 << n0) - 1)).collect();
        let cycles = kernel(&d1, n0);
        let d2: Vec<u64> = (0..n2)
            .map(|j| cycles.iter().enumerate().filter(|(k, _)| bits[10 + j] >> k & 1 == 1).fold(0, |acc, (_, c)| acc ^ c))
            .collect();
        let m1 = to_matrix(&d1, n0);
        let m2 = to_matrix(&d2, n1);
        prop_assert!(m1.mul(&m2).is_zero());
        prop_assert_eq!(m1.rank(), rank(&d1));
        prop_assert_eq!(m2.rank(), rank(&d2));

        let grades: BTreeMap<i64, Vec<usize>> =
            [(0, (0..n0).collect()), (1, (n0..n0 + n1).collect()), (2, (n0 + n1..n0 + n1 + n2).collect())].into();
        let complex = ChainComplexData { grades, boundaries: [(1, m1), (2, m2)].into(), evidence: Vec::new() };
        let h = homology(&complex);
        let (r1, r2) = (rank(&d1), rank(&d2));
        prop_assert_eq!(h.ranks[&0], n0 - r1);
        prop_assert_eq!(h.ranks[&1], cycles.len() - r2);
        prop_assert_eq!(h.ranks[&2], n2 - r2);
        let euler = h.ranks[&0] as i64 - h.ranks[&1] as i64 + h.ranks[&2] as i64;
        prop_assert_eq!(euler, n0 as i64 - n1 as i64 + n2 as i64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn index_is_stable_under_step_doubling(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = random_path(n, &mut rng, 15.0).unwrap();
        let coarse = discretized_index(&path, 15.0, 200).unwrap();
        let fine = discretized_index(&path, 15.0, 400).unwrap();
        prop_assert_eq!(coarse.index, fine.index);
        prop_assert!(coarse.formula_holds() && fine.formula_holds());
    }
}
