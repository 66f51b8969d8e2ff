use std::f64::consts::PI;

use proptest::prelude::*;

use imgadd::closed_form::{lemma1_factor, lemma1_general};
use imgadd::digital::{altmin, SolverConfig};
use imgadd::geometry::{selection_matrix, sum_coarray, ArrayGeometry};
use imgadd::hybrid::greedy_sub;
use imgadd::numerics::{
    angle_distance, expj, lattice_index, on_lattice, quantize_phase, vectorize, Bits, CMat, CVec,
    C64,
};
use imgadd::operator::SensingOperator;
use imgadd::steering::{
    coarray_steering, coarray_weights, effective_steering, steering_matrix, target_stochastic,
    DirectionGrid, GainPattern,
};

fn positions(max: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::btree_set(0i64..16, 1..=max).prop_map(|s| s.into_iter().collect())
}

fn cvec(n: usize) -> impl Strategy<Value = CVec> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), n)
        .prop_map(|v| CVec::from_iterator(v.len(), v.into_iter().map(|(a, b)| C64::new(a, b))))
}

fn reconstruct(phases: &nalgebra::DMatrix<f64>, c: &CVec) -> CVec {
    CVec::from_fn(phases.nrows(), |i, _| {
        (0..phases.ncols())
            .map(|k| expj(phases[(i, k)]) * c[k])
            .sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn quantizer_lattice_idempotent_nested(phi in -50.0f64..50.0, b in 1u32..16) {
        let bits = Bits::Finite(b);
        let q = quantize_phase(phi, bits);
        let step = 2.0 * PI / f64::from(1u32 << b);
        prop_assert!((0.0..2.0 * PI).contains(&q));
        prop_assert!(on_lattice(q, bits, 1e-12));
        prop_assert_eq!(quantize_phase(q, bits), q);
        prop_assert!(angle_distance(phi, q) <= step / 2.0 + 1e-12);
        let finer = Bits::Finite(b + 1);
        prop_assert_eq!(lattice_index(q, finer), lattice_index(q, bits).map(|k| 2 * k));
        prop_assert!((expj(quantize_phase(phi, Bits::Infinite)) - expj(phi)).norm() <= 1e-12);
    }

    #[test]
    fn selection_matrix_matches_direct_pair_sums(tx in positions(6), rx in positions(6), seed in any::<u64>()) {
        let (tx, rx) = (ArrayGeometry::linear(&tx).unwrap(), ArrayGeometry::linear(&rx).unwrap());
        let ca = sum_coarray(&tx, &rx).unwrap();
        let sel = selection_matrix(&tx, &rx, &ca).unwrap();
        let dense = sel.to_dense();
        for m in 0..tx.len() * rx.len() {
            prop_assert_eq!(dense.iter().map(|row| u32::from(row[m])).sum::<u32>(), 1);
        }
        prop_assert_eq!(sel.row_sums(), ca.multiplicity().to_vec());

        // w_Σ[k] sums W[r, t] over every pair landing on co-array point k.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let w = CMat::from_fn(rx.len(), tx.len(), |_, _| {
            C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), rand::Rng::gen_range(&mut rng, -1.0..1.0))
        });
        let got = coarray_weights(&w, &sel).unwrap();
        let (xt, xr) = (tx.xs(), rx.xs());
        for (k, p) in ca.support().iter().enumerate() {
            let mut want = C64::new(0.0, 0.0);
            for (t, a) in xt.iter().enumerate() {
                for (r, b) in xr.iter().enumerate() {
                    if a + b == p[0] {
                        want += w[(r, t)];
                    }
                }
            }
            prop_assert!((got[k] - want).norm() <= 1e-12);
        }
        prop_assert!((sel.apply(&vectorize(&w)).unwrap() - &got).norm() <= 1e-12);
    }

    #[test]
    fn effective_steering_factors_through_coarray(tx in positions(5), rx in positions(5), v in 1usize..10, sin in any::<bool>()) {
        let (tx, rx) = (ArrayGeometry::linear(&tx).unwrap(), ArrayGeometry::linear(&rx).unwrap());
        let ca = sum_coarray(&tx, &rx).unwrap();
        let sel = selection_matrix(&tx, &rx, &ca).unwrap();
        let grid = DirectionGrid::uniform_sine(v).unwrap();
        let gain = if sin { GainPattern::Sinusoidal } else { GainPattern::Omni };
        let a = effective_steering(&steering_matrix(&tx, &grid, gain), &steering_matrix(&rx, &grid, gain)).unwrap();
        let via = sel.expand_rows(&coarray_steering(&ca, &grid, gain)).unwrap();
        prop_assert!((&a - &via).norm() <= 1e-12 * a.norm().max(1.0));
        // Column (t, r) of the Kronecker steering is the product of element terms.
        let at = steering_matrix(&tx, &grid, gain);
        let ar = steering_matrix(&rx, &grid, gain);
        for t in 0..tx.len() {
            for r in 0..rx.len() {
                for j in 0..v {
                    prop_assert!((a[(t * rx.len() + r, j)] - at[(t, j)] * ar[(r, j)]).norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn lemma1_reconstructs_any_vector(w in (1usize..10).prop_flat_map(cvec)) {
        let (ph, c) = lemma1_factor(&w);
        prop_assert!((reconstruct(&ph, &c) - &w).norm() <= 1e-12 * w.norm().max(1.0));
    }

    #[test]
    fn lemma1_general_feasible_weights(w in (1usize..10).prop_flat_map(cvec), extra in 0.0f64..1.0, split in 0.0f64..1.0, p1 in 0.0f64..6.3, p2 in 0.0f64..6.3) {
        // |a − b| ≤ min|w| and a + b ≥ max|w| by construction.
        let lo = w.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        let hi = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = split * lo;
        let sum = hi.max(diff) + extra * lo.max(1e-3);
        let (a, b) = ((sum + diff) / 2.0, (sum - diff) / 2.0);
        let (c1, c2) = (C64::from_polar(a, p1), C64::from_polar(b, p2));
        let ph = lemma1_general(&w, c1, c2).unwrap();
        let got = reconstruct(&ph, &CVec::from_vec(vec![c1, c2]));
        prop_assert!((got - &w).norm() <= 1e-9 * w.norm().max(1.0));
    }

    #[test]
    fn greedy_sub_on_lattice_and_not_worse_than_zero(w in (1usize..8).prop_flat_map(cvec), m in 1usize..4, b in 1u32..7) {
        let bits = Bits::Finite(b);
        let (ph, c) = greedy_sub(&w, m, bits, 1e-12).unwrap();
        prop_assert_eq!((ph.nrows(), ph.ncols(), c.len()), (w.len(), m, m));
        prop_assert!(ph.iter().all(|&p| on_lattice(p, bits, 1e-12)));
        prop_assert!((reconstruct(&ph, &c) - &w).norm_squared() <= w.norm_squared() * (1.0 + 1e-9));
    }

    #[test]
    fn altmin_half_steps_never_increase(tx in positions(6), seed in any::<u64>(), q in 1usize..4) {
        let g = ArrayGeometry::linear(&tx).unwrap();
        let ca = sum_coarray(&g, &g).unwrap();
        let op = SensingOperator::coarray(selection_matrix(&g, &g, &ca).unwrap());
        let target = target_stochastic(ca.n_sigma(), seed);
        let cfg = SolverConfig { k_max: 20, ..SolverConfig::default() };
        let (_, trace) = altmin(&op, &target, q.min(g.len()), &cfg).unwrap();
        let scale = target.values.norm_squared();
        for pair in trace.half_steps.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-9 * scale, "{:?}", trace.half_steps);
        }
    }
}
