use avq_core::ansatz::{Ansatz, FixedGate, Segment};
use avq_core::models::{build_spin_chain, pool_spin_dyn, SpinChainSpec};
use avq_core::nonlinear::{chi3_2d_spectrum, stage1_ansatz, stage2_ansatz, Chi3Grid, TransformOrder};
use avq_core::pauli::{Pauli, PauliSum, PauliWord};
use avq_core::series::{interpolate, uniform_mesh};
use avq_core::spectral::{dft_spectrum, frequency_grid, pade_spectrum};
use avq_core::statevector::{Propagator, StateVector};
use avq_core::variational::{
    compute_m, compute_v, finite_difference_derivative, AvqdsConfig, Drive, Propagation,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

fn word(n: usize) -> impl Strategy<Value = PauliWord> {
    let mask = (1u64 << n) - 1;
    (0..=mask, 0..=mask).prop_map(move |(x, z)| PauliWord::from_masks(n, x, z).unwrap())
}

fn hermitian_sum(n: usize, terms: usize) -> impl Strategy<Value = PauliSum> {
    prop::collection::vec((word(n), -1.0f64..1.0), 1..=terms).prop_map(move |ts| {
        PauliSum::from_terms(n, ts.into_iter().map(|(w, c)| (Complex64::new(c, 0.0), w))).unwrap()
    })
}

fn random_state(n: usize) -> impl Strategy<Value = StateVector> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n).prop_filter_map("zero vector", |v| {
        let amps: Vec<Complex64> = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        StateVector::normalized(amps).ok()
    })
}

fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn ansatz_from(n: usize, gens: &[(PauliWord, f64)]) -> Ansatz {
    let mut a = Ansatz::new(n, 0).unwrap();
    for (g, t) in gens {
        a.push_rotation(*g, *t, Segment::Ground).unwrap();
    }
    a
}

fn non_identity(n: usize) -> impl Strategy<Value = PauliWord> {
    word(n).prop_filter("identity", |w| !w.is_identity())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn word_product_matches_dense(n in 1usize..=4, seed in any::<u64>()) {
        let mask = (1u64 << n) - 1;
        let a = PauliWord::from_masks(n, seed & mask, (seed >> 8) & mask).unwrap();
        let b = PauliWord::from_masks(n, (seed >> 16) & mask, (seed >> 24) & mask).unwrap();
        let (phase, c) = a.multiply(&b).unwrap();
        let dense = a.to_matrix().unwrap() * b.to_matrix().unwrap();
        let ours = c.to_matrix().unwrap() * phase.to_complex();
        prop_assert!(max_diff(&dense, &ours) < 1e-14);
        let commute = max_diff(&(a.to_matrix().unwrap() * b.to_matrix().unwrap()), &(b.to_matrix().unwrap() * a.to_matrix().unwrap())) < 1e-14;
        prop_assert_eq!(a.commutes(&b).unwrap(), commute);
    }

    #[test]
    fn sum_algebra_matches_dense(a in hermitian_sum(3, 5), b in hermitian_sum(3, 5)) {
        let (ma, mb) = (a.to_matrix().unwrap(), b.to_matrix().unwrap());
        prop_assert!(max_diff(&a.multiply(&b).unwrap().to_matrix().unwrap(), &(&ma * &mb)) < 1e-12);
        prop_assert!(max_diff(&a.commutator(&b).unwrap().to_matrix().unwrap(), &(&ma * &mb - &mb * &ma)) < 1e-12);
        prop_assert!(max_diff(&a.add(&b).unwrap().to_matrix().unwrap(), &(&ma + &mb)) < 1e-12);
        prop_assert!(a.is_hermitian());
        let back = PauliSum::from_matrix(&ma).unwrap();
        prop_assert!(back.max_abs_diff(&a).unwrap() < 1e-12);
    }

    #[test]
    fn pauli_action_matches_dense(w in word(4), s in random_state(4)) {
        let mut out = s.clone();
        out.apply_pauli(&w).unwrap();
        let dense = w.to_matrix().unwrap() * DVector::from_column_slice(s.amplitudes());
        let diff = dense.iter().zip(out.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-14);
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expectation_matches_dense(h in hermitian_sum(3, 6), s in random_state(3)) {
        let v = DVector::from_column_slice(s.amplitudes());
        let dense = (v.adjoint() * h.to_matrix().unwrap() * &v)[(0, 0)];
        prop_assert!((s.expectation(&h).unwrap() - dense.re).abs() < 1e-12);
        prop_assert!(dense.im.abs() < 1e-12);
    }

    #[test]
    fn exact_propagation_preserves_norm_and_energy(h in hermitian_sum(3, 6), s in random_state(3), t in 0.0f64..5.0) {
        let p = Propagator::new(&h).unwrap();
        let out = p.evolve(&s, t).unwrap();
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        prop_assert!((out.expectation(&h).unwrap() - s.expectation(&h).unwrap()).abs() < 1e-11);
    }

    #[test]
    fn metric_and_drive_match_finite_differences(
        gens in prop::collection::vec((non_identity(3), -1.5f64..1.5), 1..5),
        h in hermitian_sum(3, 5),
    ) {
        let a = ansatz_from(3, &gens);
        let m = compute_m(&a).unwrap();
        let v = compute_v(&a, &h).unwrap();
        let psi = a.prepare();
        let hpsi = psi.apply_sum(&h).unwrap();
        let energy = psi.expectation(&h).unwrap();
        let dot = |x: &[Complex64], y: &[Complex64]| x.iter().zip(y).map(|(a, b)| a.conj() * b).sum::<Complex64>();
        let d: Vec<Vec<Complex64>> = (0..gens.len()).map(|mu| finite_difference_derivative(&a, mu, 1e-5).unwrap()).collect();
        for mu in 0..gens.len() {
            for nu in 0..gens.len() {
                let fd = 2.0 * (dot(&d[mu], &d[nu]) - dot(&d[mu], psi.amplitudes()) * dot(psi.amplitudes(), &d[nu])).re;
                prop_assert!((m[(mu, nu)] - fd).abs() < 1e-6, "M[{mu},{nu}] {} vs {fd}", m[(mu, nu)]);
            }
            let fd = 2.0 * (dot(&d[mu], &hpsi) - dot(&d[mu], psi.amplitudes()) * energy).im;
            prop_assert!((v[mu] - fd).abs() < 1e-6, "V[{mu}] {} vs {fd}", v[mu]);
        }
    }

    #[test]
    fn simplified_chi3_circuits_prepare_the_same_state(
        gates in prop::collection::vec(word(2), 6),
        gens in prop::collection::vec((non_identity(2), -1.0f64..1.0), 0..4),
    ) {
        let ground = ansatz_from(2, &gens);
        let g: [PauliWord; 6] = gates.clone().try_into().unwrap();
        let mut full = stage1_ansatz(&ground, &g, false).unwrap();
        let mut lean = stage1_ansatz(&ground, &g, true).unwrap();
        full = stage2_ansatz(&full, &g[3], false).unwrap();
        lean = stage2_ansatz(&lean, &g[3], true).unwrap();
        let (a, b) = (full.prepare(), lean.prepare());
        prop_assert!((a.inner(&b).unwrap() - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_lines(slope in -3.0f64..3.0, icpt in -3.0f64..3.0, t in 0.0f64..1.0) {
        let times = [0.0, 0.13, 0.4, 0.77, 1.0];
        let values: Vec<f64> = times.iter().map(|x| slope * x + icpt).collect();
        prop_assert!((interpolate(&times, &values, t).unwrap() - (slope * t + icpt)).abs() < 1e-12);
    }

    #[test]
    fn pade_equals_dft_on_rational_series(
        poles in prop::collection::vec((-3.0f64..3.0, 0.2f64..1.0), 1..4),
        omega in -4.0f64..4.0,
    ) {
        // Sums of exponentials are exactly rational in z = exp(i w dt).
        let mesh = uniform_mesh(60.0, 0.1).unwrap();
        let g: Vec<Complex64> = mesh
            .iter()
            .map(|&t| poles.iter().map(|&(e, w)| Complex64::new(0.0, -e * t).exp() * w).sum())
            .collect();
        let om = [omega];
        let p = pade_spectrum(&mesh, &g, &om, 0.5).unwrap();
        let d = dft_spectrum(&mesh, &g, &om, 0.5).unwrap();
        prop_assert!((p.g[0] - d.g[0]).norm() < 1e-8, "{} vs {}", p.g[0], d.g[0]);
    }
}

#[test]
fn rk4_steps_respect_angle_cap() {
    let spec = SpinChainSpec::spin_one(2, 1.0, 0.2).unwrap();
    let h = build_spin_chain(&spec).unwrap();
    let pool = pool_spin_dyn(4).unwrap();
    let mut a = Ansatz::new(4, 0).unwrap();
    a.push_fixed(FixedGate::Pauli(PauliWord::single(4, 1, Pauli::X).unwrap())).unwrap();
    let cfg = AvqdsConfig::default();
    let reference = Propagator::new(&h).unwrap();
    let psi0 = a.prepare();
    let mut prop = Propagation::new(a, &h, &pool, cfg, Drive::RealTime, Segment::Time).unwrap();
    let e0 = psi0.expectation(&h).unwrap();
    let mut worst: f64 = 0.0;
    prop.run(1.0, &[], |d, p| {
        assert!(d.max_dtheta <= cfg.dtheta_max + 1e-15);
        assert!(d.l2 < cfg.l2_cut);
        let psi = p.ansatz().prepare();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((psi.expectation(&h).unwrap() - e0).abs() < 1e-3);
        worst = worst.max(1.0 - psi.fidelity(&reference.evolve(&psi0, d.t).unwrap()).unwrap());
        Ok(())
    })
    .unwrap();
    assert!(worst < 1e-3, "infidelity {worst}");
}

#[test]
fn two_dimensional_pade_is_order_independent() {
    let t = uniform_mesh(12.0, 0.1).unwrap();
    let values = DMatrix::from_fn(t.len(), t.len(), |a, i| {
        let (x, y) = (t[i], t[a]);
        (0.7 * x - 0.4 * y).sin() * (-0.05 * (x + y)).exp() + 0.3 * (1.1 * x + 0.9 * y).cos()
    });
    let grid = Chi3Grid {
        t: t.clone(),
        tau: t,
        values,
    };
    let om = frequency_grid(-1.5, 1.5, 0.1).unwrap();
    let a = chi3_2d_spectrum(&grid, &om, &om, 0.2, 0.2, TransformOrder::TFirst).unwrap();
    let b = chi3_2d_spectrum(&grid, &om, &om, 0.2, 0.2, TransformOrder::TauFirst).unwrap();
    let diff = a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}
