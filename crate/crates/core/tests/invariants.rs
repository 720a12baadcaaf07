use crnn_core::cells::ornn_matrix;
use crnn_core::gaussian::{GraphGaussianState, RestrictedSymplectic};
use crnn_core::linalg::{float_integer_relations, rank};
use crnn_core::pauli::{omega_raw, pauli_adjoint, pauli_mul, PauliWord};
use crnn_core::scalar::{phase_eq, rat};
use crnn_core::tableau::{graph_tableau, GraphSpec, Membership};
use crnn_core::taskgen::{build_q, consistency_check, gen_dataset, read_jsonl, sample_b, write_jsonl, GenConfig, InitState};
use crnn_core::{Backend, Coeff, Rational};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rational() -> impl Strategy<Value = Rational> {
    (-8i64..=8, 1i64..=4).prop_map(|(p, q)| rat(p, q))
}

fn word(n: usize) -> impl Strategy<Value = PauliWord<Rational>> {
    (prop::collection::vec(rational(), 2 * n), rational())
        .prop_map(|(v, t)| PauliWord::from_vector(v, t, rat(1, 1)).unwrap())
}

fn graph(n: usize) -> impl Strategy<Value = GraphSpec<Rational>> {
    (prop::collection::vec(-8i64..=8, n * n), prop::collection::vec(-4i64..=4, n)).prop_map(move |(e, c)| {
        let mut a = vec![vec![rat(0, 1); n]; n];
        for i in 0..n {
            for j in i + 1..n {
                a[i][j] = rat(e[i * n + j], 4);
                a[j][i] = rat(e[i * n + j], 4);
            }
        }
        GraphSpec::new(a).with_centers(c.into_iter().map(|x| rat(x, 4)).collect())
    })
}

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pauli_product_is_associative(p in word(2), q in word(2), r in word(2)) {
        let left = pauli_mul(&pauli_mul(&p, &q).unwrap(), &r).unwrap();
        let right = pauli_mul(&p, &pauli_mul(&q, &r).unwrap()).unwrap();
        prop_assert_eq!(left.vector(), right.vector());
        prop_assert!(phase_eq(left.theta(), right.theta()));
    }

    #[test]
    fn word_times_adjoint_is_identity(p in word(3)) {
        let e = pauli_mul(&p, &pauli_adjoint(&p)).unwrap();
        prop_assert!(e.is_identity());
    }

    #[test]
    fn q_rows_commute_and_have_full_rank(seed in any::<u64>(), n in 3usize..=5) {
        let b: Vec<Vec<Rational>> = sample_b(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let q = build_q(&b).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!(omega_raw(&q[i], &q[j]).is_zero());
            }
        }
        prop_assert_eq!(rank(&q), n);
    }

    #[test]
    fn repeated_pauli_measurement_is_forced(g in graph(3), p in word(3), seed in any::<u64>()) {
        prop_assume!(!p.has_zero_vector());
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut t = graph_tableau(&g, rat(1, 1)).unwrap();
        let first = t.measure_pauli(&p, &mut r).unwrap();
        t.check_invariants().unwrap();
        match t.contains(&p).unwrap() {
            Membership::Deterministic(phi) => prop_assert!(phase_eq(&phi, &first.value)),
            other => prop_assert!(false, "not forced after measurement: {other:?}"),
        }
    }

    #[test]
    fn float_instances_replay_consistently(seed in any::<u64>(), n in 2usize..=4) {
        let cfg = GenConfig { n, k: 3, init_state: InitState::Squeezed, modified: false };
        let (data, _) = gen_dataset(&cfg, Backend::Float, 3, seed).unwrap();
        for inst in &data {
            prop_assert!(consistency_check(inst, &inst.outcomes()).unwrap().consistent);
        }
    }

    #[test]
    fn instances_round_trip_through_jsonl(seed in any::<u64>()) {
        let cfg = GenConfig { n: 3, k: 2, init_state: InitState::Gkp, modified: false };
        let (data, _) = gen_dataset(&cfg, Backend::Exact, 2, seed).unwrap();
        let mut buf = vec![];
        write_jsonl(&mut buf, &data).unwrap();
        prop_assert_eq!(read_jsonl(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn ornn_recurrence_preserves_norm(theta in prop::collection::vec(-3.2f64..3.2, 10), h in prop::collection::vec(-5.0f64..5.0, 5)) {
        let q = ornn_matrix(5, &theta);
        let h = DVector::from_vec(h);
        prop_assert!((q.transpose() * &q - DMatrix::identity(5, 5)).amax() < 1e-12);
        prop_assert!(((&q * &h).norm() - h.norm()).abs() < 1e-12 * (1.0 + h.norm()));
    }

    #[test]
    fn restricted_symplectic_round_trips(g in matrix(3), w in matrix(3), c in prop::collection::vec(-2.0f64..2.0, 3)) {
        let w = w + DMatrix::identity(3, 3) * 3.0;
        let u = &g * g.transpose() + DMatrix::identity(3, 3);
        let s = GraphGaussianState::restricted(u.clone(), DVector::from_vec(c.clone())).unwrap();
        let fwd = RestrictedSymplectic::new(w.clone()).unwrap();
        let back = RestrictedSymplectic::new(w.try_inverse().unwrap()).unwrap();
        let t = s.apply_symplectic(&fwd).unwrap().apply_symplectic(&back).unwrap();
        prop_assert!((t.u() - u).amax() < 1e-9);
        prop_assert!((t.cq() - DVector::from_vec(c)).amax() < 1e-9);
    }

    #[test]
    fn float_relations_hold(k in prop::collection::vec(-6i64..=6, 4), rows in prop::collection::vec(-3i64..=3, 8)) {
        // Entries from two incommensurate scales with small rational weights.
        let x: Vec<f64> = (0..4)
            .map(|j| k[j] as f64 / 4.0 + rows[j] as f64 * std::f64::consts::SQRT_2 + rows[4 + j] as f64 * 1e-3 * std::f64::consts::PI)
            .collect();
        for m in float_integer_relations(&x, true) {
            let s: f64 = m.iter().zip(&x).map(|(a, v)| a.to_string().parse::<f64>().unwrap() * v).sum();
            prop_assert!((s - s.round()).abs() < 1e-9, "{m:?} {s}");
        }
    }
}
