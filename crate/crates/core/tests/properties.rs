use lowconn_rc::bayesopt::gp::expected_improvement;
use lowconn_rc::bayesopt::optim::latin_hypercube;
use lowconn_rc::bayesopt::SearchSpace;
use lowconn_rc::dynamics::{Trajectory, LAMBDA_LORENZ};
use lowconn_rc::evaluation::{aggregate_epsilon, epsilon_single, forecast_steps, window_offsets, EvalConfig};
use lowconn_rc::experiments::gaussian_kde;
use lowconn_rc::persistence::{decode_f64s, encode_f64s, MatrixData};
use lowconn_rc::seeding::{derive_seed, rng_from_seed, Stream};
use lowconn_rc::topology::{
    HyperParams, Reservoir, SparseMatrix, Topology, GAMMA_RANGE, RHO_IN_RANGE, RHO_R_RANGE, SIGMA_RANGE,
};
use lowconn_rc::training::apply_fout;
use proptest::prelude::*;

fn topology() -> impl Strategy<Value = Topology> {
    prop::sample::select(Topology::ALL.to_vec())
}

fn in_box() -> impl Strategy<Value = HyperParams> {
    (
        topology(),
        GAMMA_RANGE.min..=GAMMA_RANGE.max,
        SIGMA_RANGE.min..=SIGMA_RANGE.max,
        RHO_IN_RANGE.min..=RHO_IN_RANGE.max,
        1usize..=5,
        RHO_R_RANGE.min..=RHO_R_RANGE.max,
    )
        .prop_map(|(t, g, s, ri, k, rr)| HyperParams::new(t, g, s, ri, k, rr))
}

fn trajectory(len: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derived_seeds_are_pure_and_separate(master: u64, i in 0u64..1000) {
        prop_assert_eq!(derive_seed(master, Stream::Trial, i), derive_seed(master, Stream::Trial, i));
        prop_assert_ne!(derive_seed(master, Stream::Trial, i), derive_seed(master, Stream::Proposal, i));
        prop_assert_ne!(derive_seed(master, Stream::Trial, i), derive_seed(master, Stream::Trial, i + 1));
    }

    #[test]
    fn reservoirs_satisfy_their_topology(hp in in_box(), seed: u64) {
        let a = Reservoir::build(&hp, 40, seed).unwrap();
        prop_assert!(a.structure_violations().is_empty(), "{:?}", a.structure_violations());
        prop_assert_eq!(&a, &Reservoir::build(&hp, 40, seed).unwrap());
        for row in &a.w_in {
            prop_assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn unit_cube_round_trip(hp in in_box()) {
        let space = SearchSpace::new(hp.topology);
        let x = space.to_unit(&hp);
        prop_assert_eq!(x.len(), space.dim());
        prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = space.from_unit(&x);
        prop_assert_eq!(back.k, hp.k);
        prop_assert!((back.gamma - hp.gamma).abs() < 1e-12);
        prop_assert!((back.rho_r - hp.rho_r).abs() < 1e-12);
        prop_assert!(space.contains(&back));
    }

    #[test]
    fn snapping_is_idempotent(t in topology(), x in prop::collection::vec(-0.5f64..1.5, 5)) {
        let space = SearchSpace::new(t);
        let mut a = x[..space.dim()].to_vec();
        space.snap(&mut a);
        let mut b = a.clone();
        space.snap(&mut b);
        prop_assert_eq!(&a, &b);
        prop_assert!(space.contains(&space.from_unit(&a)));
        let again = space.to_unit(&space.from_unit(&a));
        prop_assert!(again.iter().zip(&a).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn readout_nonlinearity_splits_at_half(r in prop::collection::vec(-3.0f64..3.0, 2..60)) {
        let split = r.len() / 2;
        let f = apply_fout(&r, split);
        for (i, (&fi, &ri)) in f.iter().zip(&r).enumerate() {
            prop_assert_eq!(fi, if i < split { ri } else { ri * ri });
        }
    }

    #[test]
    fn base64_doubles_round_trip(v in prop::collection::vec(any::<f64>(), 0..50)) {
        let back = decode_f64s(&encode_f64s(&v)).unwrap();
        prop_assert_eq!(
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn matrix_layouts_round_trip(
        t in prop::collection::vec((0usize..12, 0usize..9, -2.0f64..2.0), 0..60),
    ) {
        let m = SparseMatrix::from_triplets(12, 9, &t);
        let data = MatrixData::from_sparse(&m);
        prop_assert_eq!(data.to_dense().unwrap(), m.to_dense());
        let again = MatrixData::from_dense(&m.to_dense());
        prop_assert_eq!(again.to_sparse().unwrap().to_dense(), m.to_dense());
    }

    #[test]
    fn aggregate_lies_between_extremes(e in prop::collection::vec(0.0f64..100.0, 1..60)) {
        let a = aggregate_epsilon(&e);
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.iter().cloned().fold(0.0, f64::max);
        prop_assert!(a >= lo * (1.0 - 1e-12) && a <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn epsilon_is_a_scaled_norm(u in trajectory(40), d in trajectory(40), c in 0.0f64..4.0) {
        let truth = Trajectory { t0: 0.0, dt: 0.01, samples: u.clone() };
        let pred = |s: f64| Trajectory {
            t0: 0.0,
            dt: 0.01,
            samples: u.iter().zip(&d).map(|(a, b)| std::array::from_fn(|k| a[k] + s * b[k])).collect(),
        };
        let e1 = epsilon_single(&truth, &pred(1.0), LAMBDA_LORENZ).unwrap();
        let ec = epsilon_single(&truth, &pred(c), LAMBDA_LORENZ).unwrap();
        prop_assert!((ec - c * e1).abs() <= 1e-9 * (1.0 + e1 * c));
        prop_assert_eq!(epsilon_single(&truth, &truth, LAMBDA_LORENZ).unwrap(), 0.0);
    }

    #[test]
    fn restart_windows_stay_inside_the_test_span(
        span in 20.0f64..200.0,
        lambda in 0.2f64..3.0,
        n in 1usize..80,
    ) {
        let cfg = EvalConfig { n_windows: n, lambda, horizon: 1.0 / lambda };
        let offs = window_offsets(span, 0.01, &cfg).unwrap();
        prop_assert_eq!(offs.len(), n);
        prop_assert!(offs[0] >= 1);
        prop_assert!(offs.windows(2).all(|w| w[0] <= w[1]));
        let last = offs[n - 1] + forecast_steps(cfg.horizon, 0.01);
        prop_assert!(last as f64 * 0.01 <= span + 1e-9);
    }

    #[test]
    fn latin_hypercube_fills_every_stratum(n in 1usize..40, dim in 1usize..6, seed: u64) {
        let pts = latin_hypercube(n, dim, &mut rng_from_seed(seed));
        for d in 0..dim {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * n as f64) as usize).collect();
            bins.sort_unstable();
            prop_assert_eq!(bins, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn expected_improvement_is_monotone(
        mean in -3.0f64..3.0,
        sd in 1e-3f64..3.0,
        best in -3.0f64..3.0,
        shift in 0.0f64..1.0,
    ) {
        let a = expected_improvement(mean, sd, best, 0.01);
        let b = expected_improvement(mean + shift, sd, best, 0.01);
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert!(b <= a + 1e-12, "larger predicted error must not raise EI");
        let c = expected_improvement(mean, sd * 1.5, best, 0.01);
        prop_assert!(c + 1e-12 >= a, "more uncertainty must not lower EI");
    }

    #[test]
    fn kde_integrates_to_one(s in prop::collection::vec(-10.0f64..10.0, 1..100), bw in 0.05f64..2.0) {
        let k = gaussian_kde(&s, bw, 2048).unwrap();
        prop_assert!((k.integral() - 1.0).abs() < 3e-3, "integral {}", k.integral());
        prop_assert!(k.density.iter().all(|d| *d >= 0.0));
    }
}
