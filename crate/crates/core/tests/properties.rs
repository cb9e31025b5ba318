use proptest::prelude::*;

use hilbert_flow::cli::parse_config;
use hilbert_flow::eigen::{dense_spectrum, lowest_eigenpair, EigenConfig};
use hilbert_flow::exceptional::{find_exceptional_points, EpConfig, SearchBox};
use hilbert_flow::feshbach::{constraint_residual, effective_hamiltonian, quadratic_coefficients, StepConfig, Variant};
use hilbert_flow::flow::{run_discrete_flow, FlowConfig};
use hilbert_flow::model::{build_model, ModelSpec};
use hilbert_flow::thermal::{exact_partition, trotter_partition};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn every_eigenpair_decouples(seed in 0u64..10_000, n in 3usize..12, sigma in 0.05f64..1.5, g in -1.5f64..1.5) {
        let m = build_model(&ModelSpec::ladder_random(n, sigma, g, seed)).unwrap();
        let h = m.hamiltonian_matrix(None);
        let spec = dense_spectrum(&h).unwrap();
        for j in 0..n {
            let lam = spec.eigenvalues[j];
            let Ok(h_eff) = effective_hamiltonian(&m, lam, 1e-10) else { continue };
            let v = spec.eigenvectors.column(j).rows(0, n - 1).into_owned();
            prop_assert!((&h_eff * &v - &v * lam).norm() <= 1e-9 * h.norm());
        }
    }

    #[test]
    fn quadratic_is_cleared_residual(seed in 0u64..10_000, n in 3usize..10, g in -1.0f64..1.0, gp in -3.0f64..3.0, shift in -0.5f64..0.5) {
        let m = build_model(&ModelSpec::ladder_random(n, 0.4, g, seed)).unwrap();
        let eig = lowest_eigenpair(&m.hamiltonian_matrix(None), &EigenConfig::default()).unwrap();
        let lam = eig.lambda1 + shift;
        let cfg = StepConfig::default();
        let q = quadratic_coefficients(&m, &eig, lam, Variant::Derived, cfg.a1_floor).unwrap();
        let Ok(r) = constraint_residual(&m, &eig, lam, gp, &cfg) else { return Ok(()) };
        let rhs = (lam - m.epsilon()[n - 1] - gp * m.v()[(n - 1, n - 1)]) * r;
        let scale = (q.a * gp * gp).abs().max((q.b * gp).abs()).max(q.c.abs());
        prop_assert!((q.eval(gp) - rhs).abs() <= 1e-11 * scale);
    }

    #[test]
    fn flow_chains_and_never_loses_to_truncation_at_the_first_step(seed in 0u64..10_000, n in 6usize..20, g in 0.05f64..0.8) {
        let m = build_model(&ModelSpec::ladder_random(n, 0.1, g, seed)).unwrap();
        let traj = run_discrete_flow(&m, &FlowConfig::new(3)).unwrap();
        for w in traj.steps.windows(2) {
            prop_assert_eq!(w[0].k_to, w[1].k_from);
            prop_assert_eq!(w[0].g_out.to_bits(), w[1].g_in.to_bits());
        }
        for (k, g_k) in &traj.g_of_k {
            prop_assert!(g_k.is_finite(), "k = {}", k);
        }
        let first = traj.dimension - 1;
        if traj.drift_of_k.contains_key(&first) {
            prop_assert!(traj.drift_of_k[&first] <= traj.naive_drift_of_k[&first] + 1e-12);
        }
    }

    #[test]
    fn trotter_underestimates_exact(seed in 0u64..10_000, n in 2usize..8, g in -1.0f64..1.0, beta in 0.1f64..2.0, order in 32usize..200) {
        let m = build_model(&ModelSpec::ladder_random(n, 0.5, g, seed)).unwrap();
        let z = trotter_partition(&m, beta, order, None).unwrap();
        let exact = exact_partition(&m, beta).unwrap();
        // (1 - x/n)^n <= e^-x for |x| < n
        prop_assert!(z > 0.0 && z <= exact * (1.0 + 1e-12));
    }

    #[test]
    fn exceptional_points_come_in_conjugate_pairs(seed in 0u64..10_000) {
        let m = build_model(&ModelSpec::ladder_random(3, 1.0, 0.0, seed)).unwrap();
        let b = SearchBox::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        let eps = find_exceptional_points(&m, &b, &EpConfig { grid: [5, 5], ..EpConfig::default() }).points;
        for (i, p) in eps.iter().enumerate() {
            prop_assert!(p.g_e.im != 0.0);
            let j = p.conjugate_of.expect("partner in a symmetric box");
            prop_assert!((eps[j].g_e - p.g_e.conj()).norm() <= 1e-6, "{} {}", i, j);
        }
    }

    #[test]
    fn fingerprint_tracks_the_model(seed in 0u64..10_000, n in 2usize..10) {
        let a = build_model(&ModelSpec::ladder_random(n, 0.3, 0.5, seed)).unwrap();
        let b = build_model(&ModelSpec::ladder_random(n, 0.3, 0.5, seed)).unwrap();
        let c = build_model(&ModelSpec::ladder_random(n, 0.3, 0.5, seed + 1)).unwrap();
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        prop_assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn misspelled_keys_are_rejected(key in "[a-z]{1,8}\\.[a-z]{1,8}") {
        let known = hilbert_flow::cli::config::KNOWN_KEYS.contains(&key.as_str());
        let text = format!("dimension = 4\n{key} = 1\n");
        let parsed = parse_config(&text, std::path::Path::new("p.toml"));
        if !known {
            let err = parsed.unwrap_err();
            prop_assert!(err.0.contains(&key));
        }
    }
}
