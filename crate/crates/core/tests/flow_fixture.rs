use hilbert_flow::feshbach::Variant;
use hilbert_flow::flow::spline::CubicSpline;
use hilbert_flow::flow::{continuum_rhs, run_discrete_flow, CoefficientInterpolant, FlowConfig};
use hilbert_flow::model::{build_model, ModelSpec};

fn n50_flow() -> hilbert_flow::flow::FlowTrajectory {
    let m = build_model(&ModelSpec::ladder_random(50, 0.1, 0.5, 42)).unwrap();
    run_discrete_flow(&m, &FlowConfig::new(5)).unwrap()
}

/// The continuum right-hand side at x = 30 against the slope of the
/// discrete trajectory. The chord (g(29) - g(31)) / -2 is 11% off here
/// because the discrete couplings are not smooth on the unit scale; the
/// spline through all g(k) is the comparison that resolves the slope.
#[test]
fn rhs_matches_discrete_slope_at_x30() {
    let traj = n50_flow();
    let interp = CoefficientInterpolant::from_samples(&traj.coefficient_track).unwrap();
    let g = &traj.g_of_k;
    let rhs = continuum_rhs(30.0, g[&30], &interp, Variant::Derived, 1e-12).unwrap();
    let chord = (g[&29] - g[&31]) / -2.0;
    let pts: Vec<(f64, f64)> = g.iter().map(|(&k, &v)| (k as f64, v)).collect();
    let slope = CubicSpline::new(&pts).unwrap().derivative(30.0);
    println!("rhs {rhs:.6e}, spline slope {slope:.6e}, chord {chord:.6e}");
    assert!((rhs - slope).abs() <= 0.10 * slope.abs(), "rhs {rhs} vs slope {slope}");
    assert!((rhs - chord).abs() <= 0.15 * chord.abs(), "rhs {rhs} vs chord {chord}");
}

#[test]
fn chaining_and_drift_tables() {
    let traj = n50_flow();
    assert_eq!(traj.breakdown_at, None);
    for w in traj.steps.windows(2) {
        assert_eq!(w[0].k_to, w[1].k_from);
        assert_eq!(w[0].g_out, w[1].g_in);
    }
    assert_eq!(traj.steps.len(), 45);
    assert_eq!(traj.drift_of_k.len(), 46);
    assert_eq!(traj.naive_drift_of_k.len(), 46);
}

#[test]
fn zero_coupling_stays_zero() {
    let m = build_model(&ModelSpec::ladder_random(12, 0.3, 0.0, 5)).unwrap();
    let traj = run_discrete_flow(&m, &FlowConfig::new(3)).unwrap();
    assert!(traj.g_of_k.values().all(|&g| g == 0.0));
    assert!(traj.drift_of_k.values().all(|&d| d == 0.0));
}
