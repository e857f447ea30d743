use hankel_arma::hankel::{build_hankel, build_structured, ok_product, verify_hankel_identity};
use hankel_arma::realization::{realize, realize_with_rule, OrderRule};
use hankel_arma::solver::{solve_constrained, solve_ls, SolverConfig, ETA_TOL};
use hankel_arma::{ArmaModel, Trajectory};

fn arma21() -> ArmaModel {
    ArmaModel::new(vec![1.5, -0.8], vec![0.3], 1.0).unwrap()
}

#[test]
fn simulated_trajectory_satisfies_hankel_identity() {
    let model = arma21();
    let traj = model.simulate(600, 3).unwrap();
    let ss = model.to_state_space().with_initial_state_from(&traj).unwrap();
    for t in [2, 5, 8] {
        let hs = build_hankel(&traj, t).unwrap();
        let sm = build_structured(&ss, &hs).unwrap();
        let resid = verify_hankel_identity(&hs, &sm).unwrap();
        assert!(resid <= 1e-10 * hs.x_future.norm(), "t = {t}: {resid}");
    }
}

#[test]
fn trajectory_survives_csv_round_trip() {
    let traj = arma21().simulate(50, 9).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.horizon(), traj.horizon());
    assert_eq!(back.x, traj.x);
    assert_eq!(back.e, traj.e);
}

#[test]
fn exact_product_realizes_to_same_product() {
    let ss = arma21().to_state_space();
    let ok = ok_product(&ss, 6);
    let real = realize(&ok, 2).unwrap();
    assert!(!real.ill_conditioned);
    let back = ok_product(&real.model, 6);
    assert!((&back - &ok).norm() <= 1e-9 * ok.norm(), "{}", (&back - &ok).norm());
}

#[test]
fn constrained_estimate_recovers_order_end_to_end() {
    let model = arma21();
    let traj = model.simulate(4000, 21).unwrap();
    let hs = build_hankel(&traj, 6).unwrap();
    let ls = solve_ls(&hs).unwrap();
    let eta = 1.05 * ls.residual_fro;
    let est = solve_constrained(&hs, &SolverConfig::eta(eta)).unwrap();
    assert!((est.residual_fro - eta).abs() <= ETA_TOL * eta, "{} vs {eta}", est.residual_fro);
    assert!(est.nuclear_norm() <= ls.nuclear_norm());
    let real = realize_with_rule(&est.l_hat, OrderRule::Threshold(0.05)).unwrap();
    assert_eq!(real.p_hat, 2);
}
