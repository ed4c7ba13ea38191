use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use tzpc::ident::{learn_model_set, Dataset, ModelSet};
use tzpc::ocp::{candidate_violation, shift_candidate, OcpSolver, OcpSpec, TerminalMode};
use tzpc::qp::{QpSettings, QpStatus};
use tzpc::setalg::{Ellipsoid, HPolytope, MatrixZonotope, Zonotope};
use tzpc::simloop::{decay_metrics, reachable_illustration, run_closed_loop, Plant, RunOptions};
use tzpc::synth::{
    synthesize, GainChoice, NominalModel, StageCost, SynthesisBundle, SynthesisOptions,
};

fn a_true() -> DMatrix<f64> {
    dmatrix![1.0, 1.0; 0.0, 1.0]
}

fn b_true() -> DMatrix<f64> {
    dmatrix![0.5; 1.0]
}

fn zw() -> Zonotope {
    Zonotope::new(dvector![0.0, 0.0], dmatrix![0.02, 0.01; 0.01, 0.02]).unwrap()
}

fn zx() -> Zonotope {
    Zonotope::new(dvector![-3.5, 0.0], dmatrix![4.0, 0.0; 0.0, 2.0]).unwrap()
}

fn zu() -> Zonotope {
    Zonotope::new(dvector![0.0], dmatrix![1.3]).unwrap()
}

fn cost() -> StageCost {
    StageCost {
        q: DMatrix::identity(2, 2),
        r: DMatrix::zeros(1, 1),
        l1: 0.01,
    }
}

fn learned(seed: u64) -> (Dataset, ModelSet) {
    let mut plant = Plant::new(a_true(), b_true(), zw(), seed).unwrap();
    let (trajs, _) = plant.generate_trajectories(&zx(), &zu(), 20, 5).unwrap();
    let d = Dataset::assemble(trajs).unwrap();
    let ms = learn_model_set(&d, &zw()).unwrap();
    (d, ms)
}

fn example1_bundle(seed: u64) -> (ModelSet, SynthesisBundle) {
    let (d, ms) = learned(seed);
    let opts = SynthesisOptions {
        z_w: zw(),
        delta: 0.0,
        nominal: None,
        gains: GainChoice::Riccati {
            q: dmatrix![3.0, 0.0; 0.0, 1.0],
            r: dmatrix![1.0],
        },
        theta: 0.01,
        kappa_max: 200,
        symmetrize_zm: false,
        x_set: zx().to_hpolytope().unwrap(),
        u_set: zu().to_hpolytope().unwrap(),
        x_s: dvector![0.0, 0.0],
        u_s: dvector![0.0],
        project_setpoint: true,
        alpha: None,
        tol: 1e-9,
    };
    let bundle = synthesize(&d, &ms, &opts).unwrap();
    (ms, bundle)
}

#[test]
fn example1_run_is_feasible_and_audited() {
    let (ms, bundle) = example1_bundle(11);
    let spec = OcpSpec::from_bundle(&bundle, 7, &cost(), TerminalMode::default()).unwrap();
    let mut solver = OcpSolver::new(spec.clone(), QpSettings::default());
    let mut plant = Plant::new(a_true(), b_true(), zw(), 5).unwrap();
    let opts = RunOptions {
        steps: 60,
        timing: false,
    };
    let log = run_closed_loop(
        &mut plant,
        &bundle,
        &mut solver,
        &dvector![-5.0, -2.0],
        opts,
    )
    .unwrap();
    assert!(log.completed(), "{:?}", log.outcome);
    assert_eq!(log.records.len(), 60);
    for (t, r) in log.records.iter().enumerate() {
        assert_eq!(r.t, t);
        assert_eq!(r.status, QpStatus::Optimal);
        assert!(r.slack_x >= -1e-7, "state violation at {t}: {}", r.slack_x);
        assert!(r.slack_u >= -1e-7, "input violation at {t}: {}", r.slack_u);
        assert!(
            r.slack_tube >= -1e-7,
            "tube violation at {t}: {}",
            r.slack_tube
        );
    }

    // the shifted candidate is feasible at the next state
    for w in log.records.windows(2) {
        let own = candidate_violation(&spec, &w[0].x, &w[0].solution.x_bar, &w[0].solution.u_bar)
            .unwrap();
        assert!(own.max() <= 1e-7, "own solution violation {own:?}");
        let (x_bar, u_bar) = shift_candidate(&spec, &w[0].solution, &bundle.k_gain);
        let v = candidate_violation(&spec, &w[1].x, &x_bar, &u_bar).unwrap();
        assert!(
            v.max() <= 1e-7,
            "shift candidate violation {v:?} at t = {}",
            w[0].t
        );
    }

    // x(t+1) lies in the illustrative reachable set
    let sets = reachable_illustration(&ms, &log, &zw()).unwrap();
    for (t, z) in sets.iter().enumerate() {
        let next = log.records.get(t + 1).map_or(&log.final_state, |r| &r.x);
        assert!(
            z.contains(next, 1e-9).unwrap(),
            "x({}) outside reachable set",
            t + 1
        );
        let (lo, hi) = z.interval_hull();
        assert!((hi - lo).amin() > 0.0);
    }

    // the realized disturbance lies in Z_phi
    let nominal = &bundle.nominal;
    let phi_poly = bundle.z_phi.to_hpolytope().unwrap();
    for (t, r) in log.records.iter().enumerate() {
        let next = log.records.get(t + 1).map_or(&log.final_state, |r| &r.x);
        let phi = next - nominal.step(&r.x, &r.u);
        assert!(
            phi_poly.contains(&phi, 1e-9),
            "phi outside Z_phi at t = {t}"
        );
    }

    let report = decay_metrics(&log, &bundle, &cost()).unwrap();
    assert!(!report.no_transient);
    assert!(report.rate.unwrap() < 0.0);
    assert_eq!(report.max_tube_violation, 0.0);
}

#[test]
fn runs_are_reproducible() {
    let (_, bundle) = example1_bundle(2);
    let spec = OcpSpec::from_bundle(&bundle, 7, &cost(), TerminalMode::default()).unwrap();
    let run = || {
        let mut solver = OcpSolver::new(spec.clone(), QpSettings::default());
        let mut plant = Plant::new(a_true(), b_true(), zw(), 9).unwrap();
        let opts = RunOptions {
            steps: 20,
            timing: false,
        };
        run_closed_loop(
            &mut plant,
            &bundle,
            &mut solver,
            &dvector![-5.0, -2.0],
            opts,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.to_csv(2, 1), b.to_csv(2, 1));
}

/// Exact model, no noise: the tube collapses to a point.
fn exact_bundle(l1: f64) -> (SynthesisBundle, StageCost) {
    let nominal = NominalModel::new(a_true(), b_true()).unwrap();
    let k = dmatrix![-0.631, -1.184];
    let acl = nominal.closed_loop(&k);
    let p = tzpc::linalg::dlyap(&acl, &DMatrix::identity(2, 2)).unwrap();
    let x_set = zx().to_hpolytope().unwrap();
    let u_set = zu().to_hpolytope().unwrap();
    let s = Zonotope::origin(2);
    let x_s = dvector![0.0, 0.0];
    let u_s = dvector![0.0];
    let alpha = tzpc::synth::terminal_level(&p, &x_s, &u_s, &k, &x_set, &u_set).unwrap();
    let bundle = SynthesisBundle {
        nominal,
        k_gain: k,
        p_lyap: p.clone(),
        z_w: Zonotope::origin(2),
        z_m: Zonotope::origin(2),
        z_eps: Zonotope::origin(2),
        z_phi: Zonotope::origin(2),
        s_rpi: s,
        theta: 0.0,
        kappa: 1,
        terminal: Ellipsoid::new(p, x_s.clone(), alpha).unwrap(),
        x_tight: x_set.clone(),
        u_tight: u_set.clone(),
        x_set,
        u_set,
        setpoint_x: x_s,
        setpoint_u: u_s,
    };
    let cost = StageCost {
        q: DMatrix::identity(2, 2),
        r: dmatrix![0.1],
        l1,
    };
    (bundle, cost)
}

fn noiseless_run(
    bundle: &SynthesisBundle,
    cost: &StageCost,
    x0: DVector<f64>,
    steps: usize,
) -> tzpc::simloop::RunLog {
    let spec = OcpSpec::from_bundle(bundle, 7, cost, TerminalMode::default()).unwrap();
    let settings = QpSettings {
        eps_abs: 1e-9,
        eps_rel: 1e-9,
        ..QpSettings::default()
    };
    let mut solver = OcpSolver::new(spec, settings);
    let mut plant = Plant::new(a_true(), b_true(), Zonotope::origin(2), 0).unwrap();
    let opts = RunOptions {
        steps,
        timing: false,
    };
    run_closed_loop(&mut plant, bundle, &mut solver, &x0, opts).unwrap()
}

#[test]
fn setpoint_is_a_fixed_point() {
    let (bundle, cost) = exact_bundle(0.01);
    let log = noiseless_run(&bundle, &cost, dvector![0.0, 0.0], 10);
    assert!(log.completed());
    for r in &log.records {
        assert!(r.x.amax() < 1e-8);
        assert!(r.j_star.abs() < 1e-8);
    }
    let report = decay_metrics(&log, &bundle, &cost).unwrap();
    assert!(report.no_transient);
    assert!(report.rate.is_none());
}

#[test]
fn quadratic_cost_decreases_along_noiseless_run() {
    let (bundle, cost) = exact_bundle(0.0);
    let log = noiseless_run(&bundle, &cost, dvector![-5.0, -1.0], 30);
    assert!(log.completed());
    let report = decay_metrics(&log, &bundle, &cost).unwrap();
    assert!(report.rate.unwrap() < 0.0);
    for (t, m) in report.decrease_margins.iter().enumerate() {
        let scale = 1.0 + log.records[t].j_star;
        assert!(*m <= 1e-5 * scale, "cost increase {m} at t = {t}");
    }
    assert!(decay_metrics(
        &tzpc::simloop::RunLog {
            records: log.records[..2].to_vec(),
            final_state: log.final_state.clone(),
            outcome: log.outcome.clone(),
        },
        &bundle,
        &cost
    )
    .is_err());
}

#[test]
fn singleton_reachable_sets() {
    let (bundle, cost) = exact_bundle(0.0);
    let log = noiseless_run(&bundle, &cost, dvector![-2.0, 1.0], 5);
    let ms =
        ModelSet::new(MatrixZonotope::new(dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0], vec![]).unwrap());
    let sets = reachable_illustration(&ms, &log, &Zonotope::origin(2)).unwrap();
    for (r, z) in log.records.iter().zip(&sets) {
        assert!(z.generators().amax() == 0.0 || z.num_generators() == 0);
        assert!((z.center() - (a_true() * &r.x + b_true() * &r.u)).amax() < 1e-12);
    }
    let _ = HPolytope::unbounded(2);
}
