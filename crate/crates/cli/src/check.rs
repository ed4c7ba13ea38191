//! The `check` command: the standing assumptions of the method evaluated on
//! a scenario, each with a pass/fail verdict and numeric margins.

use std::fmt;

use nalgebra::DVector;
use tzpc::ident::{data_rank, learn_model_set, Dataset, RANK_TOL};
use tzpc::linalg::{controllability_rank, spectral_radius};
use tzpc::ocp::solve_ocp;
use tzpc::setalg::Ellipsoid;
use tzpc::synth::{
    build_phi, compute_rpi, mismatch_sets, nominal_from_explicit, pick_nominal, project_setpoint,
    symmetrize_about_origin, synthesize_gain, terminal_invariance_check, terminal_level, tighten,
    verify_lyapunov, ErrorDynamics, GainChoice, SynthesisBundle,
};

use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{collect_data, covering_delta, ocp_spec, SYNTH_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Not evaluated because an earlier check failed.
    Skipped,
    /// Reported without a verdict.
    Info,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
            Status::Info => "INFO",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

/// Check names in evaluation order.
pub const CHECKS: [&str; 11] = [
    "noise set contains the origin",
    "data rank condition",
    "nominal model controllability",
    "Lyapunov vertex verification",
    "RPI certificate",
    "RPI invariance",
    "tightened constraint sets nonempty",
    "setpoint feasibility",
    "terminal set within tightened constraints",
    "terminal sampling checks",
    "initial program feasible",
];

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items
            .iter()
            .all(|i| matches!(i.status, Status::Pass | Status::Info))
    }

    pub fn get(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }

    fn push(&mut self, index: usize, status: Status, detail: String) {
        self.items.push(CheckItem {
            name: CHECKS[index],
            status,
            detail,
        });
    }

    fn verdict(&mut self, index: usize, ok: bool, detail: String) -> bool {
        self.push(index, if ok { Status::Pass } else { Status::Fail }, detail);
        ok
    }

    /// Records a failure and marks every later check as skipped.
    fn fail_rest(mut self, index: usize, detail: String) -> Self {
        self.push(index, Status::Fail, detail);
        for i in index + 1..CHECKS.len() {
            self.push(i, Status::Skipped, "earlier check failed".into());
        }
        self
    }

    fn skip_from(mut self, index: usize) -> Self {
        for i in index..CHECKS.len() {
            self.push(i, Status::Skipped, "earlier check failed".into());
        }
        self
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.items {
            writeln!(f, "{}  {}: {}", i.status, i.name, i.detail)?;
        }
        Ok(())
    }
}

/// Evaluates every check on freshly generated data. Only configuration
/// problems are returned as errors; failed assumptions land in the report.
pub fn run_checks(cfg: &ScenarioConfig) -> CliResult<CheckReport> {
    let mut rep = CheckReport::default();
    let (nx, nu) = (cfg.n_x(), cfg.n_u());
    let zw = cfg.noise_set()?;

    let origin = DVector::zeros(nx);
    let in_zw = zw.contains(&origin, SYNTH_TOL)?;
    rep.verdict(
        0,
        in_zw,
        format!(
            "{} generators, center {:?}",
            zw.num_generators(),
            zw.center().as_slice()
        ),
    );

    let trajs = match collect_data(cfg) {
        Ok(t) => t,
        Err(CliError::Check(msg)) => return Ok(rep.fail_rest(1, msg)),
        Err(e) => return Err(e),
    };
    let d = Dataset::assemble(trajs)?;
    let rank = data_rank(&d, RANK_TOL);
    let required = nx + nu;
    let detail = format!(
        "rank(D-) = {rank}, required {required}, {} columns",
        d.num_columns()
    );
    if rank != required {
        return Ok(rep.fail_rest(1, detail));
    }
    rep.verdict(1, true, detail);

    let ms = learn_model_set(&d, &zw)?;
    let nominal = match cfg.nominal()? {
        Some(m) => match nominal_from_explicit(&ms, &m, SYNTH_TOL) {
            Ok(n) => n,
            Err(e) => return Ok(rep.fail_rest(2, e.to_string())),
        },
        None => pick_nominal(&ms),
    };
    let ctrb = controllability_rank(&nominal.a_bar, &nominal.b_bar, 1e-9);
    rep.push(
        2,
        Status::Info,
        format!("controllability rank {ctrb} of {nx}; stabilizability suffices"),
    );

    let gains = match cfg.gain_choice()? {
        GainChoice::Provided { k, p } => Ok((k, p)),
        GainChoice::Riccati { q, r } => synthesize_gain(&nominal, &q, &r, &ms, SYNTH_TOL),
    };
    let (k, p) = match gains {
        Ok(kp) => kp,
        Err(e) => return Ok(rep.fail_rest(3, e.to_string())),
    };
    let lyap = match verify_lyapunov(&ms, &k, &p, SYNTH_TOL) {
        Ok(r) => r,
        Err(e) => return Ok(rep.fail_rest(3, e.to_string())),
    };
    let detail = format!(
        "worst max eigenvalue {:.4e} over {} vertices",
        lyap.worst, lyap.vertices
    );
    if !lyap.passed {
        return Ok(rep.fail_rest(3, detail));
    }
    rep.verdict(3, true, detail);

    let delta = covering_delta(cfg, &d)?;
    let (z_m, z_eps) = mismatch_sets(&d, &nominal, &zw, delta, ms.fro_norm)?;
    let z_m = if cfg.tube.symmetrize_zm {
        symmetrize_about_origin(&z_m)
    } else {
        z_m
    };
    let z_phi = build_phi(&z_m, &z_eps, &zw)?;
    let a_k = nominal.closed_loop(&k);
    let ed = match ErrorDynamics::new(&nominal, &k, z_phi.clone()) {
        Ok(ed) => ed,
        Err(e) => return Ok(rep.fail_rest(4, e.to_string())),
    };
    let rpi = match compute_rpi(&ed, cfg.tube.theta, cfg.tube.kappa_max, SYNTH_TOL) {
        Ok(r) => r,
        Err(e) => return Ok(rep.fail_rest(4, e.to_string())),
    };
    let mut pow = a_k.clone();
    for _ in 1..rpi.kappa {
        pow = &a_k * pow;
    }
    let cert = z_phi
        .linear_map(&pow)?
        .is_subset_of(&z_phi.scale(rpi.theta), SYNTH_TOL)?;
    rep.verdict(
        4,
        cert,
        format!(
            "kappa = {}, theta = {}, spectral radius {:.4}",
            rpi.kappa,
            rpi.theta,
            spectral_radius(&a_k)
        ),
    );
    let invariant = rpi
        .s
        .linear_map(&a_k)?
        .minkowski_sum(&z_phi)?
        .is_subset_of(&rpi.s, SYNTH_TOL)?;
    let (lo, hi) = rpi.s.interval_hull();
    rep.verdict(
        5,
        invariant,
        format!(
            "S has {} generators, interval hull {:?} .. {:?}",
            rpi.s.num_generators(),
            lo.as_slice(),
            hi.as_slice()
        ),
    );
    if !(cert && invariant) {
        return Ok(rep.skip_from(6));
    }

    let (x_set, u_set) = (cfg.state_set()?, cfg.input_set()?);
    let (x_tight, u_tight) = tighten(&x_set, &u_set, &rpi.s, &k)?;
    let x_empty = x_tight.is_empty(SYNTH_TOL)?;
    let u_empty = u_tight.is_empty(SYNTH_TOL)?;
    if x_empty || u_empty {
        let which = if x_empty { "state" } else { "input" };
        return Ok(rep.fail_rest(6, format!("tightened {which} set is empty")));
    }
    rep.verdict(
        6,
        true,
        format!(
            "{} state facets, {} input facets",
            x_tight.num_facets(),
            u_tight.num_facets()
        ),
    );

    let (x_s, u_s) = cfg.setpoint()?;
    let (x_s, u_s) = if cfg.cost.project_setpoint {
        project_setpoint(&nominal, &x_s, &u_s)
    } else {
        (x_s, u_s)
    };
    let residual = nominal.equilibrium_residual(&x_s, &u_s).amax();
    let (mx, mu) = (x_tight.margin(&x_s), u_tight.margin(&u_s));
    let detail = format!(
        "x_s = {:?}, u_s = {:?}, margins {mx:.4e} (state) {mu:.4e} (input), \
         equilibrium residual {residual:.3e}",
        x_s.as_slice(),
        u_s.as_slice()
    );
    if !(mx > 0.0 && mu > 0.0) {
        return Ok(rep.fail_rest(7, detail));
    }
    rep.verdict(7, true, detail);

    let alpha = match cfg.alpha()? {
        Some(a) => a,
        None => match terminal_level(&p, &x_s, &u_s, &k, &x_tight, &u_tight) {
            Ok(a) => a,
            Err(e) => return Ok(rep.fail_rest(8, e.to_string())),
        },
    };
    let bundle = SynthesisBundle {
        nominal,
        k_gain: k,
        p_lyap: p.clone(),
        z_w: zw,
        z_m,
        z_eps,
        z_phi,
        s_rpi: rpi.s,
        theta: rpi.theta,
        kappa: rpi.kappa,
        terminal: Ellipsoid::new(p, x_s.clone(), alpha)?,
        x_set,
        u_set,
        x_tight,
        u_tight,
        setpoint_x: x_s,
        setpoint_u: u_s,
    };
    let inside = bundle.terminal_in_constraints(SYNTH_TOL)?;
    rep.verdict(8, inside, format!("alpha = {alpha:.6e}"));

    let cost = cfg.stage_cost()?;
    let term = terminal_invariance_check(
        &bundle,
        &cost,
        cfg.terminal.check_samples,
        cfg.terminal.facets,
        cfg.data.seed,
    )?;
    let mut detail = format!(
        "{} boundary and {} interior points, worst successor {:.3e}, input {:.3e}, \
         decrease {:.3e}, contraction {:.4}",
        term.boundary_points,
        term.interior_points,
        term.worst_successor,
        term.worst_input,
        term.worst_decrease,
        term.contraction
    );
    if let Some(v) = &term.violation {
        detail.push_str(&format!("; {v}"));
    }
    rep.verdict(9, term.passed, detail);

    let spec = ocp_spec(cfg, &bundle)?;
    let x0 = cfg.x0()?;
    let sol = solve_ocp(&spec, &x0, &cfg.qp_settings())?;
    rep.verdict(
        10,
        sol.is_optimal(),
        format!(
            "x(0) = {:?}: status {}, J* = {:.6e}",
            x0.as_slice(),
            sol.status,
            sol.j_star
        ),
    );
    Ok(rep)
}
