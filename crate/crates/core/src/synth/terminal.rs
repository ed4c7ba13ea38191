use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SynthesisBundle;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{max_sym_eigenvalue, spd_inverse};
use crate::setalg::HPolytope;

/// `||x - x_s||_Q^2 + ||u - u_s||_R^2 + l1 * ||u - u_s||_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub l1: f64,
}

impl StageCost {
    pub fn eval(&self, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
        dx.dot(&(&self.q * dx)) + du.dot(&(&self.r * du)) + self.l1 * du.lp_norm(1)
    }
}

/// Largest `alpha` with `{||x - x_s||_P^2 <= alpha}` inside `x_tight` and
/// `K (x - x_s) + u_s` inside `u_tight` over that ellipsoid.
pub fn terminal_level(
    p: &DMatrix<f64>,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    k: &DMatrix<f64>,
    x_tight: &HPolytope,
    u_tight: &HPolytope,
) -> Result<f64> {
    check_dim("terminal setpoint", p.nrows(), x_s.len())?;
    check_dim("tightened state set", p.nrows(), x_tight.dim())?;
    check_dim("tightened input set", k.nrows(), u_tight.dim())?;
    check_dim("input setpoint", k.nrows(), u_s.len())?;
    let pinv = spd_inverse(p, "Lyapunov matrix P")?;
    let mut alpha = f64::INFINITY;
    let mut consider = |h: DVector<f64>, slack: f64, which: &'static str| -> Result<()> {
        if slack <= 0.0 {
            return Err(Error::SetpointInfeasible { which, slack });
        }
        let hn = h.dot(&(&pinv * &h));
        if hn > 0.0 {
            alpha = alpha.min(slack * slack / hn);
        }
        Ok(())
    };
    for i in 0..x_tight.num_facets() {
        let h = x_tight.normals().row(i).transpose();
        let slack = x_tight.offsets()[i] - h.dot(x_s);
        consider(h, slack, "state")?;
    }
    for i in 0..u_tight.num_facets() {
        let hu = u_tight.normals().row(i).transpose();
        let slack = u_tight.offsets()[i] - hu.dot(u_s);
        consider(k.transpose() * hu, slack, "input")?;
    }
    if !alpha.is_finite() {
        return Err(Error::Invalid(
            "terminal level is unbounded: no constraint restricts the ellipsoid".into(),
        ));
    }
    Ok(alpha)
}

/// Sampled audit of the terminal ingredients in setpoint coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalReport {
    pub passed: bool,
    pub boundary_points: usize,
    pub interior_points: usize,
    /// `max ||x+ - x_s||_P^2 - alpha`.
    pub worst_successor: f64,
    /// Largest violation of `u_tight` by `K (x - x_s) + u_s`.
    pub worst_input: f64,
    /// Largest violation of `x_tight`.
    pub worst_state: f64,
    /// `max l_N(x+) - l_N(x) + l(x, K(x - x_s) + u_s)` with the L1 part
    /// majorized on boundary points; interior points use the quadratic part.
    pub worst_decrease: f64,
    pub l1_majorant: f64,
    /// Largest `||A_K e||_P^2 / ||e||_P^2`.
    pub contraction: f64,
    /// Whether the inscribed polygon with the given facet count is mapped
    /// into itself by the nominal closed loop.
    pub polygon_invariant: bool,
    pub violation: Option<String>,
}

const CHECK_TOL: f64 = 1e-8;

/// Checks successor containment, the input condition, state containment and
/// the terminal-cost decrease on `samples` boundary and `samples` interior
/// points of the terminal ellipsoid.
pub fn terminal_invariance_check(
    bundle: &SynthesisBundle,
    cost: &StageCost,
    samples: usize,
    facets: usize,
    seed: u64,
) -> Result<TerminalReport> {
    let term = &bundle.terminal;
    let (x_s, u_s) = (&bundle.setpoint_x, &bundle.setpoint_u);
    let k = &bundle.k_gain;
    let p = &bundle.p_lyap;
    let alpha = term.level();
    let a_k = bundle.closed_loop();
    let pinv = spd_inverse(p, "Lyapunov matrix P")?;

    let l1_majorant = cost.l1
        * (0..k.nrows())
            .map(|j| {
                let kj = k.row(j).transpose();
                (alpha * kj.dot(&(&pinv * &kj))).sqrt()
            })
            .sum::<f64>();

    let l = p
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("P"))?
        .unpack();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("P"))?;
    let m = &linv * (a_k.transpose() * p * &a_k) * linv.transpose();
    let contraction = max_sym_eigenvalue(&m);
    let eq_res = bundle.nominal.equilibrium_residual(x_s, u_s);
    let polygon_invariant = if facets >= 3 {
        contraction <= (PI / facets as f64).cos().powi(2) && eq_res.amax() <= CHECK_TOL
    } else {
        false
    };

    let boundary = if term.dim() == 2 {
        term.boundary_points(samples)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| term.sample_boundary(&mut rng))
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let interior: Vec<DVector<f64>> = (0..samples)
        .map(|_| term.sample_interior(&mut rng))
        .collect();

    let mut report = TerminalReport {
        passed: true,
        boundary_points: boundary.len(),
        interior_points: interior.len(),
        worst_successor: f64::NEG_INFINITY,
        worst_input: f64::NEG_INFINITY,
        worst_state: f64::NEG_INFINITY,
        worst_decrease: f64::NEG_INFINITY,
        l1_majorant,
        contraction,
        polygon_invariant,
        violation: None,
    };

    let points = boundary
        .iter()
        .map(|x| (x, true))
        .chain(interior.iter().map(|x| (x, false)));
    for (x, on_boundary) in points {
        let e = x - x_s;
        let du = k * &e;
        let u = &du + u_s;
        let next = bundle.nominal.step(x, &u);
        let succ = term.value(&next) - alpha;
        let input = -bundle.u_tight.margin(&u);
        let state = -bundle.x_tight.margin(x);
        let l1_part = if on_boundary { l1_majorant } else { 0.0 };
        let stage = e.dot(&(&cost.q * &e)) + du.dot(&(&cost.r * &du)) + l1_part;
        let decrease = term.value(&next) - term.value(x) + stage;

        report.worst_successor = report.worst_successor.max(succ);
        report.worst_input = report.worst_input.max(input);
        report.worst_state = report.worst_state.max(state);
        report.worst_decrease = report.worst_decrease.max(decrease);
        if report.violation.is_none() {
            let which = if succ > CHECK_TOL {
                Some(format!("successor leaves the terminal set by {succ:.3e}"))
            } else if input > CHECK_TOL {
                Some(format!(
                    "feedback input violates the tightened input set by {input:.3e}"
                ))
            } else if state > CHECK_TOL {
                Some(format!(
                    "point violates the tightened state set by {state:.3e}"
                ))
            } else if decrease > CHECK_TOL {
                Some(format!("terminal cost decrease fails by {decrease:.3e}"))
            } else {
                None
            };
            if let Some(msg) = which {
                report.violation = Some(format!("{msg} at x = {:?}", x.as_slice()));
            }
        }
    }
    report.passed = report.violation.is_none();
    Ok(report)
}
