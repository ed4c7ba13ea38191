//! The finite-horizon tube program over nominal states and inputs, built in
//! sparse (non-condensed) form and solved with [`crate::qp`].

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_spd, is_symmetric, min_sym_eigenvalue};
use crate::qp::{solve_qp_warm, QpProblem, QpSettings, QpStatus};
use crate::setalg::{Ellipsoid, HPolytope, Zonotope};
use crate::synth::{NominalModel, StageCost, SynthesisBundle};

/// How the terminal ellipsoid enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalMode {
    /// Inscribed polytope with the given number of facets.
    Polytope { facets: usize },
    /// The ellipsoid itself, enforced by successive tangent cuts.
    Exact,
}

impl Default for TerminalMode {
    fn default() -> Self {
        TerminalMode::Polytope { facets: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub horizon: usize,
    pub nominal: NominalModel,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub l1: f64,
    pub p: DMatrix<f64>,
    pub x_tight: HPolytope,
    pub u_tight: HPolytope,
    pub s_rpi: Zonotope,
    pub terminal: Ellipsoid,
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub terminal_mode: TerminalMode,
}

impl OcpSpec {
    /// Builds the spec from a synthesis bundle and validates it.
    pub fn from_bundle(
        bundle: &SynthesisBundle,
        horizon: usize,
        cost: &StageCost,
        terminal_mode: TerminalMode,
    ) -> Result<Self> {
        let spec = Self {
            horizon,
            nominal: bundle.nominal.clone(),
            q: cost.q.clone(),
            r: cost.r.clone(),
            l1: cost.l1,
            p: bundle.p_lyap.clone(),
            x_tight: bundle.x_tight.clone(),
            u_tight: bundle.u_tight.clone(),
            s_rpi: bundle.s_rpi.clone(),
            terminal: bundle.terminal.clone(),
            x_s: bundle.setpoint_x.clone(),
            u_s: bundle.setpoint_u.clone(),
            terminal_mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shapes, weights (`Q`, `P` positive definite, `R` positive
    /// semidefinite), terminal shape equal to `P`, and nonempty tightened
    /// sets.
    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.nominal.n_x(), self.nominal.n_u());
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        check_dim("Q", nx, self.q.nrows())?;
        check_dim("R", nu, self.r.nrows())?;
        check_dim("P", nx, self.p.nrows())?;
        check_dim("tightened state set", nx, self.x_tight.dim())?;
        check_dim("tightened input set", nu, self.u_tight.dim())?;
        check_dim("tube", nx, self.s_rpi.dim())?;
        check_dim("terminal set", nx, self.terminal.dim())?;
        check_dim("state setpoint", nx, self.x_s.len())?;
        check_dim("input setpoint", nu, self.u_s.len())?;
        check_spd(&self.q, "Q")?;
        check_spd(&self.p, "P")?;
        if !is_symmetric(&self.r, 1e-10) {
            return Err(Error::Invalid("R is not symmetric".into()));
        }
        let rmin = min_sym_eigenvalue(&self.r);
        if rmin < -1e-12 {
            return Err(Error::NotPositiveSemidefinite(rmin));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return Err(Error::Invalid(format!(
                "L1 weight {} must be finite and >= 0",
                self.l1
            )));
        }
        if (self.terminal.shape() - &self.p).amax() > 1e-12 {
            return Err(Error::Invalid("terminal shape differs from P".into()));
        }
        if let TerminalMode::Polytope { facets } = self.terminal_mode {
            if nx == 2 && facets < 3 {
                return Err(Error::Invalid(format!(
                    "terminal polytope needs >= 3 facets, got {facets}"
                )));
            }
        }
        if self.x_tight.is_empty(1e-9)? {
            return Err(Error::EmptySet("tightened state set"));
        }
        if self.u_tight.is_empty(1e-9)? {
            return Err(Error::EmptySet("tightened input set"));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.nominal.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.nominal.n_u()
    }

    pub fn stage_cost(&self) -> StageCost {
        StageCost {
            q: self.q.clone(),
            r: self.r.clone(),
            l1: self.l1,
        }
    }

    /// The objective evaluated directly on state and input sequences.
    pub fn cost(&self, x_bar: &[DVector<f64>], u_bar: &[DVector<f64>]) -> f64 {
        let stage = self.stage_cost();
        let mut j = 0.0;
        for k in 0..self.horizon {
            j += stage.eval(&(&x_bar[k] - &self.x_s), &(&u_bar[k] - &self.u_s));
        }
        let dn = &x_bar[self.horizon] - &self.x_s;
        j + dn.dot(&(&self.p * &dn))
    }

    /// Terminal rows `h' x <= b` for the polytope mode.
    pub fn terminal_rows(&self) -> Result<Vec<(DVector<f64>, f64)>> {
        let poly = match self.terminal_mode {
            TerminalMode::Polytope { facets } => self.terminal.inner_polytope(facets)?,
            TerminalMode::Exact => return initial_cuts(&self.terminal),
        };
        Ok(rows_of(&poly))
    }
}

fn rows_of(poly: &HPolytope) -> Vec<(DVector<f64>, f64)> {
    (0..poly.num_facets())
        .map(|i| (poly.normals().row(i).transpose(), poly.offsets()[i]))
        .collect()
}

/// Circumscribed polygon of tangent cuts, the starting outer approximation
/// for the exact mode.
fn initial_cuts(e: &Ellipsoid) -> Result<Vec<(DVector<f64>, f64)>> {
    let pts = match e.dim() {
        1 => e.boundary_points(2)?,
        2 => e.boundary_points(16)?,
        n => return Err(Error::UnsupportedDimension(n)),
    };
    Ok(pts.iter().map(|p| e.tangent_cut(p)).collect())
}

/// Offsets and row counts of the program's variable and constraint blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpLayout {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    pub n_beta: usize,
    pub n_epi: usize,
    pub dynamics_rows: usize,
    pub tube_rows: usize,
    pub beta_rows: usize,
    pub input_rows: usize,
    pub state_rows: usize,
    pub terminal_rows: usize,
    pub epigraph_rows: usize,
}

impl OcpLayout {
    pub fn x_off(&self, k: usize) -> usize {
        k * self.n_x
    }

    pub fn u_off(&self, k: usize) -> usize {
        (self.horizon + 1) * self.n_x + k * self.n_u
    }

    pub fn beta_off(&self) -> usize {
        (self.horizon + 1) * self.n_x + self.horizon * self.n_u
    }

    pub fn epi_off(&self) -> usize {
        self.beta_off() + self.n_beta
    }

    pub fn num_vars(&self) -> usize {
        self.epi_off() + self.n_epi
    }

    pub fn num_rows(&self) -> usize {
        self.dynamics_rows
            + self.tube_rows
            + self.beta_rows
            + self.input_rows
            + self.state_rows
            + self.terminal_rows
            + self.epigraph_rows
    }
}

/// Builds the QP for the current state with the spec's terminal rows.
pub fn build(spec: &OcpSpec, x_now: &DVector<f64>) -> Result<(QpProblem, OcpLayout)> {
    build_with_terminal(spec, x_now, &spec.terminal_rows()?)
}

fn build_with_terminal(
    spec: &OcpSpec,
    x_now: &DVector<f64>,
    terminal: &[(DVector<f64>, f64)],
) -> Result<(QpProblem, OcpLayout)> {
    let (nx, nu, n) = (spec.n_x(), spec.n_u(), spec.horizon);
    check_dim("current state", nx, x_now.len())?;
    let mu = spec.u_tight.num_facets();
    let mx = spec.x_tight.num_facets();
    let n_beta = spec.s_rpi.num_generators();
    let n_epi = if spec.l1 > 0.0 { nu * n } else { 0 };
    let lay = OcpLayout {
        n_x: nx,
        n_u: nu,
        horizon: n,
        n_beta,
        n_epi,
        dynamics_rows: nx * n,
        tube_rows: nx,
        beta_rows: n_beta,
        input_rows: mu * n,
        state_rows: mx * n,
        terminal_rows: terminal.len(),
        epigraph_rows: 2 * n_epi,
    };
    let nv = lay.num_vars();
    let nr = lay.num_rows();

    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    let qxs = &spec.q * &spec.x_s;
    let rus = &spec.r * &spec.u_s;
    let pxs = &spec.p * &spec.x_s;
    for k in 0..n {
        let (xo, uo) = (lay.x_off(k), lay.u_off(k));
        p.view_mut((xo, xo), (nx, nx)).copy_from(&(&spec.q * 2.0));
        q.rows_mut(xo, nx).copy_from(&(&qxs * -2.0));
        p.view_mut((uo, uo), (nu, nu)).copy_from(&(&spec.r * 2.0));
        q.rows_mut(uo, nu).copy_from(&(&rus * -2.0));
    }
    let xo = lay.x_off(n);
    p.view_mut((xo, xo), (nx, nx)).copy_from(&(&spec.p * 2.0));
    q.rows_mut(xo, nx).copy_from(&(&pxs * -2.0));
    for i in 0..n_epi {
        q[lay.epi_off() + i] = spec.l1;
    }

    let mut a = DMatrix::zeros(nr, nv);
    let mut l = DVector::from_element(nr, f64::NEG_INFINITY);
    let mut u = DVector::from_element(nr, f64::INFINITY);
    let mut row = 0;

    // x_{k+1} - A x_k - B u_k = 0
    for k in 0..n {
        a.view_mut((row, lay.x_off(k + 1)), (nx, nx))
            .fill_with_identity();
        a.view_mut((row, lay.x_off(k)), (nx, nx))
            .copy_from(&(-&spec.nominal.a_bar));
        a.view_mut((row, lay.u_off(k)), (nx, nu))
            .copy_from(&(-&spec.nominal.b_bar));
        l.rows_mut(row, nx).fill(0.0);
        u.rows_mut(row, nx).fill(0.0);
        row += nx;
    }
    // x_now - x_0 = c_S + G_S beta
    a.view_mut((row, lay.x_off(0)), (nx, nx))
        .fill_with_identity();
    a.view_mut((row, lay.beta_off()), (nx, n_beta))
        .copy_from(spec.s_rpi.generators());
    let rhs = x_now - spec.s_rpi.center();
    l.rows_mut(row, nx).copy_from(&rhs);
    u.rows_mut(row, nx).copy_from(&rhs);
    row += nx;
    for i in 0..n_beta {
        a[(row, lay.beta_off() + i)] = 1.0;
        l[row] = -1.0;
        u[row] = 1.0;
        row += 1;
    }
    for k in 0..n {
        a.view_mut((row, lay.u_off(k)), (mu, nu))
            .copy_from(spec.u_tight.normals());
        u.rows_mut(row, mu).copy_from(spec.u_tight.offsets());
        row += mu;
    }
    for k in 0..n {
        a.view_mut((row, lay.x_off(k)), (mx, nx))
            .copy_from(spec.x_tight.normals());
        u.rows_mut(row, mx).copy_from(spec.x_tight.offsets());
        row += mx;
    }
    for (h, b) in terminal {
        a.view_mut((row, lay.x_off(n)), (1, nx))
            .copy_from(&h.transpose());
        u[row] = *b;
        row += 1;
    }
    // s >= u - u_s and s >= u_s - u
    for k in 0..(if n_epi > 0 { n } else { 0 }) {
        for j in 0..nu {
            let (ui, si) = (lay.u_off(k) + j, lay.epi_off() + k * nu + j);
            a[(row, si)] = 1.0;
            a[(row, ui)] = -1.0;
            l[row] = -spec.u_s[j];
            row += 1;
            a[(row, si)] = 1.0;
            a[(row, ui)] = 1.0;
            l[row] = spec.u_s[j];
            row += 1;
        }
    }
    debug_assert_eq!(row, nr);
    Ok((QpProblem::new(p, q, a, l, u)?, lay))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub u_bar: Vec<DVector<f64>>,
    pub x_bar: Vec<DVector<f64>>,
    pub beta: DVector<f64>,
    pub j_star: f64,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    /// QP objective plus the constant offset, which equals `j_star` when the
    /// epigraph variables are tight.
    pub qp_cost: f64,
}

impl OcpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

fn constant_offset(spec: &OcpSpec) -> f64 {
    let xq = spec.x_s.dot(&(&spec.q * &spec.x_s));
    let ur = spec.u_s.dot(&(&spec.r * &spec.u_s));
    spec.horizon as f64 * (xq + ur) + spec.x_s.dot(&(&spec.p * &spec.x_s))
}

fn unpack(
    lay: &OcpLayout,
    z: &DVector<f64>,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, DVector<f64>) {
    let x_bar = (0..=lay.horizon)
        .map(|k| z.rows(lay.x_off(k), lay.n_x).into_owned())
        .collect();
    let u_bar = (0..lay.horizon)
        .map(|k| z.rows(lay.u_off(k), lay.n_u).into_owned())
        .collect();
    let beta = z.rows(lay.beta_off(), lay.n_beta).into_owned();
    (x_bar, u_bar, beta)
}

/// Reusable solver that warm-starts each solve from the shifted previous
/// solution.
#[derive(Debug, Clone)]
pub struct OcpSolver {
    spec: OcpSpec,
    settings: QpSettings,
    warm_start: bool,
    previous: Option<DVector<f64>>,
}

impl OcpSolver {
    pub fn new(spec: OcpSpec, settings: QpSettings) -> Self {
        Self {
            spec,
            settings,
            warm_start: true,
            previous: None,
        }
    }

    pub fn with_warm_start(mut self, enabled: bool) -> Self {
        self.warm_start = enabled;
        self
    }

    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn solve(&mut self, x_now: &DVector<f64>) -> Result<OcpSolution> {
        let spec = &self.spec;
        let mut terminal = spec.terminal_rows()?;
        let max_rounds = match spec.terminal_mode {
            TerminalMode::Polytope { .. } => 1,
            TerminalMode::Exact => 64,
        };
        let mut warm = if self.warm_start {
            self.previous.clone()
        } else {
            None
        };
        let mut result = None;
        for _ in 0..max_rounds {
            let (prob, lay) = build_with_terminal(spec, x_now, &terminal)?;
            if warm.as_ref().is_none_or(|w| w.len() != lay.num_vars()) {
                warm = Some(rollout_guess(spec, &lay, x_now));
            }
            let x0 = warm.as_ref();
            let y0 = DVector::zeros(lay.num_rows());
            let qp = solve_qp_warm(&prob, &self.settings, x0.map(|x| (x, &y0)))?;
            let (x_bar, u_bar, beta) = unpack(&lay, &qp.x);
            let x_n = x_bar[spec.horizon].clone();
            let needs_cut = spec.terminal_mode == TerminalMode::Exact
                && qp.status == QpStatus::Optimal
                && spec.terminal.value(&x_n) > spec.terminal.level() * (1.0 + 1e-9) + 1e-12;
            let sol = OcpSolution {
                j_star: spec.cost(&x_bar, &u_bar),
                qp_cost: qp.objective + constant_offset(spec),
                u_bar,
                beta,
                status: qp.status,
                primal_res: qp.primal_res,
                dual_res: qp.dual_res,
                iterations: qp.iterations,
                x_bar,
            };
            warm = Some(qp.x.clone());
            if needs_cut {
                let c = spec.terminal.center();
                let v = spec.terminal.value(&x_n);
                let p = c + (&x_n - c) * (spec.terminal.level() / v).sqrt();
                terminal.push(spec.terminal.tangent_cut(&p));
                result = Some((sol, qp.x, lay));
                continue;
            }
            result = Some((sol, qp.x, lay));
            break;
        }
        let (sol, z, lay) = result.expect("at least one round");
        if sol.status == QpStatus::Optimal {
            self.previous = Some(shift_warm(spec, &lay, &z));
        } else {
            self.previous = None;
        }
        Ok(sol)
    }
}

/// Starting point without a previous solution: tube centered at `x_now`,
/// inputs held at the setpoint.
fn rollout_guess(spec: &OcpSpec, lay: &OcpLayout, x_now: &DVector<f64>) -> DVector<f64> {
    let mut w = DVector::zeros(lay.num_vars());
    let mut x = x_now - spec.s_rpi.center();
    for k in 0..lay.horizon {
        w.rows_mut(lay.x_off(k), lay.n_x).copy_from(&x);
        w.rows_mut(lay.u_off(k), lay.n_u).copy_from(&spec.u_s);
        x = spec.nominal.step(&x, &spec.u_s);
    }
    w.rows_mut(lay.x_off(lay.horizon), lay.n_x).copy_from(&x);
    w
}

/// Shifts a primal solution one step forward, repeating the last input.
fn shift_warm(spec: &OcpSpec, lay: &OcpLayout, z: &DVector<f64>) -> DVector<f64> {
    let mut w = z.clone();
    let (nx, nu, n) = (lay.n_x, lay.n_u, lay.horizon);
    for k in 0..n {
        let next = z.rows(lay.x_off(k + 1), nx).into_owned();
        w.rows_mut(lay.x_off(k), nx).copy_from(&next);
    }
    for k in 0..n.saturating_sub(1) {
        let next = z.rows(lay.u_off(k + 1), nu).into_owned();
        w.rows_mut(lay.u_off(k), nu).copy_from(&next);
    }
    let u_last = z.rows(lay.u_off(n - 1), nu).into_owned();
    let x_last = z.rows(lay.x_off(n), nx).into_owned();
    w.rows_mut(lay.x_off(n), nx)
        .copy_from(&spec.nominal.step(&x_last, &u_last));
    w
}

/// Cold solve.
pub fn solve_ocp(
    spec: &OcpSpec,
    x_now: &DVector<f64>,
    settings: &QpSettings,
) -> Result<OcpSolution> {
    OcpSolver::new(spec.clone(), settings.clone())
        .with_warm_start(false)
        .solve(x_now)
}

/// The shifted sequence `(u_1, ..., u_{N-1}, K (x_N - x_s) + u_s)` with
/// states rolled out through the nominal model from `x_1`.
pub fn shift_candidate(
    spec: &OcpSpec,
    sol: &OcpSolution,
    k_gain: &DMatrix<f64>,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = spec.horizon;
    let mut u_bar: Vec<DVector<f64>> = sol.u_bar[1..].to_vec();
    let x_n = &sol.x_bar[n];
    u_bar.push(k_gain * (x_n - &spec.x_s) + &spec.u_s);
    let mut x_bar = vec![sol.x_bar[1].clone()];
    for k in 0..n {
        let next = spec.nominal.step(&x_bar[k], &u_bar[k]);
        x_bar.push(next);
    }
    (x_bar, u_bar)
}

/// Largest violation of each constraint block by a candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateViolation {
    pub dynamics: f64,
    pub tube: f64,
    pub input: f64,
    pub state: f64,
    pub terminal: f64,
}

impl CandidateViolation {
    pub fn max(&self) -> f64 {
        self.dynamics
            .max(self.tube)
            .max(self.input)
            .max(self.state)
            .max(self.terminal)
    }
}

/// Evaluates a candidate against the program at `x_now`. The tube
/// constraint is checked on the facet description of `S`, the terminal
/// constraint on the spec's terminal polytope (or ellipsoid in exact mode).
pub fn candidate_violation(
    spec: &OcpSpec,
    x_now: &DVector<f64>,
    x_bar: &[DVector<f64>],
    u_bar: &[DVector<f64>],
) -> Result<CandidateViolation> {
    let n = spec.horizon;
    check_dim("candidate states", n + 1, x_bar.len())?;
    check_dim("candidate inputs", n, u_bar.len())?;
    let mut v = CandidateViolation {
        dynamics: 0.0,
        tube: 0.0,
        input: 0.0,
        state: 0.0,
        terminal: 0.0,
    };
    for k in 0..n {
        let d = &x_bar[k + 1] - spec.nominal.step(&x_bar[k], &u_bar[k]);
        v.dynamics = v.dynamics.max(d.amax());
        v.input = v.input.max(-spec.u_tight.margin(&u_bar[k]));
        v.state = v.state.max(-spec.x_tight.margin(&x_bar[k]));
    }
    let s_poly = spec.s_rpi.to_hpolytope()?;
    v.tube = v.tube.max(-s_poly.margin(&(x_now - &x_bar[0])));
    v.terminal = match spec.terminal_mode {
        TerminalMode::Polytope { facets } => {
            -spec.terminal.inner_polytope(facets)?.margin(&x_bar[n])
        }
        TerminalMode::Exact => spec.terminal.value(&x_bar[n]) - spec.terminal.level(),
    }
    .max(0.0);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn spec(l1: f64, mode: TerminalMode) -> OcpSpec {
        let nominal = NominalModel::new(dmatrix![1.0, 1.0; 0.0, 1.0], dmatrix![0.5; 1.0]).unwrap();
        let p = dmatrix![2.0, 0.5; 0.5, 3.0];
        let s = Zonotope::new(dvector![0.0, 0.0], dmatrix![0.05, 0.01; 0.0, 0.04]).unwrap();
        OcpSpec {
            horizon: 5,
            nominal,
            q: DMatrix::identity(2, 2),
            r: dmatrix![1.0],
            l1,
            p: p.clone(),
            x_tight: HPolytope::from_box(&dvector![-7.0, -1.8], &dvector![0.4, 1.8]).unwrap(),
            u_tight: HPolytope::from_box(&dvector![-1.2], &dvector![1.2]).unwrap(),
            s_rpi: s,
            terminal: Ellipsoid::new(p, dvector![0.0, 0.0], 0.1).unwrap(),
            x_s: dvector![0.0, 0.0],
            u_s: dvector![0.0],
            terminal_mode: mode,
        }
    }

    #[test]
    fn row_counts() {
        let s = spec(0.01, TerminalMode::default());
        let (prob, lay) = build(&s, &dvector![-1.0, 0.0]).unwrap();
        assert_eq!(lay.dynamics_rows, 10);
        assert_eq!(lay.tube_rows, 2);
        assert_eq!(lay.beta_rows, 2);
        assert_eq!(lay.input_rows, 5 * 2);
        assert_eq!(lay.state_rows, 5 * 4);
        assert_eq!(lay.terminal_rows, 16);
        assert_eq!(lay.epigraph_rows, 10);
        assert_eq!(prob.num_constraints(), 10 + 2 + 2 + 10 + 20 + 16 + 10);
        assert_eq!(prob.num_vars(), 12 + 5 + 2 + 5);
    }

    #[test]
    fn setpoint_is_fixed_point() {
        let s = spec(0.01, TerminalMode::default());
        let sol = solve_ocp(&s, &dvector![0.0, 0.0], &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.j_star.abs() < 1e-6);
        assert!(sol.u_bar.iter().all(|u| u.amax() < 1e-6));
        assert!(sol.x_bar.iter().all(|x| x.amax() < 1e-6));
    }

    #[test]
    fn one_step_unconstrained_matches_normal_equations() {
        let mut s = spec(0.0, TerminalMode::default());
        s.horizon = 1;
        s.terminal = s.terminal.with_level(1e6).unwrap();
        s.s_rpi = Zonotope::origin(2);
        let x0 = dvector![-0.5, 0.2];
        let sol = solve_ocp(&s, &x0, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        // min u'Ru + (Ax + Bu)'P(Ax + Bu)
        let (a, b) = (&s.nominal.a_bar, &s.nominal.b_bar);
        let h = &s.r + b.transpose() * &s.p * b;
        let g = b.transpose() * &s.p * a * &x0;
        let u = -h.try_inverse().unwrap() * g;
        assert!((&sol.u_bar[0] - &u).amax() < 1e-7);
    }

    #[test]
    fn far_state_is_infeasible() {
        let s = spec(0.01, TerminalMode::default());
        let sol = solve_ocp(&s, &dvector![100.0, 100.0], &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn epigraph_is_exact_and_warm_start_agrees() {
        let s = spec(0.3, TerminalMode::default());
        let x0 = dvector![-2.0, 0.5];
        let cold = solve_ocp(&s, &x0, &QpSettings::default()).unwrap();
        assert_eq!(cold.status, QpStatus::Optimal);
        assert!((cold.qp_cost - cold.j_star).abs() < 1e-8);

        let mut solver = OcpSolver::new(s.clone(), QpSettings::default());
        let first = solver.solve(&x0).unwrap();
        assert!((first.j_star - cold.j_star).abs() < 1e-6);
        let x1 = s.nominal.step(&x0, &first.u_bar[0]);
        let warm = solver.solve(&x1).unwrap();
        let cold1 = solve_ocp(&s, &x1, &QpSettings::default()).unwrap();
        assert!((warm.j_star - cold1.j_star).abs() < 1e-6 * (1.0 + cold1.j_star.abs()));
    }

    #[test]
    fn exact_terminal_mode_respects_ellipsoid() {
        let s = spec(0.0, TerminalMode::Exact);
        let x0 = dvector![-3.0, 0.0];
        let sol = solve_ocp(&s, &x0, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(s.terminal.value(&sol.x_bar[5]) <= s.terminal.level() * (1.0 + 1e-9) + 1e-12);
        let poly = solve_ocp(
            &spec(0.0, TerminalMode::default()),
            &x0,
            &QpSettings::default(),
        )
        .unwrap();
        // the inscribed polygon is more restrictive
        assert!(sol.j_star <= poly.j_star + 1e-7);
    }

    #[test]
    fn nominal_shift_candidate_is_feasible() {
        let s = spec(0.01, TerminalMode::default());
        let sol = solve_ocp(&s, &dvector![-2.0, 0.5], &QpSettings::default()).unwrap();
        let k = dmatrix![-0.4, -1.0];
        let (xc, uc) = shift_candidate(&s, &sol, &k);
        assert_eq!(xc.len(), 6);
        let v = candidate_violation(&s, &sol.x_bar[1], &xc, &uc).unwrap();
        assert!(v.dynamics < 1e-12 && v.tube < 1e-7 && v.input < 1e-7 && v.state < 1e-7);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = spec(0.0, TerminalMode::default());
        s.horizon = 0;
        assert!(s.validate().is_err());
        let mut s = spec(0.0, TerminalMode::default());
        s.x_tight = HPolytope::new(dmatrix![1.0, 0.0; -1.0, 0.0], dvector![-1.0, -1.0]).unwrap();
        assert!(matches!(s.validate(), Err(Error::EmptySet(_))));
        let mut s = spec(0.0, TerminalMode::default());
        s.r = dmatrix![0.0];
        assert!(s.validate().is_ok());
        s.q = DMatrix::zeros(2, 2);
        assert!(s.validate().is_err());
    }
}
