//! Dense operator-splitting (ADMM) solver for convex quadratic programs
//!
//! ```text
//! minimize    0.5 z'Pz + q'z
//! subject to  l <= A z <= u
//! ```
//!
//! The iteration follows the OSQP scheme: Ruiz equilibration, per-row step
//! sizes with stiffer equality rows, over-relaxation, adaptive step size,
//! primal infeasibility detection, and a final active-set polish on the
//! unscaled problem.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{is_symmetric, min_sym_eigenvalue};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    /// Validates shapes, symmetry and positive semidefiniteness of `p`, and
    /// `l <= u`. Bounds may be infinite.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        check_dim("QP Hessian rows", n, p.nrows())?;
        check_dim("QP Hessian cols", n, p.ncols())?;
        check_dim("QP constraint cols", n, a.ncols())?;
        check_dim("QP lower bound", a.nrows(), l.len())?;
        check_dim("QP upper bound", a.nrows(), u.len())?;
        if !p
            .iter()
            .chain(q.iter())
            .chain(a.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("QP data"));
        }
        if l.iter().chain(u.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("QP bounds"));
        }
        if let Some(i) = (0..l.len()).find(|&i| l[i] > u[i]) {
            return Err(Error::InvalidInterval(i));
        }
        let scale = p.amax().max(1.0);
        if !is_symmetric(&p, 1e-9 * scale) {
            return Err(Error::Invalid("QP Hessian is not symmetric".into()));
        }
        // P + tau I is positive definite iff every eigenvalue of P exceeds -tau
        let tau = 1e-9 * scale;
        if n > 0 && Cholesky::new(&p + DMatrix::identity(n, n) * tau).is_none() {
            return Err(Error::NotPositiveSemidefinite(min_sym_eigenvalue(&p)));
        }
        Ok(Self { p, q, a, l, u })
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Independent KKT residuals of a primal-dual pair.
    pub fn kkt_residuals(&self, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
        let ax = &self.a * x;
        let stat = &self.p * x + &self.q + self.a.transpose() * y;
        let mut primal: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..ax.len() {
            primal = primal.max(self.l[i] - ax[i]).max(ax[i] - self.u[i]);
            if y[i] > 0.0 {
                comp = comp.max(if self.u[i].is_finite() {
                    y[i] * (self.u[i] - ax[i]).abs()
                } else {
                    y[i]
                });
            } else if y[i] < 0.0 {
                comp = comp.max(if self.l[i].is_finite() {
                    -y[i] * (ax[i] - self.l[i]).abs()
                } else {
                    -y[i]
                });
            }
        }
        KktResiduals {
            primal,
            dual: inf_norm(&stat),
            complementarity: comp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_pinf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub adaptive_interval: usize,
    pub check_interval: usize,
    pub polish: bool,
    /// Also attempt the polish every this many iterations (0: only at the
    /// end).
    pub polish_interval: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_pinf: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            adaptive_interval: 25,
            check_interval: 5,
            polish: true,
            polish_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalError,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
            QpStatus::NumericalError => "numerical_error",
        }
    }
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for QpStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(QpStatus::Optimal),
            "infeasible" => Ok(QpStatus::Infeasible),
            "max_iter" => Ok(QpStatus::MaxIter),
            "numerical_error" => Ok(QpStatus::NumericalError),
            other => Err(Error::Parse(format!("unknown solver status '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    pub polished: bool,
}

pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    solve_qp_warm(problem, settings, None)
}

/// Solves from an optional primal-dual starting point `(x, y)`.
pub fn solve_qp_warm(
    problem: &QpProblem,
    settings: &QpSettings,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<QpSolution> {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    if let Some((x0, y0)) = warm {
        check_dim("warm start primal", n, x0.len())?;
        check_dim("warm start dual", m, y0.len())?;
    }
    if n == 0 {
        let x = DVector::zeros(0);
        let feasible = (0..m).all(|i| problem.l[i] <= 0.0 && 0.0 <= problem.u[i]);
        return Ok(QpSolution {
            y: DVector::zeros(m),
            objective: 0.0,
            status: if feasible {
                QpStatus::Optimal
            } else {
                QpStatus::Infeasible
            },
            primal_res: 0.0,
            dual_res: 0.0,
            iterations: 0,
            polished: false,
            x,
        });
    }

    let sc = Scaling::ruiz(problem, settings.scaling_iters);
    let mut admm = Admm::new(problem, &sc, settings);
    if let Some((x0, y0)) = warm {
        admm.warm_start(problem, &sc, x0, y0);
    }
    let mut sol = admm.run(problem, &sc, settings);

    if settings.polish
        && !sol.polished
        && matches!(sol.status, QpStatus::Optimal | QpStatus::MaxIter)
    {
        if let Some(polished) = polish(problem, &sol, settings, POLISH_ROUNDS) {
            sol = polished;
        }
    }
    Ok(sol)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn eps_primal(s: &QpSettings, ax: &DVector<f64>, z: &DVector<f64>) -> f64 {
    s.eps_abs + s.eps_rel * inf_norm(ax).max(inf_norm(z))
}

fn eps_dual(s: &QpSettings, px: &DVector<f64>, aty: &DVector<f64>, q: &DVector<f64>) -> f64 {
    s.eps_abs + s.eps_rel * inf_norm(px).max(inf_norm(aty)).max(inf_norm(q))
}

/// Diagonal equilibration: `P_s = c D P D`, `q_s = c D q`, `A_s = E A D`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

impl Scaling {
    fn ruiz(prob: &QpProblem, iters: usize) -> Self {
        let n = prob.num_vars();
        let m = prob.num_constraints();
        let mut p = prob.p.clone();
        let mut q = prob.q.clone();
        let mut a = prob.a.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let mut c = 1.0;
        let clamp = |v: f64| {
            if v < SCALE_MIN {
                1.0
            } else {
                v.min(SCALE_MAX)
            }
        };
        for _ in 0..iters {
            let dt = DVector::from_fn(n, |j, _| {
                let col_p = p.column(j).amax();
                let col_a = if m > 0 { a.column(j).amax() } else { 0.0 };
                1.0 / clamp(col_p.max(col_a)).sqrt()
            });
            let et = DVector::from_fn(m, |i, _| 1.0 / clamp(a.row(i).amax()).sqrt());
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dt[i] * dt[j];
                }
                for i in 0..m {
                    a[(i, j)] *= et[i] * dt[j];
                }
                q[j] *= dt[j];
                d[j] *= dt[j];
            }
            for i in 0..m {
                e[i] *= et[i];
            }
            let mean_col = (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64;
            let gamma = 1.0 / clamp(mean_col.max(q.amax()));
            p *= gamma;
            q *= gamma;
            c *= gamma;
        }
        let l = prob.l.component_mul(&e);
        let u = prob.u.component_mul(&e);
        Self {
            d,
            e,
            c,
            p,
            q,
            a,
            l,
            u,
        }
    }

    fn unscale_x(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.d)
    }

    fn unscale_z(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_div(&self.e)
    }

    fn unscale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.e) / self.c
    }
}

/// Row-compressed copy of a constraint matrix for the iteration products.
struct Csr {
    ncols: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut ptr = vec![0];
        let (mut idx, mut val) = (vec![], vec![]);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v != 0.0 {
                    idx.push(j);
                    val.push(v);
                }
            }
            ptr.push(idx.len());
        }
        Self {
            ncols: a.ncols(),
            ptr,
            idx,
            val,
        }
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.ptr.len() - 1, |i, _| {
            (self.ptr[i]..self.ptr[i + 1])
                .map(|k| self.val[k] * x[self.idx[k]])
                .sum()
        })
    }

    fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.ptr.len() - 1 {
            let yi = y[i];
            if yi != 0.0 {
                for k in self.ptr[i]..self.ptr[i + 1] {
                    out[self.idx[k]] += self.val[k] * yi;
                }
            }
        }
        out
    }
}

struct Admm {
    a_s: Csr,
    a_u: Csr,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
    rho_vec: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Admm {
    fn new(prob: &QpProblem, sc: &Scaling, s: &QpSettings) -> Self {
        let n = prob.num_vars();
        let m = prob.num_constraints();
        let mut admm = Self {
            a_s: Csr::from_dense(&sc.a),
            a_u: Csr::from_dense(&prob.a),
            x: DVector::zeros(n),
            z: DVector::zeros(m),
            y: DVector::zeros(m),
            rho: s.rho.clamp(RHO_MIN, RHO_MAX),
            rho_vec: DVector::zeros(m),
            chol: None,
        };
        admm.set_rho(prob, sc, s);
        admm
    }

    fn warm_start(&mut self, prob: &QpProblem, sc: &Scaling, x0: &DVector<f64>, y0: &DVector<f64>) {
        self.x = x0.component_div(&sc.d);
        let ax = &prob.a * x0;
        self.z = DVector::from_fn(ax.len(), |i, _| ax[i].clamp(prob.l[i], prob.u[i]) * sc.e[i]);
        self.y = y0.component_div(&sc.e) * sc.c;
    }

    fn set_rho(&mut self, prob: &QpProblem, sc: &Scaling, s: &QpSettings) {
        let m = prob.num_constraints();
        for i in 0..m {
            let (l, u) = (prob.l[i], prob.u[i]);
            self.rho_vec[i] = if l == f64::NEG_INFINITY && u == f64::INFINITY {
                RHO_MIN
            } else if u - l < 1e-10 * (1.0 + l.abs()) {
                RHO_EQ_FACTOR * self.rho
            } else {
                self.rho
            };
        }
        let n = prob.num_vars();
        let mut kkt = sc.p.clone();
        for j in 0..n {
            kkt[(j, j)] += s.sigma;
        }
        let a = &self.a_s;
        for i in 0..m {
            for k1 in a.ptr[i]..a.ptr[i + 1] {
                let v = self.rho_vec[i] * a.val[k1];
                for k2 in a.ptr[i]..a.ptr[i + 1] {
                    kkt[(a.idx[k1], a.idx[k2])] += v * a.val[k2];
                }
            }
        }
        self.chol = Cholesky::new(kkt);
    }

    fn run(&mut self, prob: &QpProblem, sc: &Scaling, s: &QpSettings) -> QpSolution {
        let mut status = QpStatus::MaxIter;
        let mut iterations = s.max_iter;
        let (mut prim, mut dual) = (f64::INFINITY, f64::INFINITY);
        let check = s.check_interval.max(1);
        let mut failed_guess = None;
        for iter in 1..=s.max_iter {
            let Some(chol) = self.chol.as_ref() else {
                status = QpStatus::NumericalError;
                iterations = iter;
                break;
            };
            let y_prev = self.y.clone();
            let rz = self.z.component_mul(&self.rho_vec) - &self.y;
            let rhs = &self.x * s.sigma - &sc.q + self.a_s.tr_mul(&rz);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = self.a_s.mul(&x_tilde);
            let x_new = &x_tilde * s.alpha + &self.x * (1.0 - s.alpha);
            let z_relax = &z_tilde * s.alpha + &self.z * (1.0 - s.alpha);
            let z_new = DVector::from_fn(z_relax.len(), |i, _| {
                (z_relax[i] + self.y[i] / self.rho_vec[i]).clamp(sc.l[i], sc.u[i])
            });
            self.y += (&z_relax - &z_new).component_mul(&self.rho_vec);
            self.x = x_new;
            self.z = z_new;

            if iter % check != 0 && iter != s.max_iter {
                continue;
            }
            if !self.x.iter().chain(self.y.iter()).all(|v| v.is_finite()) {
                status = QpStatus::NumericalError;
                iterations = iter;
                break;
            }
            let x = sc.unscale_x(&self.x);
            let z = sc.unscale_z(&self.z);
            let y = sc.unscale_y(&self.y);
            let ax = self.a_u.mul(&x);
            let px = &prob.p * &x;
            let aty = self.a_u.tr_mul(&y);
            prim = inf_norm(&(&ax - &z));
            dual = inf_norm(&(&px + &prob.q + &aty));
            let ep = eps_primal(s, &ax, &z);
            let ed = eps_dual(s, &px, &aty, &prob.q);
            if prim <= ep && dual <= ed {
                status = QpStatus::Optimal;
                iterations = iter;
                break;
            }
            let dy = sc.unscale_y(&(&self.y - &y_prev));

            if primal_infeasible(prob, &self.a_u, &dy, s.eps_pinf) {
                status = QpStatus::Infeasible;
                iterations = iter;
                break;
            }
            if s.polish && s.polish_interval > 0 && iter % s.polish_interval == 0 {
                let guess = guess_active(prob, ax.clone(), &y);
                if failed_guess.as_ref() != Some(&guess) {
                    failed_guess = Some(guess);
                    let candidate = QpSolution {
                        objective: 0.0,
                        x,
                        y,
                        status: QpStatus::MaxIter,
                        primal_res: prim,
                        dual_res: dual,
                        iterations: iter,
                        polished: false,
                    };
                    if let Some(done) = polish(prob, &candidate, s, POLISH_ROUNDS_EARLY) {
                        return done;
                    }
                }
            }
            if s.adaptive_rho && iter % s.adaptive_interval.max(check) == 0 {
                let pn = prim / inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
                let dn = dual
                    / inf_norm(&px)
                        .max(inf_norm(&aty))
                        .max(inf_norm(&prob.q))
                        .max(1e-30);
                let ratio = (pn / dn.max(1e-30)).sqrt();
                let new_rho = (self.rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
                    self.rho = new_rho;
                    self.set_rho(prob, sc, s);
                }
            }
        }
        let x = sc.unscale_x(&self.x);
        let y = sc.unscale_y(&self.y);
        QpSolution {
            objective: prob.objective(&x),
            x,
            y,
            status,
            primal_res: prim,
            dual_res: dual,
            iterations,
            polished: false,
        }
    }
}

/// Farkas certificate test on the dual increment.
fn primal_infeasible(prob: &QpProblem, a: &Csr, dy: &DVector<f64>, eps: f64) -> bool {
    let m = dy.len();
    let proj = DVector::from_fn(m, |i, _| {
        let v = dy[i];
        if (v > 0.0 && prob.u[i] == f64::INFINITY) || (v < 0.0 && prob.l[i] == f64::NEG_INFINITY) {
            0.0
        } else {
            v
        }
    });
    let norm = inf_norm(&proj);
    if norm < 1e-30 {
        return false;
    }
    let aty = inf_norm(&a.tr_mul(&proj));
    let support: f64 = (0..m)
        .map(|i| {
            if proj[i] > 0.0 {
                prob.u[i] * proj[i]
            } else if proj[i] < 0.0 {
                prob.l[i] * proj[i]
            } else {
                0.0
            }
        })
        .sum();
    aty <= eps * norm && support < -eps * norm
}

const POLISH_ROUNDS: usize = 60;
const POLISH_ROUNDS_EARLY: usize = 4;
const POLISH_PROX: f64 = 1e-7;

/// Active-set refinement on the unscaled problem. Starts from the rows the
/// ADMM iterate marks active, adds violated rows and releases rows that
/// cannot hold together, one at a time; once the reduced solution is primal
/// feasible, multipliers of the right sign are sought by sign-constrained
/// least squares, which also covers degenerate vertices where the KKT
/// multipliers are not unique.
fn polish(prob: &QpProblem, sol: &QpSolution, s: &QpSettings, rounds: usize) -> Option<QpSolution> {
    let m = prob.num_constraints();
    let mut active = guess_active(prob, &prob.a * &sol.x, &sol.y);
    for _ in 0..rounds {
        let rows: Vec<(usize, f64, i8)> = (0..m)
            .filter_map(|i| active[i].map(|(b, sg)| (i, b, sg)))
            .collect();
        let (x, mult) = reduced_kkt(prob, &rows, &sol.x)?;
        let ax = &prob.a * &x;

        // add the most violated row
        let mut worst: Option<(usize, f64, i8, f64)> = None;
        for i in 0..m {
            if active[i].is_some() {
                continue;
            }
            let (l, u) = (prob.l[i], prob.u[i]);
            let cand = if ax[i] < l - 1e-10 * (1.0 + l.abs()) {
                Some((l, -1, l - ax[i]))
            } else if ax[i] > u + 1e-10 * (1.0 + u.abs()) {
                Some((u, 1, ax[i] - u))
            } else {
                None
            };
            if let Some((b, sign, v)) = cand {
                if worst.is_none_or(|w| v > w.3) {
                    worst = Some((i, b, sign, v));
                }
            }
        }
        if let Some((i, b, sign, _)) = worst {
            active[i] = Some((b, sign));
            continue;
        }
        // pinned rows that cannot all hold: release the inequality whose
        // multiplier points the wrong way most
        let inconsistent = rows
            .iter()
            .any(|&(i, b, _)| (ax[i] - b).abs() > 1e-9 * (1.0 + b.abs()));
        if inconsistent {
            let release = rows
                .iter()
                .enumerate()
                .filter(|(_, &(_, _, sign))| sign != 0)
                .map(|(r, &(i, _, sign))| (i, -f64::from(sign) * mult[r]))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, wrong)) if wrong > 0.0 => {
                    active[i] = None;
                    continue;
                }
                _ => return None,
            }
        }

        let signs_ok = rows
            .iter()
            .enumerate()
            .all(|(r, &(_, _, sign))| f64::from(sign) * mult[r] >= -s.eps_abs);
        let kkt_mult = mult.clone();
        let mult = if signs_ok {
            mult
        } else {
            let grad = &prob.p * &x + &prob.q;
            sign_constrained_multipliers(prob, &rows, &grad)
        };
        let mut y = DVector::zeros(m);
        for (r, &(i, _, sign)) in rows.iter().enumerate() {
            y[i] = match sign {
                -1 => mult[r].min(0.0),
                1 => mult[r].max(0.0),
                _ => mult[r],
            };
        }
        let z = DVector::from_fn(m, |i, _| ax[i].clamp(prob.l[i], prob.u[i]));
        let px = &prob.p * &x;
        let aty = prob.a.tr_mul(&y);
        let prim = inf_norm(&(&ax - &z));
        let dual = inf_norm(&(&px + &prob.q + &aty));
        if prim > eps_primal(s, &ax, &z) {
            return None;
        }
        if dual > eps_dual(s, &px, &aty, &prob.q) {
            // primal feasible but not stationary: leave the face along the
            // most wrong-signed multiplier
            let release = rows
                .iter()
                .enumerate()
                .filter(|(_, &(_, _, sign))| sign != 0)
                .map(|(r, &(i, _, sign))| (i, -f64::from(sign) * kkt_mult[r]))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, wrong)) if wrong > 0.0 => {
                    active[i] = None;
                    continue;
                }
                _ => return None,
            }
        }
        return Some(QpSolution {
            objective: prob.objective(&x),
            x,
            y,
            status: QpStatus::Optimal,
            primal_res: prim,
            dual_res: dual,
            iterations: sol.iterations,
            polished: true,
        });
    }
    None
}

/// Per row: pinned bound and allowed multiplier sign (0 for equalities),
/// read off a primal-dual iterate.
fn guess_active(prob: &QpProblem, ax: DVector<f64>, y: &DVector<f64>) -> Vec<Option<(f64, i8)>> {
    (0..ax.len())
        .map(|i| {
            let (l, u) = (prob.l[i], prob.u[i]);
            if u - l < 1e-10 * (1.0 + l.abs()) {
                Some((l, 0))
            } else if l.is_finite() && ax[i] - l < -y[i] {
                Some((l, -1))
            } else if u.is_finite() && u - ax[i] < y[i] {
                Some((u, 1))
            } else {
                None
            }
        })
        .collect()
}

/// Solves `[P + S, A_r'; A_r, 0] [x; y_r] = [S x0 - q; b_r]` for the given
/// rows: the equality-constrained problem with a small proximal term `S`
/// around `x0` on the variables without curvature, which keeps them in place. The dual block
/// is regularized and the result refined against the unregularized system.
fn reduced_kkt(
    prob: &QpProblem,
    rows: &[(usize, f64, i8)],
    x0: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.num_vars();
    let k = rows.len();
    let dim = n + k;
    let scale = prob.p.amax().max(1.0);
    let prox = DVector::from_fn(n, |j, _| {
        if prob.p[(j, j)] <= 1e-12 * scale {
            POLISH_PROX * scale
        } else {
            0.0
        }
    });
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    for j in 0..n {
        kkt[(j, j)] += prox[j];
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n)
        .copy_from(&(x0.component_mul(&prox) - &prob.q));
    // unit rows keep the dual regularization small relative to A_r A_r'
    let norms: Vec<f64> = rows
        .iter()
        .map(|&(i, _, _)| {
            let v = prob.a.row(i).norm();
            if v > 0.0 {
                v
            } else {
                1.0
            }
        })
        .collect();
    for (r, &(i, b, _)) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = prob.a[(i, j)] / norms[r];
            kkt[(j, n + r)] = prob.a[(i, j)] / norms[r];
        }
        rhs[n + r] = b / norms[r];
    }
    let mut reg = kkt.clone();
    for r in 0..k {
        reg[(n + r, n + r)] -= 1e-7;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..10 {
        let res = &rhs - &kkt * &sol;
        if inf_norm(&res) < 1e-14 {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mult = DVector::from_fn(k, |r, _| sol[n + r] / norms[r]);
    Some((sol.rows(0, n).into_owned(), mult))
}

/// Multipliers `y_r` minimizing `||A_r' y_r + grad||` subject to the sign
/// pattern of each row (equality rows free), by Lawson-Hanson.
fn sign_constrained_multipliers(
    prob: &QpProblem,
    rows: &[(usize, f64, i8)],
    grad: &DVector<f64>,
) -> DVector<f64> {
    let n = prob.num_vars();
    let k = rows.len();
    // columns sign * a_i; constrained entries are nonnegative
    let mut mat = DMatrix::zeros(n, k);
    for (r, &(i, _, sign)) in rows.iter().enumerate() {
        let sg = if sign == 0 { 1.0 } else { f64::from(sign) };
        for j in 0..n {
            mat[(j, r)] = sg * prob.a[(i, j)];
        }
    }
    let free: Vec<bool> = rows.iter().map(|&(_, _, sign)| sign == 0).collect();
    let z = nnls_with_free(&mat, &(-grad), &free);
    DVector::from_fn(k, |r, _| {
        let sign = rows[r].2;
        if sign == 0 {
            z[r]
        } else {
            f64::from(sign) * z[r]
        }
    })
}

/// `min ||M z - d||` with `z_j >= 0` unless `free[j]` (Lawson-Hanson). The
/// passive-set least-squares problems use the Gram matrix with a tiny ridge,
/// so rank-deficient column sets are handled.
fn nnls_with_free(mat: &DMatrix<f64>, d: &DVector<f64>, free: &[bool]) -> DVector<f64> {
    let k = mat.ncols();
    let gram = mat.tr_mul(mat);
    let rhs = mat.tr_mul(d);
    let ridge = 1e-12 * (1.0 + gram.diagonal().amax());
    let tol = 1e-12 * (1.0 + mat.amax() * d.amax());
    let lstsq = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
        let mut out = DVector::zeros(k);
        if idx.is_empty() {
            return out;
        }
        let mut sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gram[(idx[a], idx[b])]);
        for a in 0..idx.len() {
            sub[(a, a)] += ridge;
        }
        let r = DVector::from_fn(idx.len(), |a, _| rhs[idx[a]]);
        if let Some(ch) = Cholesky::new(sub) {
            let sol = ch.solve(&r);
            for (c, &j) in idx.iter().enumerate() {
                out[j] = sol[c];
            }
        }
        out
    };
    let mut passive: Vec<bool> = free.to_vec();
    let mut z = if free.iter().any(|&f| f) {
        lstsq(&passive)
    } else {
        DVector::zeros(k)
    };
    for _ in 0..3 * k + 10 {
        let w = &rhs - &gram * &z;
        let entering = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(t) = entering else { break };
        passive[t] = true;
        loop {
            let cand = lstsq(&passive);
            let blocked: Vec<usize> = (0..k)
                .filter(|&j| passive[j] && !free[j] && cand[j] <= 0.0)
                .collect();
            if blocked.is_empty() {
                z = cand;
                break;
            }
            let step = blocked
                .iter()
                .map(|&j| z[j] / (z[j] - cand[j]))
                .fold(f64::INFINITY, f64::min);
            z += (cand - &z) * step;
            for j in 0..k {
                if passive[j] && !free[j] && z[j] <= tol {
                    passive[j] = false;
                    z[j] = 0.0;
                }
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn unconstrained() -> QpProblem {
        QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![-2.0, -4.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_quadratic() {
        let sol = solve_qp(&unconstrained(), &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - dvector![1.0, 2.0]).amax() < 1e-6);
        // objective of (z1-1)^2 + (z2-2)^2 is this value plus 5
        assert!((sol.objective + 5.0).abs() < 1e-6);
    }

    #[test]
    fn single_active_constraint() {
        let prob = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![-2.0, -4.0],
            dmatrix![1.0, 0.0],
            dvector![f64::NEG_INFINITY],
            dvector![0.0],
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - dvector![0.0, 2.0]).amax() < 1e-8);
        assert!((sol.objective + 5.0 - 1.0).abs() < 1e-8);
        assert!(sol.polished);
        assert!((sol.y[0] - 2.0).abs() < 1e-8);
        assert!(prob.kkt_residuals(&sol.x, &sol.y).max() < 1e-8);
    }

    #[test]
    fn equality_constrained() {
        // min x^2 + y^2 s.t. x + y = 1
        let prob = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![0.0, 0.0],
            dmatrix![1.0, 1.0],
            dvector![1.0],
            dvector![1.0],
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - dvector![0.5, 0.5]).amax() < 1e-8);
    }

    #[test]
    fn linear_program_with_box() {
        // min -x - y over the unit box with x + y <= 1.5
        let prob = QpProblem::new(
            DMatrix::zeros(2, 2),
            dvector![-1.0, -2.0],
            dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0],
            dvector![0.0, 0.0, f64::NEG_INFINITY],
            dvector![1.0, 1.0, 1.5],
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - dvector![0.5, 1.0]).amax() < 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        let prob = QpProblem::new(
            DMatrix::identity(1, 1),
            dvector![0.0],
            dmatrix![1.0; 1.0],
            dvector![1.0, f64::NEG_INFINITY],
            dvector![f64::INFINITY, -1.0],
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let res = QpProblem::new(
            dmatrix![1.0, 0.0; 0.0, -1.0],
            dvector![0.0, 0.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(matches!(res, Err(Error::NotPositiveSemidefinite(_))));
    }

    #[test]
    fn max_iter_status() {
        let prob = QpProblem::new(
            DMatrix::identity(2, 2),
            dvector![1.0, 1.0],
            dmatrix![1.0, 1.0],
            dvector![1.0],
            dvector![2.0],
        )
        .unwrap();
        let settings = QpSettings {
            max_iter: 1,
            polish: false,
            ..QpSettings::default()
        };
        assert_eq!(
            solve_qp(&prob, &settings).unwrap().status,
            QpStatus::MaxIter
        );
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let prob = QpProblem::new(
            dmatrix![4.0, 1.0; 1.0, 2.0],
            dvector![1.0, 1.0],
            dmatrix![1.0, 1.0; 1.0, 0.0; 0.0, 1.0],
            dvector![1.0, 0.0, 0.0],
            dvector![1.0, 0.7, 0.7],
        )
        .unwrap();
        let s = QpSettings::default();
        let cold = solve_qp(&prob, &s).unwrap();
        let warm = solve_qp_warm(&prob, &s, Some((&cold.x, &cold.y))).unwrap();
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!((&warm.x - &cold.x).amax() < 1e-6);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn deterministic() {
        let prob = unconstrained();
        let a = solve_qp(&prob, &QpSettings::default()).unwrap();
        let b = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}
