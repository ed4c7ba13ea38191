//! Receding-horizon closed loop against a hidden plant, data generation,
//! constraint auditing and post-hoc metrics.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::ident::{ModelSet, Trajectory};
use crate::ocp::{OcpSolution, OcpSolver};
use crate::qp::QpStatus;
use crate::setalg::Zonotope;
use crate::synth::{StageCost, SynthesisBundle};
use crate::GEOM_TOL;

/// Draws `w = c + G b` with each `b_i` uniform on `[-1, 1]`; returns the
/// coefficients as well.
pub fn sample_noise_with_coeffs<R: Rng + ?Sized>(
    zw: &Zonotope,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let beta = DVector::from_fn(zw.num_generators(), |_, _| rng.gen_range(-1.0..=1.0));
    (zw.point_at(&beta), beta)
}

pub fn sample_noise<R: Rng + ?Sized>(zw: &Zonotope, rng: &mut R) -> DVector<f64> {
    sample_noise_with_coeffs(zw, rng).0
}

/// `A x + B u + w`.
pub fn step_plant(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    a * x + b * u + w
}

/// Per trajectory, the generator coefficients of every noise draw.
pub type NoiseCoefficients = Vec<Vec<DVector<f64>>>;

/// The true system. Its matrices are private so the controller path can
/// only see the learned model set and synthesis bundle.
#[derive(Debug, Clone)]
pub struct Plant {
    a_true: DMatrix<f64>,
    b_true: DMatrix<f64>,
    noise: Zonotope,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(
        a_true: DMatrix<f64>,
        b_true: DMatrix<f64>,
        noise: Zonotope,
        seed: u64,
    ) -> Result<Self> {
        check_dim("plant A columns", a_true.nrows(), a_true.ncols())?;
        check_dim("plant B rows", a_true.nrows(), b_true.nrows())?;
        check_dim("plant noise", a_true.nrows(), noise.dim())?;
        Ok(Self {
            a_true,
            b_true,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn n_x(&self) -> usize {
        self.a_true.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_true.ncols()
    }

    pub fn noise_set(&self) -> &Zonotope {
        &self.noise
    }

    pub fn sample_noise(&mut self) -> DVector<f64> {
        sample_noise(&self.noise, &mut self.rng)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        step_plant(&self.a_true, &self.b_true, x, u, w)
    }

    /// Samples noise and advances the state.
    pub fn advance(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let w = self.sample_noise();
        self.step(x, u, &w)
    }

    /// Records `n_traj` experiments with `traj_len` states each. Initial
    /// states are drawn uniformly from the generator box of `zx`, inputs from
    /// that of `zu`. Returns the noise coefficients used at every step.
    pub fn generate_trajectories(
        &mut self,
        zx: &Zonotope,
        zu: &Zonotope,
        n_traj: usize,
        traj_len: usize,
    ) -> Result<(Vec<Trajectory>, NoiseCoefficients)> {
        check_dim("state domain", self.n_x(), zx.dim())?;
        check_dim("input domain", self.n_u(), zu.dim())?;
        if traj_len < 2 {
            return Err(Error::Invalid(format!(
                "trajectories need at least 2 states, got {traj_len}"
            )));
        }
        let mut trajs = Vec::with_capacity(n_traj);
        let mut noise = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            let mut x = zx.sample(&mut self.rng);
            let mut xs = vec![x.clone()];
            let mut us = Vec::new();
            let mut coeffs = Vec::new();
            for _ in 1..traj_len {
                let u = zu.sample(&mut self.rng);
                let (w, beta) = sample_noise_with_coeffs(&self.noise, &mut self.rng);
                x = self.step(&x, &u, &w);
                xs.push(x.clone());
                us.push(u);
                coeffs.push(beta);
            }
            trajs.push(Trajectory::new(xs, us)?);
            noise.push(coeffs);
        }
        Ok((trajs, noise))
    }
}

/// One executed step of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub u: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub j_star: f64,
    pub status: QpStatus,
    /// Wall-clock solve time in milliseconds, when timing is enabled.
    pub solve_ms: Option<f64>,
    /// Smallest slack of `x` in the state constraint set.
    pub slack_x: f64,
    /// Smallest slack of `u` in the input constraint set.
    pub slack_u: f64,
    /// Smallest slack of `x - x_bar` in the tube cross-section.
    pub slack_tube: f64,
    /// Euclidean distance from `x - x_bar` to the tube cross-section; zero
    /// unless the slack is below `-GEOM_TOL`.
    pub tube_distance: f64,
    pub solution: OcpSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    Infeasible { t: usize },
    SolverFailure { t: usize, status: QpStatus },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    /// State reached after the last executed step.
    pub final_state: DVector<f64>,
    pub outcome: RunOutcome,
}

impl RunLog {
    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    /// CSV with header
    /// `t,x1..,xbar1..,u1..,ubar1..,j_star,status,solve_ms,slack_x,slack_u,slack_tube`.
    pub fn to_csv(&self, n_x: usize, n_u: usize) -> String {
        let mut out = String::from("t");
        for (prefix, n) in [("x", n_x), ("xbar", n_x), ("u", n_u), ("ubar", n_u)] {
            for i in 1..=n {
                let _ = write!(out, ",{prefix}{i}");
            }
        }
        out.push_str(",j_star,status,solve_ms,slack_x,slack_u,slack_tube\n");
        for r in &self.records {
            let _ = write!(out, "{}", r.t);
            for v in
                r.x.iter()
                    .chain(r.x_bar.iter())
                    .chain(r.u.iter())
                    .chain(r.u_bar.iter())
            {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = write!(out, ",{:.16e},{},", r.j_star, r.status);
            if let Some(ms) = r.solve_ms {
                let _ = write!(out, "{ms:.6}");
            }
            let _ = writeln!(
                out,
                ",{:.16e},{:.16e},{:.16e}",
                r.slack_x, r.slack_u, r.slack_tube
            );
        }
        out
    }
}

/// Controller-side configuration of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub steps: usize,
    pub timing: bool,
}

/// Algorithm loop: solve, apply `u = u_bar + K (x - x_bar)`, step the plant.
/// Aborts at the first non-optimal solve.
pub fn run_closed_loop(
    plant: &mut Plant,
    bundle: &SynthesisBundle,
    solver: &mut OcpSolver,
    x0: &DVector<f64>,
    opts: RunOptions,
) -> Result<RunLog> {
    check_dim("initial state", plant.n_x(), x0.len())?;
    let s_poly = bundle.s_rpi.to_hpolytope()?;
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(opts.steps);
    let mut outcome = RunOutcome::Completed;
    solver.reset();
    for t in 0..opts.steps {
        let start = Instant::now();
        let sol = solver.solve(&x)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                outcome = RunOutcome::Infeasible { t };
                break;
            }
            status => {
                outcome = RunOutcome::SolverFailure { t, status };
                break;
            }
        }
        let x_bar = sol.x_bar[0].clone();
        let u_bar = sol.u_bar[0].clone();
        let u = &u_bar + &bundle.k_gain * (&x - &x_bar);
        let e = &x - &x_bar;
        let slack_tube = s_poly.margin(&e);
        let tube_distance = if slack_tube >= -GEOM_TOL {
            0.0
        } else {
            s_poly.distance(&e)?
        };
        let record = StepRecord {
            t,
            slack_x: bundle.x_set.margin(&x),
            slack_u: bundle.u_set.margin(&u),
            slack_tube,
            tube_distance,
            j_star: sol.j_star,
            status: sol.status,
            solve_ms: opts.timing.then_some(elapsed),
            x: x.clone(),
            x_bar,
            u: u.clone(),
            u_bar,
            solution: sol,
        };
        records.push(record);
        x = plant.advance(&x, &u);
    }
    Ok(RunLog {
        records,
        final_state: x,
        outcome,
    })
}

/// Per step, `M_D [x(t); u(t)] ⊕ Z_w`: the set containing `x(t+1)`.
pub fn reachable_illustration(ms: &ModelSet, log: &RunLog, zw: &Zonotope) -> Result<Vec<Zonotope>> {
    let states: Vec<DVector<f64>> = log.records.iter().map(|r| r.x.clone()).collect();
    let inputs: Vec<DVector<f64>> = log.records.iter().map(|r| r.u.clone()).collect();
    reachable_sets(ms, &states, &inputs, zw)
}

/// `M_D [x(t); u(t)] ⊕ Z_w` for each recorded pair.
pub fn reachable_sets(
    ms: &ModelSet,
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    zw: &Zonotope,
) -> Result<Vec<Zonotope>> {
    check_dim("reachable-set inputs", states.len(), inputs.len())?;
    states
        .iter()
        .zip(inputs)
        .map(|(x, u)| {
            let mut v = DVector::zeros(x.len() + u.len());
            v.rows_mut(0, x.len()).copy_from(x);
            v.rows_mut(x.len(), u.len()).copy_from(u);
            ms.m_d.apply(&v)?.minkowski_sum(zw)
        })
        .collect()
}

/// CSV `t,lo1,hi1,lo2,hi2,...` of the interval hulls of the reachable sets;
/// row `t` describes the set predicted for `x(t+1)`.
pub fn reach_csv(sets: &[Zonotope]) -> String {
    let n = sets.first().map_or(0, Zonotope::dim);
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",lo{i},hi{i}");
    }
    out.push('\n');
    for (t, z) in sets.iter().enumerate() {
        let (lo, hi) = z.interval_hull();
        let _ = write!(out, "{t}");
        for i in 0..n {
            let _ = write!(out, ",{:.16e},{:.16e}", lo[i], hi[i]);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// No point of the nominal trajectory is away from the setpoint.
    pub no_transient: bool,
    /// Least-squares slope of `ln ||x_bar*(t|t) - x_s||` over the transient.
    pub rate: Option<f64>,
    pub transient_len: usize,
    /// `J*(t+1) - J*(t) + l(x_bar*(t|t), u_bar*(t|t))` for consecutive steps.
    pub decrease_margins: Vec<f64>,
    pub max_tube_violation: f64,
}

const DECAY_FLOOR: f64 = 1e-6;

pub fn decay_metrics(
    log: &RunLog,
    bundle: &SynthesisBundle,
    stage: &StageCost,
) -> Result<DecayReport> {
    if log.records.len() < 3 {
        return Err(Error::Invalid(format!(
            "decay metrics need at least 3 steps, got {}",
            log.records.len()
        )));
    }
    let norms: Vec<f64> = log
        .records
        .iter()
        .map(|r| (&r.x_bar - &bundle.setpoint_x).norm())
        .collect();
    let transient_len = norms.iter().take_while(|n| **n > DECAY_FLOOR).count();
    let rate = if transient_len >= 2 {
        let ts: Vec<f64> = (0..transient_len).map(|t| t as f64).collect();
        let ys: Vec<f64> = norms[..transient_len].iter().map(|n| n.ln()).collect();
        let tm = ts.iter().sum::<f64>() / ts.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
        let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    let decrease_margins = log
        .records
        .windows(2)
        .map(|w| {
            let l = stage.eval(
                &(&w[0].x_bar - &bundle.setpoint_x),
                &(&w[0].u_bar - &bundle.setpoint_u),
            );
            w[1].j_star - w[0].j_star + l
        })
        .collect();
    let max_tube_violation = log
        .records
        .iter()
        .map(|r| r.tube_distance)
        .fold(0.0, f64::max);
    Ok(DecayReport {
        no_transient: transient_len == 0,
        rate,
        transient_len,
        decrease_margins,
        max_tube_violation,
    })
}
