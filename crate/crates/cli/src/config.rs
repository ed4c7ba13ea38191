//! Scenario configuration: a JSON document describing the true plant, the
//! noise, constraint sets, data collection, cost, tube, gains, terminal
//! ingredients, solver tolerances and the runs to execute.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use tzpc::ocp::TerminalMode;
use tzpc::qp::QpSettings;
use tzpc::setalg::{HPolytope, Zonotope};
use tzpc::synth::{GainChoice, StageCost};

use crate::error::{CliError, CliResult};

/// Row-major matrix.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    pub constraints: ConstraintConfig,
    pub data: DataConfig,
    pub cost: CostConfig,
    pub horizon: usize,
    pub tube: TubeConfig,
    /// Explicit `[A_bar B_bar]`; the center of the model set otherwise.
    #[serde(default)]
    pub nominal: Option<Rows>,
    pub gains: GainConfig,
    pub terminal: TerminalConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub a_true: Rows,
    pub b_true: Rows,
    pub x0: Vec<f64>,
}

/// `w = E d` with `d` in `<center, generators>`; `E = I` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub center: Vec<f64>,
    pub generators: Rows,
    #[serde(default)]
    pub injection: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonotopeConfig {
    pub center: Vec<f64>,
    /// `n x gamma`, one column per generator.
    pub generators: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetConfig {
    Zonotope { center: Vec<f64>, generators: Rows },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    /// Sampling domain of the data states.
    pub zx: ZonotopeConfig,
    /// Sampling domain of the data inputs.
    pub zu: ZonotopeConfig,
    pub state_set: SetConfig,
    pub input_set: SetConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPolicy {
    /// Inputs uniform over the generator box of `zu`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_traj: usize,
    /// States per trajectory.
    pub traj_len: usize,
    #[serde(default)]
    pub input_policy: InputPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: Rows,
    pub r: Rows,
    pub l1_weight: f64,
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
    /// Moves the setpoint onto the nearest nominal equilibrium.
    #[serde(default)]
    pub project_setpoint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaConfig {
    Zero,
    /// Grid estimate with this many nodes per axis.
    Grid {
        points: usize,
    },
    Value {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub theta: f64,
    pub kappa_max: usize,
    pub delta: DeltaConfig,
    #[serde(default)]
    pub symmetrize_zm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainConfig {
    Synthesize { lqr_q: Rows, lqr_r: Rows },
    Provided { k: Rows, p: Rows },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Compute,
    Provided,
}

fn default_facets() -> usize {
    16
}

fn default_check_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub alpha_mode: AlphaMode,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_facets")]
    pub facets: usize,
    /// Enforce the ellipsoid itself instead of an inscribed polytope.
    #[serde(default)]
    pub exact: bool,
    #[serde(default = "default_check_samples")]
    pub check_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = QpSettings::default();
        Self {
            eps_abs: s.eps_abs,
            eps_rel: s.eps_rel,
            max_iter: s.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    pub seeds: Vec<u64>,
}

pub fn matrix(rows: &Rows, what: &str) -> CliResult<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(CliError::Config(format!("{what}: matrix has no rows")));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(CliError::Config(format!(
            "{what}: rows have unequal length"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{what}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn vector(v: &[f64], what: &str) -> CliResult<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config(format!("{what}: non-finite entry")));
    }
    Ok(DVector::from_column_slice(v))
}

fn shaped(rows: &Rows, what: &str, nr: usize, nc: usize) -> CliResult<DMatrix<f64>> {
    let m = matrix(rows, what)?;
    if m.shape() != (nr, nc) {
        return Err(CliError::Config(format!(
            "{what}: expected {nr}x{nc}, found {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

fn sized(v: &[f64], what: &str, n: usize) -> CliResult<DVector<f64>> {
    if v.len() != n {
        return Err(CliError::Config(format!(
            "{what}: expected length {n}, found {}",
            v.len()
        )));
    }
    vector(v, what)
}

fn zonotope(center: &[f64], gens: &Rows, what: &str, n: usize) -> CliResult<Zonotope> {
    let c = sized(center, what, n)?;
    if gens.len() != n {
        return Err(CliError::Config(format!(
            "{what}: generator matrix needs {n} rows, found {}",
            gens.len()
        )));
    }
    let g = matrix(gens, what)?;
    Zonotope::new(c, g).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

impl ZonotopeConfig {
    pub fn from_zonotope(z: &Zonotope) -> Self {
        Self {
            center: z.center().iter().copied().collect(),
            generators: z
                .generators()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }

    fn build(&self, what: &str, n: usize) -> CliResult<Zonotope> {
        zonotope(&self.center, &self.generators, what, n)
    }
}

impl SetConfig {
    fn build(&self, what: &str, n: usize) -> CliResult<HPolytope> {
        let poly = match self {
            SetConfig::Zonotope { center, generators } => {
                zonotope(center, generators, what, n)?.to_hpolytope()
            }
            SetConfig::Box { lower, upper } => {
                HPolytope::from_box(&sized(lower, what, n)?, &sized(upper, what, n)?)
            }
        };
        poly.map_err(|e| CliError::Config(format!("{what}: {e}")))
    }
}

impl ScenarioConfig {
    /// Parses and validates a scenario file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    pub fn n_x(&self) -> usize {
        self.system.a_true.len()
    }

    pub fn n_u(&self) -> usize {
        self.system.b_true.first().map_or(0, Vec::len)
    }

    /// Checks every shape and range; the typed accessors below succeed
    /// afterwards.
    pub fn validate(&self) -> CliResult<()> {
        let (nx, nu) = (self.n_x(), self.n_u());
        if nx == 0 || nu == 0 {
            return Err(CliError::Config(
                "system needs at least one state and one input".into(),
            ));
        }
        self.a_true()?;
        self.b_true()?;
        self.x0()?;
        self.noise_set()?;
        self.zx()?;
        self.zu()?;
        self.state_set()?;
        self.input_set()?;
        self.stage_cost()?;
        self.setpoint()?;
        self.nominal()?;
        self.gain_choice()?;
        if self.data.n_traj == 0 || self.data.traj_len == 0 {
            return Err(CliError::Config(
                "data needs n_traj >= 1 and traj_len >= 1".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(CliError::Config("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.tube.theta) {
            return Err(CliError::Config(format!(
                "tube.theta = {} must lie in [0, 1)",
                self.tube.theta
            )));
        }
        if self.tube.kappa_max == 0 {
            return Err(CliError::Config("tube.kappa_max must be at least 1".into()));
        }
        match self.tube.delta {
            DeltaConfig::Grid { points } if points < 2 => {
                return Err(CliError::Config(
                    "tube.delta grid needs at least 2 points".into(),
                ))
            }
            DeltaConfig::Value { value } if !(value >= 0.0 && value.is_finite()) => {
                return Err(CliError::Config(format!(
                    "tube.delta value {value} must be finite and >= 0"
                )))
            }
            _ => {}
        }
        if self.cost.l1_weight < 0.0 || !self.cost.l1_weight.is_finite() {
            return Err(CliError::Config("cost.l1_weight must be >= 0".into()));
        }
        self.alpha()?;
        if self.terminal.facets < 3 && !self.terminal.exact {
            return Err(CliError::Config(
                "terminal.facets must be at least 3".into(),
            ));
        }
        let s = &self.solver;
        if !(s.eps_abs > 0.0 && s.eps_rel >= 0.0 && s.max_iter > 0) {
            return Err(CliError::Config(
                "solver needs eps_abs > 0, eps_rel >= 0, max_iter > 0".into(),
            ));
        }
        if self.run.seeds.is_empty() {
            return Err(CliError::Config("run.seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn a_true(&self) -> CliResult<DMatrix<f64>> {
        shaped(&self.system.a_true, "system.a_true", self.n_x(), self.n_x())
    }

    pub fn b_true(&self) -> CliResult<DMatrix<f64>> {
        shaped(&self.system.b_true, "system.b_true", self.n_x(), self.n_u())
    }

    pub fn x0(&self) -> CliResult<DVector<f64>> {
        sized(&self.system.x0, "system.x0", self.n_x())
    }

    /// The state-space noise zonotope `E Z_d`.
    pub fn noise_set(&self) -> CliResult<Zonotope> {
        let nd = self.noise.center.len();
        let zd = zonotope(&self.noise.center, &self.noise.generators, "noise", nd)?;
        match &self.noise.injection {
            None if nd == self.n_x() => Ok(zd),
            None => Err(CliError::Config(format!(
                "noise has dimension {nd} but the state has {}; give noise.injection",
                self.n_x()
            ))),
            Some(e) => {
                let e = shaped(e, "noise.injection", self.n_x(), nd)?;
                zd.linear_map(&e)
                    .map_err(|err| CliError::Config(format!("noise.injection: {err}")))
            }
        }
    }

    pub fn zx(&self) -> CliResult<Zonotope> {
        self.constraints.zx.build("constraints.zx", self.n_x())
    }

    pub fn zu(&self) -> CliResult<Zonotope> {
        self.constraints.zu.build("constraints.zu", self.n_u())
    }

    pub fn state_set(&self) -> CliResult<HPolytope> {
        self.constraints
            .state_set
            .build("constraints.state_set", self.n_x())
    }

    pub fn input_set(&self) -> CliResult<HPolytope> {
        self.constraints
            .input_set
            .build("constraints.input_set", self.n_u())
    }

    pub fn stage_cost(&self) -> CliResult<StageCost> {
        Ok(StageCost {
            q: shaped(&self.cost.q, "cost.q", self.n_x(), self.n_x())?,
            r: shaped(&self.cost.r, "cost.r", self.n_u(), self.n_u())?,
            l1: self.cost.l1_weight,
        })
    }

    pub fn setpoint(&self) -> CliResult<(DVector<f64>, DVector<f64>)> {
        Ok((
            sized(&self.cost.x_s, "cost.x_s", self.n_x())?,
            sized(&self.cost.u_s, "cost.u_s", self.n_u())?,
        ))
    }

    pub fn nominal(&self) -> CliResult<Option<DMatrix<f64>>> {
        let (nx, nu) = (self.n_x(), self.n_u());
        self.nominal
            .as_ref()
            .map(|m| shaped(m, "nominal", nx, nx + nu))
            .transpose()
    }

    pub fn gain_choice(&self) -> CliResult<GainChoice> {
        let (nx, nu) = (self.n_x(), self.n_u());
        Ok(match &self.gains {
            GainConfig::Synthesize { lqr_q, lqr_r } => GainChoice::Riccati {
                q: shaped(lqr_q, "gains.lqr_q", nx, nx)?,
                r: shaped(lqr_r, "gains.lqr_r", nu, nu)?,
            },
            GainConfig::Provided { k, p } => GainChoice::Provided {
                k: shaped(k, "gains.k", nu, nx)?,
                p: shaped(p, "gains.p", nx, nx)?,
            },
        })
    }

    /// The fixed terminal level, if any.
    pub fn alpha(&self) -> CliResult<Option<f64>> {
        match (self.terminal.alpha_mode, self.terminal.alpha) {
            (AlphaMode::Compute, _) => Ok(None),
            (AlphaMode::Provided, Some(a)) if a > 0.0 && a.is_finite() => Ok(Some(a)),
            (AlphaMode::Provided, _) => Err(CliError::Config(
                "terminal.alpha_mode = provided needs a positive terminal.alpha".into(),
            )),
        }
    }

    pub fn terminal_mode(&self) -> TerminalMode {
        if self.terminal.exact {
            TerminalMode::Exact
        } else {
            TerminalMode::Polytope {
                facets: self.terminal.facets,
            }
        }
    }

    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.solver.eps_abs,
            eps_rel: self.solver.eps_rel,
            max_iter: self.solver.max_iter,
            ..QpSettings::default()
        }
    }
}
