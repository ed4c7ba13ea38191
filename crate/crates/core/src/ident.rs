//! Learning phase: data matrices, the rank condition, the set of
//! data-consistent models and the covering radius of the data.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{numerical_rank, pinv};
use crate::setalg::{HPolytope, IntervalMatrix, MatrixZonotope, Zonotope};

/// Default relative singular-value threshold for the rank condition.
pub const RANK_TOL: f64 = 1e-8;

/// One recorded experiment: `states.len() == inputs.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("trajectory inputs"));
        }
        check_dim("trajectory states", inputs.len() + 1, states.len())?;
        let nx = states[0].len();
        let nu = inputs[0].len();
        for s in &states {
            check_dim("trajectory state", nx, s.len())?;
        }
        for u in &inputs {
            check_dim("trajectory input", nu, u.len())?;
        }
        if !states
            .iter()
            .chain(inputs.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(Self { states, inputs })
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn n_x(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// CSV with header `k,x1..,u1..`; the final row leaves the input fields
    /// empty. Numbers carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let (nx, nu) = (self.n_x(), self.n_u());
        let mut out = String::from("k");
        for i in 1..=nx {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=nu {
            let _ = write!(out, ",u{i}");
        }
        out.push('\n');
        for (k, x) in self.states.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in x.iter() {
                let _ = write!(out, ",{v:.16e}");
            }
            match self.inputs.get(k) {
                Some(u) => {
                    for v in u.iter() {
                        let _ = write!(out, ",{v:.16e}");
                    }
                }
                None => out.push_str(&",".repeat(nu)),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(Error::Empty("trajectory CSV"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"k") {
            return Err(Error::Parse(
                "trajectory CSV must start with column 'k'".into(),
            ));
        }
        let nx = cols.iter().filter(|c| c.starts_with('x')).count();
        let nu = cols.iter().filter(|c| c.starts_with('u')).count();
        if nx == 0 || nu == 0 || cols.len() != 1 + nx + nu {
            return Err(Error::Parse(format!(
                "unexpected trajectory header '{header}'"
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number '{s}': {e}")))
        };
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut finished = false;
        for (row, line) in lines.enumerate() {
            if finished {
                return Err(Error::Parse("rows after the final state row".into()));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + nx + nu {
                return Err(Error::Parse(format!(
                    "row {row}: expected {} fields",
                    1 + nx + nu
                )));
            }
            let x = fields[1..=nx]
                .iter()
                .map(|f| parse(f))
                .collect::<Result<Vec<_>>>()?;
            states.push(DVector::from_vec(x));
            let ufields = &fields[1 + nx..];
            if ufields.iter().all(|f| f.trim().is_empty()) {
                finished = true;
            } else {
                let u = ufields
                    .iter()
                    .map(|f| parse(f))
                    .collect::<Result<Vec<_>>>()?;
                inputs.push(DVector::from_vec(u));
            }
        }
        if !finished {
            return Err(Error::Parse(
                "trajectory CSV lacks the final state-only row".into(),
            ));
        }
        Self::new(states, inputs)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Trajectories with their column-concatenated data matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    x_plus: DMatrix<f64>,
    x_minus: DMatrix<f64>,
    u_minus: DMatrix<f64>,
    d_minus: DMatrix<f64>,
}

impl Dataset {
    /// Builds `X+`, `X-`, `U-` and `D- = [X-; U-]` trajectory by trajectory,
    /// in time order. No column pairs data from two experiments.
    pub fn assemble(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::Empty("dataset"))?;
        let (nx, nu) = (first.n_x(), first.n_u());
        for t in &trajectories {
            check_dim("dataset state dimension", nx, t.n_x())?;
            check_dim("dataset input dimension", nu, t.n_u())?;
        }
        let cols: usize = trajectories.iter().map(Trajectory::len).sum();
        let mut x_plus = DMatrix::zeros(nx, cols);
        let mut x_minus = DMatrix::zeros(nx, cols);
        let mut u_minus = DMatrix::zeros(nu, cols);
        let mut j = 0;
        for t in &trajectories {
            for k in 0..t.len() {
                x_minus.set_column(j, &t.states[k]);
                x_plus.set_column(j, &t.states[k + 1]);
                u_minus.set_column(j, &t.inputs[k]);
                j += 1;
            }
        }
        let mut d_minus = DMatrix::zeros(nx + nu, cols);
        d_minus.rows_mut(0, nx).copy_from(&x_minus);
        d_minus.rows_mut(nx, nu).copy_from(&u_minus);
        Ok(Self {
            trajectories,
            x_plus,
            x_minus,
            u_minus,
            d_minus,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn x_plus(&self) -> &DMatrix<f64> {
        &self.x_plus
    }

    pub fn x_minus(&self) -> &DMatrix<f64> {
        &self.x_minus
    }

    pub fn u_minus(&self) -> &DMatrix<f64> {
        &self.u_minus
    }

    pub fn d_minus(&self) -> &DMatrix<f64> {
        &self.d_minus
    }

    pub fn n_x(&self) -> usize {
        self.x_plus.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.u_minus.nrows()
    }

    /// Total column count `T`.
    pub fn num_columns(&self) -> usize {
        self.x_plus.ncols()
    }
}

/// Numerical rank of `D-` at threshold `tol * sigma_max`.
pub fn data_rank(d: &Dataset, tol: f64) -> usize {
    numerical_rank(d.d_minus(), tol)
}

/// `rank(D-) == n_x + n_u`.
pub fn check_rank(d: &Dataset, tol: f64) -> bool {
    data_rank(d, tol) == d.n_x() + d.n_u()
}

/// Concatenation of `t` copies of `Z_w` as a matrix zonotope. Generator
/// `j * gamma_w + k` places generator `k` of `Z_w` in column `j`.
pub fn noise_matrix_zonotope(zw: &Zonotope, t: usize) -> Result<MatrixZonotope> {
    if t == 0 {
        return Err(Error::Empty("noise horizon"));
    }
    let n = zw.dim();
    let mut center = DMatrix::zeros(n, t);
    for j in 0..t {
        center.set_column(j, zw.center());
    }
    let mut gens = Vec::with_capacity(t * zw.num_generators());
    for j in 0..t {
        for g in zw.generators().column_iter() {
            let mut m = DMatrix::zeros(n, t);
            m.set_column(j, &g);
            gens.push(m);
        }
    }
    MatrixZonotope::new(center, gens)
}

/// The data-consistent model set together with its interval hull and the
/// hull's Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub m_d: MatrixZonotope,
    pub i_md: IntervalMatrix,
    pub fro_norm: f64,
}

impl ModelSet {
    pub fn new(m_d: MatrixZonotope) -> Self {
        let i_md = m_d.interval_hull();
        let fro_norm = i_md.frobenius_norm();
        Self {
            m_d,
            i_md,
            fro_norm,
        }
    }

    pub fn n_x(&self) -> usize {
        self.m_d.shape().0
    }

    pub fn n_u(&self) -> usize {
        self.m_d.shape().1 - self.n_x()
    }
}

/// `M_D = (X+ - M_w) D-^dagger` with `M_w` the concatenated noise.
pub fn learn_model_set(d: &Dataset, zw: &Zonotope) -> Result<ModelSet> {
    check_dim("noise dimension", d.n_x(), zw.dim())?;
    let required = d.n_x() + d.n_u();
    let rank = data_rank(d, RANK_TOL);
    if rank != required {
        return Err(Error::RankDeficient { rank, required });
    }
    let t = d.num_columns();
    let dp = pinv(d.d_minus());
    let mut c_w = DMatrix::zeros(d.n_x(), t);
    for j in 0..t {
        c_w.set_column(j, zw.center());
    }
    let center = (d.x_plus() - c_w) * &dp;
    // (-g_k e_j') D^dagger = -g_k (row j of D^dagger)
    let mut gens = Vec::with_capacity(t * zw.num_generators());
    for j in 0..t {
        let row = dp.row(j);
        for g in zw.generators().column_iter() {
            gens.push(-(g * row));
        }
    }
    Ok(ModelSet::new(MatrixZonotope::new(center, gens)?))
}

/// Grid estimate of the covering radius of the data columns over
/// `Z_x × Z_u`.
///
/// The grid spans the interval hull with `grid_points` nodes per axis;
/// nodes outside the product set are skipped. The largest nearest-column
/// distance is inflated by half the cell diagonal, giving a bound on the
/// covering radius over the whole domain.
pub fn covering_radius(
    d: &Dataset,
    zx: &Zonotope,
    zu: &Zonotope,
    grid_points: usize,
) -> Result<f64> {
    check_dim("covering state domain", d.n_x(), zx.dim())?;
    check_dim("covering input domain", d.n_u(), zu.dim())?;
    if grid_points < 2 {
        return Err(Error::Invalid(format!(
            "covering grid needs >= 2 points per axis, got {grid_points}"
        )));
    }
    let domain = zx.cartesian_product(zu);
    let dim = domain.dim();
    let filter = domain_filter(&domain)?;
    let (lo, hi) = domain.interval_hull();
    let steps: Vec<usize> = (0..dim)
        .map(|i| if hi[i] > lo[i] { grid_points } else { 1 })
        .collect();
    let cell: Vec<f64> = (0..dim)
        .map(|i| {
            if steps[i] > 1 {
                (hi[i] - lo[i]) / (steps[i] - 1) as f64
            } else {
                0.0
            }
        })
        .collect();
    let inflation = 0.5 * cell.iter().map(|h| h * h).sum::<f64>().sqrt();

    let data = d.d_minus();
    let total: usize = steps.iter().product();
    let mut idx = vec![0usize; dim];
    let mut worst = f64::NEG_INFINITY;
    let mut p = DVector::zeros(dim);
    for _ in 0..total {
        for i in 0..dim {
            p[i] = lo[i] + idx[i] as f64 * cell[i];
        }
        if filter.as_ref().is_none_or(|poly| poly.contains(&p, 1e-9)) {
            let nearest = data
                .column_iter()
                .map(|c| (c - &p).norm_squared())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(nearest.sqrt());
        }
        for i in 0..dim {
            idx[i] += 1;
            if idx[i] < steps[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    if worst == f64::NEG_INFINITY {
        return Err(Error::Empty("covering grid after filtering"));
    }
    Ok(worst + inflation)
}

/// Membership filter for the grid; `None` when the domain is its own
/// interval hull.
fn domain_filter(domain: &Zonotope) -> Result<Option<HPolytope>> {
    let axis_aligned = domain
        .generators()
        .column_iter()
        .all(|c| c.iter().filter(|v| **v != 0.0).count() <= 1);
    if axis_aligned {
        return Ok(None);
    }
    domain.to_hpolytope().map(Some)
}
