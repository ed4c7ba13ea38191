use nalgebra::{DMatrix, DVector};

use super::Zonotope;
use crate::error::{check_dim, Error, Result};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};

/// `{ x : H x <= b }`, one facet per row of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl HPolytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        check_dim("polytope offsets", normals.nrows(), offsets.len())?;
        if !normals.iter().chain(offsets.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("polytope"));
        }
        Ok(Self { normals, offsets })
    }

    /// The axis-aligned box `[lower, upper]` as `2n` facets `x_i <= u_i`,
    /// `-x_i <= -l_i`.
    pub fn from_box(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::InvalidInterval(i));
        }
        let n = lower.len();
        let mut h = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            h[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            h[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        Self::new(h, b)
    }

    /// The whole space (no facets).
    pub fn unbounded(n: usize) -> Self {
        Self {
            normals: DMatrix::zeros(0, n),
            offsets: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    /// Per-facet slack `b - H x`.
    pub fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offsets - &self.normals * x
    }

    /// Smallest facet slack; `+inf` with no facets. Negative means outside.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        self.slacks(x).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Panics if `x` has the wrong length.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        assert_eq!(x.len(), self.dim(), "membership point dimension");
        self.margin(x) >= -tol
    }

    /// `{ x : x + s in self for all s in S }`: each offset shrinks by the
    /// support of `S` along its normal. The result may be empty.
    pub fn pontryagin_diff(&self, s: &Zonotope) -> Result<HPolytope> {
        check_dim("pontryagin difference", self.dim(), s.dim())?;
        let offsets = DVector::from_fn(self.num_facets(), |i, _| {
            self.offsets[i] - s.support(&self.normals.row(i).transpose())
        });
        HPolytope::new(self.normals.clone(), offsets)
    }

    /// `{ x : M x + v in self }`.
    pub fn preimage(&self, m: &DMatrix<f64>, v: &DVector<f64>) -> Result<HPolytope> {
        check_dim("preimage map rows", self.dim(), m.nrows())?;
        check_dim("preimage offset", self.dim(), v.len())?;
        HPolytope::new(&self.normals * m, &self.offsets - &self.normals * v)
    }

    /// Stacks the facets of both polytopes.
    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope> {
        check_dim("polytope intersection", self.dim(), other.dim())?;
        let (ma, mb) = (self.num_facets(), other.num_facets());
        let mut h = DMatrix::zeros(ma + mb, self.dim());
        h.rows_mut(0, ma).copy_from(&self.normals);
        h.rows_mut(ma, mb).copy_from(&other.normals);
        let mut b = DVector::zeros(ma + mb);
        b.rows_mut(0, ma).copy_from(&self.offsets);
        b.rows_mut(ma, mb).copy_from(&other.offsets);
        HPolytope::new(h, b)
    }

    /// Euclidean projection of `x` onto the polytope, or `None` when empty.
    pub fn project(&self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        check_dim("projection point", self.dim(), x.len())?;
        let n = self.dim();
        let prob = QpProblem::new(
            DMatrix::identity(n, n),
            -x,
            self.normals.clone(),
            DVector::from_element(self.num_facets(), f64::NEG_INFINITY),
            self.offsets.clone(),
        )?;
        let settings = QpSettings {
            eps_abs: 1e-10,
            eps_rel: 1e-10,
            ..QpSettings::default()
        };
        let sol = solve_qp(&prob, &settings)?;
        match sol.status {
            QpStatus::Infeasible => Ok(None),
            QpStatus::Optimal => Ok(Some(sol.x)),
            other => Err(Error::Invalid(format!(
                "polytope projection ended with {other}"
            ))),
        }
    }

    /// Euclidean distance from `x`; zero inside.
    pub fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        if self.contains(x, 0.0) {
            return Ok(0.0);
        }
        match self.project(x)? {
            Some(p) => Ok((x - p).norm()),
            None => Err(Error::EmptySet("distance to polytope")),
        }
    }

    /// Emptiness up to `tol` slack.
    pub fn is_empty(&self, tol: f64) -> Result<bool> {
        if self.num_facets() == 0 {
            return Ok(false);
        }
        let x0 = DVector::zeros(self.dim());
        match self.project(&x0)? {
            None => Ok(true),
            Some(p) => Ok(!self.contains(&p, tol)),
        }
    }
}
