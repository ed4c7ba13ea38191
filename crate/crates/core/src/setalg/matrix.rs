use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Zonotope;
use crate::error::{check_dim, Error, Result};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};

/// `{ C + sum_i b_i G_i : b in [-1, 1]^gamma }`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixZonotope {
    center: DMatrix<f64>,
    generators: Vec<DMatrix<f64>>,
}

impl MatrixZonotope {
    pub fn new(center: DMatrix<f64>, generators: Vec<DMatrix<f64>>) -> Result<Self> {
        for g in &generators {
            check_dim("matrix generator rows", center.nrows(), g.nrows())?;
            check_dim("matrix generator cols", center.ncols(), g.ncols())?;
        }
        let finite = center.iter().all(|v| v.is_finite())
            && generators.iter().all(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("matrix zonotope"));
        }
        Ok(Self { center, generators })
    }

    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.shape()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// Elementwise `C ± sum_i |G_i|`.
    pub fn interval_hull(&self) -> IntervalMatrix {
        let mut rad = DMatrix::zeros(self.center.nrows(), self.center.ncols());
        for g in &self.generators {
            rad += g.abs();
        }
        IntervalMatrix {
            lower: &self.center - &rad,
            upper: &self.center + &rad,
        }
    }

    /// `{ M v : M in self }` as the zonotope `<C v, [G_1 v ... G_gamma v]>`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<Zonotope> {
        check_dim("matrix zonotope apply", self.center.ncols(), v.len())?;
        let n = self.center.nrows();
        let mut gens = DMatrix::zeros(n, self.generators.len());
        for (j, g) in self.generators.iter().enumerate() {
            gens.set_column(j, &(g * v));
        }
        Zonotope::new(&self.center * v, gens)
    }

    /// `{ M R : M in self }`.
    pub fn right_multiply(&self, r: &DMatrix<f64>) -> Result<MatrixZonotope> {
        check_dim("matrix zonotope product", self.center.ncols(), r.nrows())?;
        MatrixZonotope::new(
            &self.center * r,
            self.generators.iter().map(|g| g * r).collect(),
        )
    }

    pub fn point_at(&self, beta: &[f64]) -> DMatrix<f64> {
        let mut m = self.center.clone();
        for (g, b) in self.generators.iter().zip(beta) {
            m += g * *b;
        }
        m
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let beta: Vec<f64> = (0..self.generators.len())
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        self.point_at(&beta)
    }

    /// Exact membership: searches coefficients `b in [-1, 1]^gamma` with
    /// `C + sum_i b_i G_i = M` to within `tol`, after a cheap interval-hull
    /// rejection.
    pub fn contains(&self, m: &DMatrix<f64>, tol: f64) -> Result<bool> {
        check_dim("membership rows", self.center.nrows(), m.nrows())?;
        check_dim("membership cols", self.center.ncols(), m.ncols())?;
        if !self.interval_hull().contains(m, tol) {
            return Ok(false);
        }
        let gamma = self.generators.len();
        let target = m - &self.center;
        if gamma == 0 {
            return Ok(target.amax() <= tol);
        }
        let entries = target.len();
        let mut a = DMatrix::zeros(entries + gamma, gamma);
        for (j, g) in self.generators.iter().enumerate() {
            for (i, v) in g.iter().enumerate() {
                a[(i, j)] = *v;
            }
            a[(entries + j, j)] = 1.0;
        }
        let mut l = DVector::zeros(entries + gamma);
        let mut u = DVector::zeros(entries + gamma);
        for (i, v) in target.iter().enumerate() {
            l[i] = *v;
            u[i] = *v;
        }
        for j in 0..gamma {
            l[entries + j] = -1.0;
            u[entries + j] = 1.0;
        }
        let prob = QpProblem::new(
            DMatrix::identity(gamma, gamma),
            DVector::zeros(gamma),
            a,
            l,
            u,
        )?;
        let settings = QpSettings {
            eps_abs: 1e-10,
            eps_rel: 1e-10,
            ..QpSettings::default()
        };
        let sol = solve_qp(&prob, &settings)?;
        match sol.status {
            QpStatus::Infeasible => Ok(false),
            _ => {
                let beta: Vec<f64> = sol.x.iter().map(|b| b.clamp(-1.0, 1.0)).collect();
                Ok((self.point_at(&beta) - m).amax() <= tol)
            }
        }
    }
}

/// Elementwise bounds `lower <= M <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    lower: DMatrix<f64>,
    upper: DMatrix<f64>,
}

impl IntervalMatrix {
    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>) -> Result<Self> {
        check_dim("interval matrix rows", lower.nrows(), upper.nrows())?;
        check_dim("interval matrix cols", lower.ncols(), upper.ncols())?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::InvalidInterval(i));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn center(&self) -> DMatrix<f64> {
        (&self.upper + &self.lower) * 0.5
    }

    pub fn radius(&self) -> DMatrix<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    /// `|| |I_c| + Delta ||_F`.
    pub fn frobenius_norm(&self) -> f64 {
        (self.center().abs() + self.radius()).norm()
    }

    pub fn contains(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        m.shape() == self.lower.shape()
            && m.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// All `2^k` corner matrices over the `k` entries of nonzero width, in a
    /// fixed order. Fails when `k` exceeds `max_free`.
    pub fn vertices(&self, max_free: usize) -> Result<Vec<DMatrix<f64>>> {
        let free: Vec<usize> = (0..self.lower.len())
            .filter(|&i| self.upper[i] > self.lower[i])
            .collect();
        if free.len() > max_free {
            return Err(Error::VertexCapExceeded(free.len()));
        }
        let mut out = Vec::with_capacity(1 << free.len());
        for mask in 0u64..(1u64 << free.len()) {
            let mut m = self.lower.clone();
            for (bit, &i) in free.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    m[i] = self.upper[i];
                }
            }
            out.push(m);
        }
        Ok(out)
    }
}
