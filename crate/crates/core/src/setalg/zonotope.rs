use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::HPolytope;
use crate::error::{check_dim, Error, Result};

/// `{ c + G b : b in [-1, 1]^gamma }`.
///
/// A zonotope with zero generator columns is the singleton `{c}`. Generators
/// are stored as columns and never reduced or reordered.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        check_dim("zonotope generator rows", center.len(), generators.nrows())?;
        if !center
            .iter()
            .chain(generators.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("zonotope"));
        }
        Ok(Self { center, generators })
    }

    /// The singleton `{center}`.
    pub fn point(center: DVector<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            generators: DMatrix::zeros(n, 0),
        }
    }

    pub fn origin(n: usize) -> Self {
        Self::point(DVector::zeros(n))
    }

    /// Converts the box `[lower, upper]` to a zonotope. Zero-width coordinates
    /// contribute no generator column.
    pub fn from_interval(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self> {
        check_dim("interval bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::InvalidInterval(i));
        }
        let n = lower.len();
        let center = (lower + upper) * 0.5;
        let radii = (upper - lower) * 0.5;
        let active: Vec<usize> = (0..n).filter(|&i| radii[i] > 0.0).collect();
        let mut generators = DMatrix::zeros(n, active.len());
        for (j, &i) in active.iter().enumerate() {
            generators[(i, j)] = radii[i];
        }
        Self::new(center, generators)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn is_singleton(&self) -> bool {
        self.generators.iter().all(|&v| v == 0.0)
    }

    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope> {
        check_dim("minkowski sum", self.dim(), other.dim())?;
        let n = self.dim();
        let (ga, gb) = (self.num_generators(), other.num_generators());
        let mut generators = DMatrix::zeros(n, ga + gb);
        generators.columns_mut(0, ga).copy_from(&self.generators);
        generators.columns_mut(ga, gb).copy_from(&other.generators);
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators,
        })
    }

    /// `-Z`; the generator box is symmetric so only the center flips.
    pub fn negate(&self) -> Zonotope {
        Zonotope {
            center: -&self.center,
            generators: self.generators.clone(),
        }
    }

    pub fn linear_map(&self, l: &DMatrix<f64>) -> Result<Zonotope> {
        check_dim("linear map columns", self.dim(), l.ncols())?;
        Ok(Zonotope {
            center: l * &self.center,
            generators: l * &self.generators,
        })
    }

    /// `s * Z` (scales the center as well).
    pub fn scale(&self, s: f64) -> Zonotope {
        Zonotope {
            center: &self.center * s,
            generators: &self.generators * s,
        }
    }

    pub fn translate(&self, v: &DVector<f64>) -> Result<Zonotope> {
        check_dim("translation", self.dim(), v.len())?;
        Ok(Zonotope {
            center: &self.center + v,
            generators: self.generators.clone(),
        })
    }

    pub fn cartesian_product(&self, other: &Zonotope) -> Zonotope {
        let (na, nb) = (self.dim(), other.dim());
        let (ga, gb) = (self.num_generators(), other.num_generators());
        let mut center = DVector::zeros(na + nb);
        center.rows_mut(0, na).copy_from(&self.center);
        center.rows_mut(na, nb).copy_from(&other.center);
        let mut generators = DMatrix::zeros(na + nb, ga + gb);
        generators
            .view_mut((0, 0), (na, ga))
            .copy_from(&self.generators);
        generators
            .view_mut((na, ga), (nb, gb))
            .copy_from(&other.generators);
        Zonotope { center, generators }
    }

    /// Half-widths `sum_i |g_i|` of the interval hull.
    pub fn radius(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.generators
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum()),
        )
    }

    pub fn interval_hull(&self) -> (DVector<f64>, DVector<f64>) {
        let r = self.radius();
        (&self.center - &r, &self.center + &r)
    }

    /// `max { d'x : x in Z } = d'c + sum_i |d'g_i|`.
    ///
    /// Panics if `d` has the wrong length.
    pub fn support(&self, d: &DVector<f64>) -> f64 {
        assert_eq!(d.len(), self.dim(), "support direction dimension");
        let proj = d.transpose() * &self.generators;
        d.dot(&self.center) + proj.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Point for the given generator coefficients.
    pub fn point_at(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.generators * beta
    }

    /// Samples with each generator coefficient drawn uniformly on `[-1, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let beta = DVector::from_fn(self.num_generators(), |_, _| rng.gen_range(-1.0..=1.0));
        self.point_at(&beta)
    }

    /// Exact facet description, for dimension at most 3.
    ///
    /// Every normal is unit length and every offset equals the support
    /// function in that direction. Flat zonotopes get a pair of opposite
    /// halfspaces for each direction orthogonal to their affine hull.
    pub fn to_hpolytope(&self) -> Result<HPolytope> {
        let normals = facet_normals(&self.generators)?;
        let n = self.dim();
        let mut h = DMatrix::zeros(normals.len(), n);
        let mut b = DVector::zeros(normals.len());
        for (i, f) in normals.iter().enumerate() {
            h.row_mut(i).copy_from(&f.transpose());
            b[i] = self.support(f);
        }
        HPolytope::new(h, b)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim("membership point", self.dim(), x.len())?;
        Ok(self.to_hpolytope()?.contains(x, tol))
    }

    /// `self ⊆ outer`, comparing support functions on every facet normal of
    /// `outer`.
    pub fn is_subset_of(&self, outer: &Zonotope, tol: f64) -> Result<bool> {
        check_dim("subset test", outer.dim(), self.dim())?;
        let poly = outer.to_hpolytope()?;
        Ok(self.max_support_excess(&poly) <= tol)
    }

    /// `max_i support(self, h_i) - b_i` over the facets of `poly`.
    pub fn max_support_excess(&self, poly: &HPolytope) -> f64 {
        (0..poly.num_facets())
            .map(|i| {
                let h = poly.normals().row(i).transpose();
                self.support(&h) - poly.offsets()[i]
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Relative singular-value threshold separating the affine hull from its
/// orthogonal complement.
const RANK_TOL: f64 = 1e-10;

fn facet_normals(gens: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let n = gens.nrows();
    if n > 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    let max_norm = gens.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = gens
        .column_iter()
        .filter(|c| max_norm > 0.0 && c.norm() > 1e-12 * max_norm)
        .map(|c| c.into_owned())
        .collect();

    let mut out = Vec::new();
    if n == 0 {
        return Ok(out);
    }
    if cols.is_empty() {
        for i in 0..n {
            push_pair(
                &mut out,
                DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 }),
            );
        }
        return Ok(out);
    }

    // Full left basis: pad with zero columns so the SVD returns n left vectors.
    let mut padded = DMatrix::zeros(n, cols.len() + n);
    for (j, c) in cols.iter().enumerate() {
        padded.set_column(j, c);
    }
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let smax = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > RANK_TOL * smax)
        .count();

    if rank == n {
        full_rank_normals(&cols, &mut out);
        return Ok(out);
    }

    let span: Vec<DVector<f64>> = order[..rank]
        .iter()
        .map(|&i| u.column(i).into_owned())
        .collect();
    let complement: Vec<DVector<f64>> = order[rank..n]
        .iter()
        .map(|&i| u.column(i).into_owned())
        .collect();

    let basis = DMatrix::from_columns(&span);
    let projected: Vec<DVector<f64>> = cols.iter().map(|c| basis.transpose() * c).collect();
    let mut inner = Vec::new();
    full_rank_normals(&projected, &mut inner);
    for h in inner {
        push_pair(&mut out, &basis * h);
    }
    for c in complement {
        push_pair(&mut out, c);
    }
    Ok(out)
}

/// Facet normals of a full-dimensional zonotope in dimension 1, 2 or 3.
fn full_rank_normals(cols: &[DVector<f64>], out: &mut Vec<DVector<f64>>) {
    let n = cols[0].len();
    match n {
        1 => push_pair(out, DVector::from_element(1, 1.0)),
        2 => {
            for g in cols {
                push_pair(out, DVector::from_vec(vec![-g[1], g[0]]));
            }
        }
        3 => {
            for i in 0..cols.len() {
                for j in (i + 1)..cols.len() {
                    let c = cols[i].cross(&cols[j]);
                    if c.norm() > RANK_TOL * cols[i].norm() * cols[j].norm() {
                        push_pair(out, c);
                    }
                }
            }
        }
        _ => unreachable!("dimension checked by caller"),
    }
}

/// Adds `f` and `-f` (normalized) unless that direction is already present.
fn push_pair(out: &mut Vec<DVector<f64>>, f: DVector<f64>) {
    let norm = f.norm();
    if norm == 0.0 {
        return;
    }
    let f = f / norm;
    if out.iter().any(|g| (g.dot(&f).abs() - 1.0).abs() < 1e-12) {
        return;
    }
    let neg = -&f;
    out.push(f);
    out.push(neg);
}
