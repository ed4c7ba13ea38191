use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::HPolytope;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_spd, spd_inverse};

/// `{ x : (x - c)' P (x - c) <= alpha }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    center: DVector<f64>,
    level: f64,
    /// Lower Cholesky factor `L` with `P = L L'`.
    chol_l: DMatrix<f64>,
}

impl Ellipsoid {
    /// `level = 0` is allowed and encodes the singleton `{center}`.
    pub fn new(shape: DMatrix<f64>, center: DVector<f64>, level: f64) -> Result<Self> {
        check_dim("ellipsoid center", shape.nrows(), center.len())?;
        check_spd(&shape, "ellipsoid shape")?;
        if !(level.is_finite() && level >= 0.0) {
            return Err(Error::Invalid(format!(
                "ellipsoid level {level} must be finite and >= 0"
            )));
        }
        let chol_l = shape
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("ellipsoid shape"))?
            .unpack();
        Ok(Self {
            shape,
            center,
            level,
            chol_l,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn with_level(&self, level: f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.center.clone(), level)
    }

    /// `(x - c)' P (x - c)`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        d.dot(&(&self.shape * &d))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.value(x) <= self.level + tol
    }

    /// `d'c + sqrt(alpha d' P^{-1} d)`.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64> {
        check_dim("ellipsoid support", self.dim(), d.len())?;
        let pinv = spd_inverse(&self.shape, "ellipsoid shape")?;
        Ok(d.dot(&self.center) + (self.level * d.dot(&(&pinv * d))).max(0.0).sqrt())
    }

    /// Maps a whitened point `w` to `c + sqrt(alpha) L^{-T} w`; unit `w`
    /// lands on the boundary.
    pub fn from_whitened(&self, w: &DVector<f64>) -> DVector<f64> {
        let y = self
            .chol_l
            .transpose()
            .solve_upper_triangular(w)
            .expect("Cholesky factor is nonsingular");
        &self.center + y * self.level.sqrt()
    }

    /// Boundary point in the direction of unit whitened angle `theta` (2-D)
    /// or sign (1-D).
    pub fn boundary_points(&self, count: usize) -> Result<Vec<DVector<f64>>> {
        match self.dim() {
            1 => Ok((0..count)
                .map(|j| {
                    let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                    self.from_whitened(&DVector::from_element(1, s))
                })
                .collect()),
            2 => Ok((0..count)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / count as f64;
                    self.from_whitened(&DVector::from_vec(vec![t.cos(), t.sin()]))
                })
                .collect()),
            n => Err(Error::UnsupportedDimension(n)),
        }
    }

    /// Uniform sample on the boundary (any dimension).
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let w = unit_direction(rng, self.dim());
        self.from_whitened(&w)
    }

    /// Uniform sample in the solid ellipsoid (any dimension).
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let w = unit_direction(rng, n);
        let r: f64 = rng.gen_range(0.0..=1.0f64).powf(1.0 / n as f64);
        self.from_whitened(&(w * r))
    }

    /// Inscribed polytope with `facets` facets (2-D) whose vertices lie on
    /// the boundary at uniform whitened angles; in 1-D the ellipsoid is an
    /// interval and is returned exactly.
    pub fn inner_polytope(&self, facets: usize) -> Result<HPolytope> {
        match self.dim() {
            1 => {
                let r = (self.level / self.shape[(0, 0)]).sqrt();
                HPolytope::from_box(
                    &DVector::from_element(1, self.center[0] - r),
                    &DVector::from_element(1, self.center[0] + r),
                )
            }
            2 => {
                if facets < 3 {
                    return Err(Error::Invalid(format!(
                        "inner polytope needs >= 3 facets, got {facets}"
                    )));
                }
                let f = facets as f64;
                let offset = self.level.sqrt() * (PI / f).cos();
                let mut h = DMatrix::zeros(facets, 2);
                let mut b = DVector::zeros(facets);
                for j in 0..facets {
                    let t = 2.0 * PI * (j as f64 + 0.5) / f;
                    let hw = DVector::from_vec(vec![t.cos(), t.sin()]);
                    let hx = &self.chol_l * hw;
                    h.row_mut(j).copy_from(&hx.transpose());
                    b[j] = offset + hx.dot(&self.center);
                }
                HPolytope::new(h, b)
            }
            n => Err(Error::UnsupportedDimension(n)),
        }
    }

    /// Supporting halfspace `(P (p - c))' (x - c) <= alpha` at a boundary point `p`.
    pub fn tangent_cut(&self, p: &DVector<f64>) -> (DVector<f64>, f64) {
        let g = &self.shape * (p - &self.center);
        let b = self.level + g.dot(&self.center);
        (g, b)
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ell() -> Ellipsoid {
        Ellipsoid::new(
            dmatrix![0.895, 0.492; 0.492, 3.709],
            dvector![0.5, -0.2],
            0.068,
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(Ellipsoid::new(dmatrix![1.0, 0.1; 0.0, 1.0], dvector![0.0, 0.0], 1.0).is_err());
        assert!(Ellipsoid::new(dmatrix![1.0, 0.0; 0.0, -1.0], dvector![0.0, 0.0], 1.0).is_err());
        assert!(Ellipsoid::new(DMatrix::identity(2, 2), dvector![0.0, 0.0], -1.0).is_err());
        assert!(Ellipsoid::new(DMatrix::identity(2, 2), dvector![0.0, 0.0], 0.0).is_ok());
    }

    #[test]
    fn boundary_points_have_level_value() {
        let e = ell();
        for p in e.boundary_points(37).unwrap() {
            assert!((e.value(&p) - e.level()).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!((e.value(&e.sample_boundary(&mut rng)) - e.level()).abs() < 1e-12);
            assert!(e.contains(&e.sample_interior(&mut rng), 1e-12));
        }
    }

    #[test]
    fn support_matches_boundary_maximum() {
        let e = ell();
        let d = dvector![1.0, -0.4];
        let s = e.support(&d).unwrap();
        let best = e
            .boundary_points(20_000)
            .unwrap()
            .iter()
            .map(|p| d.dot(p))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best <= s + 1e-12);
        assert!(s - best < 1e-6);
    }

    #[test]
    fn inner_polytope_is_inscribed() {
        let e = ell();
        let poly = e.inner_polytope(16).unwrap();
        assert_eq!(poly.num_facets(), 16);
        // vertices at whitened angles 2 pi j / 16 lie on both boundaries
        for p in e.boundary_points(16).unwrap() {
            assert!(poly.margin(&p).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut inside = 0;
        for _ in 0..2000 {
            let x = e.sample_interior(&mut rng) * 1.5 - e.center() * 0.5;
            if poly.contains(&x, 0.0) {
                inside += 1;
                assert!(e.contains(&x, 1e-12));
            }
        }
        assert!(inside > 0);
        assert!(poly.contains(e.center(), 0.0));
    }

    #[test]
    fn tangent_cut_supports() {
        let e = ell();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = e.sample_boundary(&mut rng);
        let (g, b) = e.tangent_cut(&p);
        assert!((g.dot(&p) - b).abs() < 1e-12);
        for _ in 0..200 {
            assert!(g.dot(&e.sample_interior(&mut rng)) <= b + 1e-12);
        }
    }
}
