use nalgebra::DMatrix;

use super::NominalModel;
use crate::error::{check_dim, Error, Result};
use crate::linalg::spectral_radius;
use crate::setalg::{HPolytope, Zonotope};

/// `e+ = A_K e + phi`, `phi in Z_phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    a_k: DMatrix<f64>,
    z_phi: Zonotope,
}

impl ErrorDynamics {
    pub fn new(nominal: &NominalModel, k: &DMatrix<f64>, z_phi: Zonotope) -> Result<Self> {
        check_dim("gain rows", nominal.n_u(), k.nrows())?;
        check_dim("gain cols", nominal.n_x(), k.ncols())?;
        Self::from_closed_loop(nominal.closed_loop(k), z_phi)
    }

    pub fn from_closed_loop(a_k: DMatrix<f64>, z_phi: Zonotope) -> Result<Self> {
        check_dim("disturbance dimension", a_k.nrows(), z_phi.dim())?;
        let rho = spectral_radius(&a_k);
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        Ok(Self { a_k, z_phi })
    }

    pub fn a_k(&self) -> &DMatrix<f64> {
        &self.a_k
    }

    pub fn z_phi(&self) -> &Zonotope {
        &self.z_phi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rpi {
    pub s: Zonotope,
    pub theta: f64,
    pub kappa: usize,
}

/// Smallest `kappa <= kappa_max` with `A_K^kappa Z_phi ⊆ theta Z_phi`, and
/// `S = (1 - theta)^{-1} ⊕_{i<kappa} A_K^i Z_phi`.
pub fn compute_rpi(ed: &ErrorDynamics, theta: f64, kappa_max: usize, tol: f64) -> Result<Rpi> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::Invalid(format!("theta {theta} must lie in [0, 1)")));
    }
    let z_phi = &ed.z_phi;
    let poly = z_phi.to_hpolytope()?;
    let target = HPolytope::new(poly.normals().clone(), poly.offsets() * theta)?;
    let n = ed.a_k.nrows();
    let mut pow = ed.a_k.clone();
    let mut kappa = None;
    for k in 1..=kappa_max {
        if z_phi.linear_map(&pow)?.max_support_excess(&target) <= tol {
            kappa = Some(k);
            break;
        }
        pow = &ed.a_k * pow;
    }
    let kappa = kappa.ok_or(Error::RpiNotFound { kappa_max, theta })?;

    let mut sum = Zonotope::origin(n);
    let mut pow = DMatrix::identity(n, n);
    for _ in 0..kappa {
        sum = sum.minkowski_sum(&z_phi.linear_map(&pow)?)?;
        pow = &ed.a_k * pow;
    }
    Ok(Rpi {
        s: sum.scale(1.0 / (1.0 - theta)),
        theta,
        kappa,
    })
}

/// `(X ⊖ S, U ⊖ K S)`.
pub fn tighten(
    x_set: &HPolytope,
    u_set: &HPolytope,
    s: &Zonotope,
    k: &DMatrix<f64>,
) -> Result<(HPolytope, HPolytope)> {
    let x_tight = x_set.pontryagin_diff(s)?;
    let u_tight = u_set.pontryagin_diff(&s.linear_map(k)?)?;
    Ok((x_tight, u_tight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phi() -> Zonotope {
        Zonotope::new(
            dvector![0.0, 0.0],
            dmatrix![0.05, 0.02, 0.0; 0.01, 0.04, 0.03],
        )
        .unwrap()
    }

    #[test]
    fn nilpotent_closed_loop() {
        let ed = ErrorDynamics::from_closed_loop(DMatrix::zeros(2, 2), phi()).unwrap();
        let r = compute_rpi(&ed, 0.0, 10, 1e-9).unwrap();
        assert_eq!(r.kappa, 1);
        assert_eq!(r.s, phi());
        let r = compute_rpi(&ed, 0.5, 10, 1e-9).unwrap();
        assert_eq!(r.s, phi().scale(2.0));
    }

    #[test]
    fn singleton_disturbance() {
        let ed = ErrorDynamics::from_closed_loop(dmatrix![0.5, 0.1; 0.0, 0.4], Zonotope::origin(2))
            .unwrap();
        let r = compute_rpi(&ed, 0.01, 10, 1e-9).unwrap();
        assert!(r.s.is_singleton());
        assert_eq!(r.s.center(), &dvector![0.0, 0.0]);
    }

    #[test]
    fn invariance_and_error_confinement() {
        let a = dmatrix![0.6, 0.3; -0.2, 0.5];
        let ed = ErrorDynamics::from_closed_loop(a.clone(), phi()).unwrap();
        let r = compute_rpi(&ed, 0.01, 200, 1e-9).unwrap();
        let image = r.s.linear_map(&a).unwrap().minkowski_sum(&phi()).unwrap();
        assert!(image.is_subset_of(&r.s, 1e-9).unwrap());

        let poly = r.s.to_hpolytope().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut e = r.s.sample(&mut rng);
            for _ in 0..200 {
                e = &a * e + phi().sample(&mut rng);
                assert!(poly.contains(&e, 1e-9));
            }
        }
    }

    #[test]
    fn unstable_and_unreachable() {
        assert!(matches!(
            ErrorDynamics::from_closed_loop(dmatrix![1.1, 0.0; 0.0, 0.2], phi()),
            Err(Error::Unstable(_))
        ));
        let ed = ErrorDynamics::from_closed_loop(dmatrix![0.99, 0.0; 0.0, 0.99], phi()).unwrap();
        assert!(matches!(
            compute_rpi(&ed, 0.01, 5, 1e-9),
            Err(Error::RpiNotFound { .. })
        ));
        assert!(compute_rpi(&ed, 1.0, 5, 1e-9).is_err());
    }

    #[test]
    fn tightening_shrinks_both_sets() {
        let x = HPolytope::from_box(&dvector![-1.0, -1.0], &dvector![1.0, 1.0]).unwrap();
        let u = HPolytope::from_box(&dvector![-1.0], &dvector![1.0]).unwrap();
        let s = Zonotope::from_interval(&dvector![-0.1, -0.2], &dvector![0.1, 0.2]).unwrap();
        let (xt, ut) = tighten(&x, &u, &s, &dmatrix![-0.5, -1.0]).unwrap();
        assert!((xt.offsets() - dvector![0.9, 0.9, 0.8, 0.8]).amax() < 1e-15);
        assert!((ut.offsets() - dvector![0.75, 0.75]).amax() < 1e-15);
    }
}
