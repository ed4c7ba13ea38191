//! Offline synthesis: nominal model, mismatch and disturbance sets, gain
//! verification, the RPI tube cross-section and the terminal ingredients.

mod gain;
mod offline;
mod rpi;
mod terminal;

pub use gain::{synthesize_gain, verify_lyapunov, LyapunovReport, VERTEX_CAP};
pub use offline::{synthesize, GainChoice, SynthesisOptions};
pub use rpi::{compute_rpi, tighten, ErrorDynamics, Rpi};
pub use terminal::{terminal_invariance_check, terminal_level, StageCost, TerminalReport};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::ident::{Dataset, ModelSet};
use crate::setalg::{Ellipsoid, HPolytope, Zonotope};

/// Prediction model `x+ = A_bar x + B_bar u`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
}

impl NominalModel {
    pub fn new(a_bar: DMatrix<f64>, b_bar: DMatrix<f64>) -> Result<Self> {
        check_dim("nominal A columns", a_bar.nrows(), a_bar.ncols())?;
        check_dim("nominal B rows", a_bar.nrows(), b_bar.nrows())?;
        Ok(Self { a_bar, b_bar })
    }

    /// Splits `[A_bar B_bar]`.
    pub fn from_stacked(m: &DMatrix<f64>) -> Result<Self> {
        let nx = m.nrows();
        if m.ncols() <= nx {
            return Err(Error::DimensionMismatch {
                context: "stacked nominal model columns",
                expected: nx + 1,
                found: m.ncols(),
            });
        }
        Self::new(
            m.columns(0, nx).into_owned(),
            m.columns(nx, m.ncols() - nx).into_owned(),
        )
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let (nx, nu) = (self.n_x(), self.n_u());
        let mut m = DMatrix::zeros(nx, nx + nu);
        m.columns_mut(0, nx).copy_from(&self.a_bar);
        m.columns_mut(nx, nu).copy_from(&self.b_bar);
        m
    }

    pub fn n_x(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_bar * x + &self.b_bar * u
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a_bar + &self.b_bar * k
    }

    /// `A_bar x_s + B_bar u_s - x_s`.
    pub fn equilibrium_residual(&self, x_s: &DVector<f64>, u_s: &DVector<f64>) -> DVector<f64> {
        self.step(x_s, u_s) - x_s
    }
}

/// The center of `M_D`.
pub fn pick_nominal(ms: &ModelSet) -> NominalModel {
    NominalModel::from_stacked(ms.m_d.center()).expect("model set has n_x + n_u columns")
}

/// A user-supplied nominal model, accepted only if it belongs to `M_D`.
pub fn nominal_from_explicit(ms: &ModelSet, m: &DMatrix<f64>, tol: f64) -> Result<NominalModel> {
    if !ms.m_d.contains(m, tol)? {
        return Err(Error::Invalid(
            "explicit nominal model is not a member of M_D".into(),
        ));
    }
    NominalModel::from_stacked(m)
}

/// `(Z_M, Z_eps)`: the mismatch on the data columns, inflated by the noise,
/// and the covering-radius box.
pub fn mismatch_sets(
    d: &Dataset,
    nominal: &NominalModel,
    zw: &Zonotope,
    delta: f64,
    fro_norm: f64,
) -> Result<(Zonotope, Zonotope)> {
    if d.num_columns() == 0 {
        return Err(Error::Empty("dataset"));
    }
    check_dim("mismatch state dimension", d.n_x(), nominal.n_x())?;
    check_dim("mismatch input dimension", d.n_u(), nominal.n_u())?;
    check_dim("mismatch noise dimension", d.n_x(), zw.dim())?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Invalid(format!(
            "covering radius {delta} must be finite and >= 0"
        )));
    }
    let resid = d.x_plus() - nominal.stacked() * d.d_minus();
    let nx = d.n_x();
    let lo = DVector::from_fn(nx, |i, _| resid.row(i).min());
    let hi = DVector::from_fn(nx, |i, _| resid.row(i).max());
    let z_m = Zonotope::from_interval(&lo, &hi)?.minkowski_sum(&zw.negate())?;
    let r = DVector::from_element(nx, fro_norm * delta / 2.0);
    let z_eps = Zonotope::from_interval(&-&r, &r)?;
    Ok((z_m, z_eps))
}

/// `Z_phi = Z_M ⊕ Z_eps ⊕ Z_w`.
pub fn build_phi(z_m: &Zonotope, z_eps: &Zonotope, zw: &Zonotope) -> Result<Zonotope> {
    z_m.minkowski_sum(z_eps)?.minkowski_sum(zw)
}

/// `<0, [G c]>`: the smallest origin-centered zonotope built from `z`'s
/// generators that contains `z`.
pub fn symmetrize_about_origin(z: &Zonotope) -> Zonotope {
    let n = z.dim();
    let g = z.num_generators();
    let mut gens = DMatrix::zeros(n, g + 1);
    gens.columns_mut(0, g).copy_from(z.generators());
    gens.set_column(g, z.center());
    Zonotope::new(DVector::zeros(n), gens).expect("finite by construction")
}

/// Least-norm correction of `(x_s, u_s)` onto the equilibria of the
/// nominal model.
pub fn project_setpoint(
    nominal: &NominalModel,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let (nx, nu) = (nominal.n_x(), nominal.n_u());
    let mut m = nominal.stacked();
    for i in 0..nx {
        m[(i, i)] -= 1.0;
    }
    let mut v = DVector::zeros(nx + nu);
    v.rows_mut(0, nx).copy_from(x_s);
    v.rows_mut(nx, nu).copy_from(u_s);
    let r = &m * &v;
    let corr = crate::linalg::pinv(&m) * r;
    let v = v - corr;
    (v.rows(0, nx).into_owned(), v.rows(nx, nu).into_owned())
}

/// Everything the online controller consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisBundle {
    pub nominal: NominalModel,
    pub k_gain: DMatrix<f64>,
    pub p_lyap: DMatrix<f64>,
    pub z_w: Zonotope,
    pub z_m: Zonotope,
    pub z_eps: Zonotope,
    pub z_phi: Zonotope,
    pub s_rpi: Zonotope,
    pub theta: f64,
    pub kappa: usize,
    pub terminal: Ellipsoid,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub x_tight: HPolytope,
    pub u_tight: HPolytope,
    pub setpoint_x: DVector<f64>,
    pub setpoint_u: DVector<f64>,
}

impl SynthesisBundle {
    pub fn closed_loop(&self) -> DMatrix<f64> {
        self.nominal.closed_loop(&self.k_gain)
    }

    /// `z_phi == z_m ⊕ z_eps ⊕ z_w`, field by field.
    pub fn phi_is_consistent(&self) -> bool {
        build_phi(&self.z_m, &self.z_eps, &self.z_w).is_ok_and(|z| z == self.z_phi)
    }

    /// Re-checks `A_K^kappa Z_phi ⊆ theta Z_phi`.
    pub fn rpi_certificate(&self, tol: f64) -> Result<bool> {
        let ak = self.closed_loop();
        let mut pow = DMatrix::identity(ak.nrows(), ak.ncols());
        for _ in 0..self.kappa {
            pow = &ak * pow;
        }
        self.z_phi
            .linear_map(&pow)?
            .is_subset_of(&self.z_phi.scale(self.theta), tol)
    }

    /// Re-checks `A_K S ⊕ Z_phi ⊆ S`.
    pub fn rpi_invariance(&self, tol: f64) -> Result<bool> {
        self.s_rpi
            .linear_map(&self.closed_loop())?
            .minkowski_sum(&self.z_phi)?
            .is_subset_of(&self.s_rpi, tol)
    }

    /// Re-checks that the terminal ellipsoid lies in `x_tight` and that its
    /// feedback image lies in `u_tight`.
    pub fn terminal_in_constraints(&self, tol: f64) -> Result<bool> {
        let e = &self.terminal;
        for i in 0..self.x_tight.num_facets() {
            let h = self.x_tight.normals().row(i).transpose();
            if e.support(&h)? > self.x_tight.offsets()[i] + tol {
                return Ok(false);
            }
        }
        for i in 0..self.u_tight.num_facets() {
            let hu = self.u_tight.normals().row(i).transpose();
            let h = self.k_gain.transpose() * &hu;
            let shift = hu.dot(&(&self.setpoint_u - &self.k_gain * &self.setpoint_x));
            if e.support(&h)? + shift > self.u_tight.offsets()[i] + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{learn_model_set, Trajectory};
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(noise: Option<&Zonotope>) -> Dataset {
        let a = dmatrix![1.0, 1.0; 0.0, 1.0];
        let b = dmatrix![0.5; 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ts = (0..20)
            .map(|_| {
                let mut x = dvector![rng.gen_range(-7.5..0.5), rng.gen_range(-2.0..2.0)];
                let mut xs = vec![x.clone()];
                let mut us = vec![];
                for _ in 0..4 {
                    let u = dvector![rng.gen_range(-1.3..1.3)];
                    let w = noise.map_or(DVector::zeros(2), |z| z.sample(&mut rng));
                    x = &a * &x + &b * &u + w;
                    xs.push(x.clone());
                    us.push(u);
                }
                Trajectory::new(xs, us).unwrap()
            })
            .collect();
        Dataset::assemble(ts).unwrap()
    }

    #[test]
    fn nominal_is_exact_for_noise_free_data() {
        let d = data(None);
        let ms = learn_model_set(&d, &Zonotope::origin(2)).unwrap();
        let nom = pick_nominal(&ms);
        assert!((&nom.a_bar - dmatrix![1.0, 1.0; 0.0, 1.0]).amax() < 1e-8);
        assert!((&nom.b_bar - dmatrix![0.5; 1.0]).amax() < 1e-8);
        let (z_m, z_eps) = mismatch_sets(&d, &nom, &Zonotope::origin(2), 0.0, ms.fro_norm).unwrap();
        assert!(z_m.center().amax() < 1e-8);
        assert!(z_m.generators().amax() < 1e-8);
        assert!(z_eps.is_singleton());
        let phi = build_phi(&z_m, &z_eps, &Zonotope::origin(2)).unwrap();
        assert_eq!(phi.num_generators(), z_m.num_generators());
    }

    #[test]
    fn nominal_center_is_member() {
        let zw = Zonotope::new(dvector![0.0, 0.0], dmatrix![0.02, 0.01; 0.01, 0.02]).unwrap();
        let d = data(Some(&zw));
        let ms = learn_model_set(&d, &zw).unwrap();
        let nom = pick_nominal(&ms);
        assert!(ms.m_d.contains(&nom.stacked(), 1e-9).unwrap());
        assert!(nominal_from_explicit(&ms, &nom.stacked(), 1e-9).is_ok());
        let far = nom.stacked() * 2.0;
        assert!(nominal_from_explicit(&ms, &far, 1e-9).is_err());
    }

    #[test]
    fn mismatch_contains_true_mismatch_on_data_hull() {
        let zw = Zonotope::new(dvector![0.0, 0.0], dmatrix![0.02, 0.01; 0.01, 0.02]).unwrap();
        let d = data(Some(&zw));
        let ms = learn_model_set(&d, &zw).unwrap();
        let nom = pick_nominal(&ms);
        let (z_m, z_eps) = mismatch_sets(&d, &nom, &zw, 0.0, ms.fro_norm).unwrap();
        let set = z_m.minkowski_sum(&z_eps).unwrap().to_hpolytope().unwrap();
        let dm = dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0] - nom.stacked();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cols = d.num_columns();
        for _ in 0..2000 {
            // convex combination of data columns
            let mut lam: Vec<f64> = (0..cols).map(|_| rng.gen::<f64>().powi(8)).collect();
            let s: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= s);
            let p = d.d_minus() * DVector::from_vec(lam);
            assert!(set.contains(&(&dm * p), 1e-9));
        }
    }

    #[test]
    fn covering_box_scales_with_delta() {
        let d = data(None);
        let nom = NominalModel::new(dmatrix![1.0, 1.0; 0.0, 1.0], dmatrix![0.5; 1.0]).unwrap();
        let (_, z_eps) = mismatch_sets(&d, &nom, &Zonotope::origin(2), 0.4, 2.0).unwrap();
        assert_eq!(z_eps.generators(), &dmatrix![0.4, 0.0; 0.0, 0.4]);
        assert!(mismatch_sets(&d, &nom, &Zonotope::origin(2), -1.0, 2.0).is_err());
    }

    #[test]
    fn symmetrized_contains_original_and_origin() {
        let z = Zonotope::new(dvector![0.3, -0.1], dmatrix![0.1, 0.0; 0.0, 0.05]).unwrap();
        let s = symmetrize_about_origin(&z);
        assert!(z.is_subset_of(&s, 1e-12).unwrap());
        assert!(s.contains(&dvector![0.0, 0.0], 1e-12).unwrap());
    }

    #[test]
    fn projected_setpoint_is_equilibrium() {
        let nom =
            NominalModel::new(dmatrix![0.055, 0.694; 0.043, 0.956], dmatrix![0.208; 0.0]).unwrap();
        let (x, u) = project_setpoint(&nom, &dvector![22.0, 21.37], &dvector![28.62]);
        assert!(nom.equilibrium_residual(&x, &u).amax() < 1e-10);
    }
}
