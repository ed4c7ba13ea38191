use nalgebra::DMatrix;

use super::NominalModel;
use crate::error::{check_dim, Error, Result};
use crate::ident::ModelSet;
use crate::linalg::{check_spd, dare, max_sym_eigenvalue};

/// Largest number of free interval entries whose vertices are enumerated.
pub const VERTEX_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub passed: bool,
    /// Largest eigenvalue of `A_K' P A_K - P` over all vertices.
    pub worst: f64,
    pub vertices: usize,
}

/// Checks `(A + B K)' P (A + B K) - P <= -tol I` at every vertex `[A B]` of
/// the interval hull of `M_D`.
pub fn verify_lyapunov(
    ms: &ModelSet,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    tol: f64,
) -> Result<LyapunovReport> {
    let (nx, nu) = (ms.n_x(), ms.n_u());
    check_dim("gain rows", nu, k.nrows())?;
    check_dim("gain cols", nx, k.ncols())?;
    check_dim("Lyapunov matrix", nx, p.nrows())?;
    check_spd(p, "Lyapunov matrix P")?;
    let vertices = ms.i_md.vertices(VERTEX_CAP)?;
    let mut worst = f64::NEG_INFINITY;
    for v in &vertices {
        let acl = v.columns(0, nx) + v.columns(nx, nu) * k;
        let m = acl.transpose() * p * &acl - p;
        worst = worst.max(max_sym_eigenvalue(&m));
    }
    Ok(LyapunovReport {
        passed: worst <= -tol,
        worst,
        vertices: vertices.len(),
    })
}

/// Riccati candidate `(K, P)` for the nominal model, returned only if it
/// passes vertex verification on `ms`.
pub fn synthesize_gain(
    nominal: &NominalModel,
    q_lqr: &DMatrix<f64>,
    r_lqr: &DMatrix<f64>,
    ms: &ModelSet,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("LQR Q", nominal.n_x(), q_lqr.nrows())?;
    check_dim("LQR R", nominal.n_u(), r_lqr.nrows())?;
    check_spd(q_lqr, "LQR Q")?;
    check_spd(r_lqr, "LQR R")?;
    if nominal.b_bar.amax() == 0.0 {
        return Err(Error::Unstabilizable("nominal input matrix is zero"));
    }
    let (k, p) = dare(&nominal.a_bar, &nominal.b_bar, q_lqr, r_lqr, 100_000, 1e-13)?;
    let report = verify_lyapunov(ms, &k, &p, tol)?;
    if !report.passed {
        return Err(Error::LyapunovFailed {
            worst: report.worst,
        });
    }
    Ok((k, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dlyap, spectral_radius};
    use crate::setalg::MatrixZonotope;
    use nalgebra::dmatrix;

    fn singleton(m: DMatrix<f64>) -> ModelSet {
        ModelSet::new(MatrixZonotope::new(m, vec![]).unwrap())
    }

    fn low_noise_example1() -> ModelSet {
        let c = dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0];
        let gens = (0..6)
            .map(|i| {
                let mut g = DMatrix::zeros(2, 3);
                g[i] = 1e-3;
                g
            })
            .collect();
        ModelSet::new(MatrixZonotope::new(c, gens).unwrap())
    }

    #[test]
    fn reference_gains_pass_on_tight_model_set() {
        let k = dmatrix![-0.107, -0.603];
        let p = dmatrix![0.895, 0.492; 0.492, 3.709];
        let r = verify_lyapunov(&low_noise_example1(), &k, &p, 1e-9).unwrap();
        assert!(r.passed, "worst {}", r.worst);
        assert_eq!(r.vertices, 64);
    }

    #[test]
    fn zero_gain_fails_on_double_integrator() {
        let ms = singleton(dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0]);
        let r = verify_lyapunov(&ms, &dmatrix![0.0, 0.0], &DMatrix::identity(2, 2), 1e-9).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn lyapunov_equation_solution_passes() {
        let ms = singleton(dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0]);
        let k = dmatrix![-0.4, -1.0];
        let acl = dmatrix![1.0, 1.0; 0.0, 1.0] + dmatrix![0.5; 1.0] * &k;
        assert!(spectral_radius(&acl) < 1.0);
        let p = dlyap(&acl, &DMatrix::identity(2, 2)).unwrap();
        let r = verify_lyapunov(&ms, &k, &p, 1e-9).unwrap();
        assert!(r.passed);
        assert!((r.worst + 1.0).abs() < 1e-9);
        // monotone in the tolerance
        assert!(verify_lyapunov(&ms, &k, &p, 1e-12).unwrap().passed);
    }

    #[test]
    fn riccati_synthesis() {
        let ms = singleton(dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0]);
        let nom = NominalModel::from_stacked(ms.m_d.center()).unwrap();
        let (k, p) =
            synthesize_gain(&nom, &DMatrix::identity(2, 2), &dmatrix![1.0], &ms, 1e-9).unwrap();
        assert!(spectral_radius(&nom.closed_loop(&k)) < 1.0);
        assert!(verify_lyapunov(&ms, &k, &p, 1e-9).unwrap().passed);

        let zero_b = NominalModel::new(dmatrix![1.0, 1.0; 0.0, 1.0], dmatrix![0.0; 0.0]).unwrap();
        assert!(matches!(
            synthesize_gain(&zero_b, &DMatrix::identity(2, 2), &dmatrix![1.0], &ms, 1e-9),
            Err(Error::Unstabilizable(_))
        ));
    }

    #[test]
    fn vertex_cap_enforced() {
        let c = DMatrix::zeros(3, 5);
        let gens = vec![DMatrix::from_element(3, 5, 0.1)];
        let ms = ModelSet::new(MatrixZonotope::new(c, gens).unwrap());
        let r = verify_lyapunov(&ms, &DMatrix::zeros(2, 3), &DMatrix::identity(3, 3), 1e-9);
        assert!(matches!(r, Err(Error::VertexCapExceeded(15))));
    }
}
