use nalgebra::{DMatrix, DVector};

use super::{
    build_phi, compute_rpi, mismatch_sets, nominal_from_explicit, pick_nominal, project_setpoint,
    symmetrize_about_origin, synthesize_gain, terminal_level, tighten, verify_lyapunov,
    ErrorDynamics, SynthesisBundle,
};
use crate::error::{Error, Result};
use crate::ident::{Dataset, ModelSet};
use crate::setalg::{Ellipsoid, HPolytope, Zonotope};

/// Where the stabilizing pair `(K, P)` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GainChoice {
    /// Given gains, accepted only after vertex verification.
    Provided { k: DMatrix<f64>, p: DMatrix<f64> },
    /// Riccati gains for the nominal model with these weights.
    Riccati { q: DMatrix<f64>, r: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub z_w: Zonotope,
    /// Covering radius used for `Z_eps`.
    pub delta: f64,
    /// Explicit `[A_bar B_bar]`; the center of `M_D` otherwise.
    pub nominal: Option<DMatrix<f64>>,
    pub gains: GainChoice,
    pub theta: f64,
    pub kappa_max: usize,
    pub symmetrize_zm: bool,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    /// Moves the setpoint to the nearest nominal equilibrium.
    pub project_setpoint: bool,
    /// Fixed terminal level; computed from the tightened sets otherwise.
    pub alpha: Option<f64>,
    pub tol: f64,
}

/// The full offline phase: nominal model, `Z_phi`, gains, tube, tightened
/// sets and terminal ellipsoid.
pub fn synthesize(d: &Dataset, ms: &ModelSet, opts: &SynthesisOptions) -> Result<SynthesisBundle> {
    let nominal = match &opts.nominal {
        Some(m) => nominal_from_explicit(ms, m, opts.tol)?,
        None => pick_nominal(ms),
    };
    let (z_m, z_eps) = mismatch_sets(d, &nominal, &opts.z_w, opts.delta, ms.fro_norm)?;
    let z_m = if opts.symmetrize_zm {
        symmetrize_about_origin(&z_m)
    } else {
        z_m
    };
    let z_phi = build_phi(&z_m, &z_eps, &opts.z_w)?;

    let (k_gain, p_lyap) = match &opts.gains {
        GainChoice::Provided { k, p } => {
            let report = verify_lyapunov(ms, k, p, opts.tol)?;
            if !report.passed {
                return Err(Error::LyapunovFailed {
                    worst: report.worst,
                });
            }
            (k.clone(), p.clone())
        }
        GainChoice::Riccati { q, r } => synthesize_gain(&nominal, q, r, ms, opts.tol)?,
    };
    log::debug!("gain K = {k_gain:?}");

    let ed = ErrorDynamics::new(&nominal, &k_gain, z_phi.clone())?;
    let rpi = compute_rpi(&ed, opts.theta, opts.kappa_max, opts.tol)?;
    log::debug!("tube found with kappa = {}", rpi.kappa);
    let (x_tight, u_tight) = tighten(&opts.x_set, &opts.u_set, &rpi.s, &k_gain)?;
    if x_tight.is_empty(opts.tol)? {
        return Err(Error::EmptySet("tightened state set"));
    }
    if u_tight.is_empty(opts.tol)? {
        return Err(Error::EmptySet("tightened input set"));
    }

    let (setpoint_x, setpoint_u) = if opts.project_setpoint {
        project_setpoint(&nominal, &opts.x_s, &opts.u_s)
    } else {
        (opts.x_s.clone(), opts.u_s.clone())
    };
    let alpha = match opts.alpha {
        Some(a) => a,
        None => terminal_level(
            &p_lyap,
            &setpoint_x,
            &setpoint_u,
            &k_gain,
            &x_tight,
            &u_tight,
        )?,
    };
    let terminal = Ellipsoid::new(p_lyap.clone(), setpoint_x.clone(), alpha)?;

    Ok(SynthesisBundle {
        nominal,
        k_gain,
        p_lyap,
        z_w: opts.z_w.clone(),
        z_m,
        z_eps,
        z_phi,
        s_rpi: rpi.s,
        theta: rpi.theta,
        kappa: rpi.kappa,
        terminal,
        x_set: opts.x_set.clone(),
        u_set: opts.u_set.clone(),
        x_tight,
        u_tight,
        setpoint_x,
        setpoint_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{learn_model_set, Trajectory};
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example1(seed: u64) -> (Dataset, ModelSet, SynthesisOptions) {
        let zw = Zonotope::new(dvector![0.0, 0.0], dmatrix![0.02, 0.01; 0.01, 0.02]).unwrap();
        let zx = Zonotope::new(dvector![-3.5, 0.0], dmatrix![4.0, 0.0; 0.0, 2.0]).unwrap();
        let zu = Zonotope::new(dvector![0.0], dmatrix![1.3]).unwrap();
        let (a, b) = (dmatrix![1.0, 1.0; 0.0, 1.0], dmatrix![0.5; 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs = (0..20)
            .map(|_| {
                let mut x = zx.sample(&mut rng);
                let mut xs = vec![x.clone()];
                let mut us = vec![];
                for _ in 0..4 {
                    let u = zu.sample(&mut rng);
                    x = &a * &x + &b * &u + zw.sample(&mut rng);
                    xs.push(x.clone());
                    us.push(u);
                }
                Trajectory::new(xs, us).unwrap()
            })
            .collect();
        let d = Dataset::assemble(trajs).unwrap();
        let ms = learn_model_set(&d, &zw).unwrap();
        let opts = SynthesisOptions {
            z_w: zw,
            delta: 0.0,
            nominal: None,
            gains: GainChoice::Riccati {
                q: dmatrix![3.0, 0.0; 0.0, 1.0],
                r: dmatrix![1.0],
            },
            theta: 0.01,
            kappa_max: 200,
            symmetrize_zm: false,
            x_set: zx.to_hpolytope().unwrap(),
            u_set: zu.to_hpolytope().unwrap(),
            x_s: dvector![0.0, 0.0],
            u_s: dvector![0.0],
            project_setpoint: true,
            alpha: None,
            tol: 1e-9,
        };
        (d, ms, opts)
    }

    #[test]
    fn example1_bundle_is_self_consistent() {
        let (d, ms, opts) = example1(3);
        let b = synthesize(&d, &ms, &opts).unwrap();
        assert!(b.phi_is_consistent());
        assert!(b.rpi_certificate(1e-9).unwrap());
        assert!(b.rpi_invariance(1e-9).unwrap());
        assert!(b.terminal_in_constraints(1e-9).unwrap());
        assert!(b.terminal.level() > 0.0);
        assert!(
            b.nominal
                .equilibrium_residual(&b.setpoint_x, &b.setpoint_u)
                .amax()
                < 1e-10
        );
    }

    #[test]
    fn provided_gains_are_verified() {
        let (d, ms, mut opts) = example1(3);
        opts.gains = GainChoice::Provided {
            k: dmatrix![0.0, 0.0],
            p: DMatrix::identity(2, 2),
        };
        assert!(matches!(
            synthesize(&d, &ms, &opts),
            Err(Error::LyapunovFailed { .. })
        ));
    }

    #[test]
    fn provided_level_is_used() {
        let (d, ms, mut opts) = example1(3);
        opts.alpha = Some(0.05);
        assert_eq!(synthesize(&d, &ms, &opts).unwrap().terminal.level(), 0.05);
    }
}
