//! JSON forms of the learned model set and the synthesis bundle.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tzpc::ident::ModelSet;
use tzpc::setalg::{Ellipsoid, HPolytope, MatrixZonotope, Zonotope};
use tzpc::synth::{NominalModel, SynthesisBundle};

use crate::config::{Rows, ZonotopeConfig};
use crate::error::{CliError, CliResult};

fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn matrix_of(rows: &Rows, ncols: usize) -> Result<DMatrix<f64>, String> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn zonotope_of(z: &ZonotopeConfig) -> Result<Zonotope, String> {
    let n = z.center.len();
    if z.generators.len() != n {
        return Err(format!(
            "zonotope of dimension {n} needs {n} generator rows"
        ));
    }
    let g = matrix_of(&z.generators, z.generators.first().map_or(0, Vec::len))?;
    Zonotope::new(DVector::from_column_slice(&z.center), g).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeRepr {
    pub dim: usize,
    pub normals: Rows,
    pub offsets: Vec<f64>,
}

impl PolytopeRepr {
    pub fn from_polytope(p: &HPolytope) -> Self {
        Self {
            dim: p.dim(),
            normals: rows_of(p.normals()),
            offsets: vec_of(p.offsets()),
        }
    }

    pub fn to_polytope(&self) -> Result<HPolytope, String> {
        let a = matrix_of(&self.normals, self.dim)?;
        HPolytope::new(a, DVector::from_column_slice(&self.offsets)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidRepr {
    pub shape: Rows,
    pub center: Vec<f64>,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalRepr {
    pub lower: Rows,
    pub upper: Rows,
}

/// Contents of `modelset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSetFile {
    pub n_x: usize,
    pub n_u: usize,
    pub num_columns: usize,
    pub data_rank: usize,
    /// Covering radius used for `Z_eps`.
    pub delta: f64,
    pub fro_norm: f64,
    pub center: Rows,
    pub generators: Vec<Rows>,
    pub interval_hull: IntervalRepr,
}

impl ModelSetFile {
    pub fn new(ms: &ModelSet, num_columns: usize, data_rank: usize, delta: f64) -> Self {
        Self {
            n_x: ms.n_x(),
            n_u: ms.n_u(),
            num_columns,
            data_rank,
            delta,
            fro_norm: ms.fro_norm,
            center: rows_of(ms.m_d.center()),
            generators: ms.m_d.generators().iter().map(rows_of).collect(),
            interval_hull: IntervalRepr {
                lower: rows_of(ms.i_md.lower()),
                upper: rows_of(ms.i_md.upper()),
            },
        }
    }

    /// Rebuilds the model set; the interval hull and norm are recomputed
    /// from the matrix zonotope.
    pub fn model_set(&self) -> Result<ModelSet, String> {
        let nc = self.n_x + self.n_u;
        let center = matrix_of(&self.center, nc)?;
        if center.nrows() != self.n_x {
            return Err(format!("model center needs {} rows", self.n_x));
        }
        let gens = self
            .generators
            .iter()
            .map(|g| matrix_of(g, nc))
            .collect::<Result<Vec<_>, _>>()?;
        let mz = MatrixZonotope::new(center, gens).map_err(|e| e.to_string())?;
        Ok(ModelSet::new(mz))
    }
}

/// Contents of `bundle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub a_bar: Rows,
    pub b_bar: Rows,
    pub k_gain: Rows,
    pub p_lyap: Rows,
    pub z_w: ZonotopeConfig,
    pub z_m: ZonotopeConfig,
    pub z_eps: ZonotopeConfig,
    pub z_phi: ZonotopeConfig,
    pub s_rpi: ZonotopeConfig,
    pub theta: f64,
    pub kappa: usize,
    pub terminal: EllipsoidRepr,
    pub x_set: PolytopeRepr,
    pub u_set: PolytopeRepr,
    pub x_tight: PolytopeRepr,
    pub u_tight: PolytopeRepr,
    pub setpoint_x: Vec<f64>,
    pub setpoint_u: Vec<f64>,
}

impl BundleFile {
    pub fn new(b: &SynthesisBundle) -> Self {
        Self {
            a_bar: rows_of(&b.nominal.a_bar),
            b_bar: rows_of(&b.nominal.b_bar),
            k_gain: rows_of(&b.k_gain),
            p_lyap: rows_of(&b.p_lyap),
            z_w: ZonotopeConfig::from_zonotope(&b.z_w),
            z_m: ZonotopeConfig::from_zonotope(&b.z_m),
            z_eps: ZonotopeConfig::from_zonotope(&b.z_eps),
            z_phi: ZonotopeConfig::from_zonotope(&b.z_phi),
            s_rpi: ZonotopeConfig::from_zonotope(&b.s_rpi),
            theta: b.theta,
            kappa: b.kappa,
            terminal: EllipsoidRepr {
                shape: rows_of(b.terminal.shape()),
                center: vec_of(b.terminal.center()),
                level: b.terminal.level(),
            },
            x_set: PolytopeRepr::from_polytope(&b.x_set),
            u_set: PolytopeRepr::from_polytope(&b.u_set),
            x_tight: PolytopeRepr::from_polytope(&b.x_tight),
            u_tight: PolytopeRepr::from_polytope(&b.u_tight),
            setpoint_x: vec_of(&b.setpoint_x),
            setpoint_u: vec_of(&b.setpoint_u),
        }
    }

    pub fn bundle(&self) -> Result<SynthesisBundle, String> {
        let nx = self.a_bar.len();
        let nu = self.b_bar.first().map_or(0, Vec::len);
        let nominal = NominalModel::new(matrix_of(&self.a_bar, nx)?, matrix_of(&self.b_bar, nu)?)
            .map_err(|e| e.to_string())?;
        let e = &self.terminal;
        let terminal = Ellipsoid::new(
            matrix_of(&e.shape, nx)?,
            DVector::from_column_slice(&e.center),
            e.level,
        )
        .map_err(|e| e.to_string())?;
        Ok(SynthesisBundle {
            nominal,
            k_gain: matrix_of(&self.k_gain, nx)?,
            p_lyap: matrix_of(&self.p_lyap, nx)?,
            z_w: zonotope_of(&self.z_w)?,
            z_m: zonotope_of(&self.z_m)?,
            z_eps: zonotope_of(&self.z_eps)?,
            z_phi: zonotope_of(&self.z_phi)?,
            s_rpi: zonotope_of(&self.s_rpi)?,
            theta: self.theta,
            kappa: self.kappa,
            terminal,
            x_set: self.x_set.to_polytope()?,
            u_set: self.u_set.to_polytope()?,
            x_tight: self.x_tight.to_polytope()?,
            u_tight: self.u_tight.to_polytope()?,
            setpoint_x: DVector::from_column_slice(&self.setpoint_x),
            setpoint_u: DVector::from_column_slice(&self.setpoint_u),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact is serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads an artifact produced by an earlier stage; a missing file is a
/// missing prerequisite.
pub fn read_json<T: DeserializeOwned>(path: &Path, produced_by: &str) -> CliResult<T> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::Missing(format!(
                "{} not found; run `tzpc {produced_by}` first",
                path.display()
            )))
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
