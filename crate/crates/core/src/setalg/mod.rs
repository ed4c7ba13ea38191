//! Set algebra: zonotopes, matrix zonotopes, interval matrices,
//! H-polytopes and ellipsoids.

mod ellipsoid;
mod matrix;
mod polytope;
mod zonotope;

pub use ellipsoid::Ellipsoid;
pub use matrix::{IntervalMatrix, MatrixZonotope};
pub use polytope::HPolytope;
pub use zonotope::Zonotope;
