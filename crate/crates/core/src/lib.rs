//! Numerical verification toolkit for weighted Poincaré inequalities of
//! nonlocal Dirichlet forms with confining potentials.

pub mod floats;
pub mod model;
pub mod quadrature;
pub mod criteria;
pub mod discretization;
pub mod spectral;
pub mod lyapunov;
pub mod sharpness;
