pub mod dual;
pub mod error;
pub mod expr;
pub mod field;
pub mod geom;
pub mod pointwise;
pub mod spline;
pub mod tracing;
pub mod chart;
pub mod returnmap;
pub mod control;
