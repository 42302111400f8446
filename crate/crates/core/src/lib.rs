pub mod cli;
pub mod dataset;
pub mod eval;
pub mod fem;
pub mod geometry;
pub mod oracle;
pub mod raster;
pub mod surrogate;
