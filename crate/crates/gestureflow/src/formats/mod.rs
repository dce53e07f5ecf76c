//! On-disk containers: parameter checkpoints, GFVS clips and PPM frame
//! directories.

pub mod checkpoint;
pub mod framedir;
pub mod gfvs;
