//! Differential dynamic programming over rigid-contact (KKT) dynamics for
//! planar articulated robots.

pub mod model;
pub mod contact_dynamics;
pub mod costs;
pub mod ddp;
pub mod scenarios;
