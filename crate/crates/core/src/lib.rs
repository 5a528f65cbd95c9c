//! Meshless solver for `-div(mu grad phi) = f` on point clouds using staggered
//! generalized moving least squares (GMLS) stencils.

pub mod basis;
pub mod error;
pub mod geometry;
pub mod gmls;
pub mod neighbors;
pub mod output;
pub mod problems;
pub mod system;

pub use error::{Error, Result};
pub use geometry::Point;
