//! Non-integrable self-similar solutions of the weighted porous medium
//! equation `ρ(x) u_t = Δ(u^m)` and the numerical experiments around them.

pub mod geometry;
pub mod harness;
pub mod interp;
pub mod norms;
pub mod params;
pub mod pde;
pub mod profile;
pub mod quad;

pub use params::{Branch, Exponents, ParamError, ProblemParams, RawParams, TildeParams};
