//! Random streams and low-discrepancy / stratified point sets on the unit cube.

mod halton;
mod lhs;
mod sobol;
mod stream;

pub use halton::halton;
pub use lhs::lhs;
pub use sobol::{sobol, SOBOL_MAX_DIM};
pub use stream::RandomStream;
