//! Fertility functions closed under linear ODEs, time factors and marks.

mod marks;
mod ode;
mod time_factor;

pub use marks::{InitStack, MarkDistribution, MarkKernel};
pub use ode::{companion, BranchingRatio, OdeKernel};
pub use time_factor::{TimeFactor, TimeFactorKind};
