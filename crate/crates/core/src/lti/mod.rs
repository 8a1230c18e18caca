//! Polynomial and rational transfer-function algebra for SISO continuous-time
//! models: roots, interconnection, stability, DC gain, state-space realization
//! and root locus.

mod poly;
mod rootlocus;
mod statespace;
mod tf;

pub use poly::{ComplexRoot, Polynomial};
pub use rootlocus::{default_gain_schedule, log_gain_schedule, root_locus, RootLocusBranch};
pub use statespace::{tf_to_statespace, StateSpace};
pub use tf::{DcGain, NearCancellation, TransferFunction};

use crate::error::Result;

pub fn poly_roots(p: &Polynomial) -> Result<Vec<ComplexRoot>> {
    p.roots()
}

pub fn tf_series(a: &TransferFunction, b: &TransferFunction) -> TransferFunction {
    a.series(b)
}

pub fn tf_unity_feedback(open_loop: &TransferFunction) -> Result<TransferFunction> {
    open_loop.unity_feedback()
}

pub fn dc_gain(g: &TransferFunction) -> Result<DcGain> {
    g.dc_gain()
}

pub fn is_stable(g: &TransferFunction) -> Result<bool> {
    g.is_stable()
}
