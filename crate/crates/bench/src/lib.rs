//! Shared inputs for the benchmarks.

use levlab::controllers::{discretize_tustin, paper_leadlag_tf, pid_tf, pid_tf_filtered, DiscreteController, PidGains};
use levlab::hil::Frame;
use levlab::lti::{Polynomial, TransferFunction};

pub fn paper_pid() -> TransferFunction {
    pid_tf(&PidGains::paper()).expect("reference gains are valid").tf
}

pub fn paper_leadlag() -> TransferFunction {
    paper_leadlag_tf()
}

pub fn discrete_pid() -> DiscreteController {
    let c = pid_tf_filtered(&PidGains::paper()).expect("reference gains are valid");
    discretize_tustin(&c, 0.01).expect("proper controller")
}

/// Degree-8 polynomial with mixed real and complex roots.
pub fn octic() -> Polynomial {
    let quad = |re: f64, im: f64| Polynomial::new(vec![1.0, -2.0 * re, re * re + im * im]);
    let mut p = Polynomial::from_real_roots(&[-1.0, -7.5, -30.0, -750.0]);
    for (re, im) in [(-4.05, 77.31), (-0.3, 2.0)] {
        p = &p * &quad(re, im);
    }
    p
}

/// A spread of frame sizes, empty to full payload.
pub fn frames() -> Vec<Frame> {
    (0..=16u8).map(|n| Frame::new(n, 0x10, (0..n).collect::<Vec<u8>>())).collect()
}
