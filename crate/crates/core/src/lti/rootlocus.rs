use serde::Serialize;

use super::poly::ComplexRoot;
use super::tf::TransferFunction;
use crate::error::{Error, Result};

/// One closed-loop pole tracked across a gain schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootLocusBranch {
    pub gains: Vec<f64>,
    pub points: Vec<ComplexRoot>,
}

/// `n` logarithmically spaced gains in `[lo, hi]`.
pub fn log_gain_schedule(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "log schedule needs 0 < lo < hi and n >= 2 (got lo={lo}, hi={hi}, n={n})"
        )));
    }
    let ratio = (hi / lo).ln();
    Ok((0..n)
        .map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Default schedule: 200 log-spaced gains over six decades around unity.
pub fn default_gain_schedule() -> Vec<f64> {
    log_gain_schedule(1e-3, 1e3, 200).expect("static schedule is valid")
}

/// Closed-loop poles of `1 + k·L(s) = 0` along an ascending gain schedule.
///
/// Points are assigned to branches by nearest-neighbour matching against the
/// previous gain's points.
pub fn root_locus(l: &TransferFunction, gains: &[f64]) -> Result<Vec<RootLocusBranch>> {
    if gains.is_empty() {
        return Err(Error::InvalidArgument("empty gain schedule".into()));
    }
    if gains.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
        return Err(Error::InvalidArgument("gains must be finite and > 0".into()));
    }
    if gains.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("gain schedule must be ascending".into()));
    }
    if !l.is_proper() {
        return Err(Error::Improper {
            num: l.num().degree(),
            den: l.den().degree(),
        });
    }

    let mut branches: Vec<RootLocusBranch> = Vec::new();
    for (gi, &k) in gains.iter().enumerate() {
        let char_poly = l.den() + &l.num().scale(k);
        if char_poly.degree() == 0 {
            return Err(Error::Degenerate(format!(
                "characteristic polynomial has no roots at gain {k}"
            )));
        }
        let roots = char_poly.roots()?;
        if gi == 0 {
            branches = roots
                .iter()
                .map(|&r| RootLocusBranch {
                    gains: vec![k],
                    points: vec![r],
                })
                .collect();
            continue;
        }
        if roots.len() != branches.len() {
            // a proper L with leading-coefficient cancellation can drop the order
            return Err(Error::Degenerate(format!(
                "closed-loop order changed at gain {k}"
            )));
        }
        let prev: Vec<ComplexRoot> = branches
            .iter()
            .map(|b| *b.points.last().expect("branch is non-empty"))
            .collect();
        let assignment = nearest_assignment(&prev, &roots);
        for (bi, ri) in assignment.into_iter().enumerate() {
            branches[bi].gains.push(k);
            branches[bi].points.push(roots[ri]);
        }
    }
    Ok(branches)
}

/// Greedy matching on ascending pairwise distance.
fn nearest_assignment(prev: &[ComplexRoot], next: &[ComplexRoot]) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(prev.len() * next.len());
    for (i, p) in prev.iter().enumerate() {
        for (j, q) in next.iter().enumerate() {
            pairs.push((p.dist(q), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut assign = vec![usize::MAX; prev.len()];
    let mut used = vec![false; next.len()];
    for (_, i, j) in pairs {
        if assign[i] == usize::MAX && !used[j] {
            assign[i] = j;
            used[j] = true;
        }
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_integrator_is_pure_oscillator() {
        let l = TransferFunction::new(vec![1.0], vec![1.0, 0.0, 0.0]).unwrap();
        let gains = [0.5, 2.0, 9.0];
        let br = root_locus(&l, &gains).unwrap();
        assert_eq!(br.len(), 2);
        for (gi, k) in gains.iter().enumerate() {
            for b in &br {
                let p = b.points[gi];
                assert!(p.re.abs() < 1e-9);
                assert!((p.im.abs() - k.sqrt()).abs() < 1e-9);
            }
        }
        // continuity keeps each branch on one side of the axis
        assert!(br[0].points.iter().all(|p| p.im.signum() == br[0].points[0].im.signum()));
    }

    #[test]
    fn rejects_bad_schedules() {
        let l = TransferFunction::gain(1.0);
        assert!(root_locus(&l, &[]).is_err());
        assert!(root_locus(&l, &[1.0, 0.5]).is_err());
        assert!(root_locus(&l, &[-1.0]).is_err());
    }

    #[test]
    fn schedule_shape() {
        let g = log_gain_schedule(0.01, 100.0, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[199] - 100.0).abs() < 1e-9);
        assert_eq!(default_gain_schedule().len(), 200);
    }
}
