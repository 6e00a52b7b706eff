//! Numeric conventions shared across the crate.
//!
//! All measured-vs-bound comparisons use a single relative tolerance so that
//! a failure always means "escaped the bound", never "accumulated rounding".

/// Relative tolerance for measured-vs-bound comparisons. Sums over at most a
/// few thousand atoms carry relative error near 1e-13; 1e-9 leaves three
/// orders of margin while still catching genuine violations.
pub const REL_TOL: f64 = 1e-9;

/// Slack used when a strict inclusion must survive an exact floating-point
/// boundary (for example a ball radius that equals a stored distance).
pub const EDGE_TOL: f64 = 1e-12;

/// `lhs <= rhs` up to `REL_TOL`, scaled by the magnitude of the bound.
pub fn le_tol(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + REL_TOL * rhs.abs().max(1.0)
}

/// Equality up to `REL_TOL`, scaled by the larger magnitude.
pub fn eq_tol(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Pairwise (cascade) summation: splits the index range in half recursively.
/// Error grows like log(n) in the number of terms instead of n, and the
/// result is independent of thread count because there is no data dependence
/// on evaluation order.
pub fn pairwise_sum_by(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
    match hi - lo {
        0 => 0.0,
        1 => f(lo),
        2 => f(lo) + f(lo + 1),
        len => {
            let mid = lo + len / 2;
            pairwise_sum_by(lo, mid, f) + pairwise_sum_by(mid, hi, f)
        }
    }
}

pub fn pairwise_sum(vals: &[f64]) -> f64 {
    pairwise_sum_by(0, vals.len(), &|i| vals[i])
}
