//! Snowflaking, power quasimetrics, and chain metrization.
//!
//! A quasimetric rho with quasitriangle constant A_0 becomes comparable to a
//! genuine metric after snowflaking: with epsilon solving (2 A_0)^epsilon = 2,
//! the infimal chain-sum of rho^epsilon is a metric d_eps sandwiched between
//! C_eps^-1 rho_eps and C_eps rho_eps. On a finite space the infimum is over
//! simple paths and is computed exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::num::EDGE_TOL;
use crate::space::{quasitriangle_of_table, validate_dist_table, Space};
use crate::{Error, Result};

/// Entrywise power of a distance table. The diagonal stays zero and
/// symmetry is preserved, so the result is again a valid table.
pub fn snowflake(dist: &[f64], n: usize, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::pre("snowflake", format!("epsilon = {epsilon} not in (0,1]")));
    }
    validate_dist_table(dist, n)?;
    Ok(dist.iter().map(|&d| d.powf(epsilon)).collect())
}

/// First triangle-inequality violation of a table, if any: an ordered
/// triple (x, y, z) with dist(x,z) > dist(x,y) + dist(y,z), allowing a
/// 1e-12 relative slack for summation round-off.
pub fn triangle_violation(dist: &[f64], n: usize) -> Option<(usize, usize, usize)> {
    for x in 0..n {
        for z in 0..n {
            let dxz = dist[x * n + z];
            for y in 0..n {
                let sum = dist[x * n + y] + dist[y * n + z];
                if dxz > sum * (1.0 + EDGE_TOL) {
                    return Some((x, y, z));
                }
            }
        }
    }
    None
}

/// Raise a metric table to the power beta >= 1 entrywise, producing a
/// quasimetric whose quasitriangle constant is at most 2^(beta-1): for a
/// metric D, convexity of t^beta gives
/// D(x,z)^beta <= 2^(beta-1) (D(x,y)^beta + D(y,z)^beta).
/// Returns the table and its measured quasitriangle constant.
pub fn power_quasimetric(dist: &[f64], n: usize, beta: f64) -> Result<(Vec<f64>, f64)> {
    if !(beta.is_finite() && beta >= 1.0) {
        return Err(Error::pre("power_quasimetric", format!("beta = {beta} < 1")));
    }
    validate_dist_table(dist, n)?;
    if let Some((x, y, z)) = triangle_violation(dist, n) {
        return Err(Error::pre(
            "power_quasimetric",
            format!("input is not a metric: triangle fails at ({x},{y},{z})"),
        ));
    }
    let powered: Vec<f64> = dist.iter().map(|&d| d.powf(beta)).collect();
    let a0 = quasitriangle_of_table(&powered, n).value;
    let bound = 2f64.powf(beta - 1.0);
    if a0 > bound * (1.0 + EDGE_TOL) {
        return Err(Error::BoundViolation {
            step: "power_quasimetric: quasitriangle constant of D^beta".into(),
            measured: a0,
            bound,
        });
    }
    Ok((powered, a0))
}

/// A metric comparable to the snowflaked quasimetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetrizationResult {
    /// Snowflake exponent actually used.
    pub epsilon: f64,
    /// Quasitriangle constant of the input table.
    pub a0: f64,
    /// Row-major metric table: the infimal chain-sum of rho^epsilon.
    pub d_eps: Vec<f64>,
    /// Smallest constant with C^-1 rho_eps <= d_eps <= C rho_eps entrywise.
    pub c_eps: f64,
    /// Relaxation sweeps needed to reach the shortest-path fixpoint.
    pub sweeps: usize,
}

impl MetrizationResult {
    pub fn rho_eps(&self, dist: &[f64]) -> Vec<f64> {
        dist.iter().map(|&d| d.powf(self.epsilon)).collect()
    }
}

/// Shortest-path metrization of a quasimetric table.
///
/// When epsilon is omitted it is chosen so that (2 A_0)^epsilon = 2 with the
/// measured quasitriangle constant A_0, i.e. epsilon = ln 2 / ln(2 A_0)
/// (epsilon = 1 for a genuine metric).
///
/// d_eps is the all-pairs shortest path table of the complete graph with
/// edge weights rho^epsilon. After the initial relaxation the sweep repeats
/// until no entry changes, so at return d(x,z) <= d(x,y) + d(y,z) holds for
/// every triple as evaluated in floating point, not merely up to round-off.
/// Edge weights are positive, so optimal chains are simple and the infimum
/// over all finite chains is attained.
pub fn chain_metric(dist: &[f64], n: usize, epsilon: Option<f64>) -> Result<MetrizationResult> {
    validate_dist_table(dist, n)?;
    let a0 = quasitriangle_of_table(dist, n).value;
    let epsilon = match epsilon {
        Some(e) => {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::pre("chain_metric", format!("epsilon = {e} not in (0,1]")));
            }
            e
        }
        None => {
            if a0 <= 1.0 {
                1.0
            } else {
                (2f64.ln() / (2.0 * a0).ln()).min(1.0)
            }
        }
    };
    let rho_eps: Vec<f64> = dist.iter().map(|&d| d.powf(epsilon)).collect();

    let mut d = rho_eps.clone();
    let mut sweeps = 0usize;
    loop {
        sweeps += 1;
        let mut changed = false;
        for k in 0..n {
            for i in 0..n {
                let dik = d[i * n + k];
                for j in 0..n {
                    let cand = dik + d[k * n + j];
                    if cand < d[i * n + j] {
                        // Mirror to keep the table symmetric at all times;
                        // the (j,i) relaxation computes the same sum.
                        d[i * n + j] = cand;
                        d[j * n + i] = cand;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut c_eps = 1.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = rho_eps[i * n + j];
            let m = d[i * n + j];
            c_eps = c_eps.max(r / m).max(m / r);
        }
    }
    Ok(MetrizationResult {
        epsilon,
        a0,
        d_eps: d,
        c_eps,
        sweeps,
    })
}

/// Outcome of the two-sided ball inclusion scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub c_eps: f64,
    pub balls_checked: usize,
    pub pass: bool,
    /// (center, radius, side) of the first failed inclusion.
    pub witness: Option<(usize, f64, String)>,
}

/// Verify, for every center and every critical radius r of the quasimetric
/// space, both inclusions
///   B_d(x, C^-1 r^eps)  subset of  B_rho(x, r)  subset of  B_d(x, C r^eps)
/// in open and closed variants, where B_d is a d_eps-ball and B_rho a
/// rho-ball. The comparison radii carry a 1e-12 relative slack absorbing
/// exponentiation round-off.
///
/// Inclusions are set statements, not cardinality statements: a prefix of
/// the d_eps-order lies inside a rho-ball iff the running maximum of rho
/// over that prefix is below the rho-radius, so each check is O(1) after a
/// per-center prefix-maximum precomputation.
pub fn ball_sandwich_check(space: &Space, m: &MetrizationResult) -> Result<SandwichReport> {
    let n = space.n();
    if m.d_eps.len() != n * n {
        return Err(Error::pre(
            "ball_sandwich_check",
            format!("metrization table is {}, space has {} points", m.d_eps.len(), n),
        ));
    }
    let c = m.c_eps * (1.0 + EDGE_TOL);
    let eps = m.epsilon;

    let verdicts: Vec<(usize, Option<(usize, f64, String)>)> = (0..n)
        .into_par_iter()
        .map(|x| {
            // Atoms sorted by d_eps from x, with rho prefix maxima, and the
            // mirror arrangement.
            let mut by_d: Vec<u32> = (0..n as u32).collect();
            by_d.sort_by(|&a, &b| {
                let da = m.d_eps[x * n + a as usize];
                let db = m.d_eps[x * n + b as usize];
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            let d_sorted: Vec<f64> = by_d.iter().map(|&a| m.d_eps[x * n + a as usize]).collect();
            let mut rho_prefmax = vec![0.0f64; n + 1];
            for (k, &a) in by_d.iter().enumerate() {
                rho_prefmax[k + 1] = rho_prefmax[k].max(space.dist(x, a as usize));
            }
            let rho_sorted = space.sorted_dists(x);
            let mut d_prefmax = vec![0.0f64; n + 1];
            for (k, &a) in space.order(x).iter().enumerate() {
                d_prefmax[k + 1] = d_prefmax[k].max(m.d_eps[x * n + a as usize]);
            }

            let mut radii: Vec<f64> = Vec::with_capacity(3 * n + 2);
            radii.push(space.min_positive_dist() / 2.0);
            radii.push(2.0 * space.diam());
            for &dd in rho_sorted.iter().skip(1) {
                radii.push(dd / 2.0);
                radii.push(dd);
                radii.push(2.0 * dd);
            }

            let mut checked = 0usize;
            for &r in &radii {
                if !(r > 0.0) {
                    continue;
                }
                let r_eps = r.powf(eps);
                let inner = r_eps / c;
                let outer = r_eps * c;
                for closed in [false, true] {
                    checked += 1;
                    let inner_len = if closed {
                        d_sorted.partition_point(|&v| v <= inner)
                    } else {
                        d_sorted.partition_point(|&v| v < inner)
                    };
                    let rho_ok = if closed {
                        rho_prefmax[inner_len] <= r
                    } else {
                        inner_len == 0 || rho_prefmax[inner_len] < r
                    };
                    if !rho_ok {
                        return (checked, Some((x, r, format!("inner/closed={closed}"))));
                    }
                    let rho_len = space.ball_len(x, r, closed);
                    let d_ok = if closed {
                        d_prefmax[rho_len] <= outer
                    } else {
                        rho_len == 0 || d_prefmax[rho_len] < outer
                    };
                    if !d_ok {
                        return (checked, Some((x, r, format!("outer/closed={closed}"))));
                    }
                }
            }
            (checked, None)
        })
        .collect();

    let balls_checked = verdicts.iter().map(|v| v.0).sum();
    let witness = verdicts.iter().find_map(|v| v.1.clone());
    Ok(SandwichReport {
        c_eps: m.c_eps,
        balls_checked,
        pass: witness.is_none(),
        witness,
    })
}
