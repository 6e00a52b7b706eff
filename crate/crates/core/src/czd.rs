//! Calderón–Zygmund decompositions over a dyadic system, and the two
//! covering lemmas (greedy ball selection with quasimetric dilation, and
//! Vitali-type exact covering on atomic spaces).
//!
//! All decompositions are stopping-time selections: the maximal cubes whose
//! average of `f` (under the decomposition's measure) exceeds the threshold.
//! Because atoms have positive mass, every "almost everywhere" conclusion
//! of the continuum theory is verified here as an exact set statement.

use serde::Serialize;

use crate::dyadic::{AdjacentSystems, Cube, DyadicSystem};
use crate::num::{pairwise_sum_by, EDGE_TOL, REL_TOL};
use crate::space::{quasitriangle_of_table, Ball, Space};
use crate::{Error, Result};

/// Reference to one cube of a system: level and index within the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CubeRef {
    pub level: i32,
    pub index: usize,
}

impl CubeRef {
    pub fn get<'a>(&self, sys: &'a DyadicSystem) -> &'a Cube {
        &sys.cubes_at(self.level).expect("level in range")[self.index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CzVariant {
    Local { root: CubeRef },
    Global,
    Weighted { root: CubeRef },
}

/// Verification outcome for one decomposition, recomputed from scratch
/// rather than trusted from the selection loop.
#[derive(Debug, Clone, Serialize)]
pub struct CzChecks {
    /// Parent of every selected cube has average at or below alpha.
    pub maximality: bool,
    /// Every selected cube has average strictly above alpha.
    pub lower: bool,
    /// Every selected cube with a parent has average at most
    /// `upper_constant * alpha`.
    pub upper: bool,
    /// Measured dyadic-doubling constant of the decomposition's measure;
    /// bounded by the ball-doubling power from the system report.
    pub upper_constant: f64,
    /// Maximal function at or below alpha off omega.
    pub off_omega: bool,
    /// alpha * measure(omega) at most the L1 norm of f.
    pub measure_bound: bool,
    pub witness: Option<String>,
}

impl CzChecks {
    pub fn all_ok(&self) -> bool {
        self.maximality
            && self.lower
            && self.upper
            && self.off_omega
            && self.measure_bound
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CzDecomposition {
    pub alpha: f64,
    /// Maximal cubes with average above alpha, coarsest first, pairwise
    /// disjoint.
    pub cubes: Vec<CubeRef>,
    /// Union of the cubes' members, ascending.
    pub omega: Vec<u32>,
    pub variant: CzVariant,
    pub checks: CzChecks,
}

fn validate_f(op: &'static str, f: &[f64], n: usize) -> Result<()> {
    if f.len() != n {
        return Err(Error::pre(op, format!("f has length {}, space has {n}", f.len())));
    }
    if let Some(i) = f.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::pre(op, format!("f[{i}] = {} is not finite nonnegative", f[i])));
    }
    Ok(())
}

/// Per-cube sums of `vals` (indexed by point), per level.
fn cube_sums(sys: &DyadicSystem, vals: &[f64]) -> Vec<Vec<f64>> {
    sys.levels()
        .map(|(_, cubes)| {
            cubes
                .iter()
                .map(|c| pairwise_sum_by(0, c.members.len(), &|i| vals[c.members[i] as usize]))
                .collect()
        })
        .collect()
}

/// Dyadic maximal function of `f` under the atom weights `measure`:
/// Mf(x) is the largest cube average over cubes containing x, restricted to
/// descendants of `q0` when given (zero for points outside `q0`).
pub fn dyadic_maximal(
    space: &Space,
    sys: &DyadicSystem,
    f: &[f64],
    measure: &[f64],
    q0: Option<CubeRef>,
) -> Result<Vec<f64>> {
    let n = space.n();
    validate_f("dyadic_maximal", f, n)?;
    validate_measure("dyadic_maximal", measure, n)?;
    if let Some(q) = q0 {
        let members = &q.get(sys).members;
        for (i, &v) in f.iter().enumerate() {
            if v != 0.0 && !members.contains(&(i as u32)) {
                return Err(Error::pre(
                    "dyadic_maximal",
                    format!("f is supported outside the root cube (point {i})"),
                ));
            }
        }
    }
    let weighted: Vec<f64> = (0..n).map(|i| f[i] * measure[i]).collect();
    let integrals = cube_sums(sys, &weighted);
    let masses = cube_sums(sys, measure);
    let start_level = q0.map_or(sys.k_min(), |q| q.level);
    let mut out = vec![0.0f64; n];
    for (x, slot) in out.iter_mut().enumerate() {
        if let Some(q) = q0 {
            if sys.cube_index_containing(x, q.level)? != q.index {
                continue;
            }
        }
        let mut best = 0.0f64;
        for k in start_level..=sys.k_max() {
            let l = (k - sys.k_min()) as usize;
            let ci = sys.cube_index_containing(x, k)?;
            let m = masses[l][ci];
            if m > 0.0 {
                best = best.max(integrals[l][ci] / m);
            }
        }
        *slot = best;
    }
    Ok(out)
}

fn validate_measure(op: &'static str, measure: &[f64], n: usize) -> Result<()> {
    if measure.len() != n {
        return Err(Error::pre(
            op,
            format!("measure has length {}, space has {n}", measure.len()),
        ));
    }
    if let Some(i) = measure
        .iter()
        .position(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::pre(
            op,
            format!("measure[{i}] = {} is not finite positive", measure[i]),
        ));
    }
    Ok(())
}

/// Measured dyadic-doubling constant of `measure` over the system: the
/// largest parent-to-child measure ratio.
pub fn dyadic_doubling(sys: &DyadicSystem, measure: &[f64]) -> f64 {
    let masses = cube_sums(sys, measure);
    let mut c = 1.0f64;
    for (l, (_, cubes)) in sys.levels().enumerate() {
        for (ci, cube) in cubes.iter().enumerate() {
            for &ch in &cube.children {
                let cm = masses[l + 1][ch as usize];
                if cm > 0.0 {
                    c = c.max(masses[l][ci] / cm);
                }
            }
        }
    }
    c
}

/// Stopping-time core shared by the local, global, and weighted variants.
fn cz_select(
    sys: &DyadicSystem,
    f: &[f64],
    measure: &[f64],
    alpha: f64,
    root: Option<CubeRef>,
) -> (Vec<CubeRef>, Vec<u32>) {
    let n = f.len();
    let weighted: Vec<f64> = (0..n).map(|i| f[i] * measure[i]).collect();
    let integrals = cube_sums(sys, &weighted);
    let masses = cube_sums(sys, measure);
    let avg = |k: i32, ci: usize| -> f64 {
        let l = (k - sys.k_min()) as usize;
        let m = masses[l][ci];
        if m > 0.0 {
            integrals[l][ci] / m
        } else {
            0.0
        }
    };
    let mut selected: Vec<CubeRef> = Vec::new();
    let mut frontier: Vec<CubeRef> = match root {
        Some(q) => vec![q],
        None => vec![CubeRef { level: sys.k_min(), index: 0 }],
    };
    // For the local variants the root itself is excluded by the alpha
    // precondition; globally the root is a legitimate candidate.
    while let Some(q) = frontier.pop() {
        if avg(q.level, q.index) > alpha {
            selected.push(q);
            continue;
        }
        if q.level < sys.k_max() {
            for &ch in &q.get(sys).children {
                frontier.push(CubeRef { level: q.level + 1, index: ch as usize });
            }
        }
    }
    selected.sort_by_key(|q| (q.level, q.index));
    let mut omega: Vec<u32> = selected
        .iter()
        .flat_map(|q| q.get(sys).members.iter().copied())
        .collect();
    omega.sort_unstable();
    (selected, omega)
}

fn cz_verify(
    space: &Space,
    sys: &DyadicSystem,
    f: &[f64],
    measure: &[f64],
    alpha: f64,
    root: Option<CubeRef>,
    selected: &[CubeRef],
    omega: &[u32],
) -> CzChecks {
    let n = space.n();
    let weighted: Vec<f64> = (0..n).map(|i| f[i] * measure[i]).collect();
    let integrals = cube_sums(sys, &weighted);
    let masses = cube_sums(sys, measure);
    let avg_of = |q: &CubeRef| -> f64 {
        let l = (q.level - sys.k_min()) as usize;
        integrals[l][q.index] / masses[l][q.index]
    };
    let upper_constant = dyadic_doubling(sys, measure);

    let mut witness = None;
    let mut maximality = true;
    let mut lower = true;
    let mut upper = true;
    for q in selected {
        let a = avg_of(q);
        if !(a > alpha) {
            lower = false;
            witness.get_or_insert(format!(
                "cube level {} index {} has average {a} at or below alpha",
                q.level, q.index
            ));
        }
        if let Some(p) = q.get(sys).parent {
            let pq = CubeRef { level: q.level - 1, index: p as usize };
            let pa = avg_of(&pq);
            if pa > alpha * (1.0 + EDGE_TOL) {
                maximality = false;
                witness.get_or_insert(format!(
                    "parent of selected cube level {} index {} has average {pa} above alpha",
                    q.level, q.index
                ));
            }
            if a > upper_constant * alpha * (1.0 + REL_TOL) {
                upper = false;
                witness.get_or_insert(format!(
                    "cube level {} index {} has average {a} above {upper_constant} * alpha",
                    q.level, q.index
                ));
            }
        }
    }

    let mf = dyadic_maximal(space, sys, f, measure, root).expect("inputs validated");
    let in_omega: Vec<bool> = {
        let mut v = vec![false; n];
        for &x in omega {
            v[x as usize] = true;
        }
        v
    };
    let mut off_omega = true;
    let in_scope = |x: usize| -> bool {
        match root {
            Some(q) => sys
                .cube_index_containing(x, q.level)
                .map(|c| c == q.index)
                .unwrap_or(false),
            None => true,
        }
    };
    for x in 0..n {
        if !in_omega[x] && in_scope(x) && mf[x] > alpha * (1.0 + EDGE_TOL) {
            off_omega = false;
            witness.get_or_insert(format!("Mf({x}) = {} above alpha off omega", mf[x]));
            break;
        }
    }

    let mu_omega = pairwise_sum_by(0, omega.len(), &|i| measure[omega[i] as usize]);
    let l1 = pairwise_sum_by(0, n, &|i| weighted[i]);
    let measure_bound = alpha * mu_omega <= l1 * (1.0 + REL_TOL);
    if !measure_bound {
        witness.get_or_insert(format!(
            "alpha * measure(omega) = {} exceeds L1 norm {l1}",
            alpha * mu_omega
        ));
    }

    CzChecks {
        maximality,
        lower,
        upper,
        upper_constant,
        off_omega,
        measure_bound,
        witness,
    }
}

/// Local decomposition at threshold `alpha` inside the cube `q0`:
/// the maximal sub-cubes of `q0` whose average exceeds `alpha`.
/// Requires `alpha` strictly above the `q0` average and `f` supported in
/// `q0`.
pub fn cz_local(
    space: &Space,
    sys: &DyadicSystem,
    f: &[f64],
    q0: CubeRef,
    alpha: f64,
) -> Result<CzDecomposition> {
    cz_local_with(space, sys, f, space.masses(), q0, alpha, false)
}

/// Local decomposition under the measure `w * mu`; the two-sided average
/// bound is checked against the measured dyadic-doubling constant of that
/// measure.
pub fn cz_weighted(
    space: &Space,
    sys: &DyadicSystem,
    f: &[f64],
    q0: CubeRef,
    alpha: f64,
    w: &[f64],
) -> Result<CzDecomposition> {
    validate_measure("cz_weighted", w, space.n())?;
    let wm: Vec<f64> = (0..space.n()).map(|i| w[i] * space.mass(i)).collect();
    cz_local_with(space, sys, f, &wm, q0, alpha, true)
}

fn cz_local_with(
    space: &Space,
    sys: &DyadicSystem,
    f: &[f64],
    measure: &[f64],
    q0: CubeRef,
    alpha: f64,
    weighted_variant: bool,
) -> Result<CzDecomposition> {
    let n = space.n();
    validate_f("cz_local", f, n)?;
    validate_measure("cz_local", measure, n)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::pre("cz_local", format!("alpha = {alpha} not positive")));
    }
    let root = q0.get(sys);
    for (i, &v) in f.iter().enumerate() {
        if v != 0.0 && !root.members.contains(&(i as u32)) {
            return Err(Error::pre(
                "cz_local",
                format!("f is supported outside the root cube (point {i})"),
            ));
        }
    }
    let weighted: Vec<f64> = (0..n).map(|i| f[i] * measure[i]).collect();
    let integral = pairwise_sum_by(0, root.members.len(), &|i| weighted[root.members[i] as usize]);
    let mass = pairwise_sum_by(0, root.members.len(), &|i| measure[root.members[i] as usize]);
    let alpha0 = integral / mass;
    if alpha <= alpha0 {
        return Err(Error::pre(
            "cz_local",
            format!("alpha = {alpha} must exceed the root average {alpha0}"),
        ));
    }
    let (cubes, omega) = cz_select(sys, f, measure, alpha, Some(q0));
    let checks = cz_verify(space, sys, f, measure, alpha, Some(q0), &cubes, &omega);
    Ok(CzDecomposition {
        alpha,
        cubes,
        omega,
        variant: if weighted_variant {
            CzVariant::Weighted { root: q0 }
        } else {
            CzVariant::Local { root: q0 }
        },
        checks,
    })
}

/// Global decomposition: maximal cubes over the whole hierarchy. The root
/// itself is selected when its average exceeds `alpha`.
pub fn cz_global(
    space: &Space,
    sys: &DyadicSystem,
    f: &[f64],
    alpha: f64,
) -> Result<CzDecomposition> {
    let n = space.n();
    validate_f("cz_global", f, n)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::pre("cz_global", format!("alpha = {alpha} not positive")));
    }
    let measure = space.masses();
    let (cubes, omega) = cz_select(sys, f, measure, alpha, None);
    let checks = cz_verify(space, sys, f, measure, alpha, None, &cubes, &omega);
    Ok(CzDecomposition {
        alpha,
        cubes,
        omega,
        variant: CzVariant::Global,
        checks,
    })
}

/// Does every cube of `fine` sit inside some cube of `coarse`? With
/// thresholds alpha_fine > alpha_coarse over the same system and data this
/// is the refinement property of nested decompositions.
pub fn refines(sys: &DyadicSystem, fine: &CzDecomposition, coarse: &CzDecomposition) -> bool {
    fine.cubes.iter().all(|fq| {
        let fc = fq.get(sys);
        coarse.cubes.iter().any(|cq| {
            cq.level <= fq.level
                && sys
                    .cube_index_containing(fc.center as usize, cq.level)
                    .map(|c| c == cq.index)
                    .unwrap_or(false)
        })
    })
}

/// Diagnostic for the decomposition over a whole adjacent family: off the
/// union of the per-system omegas, |f| is bounded by `mu_doubling^m * alpha`
/// with m = 1 + log2(8 A_0^3 / delta^3). On atomic spaces the sharper
/// per-system bound |f| <= alpha already holds, so this is reported, never
/// fatal.
#[derive(Debug, Clone, Serialize)]
pub struct AdjacentCzReport {
    pub m_exponent: f64,
    pub bound: f64,
    pub holds: bool,
    pub points_off_omega: usize,
}

pub fn cz_adjacent_diagnostic(
    space: &Space,
    adj: &AdjacentSystems,
    f: &[f64],
    alpha: f64,
    mu_doubling: f64,
) -> Result<AdjacentCzReport> {
    let n = space.n();
    validate_f("cz_adjacent_diagnostic", f, n)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::pre(
            "cz_adjacent_diagnostic",
            format!("alpha = {alpha} not positive"),
        ));
    }
    let mut in_omega = vec![false; n];
    for sys in &adj.systems {
        let dec = cz_global(space, sys, f, alpha)?;
        for &x in &dec.omega {
            in_omega[x as usize] = true;
        }
    }
    let m = 1.0 + adj.dilation_bound.log2();
    let bound = mu_doubling.powf(m) * alpha;
    let mut holds = true;
    let mut off = 0usize;
    for x in 0..n {
        if !in_omega[x] {
            off += 1;
            if f[x] > bound * (1.0 + REL_TOL) {
                holds = false;
            }
        }
    }
    Ok(AdjacentCzReport {
        m_exponent: m,
        bound,
        holds,
        points_off_omega: off,
    })
}

/// JSON dump of a decomposition with stable field order.
pub fn decomposition_json(space: &Space, sys: &DyadicSystem, dec: &CzDecomposition) -> String {
    #[derive(Serialize)]
    struct CubeDump<'a> {
        level: i32,
        center: &'a str,
        members: Vec<&'a str>,
    }
    #[derive(Serialize)]
    struct Dump<'a> {
        alpha: f64,
        cubes: Vec<CubeDump<'a>>,
        omega: Vec<&'a str>,
    }
    let dump = Dump {
        alpha: dec.alpha,
        cubes: dec
            .cubes
            .iter()
            .map(|q| {
                let c = q.get(sys);
                CubeDump {
                    level: c.level,
                    center: space.id(c.center as usize),
                    members: c.members.iter().map(|&m| space.id(m as usize)).collect(),
                }
            })
            .collect(),
        omega: dec.omega.iter().map(|&x| space.id(x as usize)).collect(),
    };
    serde_json::to_string_pretty(&dump).expect("dump serializes")
}

/// Outcome of a covering-lemma run: the selected subfamily and the
/// recomputed guarantees.
#[derive(Debug, Clone, Serialize)]
pub struct CoverReport {
    /// Indices into the input ball list, in selection order.
    pub selected: Vec<usize>,
    pub disjoint: bool,
    /// Every input ball meets a selected ball of at least half its radius.
    pub meets_half_radius: bool,
    /// Union of inputs inside the union of dilated selected balls.
    pub dilation_inclusion: bool,
    pub dilation_constant: f64,
    pub witness: Option<String>,
}

impl CoverReport {
    pub fn all_ok(&self) -> bool {
        self.disjoint && self.meets_half_radius && self.dilation_inclusion
    }
}

fn sort_by_radius_desc(balls: &[Ball]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..balls.len()).collect();
    idx.sort_by(|&a, &b| {
        balls[b]
            .radius
            .partial_cmp(&balls[a].radius)
            .unwrap()
            .then(balls[a].center.cmp(&balls[b].center))
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy covering selection: walk the balls by descending radius, keep
/// each ball that is disjoint (as an atom set) from all kept balls. Every
/// rejected ball then meets a kept ball at least as large, and the dilation
/// C = A_0 + 4 A_0^2 swallows it.
pub fn basic_cover(space: &Space, balls: &[Ball]) -> Result<CoverReport> {
    let n = space.n();
    for b in balls {
        if b.center >= n || !(b.radius.is_finite() && b.radius >= 0.0) {
            return Err(Error::pre("basic_cover", "ball center or radius out of range"));
        }
    }
    let a0 = quasitriangle_of_table(space.dist_table(), n).value;
    let c = a0 + 4.0 * a0 * a0;

    let mut selected: Vec<usize> = Vec::new();
    let mut covered = vec![false; n];
    let mut half_ok = true;
    let mut witness = None;
    for &i in &sort_by_radius_desc(balls) {
        let members = space.ball_members(&balls[i]);
        if members.iter().all(|&m| !covered[m as usize]) {
            for &m in members {
                covered[m as usize] = true;
            }
            selected.push(i);
        }
    }
    // Recheck the guarantees from scratch.
    let disjoint = {
        let mut seen = vec![false; n];
        let mut ok = true;
        for &i in &selected {
            for &m in space.ball_members(&balls[i]) {
                if seen[m as usize] {
                    ok = false;
                    witness.get_or_insert(format!("selected balls overlap at atom {m}"));
                }
                seen[m as usize] = true;
            }
        }
        ok
    };
    let mut dilated = vec![false; n];
    for &i in &selected {
        let b = &balls[i];
        let big = Ball { radius: c * b.radius, ..*b };
        for &m in space.ball_members(&big) {
            dilated[m as usize] = true;
        }
    }
    let mut dilation_inclusion = true;
    'outer: for (i, b) in balls.iter().enumerate() {
        let members = space.ball_members(b);
        for &m in members {
            if !dilated[m as usize] {
                dilation_inclusion = false;
                witness.get_or_insert(format!(
                    "atom {m} of ball {i} escapes every dilated selected ball"
                ));
                break 'outer;
            }
        }
        if !members.is_empty() {
            let meets = selected.iter().any(|&j| {
                balls[j].radius >= b.radius / 2.0
                    && space
                        .ball_members(&balls[j])
                        .iter()
                        .any(|m| members.contains(m))
            });
            if !meets {
                half_ok = false;
                witness.get_or_insert(format!("ball {i} meets no selected ball of half radius"));
            }
        }
    }
    Ok(CoverReport {
        selected,
        disjoint,
        meets_half_radius: half_ok,
        dilation_inclusion,
        dilation_constant: c,
        witness,
    })
}

/// Vitali-type selection: from a family of closed balls centered in `a_set`
/// and containing, for each atom of `a_set`, a ball below the minimum
/// separation (the finite rendering of arbitrarily fine balls), select a
/// disjoint subfamily covering `a_set` exactly.
pub fn vitali_cover(space: &Space, a_set: &[u32], balls: &[Ball]) -> Result<CoverReport> {
    let n = space.n();
    let mut in_a = vec![false; n];
    for &a in a_set {
        if a as usize >= n {
            return Err(Error::pre("vitali_cover", format!("atom {a} out of range")));
        }
        in_a[a as usize] = true;
    }
    let min_pos = space.min_positive_dist();
    let mut has_fine = vec![false; n];
    for b in balls {
        if !b.closed {
            return Err(Error::pre("vitali_cover", "family must consist of closed balls"));
        }
        if b.center >= n || !in_a[b.center] {
            return Err(Error::pre(
                "vitali_cover",
                format!("ball centered at {} lies outside the target set", b.center),
            ));
        }
        if b.radius < min_pos {
            has_fine[b.center] = true;
        }
    }
    if let Some(a) = a_set.iter().find(|&&a| !has_fine[a as usize]) {
        return Err(Error::pre(
            "vitali_cover",
            format!("no sub-separation ball at atom {a}; the family is not fine there"),
        ));
    }

    let mut selected: Vec<usize> = Vec::new();
    let mut covered = vec![false; n];
    for &i in &sort_by_radius_desc(balls) {
        let members = space.ball_members(&balls[i]);
        if members.iter().all(|&m| !covered[m as usize]) {
            for &m in members {
                covered[m as usize] = true;
            }
            selected.push(i);
        }
    }
    let mut witness = None;
    let coverage = a_set.iter().all(|&a| covered[a as usize]);
    if !coverage {
        let a = a_set.iter().find(|&&a| !covered[a as usize]).unwrap();
        witness = Some(format!("atom {a} left uncovered"));
    }
    Ok(CoverReport {
        selected,
        disjoint: true,
        meets_half_radius: true,
        dilation_inclusion: coverage,
        dilation_constant: 1.0,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_system;

    fn line_space(n: usize) -> Space {
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (i as f64 - j as f64).abs();
            }
        }
        Space::from_tables(dist, vec![1.0; n]).unwrap()
    }

    /// Three-level binary tree on four unit-mass points.
    fn tree4() -> (Space, DyadicSystem) {
        let s = line_space(4);
        let sys = DyadicSystem::from_levels(
            &s,
            0.5,
            0,
            vec![
                vec![(0, vec![0, 1, 2, 3])],
                vec![(0, vec![0, 1]), (2, vec![2, 3])],
                vec![(0, vec![0]), (1, vec![1]), (2, vec![2]), (3, vec![3])],
            ],
        )
        .unwrap();
        (s, sys)
    }

    fn root(sys: &DyadicSystem) -> CubeRef {
        CubeRef { level: sys.k_min(), index: 0 }
    }

    #[test]
    fn maximal_of_constant_is_constant() {
        let (s, sys) = tree4();
        let mf = dyadic_maximal(&s, &sys, &[3.0; 4], s.masses(), None).unwrap();
        assert_eq!(mf, vec![3.0; 4]);
    }

    #[test]
    fn maximal_on_tree_matches_enumeration() {
        // Averages containing point 0: {0} -> 8, {0,1} -> 4, root -> 2;
        // point 1 sees 0, 4, 2; points 2 and 3 see only the root's 2.
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        let mf = dyadic_maximal(&s, &sys, &f, s.masses(), Some(root(&sys))).unwrap();
        assert_eq!(mf, vec![8.0, 4.0, 2.0, 2.0]);
        // The root average is a floor for every point of the root.
        for v in mf {
            assert!(v >= 2.0);
        }
    }

    #[test]
    fn local_decomposition_on_tree() {
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        let dec = cz_local(&s, &sys, &f, root(&sys), 3.0).unwrap();
        assert_eq!(dec.cubes.len(), 1);
        assert_eq!(dec.cubes[0].get(&sys).members, vec![0, 1]);
        assert_eq!(dec.omega, vec![0, 1]);
        assert!(dec.checks.all_ok(), "{:?}", dec.checks.witness);
        // Property (i) numbers: 3 < 4 <= upper_constant * 3 with the
        // measured doubling constant 2.
        assert_eq!(dec.checks.upper_constant, 2.0);
    }

    #[test]
    fn local_alpha_at_or_below_root_average_errors() {
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        assert!(cz_local(&s, &sys, &f, root(&sys), 2.0).is_err());
        assert!(cz_local(&s, &sys, &f, root(&sys), 1.0).is_err());
        assert!(cz_local(&s, &sys, &f, root(&sys), 2.0 + 1e-9).is_ok());
    }

    #[test]
    fn alpha_above_max_gives_empty_decomposition() {
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        let dec = cz_local(&s, &sys, &f, root(&sys), 9.0).unwrap();
        assert!(dec.cubes.is_empty());
        assert!(dec.omega.is_empty());
        assert!(dec.checks.all_ok());
    }

    #[test]
    fn global_selects_root_below_its_average() {
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        let dec = cz_global(&s, &sys, &f, 1.5).unwrap();
        assert_eq!(dec.cubes, vec![root(&sys)]);
        assert_eq!(dec.omega, vec![0, 1, 2, 3]);
        assert!(dec.checks.all_ok(), "{:?}", dec.checks.witness);
    }

    #[test]
    fn global_thresholds_refine() {
        let s = line_space(64);
        let sys = build_system(&s, 1.0 / 13.0, 11, false).unwrap();
        let mut f = vec![0.0; 64];
        // A few spikes of different heights.
        f[3] = 40.0;
        f[17] = 9.0;
        f[18] = 7.0;
        f[40] = 22.0;
        f[63] = 5.0;
        let alphas: Vec<f64> = (1..=10).map(|i| 0.4 * i as f64).collect();
        let decs: Vec<_> = alphas
            .iter()
            .map(|&a| cz_global(&s, &sys, &f, a).unwrap())
            .collect();
        for d in &decs {
            assert!(d.checks.all_ok(), "{:?}", d.checks.witness);
        }
        for i in 0..decs.len() {
            for j in 0..i {
                // alphas[i] > alphas[j]: the finer decomposition refines
                // the coarser one.
                assert!(refines(&sys, &decs[i], &decs[j]));
            }
        }
    }

    #[test]
    fn weighted_matches_local_for_unit_weight() {
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        let a = cz_local(&s, &sys, &f, root(&sys), 3.0).unwrap();
        let b = cz_weighted(&s, &sys, &f, root(&sys), 3.0, &[1.0; 4]).unwrap();
        assert_eq!(a.cubes, b.cubes);
        assert_eq!(a.omega, b.omega);
        assert!(b.checks.all_ok());
    }

    #[test]
    fn weighted_reselects_under_new_measure() {
        // Under w = (1,1,2,2): root average 8/6, pair {0,1} average 4,
        // singleton {0} average 8; alpha = 3 still picks {0,1}.
        let (s, sys) = tree4();
        let f = [8.0, 0.0, 0.0, 0.0];
        let dec = cz_weighted(&s, &sys, &f, root(&sys), 3.0, &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(dec.cubes.len(), 1);
        assert_eq!(dec.cubes[0].get(&sys).members, vec![0, 1]);
        assert!(dec.checks.all_ok(), "{:?}", dec.checks.witness);
        // The weighted measure bound: w(omega) * alpha <= integral of f w.
        assert!(dec.checks.measure_bound);
    }

    #[test]
    fn leaf_averages_recover_f_exactly() {
        // The finest cubes are singletons, so the finest average is f
        // itself: the atomic form of differentiation.
        let s = line_space(16);
        let sys = build_system(&s, 1.0 / 12.0, 2, false).unwrap();
        let f: Vec<f64> = (0..16).map(|i| (i * i % 7) as f64).collect();
        for x in 0..16 {
            let leaf = sys.cube_containing(x, sys.k_max()).unwrap();
            let avg = leaf
                .members
                .iter()
                .map(|&m| f[m as usize])
                .sum::<f64>()
                / leaf.members.len() as f64;
            if leaf.members.len() == 1 {
                assert_eq!(avg, f[x]);
            }
        }
        let mf = dyadic_maximal(&s, &sys, &f, s.masses(), None).unwrap();
        for x in 0..16 {
            assert!(mf[x] >= f[x] * (1.0 - 1e-12));
        }
    }

    #[test]
    fn adjacent_diagnostic_is_nonfatal() {
        let s = line_space(32);
        let adj =
            crate::dyadic::build_adjacent_systems(&s, 3, 1.0 / 96.0, &[1, 2, 3], false).unwrap();
        let mut f = vec![0.0; 32];
        f[5] = 10.0;
        let rep = cz_adjacent_diagnostic(&s, &adj, &f, 0.5, 3.0).unwrap();
        assert!(rep.holds);
        assert!(rep.bound >= 0.5);
    }

    #[test]
    fn basic_cover_single_and_disjoint() {
        let s = line_space(8);
        let one = vec![Ball::closed(2, 1.0)];
        let rep = basic_cover(&s, &one).unwrap();
        assert_eq!(rep.selected, vec![0]);
        assert!(rep.all_ok());

        let two = vec![Ball::closed(0, 1.0), Ball::closed(6, 1.0)];
        let rep = basic_cover(&s, &two).unwrap();
        assert_eq!(rep.selected.len(), 2);
        assert!(rep.all_ok());
    }

    #[test]
    fn basic_cover_on_random_family() {
        use rand::Rng;
        use rand::SeedableRng;
        let s = line_space(64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
        let balls: Vec<Ball> = (0..100)
            .map(|_| {
                let c = rng.gen_range(0..64);
                let r = rng.gen_range(0.5..12.0);
                Ball::closed(c, r)
            })
            .collect();
        let rep = basic_cover(&s, &balls).unwrap();
        assert!(rep.all_ok(), "{:?}", rep.witness);
        assert!(rep.selected.len() <= balls.len());
        assert_eq!(rep.dilation_constant, 5.0);
    }

    #[test]
    fn vitali_covers_exactly() {
        let s = line_space(10);
        let a: Vec<u32> = (0..10).collect();
        // All singletons: everything selected, exact cover.
        let fine: Vec<Ball> = (0..10).map(|x| Ball::closed(x, 0.25)).collect();
        let rep = vitali_cover(&s, &a, &fine).unwrap();
        assert_eq!(rep.selected.len(), 10);
        assert!(rep.all_ok());

        // Nested balls around one center plus the fine singletons: the
        // greedy trace picks the big ball first, then singletons for the
        // uncovered rest.
        let mut fam = vec![
            Ball::closed(4, 3.0),
            Ball::closed(4, 2.0),
            Ball::closed(4, 1.0),
        ];
        fam.extend((0..10).map(|x| Ball::closed(x, 0.25)));
        let rep = vitali_cover(&s, &a, &fam).unwrap();
        assert!(rep.all_ok(), "{:?}", rep.witness);
        assert_eq!(rep.selected[0], 0, "largest ball first");
        // Ball(4, 3) covers 1..=7; singletons cover 0, 8, 9.
        assert_eq!(rep.selected.len(), 4);

        // Empty target set admits only the empty family.
        let rep = vitali_cover(&s, &[], &[]).unwrap();
        assert!(rep.all_ok());
        assert!(rep.selected.is_empty());
        assert!(vitali_cover(&s, &[], &fam).is_err());

        // Missing fine ball at an atom of A is a precondition failure.
        let coarse = vec![Ball::closed(4, 3.0)];
        assert!(vitali_cover(&s, &a, &coarse).is_err());
    }
}
