//! Finite quasimetric measure spaces and their structure constants.
//!
//! The quasitriangle constant, doubling constant, Ahlfors regularity misfit,
//! and annulus nonemptiness are all suprema over radii. Ball membership is
//! piecewise constant in the radius and changes only at stored distances, so
//! each scan below walks a finite critical set of radii and is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::num::{pairwise_sum_by, REL_TOL};
use crate::{Error, Result};

/// Assumed Poincare-type exponents attached to an input space.
/// Carried as metadata only; nothing is derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareAssumption {
    pub p: f64,
    pub alpha: f64,
}

/// On-disk form of a space: point ids, row-major distance table, masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceFile {
    pub points: Vec<String>,
    pub dist: Vec<f64>,
    pub mass: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_poincare: Option<PoincareAssumption>,
}

/// A finite set of atoms with a symmetric positive distance table and
/// strictly positive masses.
///
/// Construction validates the table (square, symmetric, zero diagonal,
/// positive finite off-diagonal) and precomputes, for every center, the
/// atoms sorted by distance together with mass prefix sums. Every distinct
/// ball around a center is a prefix of that order, which makes ball scans
/// cheap and exact.
#[derive(Debug, Clone)]
pub struct Space {
    ids: Vec<String>,
    dist: Vec<f64>,
    mass: Vec<f64>,
    assumed_poincare: Option<PoincareAssumption>,
    n: usize,
    min_positive_dist: f64,
    diam: f64,
    total_mass: f64,
    /// order[x]: atom indices sorted by (distance from x, index).
    order: Vec<Vec<u32>>,
    /// sorted_dist[x][k] = dist(x, order[x][k]).
    sorted_dist: Vec<Vec<f64>>,
    /// prefix_mass[x][k] = sum of masses of the first k atoms in order[x].
    prefix_mass: Vec<Vec<f64>>,
}

/// A ball described by center index, radius, and open/closed flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    pub closed: bool,
}

impl Ball {
    pub fn open(center: usize, radius: f64) -> Self {
        Ball { center, radius, closed: false }
    }
    pub fn closed(center: usize, radius: f64) -> Self {
        Ball { center, radius, closed: true }
    }
    pub fn contains(&self, space: &Space, y: usize) -> bool {
        let d = space.dist(self.center, y);
        if self.closed {
            d <= self.radius
        } else {
            d < self.radius
        }
    }
}

impl Space {
    pub fn new(ids: Vec<String>, dist: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        Self::build(ids, dist, mass, None)
    }

    pub fn from_file(f: SpaceFile) -> Result<Self> {
        Self::build(f.points, f.dist, f.mass, f.assumed_poincare)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SpaceFile = serde_json::from_str(text)?;
        Self::from_file(f)
    }

    /// Build with default ids "0", "1", ...
    pub fn from_tables(dist: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        let n = mass.len();
        Self::build((0..n).map(|i| i.to_string()).collect(), dist, mass, None)
    }

    fn build(
        ids: Vec<String>,
        dist: Vec<f64>,
        mass: Vec<f64>,
        assumed_poincare: Option<PoincareAssumption>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::InvalidSpace("empty point set".into()));
        }
        {
            let mut sorted: Vec<&String> = ids.iter().collect();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidSpace("duplicate point ids".into()));
            }
        }
        if dist.len() != n * n {
            return Err(Error::InvalidSpace(format!(
                "distance table has {} entries, expected {}",
                dist.len(),
                n * n
            )));
        }
        if mass.len() != n {
            return Err(Error::InvalidSpace(format!(
                "mass vector has {} entries, expected {}",
                mass.len(),
                n
            )));
        }
        for (i, &m) in mass.iter().enumerate() {
            if !m.is_finite() || m <= 0.0 {
                return Err(Error::InvalidSpace(format!(
                    "mass of point {} is {}, must be finite and positive",
                    ids[i], m
                )));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d = dist[i * n + j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidSpace(format!(
                        "dist({},{}) = {} is not finite and nonnegative",
                        ids[i], ids[j], d
                    )));
                }
                if i == j && d != 0.0 {
                    return Err(Error::InvalidSpace(format!(
                        "dist({},{}) = {} on the diagonal, must be 0",
                        ids[i], ids[j], d
                    )));
                }
                if i != j && d == 0.0 {
                    return Err(Error::InvalidSpace(format!(
                        "dist({},{}) = 0 between distinct points",
                        ids[i], ids[j]
                    )));
                }
                if dist[i * n + j] != dist[j * n + i] {
                    return Err(Error::InvalidSpace(format!(
                        "distance table is not symmetric at ({},{})",
                        ids[i], ids[j]
                    )));
                }
            }
        }
        if let Some(pa) = &assumed_poincare {
            if !(pa.p.is_finite() && pa.p >= 1.0 && pa.alpha.is_finite() && pa.alpha > 0.0) {
                return Err(Error::InvalidSpace(format!(
                    "assumed_poincare (p={}, alpha={}) out of range",
                    pa.p, pa.alpha
                )));
            }
        }

        let mut min_positive = f64::INFINITY;
        let mut diam: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist[i * n + j];
                min_positive = min_positive.min(d);
                diam = diam.max(d);
            }
        }

        let mut order = Vec::with_capacity(n);
        let mut sorted_dist = Vec::with_capacity(n);
        let mut prefix_mass = Vec::with_capacity(n);
        for x in 0..n {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                let da = dist[x * n + a as usize];
                let db = dist[x * n + b as usize];
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            let sd: Vec<f64> = idx.iter().map(|&a| dist[x * n + a as usize]).collect();
            let mut pm = Vec::with_capacity(n + 1);
            pm.push(0.0);
            let mut acc = 0.0;
            for &a in &idx {
                acc += mass[a as usize];
                pm.push(acc);
            }
            order.push(idx);
            sorted_dist.push(sd);
            prefix_mass.push(pm);
        }

        let total_mass = pairwise_sum_by(0, n, &|i| mass[i]);
        Ok(Space {
            ids,
            dist,
            mass,
            assumed_poincare,
            n,
            min_positive_dist: min_positive,
            diam,
            total_mass,
            order,
            sorted_dist,
            prefix_mass,
        })
    }

    /// Same atoms and masses, different distance table.
    pub fn with_dist(&self, dist: Vec<f64>) -> Result<Self> {
        Self::build(self.ids.clone(), dist, self.mass.clone(), self.assumed_poincare)
    }

    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            points: self.ids.clone(),
            dist: self.dist.clone(),
            mass: self.mass.clone(),
            assumed_poincare: self.assumed_poincare,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }
    pub fn dist_table(&self) -> &[f64] {
        &self.dist
    }
    pub fn mass(&self, i: usize) -> f64 {
        self.mass[i]
    }
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }
    pub fn diam(&self) -> f64 {
        self.diam
    }
    /// Smallest positive pairwise distance; infinite for a single atom.
    pub fn min_positive_dist(&self) -> f64 {
        self.min_positive_dist
    }
    pub fn assumed_poincare(&self) -> Option<PoincareAssumption> {
        self.assumed_poincare
    }
    /// Atoms sorted by distance from x (ties by index).
    pub fn order(&self, x: usize) -> &[u32] {
        &self.order[x]
    }
    /// Distances aligned with `order(x)`.
    pub fn sorted_dists(&self, x: usize) -> &[f64] {
        &self.sorted_dist[x]
    }

    /// Number of atoms with dist(x, .) < r (open) or <= r (closed).
    pub fn ball_len(&self, x: usize, r: f64, closed: bool) -> usize {
        let sd = &self.sorted_dist[x];
        if closed {
            sd.partition_point(|&d| d <= r)
        } else {
            sd.partition_point(|&d| d < r)
        }
    }

    /// Measure of the ball around x of radius r.
    pub fn mu_ball(&self, x: usize, r: f64, closed: bool) -> f64 {
        self.prefix_mass[x][self.ball_len(x, r, closed)]
    }

    /// Members of the ball, sorted by distance from the center.
    pub fn ball_members(&self, b: &Ball) -> &[u32] {
        &self.order[b.center][..self.ball_len(b.center, b.radius, b.closed)]
    }

    /// Measure of an arbitrary atom set.
    pub fn mu_set(&self, set: &[u32]) -> f64 {
        pairwise_sum_by(0, set.len(), &|i| self.mass[set[i] as usize])
    }

    /// Sorted distinct positive pairwise distances.
    pub fn distinct_distances(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for x in 0..self.n {
            v.extend(self.sorted_dist[x].iter().copied().filter(|&d| d > 0.0));
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    /// The critical radius set: every distinct positive distance together
    /// with its half and double, one radius strictly below the minimum
    /// separation, and one strictly above the diameter. Balls change
    /// membership only at distances, so suprema over all radii of ratios of
    /// ball measures are attained on this set.
    pub fn critical_radii(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![1.0];
        }
        let dd = self.distinct_distances();
        let mut v = Vec::with_capacity(3 * dd.len() + 2);
        v.push(self.min_positive_dist / 2.0);
        for &d in &dd {
            v.push(d / 2.0);
            v.push(d);
            v.push(2.0 * d);
        }
        v.push(2.0 * self.diam);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    /// Every distinct ball around every center, as (center, member count,
    /// closed radius). Members are `order(center)[..len]`. Two atoms at the
    /// same distance from the center always enter together, so prefixes at
    /// strict distance increases enumerate all balls exactly once.
    pub fn distinct_balls(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::new();
        for x in 0..self.n {
            let sd = &self.sorted_dist[x];
            for k in 0..self.n {
                if k + 1 == self.n || sd[k + 1] > sd[k] {
                    out.push((x as u32, (k + 1) as u32, sd[k]));
                }
            }
        }
        out
    }
}

/// Result of the quasitriangle scan: the smallest constant A with
/// dist(x,z) <= A (dist(x,y) + dist(y,z)) over all triples, clamped to >= 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasitriangleReport {
    pub value: f64,
    /// Extremal triple (x, y, z) by index, lexicographically first.
    pub witness: (usize, usize, usize),
}

/// Smallest quasitriangle constant of the distance table, by exhaustive scan
/// over ordered triples. O(n^3); parallel over the first coordinate.
pub fn quasitriangle_constant(space: &Space) -> QuasitriangleReport {
    quasitriangle_of_table(space.dist_table(), space.n())
}

/// Table-level variant of [`quasitriangle_constant`] for distance tables
/// that have not been wrapped in a [`Space`].
pub fn quasitriangle_of_table(dist: &[f64], n: usize) -> QuasitriangleReport {
    assert_eq!(dist.len(), n * n);
    let best = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut best = (1.0f64, (x.min(1), 0, x.min(1)));
            for z in 0..n {
                if z == x {
                    continue;
                }
                let dxz = dist[x * n + z];
                for y in 0..n {
                    if y == x || y == z {
                        continue;
                    }
                    let denom = dist[x * n + y] + dist[y * n + z];
                    let ratio = dxz / denom;
                    if ratio > best.0 {
                        best = (ratio, (x, y, z));
                    }
                }
            }
            best
        })
        .reduce(
            || (1.0f64, (0, 0, 0)),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1 && b.0 > 1.0) {
                    b
                } else {
                    a
                }
            },
        );
    QuasitriangleReport {
        value: best.0,
        witness: best.1,
    }
}

/// Validate a raw distance table: square, symmetric, zero diagonal,
/// positive finite off-diagonal entries.
pub fn validate_dist_table(dist: &[f64], n: usize) -> Result<()> {
    if dist.len() != n * n {
        return Err(Error::pre(
            "validate_dist_table",
            format!("table has {} entries, expected {}", dist.len(), n * n),
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let d = dist[i * n + j];
            if !d.is_finite() || d < 0.0 {
                return Err(Error::pre("validate_dist_table", format!("dist({i},{j}) = {d}")));
            }
            if (i == j) != (d == 0.0) {
                return Err(Error::pre(
                    "validate_dist_table",
                    format!("dist({i},{j}) = {d} breaks positivity"),
                ));
            }
            if d != dist[j * n + i] {
                return Err(Error::pre("validate_dist_table", format!("asymmetry at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// One violation of the lambda-dilation inequality, if any.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DilationCheck {
    pub lambda: f64,
    pub worst_ratio: f64,
    pub bound: f64,
    pub ok: bool,
    pub witness: (usize, f64),
}

/// Result of the doubling scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoublingReport {
    pub value: f64,
    /// (center, radius) attaining the supremum.
    pub witness: (usize, f64),
    /// mu(B(x, lambda r)) <= value^(1 + log2 lambda) mu(B(x, r)) spot checks.
    pub dilation: Vec<DilationCheck>,
}

/// Doubling constant of the measure given by `measure` (one value per atom,
/// strictly positive) over open balls of the space:
/// sup over centers x and radii r of mu(B(x,2r)) / mu(B(x,r)).
///
/// For fixed x the ratio is piecewise constant in r with pieces delimited by
/// the distances from x and their halves, and every piece attains its value
/// at its right endpoint, so scanning r over {d, d/2 : d a distance from x}
/// yields the exact supremum over all r > 0.
pub fn doubling_constant(space: &Space, measure: &[f64]) -> DoublingReport {
    assert_eq!(measure.len(), space.n());
    let n = space.n();
    // Per-center prefix sums of the custom measure along the distance order.
    let prefix: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut pm = Vec::with_capacity(n + 1);
            pm.push(0.0);
            let mut acc = 0.0;
            for &a in space.order(x) {
                acc += measure[a as usize];
                pm.push(acc);
            }
            pm
        })
        .collect();
    let mu = |x: usize, r: f64| -> f64 {
        let sd = space.sorted_dists(x);
        prefix[x][sd.partition_point(|&d| d < r)]
    };

    let mut best = (1.0f64, (0usize, space.min_positive_dist().min(1.0)));
    for x in 0..n {
        let sd = space.sorted_dists(x);
        for k in 1..n {
            for r in [sd[k], sd[k] / 2.0] {
                if r <= 0.0 {
                    continue;
                }
                let denom = mu(x, r);
                let ratio = mu(x, 2.0 * r) / denom;
                if ratio > best.0 {
                    best = (ratio, (x, r));
                }
            }
        }
    }

    // Spot-check the general dilation inequality at a few lambda values.
    let a1 = best.0;
    let mut dilation = Vec::new();
    for lambda in [2.0f64, 3.0, 4.0, 8.0] {
        let bound = a1.powf(1.0 + lambda.log2());
        let mut worst = (0.0f64, (0usize, 0.0f64));
        for x in 0..n {
            let sd = space.sorted_dists(x);
            for k in 1..n {
                for r in [sd[k], sd[k] / 2.0, sd[k] / lambda] {
                    if r <= 0.0 {
                        continue;
                    }
                    let ratio = mu(x, lambda * r) / mu(x, r);
                    if ratio > worst.0 {
                        worst = (ratio, (x, r));
                    }
                }
            }
        }
        dilation.push(DilationCheck {
            lambda,
            worst_ratio: worst.0,
            bound,
            ok: worst.0 <= bound * (1.0 + REL_TOL),
            witness: worst.1,
        });
    }

    DoublingReport {
        value: best.0,
        witness: best.1,
        dilation,
    }
}

/// Regularity misfit: the smallest kappa with
/// kappa^-1 r^alpha <= mu(B(x,r)) <= kappa r^alpha
/// over all centers and all critical radii r below the diameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    pub alpha: f64,
    pub kappa: f64,
    /// (center, radius) where the upper bound mu <= kappa r^alpha is tight.
    pub witness_upper: (usize, f64),
    /// (center, radius) where the lower bound is tight.
    pub witness_lower: (usize, f64),
}

/// Scan the two-sided volume bound at exponent `alpha` and return the best
/// achievable kappa. Always finite on a finite space; the caller judges
/// whether it is small enough to call the space alpha-regular.
pub fn check_alpha_regular(space: &Space, alpha: f64) -> Result<RegularityReport> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::pre("check_alpha_regular", format!("alpha = {alpha} out of range")));
    }
    if space.n() == 1 {
        return Ok(RegularityReport {
            alpha,
            kappa: 1.0,
            witness_upper: (0, 0.0),
            witness_lower: (0, 0.0),
        });
    }
    let radii: Vec<f64> = space
        .critical_radii()
        .into_iter()
        .filter(|&r| r < space.diam())
        .collect();
    let mut kappa = 1.0f64;
    let mut wu = (0usize, radii[0]);
    let mut wl = (0usize, radii[0]);
    for x in 0..space.n() {
        for &r in &radii {
            let v = space.mu_ball(x, r, false);
            let ra = r.powf(alpha);
            let up = v / ra;
            let lo = ra / v;
            if up > kappa {
                kappa = up;
                wu = (x, r);
            }
            if lo > kappa {
                kappa = lo;
                wl = (x, r);
            }
        }
    }
    Ok(RegularityReport {
        alpha,
        kappa,
        witness_upper: wu,
        witness_lower: wl,
    })
}

/// Annulus nonemptiness result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnulusReport {
    pub tau: f64,
    pub holds: bool,
    /// (center, radius) of the first empty annulus with nonempty complement.
    pub witness: Option<(usize, f64)>,
}

/// Check that closed annuli B(x,r) minus B(x, tau r) are nonempty whenever
/// the complement of B(x,r) is nonempty, with r ranging over the distinct
/// pairwise distances of the space. Radii below the smallest distance
/// realized from a center make the annulus there empty, so the scan has
/// content exactly when some center sees a gap: a distance realized
/// elsewhere in the space but nothing in (tau r, r] locally.
pub fn check_tau_annuli(space: &Space, tau: f64) -> Result<AnnulusReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::pre("check_tau_annuli", format!("tau = {tau} not in (0,1)")));
    }
    let radii = space.distinct_distances();
    for x in 0..space.n() {
        let sd = space.sorted_dists(x);
        let dmax = sd[space.n() - 1];
        for &r in &radii {
            if r >= dmax {
                // Complement of the closed ball is empty: nothing to check.
                continue;
            }
            // Annulus nonempty iff some distance from x lies in (tau r, r].
            let lo = sd.partition_point(|&d| d <= tau * r);
            let hi = sd.partition_point(|&d| d <= r);
            if hi <= lo {
                return Ok(AnnulusReport {
                    tau,
                    holds: false,
                    witness: Some((x, r)),
                });
            }
        }
    }
    Ok(AnnulusReport {
        tau,
        holds: true,
        witness: None,
    })
}

/// Two-sided volume bound certified for every radius in [r_lo, r_hi), not
/// just a finite sample. kappa is the exact supremum of the worse of
/// mu(B(x,r))/r^alpha and r^alpha/mu(B(x,r)) over closed balls on the range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeRegularityReport {
    pub alpha: f64,
    pub kappa: f64,
    pub r_lo: f64,
    pub r_hi: f64,
}

/// Exact regularity constant over the whole radius interval
/// [min_positive_dist, diam). Ball measure is a step function of the
/// radius, so per piece the upper ratio peaks at the left endpoint
/// (closed-ball value) and the lower ratio approaches the right endpoint
/// (open-ball value there); taking both finite families of candidates gives
/// the supremum over the continuum.
pub fn alpha_regularity_over_range(space: &Space, alpha: f64) -> Result<RangeRegularityReport> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::pre(
            "alpha_regularity_over_range",
            format!("alpha = {alpha} out of range"),
        ));
    }
    let r_lo = space.min_positive_dist();
    let r_hi = space.diam();
    let mut kappa = 1.0f64;
    if space.n() > 1 && r_lo < r_hi {
        for x in 0..space.n() {
            let sd = space.sorted_dists(x);
            kappa = kappa.max(space.mu_ball(x, r_lo, true) / r_lo.powf(alpha));
            for k in 1..space.n() {
                let d = sd[k];
                if k > 0 && d == sd[k - 1] {
                    continue;
                }
                if d > r_lo && d < r_hi {
                    kappa = kappa.max(space.mu_ball(x, d, true) / d.powf(alpha));
                }
                if d > r_lo && d <= r_hi {
                    kappa = kappa.max(d.powf(alpha) / space.mu_ball(x, d, false));
                }
            }
            kappa = kappa.max(r_hi.powf(alpha) / space.mu_ball(x, r_hi, false));
        }
    }
    Ok(RangeRegularityReport {
        alpha,
        kappa,
        r_lo,
        r_hi,
    })
}

/// Outcome of deducing annulus nonemptiness from range regularity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnuliFromRegularity {
    pub alpha: f64,
    pub kappa: f64,
    pub tau_threshold: f64,
    pub applicable: bool,
    pub pairs_checked: usize,
    pub holds: bool,
    pub witness: Option<(usize, f64)>,
}

/// If the space is alpha-regular with constant kappa on [r_lo, r_hi), then
/// for tau < kappa^(-2/alpha) every annulus B(x,r) minus B(x,tau r) with
/// tau r >= r_lo and nonempty complement has measure at least
/// r^alpha (kappa^-1 - kappa tau^alpha) > 0, hence is nonempty. This checks
/// that deduction pair by pair over the qualifying radii.
pub fn regularity_implies_annuli(space: &Space, alpha: f64, tau: f64) -> Result<AnnuliFromRegularity> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::pre("regularity_implies_annuli", format!("tau = {tau} not in (0,1)")));
    }
    let reg = alpha_regularity_over_range(space, alpha)?;
    let tau_threshold = reg.kappa.powf(-2.0 / alpha);
    let applicable = tau < tau_threshold;
    let mut pairs = 0usize;
    let mut holds = true;
    let mut witness = None;
    if applicable {
        let radii = space.distinct_distances();
        'outer: for x in 0..space.n() {
            let sd = space.sorted_dists(x);
            let dmax = sd[space.n() - 1];
            for &r in &radii {
                if r >= dmax || r >= reg.r_hi || tau * r < reg.r_lo {
                    continue;
                }
                pairs += 1;
                let lo = sd.partition_point(|&d| d <= tau * r);
                let hi = sd.partition_point(|&d| d <= r);
                if hi <= lo {
                    holds = false;
                    witness = Some((x, r));
                    break 'outer;
                }
            }
        }
    }
    Ok(AnnuliFromRegularity {
        alpha,
        kappa: reg.kappa,
        tau_threshold,
        applicable,
        pairs_checked: pairs,
        holds,
        witness,
    })
}

/// Largest tau from a fixed grid for which the annulus property holds.
pub fn best_tau(space: &Space) -> Option<f64> {
    for k in (1..=19).rev() {
        let tau = k as f64 * 0.05;
        if let Ok(rep) = check_tau_annuli(space, tau) {
            if rep.holds {
                return Some(tau);
            }
        }
    }
    None
}

/// Density of a measure `nu` with respect to the atom masses, together with
/// the verification that summing the density against the masses reproduces
/// nu on subsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityReport {
    pub derivative: Vec<f64>,
    pub subsets_checked: usize,
    pub max_abs_dev: f64,
    pub exact: bool,
}

/// Ratio nu[x] / mass[x] per atom: the density of nu with respect to the
/// reference masses, equivalently the small-radius limit of ball ratios
/// (at any radius below the minimum separation both balls are the atom).
///
/// Verifies nu(S) = sum over S of derivative * mass on every subset when
/// n <= 12, otherwise on 50 seeded random subsets plus the full set.
pub fn radon_nikodym(space: &Space, nu: &[f64]) -> Result<DensityReport> {
    if nu.len() != space.n() {
        return Err(Error::pre(
            "radon_nikodym",
            format!("nu has {} entries, expected {}", nu.len(), space.n()),
        ));
    }
    if let Some((i, &v)) = nu.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(Error::pre(
            "radon_nikodym",
            format!("nu[{}] = {} is not finite and nonnegative", space.id(i), v),
        ));
    }
    let n = space.n();
    let derivative: Vec<f64> = (0..n).map(|i| nu[i] / space.mass(i)).collect();

    let check = |set: &[usize]| -> f64 {
        let lhs = pairwise_sum_by(0, set.len(), &|i| nu[set[i]]);
        let rhs = pairwise_sum_by(0, set.len(), &|i| derivative[set[i]] * space.mass(set[i]));
        (lhs - rhs).abs()
    };

    let mut max_dev = 0.0f64;
    let mut count = 0usize;
    if n <= 12 {
        for bits in 0..(1u32 << n) {
            let set: Vec<usize> = (0..n).filter(|&i| bits >> i & 1 == 1).collect();
            max_dev = max_dev.max(check(&set));
            count += 1;
        }
    } else {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xD1CE);
        for _ in 0..50 {
            let set: Vec<usize> = (0..n).filter(|_| rng.gen::<bool>()).collect();
            max_dev = max_dev.max(check(&set));
            count += 1;
        }
        let all: Vec<usize> = (0..n).collect();
        max_dev = max_dev.max(check(&all));
        count += 1;
    }
    Ok(DensityReport {
        derivative,
        subsets_checked: count,
        max_abs_dev: max_dev,
        exact: max_dev == 0.0,
    })
}

/// One-shot structural diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub n: usize,
    pub a0: f64,
    pub a0_witness: (usize, usize, usize),
    pub a1: f64,
    pub a1_witness: (usize, f64),
    pub min_positive_dist: f64,
    pub max_dist: f64,
    /// (alpha, kappa) minimizing kappa over a fixed alpha grid.
    pub alpha_regular: Option<(f64, f64)>,
    /// Largest tau on a fixed grid with nonempty annuli.
    pub tau_annuli: Option<f64>,
    pub assumed_poincare: Option<PoincareAssumption>,
}

/// Compute the full structure report: quasitriangle and doubling constants
/// with witnesses, the best-fitting regularity exponent on a coarse grid,
/// and the largest workable annulus aspect.
pub fn structure_report(space: &Space) -> StructureReport {
    let a0 = quasitriangle_constant(space);
    let a1 = doubling_constant(space, space.masses());
    let mut best_alpha: Option<(f64, f64)> = None;
    for k in 1..=8 {
        let alpha = k as f64 * 0.5;
        if let Ok(rep) = check_alpha_regular(space, alpha) {
            if best_alpha.map_or(true, |(_, kap)| rep.kappa < kap) {
                best_alpha = Some((alpha, rep.kappa));
            }
        }
    }
    StructureReport {
        n: space.n(),
        a0: a0.value,
        a0_witness: a0.witness,
        a1: a1.value,
        a1_witness: a1.witness,
        min_positive_dist: space.min_positive_dist(),
        max_dist: space.diam(),
        alpha_regular: best_alpha,
        tau_annuli: best_tau(space),
        assumed_poincare: space.assumed_poincare(),
    }
}
