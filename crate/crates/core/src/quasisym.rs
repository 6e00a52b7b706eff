//! Quasisymmetric bijections between finite spaces sharing one point set:
//! distortion envelopes, pullback measures and their doubling constants,
//! distortion gaps, generalized Jacobians at all scales, comparability of
//! the metric and quasimetric Jacobians, and the end-to-end chain from a
//! quasisymmetric map to `log J` in BMO.
//!
//! A map is rendered as a permutation of atom indices together with a
//! source and a target distance table over the same atoms; a self-map
//! passes the same space twice. Distortion is always measured against the
//! source table on preimages and the target table on images.

use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dyadic::AdjacentSystems;
use crate::metrization::MetrizationResult;
use crate::num::{pairwise_sum_by, EDGE_TOL, REL_TOL};
use crate::space::{check_tau_annuli, doubling_constant, Space};
use crate::weights::{
    bmo_metric_equivalence, log_bmo_pipeline, rh_constant, BmoEquivalenceReport, Collection,
    PipelineReport, Weight,
};
use crate::{Error, Result};

/// A bijection of atom indices with its inverse precomputed.
#[derive(Debug, Clone, Serialize)]
pub struct PointBijection {
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl PointBijection {
    pub fn new(forward: Vec<u32>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![u32::MAX; n];
        for (x, &y) in forward.iter().enumerate() {
            if y as usize >= n {
                return Err(Error::pre(
                    "PointBijection::new",
                    format!("image {y} of {x} out of range"),
                ));
            }
            if inverse[y as usize] != u32::MAX {
                return Err(Error::pre(
                    "PointBijection::new",
                    format!("{y} has two preimages"),
                ));
            }
            inverse[y as usize] = x as u32;
        }
        Ok(PointBijection { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        let forward: Vec<u32> = (0..n as u32).collect();
        PointBijection {
            inverse: forward.clone(),
            forward,
        }
    }

    /// The inverse bijection as a map in its own right.
    pub fn inverted(&self) -> Self {
        PointBijection {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.forward.len()
    }

    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    pub fn apply(&self, x: usize) -> usize {
        self.forward[x] as usize
    }

    pub fn apply_inv(&self, y: usize) -> usize {
        self.inverse[y] as usize
    }
}

/// An increasing distortion gauge. `Power` is c * t^gamma; `Table` is
/// linear interpolation through increasing knots, optionally extended
/// flat beyond both ends; `Transferred` is the gauge
/// zeta(t) = C^2 * eta((C^2 t)^(1/eps))^eps obtained when a map that is
/// eta-quasisymmetric for a quasimetric is read against a comparable
/// metric.
#[derive(Debug, Clone, Serialize)]
pub enum Eta {
    Power {
        c: f64,
        gamma: f64,
    },
    Table {
        thetas: Vec<f64>,
        values: Vec<f64>,
        extend_flat: bool,
    },
    Transferred {
        inner: Box<Eta>,
        c_eps: f64,
        epsilon: f64,
    },
}

impl Eta {
    pub fn power(c: f64, gamma: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::pre(
                "Eta::power",
                format!("need c > 0 and gamma > 0, got c = {c}, gamma = {gamma}"),
            ));
        }
        Ok(Eta::Power { c, gamma })
    }

    pub fn table(thetas: Vec<f64>, values: Vec<f64>, extend_flat: bool) -> Result<Self> {
        if thetas.is_empty() || thetas.len() != values.len() {
            return Err(Error::pre("Eta::table", "empty or mismatched knot lists"));
        }
        for w in thetas.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::pre("Eta::table", "thetas must be strictly increasing"));
            }
        }
        for w in values.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(Error::pre("Eta::table", "values must be nondecreasing"));
            }
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || thetas[0] < 0.0 {
            return Err(Error::pre("Eta::table", "knots must be finite and nonnegative"));
        }
        Ok(Eta::Table {
            thetas,
            values,
            extend_flat,
        })
    }

    /// The measured envelope of a profile as a total gauge (flat beyond
    /// its sampled range). Linear interpolation between breakpoints lies
    /// at or above the step envelope, so this is a valid gauge for the
    /// profiled map.
    pub fn from_profile(profile: &DistortionProfile) -> Result<Self> {
        let pts = &profile.breakpoints;
        if pts.is_empty() {
            return Err(Error::pre("Eta::from_profile", "empty profile"));
        }
        Eta::table(
            pts.iter().map(|p| p.theta).collect(),
            pts.iter().map(|p| p.ratio).collect(),
            true,
        )
    }

    pub fn eval(&self, t: f64) -> Option<f64> {
        if !(t >= 0.0) {
            return None;
        }
        match self {
            Eta::Power { c, gamma } => Some(c * t.powf(*gamma)),
            Eta::Table {
                thetas,
                values,
                extend_flat,
            } => {
                let last = thetas.len() - 1;
                if t < thetas[0] {
                    return extend_flat.then_some(values[0]);
                }
                if t >= thetas[last] {
                    if t == thetas[last] || *extend_flat {
                        return Some(values[last]);
                    }
                    return None;
                }
                let i = thetas.partition_point(|&th| th <= t) - 1;
                let (t0, t1) = (thetas[i], thetas[i + 1]);
                let (v0, v1) = (values[i], values[i + 1]);
                Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
            }
            Eta::Transferred {
                inner,
                c_eps,
                epsilon,
            } => {
                let c2 = c_eps * c_eps;
                inner
                    .eval((c2 * t).powf(1.0 / epsilon))
                    .map(|v| c2 * v.powf(*epsilon))
            }
        }
    }

    /// Largest argument at which the gauge is at most `bound`, within the
    /// gauge's domain; None when the gauge starts above `bound`.
    pub fn theta_where_le(&self, bound: f64) -> Option<f64> {
        match self {
            Eta::Power { c, gamma } => {
                let t = (bound / c).powf(1.0 / gamma);
                (t > 0.0).then_some(t)
            }
            Eta::Table { thetas, values, .. } => {
                if values[0] > bound {
                    return None;
                }
                let last = values.len() - 1;
                if values[last] <= bound {
                    return Some(thetas[last]);
                }
                let i = values.partition_point(|&v| v <= bound) - 1;
                let (t0, t1) = (thetas[i], thetas[i + 1]);
                let (v0, v1) = (values[i], values[i + 1]);
                Some(t0 + (t1 - t0) * (bound - v0) / (v1 - v0))
            }
            Eta::Transferred {
                inner,
                c_eps,
                epsilon,
            } => {
                let c2 = c_eps * c_eps;
                let u = inner.theta_where_le((bound / c2).powf(1.0 / epsilon))?;
                Some(u.powf(*epsilon) / c2)
            }
        }
    }
}

/// The gauge a quasisymmetric map obeys after swapping the quasimetric
/// for a comparable metric: zeta(t) = C^2 * eta((C^2 t)^(1/eps))^eps.
/// With C = 1 and eps = 1 the formula collapses to eta itself.
pub fn qs_transfer(eta: Eta, c_eps: f64, epsilon: f64) -> Result<Eta> {
    if !(c_eps >= 1.0 && c_eps.is_finite()) {
        return Err(Error::pre("qs_transfer", format!("C = {c_eps} must be >= 1")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::pre(
            "qs_transfer",
            format!("epsilon = {epsilon} must be in (0, 1]"),
        ));
    }
    Ok(Eta::Transferred {
        inner: Box::new(eta),
        c_eps,
        epsilon,
    })
}

/// One breakpoint of a distortion envelope: the smallest sampled quotient
/// at which the running maximum ratio reaches `ratio`, with the ordered
/// triple (x, a, b) attaining it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnvelopePoint {
    pub theta: f64,
    pub ratio: f64,
    pub witness: (u32, u32, u32),
}

/// Exact upper envelope of image ratio against preimage quotient over all
/// ordered triples. Between breakpoints the envelope is flat, so the
/// breakpoints determine it completely; `samples` records how many
/// triples were scanned.
#[derive(Debug, Clone, Serialize)]
pub struct DistortionProfile {
    breakpoints: Vec<EnvelopePoint>,
    pub samples: usize,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl DistortionProfile {
    pub fn breakpoints(&self) -> &[EnvelopePoint] {
        &self.breakpoints
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Envelope value: the largest ratio among samples with quotient at
    /// most `theta`; None below the smallest sampled quotient.
    pub fn eta_hat(&self, theta: f64) -> Option<f64> {
        let i = self.breakpoints.partition_point(|p| p.theta <= theta);
        (i > 0).then(|| self.breakpoints[i - 1].ratio)
    }

    pub fn max_ratio(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |p| p.ratio)
    }

    /// Largest breakpoint quotient at which the envelope stays strictly
    /// below `s` (a conservative generalized inverse).
    fn inverse_below(&self, s: f64) -> Option<f64> {
        let j = self.breakpoints.partition_point(|p| p.ratio < s);
        (j > 0).then(|| self.breakpoints[j - 1].theta)
    }
}

fn compress_envelope(mut pairs: Vec<(f64, f64, (u32, u32, u32))>) -> Vec<EnvelopePoint> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<EnvelopePoint> = Vec::new();
    for (theta, ratio, witness) in pairs {
        match out.last_mut() {
            Some(last) if ratio <= last.ratio => {}
            Some(last) if last.theta == theta => {
                last.ratio = ratio;
                last.witness = witness;
            }
            _ => out.push(EnvelopePoint {
                theta,
                ratio,
                witness,
            }),
        }
    }
    out
}

/// Scan all n(n-1)(n-2) ordered triples (x, a, b): the quotient is
/// src(x,a)/src(x,b), the ratio tgt(f(x),f(a))/tgt(f(x),f(b)). The scan
/// parallelizes over x; the envelope is a max-reduction, so the result is
/// independent of the schedule. Fewer than three atoms yield an empty
/// profile.
pub fn eta_profile(bij: &PointBijection, src: &Space, tgt: &Space) -> Result<DistortionProfile> {
    let n = src.n();
    if bij.n() != n || tgt.n() != n {
        return Err(Error::pre("eta_profile", "map and spaces must share one point set"));
    }
    if n < 3 {
        return Ok(DistortionProfile {
            breakpoints: Vec::new(),
            samples: 0,
            theta_min: f64::NAN,
            theta_max: f64::NAN,
        });
    }
    let per_x: Vec<Vec<(f64, f64, (u32, u32, u32))>> = (0..n)
        .into_par_iter()
        .map(|x| {
            let fx = bij.apply(x);
            let mut local = Vec::with_capacity((n - 1) * (n - 2));
            for a in 0..n {
                if a == x {
                    continue;
                }
                let fa = bij.apply(a);
                for b in 0..n {
                    if b == x || b == a {
                        continue;
                    }
                    let fb = bij.apply(b);
                    let theta = src.dist(x, a) / src.dist(x, b);
                    let ratio = tgt.dist(fx, fa) / tgt.dist(fx, fb);
                    local.push((theta, ratio, (x as u32, a as u32, b as u32)));
                }
            }
            compress_envelope(local)
                .into_iter()
                .map(|p| (p.theta, p.ratio, p.witness))
                .collect()
        })
        .collect();
    let merged: Vec<(f64, f64, (u32, u32, u32))> = per_x.into_iter().flatten().collect();
    let mut theta_min = f64::INFINITY;
    let mut theta_max = f64::NEG_INFINITY;
    for &(t, _, _) in &merged {
        theta_min = theta_min.min(t);
        theta_max = theta_max.max(t);
    }
    Ok(DistortionProfile {
        breakpoints: compress_envelope(merged),
        samples: n * (n - 1) * (n - 2),
        theta_min,
        theta_max,
    })
}

/// Result of checking a profile against a gauge.
#[derive(Debug, Clone, Serialize)]
pub struct QsCheck {
    pub ok: bool,
    /// Breakpoint with the largest ratio/gauge margin.
    pub worst_theta: f64,
    pub worst_ratio: f64,
    pub worst_bound: f64,
    pub witness: (u32, u32, u32),
}

/// A map is eta-quasisymmetric exactly when every sampled ratio is at
/// most eta(quotient); checking the envelope at its breakpoints is
/// equivalent because both the envelope and eta are nondecreasing.
pub fn is_quasisymmetric(profile: &DistortionProfile, eta: &Eta) -> Result<QsCheck> {
    if profile.is_empty() {
        return Ok(QsCheck {
            ok: true,
            worst_theta: f64::NAN,
            worst_ratio: 0.0,
            worst_bound: f64::INFINITY,
            witness: (0, 0, 0),
        });
    }
    let mut worst: Option<(f64, &EnvelopePoint, f64)> = None;
    for p in profile.breakpoints() {
        let bound = eta.eval(p.theta).ok_or_else(|| {
            Error::pre(
                "is_quasisymmetric",
                format!("gauge undefined at sampled quotient {}", p.theta),
            )
        })?;
        let margin = p.ratio / bound;
        if worst.as_ref().map_or(true, |(m, _, _)| margin > *m) {
            worst = Some((margin, p, bound));
        }
    }
    let (margin, p, bound) = worst.unwrap();
    Ok(QsCheck {
        ok: margin <= 1.0 + REL_TOL,
        worst_theta: p.theta,
        worst_ratio: p.ratio,
        worst_bound: bound,
        witness: p.witness,
    })
}

/// Pullback measure: atom x carries the target mass of its image, so the
/// measure of E is the target measure of f(E). Total mass is preserved
/// because f is a bijection.
pub fn pullback_measure(bij: &PointBijection, tgt: &Space) -> Vec<f64> {
    (0..bij.n()).map(|x| tgt.mass(bij.apply(x))).collect()
}

/// The envelope duality for inverse maps: every inverse-sample ratio R at
/// quotient t satisfies R <= 1/theta* for any sampled quotient theta*
/// with forward envelope strictly below 1/t (swap the roles of a and b in
/// the defining triple). Checked at every inverse breakpoint where the
/// forward envelope admits such a quotient.
#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub checked: usize,
    pub skipped: usize,
    pub ok: bool,
    pub witness: Option<String>,
}

pub fn eta_inverse_duality(
    forward: &DistortionProfile,
    inverse: &DistortionProfile,
) -> DualityReport {
    let mut checked = 0;
    let mut skipped = 0;
    let mut ok = true;
    let mut witness = None;
    for p in inverse.breakpoints() {
        match forward.inverse_below(1.0 / p.theta) {
            Some(theta_star) => {
                checked += 1;
                if p.ratio > (1.0 / theta_star) * (1.0 + REL_TOL) {
                    ok = false;
                    witness.get_or_insert(format!(
                        "inverse ratio {} at quotient {} exceeds 1/{theta_star}",
                        p.ratio, p.theta
                    ));
                }
            }
            None => skipped += 1,
        }
    }
    DualityReport {
        checked,
        skipped,
        ok,
        witness,
    }
}

/// Doubling constant of the pullback measure against the bound
/// A_1^(1 + log2(eta(2k^3) eta(k^2))) with theta the largest argument
/// where the gauge stays at most 1/3 and k = ceil(max(1/theta, 1/tau)).
#[derive(Debug, Clone, Serialize)]
pub struct PullbackDoublingReport {
    pub measured: f64,
    pub bound: Option<f64>,
    pub applicable: bool,
    pub ok: bool,
    pub theta: Option<f64>,
    pub k: Option<f64>,
    pub a1: f64,
    pub tau: f64,
}

pub fn pullback_doubling_check(
    bij: &PointBijection,
    src: &Space,
    tgt: &Space,
    eta: &Eta,
    tau: f64,
) -> Result<PullbackDoublingReport> {
    let profile = eta_profile(bij, src, tgt)?;
    let qs = is_quasisymmetric(&profile, eta)?;
    if !qs.ok {
        return Err(Error::pre(
            "pullback_doubling_check",
            format!(
                "map is not quasisymmetric for the given gauge: ratio {} > {} at quotient {}",
                qs.worst_ratio, qs.worst_bound, qs.worst_theta
            ),
        ));
    }
    let annuli = check_tau_annuli(src, tau)?;
    if !annuli.holds {
        return Err(Error::pre(
            "pullback_doubling_check",
            format!("source space lacks nonempty {tau}-annuli: {:?}", annuli.witness),
        ));
    }
    let mu_f = pullback_measure(bij, tgt);
    let measured = doubling_constant(src, &mu_f).value;
    let a1 = doubling_constant(src, src.masses()).value;

    let theta = eta.theta_where_le(1.0 / 3.0);
    let (bound, k) = match theta {
        Some(th) if th > 0.0 => {
            let k = (1.0 / th).max(1.0 / tau).ceil();
            let e1 = eta.eval(2.0 * k * k * k);
            let e2 = eta.eval(k * k);
            match (e1, e2) {
                (Some(e1), Some(e2)) => (Some(a1.powf(1.0 + (e1 * e2).log2())), Some(k)),
                _ => (None, Some(k)),
            }
        }
        _ => (None, None),
    };
    let applicable = bound.is_some();
    Ok(PullbackDoublingReport {
        measured,
        bound,
        applicable,
        ok: bound.map_or(true, |b| measured <= b * (1.0 + REL_TOL)),
        theta,
        k,
        a1,
        tau,
    })
}

/// Distortion gap around one ball: s is the outradius of the image of
/// B(x, r), t the distance from f(x) to the complement of the image of
/// B(x, kr) (None when that complement is empty, making the separation
/// vacuous). Both balls are open, matching the gap argument.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub s: f64,
    pub t: Option<f64>,
    pub pass: bool,
}

pub fn distortion_gap(
    bij: &PointBijection,
    src: &Space,
    tgt: &Space,
    profile: &DistortionProfile,
    center: usize,
    r: f64,
    k: f64,
    theta: f64,
) -> Result<GapReport> {
    if center >= src.n() || !(r > 0.0) {
        return Err(Error::pre("distortion_gap", "need a valid center and r > 0"));
    }
    let env = profile.eta_hat(theta).unwrap_or(0.0);
    if !(env <= 1.0 / 3.0 + EDGE_TOL) {
        return Err(Error::pre(
            "distortion_gap",
            format!("envelope at {theta} is {env}, above 1/3"),
        ));
    }
    if !(k >= 1.0 / theta - EDGE_TOL) {
        return Err(Error::pre(
            "distortion_gap",
            format!("k = {k} is below 1/theta = {}", 1.0 / theta),
        ));
    }
    let fx = bij.apply(center);
    let mut s = 0.0f64;
    let mut t: Option<f64> = None;
    for y in 0..src.n() {
        let d = src.dist(center, y);
        let image = tgt.dist(fx, bij.apply(y));
        if d < r {
            s = s.max(image);
        }
        if d >= k * r {
            t = Some(t.map_or(image, |cur: f64| cur.min(image)));
        }
    }
    Ok(GapReport {
        s,
        t,
        pass: t.map_or(true, |t| s < t),
    })
}

/// Which ball family a Jacobian is taken over; the finest-scale values do
/// not depend on it, only the multiscale table does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JacobianKind {
    Metric,
    Quasimetric,
}

/// Generalized Jacobian: at each atom the small-radius limit of
/// pullback-to-reference ball-measure ratios, realized exactly below the
/// minimum separation where closed balls are singletons; `multiscale`
/// tabulates the same ratio at every distinct distance for inspection.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianField {
    pub kind: JacobianKind,
    pub values: Vec<f64>,
    pub scales: Vec<f64>,
    pub multiscale: Vec<Vec<f64>>,
    pub integral_identity_ok: bool,
    pub integral_max_rel_dev: f64,
}

pub fn generalized_jacobian(
    bij: &PointBijection,
    src: &Space,
    tgt: &Space,
    kind: JacobianKind,
) -> Result<JacobianField> {
    let n = src.n();
    if bij.n() != n || tgt.n() != n {
        return Err(Error::pre(
            "generalized_jacobian",
            "map and spaces must share one point set",
        ));
    }
    let mu_f = pullback_measure(bij, tgt);
    let values: Vec<f64> = (0..n).map(|x| mu_f[x] / src.mass(x)).collect();

    let mut scales = vec![src.min_positive_dist() / 2.0];
    scales.extend(src.distinct_distances());
    let multiscale: Vec<Vec<f64>> = scales
        .iter()
        .map(|&r| {
            (0..n)
                .map(|x| {
                    let len = src.ball_len(x, r, true);
                    let num = pairwise_sum_by(0, len, &|i| mu_f[src.order(x)[i] as usize]);
                    num / src.mu_ball(x, r, true)
                })
                .collect()
        })
        .collect();

    // mu_f(S) = sum over S of J * mass, exhaustively for small spaces and
    // on seeded random subsets plus the full set otherwise.
    let mut max_rel_dev = 0.0f64;
    let mut check = |subset: &[usize]| {
        let lhs = pairwise_sum_by(0, subset.len(), &|i| mu_f[subset[i]]);
        let rhs = pairwise_sum_by(0, subset.len(), &|i| {
            values[subset[i]] * src.mass(subset[i])
        });
        if lhs > 0.0 {
            max_rel_dev = max_rel_dev.max((lhs - rhs).abs() / lhs);
        }
    };
    if n <= 12 {
        for mask in 1u64..(1u64 << n) {
            let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            check(&subset);
        }
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9A_CB_01);
        for _ in 0..10_000 {
            let subset: Vec<usize> = (0..n).filter(|_| rng.gen::<bool>()).collect();
            check(&subset);
        }
        check(&(0..n).collect::<Vec<_>>());
    }

    Ok(JacobianField {
        kind,
        values,
        scales,
        multiscale,
        integral_identity_ok: max_rel_dev <= REL_TOL,
        integral_max_rel_dev: max_rel_dev,
    })
}

/// One matched scale of the metric/quasimetric Jacobian comparison: the
/// quasimetric radius t pairs with the metric radius t^eps / C per the
/// ball sandwich between the two structures.
#[derive(Debug, Clone, Serialize)]
pub struct ComparabilityRow {
    pub rho_radius: f64,
    pub metric_radius: f64,
    pub max_hat_over_tilde: f64,
    pub max_tilde_over_hat: f64,
    pub ok_stated: bool,
    pub ok_reference: bool,
}

/// Comparison of the generalized Jacobians over metric and quasimetric
/// balls. `stated_*` are the constants exactly as the source computation
/// displays them (powers of the quasimetric-side doubling constants);
/// `reference_*` are factors provable scale-by-scale from the metric-side
/// doubling constants and the ball sandwich, recorded because the stated
/// display mixes dilation steps whose transcription is ambiguous. At the
/// finest scale both Jacobians reduce to the atom mass ratio, so the
/// ratio there is exactly 1.
#[derive(Debug, Clone, Serialize)]
pub struct ComparabilityReport {
    pub finest_max_ratio: f64,
    pub rows: Vec<ComparabilityRow>,
    pub stated_hat_over_tilde: f64,
    pub stated_tilde_over_hat: f64,
    pub reference_hat_over_tilde: f64,
    pub reference_tilde_over_hat: f64,
    pub all_stated_ok: bool,
    pub all_reference_ok: bool,
}

pub fn jacobian_comparability(
    bij: &PointBijection,
    src: &Space,
    tgt: &Space,
    metriz: &MetrizationResult,
) -> Result<ComparabilityReport> {
    let n = src.n();
    let hat = src.with_dist(metriz.d_eps.clone())?;
    let mu_f = pullback_measure(bij, tgt);
    let eps = metriz.epsilon;
    let c_eps = metriz.c_eps;

    let a1 = doubling_constant(src, src.masses()).value;
    let c_muf = doubling_constant(src, &mu_f).value;
    let a1_hat = doubling_constant(&hat, hat.masses()).value;
    let c_muf_hat = doubling_constant(&hat, &mu_f).value;

    // Stated constants: C_muf^(2 + b) / A1^(-b) with b = log2 C^(1/eps)
    // for hat over tilde and b = log2 C for the other direction; the
    // negated exponent moves A1^b into the denominator.
    let beta_hat = c_eps.powf(1.0 / eps).log2();
    let beta_tilde = c_eps.log2();
    let stated_hat_over_tilde = c_muf.powf(2.0 + beta_hat) / a1.powf(beta_hat);
    let stated_tilde_over_hat = c_muf.powf(2.0 + beta_tilde) / a1.powf(beta_tilde);
    // Provable per-scale factors via the sandwich
    // B_hat(x, t^eps/C) inside B_rho(x, t) inside B_hat(x, C t^eps):
    // dilating on the metric side by C^2 costs one doubling chain.
    let dilation = 1.0 + (c_eps * c_eps).log2();
    let reference_hat_over_tilde = a1_hat.powf(dilation);
    let reference_tilde_over_hat = c_muf_hat.powf(dilation);

    let jac_ratio = |space: &Space, x: usize, r: f64| -> f64 {
        let len = space.ball_len(x, r, true);
        let num = pairwise_sum_by(0, len, &|i| mu_f[space.order(x)[i] as usize]);
        num / space.mu_ball(x, r, true)
    };

    let mut finest_max_ratio = 1.0f64;
    for x in 0..n {
        let jt = mu_f[x] / src.mass(x);
        let jh = mu_f[x] / hat.mass(x);
        finest_max_ratio = finest_max_ratio.max(jh / jt).max(jt / jh);
    }

    let mut rows = Vec::new();
    let mut all_stated_ok = true;
    let mut all_reference_ok = true;
    for &t in &src.distinct_distances() {
        let s = t.powf(eps) / c_eps;
        let mut hot = 0.0f64;
        let mut toh = 0.0f64;
        for x in 0..n {
            let jt = jac_ratio(src, x, t);
            let jh = jac_ratio(&hat, x, s);
            hot = hot.max(jh / jt);
            toh = toh.max(jt / jh);
        }
        let ok_stated = hot <= stated_hat_over_tilde * (1.0 + REL_TOL)
            && toh <= stated_tilde_over_hat * (1.0 + REL_TOL);
        let ok_reference = hot <= reference_hat_over_tilde * (1.0 + REL_TOL)
            && toh <= reference_tilde_over_hat * (1.0 + REL_TOL);
        all_stated_ok &= ok_stated;
        all_reference_ok &= ok_reference;
        rows.push(ComparabilityRow {
            rho_radius: t,
            metric_radius: s,
            max_hat_over_tilde: hot,
            max_tilde_over_hat: toh,
            ok_stated,
            ok_reference,
        });
    }

    Ok(ComparabilityReport {
        finest_max_ratio,
        rows,
        stated_hat_over_tilde,
        stated_tilde_over_hat,
        reference_hat_over_tilde,
        reference_tilde_over_hat,
        all_stated_ok,
        all_reference_ok,
    })
}

/// Finite analogue of one measure being A-infinity related to another at
/// level lambda: the best (largest) delta such that mu2(E) < delta mu2(B)
/// forces mu1(E) < lambda mu1(B), scanned over every subset of every
/// ball with at most 12 members (larger balls are counted as skipped).
/// Infinite when no subset reaches the lambda fraction.
#[derive(Debug, Clone, Serialize)]
pub struct AInftyReport {
    pub lambda: f64,
    pub best_delta: f64,
    pub pairs_checked: usize,
    pub balls_skipped: usize,
}

pub fn a_infty_related(
    space: &Space,
    mu1: &[f64],
    mu2: &[f64],
    lambda: f64,
) -> Result<AInftyReport> {
    if mu1.len() != space.n() || mu2.len() != space.n() {
        return Err(Error::pre("a_infty_related", "measure length mismatch"));
    }
    if !(lambda > 0.0) {
        return Err(Error::pre("a_infty_related", "lambda must be positive"));
    }
    let mut best_delta = f64::INFINITY;
    let mut pairs_checked = 0usize;
    let mut balls_skipped = 0usize;
    for (center, len, _) in space.distinct_balls() {
        let members = &space.order(center as usize)[..len as usize];
        if members.len() > 12 {
            balls_skipped += 1;
            continue;
        }
        let m1_b = pairwise_sum_by(0, members.len(), &|i| mu1[members[i] as usize]);
        let m2_b = pairwise_sum_by(0, members.len(), &|i| mu2[members[i] as usize]);
        for mask in 1u64..(1u64 << members.len()) {
            let mut m1_e = 0.0;
            let mut m2_e = 0.0;
            for (i, &m) in members.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    m1_e += mu1[m as usize];
                    m2_e += mu2[m as usize];
                }
            }
            pairs_checked += 1;
            if m1_e >= lambda * m1_b {
                best_delta = best_delta.min(m2_e / m2_b);
            }
        }
    }
    Ok(AInftyReport {
        lambda,
        best_delta,
        pairs_checked,
        balls_skipped,
    })
}

/// Grid of reverse-Hölder constants of the Jacobian and the exponent
/// grid's threshold rule: report the largest exponent whose constant
/// stays at or below the threshold.
const RH_EPS_GRID: [f64; 6] = [0.0625, 0.125, 0.25, 0.5, 1.0, 2.0];

/// End-to-end chain for one quasisymmetric map: the Jacobian over the
/// chosen ball family, its reverse-Hölder grid, the full log-BMO chain on
/// the analysis space, the metric/quasimetric Jacobian comparison, the
/// BMO equivalence between the two ball families, and the additive
/// oscillation bound linking the two Jacobian logarithms (their pointwise
/// gap is zero here since both finest-scale fields equal the atom mass
/// ratio, making the additive step an exact identity to witness).
#[derive(Debug, Clone, Serialize)]
pub struct ReimannReport {
    pub kind: JacobianKind,
    pub rh_grid: Vec<(f64, f64)>,
    pub rh_threshold: f64,
    pub chosen_eps: Option<f64>,
    pub q_used: f64,
    pub pipeline: PipelineReport,
    pub comparability: ComparabilityReport,
    pub equivalence: BmoEquivalenceReport,
    pub log_gap: f64,
    pub log_gap_bound: f64,
    pub additive_ok: bool,
    pub bmo_additive_gap: f64,
    pub a_infty: AInftyReport,
}

pub fn reimann_pipeline(
    bij: &PointBijection,
    src: &Space,
    tgt: &Space,
    metriz: &MetrizationResult,
    adj: &AdjacentSystems,
    kind: JacobianKind,
    rh_threshold: f64,
) -> Result<ReimannReport> {
    let hat = src.with_dist(metriz.d_eps.clone())?;
    let analysis: &Space = match kind {
        JacobianKind::Quasimetric => src,
        JacobianKind::Metric => &hat,
    };
    let jac = generalized_jacobian(bij, analysis, tgt, kind)?;
    if !jac.integral_identity_ok {
        return Err(Error::BoundViolation {
            step: "jacobian integral identity".into(),
            measured: jac.integral_max_rel_dev,
            bound: REL_TOL,
        });
    }
    let w = Weight::new(jac.values.clone())?;
    let balls = Collection::Balls(analysis);
    let mut rh_grid = Vec::new();
    let mut chosen_eps = None;
    for &e in RH_EPS_GRID.iter() {
        let v = rh_constant(analysis, &w, &balls, 1.0 + e)?.value;
        if v <= rh_threshold {
            chosen_eps = Some(e);
        }
        rh_grid.push((e, v));
    }
    let q_used = 1.0 + chosen_eps.unwrap_or(RH_EPS_GRID[0]);
    let pipeline = log_bmo_pipeline(analysis, &w, adj, q_used)?;

    let comparability = jacobian_comparability(bij, src, tgt, metriz)?;
    let log_j: Vec<f64> = jac.values.iter().map(|v| v.ln()).collect();
    let equivalence = bmo_metric_equivalence(src, &log_j, metriz)?;

    // Both Jacobian fields have the same finest-scale values, so the
    // pointwise log gap is zero; the additive oscillation bound says BMO
    // norms of functions within gap of each other differ by at most twice
    // the gap, and the stated comparability constant caps the gap itself.
    let jac_other = generalized_jacobian(
        bij,
        match kind {
            JacobianKind::Quasimetric => &hat,
            JacobianKind::Metric => src,
        },
        tgt,
        match kind {
            JacobianKind::Quasimetric => JacobianKind::Metric,
            JacobianKind::Metric => JacobianKind::Quasimetric,
        },
    )?;
    let log_gap = jac
        .values
        .iter()
        .zip(&jac_other.values)
        .map(|(a, b)| (a.ln() - b.ln()).abs())
        .fold(0.0f64, f64::max);
    let log_gap_bound = comparability
        .stated_hat_over_tilde
        .max(comparability.stated_tilde_over_hat)
        .ln()
        .max(0.0);
    let bmo_this = crate::weights::bmo_norm(analysis, &log_j, &balls)?.value;
    let log_j_other: Vec<f64> = jac_other.values.iter().map(|v| v.ln()).collect();
    let bmo_other = crate::weights::bmo_norm(analysis, &log_j_other, &balls)?.value;
    let bmo_additive_gap = (bmo_this - bmo_other).abs();
    let additive_ok =
        log_gap <= log_gap_bound + EDGE_TOL && bmo_additive_gap <= 2.0 * log_gap + EDGE_TOL;

    let mu_f = pullback_measure(bij, tgt);
    let a_infty = a_infty_related(analysis, &mu_f, analysis.masses(), 0.5)?;

    Ok(ReimannReport {
        kind,
        rh_grid,
        rh_threshold,
        chosen_eps,
        q_used,
        pipeline,
        comparability,
        equivalence,
        log_gap,
        log_gap_bound,
        additive_ok,
        bmo_additive_gap,
        a_infty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_adjacent_systems;
    use crate::metrization::chain_metric;

    fn line_space(n: usize) -> Space {
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (i as f64 - j as f64).abs();
            }
        }
        Space::from_tables(dist, vec![1.0; n]).unwrap()
    }

    fn space_from_positions(pos: &[f64], mass: Vec<f64>) -> Space {
        let n = pos.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (pos[i] - pos[j]).abs();
            }
        }
        Space::from_tables(dist, mass).unwrap()
    }

    /// Symmetric grid positions -m..=m and their images under the odd
    /// power stretch p -> sign(p) |p|^gamma, with cell-length masses on
    /// the stretched side so the Jacobian tracks the local expansion.
    fn stretch_pair(m: i32, gamma: f64) -> (Space, Space) {
        let pos: Vec<f64> = (-m..=m).map(|i| i as f64).collect();
        let stretched: Vec<f64> = pos
            .iter()
            .map(|p| p.signum() * p.abs().powf(gamma))
            .collect();
        let n = pos.len();
        let cell = |q: &[f64], i: usize| -> f64 {
            let lo = if i == 0 { q[0] } else { (q[i - 1] + q[i]) / 2.0 };
            let hi = if i == n - 1 { q[n - 1] } else { (q[i] + q[i + 1]) / 2.0 };
            (hi - lo).max(0.5)
        };
        let src = space_from_positions(&pos, (0..n).map(|i| cell(&pos, i)).collect());
        let tgt = space_from_positions(&stretched, (0..n).map(|i| cell(&stretched, i)).collect());
        (src, tgt)
    }

    #[test]
    fn bijection_validation_and_inverse() {
        let b = PointBijection::new(vec![2, 0, 1]).unwrap();
        assert_eq!(b.apply(0), 2);
        assert_eq!(b.apply_inv(2), 0);
        let inv = b.inverted();
        for x in 0..3 {
            assert_eq!(inv.apply(b.apply(x)), x);
        }
        assert!(PointBijection::new(vec![0, 0, 1]).is_err());
        assert!(PointBijection::new(vec![0, 3]).is_err());
    }

    #[test]
    fn identity_envelope_is_theta() {
        let s = line_space(8);
        let id = PointBijection::identity(8);
        let prof = eta_profile(&id, &s, &s).unwrap();
        assert_eq!(prof.samples, 8 * 7 * 6);
        for p in prof.breakpoints() {
            assert_eq!(p.ratio, p.theta);
        }
        assert!(is_quasisymmetric(&prof, &Eta::power(1.0, 1.0).unwrap())
            .unwrap()
            .ok);
        let tight = is_quasisymmetric(&prof, &Eta::power(0.5, 1.0).unwrap()).unwrap();
        assert!(!tight.ok);
        assert!(tight.worst_ratio > tight.worst_bound);
    }

    #[test]
    fn reversal_is_an_isometry() {
        let s = line_space(9);
        let rev = PointBijection::new((0..9).rev().collect()).unwrap();
        let prof = eta_profile(&rev, &s, &s).unwrap();
        for p in prof.breakpoints() {
            assert_eq!(p.ratio, p.theta);
        }
    }

    #[test]
    fn stretch_envelope_matches_triple_scan() {
        let (src, tgt) = stretch_pair(4, 2.0);
        let id = PointBijection::identity(src.n());
        let prof = eta_profile(&id, &src, &tgt).unwrap();
        // Independent scan: the envelope at a few quotients must equal
        // the maximum ratio over triples with quotient at most theta.
        let n = src.n();
        for theta in [0.5, 1.0, 2.0, 4.0] {
            let mut best: f64 = 0.0;
            let mut any = false;
            for x in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        if x == a || x == b || a == b {
                            continue;
                        }
                        if src.dist(x, a) / src.dist(x, b) <= theta {
                            best = best.max(tgt.dist(x, a) / tgt.dist(x, b));
                            any = true;
                        }
                    }
                }
            }
            assert!(any);
            assert_eq!(prof.eta_hat(theta).unwrap(), best, "theta = {theta}");
        }
        // Envelope is its own gauge.
        let gauge = Eta::from_profile(&prof).unwrap();
        assert!(is_quasisymmetric(&prof, &gauge).unwrap().ok);
    }

    #[test]
    fn eta_evaluation_and_threshold() {
        let pw = Eta::power(1.0, 1.0).unwrap();
        assert_eq!(pw.eval(0.25), Some(0.25));
        assert!((pw.theta_where_le(1.0 / 3.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let tb = Eta::table(vec![1.0, 2.0, 4.0], vec![1.0, 3.0, 3.5], false).unwrap();
        assert_eq!(tb.eval(1.5), Some(2.0));
        assert_eq!(tb.eval(0.5), None);
        assert_eq!(tb.eval(5.0), None);
        let tbf = Eta::table(vec![1.0, 2.0], vec![1.0, 3.0], true).unwrap();
        assert_eq!(tbf.eval(0.5), Some(1.0));
        assert_eq!(tbf.eval(9.0), Some(3.0));
        // Interpolated crossing: value 2.0 is reached halfway.
        assert!((tb.theta_where_le(2.0).unwrap() - 1.5).abs() < 1e-15);

        assert!(Eta::table(vec![2.0, 1.0], vec![1.0, 2.0], false).is_err());
        assert!(Eta::table(vec![1.0, 2.0], vec![2.0, 1.0], false).is_err());
    }

    #[test]
    fn transfer_collapses_when_trivial() {
        let zeta = qs_transfer(Eta::power(1.0, 1.0).unwrap(), 1.0, 1.0).unwrap();
        for t in [0.25, 1.0, 3.0] {
            assert!((zeta.eval(t).unwrap() - t).abs() < 1e-12);
        }
        let eta = Eta::power(2.0, 0.5).unwrap();
        let zeta = qs_transfer(eta.clone(), 1.0, 1.0).unwrap();
        for t in [0.5, 2.0] {
            assert!((zeta.eval(t).unwrap() - eta.eval(t).unwrap()).abs() < 1e-12);
        }
        assert!(qs_transfer(Eta::power(1.0, 1.0).unwrap(), 0.5, 1.0).is_err());
        assert!(qs_transfer(Eta::power(1.0, 1.0).unwrap(), 1.0, 1.5).is_err());
    }

    #[test]
    fn pullback_preserves_total_mass() {
        let s = space_from_positions(&[0.0, 1.0, 3.0, 7.0], vec![1.0, 2.0, 0.5, 4.0]);
        let b = PointBijection::new(vec![3, 1, 0, 2]).unwrap();
        let mu_f = pullback_measure(&b, &s);
        assert_eq!(mu_f, vec![4.0, 2.0, 1.0, 0.5]);
        let total: f64 = mu_f.iter().sum();
        assert!((total - s.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn pullback_doubling_identity_and_swap() {
        let s = line_space(16);
        let id = PointBijection::identity(16);
        let eta = Eta::power(1.0, 1.0).unwrap();
        let rep = pullback_doubling_check(&id, &s, &s, &eta, 0.5).unwrap();
        let a1 = doubling_constant(&s, s.masses()).value;
        assert_eq!(rep.measured, a1);
        assert!(rep.applicable);
        assert!(rep.ok, "measured {} bound {:?}", rep.measured, rep.bound);

        // Reversal with nonuniform masses: the pullback genuinely moves
        // mass, and the bound must still hold for an isometry.
        let masses: Vec<f64> = (0..16).map(|i| 1.0 + (i as f64) / 4.0).collect();
        let s2 = space_from_positions(
            &(0..16).map(|i| i as f64).collect::<Vec<_>>(),
            masses,
        );
        let rev = PointBijection::new((0..16).rev().collect()).unwrap();
        let rep = pullback_doubling_check(&rev, &s2, &s2, &eta, 0.5).unwrap();
        assert!(rep.ok);

        // A gauge that dominates the identity envelope but never drops to
        // 1/3 makes the bound inapplicable while still returning the
        // measured constant.
        let flat = Eta::table(vec![1.0 / 15.0, 15.0], vec![0.4, 15.0], true).unwrap();
        let rep = pullback_doubling_check(&id, &s, &s, &flat, 0.5).unwrap();
        assert!(!rep.applicable);
        assert!(rep.ok);
        assert!(rep.measured >= 1.0);
    }

    #[test]
    fn distortion_gap_identity_and_stretch() {
        let s = line_space(16);
        let id = PointBijection::identity(16);
        let prof = eta_profile(&id, &s, &s).unwrap();
        for (x, r) in [(0usize, 1.5), (8, 2.0), (15, 1.0)] {
            let g = distortion_gap(&id, &s, &s, &prof, x, r, 4.0, 0.25).unwrap();
            if let Some(t) = g.t {
                assert!(g.s < t, "x {x} r {r}: s {} t {}", g.s, t);
            }
            assert!(g.pass);
        }
        // Complement of B(x, kr) empty: vacuous pass.
        let g = distortion_gap(&id, &s, &s, &prof, 8, 10.0, 4.0, 0.25).unwrap();
        assert!(g.t.is_none() && g.pass);

        let (src, tgt) = stretch_pair(6, 2.0);
        let idn = PointBijection::identity(src.n());
        let prof = eta_profile(&idn, &src, &tgt).unwrap();
        // The smallest sampled quotient on the +-6 grid is 1/12; the
        // envelope there stays at most 1/3, so k = 12 qualifies.
        let theta = 1.0 / 12.0;
        let env = prof.eta_hat(theta).unwrap_or(0.0);
        assert!(env > 0.0 && env <= 1.0 / 3.0);
        let k = (1.0 / theta).ceil();
        let mut separated = 0;
        for x in 0..src.n() {
            let g = distortion_gap(&idn, &src, &tgt, &prof, x, 0.6, k, theta).unwrap();
            assert!(g.pass, "atom {x}: s {} t {:?}", g.s, g.t);
            separated += g.t.is_some() as usize;
        }
        assert!(separated > 0);

        assert!(distortion_gap(&id, &s, &s, &prof, 0, 1.0, 2.0, 0.25).is_err());
    }

    #[test]
    fn jacobian_oracles() {
        let s = line_space(6);
        let id = PointBijection::identity(6);
        let j = generalized_jacobian(&id, &s, &s, JacobianKind::Quasimetric).unwrap();
        assert!(j.values.iter().all(|&v| v == 1.0));
        assert!(j.integral_identity_ok);
        assert!(j.multiscale.iter().flatten().all(|&v| v == 1.0));

        // Swap of two atoms with masses (1, 2): the Jacobian is (2, 1/2).
        let two = space_from_positions(&[0.0, 1.0], vec![1.0, 2.0]);
        let swap = PointBijection::new(vec![1, 0]).unwrap();
        let j = generalized_jacobian(&swap, &two, &two, JacobianKind::Quasimetric).unwrap();
        assert_eq!(j.values, vec![2.0, 0.5]);
        assert!(j.integral_identity_ok);
        // Finest scale equals the atom ratios.
        assert_eq!(j.multiscale[0], j.values);

        // Any permutation of uniform masses is measure preserving.
        let s = line_space(7);
        let perm = PointBijection::new(vec![3, 0, 6, 1, 5, 2, 4]).unwrap();
        let j = generalized_jacobian(&perm, &s, &s, JacobianKind::Quasimetric).unwrap();
        assert!(j.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn inverse_jacobian_chain_rule() {
        let masses: Vec<f64> = vec![1.0, 2.5, 0.75, 3.0, 1.25, 0.5];
        let s = space_from_positions(&[0.0, 1.0, 2.0, 3.5, 5.0, 8.0], masses);
        let b = PointBijection::new(vec![4, 2, 0, 5, 1, 3]).unwrap();
        let j = generalized_jacobian(&b, &s, &s, JacobianKind::Quasimetric).unwrap();
        let ji = generalized_jacobian(&b.inverted(), &s, &s, JacobianKind::Quasimetric).unwrap();
        for x in 0..s.n() {
            let prod = j.values[x] * ji.values[b.apply(x)];
            assert!((prod - 1.0).abs() < 1e-12, "atom {x}: {prod}");
        }
    }

    #[test]
    fn inverse_envelope_duality() {
        let (src, tgt) = stretch_pair(5, 2.0);
        let id = PointBijection::identity(src.n());
        let fwd = eta_profile(&id, &src, &tgt).unwrap();
        let inv = eta_profile(&id, &tgt, &src).unwrap();
        let rep = eta_inverse_duality(&fwd, &inv);
        assert!(rep.checked > 0);
        assert!(rep.ok, "{:?}", rep.witness);
        // And symmetrically.
        let rep = eta_inverse_duality(&inv, &fwd);
        assert!(rep.ok, "{:?}", rep.witness);
    }

    #[test]
    fn comparability_on_squared_line() {
        // Quasimetric: squared gaps on a line with increasing masses, a
        // reversal map so the pullback measure differs from the measure.
        let n = 12;
        let pos: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (pos[i] - pos[j]).powi(2);
            }
        }
        let masses: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / 3.0).collect();
        let s = Space::from_tables(dist, masses).unwrap();
        let m = chain_metric(s.dist_table(), n, None).unwrap();
        let rev = PointBijection::new((0..n as u32).rev().collect()).unwrap();
        let rep = jacobian_comparability(&rev, &s, &s, &m).unwrap();
        assert_eq!(rep.finest_max_ratio, 1.0);
        assert!(rep.all_reference_ok);
        assert!(rep.all_stated_ok);
        assert!(rep.stated_hat_over_tilde >= 1.0);
    }

    #[test]
    fn a_infty_of_identical_measures() {
        let s = line_space(10);
        let rep = a_infty_related(&s, s.masses(), s.masses(), 0.5).unwrap();
        // mu(E) >= mu(B)/2 forces the mu2 fraction to be at least 1/2.
        assert!(rep.best_delta >= 0.5 - 1e-12);
        assert!(rep.pairs_checked > 0);
    }

    #[test]
    fn reimann_identity_is_exact() {
        let s = line_space(32);
        let id = PointBijection::identity(32);
        let m = chain_metric(s.dist_table(), 32, None).unwrap();
        let adj = build_adjacent_systems(&s, 2, 1.0 / 96.0, &[21, 22], false).unwrap();
        let rep =
            reimann_pipeline(&id, &s, &s, &m, &adj, JacobianKind::Quasimetric, 4.0).unwrap();
        assert_eq!(rep.pipeline.bmo_ball, 0.0);
        assert_eq!(rep.log_gap, 0.0);
        assert!(rep.additive_ok);
        assert_eq!(rep.chosen_eps, Some(2.0));
        assert!(rep.equivalence.forward_ok && rep.equivalence.reverse_ok);
        assert!(rep.comparability.all_stated_ok);
    }

    #[test]
    fn reimann_stretch_end_to_end() {
        let (src, tgt) = stretch_pair(8, 1.5);
        let id = PointBijection::identity(src.n());
        let m = chain_metric(src.dist_table(), src.n(), None).unwrap();
        let adj = build_adjacent_systems(&src, 2, 1.0 / 96.0, &[31, 32], false).unwrap();
        let rep =
            reimann_pipeline(&id, &src, &tgt, &m, &adj, JacobianKind::Quasimetric, 8.0).unwrap();
        assert!(rep.pipeline.bmo_ball > 0.0);
        assert!(rep.chosen_eps.is_some());
        assert!(rep.additive_ok);
        assert!(rep.equivalence.forward_ok && rep.equivalence.reverse_ok);
        assert!(rep.a_infty.best_delta > 0.0);
    }
}
