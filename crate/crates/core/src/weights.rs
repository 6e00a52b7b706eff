//! Weight classes on a finite quasimetric space: Muckenhoupt constants,
//! reverse-Hölder constants, BMO norms, and the implication chain
//! RH over balls -> dyadic RH -> dyadic A_p -> log w in dyadic BMO -> log w
//! in BMO over balls, with every step's constant verified against the
//! measured quantities.

use rand::Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::czd::dyadic_doubling;
use crate::dyadic::{AdjacentSystems, DyadicSystem};
use crate::metrization::MetrizationResult;
use crate::num::{pairwise_sum_by, EDGE_TOL, REL_TOL};
use crate::space::{doubling_constant, Space};
use crate::{Error, Result};

/// A strictly positive weight; w(E) is the sum of value * mass over E.
/// Strict positivity keeps log w total: a zero atom would put -inf on a
/// set of positive measure, which the reverse-Hölder hypotheses exclude
/// anyway.
#[derive(Debug, Clone)]
pub struct Weight {
    values: Vec<f64>,
}

impl Weight {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::pre("Weight::new", "no values"));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::pre(
                "Weight::new",
                format!("weight[{i}] = {} is not finite positive", values[i]),
            ));
        }
        Ok(Weight { values })
    }

    pub fn unit(n: usize) -> Self {
        Weight { values: vec![1.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    /// Per-atom masses of the measure w * mu.
    pub fn measure(&self, space: &Space) -> Vec<f64> {
        (0..space.n()).map(|i| self.values[i] * space.mass(i)).collect()
    }
}

/// The family of sets a constant is computed over: every distinct ball,
/// the cubes of one dyadic system, or the cubes of a whole adjacent family.
#[derive(Clone, Copy)]
pub enum Collection<'a> {
    Balls(&'a Space),
    Dyadic(&'a DyadicSystem),
    Adjacent(&'a AdjacentSystems),
}

#[derive(Debug, Clone, Copy)]
enum SetTag {
    Ball { center: u32, radius: f64 },
    Cube { system: usize, level: i32, index: usize },
}

impl SetTag {
    fn describe(&self) -> String {
        match self {
            SetTag::Ball { center, radius } => format!("ball(center {center}, r {radius})"),
            SetTag::Cube { system, level, index } => {
                format!("cube(system {system}, level {level}, index {index})")
            }
        }
    }
}

impl<'a> Collection<'a> {
    fn sets(&self) -> Vec<(SetTag, &'a [u32])> {
        match self {
            Collection::Balls(space) => space
                .distinct_balls()
                .into_iter()
                .map(|(center, len, radius)| {
                    (
                        SetTag::Ball { center, radius },
                        &space.order(center as usize)[..len as usize],
                    )
                })
                .collect(),
            Collection::Dyadic(sys) => cubes_of(sys, 0),
            Collection::Adjacent(adj) => adj
                .systems
                .iter()
                .enumerate()
                .flat_map(|(t, sys)| cubes_of(sys, t))
                .collect(),
        }
    }

    fn dydbl(&self, measure: &[f64]) -> Option<f64> {
        match self {
            Collection::Balls(_) => None,
            Collection::Dyadic(sys) => Some(dyadic_doubling(sys, measure)),
            Collection::Adjacent(adj) => adj
                .systems
                .iter()
                .map(|sys| dyadic_doubling(sys, measure))
                .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v)))),
        }
    }
}

fn cubes_of(sys: &DyadicSystem, t: usize) -> Vec<(SetTag, &[u32])> {
    sys.levels()
        .flat_map(|(k, cubes)| {
            cubes.iter().enumerate().map(move |(i, c)| {
                (
                    SetTag::Cube { system: t, level: k, index: i },
                    c.members.as_slice(),
                )
            })
        })
        .collect()
}

/// A supremum-type constant with the set attaining it.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub value: f64,
    pub witness: Option<String>,
    /// Dyadic doubling constant of the weight, recorded for cube
    /// collections (required by the dyadic reverse-Hölder definition).
    pub dydbl: Option<f64>,
}

fn avg_over(space: &Space, set: &[u32], g: &dyn Fn(usize) -> f64) -> f64 {
    let num = pairwise_sum_by(0, set.len(), &|i| {
        let x = set[i] as usize;
        g(x) * space.mass(x)
    });
    let den = pairwise_sum_by(0, set.len(), &|i| space.mass(set[i] as usize));
    num / den
}

fn sup_over_sets(
    coll: &Collection,
    term: &dyn Fn(&[u32]) -> f64,
) -> Result<(f64, Option<String>)> {
    let sets = coll.sets();
    if sets.is_empty() {
        return Err(Error::pre("collection", "no sets to scan"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut tag = None;
    for (t, s) in sets {
        let v = term(s);
        if v > best {
            best = v;
            tag = Some(t);
        }
    }
    Ok((best, tag.map(|t| t.describe())))
}

/// Muckenhoupt constant: the largest, over the collection, of
/// (avg w) * (avg w^(-1/(p-1)))^(p-1), averages weighted by mu.
pub fn ap_constant(space: &Space, w: &Weight, coll: &Collection, p: f64) -> Result<ClassReport> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::pre("ap_constant", format!("p = {p} must exceed 1")));
    }
    let wv = w.values();
    let e = -1.0 / (p - 1.0);
    let (value, witness) = sup_over_sets(coll, &|s| {
        let a = avg_over(space, s, &|x| wv[x]);
        let b = avg_over(space, s, &|x| wv[x].powf(e));
        a * b.powf(p - 1.0)
    })?;
    Ok(ClassReport { value, witness, dydbl: None })
}

/// Reverse-Hölder constant: the largest of (avg w^q)^(1/q) / (avg w).
/// For cube collections the weight's dyadic doubling constant is measured
/// and recorded, as the dyadic definition requires it explicitly.
pub fn rh_constant(space: &Space, w: &Weight, coll: &Collection, q: f64) -> Result<ClassReport> {
    if !(q.is_finite() && q > 1.0) {
        return Err(Error::pre("rh_constant", format!("q = {q} must exceed 1")));
    }
    let wv = w.values();
    let (value, witness) = sup_over_sets(coll, &|s| {
        let a = avg_over(space, s, &|x| wv[x].powf(q));
        let b = avg_over(space, s, &|x| wv[x]);
        a.powf(1.0 / q) / b
    })?;
    Ok(ClassReport {
        value,
        witness,
        dydbl: coll.dydbl(&w.measure(space)),
    })
}

/// BMO norm: the largest of avg |f - avg_S f| over the collection.
pub fn bmo_norm(space: &Space, f: &[f64], coll: &Collection) -> Result<ClassReport> {
    if f.len() != space.n() {
        return Err(Error::pre("bmo_norm", "f has the wrong length"));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::pre("bmo_norm", format!("f[{i}] is not finite")));
    }
    let (value, witness) = sup_over_sets(coll, &|s| {
        let m = avg_over(space, s, &|x| f[x]);
        avg_over(space, s, &|x| (f[x] - m).abs())
    })?;
    Ok(ClassReport { value, witness, dydbl: None })
}

/// Absolute-continuity content of a dyadic reverse-Hölder weight.
///
/// The exponent comes from the Hölder argument: for E inside Q,
/// w(E) <= (integral of w^q over Q)^(1/q) * mu(E)^(1-1/q), which yields
/// w(E)/w(Q) <= K (mu(E)/mu(Q))^eps with eps = 1 - 1/q and K the dyadic
/// reverse-Hölder constant. The contrapositive pair is gamma = 1/2,
/// lambda = 1 - (2K)^(-1/eps): if w(E) < gamma w(Q) then applying the
/// first bound to Q minus E forces mu(E) < lambda mu(Q). Both statements
/// are then verified over every cube: exhaustively over all subsets for
/// cubes of at most 12 atoms, and over 10^4 seeded random subsets plus the
/// full set otherwise.
#[derive(Debug, Clone, Serialize)]
pub struct AbsContReport {
    pub eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Measured dyadic reverse-Hölder constant K.
    pub rhq_dyadic: f64,
    pub holds_fractional: bool,
    pub holds_implication: bool,
    pub subsets_checked: usize,
    pub exhaustive: bool,
    /// Empirical pair maximizing the downstream exponent range.
    pub best_gamma: f64,
    pub best_lambda: f64,
    pub witness: Option<String>,
}

struct SubsetScan<'s> {
    space: &'s Space,
    wm: &'s [f64],
    k: f64,
    eps: f64,
    gamma: f64,
    lambda: f64,
    holds_fractional: bool,
    holds_implication: bool,
    witness: Option<String>,
    samples: Vec<(f64, f64)>,
    subsets_checked: usize,
}

impl SubsetScan<'_> {
    fn eval(&mut self, subset: &[u32], w_q: f64, mu_q: f64) {
        if subset.is_empty() {
            return;
        }
        let w_e = pairwise_sum_by(0, subset.len(), &|i| self.wm[subset[i] as usize]);
        let mu_e = self.space.mu_set(subset);
        let a = w_e / w_q;
        let b = mu_e / mu_q;
        if a > self.k * b.powf(self.eps) * (1.0 + REL_TOL) {
            self.holds_fractional = false;
            self.witness.get_or_insert(format!(
                "subset of {} atoms: w-fraction {a} exceeds K * mu-fraction^eps",
                subset.len()
            ));
        }
        if w_e < self.gamma * w_q && !(mu_e < self.lambda * mu_q * (1.0 + EDGE_TOL)) {
            self.holds_implication = false;
            self.witness.get_or_insert(format!(
                "subset with w-fraction {a} has mu-fraction {b} at or above lambda"
            ));
        }
        self.samples.push((a, b));
        self.subsets_checked += 1;
    }
}

pub fn rh_absolute_continuity(
    space: &Space,
    w: &Weight,
    sys: &DyadicSystem,
    q: f64,
) -> Result<AbsContReport> {
    let k = rh_constant(space, w, &Collection::Dyadic(sys), q)?.value;
    let eps = 1.0 - 1.0 / q;
    let gamma = 0.5;
    let lambda = 1.0 - (2.0 * k).powf(-1.0 / eps);
    let wm = w.measure(space);
    let c_w = dyadic_doubling(sys, &wm);

    let mut scan = SubsetScan {
        space,
        wm: &wm,
        k,
        eps,
        gamma,
        lambda,
        holds_fractional: true,
        holds_implication: true,
        witness: None,
        samples: Vec::new(),
        subsets_checked: 0,
    };
    let mut exhaustive = true;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x22_23_01);
    let mut subset: Vec<u32> = Vec::new();

    for (_, cubes) in sys.levels() {
        for cube in cubes {
            let members = &cube.members;
            let s = members.len();
            let w_q = pairwise_sum_by(0, s, &|i| wm[members[i] as usize]);
            let mu_q = space.mu_set(members);
            if s <= 12 {
                for mask in 1u64..(1u64 << s) {
                    subset.clear();
                    for (i, &m) in members.iter().enumerate() {
                        if mask & (1 << i) != 0 {
                            subset.push(m);
                        }
                    }
                    scan.eval(&subset, w_q, mu_q);
                }
            } else {
                exhaustive = false;
                for _ in 0..10_000 {
                    subset.clear();
                    for &m in members.iter() {
                        if rng.gen::<bool>() {
                            subset.push(m);
                        }
                    }
                    scan.eval(&subset, w_q, mu_q);
                }
                // The full set: equality case of both statements.
                scan.eval(members, w_q, mu_q);
            }
        }
    }

    let SubsetScan {
        holds_fractional,
        holds_implication,
        witness,
        samples,
        subsets_checked,
        ..
    } = scan;

    // Empirical envelope pair: over a gamma grid, the smallest lambda
    // consistent with the samples, scored by the width of the exponent
    // range it buys in the A_p step.
    let ln_cw = c_w.ln();
    let mut best_gamma = gamma;
    let mut best_lambda = lambda;
    let mut best_merit = f64::NEG_INFINITY;
    for i in 1..20 {
        let g = i as f64 * 0.05;
        let lam = samples
            .iter()
            .filter(|(a, _)| *a < g)
            .map(|(_, b)| *b)
            .fold(0.0f64, f64::max)
            .max(1e-15)
            .min(1.0 - 1e-15);
        let m = if ln_cw > 0.0 {
            (1.0 + (1.0 / g).ln() / ln_cw).ceil().max(2.0)
        } else {
            2.0
        };
        let merit = (1.0 / lam).ln() / m;
        if merit > best_merit {
            best_merit = merit;
            best_gamma = g;
            best_lambda = lam;
        }
    }

    Ok(AbsContReport {
        eps,
        gamma,
        lambda,
        rhq_dyadic: k,
        holds_fractional,
        holds_implication,
        subsets_checked,
        exhaustive,
        best_gamma,
        best_lambda,
        witness,
    })
}

/// One system's row of the ball-to-dyadic reverse-Hölder transfer:
/// measured dyadic constant against
/// [w]_RHq * A_1^(m/q) * C_dbl^m, with m = 1 + log2(C1/c1) from the
/// system's effective sandwich constants.
#[derive(Debug, Clone, Serialize)]
pub struct DyadicRhRow {
    pub system: usize,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub m_exponent: f64,
    pub ok: bool,
}

pub fn rh_to_dyadic_rh(
    space: &Space,
    w: &Weight,
    adj: &AdjacentSystems,
    q: f64,
) -> Result<Vec<DyadicRhRow>> {
    let rh_ball = rh_constant(space, w, &Collection::Balls(space), q)?.value;
    let a1 = doubling_constant(space, space.masses()).value;
    let c_dbl = doubling_constant(space, &w.measure(space)).value;
    let mut rows = Vec::with_capacity(adj.systems.len());
    for (t, sys) in adj.systems.iter().enumerate() {
        let measured = rh_constant(space, w, &Collection::Dyadic(sys), q)?.value;
        let ratio = if sys.inner_const_eff().is_finite() && sys.inner_const_eff() > 0.0 {
            (sys.outer_const_eff() / sys.inner_const_eff()).max(1.0)
        } else {
            1.0
        };
        let m = 1.0 + ratio.log2();
        let bound = rh_ball * a1.powf(m / q) * c_dbl.powf(m);
        rows.push(DyadicRhRow {
            system: t,
            measured,
            bound,
            slack: bound - measured,
            m_exponent: m,
            ok: measured <= bound * (1.0 + REL_TOL),
        });
    }
    Ok(rows)
}

/// Dyadic reverse-Hölder implies dyadic A_p, with every intermediate
/// object measured and the negative-power bound verified on every cube.
///
/// The chain: with (gamma, lambda) from the absolute-continuity step and
/// C_w the measured dyadic doubling constant of w, thresholds
/// alpha_s = C_w^(M s) alpha_0 need C_w^(1-M) <= gamma for the level-set
/// measures to decay like lambda^s, so M is the smallest integer at least
/// 2 with that property (the original argument leaves M free, but M = 1
/// never satisfies the decay premise since gamma < 1). The series
/// then converges for q_bar below 1 + ln(1/lambda)/(M ln C_w); q_bar is
/// the midpoint, A = C_w^(M(q_bar-1)), c = (1 + A/(1 - A lambda))^(1/q_bar),
/// and the verified inequality on each cube Q_0 is
/// ((1/w(Q_0)) sum w^(1-q_bar) mu)^(1/q_bar) <= c mu(Q_0)/w(Q_0),
/// which in turn bounds the A_p constant by c^p for p = q_bar/(q_bar-1).
#[derive(Debug, Clone, Serialize)]
pub struct ApFromRhReport {
    pub admissible: bool,
    pub q_bar: f64,
    pub p: f64,
    pub c: f64,
    pub m_steps: f64,
    pub q_bar_max: f64,
    pub eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub rhq_dyadic: f64,
    pub dydbl_w: f64,
    pub neg_power_ok: bool,
    pub neg_power_witness: Option<String>,
    pub ap_dyadic: f64,
    pub ap_implied_bound: f64,
    pub ap_ok: bool,
}

pub fn rh_to_ap(space: &Space, w: &Weight, sys: &DyadicSystem, q: f64) -> Result<ApFromRhReport> {
    let abs = rh_absolute_continuity(space, w, sys, q)?;
    let wm = w.measure(space);
    let c_w = dyadic_doubling(sys, &wm);
    let ln_cw = c_w.ln();
    let (m_steps, q_bar_max) = if ln_cw > 0.0 {
        let m = (1.0 + (1.0 / abs.gamma).ln() / ln_cw).ceil().max(2.0);
        (m, 1.0 + (1.0 / abs.lambda).ln() / (m * ln_cw))
    } else {
        // A single-chain hierarchy: thresholds never grow, but the level
        // sets are empty from the start and any exponent works.
        (2.0, f64::INFINITY)
    };
    if !(q_bar_max > 1.0) {
        return Ok(ApFromRhReport {
            admissible: false,
            q_bar: f64::NAN,
            p: f64::NAN,
            c: f64::NAN,
            m_steps,
            q_bar_max,
            eps: abs.eps,
            gamma: abs.gamma,
            lambda: abs.lambda,
            rhq_dyadic: abs.rhq_dyadic,
            dydbl_w: c_w,
            neg_power_ok: false,
            neg_power_witness: Some("empty admissible exponent range".into()),
            ap_dyadic: f64::NAN,
            ap_implied_bound: f64::NAN,
            ap_ok: false,
        });
    }
    let q_bar = if q_bar_max.is_finite() { (1.0 + q_bar_max) / 2.0 } else { 2.0 };
    let a = c_w.powf(m_steps * (q_bar - 1.0));
    let c = (1.0 + a / (1.0 - a * abs.lambda)).powf(1.0 / q_bar);
    let p = q_bar / (q_bar - 1.0);

    let wv = w.values();
    let mut neg_power_ok = true;
    let mut neg_power_witness = None;
    for (k, cubes) in sys.levels() {
        for (ci, cube) in cubes.iter().enumerate() {
            let members = &cube.members;
            let w_q = pairwise_sum_by(0, members.len(), &|i| wm[members[i] as usize]);
            let mu_q = space.mu_set(members);
            let neg = pairwise_sum_by(0, members.len(), &|i| {
                let x = members[i] as usize;
                wv[x].powf(1.0 - q_bar) * space.mass(x)
            });
            let lhs = (neg / w_q).powf(1.0 / q_bar);
            let rhs = c * mu_q / w_q;
            if lhs > rhs * (1.0 + REL_TOL) {
                neg_power_ok = false;
                neg_power_witness.get_or_insert(format!(
                    "cube(level {k}, index {ci}): negative-power mean {lhs} exceeds {rhs}"
                ));
            }
        }
    }

    let ap = ap_constant(space, w, &Collection::Dyadic(sys), p)?.value;
    let ap_implied_bound = c.powf(p);
    Ok(ApFromRhReport {
        admissible: true,
        q_bar,
        p,
        c,
        m_steps,
        q_bar_max,
        eps: abs.eps,
        gamma: abs.gamma,
        lambda: abs.lambda,
        rhq_dyadic: abs.rhq_dyadic,
        dydbl_w: c_w,
        neg_power_ok,
        neg_power_witness,
        ap_dyadic: ap,
        ap_implied_bound,
        ap_ok: ap.is_finite() && ap <= ap_implied_bound * (1.0 + REL_TOL),
    })
}

/// log of a dyadic A_p weight lies in dyadic BMO: per-cube exponential
/// bounds (Jensen both ways) and the norm bound
/// [w] + (p-1) [w]^(1/(p-1)).
#[derive(Debug, Clone, Serialize)]
pub struct ApLogBmoReport {
    pub ap: f64,
    pub exp_pos_ok: bool,
    pub exp_neg_ok: bool,
    pub bmo_log: f64,
    pub bmo_bound: f64,
    pub bmo_ok: bool,
    pub witness: Option<String>,
}

pub fn ap_log_bmo(space: &Space, w: &Weight, sys: &DyadicSystem, p: f64) -> Result<ApLogBmoReport> {
    let coll = Collection::Dyadic(sys);
    let ap = ap_constant(space, w, &coll, p)?.value;
    let lam: Vec<f64> = w.log();
    let mut exp_pos_ok = true;
    let mut exp_neg_ok = true;
    let mut witness = None;
    for (k, cubes) in sys.levels() {
        for (ci, cube) in cubes.iter().enumerate() {
            let members = &cube.members;
            let lam_q = avg_over(space, members, &|x| lam[x]);
            let pos = avg_over(space, members, &|x| (lam[x] - lam_q).exp());
            if pos > ap * (1.0 + REL_TOL) {
                exp_pos_ok = false;
                witness.get_or_insert(format!(
                    "cube(level {k}, index {ci}): avg e^(log w - mean) = {pos} exceeds {ap}"
                ));
            }
            let neg = avg_over(space, members, &|x| ((lam_q - lam[x]) / (p - 1.0)).exp());
            let bound = ap.powf(1.0 / (p - 1.0));
            if neg > bound * (1.0 + REL_TOL) {
                exp_neg_ok = false;
                witness.get_or_insert(format!(
                    "cube(level {k}, index {ci}): avg e^((mean - log w)/(p-1)) = {neg} exceeds {bound}"
                ));
            }
        }
    }
    let bmo_log = bmo_norm(space, &lam, &coll)?.value;
    let bmo_bound = ap + (p - 1.0) * ap.powf(1.0 / (p - 1.0));
    Ok(ApLogBmoReport {
        ap,
        exp_pos_ok,
        exp_neg_ok,
        bmo_log,
        bmo_bound,
        bmo_ok: bmo_log <= bmo_bound * (1.0 + REL_TOL),
        witness,
    })
}

/// The full chain on one space: reverse-Hölder over balls, transfer to
/// each adjacent system, A_p on each system, log-BMO on each system, and
/// the final comparison of the ball BMO norm against the sum of dyadic
/// norms (whose constant has no closed form; the smallest empirical value
/// is reported).
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub rh_ball: f64,
    pub transfer: Vec<DyadicRhRow>,
    pub ap_steps: Vec<ApFromRhReport>,
    pub log_bmo_steps: Vec<ApLogBmoReport>,
    pub bmo_ball: f64,
    pub bmo_dyadic_sum: f64,
    pub empirical_c: f64,
}

pub fn log_bmo_pipeline(
    space: &Space,
    w: &Weight,
    adj: &AdjacentSystems,
    q: f64,
) -> Result<PipelineReport> {
    let rh_ball = rh_constant(space, w, &Collection::Balls(space), q)?.value;
    let transfer = rh_to_dyadic_rh(space, w, adj, q)?;
    if let Some(row) = transfer.iter().find(|r| !r.ok) {
        return Err(Error::BoundViolation {
            step: format!("dyadic reverse-Hölder transfer, system {}", row.system),
            measured: row.measured,
            bound: row.bound,
        });
    }
    let mut ap_steps = Vec::new();
    let mut log_bmo_steps = Vec::new();
    let mut bmo_dyadic_sum = 0.0f64;
    for (t, sys) in adj.systems.iter().enumerate() {
        let ap = rh_to_ap(space, w, sys, q)?;
        if !ap.admissible {
            return Err(Error::pre(
                "log_bmo_pipeline",
                format!("system {t}: empty admissible exponent range"),
            ));
        }
        if !(ap.neg_power_ok && ap.ap_ok) {
            return Err(Error::BoundViolation {
                step: format!("dyadic A_p from reverse-Hölder, system {t}"),
                measured: ap.ap_dyadic,
                bound: ap.ap_implied_bound,
            });
        }
        let lb = ap_log_bmo(space, w, sys, ap.p)?;
        if !(lb.exp_pos_ok && lb.exp_neg_ok && lb.bmo_ok) {
            return Err(Error::BoundViolation {
                step: format!("log-BMO from dyadic A_p, system {t}"),
                measured: lb.bmo_log,
                bound: lb.bmo_bound,
            });
        }
        bmo_dyadic_sum += lb.bmo_log;
        ap_steps.push(ap);
        log_bmo_steps.push(lb);
    }
    let bmo_ball = bmo_norm(space, &w.log(), &Collection::Balls(space))?.value;
    let empirical_c = if bmo_dyadic_sum > 0.0 { bmo_ball / bmo_dyadic_sum } else { 0.0 };
    Ok(PipelineReport {
        rh_ball,
        transfer,
        ap_steps,
        log_bmo_steps,
        bmo_ball,
        bmo_dyadic_sum,
        empirical_c,
    })
}

/// BMO over quasimetric balls versus BMO over balls of a comparable
/// metric. Both directions carry provable factors: going from metric
/// to quasimetric balls costs 2 * (metric doubling)^(1 + log2 Ceps^2);
/// the reverse costs 2 * (quasimetric doubling)^(1 + log2 Ceps^(2/eps))
/// because radii transform with the power 1/eps on the way back. The
/// factor with the quasimetric doubling constant and the Ceps^2 exponent
/// is also recorded for reference.
#[derive(Debug, Clone, Serialize)]
pub struct BmoEquivalenceReport {
    pub bmo_quasi: f64,
    pub bmo_metric: f64,
    pub forward_factor: f64,
    pub reverse_factor: f64,
    pub reference_factor: f64,
    pub forward_ok: bool,
    pub reverse_ok: bool,
    pub reference_ok: bool,
}

pub fn bmo_metric_equivalence(
    space: &Space,
    f: &[f64],
    m: &MetrizationResult,
) -> Result<BmoEquivalenceReport> {
    let metric_space = space.with_dist(m.d_eps.clone())?;
    let bmo_quasi = bmo_norm(space, f, &Collection::Balls(space))?.value;
    let bmo_metric = bmo_norm(&metric_space, f, &Collection::Balls(&metric_space))?.value;
    let a1 = doubling_constant(space, space.masses()).value;
    let a1_hat = doubling_constant(&metric_space, metric_space.masses()).value;
    let c2 = m.c_eps * m.c_eps;
    let forward_factor = 2.0 * a1_hat.powf(1.0 + c2.log2());
    let reverse_factor = 2.0 * a1.powf(1.0 + c2.powf(1.0 / m.epsilon).log2());
    let reference_factor = 2.0 * a1.powf(1.0 + c2.log2());
    let tol = 1.0 + REL_TOL;
    Ok(BmoEquivalenceReport {
        bmo_quasi,
        bmo_metric,
        forward_factor,
        reverse_factor,
        reference_factor,
        forward_ok: bmo_quasi <= forward_factor * bmo_metric * tol || bmo_metric == 0.0,
        reverse_ok: bmo_metric <= reverse_factor * bmo_quasi * tol || bmo_quasi == 0.0,
        reference_ok: bmo_quasi <= reference_factor * bmo_metric * tol || bmo_metric == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{build_adjacent_systems, build_system};

    fn line_space(n: usize) -> Space {
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (i as f64 - j as f64).abs();
            }
        }
        Space::from_tables(dist, vec![1.0; n]).unwrap()
    }

    fn two_point() -> Space {
        Space::from_tables(vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    /// Symmetric power weight (|x - center| + h)^a on a line.
    fn power_weight(n: usize, a: f64, h: f64) -> Weight {
        let c = (n as f64 - 1.0) / 2.0;
        Weight::new(
            (0..n)
                .map(|i| ((i as f64 - c).abs() + h).powf(a))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unit_weight_constants_are_one() {
        let s = line_space(16);
        let w = Weight::unit(16);
        let balls = Collection::Balls(&s);
        assert_eq!(ap_constant(&s, &w, &balls, 2.0).unwrap().value, 1.0);
        assert_eq!(rh_constant(&s, &w, &balls, 2.0).unwrap().value, 1.0);
        assert_eq!(bmo_norm(&s, &vec![5.0; 16], &balls).unwrap().value, 0.0);
    }

    #[test]
    fn two_point_oracles() {
        // Hand evaluation over the full two-point ball: A_2 of (1,2) is
        // (3/2)(3/4) = 9/8; RH_2 of (1,3) is sqrt(5)/2; BMO of (0,c) is
        // c/2. Singletons contribute 1, 1, and 0.
        let s = two_point();
        let balls = Collection::Balls(&s);
        let w = Weight::new(vec![1.0, 2.0]).unwrap();
        let ap = ap_constant(&s, &w, &balls, 2.0).unwrap().value;
        assert!((ap - 9.0 / 8.0).abs() < 1e-12);

        let w = Weight::new(vec![1.0, 3.0]).unwrap();
        let rh = rh_constant(&s, &w, &balls, 2.0).unwrap().value;
        assert!((rh - 5.0f64.sqrt() / 2.0).abs() < 1e-12);

        let c = 1.7;
        let b = bmo_norm(&s, &[0.0, c], &balls).unwrap().value;
        assert!((b - c / 2.0).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance_and_translation() {
        let s = line_space(12);
        let balls = Collection::Balls(&s);
        let w = power_weight(12, 1.0, 0.5);
        let cw = Weight::new(w.values().iter().map(|v| 7.3 * v).collect()).unwrap();
        let ap1 = ap_constant(&s, &w, &balls, 1.5).unwrap().value;
        let ap2 = ap_constant(&s, &cw, &balls, 1.5).unwrap().value;
        assert!((ap1 - ap2).abs() < 1e-9 * ap1);
        let rh1 = rh_constant(&s, &w, &balls, 3.0).unwrap().value;
        let rh2 = rh_constant(&s, &cw, &balls, 3.0).unwrap().value;
        assert!((rh1 - rh2).abs() < 1e-9 * rh1);

        let f: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let g: Vec<f64> = f.iter().map(|v| v + 4.2).collect();
        let h: Vec<f64> = f.iter().map(|v| -2.5 * v).collect();
        let bf = bmo_norm(&s, &f, &balls).unwrap().value;
        assert!((bf - bmo_norm(&s, &g, &balls).unwrap().value).abs() < 1e-12);
        assert!((2.5 * bf - bmo_norm(&s, &h, &balls).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn ap_nonincreasing_in_p_and_rh_nondecreasing_in_q() {
        let s = line_space(16);
        let balls = Collection::Balls(&s);
        let w = power_weight(16, 0.8, 1.0);
        let mut prev = f64::INFINITY;
        for p in [1.5, 2.0, 3.0, 5.0] {
            let v = ap_constant(&s, &w, &balls, p).unwrap().value;
            assert!(v <= prev * (1.0 + 1e-12));
            prev = v;
        }
        let mut prev = 0.0;
        for q in [1.5, 2.0, 3.0, 5.0] {
            let v = rh_constant(&s, &w, &balls, q).unwrap().value;
            assert!(v >= prev * (1.0 - 1e-12));
            prev = v;
        }
    }

    #[test]
    fn rh_grows_with_power_weight_exponent() {
        let s = line_space(17);
        let balls = Collection::Balls(&s);
        let mut prev = 0.0;
        for a in [0.0, 0.5, 1.0] {
            let w = power_weight(17, a, 1.0);
            let v = rh_constant(&s, &w, &balls, 2.0).unwrap().value;
            assert!(v >= prev * (1.0 - 1e-12), "a = {a}");
            prev = v;
        }
    }

    #[test]
    fn absolute_continuity_two_point_exhaustive() {
        let s = two_point();
        let sys = DyadicSystem::from_levels(
            &s,
            0.5,
            0,
            vec![vec![(0, vec![0, 1])], vec![(0, vec![0]), (1, vec![1])]],
        )
        .unwrap();
        let w = Weight::new(vec![1.0, 3.0]).unwrap();
        let rep = rh_absolute_continuity(&s, &w, &sys, 2.0).unwrap();
        assert_eq!(rep.eps, 0.5);
        assert!(rep.exhaustive);
        assert!(rep.holds_fractional, "{:?}", rep.witness);
        assert!(rep.holds_implication, "{:?}", rep.witness);
        assert!(rep.lambda > 0.0 && rep.lambda < 1.0);
    }

    #[test]
    fn absolute_continuity_unit_weight() {
        let s = line_space(8);
        let sys = build_system(&s, 1.0 / 12.0, 5, false).unwrap();
        let w = Weight::unit(8);
        let rep = rh_absolute_continuity(&s, &w, &sys, 2.0).unwrap();
        // K = 1: the fractional bound is equality, and lambda = 1 - 1/4.
        assert!(rep.holds_fractional);
        assert!(rep.holds_implication);
        assert!((rep.lambda - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dyadic_rh_transfer_on_line() {
        let s = line_space(32);
        let adj = build_adjacent_systems(&s, 3, 1.0 / 96.0, &[1, 2, 3], false).unwrap();
        for w in [Weight::unit(32), power_weight(32, 1.0, 1.0)] {
            let rows = rh_to_dyadic_rh(&s, &w, &adj, 2.0).unwrap();
            assert_eq!(rows.len(), 3);
            for r in rows {
                assert!(r.ok, "system {}: {} > {}", r.system, r.measured, r.bound);
                assert!(r.slack >= 0.0);
            }
        }
    }

    #[test]
    fn rh_to_ap_on_two_point() {
        let s = two_point();
        let sys = DyadicSystem::from_levels(
            &s,
            0.5,
            0,
            vec![vec![(0, vec![0, 1])], vec![(0, vec![0]), (1, vec![1])]],
        )
        .unwrap();
        let w = Weight::new(vec![1.0, 3.0]).unwrap();
        let rep = rh_to_ap(&s, &w, &sys, 2.0).unwrap();
        assert!(rep.admissible);
        assert!(rep.q_bar > 1.0 && rep.q_bar < rep.q_bar_max);
        assert!(rep.p > 1.0);
        assert!(rep.neg_power_ok, "{:?}", rep.neg_power_witness);
        assert!(rep.ap_ok, "A_p {} vs c^p {}", rep.ap_dyadic, rep.ap_implied_bound);
        // M must be large enough that C_w^(1-M) <= gamma.
        assert!(rep.dydbl_w.powf(1.0 - rep.m_steps) <= rep.gamma + 1e-12);
    }

    #[test]
    fn rh_to_ap_on_line_power_weight() {
        let s = line_space(32);
        let sys = build_system(&s, 1.0 / 12.0, 3, false).unwrap();
        let w = power_weight(32, 2.0, 1.0);
        let rep = rh_to_ap(&s, &w, &sys, 2.0).unwrap();
        assert!(rep.admissible);
        assert!(rep.neg_power_ok, "{:?}", rep.neg_power_witness);
        assert!(rep.ap_ok);
        // p decreases as q_bar grows along the admissible range.
        let p_of = |qb: f64| qb / (qb - 1.0);
        assert!(p_of(1.5) > p_of(2.0));
    }

    #[test]
    fn ap_log_bmo_bounds() {
        let s = two_point();
        let sys = DyadicSystem::from_levels(
            &s,
            0.5,
            0,
            vec![vec![(0, vec![0, 1])], vec![(0, vec![0]), (1, vec![1])]],
        )
        .unwrap();
        let unit = Weight::unit(2);
        let rep = ap_log_bmo(&s, &unit, &sys, 2.0).unwrap();
        assert_eq!(rep.bmo_log, 0.0);
        assert!(rep.bmo_ok && rep.exp_pos_ok && rep.exp_neg_ok);

        let w = Weight::new(vec![1.0, 3.0]).unwrap();
        let p = rh_to_ap(&s, &w, &sys, 2.0).unwrap().p;
        let rep = ap_log_bmo(&s, &w, &sys, p).unwrap();
        assert!(rep.exp_pos_ok && rep.exp_neg_ok, "{:?}", rep.witness);
        assert!(rep.bmo_ok, "log-BMO {} vs bound {}", rep.bmo_log, rep.bmo_bound);
    }

    #[test]
    fn pipeline_unit_weight() {
        let s = line_space(32);
        let adj = build_adjacent_systems(&s, 2, 1.0 / 96.0, &[4, 5], false).unwrap();
        let rep = log_bmo_pipeline(&s, &Weight::unit(32), &adj, 2.0).unwrap();
        assert_eq!(rep.bmo_ball, 0.0);
        assert_eq!(rep.empirical_c, 0.0);
    }

    #[test]
    fn pipeline_power_weight() {
        let s = line_space(64);
        let adj = build_adjacent_systems(&s, 3, 1.0 / 96.0, &[7, 8, 9], false).unwrap();
        let w = power_weight(64, 1.0, 1.0);
        let rep = log_bmo_pipeline(&s, &w, &adj, 2.0).unwrap();
        assert!(rep.bmo_ball > 0.0);
        assert!(rep.bmo_dyadic_sum > 0.0);
        assert!(rep.empirical_c.is_finite());
    }

    #[test]
    fn bmo_equivalence_on_snowflaked_line() {
        let s = {
            let mut dist = vec![0.0; 16 * 16];
            for i in 0..16 {
                for j in 0..16 {
                    dist[i * 16 + j] = ((i as f64 - j as f64).abs()).powi(2);
                }
            }
            Space::from_tables(dist, vec![1.0; 16]).unwrap()
        };
        let m = crate::metrization::chain_metric(s.dist_table(), 16, None).unwrap();
        let f: Vec<f64> = (0..16).map(|i| ((i + 1) as f64).ln()).collect();
        let rep = bmo_metric_equivalence(&s, &f, &m).unwrap();
        assert!(rep.forward_ok, "quasi {} metric {}", rep.bmo_quasi, rep.bmo_metric);
        assert!(rep.reverse_ok);
        assert!(rep.forward_factor >= 2.0 && rep.reverse_factor >= 2.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = two_point();
        let w = Weight::unit(2);
        let balls = Collection::Balls(&s);
        assert!(ap_constant(&s, &w, &balls, 1.0).is_err());
        assert!(rh_constant(&s, &w, &balls, 0.5).is_err());
        assert!(Weight::new(vec![1.0, 0.0]).is_err());
        assert!(Weight::new(vec![1.0, -2.0]).is_err());
    }
}
