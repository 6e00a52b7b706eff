//! Model-space generators: line and planar grids, snowflaked variants,
//! Cantor dusts, and seeded random clouds. Every generator is a pure
//! function of its parameters, so a scenario rebuilds the same space
//! byte for byte.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use homspace_core::space::Space;

/// Which distance a planar grid carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    #[default]
    Sup,
    Euclid,
}

/// Generator kinds. Sizes are capped so the cubic envelope scans and the
/// quadratic ball scans stay interactive: at most 1024 atoms overall.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceKind {
    Grid1d {
        n: usize,
    },
    Grid2d {
        n: usize,
        #[serde(default)]
        metric: GridMetric,
    },
    /// Distances of the base space raised entrywise to the power beta.
    Snowflake {
        base: Box<SpaceKind>,
        beta: f64,
    },
    /// Left endpoints of the level-`level` middle-cut Cantor construction
    /// with contraction `ratio` (2^level atoms in [0, 1]).
    Cantor {
        level: u32,
        ratio: f64,
    },
    /// Uniform cloud in [0, 1]^dim under the Euclidean distance.
    RandomDoubling {
        n: usize,
        dim: usize,
        seed: u64,
    },
}

/// How the atoms are weighted.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MassSpec {
    #[default]
    Counting,
    Values(Vec<f64>),
}

/// A generated space together with the facts the generator knows by
/// construction: the pre-snowflake table and exponent, the quasitriangle
/// constant implied by the exponent, and 1D coordinates when the point
/// set is a line (used by coordinate weights and stretch maps).
#[derive(Debug, Clone)]
pub struct Generated {
    pub space: Space,
    pub label: String,
    pub base_dist: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub expected_a0: Option<f64>,
    pub positions: Option<Vec<f64>>,
}

const MAX_ATOMS: usize = 1024;

fn dist_from_coords(coords: &[Vec<f64>], metric: GridMetric) -> Vec<f64> {
    let n = coords.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = match metric {
                GridMetric::Sup => coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max),
                GridMetric::Euclid => coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            };
            dist[i * n + j] = d;
        }
    }
    dist
}

fn check_size(label: &str, n: usize) -> anyhow::Result<()> {
    if n < 2 || n > MAX_ATOMS {
        anyhow::bail!("{label}: {n} atoms outside the supported range 2..={MAX_ATOMS}");
    }
    Ok(())
}

/// Build the distance table, label, and construction facts for a kind.
fn build_kind(kind: &SpaceKind) -> anyhow::Result<(Vec<f64>, usize, Generated0)> {
    match kind {
        SpaceKind::Grid1d { n } => {
            check_size("grid1d", *n)?;
            // Centered coordinates: the grid is symmetric about 0, which
            // gives odd stretch maps and radial weights a natural origin.
            let center = (*n as f64 - 1.0) / 2.0;
            let pos: Vec<f64> = (0..*n).map(|i| i as f64 - center).collect();
            let coords: Vec<Vec<f64>> = pos.iter().map(|&p| vec![p]).collect();
            Ok((
                dist_from_coords(&coords, GridMetric::Sup),
                *n,
                Generated0 {
                    label: format!("grid1d({n})"),
                    positions: Some(pos),
                },
            ))
        }
        SpaceKind::Grid2d { n, metric } => {
            check_size("grid2d side", *n)?;
            let total = n * n;
            check_size("grid2d", total)?;
            let coords: Vec<Vec<f64>> = (0..total)
                .map(|i| vec![(i / n) as f64, (i % n) as f64])
                .collect();
            Ok((
                dist_from_coords(&coords, *metric),
                total,
                Generated0 {
                    label: format!("grid2d({n}x{n},{metric:?})"),
                    positions: None,
                },
            ))
        }
        SpaceKind::Snowflake { base, beta } => {
            if !(*beta >= 1.0 && beta.is_finite()) {
                anyhow::bail!("snowflake: beta = {beta} must be at least 1");
            }
            if matches!(**base, SpaceKind::Snowflake { .. }) {
                anyhow::bail!("snowflake: base must be a metric kind");
            }
            let (base_dist, n, info) = build_kind(base)?;
            let dist: Vec<f64> = base_dist.iter().map(|d| d.powf(*beta)).collect();
            Ok((
                dist,
                n,
                Generated0 {
                    label: format!("snowflake({},beta={beta})", info.label),
                    positions: info.positions,
                },
            ))
        }
        SpaceKind::Cantor { level, ratio } => {
            if !(*ratio > 0.0 && *ratio < 0.5) {
                anyhow::bail!("cantor: ratio = {ratio} must lie in (0, 1/2)");
            }
            if *level < 1 || *level > 10 {
                anyhow::bail!("cantor: level = {level} outside 1..=10");
            }
            let n = 1usize << level;
            check_size("cantor", n)?;
            // Left endpoints: each surviving interval of length s splits
            // into [a, a + ratio s] and [a + (1 - ratio) s, a + s].
            let mut pos = Vec::with_capacity(n);
            for idx in 0..n {
                let mut a = 0.0f64;
                let mut s = 1.0f64;
                for bit in (0..*level).rev() {
                    if idx >> bit & 1 == 1 {
                        a += (1.0 - ratio) * s;
                    }
                    s *= ratio;
                }
                pos.push(a);
            }
            let coords: Vec<Vec<f64>> = pos.iter().map(|&p| vec![p]).collect();
            Ok((
                dist_from_coords(&coords, GridMetric::Sup),
                n,
                Generated0 {
                    label: format!("cantor({level},{ratio})"),
                    positions: Some(pos),
                },
            ))
        }
        SpaceKind::RandomDoubling { n, dim, seed } => {
            check_size("random_doubling", *n)?;
            if *dim < 1 || *dim > 3 {
                anyhow::bail!("random_doubling: dim = {dim} outside 1..=3");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let coords: Vec<Vec<f64>> = (0..*n)
                .map(|i| {
                    let mut c: Vec<f64> = (0..*dim).map(|_| rng.gen::<f64>()).collect();
                    // Deterministic tie-break: coincident draws would make
                    // an invalid (zero off-diagonal) distance table.
                    c[0] += i as f64 * 1e-9;
                    c
                })
                .collect();
            Ok((
                dist_from_coords(&coords, GridMetric::Euclid),
                *n,
                Generated0 {
                    label: format!("random_doubling({n},dim={dim},seed={seed})"),
                    positions: None,
                },
            ))
        }
    }
}

struct Generated0 {
    label: String,
    positions: Option<Vec<f64>>,
}

/// Build the space for a kind with counting or supplied masses.
pub fn gen_space(kind: &SpaceKind, masses: &MassSpec) -> anyhow::Result<Generated> {
    let (dist, n, info) = build_kind(kind)?;
    let mass = match masses {
        MassSpec::Counting => vec![1.0; n],
        MassSpec::Values(v) => {
            if v.len() != n {
                anyhow::bail!("masses: got {} values for {n} atoms", v.len());
            }
            v.clone()
        }
    };
    let (base_dist, beta, expected_a0) = match kind {
        SpaceKind::Snowflake { base, beta } => {
            let (bd, _, _) = build_kind(base)?;
            (Some(bd), Some(*beta), Some(2f64.powf(beta - 1.0)))
        }
        _ => (None, None, None),
    };
    let space = Space::from_tables(dist, mass).map_err(|e| anyhow::anyhow!("{}: {e}", info.label))?;
    Ok(Generated {
        space,
        label: info.label,
        base_dist,
        beta,
        expected_a0,
        positions: info.positions,
    })
}
