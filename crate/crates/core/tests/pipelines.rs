//! Deterministic end-to-end runs crossing module boundaries: structure
//! scan to dyadic systems to weights on a snowflaked plane, metrization
//! recovery of the underlying metric, the quasisymmetric chain over
//! metric balls, and density recovery.

use homspace_core::czd::{basic_cover, vitali_cover};
use homspace_core::dyadic::{
    adjacent_cover_check, admissible_delta_adjacent, build_adjacent_systems,
};
use homspace_core::metrization::chain_metric;
use homspace_core::quasisym::{reimann_pipeline, JacobianKind, PointBijection};
use homspace_core::space::{radon_nikodym, structure_report, Ball, Space};
use homspace_core::weights::{log_bmo_pipeline, Weight};

/// 2D grid under the sup distance raised to the power beta, uniform mass.
fn snowflaked_grid(side: usize, beta: f64) -> Space {
    let n = side * side;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        let (xi, yi) = (i / side, i % side);
        for j in 0..n {
            let (xj, yj) = (j / side, j % side);
            let d = (xi as f64 - xj as f64)
                .abs()
                .max((yi as f64 - yj as f64).abs());
            dist[i * n + j] = d.powf(beta);
        }
    }
    Space::from_tables(dist, vec![1.0; n]).unwrap()
}

fn line_space(n: usize, masses: Vec<f64>) -> Space {
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = (i as f64 - j as f64).abs();
        }
    }
    Space::from_tables(dist, masses).unwrap()
}

/// The whole diagnostic chain on a snowflaked plane: structure constants,
/// an adjacent family of cube systems with full ball coverage, and the
/// weight chain from a reverse-Hölder class to a BMO bound for the
/// logarithm.
#[test]
fn snowflaked_plane_structure_to_log_bmo() {
    let beta = 1.5;
    let space = snowflaked_grid(5, beta);
    let rep = structure_report(&space);
    assert!(rep.a0 >= 1.0 && rep.a0 <= 2f64.powf(beta - 1.0) * (1.0 + 1e-9));
    assert!(rep.a1 >= 1.0);
    assert!(rep.tau_annuli.is_some());

    let adj = build_adjacent_systems(
        &space,
        2,
        admissible_delta_adjacent(rep.a0),
        &[11, 12],
        false,
    )
    .unwrap();
    let cover = adjacent_cover_check(&space, &adj);
    assert!(
        cover.coverage >= 0.99,
        "coverage {} ({} of {})",
        cover.coverage,
        cover.balls_covered,
        cover.balls_total
    );
    assert!(cover.c_adj <= cover.dilation_bound * (1.0 + 1e-9));

    // Radially growing weight; the chain reports must certify every
    // inequality or the call errors out.
    let w = Weight::new(
        (0..space.n())
            .map(|i| {
                let (x, y) = (i / 5, i % 5);
                let r2 = (x as f64 - 2.0).powi(2) + (y as f64 - 2.0).powi(2);
                (1.0 + r2).sqrt()
            })
            .collect(),
    )
    .unwrap();
    let rep = log_bmo_pipeline(&space, &w, &adj, 2.0).unwrap();
    assert!(rep.rh_ball >= 1.0);
    assert!(rep.transfer.iter().all(|row| row.ok));
    assert!(rep.empirical_c >= 0.0);
    assert!(rep.bmo_ball > 0.0);
}

/// The chain metric of a snowflaked line is the line itself: epsilon is
/// the reciprocal of the snowflake power and d_eps recovers the original
/// distances to relative accuracy.
#[test]
fn chain_metric_recovers_snowflaked_line() {
    for beta in [1.5, 2.0] {
        let n = 32;
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (i as f64 - j as f64).abs().powf(beta);
            }
        }
        let m = chain_metric(&dist, n, None).unwrap();
        assert!(
            (m.epsilon - 1.0 / beta).abs() <= 1e-12,
            "beta {beta}: epsilon {}",
            m.epsilon
        );
        for i in 0..n {
            for j in 0..n {
                let expect = (i as f64 - j as f64).abs();
                assert!(
                    (m.d_eps[i * n + j] - expect).abs() <= 1e-9 * expect.max(1.0),
                    "beta {beta}: d({i},{j}) = {}",
                    m.d_eps[i * n + j]
                );
            }
        }
    }
}

/// The quasisymmetric chain with the metric-ball Jacobian: on a metric
/// line the comparison space coincides with the source, and the whole
/// report must certify.
#[test]
fn quasisymmetric_chain_over_metric_balls() {
    let n = 33;
    let center = (n as f64 - 1.0) / 2.0;
    let pos: Vec<f64> = (0..n).map(|i| i as f64 - center).collect();
    let gamma = 1.5;
    let stretched: Vec<f64> = pos.iter().map(|p| p.signum() * p.abs().powf(gamma)).collect();
    let cell = |q: &[f64], i: usize| -> f64 {
        let lo = if i == 0 { q[0] } else { (q[i - 1] + q[i]) / 2.0 };
        let hi = if i == n - 1 { q[n - 1] } else { (q[i] + q[i + 1]) / 2.0 };
        (hi - lo).max(0.5)
    };
    let table = |q: &[f64]| -> Vec<f64> {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[i * n + j] = (q[i] - q[j]).abs();
            }
        }
        t
    };
    let src = Space::from_tables(table(&pos), (0..n).map(|i| cell(&pos, i)).collect()).unwrap();
    let tgt = Space::from_tables(
        table(&stretched),
        (0..n).map(|i| cell(&stretched, i)).collect(),
    )
    .unwrap();
    let bij = PointBijection::identity(n);
    let m = chain_metric(src.dist_table(), n, None).unwrap();
    assert_eq!(m.epsilon, 1.0);
    let adj = build_adjacent_systems(&src, 2, 1.0 / 96.0, &[41, 42], false).unwrap();
    let rep = reimann_pipeline(&bij, &src, &tgt, &m, &adj, JacobianKind::Metric, 8.0).unwrap();
    assert!(rep.chosen_eps.is_some());
    assert!(rep.pipeline.bmo_ball > 0.0);
    assert!(rep.additive_ok);
    assert!(rep.comparability.all_stated_ok);
    assert!(rep.comparability.all_reference_ok);
    assert!(rep.equivalence.forward_ok && rep.equivalence.reverse_ok);
}

/// Density recovery: a measure built from a known density against the
/// atom masses comes back exactly, with the subset identity verified
/// exhaustively on small spaces.
#[test]
fn radon_nikodym_recovers_density() {
    let masses: Vec<f64> = (0..10).map(|i| 1.0 + (i % 3) as f64 / 2.0).collect();
    let space = line_space(10, masses.clone());
    let density: Vec<f64> = (0..10).map(|i| 0.5 + (i as f64) / 4.0).collect();
    let nu: Vec<f64> = density.iter().zip(&masses).map(|(d, m)| d * m).collect();
    let rep = radon_nikodym(&space, &nu).unwrap();
    assert!(rep.exact);
    assert!(rep.max_abs_dev <= 1e-12);
    for (got, want) in rep.derivative.iter().zip(&density) {
        assert!((got - want).abs() <= 1e-12 * want);
    }
}

/// Covering lemmas on a concrete ball family: the greedy selection is
/// disjoint, meets every ball at half radius, and its dilations swallow
/// the union; the restricted variant covers the marked set.
#[test]
fn covering_lemmas_on_line() {
    let space = line_space(40, vec![1.0; 40]);
    let balls: Vec<Ball> = (0..40)
        .step_by(3)
        .map(|c| Ball::open(c, 2.0 + (c % 5) as f64))
        .collect();
    let rep = basic_cover(&space, &balls).unwrap();
    assert!(rep.all_ok(), "{:?}", rep.witness);
    assert!(!rep.selected.is_empty());

    // The restricted variant wants closed balls centered in the target
    // set, including one below the minimum separation per atom.
    let a_set: Vec<u32> = (5..25).collect();
    let mut family = Vec::new();
    for &a in &a_set {
        family.push(Ball::closed(a as usize, 0.5));
        family.push(Ball::closed(a as usize, 1.0 + (a % 4) as f64));
    }
    let rep = vitali_cover(&space, &a_set, &family).unwrap();
    assert!(rep.all_ok(), "{:?}", rep.witness);
}
