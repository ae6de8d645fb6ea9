mod common;

use std::sync::Arc;

use aggtrack::algorithm::{AlgorithmParams, SimOptions, SimulationRun};
use aggtrack::costs::{HuberTrackingCost, LinearAggregation, QuadraticCost};
use aggtrack::graph::Network;
use aggtrack::linalg::{consensus_error, Matrix};
use aggtrack::metrics::{cumulative_violation_bound, violation_bound};
use aggtrack::problem::{AgentProblem, FnStream, LocalCost, ProblemInstant, ProblemStream};
use aggtrack::projection::ConvexSet;
use aggtrack::scenarios::quadratic::{Drift, QuadraticConfig, QuadraticFamily};
use aggtrack::scenarios::GraphConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim)
}

/// A box intersected with one halfspace through a point of the box, so the
/// intersection is never empty.
fn box_and_halfspace(dim: usize) -> impl Strategy<Value = ConvexSet<f64>> {
    (point(dim), prop::collection::vec(0.1..5.0f64, dim), point(dim), 0.0..1.0f64).prop_map(
        move |(center, half, mut normal, frac)| {
            if normal.iter().all(|v| v.abs() < 1e-3) {
                normal[0] = 1.0;
            }
            let lower: Vec<f64> = center.iter().zip(&half).map(|(c, h)| c - h).collect();
            let upper: Vec<f64> = center.iter().zip(&half).map(|(c, h)| c + h).collect();
            let inside: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| l + frac * (u - l)).collect();
            let offset = dot(&normal, &inside);
            ConvexSet::intersection(vec![
                ConvexSet::boxed(lower, upper).unwrap(),
                ConvexSet::halfspace(normal, offset).unwrap(),
            ])
            .unwrap()
        },
    )
}

/// Box and two halfspaces with a common interior point, projected by Dykstra.
fn three_member_set() -> impl Strategy<Value = ConvexSet<f64>> {
    (box_and_halfspace(2), point(2), 0.5..2.0f64).prop_map(|(set, mut normal, margin)| {
        let ConvexSet::Intersection(mut members) = set else { unreachable!() };
        let ConvexSet::Box { lower, upper } = &members[0] else { unreachable!() };
        if normal.iter().all(|v| v.abs() < 1e-3) {
            normal[1] = 1.0;
        }
        let center: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let offset = dot(&normal, &center) + margin;
        if let ConvexSet::Halfspace { normal: n1, offset: o1 } = &mut members[1] {
            *o1 = dot(n1, &center) + margin;
        }
        members.push(ConvexSet::halfspace(normal, offset).unwrap());
        ConvexSet::Intersection(members)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_lands_in_set_and_is_idempotent(set in box_and_halfspace(3), p in point(3)) {
        let x = set.project(&p).unwrap();
        prop_assert!(set.contains(&x, 1e-7).unwrap());
        let again = set.project(&x).unwrap();
        prop_assert!(dist(&x, &again) <= 1e-7);
    }

    #[test]
    fn projection_is_nonexpansive(set in box_and_halfspace(3), p in point(3), q in point(3)) {
        let (a, b) = (set.project(&p).unwrap(), set.project(&q).unwrap());
        prop_assert!(dist(&a, &b) <= dist(&p, &q) + 1e-7);
    }

    #[test]
    fn projection_satisfies_variational_inequality(set in box_and_halfspace(2), p in point(2), z in point(2)) {
        // (p − P(p))·(w − P(p)) ≤ 0 for every w in the set
        let x = set.project(&p).unwrap();
        let w = set.project(&z).unwrap();
        let r: Vec<f64> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&r, &v) <= 1e-6 * (1.0 + dist(&p, &x) * dist(&w, &x)));
    }

    #[test]
    fn dykstra_projection_is_correct_or_reports_failure(set in three_member_set(), p in point(2), z in point(2)) {
        // narrow wedges may exhaust the sweep budget; a wrong point never comes back
        match (set.project(&p), set.project(&z)) {
            (Ok(x), Ok(w)) => {
                prop_assert!(set.contains(&x, 1e-7).unwrap());
                let r: Vec<f64> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
                let v: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a - b).collect();
                prop_assert!(dot(&r, &v) <= 1e-6 * (1.0 + dist(&p, &x) * dist(&w, &x)));
            }
            (a, b) => {
                for e in [a.err(), b.err()].into_iter().flatten() {
                    prop_assert!(matches!(e, aggtrack::Error::NonConvergent { .. }), "{e:?}");
                }
            }
        }
    }

    #[test]
    fn dykstra_converges_on_well_separated_normals(set in three_member_set(), p in point(2)) {
        let ConvexSet::Intersection(m) = &set else { unreachable!() };
        let normals: Vec<&Vec<f64>> = m.iter().filter_map(|s| match s {
            ConvexSet::Halfspace { normal, .. } => Some(normal),
            _ => None,
        }).collect();
        let cos = dot(normals[0], normals[1]) / (dot(normals[0], normals[0]) * dot(normals[1], normals[1])).sqrt();
        prop_assume!(cos > -0.9);
        let x = set.project(&p).unwrap();
        prop_assert!(set.contains(&x, 1e-7).unwrap());
    }

    #[test]
    fn box_projection_is_clamping(p in point(4), lo in point(4), width in prop::collection::vec(0.0..3.0f64, 4)) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let set = ConvexSet::boxed(lo.clone(), hi.clone()).unwrap();
        let x = set.project(&p).unwrap();
        for k in 0..4 {
            prop_assert_eq!(x[k], p[k].clamp(lo[k], hi[k]));
        }
    }

    #[test]
    fn metropolis_weights_are_doubly_stochastic(n in 2usize..12, kind in 0u8..4, seed in any::<u64>()) {
        let graph = match kind {
            0 => GraphConfig::Ring,
            1 => GraphConfig::Path,
            2 => GraphConfig::Complete,
            _ => GraphConfig::ErdosRenyi { p: 0.4, seed },
        };
        let net: Network<f64> = graph.build(n).unwrap();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| net.weight(i, j)).sum();
            let col: f64 = (0..n).map(|j| net.weight(j, i)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!(net.weight(i, j) >= 0.0);
                prop_assert_eq!(net.weight(i, j), net.weight(j, i));
                if i != j && !net.is_neighbor(i, j) {
                    prop_assert_eq!(net.weight(i, j), 0.0);
                }
            }
        }
        let centered = DMatrix::from_fn(n, n, |r, c| net.weight(r, c) - 1.0 / n as f64);
        let rho = centered.singular_values().max();
        prop_assert!(rho < 1.0);
        prop_assert!((net.rho() - rho).abs() < 1e-8, "{} vs {}", net.rho(), rho);
    }

    #[test]
    fn quadratic_gradients_match_finite_differences(
        x in point(3), sigma in point(2), seed in 0u64..1000,
    ) {
        let fam = QuadraticFamily::random(
            &QuadraticConfig { n_agents: 3, dim: 3, agg_dim: 2, ..QuadraticConfig::default() },
            5,
            seed,
        ).unwrap();
        let instant = fam.instant(2);
        let cost = &instant.agent(0).cost;
        check_partials(&**cost, &x, &sigma, 1e-6 * (1.0 + x.iter().chain(&sigma).map(|v| v.abs()).fold(0.0, f64::max).powi(2)))?;
    }

    #[test]
    fn huber_gradients_match_finite_differences(x in point(2), sigma in point(2), anchor in point(2)) {
        let cost = HuberTrackingCost { anchor, target: vec![0.5, -0.5], weight: 2.0, radius: 1e-1 };
        check_partials(&cost, &x, &sigma, 1e-5)?;
    }

    #[test]
    fn global_gradient_matches_finite_differences(seed in 0u64..1000, t in 0usize..50) {
        let fam = QuadraticFamily::random(
            &QuadraticConfig { n_agents: 4, dim: 2, agg_dim: 2, ..QuadraticConfig::default() },
            60,
            seed,
        ).unwrap();
        let instant = fam.instant(t);
        let x = fam.random_start(seed + 1);
        let g = instant.global_grad(&x).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            for k in 0..x[i].len() {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i][k] += h;
                dn[i][k] -= h;
                let fd = (instant.global_cost(&up).unwrap() - instant.global_cost(&dn).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i][k]).abs() <= 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[i][k]);
            }
        }
    }

    #[test]
    fn violation_bounds_match_sums(gamma in 0.0..5.0f64, n in 1usize..50, delta in 0.01..1.0f64, horizon in 0usize..300) {
        let direct = |t: usize| gamma * n as f64 * (0..t).map(|k| (1.0 - delta).powi(k as i32)).sum::<f64>();
        prop_assert!((violation_bound(gamma, n, delta, horizon) - direct(horizon)).abs() <= 1e-9 * (1.0 + direct(horizon)));
        let total: f64 = (1..=horizon).map(direct).sum();
        let closed = cumulative_violation_bound(gamma, n, delta, horizon);
        prop_assert!((closed - total).abs() <= 1e-8 * (1.0 + total), "{closed} vs {total}");
        prop_assert!(closed >= 0.0);
    }

    #[test]
    fn tracking_mean_is_preserved(seed in 0u64..500, alpha in 0.05..1.0f64, delta in 0.05..1.0f64) {
        // with a static problem and no drift the mean of s equals σ(x) every round
        let cfg = QuadraticConfig {
            n_agents: 5,
            drift: Drift::default(),
            box_half_width: Some(0.5),
            ..QuadraticConfig::default()
        };
        let fam = QuadraticFamily::random(&cfg, 100, seed).unwrap();
        let l1 = fam.constants().unwrap().l1;
        let net = cfg.graph.build(5).unwrap();
        let params = AlgorithmParams::new(alpha / l1, delta, 0).unwrap();
        let mut sim = SimulationRun::init(&net, &fam, params, fam.random_start(seed), SimOptions::default()).unwrap();
        for _ in 0..100 {
            let t = sim.round();
            let rec = sim.step().unwrap();
            let (es, ey) = common::tracking_deviation(&rec, &fam.instant(t));
            prop_assert!(es < 1e-10 && ey < 1e-10, "t = {t}: {es:e} {ey:e}");
        }
    }
}

fn check_partials(cost: &dyn LocalCost<f64>, x: &[f64], sigma: &[f64], tol: f64) -> Result<(), TestCaseError> {
    let h = 1e-6;
    let gx = cost.grad_x(x, sigma);
    let gs = cost.grad_sigma(x, sigma);
    for k in 0..x.len() {
        let (mut up, mut dn) = (x.to_vec(), x.to_vec());
        up[k] += h;
        dn[k] -= h;
        let fd = (cost.value(&up, sigma) - cost.value(&dn, sigma)) / (2.0 * h);
        prop_assert!((fd - gx[k]).abs() <= tol, "d/dx{k}: {fd} vs {}", gx[k]);
    }
    for k in 0..sigma.len() {
        let (mut up, mut dn) = (sigma.to_vec(), sigma.to_vec());
        up[k] += h;
        dn[k] -= h;
        let fd = (cost.value(x, &up) - cost.value(x, &dn)) / (2.0 * h);
        prop_assert!((fd - gs[k]).abs() <= tol, "d/ds{k}: {fd} vs {}", gs[k]);
    }
    Ok(())
}

/// Two scalar agents with quadratic costs, in any precision.
fn two_agent_stream<T: aggtrack::Scalar>() -> impl ProblemStream<T> {
    FnStream::fixed(2, 400, |_t| {
        let agent = |anchor: f64| AgentProblem {
            cost: Arc::new(QuadraticCost::tracking(vec![T::lit(anchor)], T::lit(1.0), vec![T::lit(0.5)])),
            aggregation: Arc::new(LinearAggregation::new(Matrix::identity(1), vec![T::zero()])),
            feasible: ConvexSet::boxed(vec![T::lit(-1.0)], vec![T::lit(1.0)]).unwrap(),
            constraint: None,
        };
        ProblemInstant::new(vec![agent(2.0), agent(-3.0)]).unwrap()
    })
}

fn limit<T: aggtrack::Scalar>() -> Vec<f64> {
    let net = Network::<T>::metropolis(2, &[(0, 1)]).unwrap();
    let stream = two_agent_stream::<T>();
    let params = AlgorithmParams::new(T::lit(0.3), T::lit(0.5), 0).unwrap();
    let x0 = vec![vec![T::zero()], vec![T::zero()]];
    let mut sim = SimulationRun::init(&net, &stream, params, x0, SimOptions::default()).unwrap();
    sim.run_horizon(400).unwrap();
    sim.x().iter().map(|b| b[0].to_f64().unwrap()).collect()
}

#[test]
fn single_and_double_precision_agree() {
    let a = limit::<f64>();
    let b = limit::<f32>();
    assert!(dist(&a, &b) < 1e-4, "{a:?} vs {b:?}");
    // stationarity of ½(x₁−2)² + ½(x₂+3)² + ¼·2·((x₁+x₂)/2 − ½)²
    let qp = |x: &[f64]| [x[0] - 2.0 + 0.5 * ((x[0] + x[1]) / 2.0 - 0.5), x[1] + 3.0 + 0.5 * ((x[0] + x[1]) / 2.0 - 0.5)];
    let g = qp(&a);
    // active box: x₁ = 1 with negative gradient, x₂ = −1 with positive gradient
    assert!((a[0] - 1.0).abs() < 1e-9 && g[0] < 0.0);
    assert!((a[1] + 1.0).abs() < 1e-9 && g[1] > 0.0);
}

#[test]
fn consensus_error_of_identical_blocks_is_zero() {
    let b = vec![vec![1.5, -2.0]; 4];
    assert_eq!(consensus_error(&b), 0.0);
}
