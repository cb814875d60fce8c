mod common;

use common::{case, grid, line};
use gridflow::grid_model::GridLinAlg;
use gridflow::opf::{dc_flow_violation, kkt_residual, lmp_from_duals, node_params, solve_dcopf, DcOpfInstance, DEFAULT_CURVATURE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Balanced injection with zero sum.
fn balanced(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    p
}

#[test]
fn isf_flows_conserve_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [14, 118] {
        let g = grid(n);
        for _ in 0..20 {
            let p = balanced(g.n_buses(), &mut rng);
            let back = g.nodal_balance(&g.flows(&p));
            let err = back.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{n}-bus: {err:e}");
        }
    }
}

#[test]
fn per_unit_loads_and_limits() {
    let c = case(118);
    let total_pd: f64 = c.buses.iter().map(|b| b.pd).sum();
    // 4,242 MW of load in the PGLib 118-bus case
    assert!((total_pd * c.base_mva - 4242.0).abs() < 1e-6, "{}", total_pd * c.base_mva);
    let g = grid(118);
    assert!(g.lines().iter().all(|l| l.rate > 0.0 && l.rate < 100.0));
}

#[test]
fn base_case_solution_is_consistent() {
    let c = case(118);
    let g = grid(118);
    let nodes = node_params(&c, None, None, DEFAULT_CURVATURE).unwrap();
    let inst = DcOpfInstance::new(&g, &nodes).unwrap();
    let sol = solve_dcopf(&inst).unwrap();
    assert!(kkt_residual(&inst, &sol) < 1e-6);
    assert_eq!(lmp_from_duals(&sol, &g), sol.pi_star);
    assert_eq!(sol.pi_star[g.ref_index()], sol.lambda);
    assert!(dc_flow_violation(&sol.p_star, &g, &inst.f_max).total < 1e-9);
    let binding = sol.binding(&inst.f_max).iter().filter(|b| **b).count();
    assert!(binding > 0 && binding * 2 < g.n_lines());
}

fn ring(rates: [f64; 4], flip: bool) -> GridLinAlg {
    let (a, b) = if flip { (3, 0) } else { (0, 3) };
    GridLinAlg::from_lines(
        vec![1, 2, 3, 4],
        0,
        vec![line(0, 0, 1, 0.2, rates[0]), line(1, 1, 2, 0.3, rates[1]), line(2, 2, 3, 0.25, rates[2]), line(3, a, b, 0.4, rates[3])],
    )
    .unwrap()
}

fn ring_instance(g: &GridLinAlg) -> DcOpfInstance<'_> {
    DcOpfInstance {
        grid: g,
        a: vec![0.5, 1.0, 0.0, 0.0],
        b: vec![1.0, 3.0, 0.0, 0.0],
        p_min: vec![0.0, 0.0, -0.9, -0.7],
        p_max: vec![2.0, 2.0, -0.9, -0.7],
        f_max: g.lines().iter().map(|l| l.rate).collect(),
    }
}

#[test]
fn uncongested_prices_are_uniform() {
    let g = ring([9.0; 4], false);
    let sol = solve_dcopf(&ring_instance(&g)).unwrap();
    let spread = sol.pi_star.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - sol.pi_star.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    assert!(spread < 1e-6, "{:?}", sol.pi_star);
}

#[test]
fn prices_ignore_line_orientation() {
    let rates = [0.7, 0.9, 0.5, 0.9];
    let (g0, g1) = (ring(rates, false), ring(rates, true));
    let (s0, s1) = (solve_dcopf(&ring_instance(&g0)).unwrap(), solve_dcopf(&ring_instance(&g1)).unwrap());
    assert!(s0.binding(&ring_instance(&g0).f_max).iter().any(|b| *b));
    for (a, b) in s0.pi_star.iter().zip(&s1.pi_star) {
        assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", s0.pi_star, s1.pi_star);
    }
    assert!((s0.f_star[3] + s1.f_star[3]).abs() < 1e-6);
    assert!((s0.mu_bar[3] - s1.mu_under[3]).abs() < 1e-6 && (s0.mu_under[3] - s1.mu_bar[3]).abs() < 1e-6);
}

#[test]
fn violation_is_convex() {
    let g = grid(14);
    let limits: Vec<f64> = g.lines().iter().map(|l| l.rate * 0.3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let (p, q) = (balanced(14, &mut rng), balanced(14, &mut rng));
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let v = |x: &[f64]| dc_flow_violation(x, &g, &limits).total;
        assert!(v(&mid) <= 0.5 * (v(&p) + v(&q)) + 1e-12);
    }
}

