mod common;

use common::line;
use gridflow::grid_model::GridLinAlg;
use gridflow::nn::chain::{latent_chain_ac, latent_chain_dc, ChainGrid};
use gridflow::nn::{hard_projection, soft_projection, BatchCosts, Graph, Projection};
use gridflow::opf::{ac_apparent_flow, solve_dcopf, DcOpfInstance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

fn triangle() -> GridLinAlg {
    GridLinAlg::from_lines(vec![1, 2, 3], 0, vec![line(0, 0, 1, 1.0, 9.0), line(1, 1, 2, 1.0, 9.0), line(2, 0, 2, 1.0, 9.0)])
        .unwrap()
}

fn two_bus(rate: f64) -> GridLinAlg {
    GridLinAlg::from_lines(vec![1, 2], 0, vec![line(0, 0, 1, 0.1, rate)]).unwrap()
}

/// gen1 `g²` on [0, 2] at the reference, gen2 `2g²` on [0, 2] behind a unit
/// load, written in net-injection coordinates.
fn two_bus_costs() -> BatchCosts {
    BatchCosts { a: row(&[1.0, 2.0]), b: row(&[0.0, 4.0]), p_min: row(&[0.0, -1.0]), p_max: row(&[2.0, 1.0]) }
}

#[test]
fn triangle_angles_from_fixed_injections() {
    let cg = ChainGrid::new(&triangle());
    let fixed = [0.0, 1.0, -1.0];
    let costs = BatchCosts { a: row(&[0.0; 3]), b: row(&[0.0; 3]), p_min: row(&fixed), p_max: row(&fixed) };
    let mut g = Graph::new();
    let pi = g.leaf(row(&[5.0, 5.0, 5.0]));
    let vm = g.leaf(row(&[1.0, 1.0, 1.0]));
    let out = latent_chain_ac(&mut g, pi, vm, &cg, &costs, Projection::Hard).unwrap();
    let theta = g.value(out.theta);
    for (got, want) in theta.iter().zip([0.0, 1.0 / 3.0, -1.0 / 3.0]) {
        assert!((got - want).abs() < 1e-12, "{theta}");
    }
}

#[test]
fn uncongested_two_bus_plug_back() {
    let grid = two_bus(2.0);
    let costs = two_bus_costs();
    let inst = DcOpfInstance {
        grid: &grid,
        a: costs.a.iter().copied().collect(),
        b: costs.b.iter().copied().collect(),
        p_min: costs.p_min.iter().copied().collect(),
        p_max: costs.p_max.iter().copied().collect(),
        f_max: vec![2.0],
    };
    let sol = solve_dcopf(&inst).unwrap();
    for pi in &sol.pi_star {
        assert!((pi - 4.0 / 3.0).abs() < 1e-6);
    }
    let cg = ChainGrid::new(&grid);
    for mode in [Projection::Hard, Projection::Soft(100.0)] {
        let mut g = Graph::new();
        let pi = g.leaf(row(&sol.pi_star));
        let out = latent_chain_dc(&mut g, pi, &cg, &costs, mode).unwrap();
        let p = g.value(out.p);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-6 && (p[1] + 2.0 / 3.0).abs() < 1e-6, "{mode:?}: {p}");
        assert!((g.value(out.f)[0] - sol.f_star[0]).abs() < 1e-6);
        assert!((sol.f_star[0] - 2.0 / 3.0).abs() < 1e-6);
    }
}

#[test]
fn hard_projection_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let a = rng.gen_range(0.1..3.0);
        let b = rng.gen_range(-2.0..2.0);
        let pi = rng.gen_range(-5.0..8.0);
        let lo: f64 = rng.gen_range(-1.0..1.0);
        let hi = lo + rng.gen_range(0.1..2.0);
        // argmin of a p² + b p − π p over [lo, hi]
        let steps = ((hi - lo) / 1e-4).round() as usize;
        let best = (0..=steps)
            .map(|k| lo + (hi - lo) * k as f64 / steps as f64)
            .min_by(|x, y| (a * x * x + (b - pi) * x).total_cmp(&(a * y * y + (b - pi) * y)))
            .unwrap();
        assert!((hard_projection(pi, a, b, lo, hi) - best).abs() <= 1e-4);
    }
}

#[test]
fn soft_gap_shrinks_as_sharpness_doubles() {
    let grid: Vec<f64> = (0..=4000).map(|k| -2.0 + 10.0 * k as f64 / 4000.0).collect();
    let gap = |k: f64| grid.iter().map(|&pi| (soft_projection(pi, 1.0, 0.0, 0.0, 3.0, k) - hard_projection(pi, 1.0, 0.0, 0.0, 3.0)).abs()).fold(0.0, f64::max);
    let gaps: Vec<f64> = (0..8).map(|e| gap(10.0 * 2f64.powi(e))).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

fn central_diff(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
        let (mut p, mut m) = (x.clone(), x.clone());
        p[(r, c)] += h;
        m[(r, c)] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

fn assert_close(tape: &DMatrix<f64>, fd: &DMatrix<f64>) {
    for (a, b) in tape.iter().zip(fd.iter()) {
        assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3), "tape {tape} vs fd {fd}");
    }
}

#[test]
fn dc_chain_flow_sum_gradient() {
    let cg = ChainGrid::new(&triangle());
    let costs = BatchCosts { a: row(&[1.0, 0.5, 0.0]), b: row(&[0.2, 0.1, 0.0]), p_min: row(&[0.0, 0.0, -0.8]), p_max: row(&[1.0, 1.0, -0.8]) };
    let run = |pi: &DMatrix<f64>, grad: bool| {
        let mut g = Graph::new();
        let v = g.leaf(pi.clone());
        let out = latent_chain_dc(&mut g, v, &cg, &costs, Projection::Soft(20.0)).unwrap();
        let s = g.sum(out.f);
        if grad {
            g.backward(s).unwrap();
            (g.scalar(s), Some(g.grad(v).unwrap()))
        } else {
            (g.scalar(s), None)
        }
    };
    let pi = row(&[0.9, 0.6, 1.1]);
    let tape = run(&pi, true).1.unwrap();
    assert!(tape.iter().any(|v| v.abs() > 1e-3));
    assert_close(&tape, &central_diff(|x| run(x, false).0, &pi, 1e-5));
}

#[test]
fn ac_chain_apparent_flow_gradient_and_values() {
    let grid = triangle();
    let cg = ChainGrid::new(&grid);
    let costs = BatchCosts { a: row(&[1.0, 0.5, 0.0]), b: row(&[0.2, 0.1, 0.0]), p_min: row(&[0.0, 0.0, -0.8]), p_max: row(&[1.0, 1.0, -0.8]) };
    let run = |x: &DMatrix<f64>, grad: bool| {
        let mut g = Graph::new();
        let pi = g.leaf(x.columns(0, 3).into_owned());
        let vm = g.leaf(x.columns(3, 3).into_owned());
        let out = latent_chain_ac(&mut g, pi, vm, &cg, &costs, Projection::Soft(20.0)).unwrap();
        let (a, b) = (g.sum(out.s_from), g.sum(out.s_to));
        let s = g.add(a, b).unwrap();
        if grad {
            g.backward(s).unwrap();
            let gr = [g.grad(pi).unwrap(), g.grad(vm).unwrap()];
            let theta: Vec<f64> = g.value(out.theta).iter().copied().collect();
            let vm: Vec<f64> = g.value(vm).iter().copied().collect();
            let from: Vec<f64> = g.value(out.s_from).iter().copied().collect();
            let to: Vec<f64> = g.value(out.s_to).iter().copied().collect();
            (g.scalar(s), Some((gr, theta, vm, from, to)))
        } else {
            (g.scalar(s), None)
        }
    };
    let x = row(&[0.9, 0.6, 1.1, 1.02, 0.98, 1.01]);
    let (_, extra) = run(&x, true);
    let ([gp, gv], theta, vm, from, to) = extra.unwrap();
    let tape = DMatrix::from_fn(1, 6, |_, c| if c < 3 { gp[c] } else { gv[c - 3] });
    assert_close(&tape, &central_diff(|v| run(v, false).0, &x, 1e-5));

    // the tape flows agree with the plain apparent-flow formula
    let reference = ac_apparent_flow(&vm, &theta, &grid);
    for l in 0..3 {
        assert!((from[l] - reference.from_to[l]).abs() < 1e-12);
        assert!((to[l] - reference.to_from[l]).abs() < 1e-12);
    }
}
