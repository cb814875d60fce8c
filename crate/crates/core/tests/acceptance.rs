//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to the
//! real stdout (bypassing the test harness capture) before asserting.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::{case, check_gradients, data_path, grid, GradientFixture};
use gridflow::case_io::{parse_matpower_case_with, DatasetFile, ParseOptions};
use gridflow::experiments::{
    congestion_classify, top_binding_lines, topology_transfer, train, CongestionConfig, Samples,
    TrainConfig,
};
use gridflow::grid_model::{apply_outage, build_linalg, rank_one_inverse_update, GridLinAlg, Line};
use gridflow::nn::{save_model, FcnnModel, FrMode, GnnModel, HeadKind, Model};
use gridflow::opf::{
    generate_dataset, generate_dataset_on, solve_dcopf, DcOpfInstance, OpfError, SampleSpec, DC_FEATURES,
    FEATURE_NAMES,
};
use gridflow::spectral::{analyze_outage, choose_subspace_dim, eigendecompose_spd, separation_constants};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTHS: [usize; 6] = [4, 5, 10, 10, 5, 5];

fn verdict(criterion: usize, ok: bool, detail: &str) {
    let line = format!("{} criterion {criterion}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// 2,000 samples of the 118-bus case with ±15% per-bus loads.
fn dataset118() -> &'static DatasetFile {
    static DATA: OnceLock<DatasetFile> = OnceLock::new();
    DATA.get_or_init(|| generate_dataset(&case(118), &SampleSpec { n_samples: 2000, seed: 7, ..Default::default() }).unwrap())
}

fn dc_features() -> Vec<String> {
    DC_FEATURES.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// 1. solver against brute force

struct SmallInstance {
    grid: GridLinAlg,
    a: Vec<f64>,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    f_max: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> SmallInstance {
    let n = rng.gen_range(4..=6);
    let mut lines = Vec::new();
    let x = |rng: &mut ChaCha8Rng| rng.gen_range(0.1..1.0);
    // random spanning tree plus a couple of chords
    for i in 1..n {
        let j = rng.gen_range(0..i);
        let xi = x(rng);
        lines.push((j, i, xi));
    }
    for _ in 0..rng.gen_range(1..=2) {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j && !lines.iter().any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i)) {
            let xi = x(rng);
            lines.push((i, j, xi));
        }
    }
    let f_max: Vec<f64> = lines.iter().map(|_| rng.gen_range(0.15..0.8)).collect();
    let lines: Vec<Line> = lines
        .iter()
        .zip(&f_max)
        .enumerate()
        .map(|(k, (&(f, t, x), &rate))| Line { branch: k, from: f, to: t, x, y_mag: 1.0 / x, rate })
        .collect();
    let grid = GridLinAlg::from_lines((1..=n).collect(), 0, lines).unwrap();
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let flex = &nodes[..rng.gen_range(2..=3)];
    let (mut a, mut b, mut lo, mut hi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if flex.contains(&i) {
            a[i] = rng.gen_range(0.2..2.0);
            b[i] = rng.gen_range(0.0..3.0);
            hi[i] = rng.gen_range(0.8..1.5);
        } else {
            let load = -rng.gen_range(0.1..0.5);
            lo[i] = load;
            hi[i] = load;
        }
    }
    SmallInstance { grid, a, b, lo, hi, f_max }
}

struct OracleResult {
    objective: f64,
    binding: Vec<bool>,
}

/// Exhaustive search with step 1e-3 over all but the last flexible node; the
/// last one closes the power balance.
fn grid_search(inst: &SmallInstance) -> Option<OracleResult> {
    let step = 1e-3;
    let n = inst.grid.n_buses();
    let flex: Vec<usize> = (0..n).filter(|&i| inst.hi[i] > inst.lo[i]).collect();
    let s = inst.grid.isf();
    let fixed: Vec<f64> = (0..n).map(|i| if flex.contains(&i) { 0.0 } else { inst.lo[i] }).collect();
    let f_fixed: Vec<f64> = (0..inst.grid.n_lines()).map(|l| (0..n).map(|i| s[(l, i)] * fixed[i]).sum()).collect();
    let fixed_sum: f64 = fixed.iter().sum();
    let (free, last) = flex.split_at(flex.len() - 1);
    let last = last[0];
    let axis = |i: usize| -> Vec<f64> {
        let k = ((inst.hi[i] - inst.lo[i]) / step).round() as usize;
        (0..=k).map(|j| inst.lo[i] + j as f64 * step).collect()
    };
    let axes: Vec<Vec<f64>> = free.iter().map(|&i| axis(i)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut point = vec![0.0; free.len()];
    let mut visit = |pt: &[f64]| {
        let pl = -fixed_sum - pt.iter().sum::<f64>();
        if pl < inst.lo[last] - 1e-12 || pl > inst.hi[last] + 1e-12 {
            return;
        }
        let mut flows = f_fixed.clone();
        for (l, f) in flows.iter_mut().enumerate() {
            for (k, &i) in free.iter().enumerate() {
                *f += s[(l, i)] * pt[k];
            }
            *f += s[(l, last)] * pl;
            if f.abs() > inst.f_max[l] + 1e-12 {
                return;
            }
        }
        let obj = free.iter().zip(pt).map(|(&i, p)| inst.a[i] * p * p + inst.b[i] * p).sum::<f64>()
            + inst.a[last] * pl * pl
            + inst.b[last] * pl;
        if best.as_ref().map_or(true, |(o, _)| obj < *o) {
            best = Some((obj, flows));
        }
    };
    match axes.len() {
        1 => {
            for &p in &axes[0] {
                point[0] = p;
                visit(&point);
            }
        }
        _ => {
            for &p in &axes[0] {
                for &q in &axes[1] {
                    point[0] = p;
                    point[1] = q;
                    visit(&point);
                }
            }
        }
    }
    best.map(|(objective, flows)| OracleResult {
        objective,
        binding: flows.iter().zip(&inst.f_max).map(|(f, m)| f.abs() >= m - 2.5e-3).collect(),
    })
}

#[test]
fn criterion_1_solver_matches_grid_search() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut done, mut redrawn, mut worst_obj, mut mismatches, mut any_binding) = (0, 0, 0.0f64, Vec::new(), 0);
    while done < 50 {
        let inst = random_instance(&mut rng);
        let qp = DcOpfInstance {
            grid: &inst.grid,
            a: inst.a.clone(),
            b: inst.b.clone(),
            p_min: inst.lo.clone(),
            p_max: inst.hi.clone(),
            f_max: inst.f_max.clone(),
        };
        let sol = match solve_dcopf(&qp) {
            Ok(s) => s,
            Err(OpfError::Infeasible(_)) => {
                redrawn += 1;
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        // a line within the oracle's resolution of its limit cannot be
        // classified by a 1e-3 grid
        let ambiguous = sol.f_star.iter().zip(&inst.f_max).any(|(f, m)| {
            let slack = m - f.abs();
            slack > 1e-5 && slack < 5e-3
        });
        let Some(oracle) = (!ambiguous).then(|| grid_search(&inst)).flatten() else {
            redrawn += 1;
            continue;
        };
        done += 1;
        worst_obj = worst_obj.max((oracle.objective - sol.objective).abs());
        let binding = sol.binding(&inst.f_max);
        any_binding += binding.iter().any(|b| *b) as usize;
        if binding != oracle.binding {
            mismatches.push(format!("{binding:?} vs {:?}", oracle.binding));
        }
    }

    // KKT on every accepted sample of the 118-bus dataset, rebuilt from its features
    let data = dataset118();
    let g118 = grid(118);
    let d = FEATURE_NAMES.len();
    let col = |name: &str| FEATURE_NAMES.iter().position(|f| *f == name).unwrap();
    let mut worst_kkt = 0.0f64;
    let mut worst_label = 0.0f64;
    for r in 0..data.len() {
        let feat = data.features(r);
        let pick = |name: &str| (0..g118.n_buses()).map(|i| feat[i * d + col(name)]).collect::<Vec<f64>>();
        let qp = DcOpfInstance {
            grid: &g118,
            a: pick("a"),
            b: pick("b"),
            p_min: pick("pmin"),
            p_max: pick("pmax"),
            f_max: g118.lines().iter().map(|l| l.rate).collect(),
        };
        let sol = solve_dcopf(&qp).unwrap();
        worst_kkt = worst_kkt.max(sol.kkt_residual);
        let label = data.label_channel(r, "pi").unwrap();
        worst_label = worst_label.max(label.iter().zip(&sol.pi_star).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = worst_obj <= 1e-2 && mismatches.is_empty() && worst_kkt < 1e-6 && secs < 60.0;
    verdict(
        1,
        ok,
        &format!(
            "50 instances ({any_binding} congested, {redrawn} redrawn): max |Δobj| {worst_obj:.2e}, binding mismatches {}; \
             KKT max {worst_kkt:.2e} over {} dataset samples (label gap {worst_label:.1e}); {secs:.1}s",
            mismatches.len(),
            data.len()
        ),
    );
    assert!(ok, "{mismatches:?}");
}

// ---------------------------------------------------------------------------
// 2. rank-one inverse update

#[test]
fn criterion_2_rank_one_update() {
    let clock = Instant::now();
    let mut summary = Vec::new();
    let mut ok = true;
    for n in [14, 118] {
        let g = grid(n);
        let (mut checked, mut worst) = (0, 0.0f64);
        for line in g.lines() {
            let Ok(update) = rank_one_inverse_update(&g, line.branch) else {
                // only bridges are refused
                ok &= apply_outage(&g, &[line.branch]).is_err();
                continue;
            };
            let direct = apply_outage(&g, &[line.branch]).unwrap().post_grid;
            worst = worst.max((&update.updated_inverse - direct.b_inv()).norm());
            checked += 1;
        }
        ok &= worst <= 1e-9;
        summary.push(format!("{n}-bus {checked} outages max {worst:.1e}"));
    }
    let secs = clock.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    verdict(2, ok, &format!("{}; {secs:.1}s", summary.join(", ")));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Davis-Kahan bounds and the 118-bus constants

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

#[test]
fn criterion_3_davis_kahan() {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [14, 118] {
        let g = grid(n);
        let basis = eigendecompose_spd(g.b_inv()).unwrap();
        let s = choose_subspace_dim(&basis, 0.5).s;
        let c = separation_constants(&basis, s).unwrap();
        let (mut checked, mut violated) = (0, 0);
        for line in g.lines() {
            let Ok(sc) = analyze_outage(&g, &basis, &c, &[line.branch]) else { continue };
            checked += 1;
            if sc.distance_fro > sc.bound_fro.bound || sc.distance_l2 > sc.bound_l2.bound {
                violated += 1;
            }
        }
        ok &= violated == 0;
        parts.push(format!("{n}-bus s={s}: {violated}/{checked} violations"));
    }

    let g = grid(118);
    let basis = eigendecompose_spd(g.b_inv()).unwrap();
    let c = separation_constants(&basis, 10).unwrap();
    let delta_ok = within(c.delta, 0.03, 0.2);
    let delta_prime_ok = within(c.delta_prime, 0.14, 0.2);

    // double outages among the ten most frequently binding lines
    let samples = Samples::from_dataset(dataset118(), &dc_features()).unwrap();
    let rows: Vec<usize> = (0..samples.len()).collect();
    let top: Vec<usize> = top_binding_lines(&samples, &rows, 10).iter().map(|(l, _)| g.lines()[*l].branch).collect();
    let mut bounds = Vec::new();
    for (i, &a) in top.iter().enumerate() {
        for &b in &top[i + 1..] {
            if let Ok(sc) = analyze_outage(&g, &basis, &c, &[a, b]) {
                bounds.push(sc.bound_fro.bound);
            }
        }
    }
    let bound = median(&mut bounds);
    let bound_ok = within(bound, 28.38, 0.2);
    ok &= delta_ok && delta_prime_ok && bound_ok;
    verdict(
        3,
        ok,
        &format!(
            "{}; 118-bus s=10: δ {:.4} (target 0.03 ±20%: {}), δ′ {:.4} (target 0.14 ±20%: {}), \
             median Frobenius bound {bound:.2} over {} pairs (target 28.38 ±20%: {})",
            parts.join(", "),
            c.delta,
            if delta_ok { "ok" } else { "out of band" },
            c.delta_prime,
            if delta_prime_ok { "ok" } else { "out of band" },
            bounds.len(),
            if bound_ok { "ok" } else { "out of band" }
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. gradients

#[test]
fn criterion_4_gradient_suite() {
    let clock = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in [1, 2, 3] {
        let fx = GradientFixture::new(seed);
        let r = check_gradients(&fx);
        assert!(r.chain_value > 0.0);
        checked += r.checked;
        worst = worst.max(r.worst_ratio);
        failures.extend(r.failures);
    }
    // mask exterior: the fixture's pendant bus has no link to buses 0 and 1
    let fx = GradientFixture::new(4);
    let (_, _, grads) = fx.evaluate(&fx.model);
    let mut exterior_nonzero = 0;
    for t in 0..fx.model.layers.len() {
        let dense = common::dense_filter_grad(&fx.model, &grads[3 * t]);
        for (i, j) in [(0, 3), (3, 0), (1, 3), (3, 1)] {
            assert!(!fx.model.mask().contains(i, j));
            exterior_nonzero += (dense[(i, j)] != 0.0) as usize;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = failures.is_empty() && exterior_nonzero == 0 && secs < 30.0;
    verdict(
        4,
        ok,
        &format!(
            "{checked} parameter gradients, worst error/tolerance {worst:.3}, {} failures, \
             {exterior_nonzero} nonzero mask-exterior entries; {secs:.2}s",
            failures.len()
        ),
    );
    assert!(ok, "{failures:#?}");
}

// ---------------------------------------------------------------------------
// 5. parameter scaling

/// Least squares on the given basis columns; returns `1 − R²` and the
/// relative residual norm.
fn fit(cols: &[Vec<f64>], y: &[f64]) -> (f64, f64) {
    let a = nalgebra::DMatrix::from_fn(y.len(), cols.len(), |r, c| cols[c][r]);
    let yv = nalgebra::DVector::from_row_slice(y);
    let coef = a.clone().svd(true, true).solve(&yv, 1e-12).unwrap();
    let res = &yv - &a * coef;
    let mean = yv.mean();
    let ss_tot: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
    (res.norm_squared() / ss_tot, res.norm() / yv.norm())
}

#[test]
fn criterion_5_parameter_scaling() {
    let sizes = [14usize, 118, 300];
    let mut gnn = Vec::new();
    let mut fcnn = Vec::new();
    for n in sizes {
        let text = std::fs::read_to_string(data_path(&format!("pglib_opf_case{n}_ieee.m"))).unwrap();
        let c = parse_matpower_case_with(&text, ParseOptions { abs_reactance: n == 300 }).unwrap();
        let g = build_linalg(&c).unwrap();
        gnn.push(GnnModel::new(&g, &WIDTHS, HeadKind::PerNode(1), 0).unwrap());
        fcnn.push(FcnnModel::new(n, &WIDTHS, 1, 0).unwrap());
    }
    let nf: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let ones = vec![1.0; 3];
    let sq: Vec<f64> = nf.iter().map(|n| n * n).collect();
    let mut worst_gnn = (0.0f64, 0.0f64);
    let mut worst_fcnn = (0.0f64, 0.0f64);
    for t in 0..WIDTHS.len() - 1 {
        let y: Vec<f64> = gnn.iter().map(|m| m.layer_param_count(t) as f64).collect();
        let (u, r) = fit(&[ones.clone(), nf.clone()], &y);
        worst_gnn = (worst_gnn.0.max(u), worst_gnn.1.max(r));
        let y: Vec<f64> = fcnn.iter().map(|m| m.layer_param_count(t) as f64).collect();
        let (u, r) = fit(&[sq.clone(), nf.clone()], &y);
        worst_fcnn = (worst_fcnn.0.max(u), worst_fcnn.1.max(r));
    }
    let ratio = gnn[1].param_count() as f64 / fcnn[1].param_count() as f64;
    let ok = worst_gnn.0 < 0.01 && worst_fcnn.0 < 0.01 && ratio < 0.1;
    verdict(
        5,
        ok,
        &format!(
            "GNN per-layer affine fit 1−R² ≤ {:.2e} (relative residual ≤ {:.2e}); FCNN quadratic fit 1−R² ≤ {:.2e}; \
             118-bus GNN/FCNN ratio {ratio:.5} ({} vs {})",
            worst_gnn.0,
            worst_gnn.1,
            worst_fcnn.0,
            gnn[1].param_count(),
            fcnn[1].param_count()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6. desk-scale learning run

#[test]
fn criterion_6_learning_run() {
    let clock = Instant::now();
    let data = dataset118();
    let g = grid(118);
    let (mut plain, mut fr, mut nmse) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5 {
        for (mode, sink) in [(FrMode::None, &mut plain), (FrMode::Dc, &mut fr)] {
            let mut cfg = TrainConfig { seed, ..Default::default() };
            cfg.loss.fr_mode = mode;
            cfg.loss.gamma_fr = 1.0;
            let out = train(data, &g, &cfg).unwrap();
            if mode == FrMode::None {
                nmse.push(out.report.nmse_pi);
            }
            sink.push(out.report.feasibility_violation);
        }
    }
    let (mp, mf) = (median(&mut plain.clone()), median(&mut fr.clone()));
    let worst_nmse = nmse.iter().copied().fold(0.0, f64::max);
    let ok = worst_nmse <= 0.15 && mf < mp;
    verdict(
        6,
        ok,
        &format!(
            "GNN nmse_π max {worst_nmse:.4}; median violation GNN {mp:.3e} vs GNN+FR {mf:.3e} over 5 seeds; {:.0}s",
            clock.elapsed().as_secs_f64()
        ),
    );
    assert!(ok, "plain {plain:?} fr {fr:?}");
}

// ---------------------------------------------------------------------------
// 7. topology transfer

#[test]
fn criterion_7_topology_transfer() {
    let clock = Instant::now();
    let c118 = case(118);
    let g = grid(118);
    let data = dataset118();
    let base = train(data, &g, &TrainConfig::default()).unwrap();
    let original = base.report.nmse_pi;

    // disjoint pairs of frequently binding, non-bridge lines
    let samples = Samples::from_dataset(data, &dc_features()).unwrap();
    let rows: Vec<usize> = (0..samples.len()).collect();
    let top: Vec<usize> = top_binding_lines(&samples, &rows, 10).iter().map(|(l, _)| g.lines()[*l].branch).collect();
    let mut scenarios: Vec<[usize; 2]> = Vec::new();
    for (i, &a) in top.iter().enumerate() {
        for &b in &top[i + 1..] {
            if scenarios.len() < 3
                && !scenarios.iter().flatten().any(|x| *x == a || *x == b)
                && apply_outage(&g, &[a, b]).is_ok()
            {
                scenarios.push([a, b]);
            }
        }
    }
    assert_eq!(scenarios.len(), 3);

    // half the original sample count, regenerated on each post-outage grid
    let n_new = 1000;
    let cfg = TrainConfig { max_epochs: 10, ..Default::default() };
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, sc) in scenarios.iter().enumerate() {
        let new_data =
            generate_dataset_on(&c118, sc, &SampleSpec { n_samples: n_new, seed: 100 + k as u64, ..Default::default() }).unwrap();
        let t = topology_transfer(&base.model, &g, sc, &new_data, &cfg, Some(10)).unwrap();
        let r = &t.report;
        let a = r.pre_trained.nmse_pi.is_finite() && r.pre_trained.nmse_pi <= 5.0 * original;
        let b = r.re_trained.nmse_pi <= 1.5 * original && r.retrain_epochs <= 10;
        let c = r.re_trained.nmse_pi <= r.pre_trained.nmse_pi;
        ok &= a && b && c;
        parts.push(format!(
            "{}: pre {:.4} re {:.4} ({} epochs) [{}{}{}]",
            r.scenario,
            r.pre_trained.nmse_pi,
            r.re_trained.nmse_pi,
            r.retrain_epochs,
            if a { "a" } else { "-" },
            if b { "b" } else { "-" },
            if c { "c" } else { "-" }
        ));
    }
    verdict(
        7,
        ok,
        &format!("original nmse_π {original:.4}; {}; {:.0}s", parts.join("; "), clock.elapsed().as_secs_f64()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 8. congestion classification

#[test]
fn criterion_8_congestion() {
    let clock = Instant::now();
    // the price runs use 2,000 samples; the rare-event classifier gets 5,000
    let data = generate_dataset(&case(118), &SampleSpec { n_samples: 5000, seed: 7, ..Default::default() }).unwrap();
    let out = congestion_classify(&data, &grid(118), &CongestionConfig::default()).unwrap();
    let r = &out.report;
    let ok = r.recall >= 0.85 && r.f1 >= 0.75;
    verdict(
        8,
        ok,
        &format!(
            "top-{} lines: macro recall {:.4}, F1 {:.4}, accuracy {:.4} after {} epochs; {:.0}s",
            r.lines.len(),
            r.recall,
            r.f1,
            r.accuracy,
            r.epochs,
            clock.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 9. determinism and round trips

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let c14 = case(14);
    let g14 = build_linalg(&c14).unwrap();
    let spec = SampleSpec { n_samples: 200, seed: 3, ..Default::default() };
    let bytes = |d: &DatasetFile| {
        let mut v = Vec::new();
        d.write_to(&mut v).unwrap();
        v
    };
    let d1 = generate_dataset(&c14, &spec).unwrap();
    let d2 = generate_dataset(&c14, &spec).unwrap();
    let data_same = bytes(&d1) == bytes(&d2);
    let path = dir.path().join("d.csv");
    gridflow::case_io::write_dataset(&path, &d1).unwrap();
    let data_rt = bytes(&gridflow::case_io::read_dataset(&path).unwrap()) == bytes(&d1);

    let cfg = TrainConfig { max_epochs: 15, ..Default::default() };
    let runs: Vec<_> = (0..2).map(|_| train(&d1, &g14, &cfg).unwrap()).collect();
    let ck: Vec<Vec<u8>> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = dir.path().join(format!("m{i}.ckpt"));
            save_model(&p, &r.model).unwrap();
            std::fs::read(p).unwrap()
        })
        .collect();
    let ck_same = ck[0] == ck[1];
    let reports: Vec<String> = runs.iter().map(|r| serde_json::to_string(&r.report).unwrap()).collect();
    let report_same = reports[0] == reports[1];
    let loaded = gridflow::nn::load_model(&dir.path().join("m0.ckpt")).unwrap();
    let p2 = dir.path().join("again.ckpt");
    save_model(&p2, &loaded).unwrap();
    let ck_rt = std::fs::read(p2).unwrap() == ck[0];

    let text = std::fs::read_to_string(data_path("pglib_opf_case118_ieee.m")).unwrap();
    let parsed = gridflow::case_io::parse_matpower_case(&text).unwrap();
    let case_rt = gridflow::case_io::parse_matpower_case(&gridflow::case_io::write_matpower_case(&parsed)).unwrap() == parsed;

    let ok = data_same && data_rt && ck_same && report_same && ck_rt && case_rt;
    verdict(
        9,
        ok,
        &format!(
            "dataset regen {data_same}, dataset file {data_rt}, checkpoint regen {ck_same}, report regen {report_same}, \
             checkpoint file {ck_rt}, case file {case_rt}"
        ),
    );
    assert!(ok);
}
