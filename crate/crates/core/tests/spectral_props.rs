use gridflow::case_io::{load_case, parse_matpower_case_with, ParseOptions};
use gridflow::grid_model::{apply_outage, build_linalg, rank_one_inverse_update, GridLinAlg};
use gridflow::spectral::{
    analyze_outage, choose_subspace_dim, eigendecompose_spd, separation_constants, subspace_distance, Norm,
};
use nalgebra::DMatrix;

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn grid(name: &str) -> GridLinAlg {
    build_linalg(&load_case(data(name)).unwrap()).unwrap()
}

fn sweep(g: &GridLinAlg) -> (usize, usize) {
    let basis = eigendecompose_spd(g.b_inv()).unwrap();
    let rel = (basis.reconstruct() - g.b_inv()).norm() / g.b_inv().norm();
    assert!(rel < 1e-8, "reconstruction error {rel}");
    let choice = choose_subspace_dim(&basis, 0.5);
    let c = separation_constants(&basis, choice.s).unwrap();
    let (mut checked, mut bridges) = (0, 0);
    for line in g.lines() {
        match analyze_outage(g, &basis, &c, &[line.branch]) {
            Ok(sc) => {
                assert!(sc.distance_fro <= sc.bound_fro.bound, "branch {}: {sc:?}", line.branch);
                assert!(sc.distance_l2 <= sc.bound_l2.bound, "branch {}: {sc:?}", line.branch);
                checked += 1;
            }
            Err(_) => bridges += 1,
        }
    }
    (checked, bridges)
}

#[test]
fn bound_dominates_distance_case14() {
    let (checked, _) = sweep(&grid("pglib_opf_case14_ieee.m"));
    assert!(checked > 10);
}

#[test]
fn bound_dominates_distance_case118() {
    let (checked, bridges) = sweep(&grid("pglib_opf_case118_ieee.m"));
    assert_eq!(checked + bridges, 186);
    assert!(checked > 150);
}

#[test]
fn rank_one_matches_rebuild_case118() {
    let g = grid("pglib_opf_case118_ieee.m");
    let mut n = 0;
    for line in g.lines() {
        let Ok(upd) = rank_one_inverse_update(&g, line.branch) else {
            assert!(apply_outage(&g, &[line.branch]).is_err());
            continue;
        };
        let direct = apply_outage(&g, &[line.branch]).unwrap().post_grid;
        let err = (&upd.updated_inverse - direct.b_inv()).norm();
        assert!(err < 1e-9, "branch {}: {err:e}", line.branch);
        n += 1;
    }
    assert!(n > 150);
}

#[test]
fn distance_is_rotation_invariant() {
    let g = grid("pglib_opf_case14_ieee.m");
    let basis = eigendecompose_spd(g.b_inv()).unwrap();
    let post = apply_outage(&g, &[g.lines()[3].branch]).unwrap().post_grid;
    let pb = eigendecompose_spd(post.b_inv()).unwrap();
    let (u, v) = (basis.leading(3), pb.leading(3));
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0., s, c, 0., 0., 0., 1.]);
    for norm in [Norm::Frobenius, Norm::Spectral] {
        let d0 = subspace_distance(&u, &v, norm).unwrap();
        let d1 = subspace_distance(&(&u * &rot), &v, norm).unwrap();
        assert!((d0 - d1).abs() < 1e-9);
        assert!((subspace_distance(&v, &u, norm).unwrap() - d0).abs() < 1e-12);
    }
}

#[test]
fn case300_with_abs_reactance() {
    let text = std::fs::read_to_string(data("pglib_opf_case300_ieee.m")).unwrap();
    let case = parse_matpower_case_with(&text, ParseOptions { abs_reactance: true }).unwrap();
    let g = build_linalg(&case).unwrap();
    assert_eq!(g.n_buses(), 300);
}
