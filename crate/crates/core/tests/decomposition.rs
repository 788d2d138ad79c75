use lti_viab::matrix::{from_rows, max_abs, norm, Mat, NormKind};
use lti_viab::riccati::*;
use lti_viab::system::{cart, example_4d, example_6d, random_two_time_scale, LtiSystem};
use rand::SeedableRng;

fn assert_entries_close(got: &Mat, want: &Mat, tol: f64) {
    assert_eq!(got.shape(), want.shape());
    for r in 0..got.nrows() {
        for c in 0..got.ncols() {
            let d = (got[(r, c)] - want[(r, c)]).abs();
            assert!(
                d <= tol,
                "entry ({r},{c}): got {} want {} (|diff| {d:.2e})",
                got[(r, c)],
                want[(r, c)]
            );
        }
    }
}

pub fn cart_expected() -> (Mat, Mat) {
    (
        from_rows(&[
            &[0.0, 0.9524, 0.0, 0.0],
            &[0.3920, 0.0, 0.0, 0.0],
            &[0.0, 0.1429, 0.0, 1.0500],
            &[0.0, 0.0, 0.2800, 0.0],
        ]),
        from_rows(&[&[0.0], &[-0.0033], &[0.0], &[0.0]]),
    )
}

#[test]
fn cart_matches_reference_transform() {
    let ps = PartitionedSystem::new(cart(), 2).unwrap();
    let r = decompose(&ps, 100.0, &SolverOptions::default().with_relaxation(10.0)).unwrap();
    let (a, b) = cart_expected();
    assert_entries_close(&r.transformed.a, &a, 1e-3);
    assert_entries_close(&r.transformed.b, &b, 1e-3);
    assert!(r.diagnostics.input_residual <= 1e-8);
    assert!(r.diagnostics.upper_right_zero <= 1e-6 && r.diagnostics.lower_input_zero <= 1e-6);
}

#[test]
fn six_d_matches_reference_transform() {
    let ps = PartitionedSystem::new(example_6d(), 3).unwrap();
    let r = decompose(&ps, -25.0, &SolverOptions::default().with_relaxation(10.0)).unwrap();
    let a = from_rows(&[
        &[-0.3472, -0.1553, -0.5243, 0.0, 0.0, 0.0],
        &[0.1252, -1.6394, 0.2499, 0.0, 0.0, 0.0],
        &[1.8832, -0.9445, -1.1162, 0.0, 0.0, 0.0],
        &[0.0069, -0.1476, -0.0544, -0.1011, 0.0244, 0.1152],
        &[-0.0523, -0.0749, -0.0097, 0.1474, 0.0156, -0.0571],
        &[-0.0015, -0.0604, -0.0238, -0.1425, 0.0200, -0.0762],
    ]);
    assert_entries_close(&r.transformed.a, &a, 1e-3);
    assert_entries_close(
        &r.transformed.b.rows(0, 3).into_owned(),
        &example_6d().b.rows(0, 3).into_owned(),
        1e-3,
    );
    assert!(max_abs(&r.transformed.b.rows(3, 3).into_owned()) <= 1e-6);
}

#[test]
fn transform_preserves_eigenvalues() {
    let ps = PartitionedSystem::new(example_6d(), 3).unwrap();
    let r = decompose(&ps, -25.0, &SolverOptions::default().with_relaxation(10.0)).unwrap();
    let sort = |m: &Mat| {
        let mut v: Vec<(f64, f64)> = m
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v
    };
    for (x, y) in sort(&ps.sys.a).iter().zip(sort(&r.transformed.a)) {
        let scale = 1.0 + x.0.hypot(x.1);
        assert!((x.0 - y.0).abs() <= 1e-6 * scale && (x.1 - y.1).abs() <= 1e-6 * scale);
    }
}

#[test]
fn four_d_sweep_reproduces_coupling_curve() {
    let ps = PartitionedSystem::new(example_4d(), 2).unwrap();
    let opts = SolverOptions::default();
    for d in -14..=14 {
        if d == 0 || d == -1 {
            continue;
        }
        assert!(
            !evaluate_delta(&ps, d as f64, &opts).feasible_unrelaxed,
            "delta {d} should be infeasible"
        );
    }
    let best = optimize_delta(&ps, &DeltaSearch::default(), &opts).unwrap();
    assert!(
        (30.0..=80.0).contains(&best.delta_star),
        "delta* = {}",
        best.delta_star
    );
    assert!(best.f_star <= 2.2);
    let far = evaluate_delta(&ps, 1e6, &opts).coupling_norm.unwrap();
    assert!((far - best.gamma_norm).abs() <= 0.05 * best.gamma_norm);
    // The delta-dependent upper bound dominates the coupling wherever it is feasible.
    for s in best.trace.iter().filter(|s| s.feasible) {
        assert!(s.upper_bound.unwrap() >= s.coupling_norm.unwrap());
    }
}

#[test]
fn six_d_optimizer_is_no_worse_than_reference_delta() {
    let ps = PartitionedSystem::new(example_6d(), 3).unwrap();
    let opts = SolverOptions::default();
    let best = optimize_delta(&ps, &DeltaSearch::default(), &opts).unwrap();
    let at25 = decompose(&ps, -25.0, &opts.with_relaxation(best.relaxation)).unwrap();
    assert!(best.f_star <= 1.05 * at25.diagnostics.coupling_norm);
}

#[test]
fn column_norm_variant_is_available() {
    let ps = PartitionedSystem::new(example_4d(), 2).unwrap();
    let opts = SolverOptions {
        norm: NormKind::MaxColumnSum,
        ..Default::default()
    };
    let s = evaluate_delta(&ps, 50.0, &opts);
    assert!(s.ratio1.is_some());
}

#[test]
fn random_two_time_scale_certificates() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let mut checked = 0;
    for i in 0..20 {
        let n = if i % 2 == 0 { 4 } else { 6 };
        let k = n / 2;
        let sys = random_two_time_scale(&mut rng, n, k, k, 0.1);
        let ps = PartitionedSystem::new(sys, k).unwrap();
        for delta in default_delta_grid().into_iter().step_by(6) {
            let Ok(np) = build_nare(&ps, delta) else {
                continue;
            };
            let c1 = feasibility_cond1(&np, NormKind::MaxRowSum, 1.0);
            if !c1.satisfied {
                continue;
            }
            let Ok(r) = decompose(&ps, delta, &SolverOptions::default()) else {
                continue;
            };
            checked += 1;
            assert!(r.diagnostics.residual_z <= 1e-8 && r.diagnostics.residual_m <= 1e-8);
            assert!(r.diagnostics.iterations_z <= 25 && r.diagnostics.iterations_m <= 25);
        }
    }
    assert!(checked > 0);
}

#[test]
fn standard_transform_on_two_time_scale_system() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut ok = 0;
    for _ in 0..10 {
        let sys = random_two_time_scale(&mut rng, 4, 2, 2, 0.1);
        let ps = PartitionedSystem::new(sys, 2).unwrap();
        if let Ok(r) = standard_riccati(&ps, &SolverOptions::default()) {
            ok += 1;
            assert!(r.diagnostics.residual_z <= 1e-8 && r.diagnostics.residual_m <= 1e-8);
            let n = 4;
            assert!(max_abs(&r.transformed.a.view((2, 0), (2, 2)).into_owned()) <= 1e-6);
            assert!(max_abs(&r.transformed.a.view((0, 2), (2, n - 2)).into_owned()) <= 1e-6);
        }
    }
    assert!(ok > 0);
}

#[test]
fn recursive_six_d_into_three_blocks() {
    let sys = example_6d();
    let r = recursive_decompose(
        &sys,
        &[4, 2],
        &DeltaPolicy::default(),
        &SolverOptions::default(),
    )
    .unwrap();
    if let Some(f) = &r.failure {
        // A stage may be infeasible; the completed prefix must still be consistent.
        assert!(r.stages.len() < 2, "{f}");
    } else {
        assert_eq!(r.blocks, vec![2, 2, 2]);
    }
    assert!(r.structural_violation() <= 1e-6);
    let back = &r.t * &r.transformed.a * r.t.clone().try_inverse().unwrap();
    assert!(max_abs(&(back - &sys.a)) <= 1e-8);
    let _ = norm(&r.t, NormKind::MaxRowSum);
    let _: &LtiSystem = &r.transformed;
}
