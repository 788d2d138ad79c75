//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion ids
//! (e.g. `C4 C7`) as arguments to run a subset.

use lti_viab::config::{cart_preset, sixd_preset};
use lti_viab::error::Error;
use lti_viab::grid::{AxisBox, GridBox, GridSet};
use lti_viab::kernel::{
    certify_point, invariance_kernel_etuc, viability_kernel, CertifyOptions, Constraint, EvalMode,
    StepParams, SubsystemSpec,
};
use lti_viab::matrix::{from_rows, norm, Mat, NormKind};
use lti_viab::pipeline::{compare, run_centralized, run_decentralized, PipelineResult};
use lti_viab::riccati::*;
use lti_viab::system::{cart, example_4d, example_6d, random_two_time_scale, shared_input_2d};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_entry_diff(a: &Mat, b: &Mat) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn c1() -> Outcome {
    let t = Instant::now();
    let ps = PartitionedSystem::new(cart(), 2).unwrap();
    let r = match decompose(&ps, 100.0, &SolverOptions::default().with_relaxation(10.0)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("decomposition failed: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let a = from_rows(&[
        &[0.0, 0.9524, 0.0, 0.0],
        &[0.3920, 0.0, 0.0, 0.0],
        &[0.0, 0.1429, 0.0, 1.0500],
        &[0.0, 0.0, 0.2800, 0.0],
    ]);
    let b = from_rows(&[&[0.0], &[-0.0033], &[0.0], &[0.0]]);
    let da = max_entry_diff(&r.transformed.a, &a);
    let db = max_entry_diff(&r.transformed.b, &b);
    let d = &r.diagnostics;
    let pass = da <= 1e-3
        && db <= 1e-3
        && d.input_residual <= 1e-8
        && d.upper_right_zero <= 1e-6
        && d.lower_input_zero <= 1e-6
        && secs < 1.0;
    outcome(
        pass,
        format!(
            "max|dA|={da:.2e} max|dB|={db:.2e} |LB1+B2|={:.1e} zero blocks {:.1e}/{:.1e} time {secs:.3}s",
            d.input_residual, d.upper_right_zero, d.lower_input_zero
        ),
    )
}

fn c2() -> Outcome {
    let t = Instant::now();
    let sys = example_6d();
    let ps = PartitionedSystem::new(sys.clone(), 3).unwrap();
    let r = match decompose(&ps, -25.0, &SolverOptions::default().with_relaxation(10.0)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("decomposition failed: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let a = from_rows(&[
        &[-0.3472, -0.1553, -0.5243, 0.0, 0.0, 0.0],
        &[0.1252, -1.6394, 0.2499, 0.0, 0.0, 0.0],
        &[1.8832, -0.9445, -1.1162, 0.0, 0.0, 0.0],
        &[0.0069, -0.1476, -0.0544, -0.1011, 0.0244, 0.1152],
        &[-0.0523, -0.0749, -0.0097, 0.1474, 0.0156, -0.0571],
        &[-0.0015, -0.0604, -0.0238, -0.1425, 0.0200, -0.0762],
    ]);
    let mut b = sys.b.clone();
    b.view_mut((3, 0), (3, 2)).fill(0.0);
    let da = max_entry_diff(&r.transformed.a, &a);
    let db = max_entry_diff(&r.transformed.b, &b);
    outcome(
        da <= 1e-3 && db <= 1e-3 && secs < 1.0,
        format!("max|dA|={da:.2e} max|dB|={db:.2e} time {secs:.3}s"),
    )
}

fn c3() -> Outcome {
    let t = Instant::now();
    let ps = PartitionedSystem::new(example_4d(), 2).unwrap();
    let opts = SolverOptions::default();
    let feasible: Vec<i32> = (-14..=14)
        .filter(|&d| d != 0 && d != -1)
        .filter(|&d| evaluate_delta(&ps, d as f64, &opts).feasible_unrelaxed)
        .collect();
    let best = match optimize_delta(&ps, &DeltaSearch::default(), &opts) {
        Ok(b) => b,
        Err(e) => return outcome(false, format!("optimizer failed: {e}")),
    };
    let far = evaluate_delta(&ps, 1e6, &opts).coupling_norm;
    let far_pos = far.unwrap_or(f64::NAN);
    let far_neg = evaluate_delta(&ps, -1e6, &opts)
        .coupling_norm
        .unwrap_or(f64::NAN);
    let g = best.gamma_norm;
    let near = |f: f64| (f - g).abs() <= 0.05 * g;
    let secs = t.elapsed().as_secs_f64();
    let pass = feasible.is_empty()
        && (30.0..=80.0).contains(&best.delta_star)
        && near(far_pos)
        && near(far_neg)
        && best.f_star <= 2.2
        && secs < 30.0;
    outcome(
        pass,
        format!(
            "feasible in [-14,14]: {feasible:?}; delta*={:.2} (relaxation {}) f*={:.4}; f(+1e6)={far_pos:.4} f(-1e6)={far_neg:.4} |Gamma|={g:.4}; time {secs:.2}s",
            best.delta_star, best.relaxation, best.f_star
        ),
    )
}

fn c4() -> Outcome {
    let t = Instant::now();
    let sys = shared_input_2d();
    let g = Constraint::inf_ball(2, 1.0);
    let grid = GridBox::uniform(2, -1.0, 1.0, 41).unwrap();
    let u = AxisBox::symmetric(&[1.0]);
    let sp = StepParams::default();
    let steps = 20;
    let full = viability_kernel(
        &SubsystemSpec::controlled(sys.a.clone(), sys.b.clone()).unwrap(),
        &grid,
        &g,
        &u,
        1.0,
        steps,
        &sp,
    )
    .unwrap()
    .kernel();
    let line = GridBox::uniform(1, -1.0, 1.0, 41).unwrap();
    let k1 = viability_kernel(
        &SubsystemSpec::controlled(from_rows(&[&[1.0]]), from_rows(&[&[1.0]])).unwrap(),
        &line,
        &Constraint::inf_ball(1, 1.0),
        &u,
        1.0,
        steps,
        &sp,
    )
    .unwrap()
    .kernel();
    let k2 = viability_kernel(
        &SubsystemSpec::controlled(from_rows(&[&[1.0]]), from_rows(&[&[-1.0]])).unwrap(),
        &line,
        &Constraint::inf_ball(1, 1.0),
        &u,
        1.0,
        steps,
        &sp,
    )
    .unwrap()
    .kernel();
    let prod = k1.cross_product(&k2, u128::MAX).unwrap();
    let corner = [40, 40];
    let opts = CertifyOptions {
        samples: 500,
        seed: 4,
        ..Default::default()
    };
    let cert = certify_point(&sys.a, &sys.b, &[1.0, 1.0], &g, &u, 1.0, &opts).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let strict = full.is_subset_of(&prod).unwrap() && full.count() < prod.count();
    let pass =
        !full.contains_index(&corner) && prod.contains_index(&corner) && !cert && secs < 120.0;
    outcome(
        pass,
        format!(
            "full kernel has (1,1): {}; product has (1,1): {}; certify(1,1): {cert}; full {} nodes, product {} nodes, strict superset: {strict}; time {secs:.2}s",
            full.contains_index(&corner),
            prod.contains_index(&corner),
            full.count(),
            prod.count()
        ),
    )
}

fn random_block(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    })
}

fn exactness_trial(seed: u64, sp: &StepParams) -> (usize, usize) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
    let a1 = random_block(&mut rng, 2, 2, 0.5);
    let a2 = random_block(&mut rng, 2, 2, 0.5);
    let b1 = random_block(&mut rng, 2, 1, 1.0);
    let b2 = random_block(&mut rng, 2, 1, 1.0);
    let mut a = Mat::zeros(4, 4);
    a.view_mut((0, 0), (2, 2)).copy_from(&a1);
    a.view_mut((2, 2), (2, 2)).copy_from(&a2);
    let mut b = Mat::zeros(4, 2);
    b.view_mut((0, 0), (2, 1)).copy_from(&b1);
    b.view_mut((2, 1), (2, 1)).copy_from(&b2);
    let u = AxisBox::new(vec![-0.5, -1.0], vec![1.0, 0.5]).unwrap();
    let k1 = Constraint::inf_ball(2, 1.0);
    let k2 = Constraint::Ball {
        center: vec![0.0, 0.0],
        radius: 1.0,
    };
    let sub = GridBox::uniform(2, -1.0, 1.0, 21).unwrap();
    let (tau, steps) = (1.0, 10);
    let v1 = viability_kernel(
        &SubsystemSpec::controlled(a1, b1).unwrap(),
        &sub,
        &k1,
        &AxisBox::new(vec![-0.5], vec![1.0]).unwrap(),
        tau,
        steps,
        sp,
    )
    .unwrap()
    .kernel();
    let v2 = viability_kernel(
        &SubsystemSpec::controlled(a2, b2).unwrap(),
        &sub,
        &k2,
        &AxisBox::new(vec![-1.0], vec![0.5]).unwrap(),
        tau,
        steps,
        sp,
    )
    .unwrap()
    .kernel();
    let prod = v1.cross_product(&v2, u128::MAX).unwrap();
    let full = viability_kernel(
        &SubsystemSpec::controlled(a, b).unwrap(),
        &sub.product(&sub),
        &Constraint::product(vec![(2, k1), (2, k2)]),
        &u,
        tau,
        steps,
        sp,
    )
    .unwrap()
    .kernel();
    let mismatch = prod
        .occ
        .iter()
        .zip(&full.occ)
        .filter(|(x, y)| x != y)
        .count();
    (mismatch, full.count())
}

fn c5() -> Outcome {
    let t = Instant::now();
    let sp = StepParams::default();
    let results: Vec<(usize, usize)> = (0..5).map(|s| exactness_trial(s, &sp)).collect();
    let secs = t.elapsed().as_secs_f64();
    let lattice = StepParams {
        mode: EvalMode::Lattice,
        ..Default::default()
    };
    let lat: Vec<usize> = (0..5).map(|s| exactness_trial(s, &lattice).0).collect();
    let pass = results.iter().all(|r| r.0 == 0) && secs < 600.0;
    outcome(
        pass,
        format!(
            "mismatching nodes (of 194481) per system with the default engine: {:?} (kernel sizes {:?}); corner-minimum evaluation mode: {lat:?}; time {secs:.1}s",
            results.iter().map(|r| r.0).collect::<Vec<_>>(),
            results.iter().map(|r| r.1).collect::<Vec<_>>()
        ),
    )
}

struct CartRuns {
    dec: PipelineResult,
    dec_s: f64,
    central: Option<(GridSet, bool, f64)>,
    central_err: Option<String>,
}

fn cart_runs() -> CartRuns {
    let cfg = cart_preset(21);
    let t = Instant::now();
    let dec = run_decentralized(&cfg).expect("cart pipeline");
    let dec_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    match run_centralized(&cfg, &dec.decomposition) {
        Ok(tr) => {
            let s = t.elapsed().as_secs_f64();
            CartRuns {
                central: Some((tr.kernel(), tr.is_monotone(), s)),
                dec,
                dec_s,
                central_err: None,
            }
        }
        Err(e) => CartRuns {
            dec,
            dec_s,
            central: None,
            central_err: Some(e.to_string()),
        },
    }
}

fn c6(runs: &CartRuns) -> Outcome {
    let Some((central, _, cs)) = &runs.central else {
        return outcome(
            false,
            format!("centralized run failed: {:?}", runs.central_err),
        );
    };
    let Some(prod) = &runs.dec.product else {
        return outcome(false, "product not materialized");
    };
    let cmp = compare(prod, central).unwrap();
    let total = runs.dec_s + cs;
    let pass = cmp.contained && cmp.coverage >= 0.5 && total < 1800.0;
    outcome(
        pass,
        format!(
            "contained (one-cell tolerance): {} ({} offending); coverage {:.3} ({} of {} nodes); V0 {} nodes, C0 {} nodes; time {total:.1}s",
            cmp.contained,
            cmp.offending.len(),
            cmp.coverage,
            cmp.decentralized_nodes,
            cmp.centralized_nodes,
            runs.dec.upper_kernel().count(),
            runs.dec.lower_kernel().count()
        ),
    )
}

fn extent(set: &GridSet) -> (f64, f64) {
    let pts = set.occupied_points();
    (
        pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
    )
}

fn c7() -> Outcome {
    let t = Instant::now();
    let grid = GridBox::uniform(1, -1.0, 1.0, 101).unwrap();
    let h = grid.h(0);
    let g = Constraint::inf_ball(1, 1.0);
    let sp = StepParams::default();
    let tau1 = 1.0;
    let unstable = viability_kernel(
        &SubsystemSpec::controlled(from_rows(&[&[1.0]]), from_rows(&[&[0.0]])).unwrap(),
        &grid,
        &g,
        &AxisBox::symmetric(&[0.0]),
        tau1,
        20,
        &sp,
    )
    .unwrap()
    .kernel();
    let (lo1, hi1) = extent(&unstable);
    let r1 = (-tau1).exp();
    let ok1 = (lo1 + r1).abs() <= 2.0 * h && (hi1 - r1).abs() <= 2.0 * h;
    let tau2 = 0.5;
    let steps = 50;
    let drift = invariance_kernel_etuc(
        &SubsystemSpec::uncontrolled(from_rows(&[&[0.0]]), from_rows(&[&[1.0]])).unwrap(),
        &grid,
        &g,
        &vec![AxisBox::symmetric(&[1.0]); steps],
        tau2,
        steps,
        &sp,
    )
    .unwrap()
    .trace
    .kernel();
    let (lo2, hi2) = extent(&drift);
    let r2 = 1.0 - tau2;
    let ok2 = (lo2 + r2).abs() <= 2.0 * h && (hi2 - r2).abs() <= 2.0 * h;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        ok1 && ok2 && secs < 10.0,
        format!(
            "unstable: [{lo1:.3}, {hi1:.3}] vs +-{r1:.4}; matched drift: [{lo2:.3}, {hi2:.3}] vs +-{r2:.3}; cell {h}; time {secs:.2}s"
        ),
    )
}

fn c8(runs: &CartRuns, sixd: &Option<PipelineResult>) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, v: bool| {
        ok &= v;
        notes.push(format!("{name}: {v}"));
    };
    check("cart V", runs.dec.upper.is_monotone());
    check("cart C", runs.dec.lower.is_monotone());
    if let Some((_, mono, _)) = &runs.central {
        check("cart centralized", *mono);
    }
    if let Some(r) = sixd {
        check("6D V", r.upper.is_monotone());
        check("6D C", r.lower.is_monotone());
    }
    let mut cfg = cart_preset(21);
    cfg.steps = 100;
    let fine = run_decentralized(&cfg).expect("cart pipeline at N = 100");
    check("cart N=100 V", fine.upper.is_monotone());
    check("cart N=100 C", fine.lower.is_monotone());
    let c50 = runs.dec.lower_kernel();
    let c100 = fine.lower_kernel();
    let need = c50.count() as i64 - c50.boundary_count() as i64;
    let refine = c100.count() as i64 >= need;
    check("refinement", refine);
    notes.push(format!(
        "C0 nodes N=50: {}, N=100: {}, required at least {need}",
        c50.count(),
        c100.count()
    ));
    outcome(ok, notes.join("; "))
}

fn c9() -> Outcome {
    let t = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst_iter = 0;
    let mut worst_res: f64 = 0.0;
    for i in 0..20 {
        let n = if i % 2 == 0 { 4 } else { 6 };
        let k = n / 2;
        let sys = random_two_time_scale(&mut rng, n, k, k, 0.1);
        let ps = PartitionedSystem::new(sys, k).unwrap();
        for delta in default_delta_grid() {
            let s = evaluate_delta(&ps, delta, &SolverOptions::default());
            if !s.feasible_unrelaxed {
                continue;
            }
            let r = match decompose(&ps, delta, &SolverOptions::default()) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("system {i} delta {delta:.3}: {e}"));
                    continue;
                }
            };
            checked += 1;
            let d = &r.diagnostics;
            worst_iter = worst_iter.max(d.iterations_z).max(d.iterations_m);
            worst_res = worst_res.max(d.residual_z).max(d.residual_m);
            if d.residual_z > 1e-8
                || d.residual_m > 1e-8
                || d.iterations_z > 25
                || d.iterations_m > 25
            {
                failures.push(format!("system {i} delta {delta:.3}: residual/iterations"));
            }
            for (iters, fin, feas) in [
                (&r.z_iterates, &r.d, &d.cond1),
                (&r.m_iterates, &r.j, &d.cond2),
            ] {
                let Some(f) = feas else { continue };
                let dn = norm(fin, NormKind::MaxRowSum);
                if dn == 0.0 {
                    continue;
                }
                for (k, it) in iters.iter().enumerate() {
                    let e = norm(&(it - fin), NormKind::MaxRowSum) / dn;
                    if e > f.ratio().powi(k as i32) + 1e-9 {
                        failures.push(format!(
                            "system {i} delta {delta:.3}: error {e:.3e} above bound at k={k}"
                        ));
                        break;
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && checked > 0 && secs < 60.0,
        format!(
            "{checked} feasible (system, delta) pairs; max iterations {worst_iter}; max residual {worst_res:.1e}; failures {:?}; time {secs:.2}s",
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn c10(
    runs: &CartRuns,
    sixd: &Option<PipelineResult>,
    sixd_s: f64,
    sixd_err: &Option<String>,
) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    match &runs.central {
        Some((_, _, cs)) => {
            let speedup = cs / runs.dec_s;
            ok &= speedup >= 20.0;
            notes.push(format!(
                "cart 21 nodes: decentralized {:.2}s, centralized {cs:.2}s, speedup {speedup:.1}x",
                runs.dec_s
            ));
        }
        None => {
            ok = false;
            notes.push("cart centralized run missing".into());
        }
    }
    match sixd {
        Some(r) => {
            let nonempty = r.upper_kernel().count() > 0 && r.lower_kernel().count() > 0;
            ok &= nonempty && sixd_s < 7200.0;
            notes.push(format!(
                "6D at 51 nodes: {sixd_s:.1}s, V0 {} nodes, C0 {} nodes",
                r.upper_kernel().count(),
                r.lower_kernel().count()
            ));
            let cfg = sixd_preset(51);
            match run_centralized(&cfg, &r.decomposition) {
                Err(Error::ResourceCap { needed, cap }) => {
                    notes.push(format!("centralized 6D refused ({needed} > {cap} nodes)"))
                }
                other => {
                    ok = false;
                    notes.push(format!(
                        "centralized 6D was not refused: {:?}",
                        other.map(|t| t.kernel().count())
                    ));
                }
            }
        }
        None => {
            ok = false;
            notes.push(format!("6D pipeline failed: {sixd_err:?}"));
        }
    }
    outcome(ok, notes.join("; "))
}

fn main() {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with('C'))
        .collect();
    let want = |id: &str| args.is_empty() || args.iter().any(|a| a == id);
    let mut failed = 0;
    let mut report = |id: &str, f: &dyn Fn() -> Outcome| {
        if !want(id) {
            return;
        }
        let t = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "{id} {status} [{:.1}s] {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report("C1", &c1);
    report("C2", &c2);
    report("C3", &c3);
    report("C4", &c4);
    report("C5", &c5);
    let need_cart = ["C6", "C8", "C10"].iter().any(|c| want(c));
    let need_6d = ["C8", "C10"].iter().any(|c| want(c));
    let runs = need_cart.then(cart_runs);
    let (sixd, sixd_s, sixd_err) = if need_6d {
        let t = Instant::now();
        match run_decentralized(&sixd_preset(51)) {
            Ok(r) => (Some(r), t.elapsed().as_secs_f64(), None),
            Err(e) => (None, t.elapsed().as_secs_f64(), Some(e.to_string())),
        }
    } else {
        (None, 0.0, None)
    };
    if let Some(runs) = &runs {
        report("C6", &|| c6(runs));
    }
    report("C7", &c7);
    if let Some(runs) = &runs {
        report("C8", &|| c8(runs, &sixd));
    }
    report("C9", &c9);
    if let Some(runs) = &runs {
        report("C10", &|| c10(runs, &sixd, sixd_s, &sixd_err));
    }
    println!("acceptance: {failed} criteria failed");
    // Failures are reported above; a nonzero exit is opt-in so the rest of the suite still runs.
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
