use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ltiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltiv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn preset(name: &str) -> String {
    presets().join(name).display().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error object on stderr");
    serde_json::from_str(line).expect("stderr carries a JSON error object")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p.display().to_string()
}

/// Cart pipeline config shrunk to test size.
fn small_cart(nodes: usize) -> Value {
    let o = ltiv(&["preset", "cart"]);
    assert!(o.status.success());
    let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for side in ["upper", "lower"] {
        v[side]["grid"]["nodes"] = serde_json::json!([nodes, nodes]);
    }
    v["steps"] = 20.into();
    v
}

#[test]
fn checked_in_presets_match_generated() {
    for name in ["cart", "sixd", "ex4d"] {
        let o = ltiv(&["preset", name]);
        assert!(o.status.success());
        let generated: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(
            generated,
            read_json(&presets().join(format!("{name}.json"))),
            "{name}"
        );
    }
    let o = ltiv(&["schema"]);
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(schema, read_json(&presets().join("schema.json")));
}

#[test]
fn unstable_scalar_kernel_matches_analytic_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = ltiv(&[
        "kernel",
        "--config",
        &preset("kernel_unstable_1d.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("report.json"));
    assert_eq!(r["expected_interval"]["within_tolerance"], true);
    assert_eq!(r["monotone"], true);
    assert_eq!(r["certified"]["fraction"], 1.0);
    for f in [
        "kernel.grid",
        "kernel.csv",
        "trace/index.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn counter_example_corner_is_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = ltiv(&[
        "kernel",
        "--config",
        &preset("kernel_counter_example.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let r = read_json(&out.join("report.json"));
    assert_eq!(r["probes"][0]["in_kernel"], false);
}

#[test]
fn matched_drift_invariance_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = ltiv(&[
        "kernel",
        "--config",
        &preset("kernel_matched_drift.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let r = read_json(&out.join("report.json"));
    assert_eq!(r["mode"], "inv");
    assert_eq!(r["expected_interval"]["within_tolerance"], true);
    assert_eq!(r["shrinkage"].as_array().unwrap().len(), 50);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let mut cfg = read_json(&presets().join("kernel_unstable_1d.json"));
    cfg.as_object_mut().unwrap().remove("mode");
    let no_vbox = write_config(dir.path(), "novbox.json", &cfg);
    let o = ltiv(&[
        "kernel", "--config", &no_vbox, "--out", out, "--mode", "inv",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"]["kind"], "usage");

    let o = ltiv(&[
        "kernel",
        "--config",
        &preset("kernel_unstable_1d.json"),
        "--out",
        out,
        "--steps",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"version\": 1,").unwrap();
    let o = ltiv(&["decompose", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"]["kind"], "json");

    let o = ltiv(&[
        "pipeline",
        "--config",
        &preset("cart.json"),
        "--out",
        out,
        "--steps",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = ltiv(&[
        "decompose",
        "--config",
        &preset("decompose_cart.json"),
        "--out",
        out,
        "--delta",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = ltiv(&["kernel", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["exit_code"], 1);
}

#[test]
fn empty_constraint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&presets().join("kernel_unstable_1d.json"));
    cfg["constraint"] = serde_json::json!({"type": "ball", "center": [5.0], "radius": 0.1});
    let path = write_config(dir.path(), "empty.json", &cfg);
    let out = dir.path().join("o");
    let o = ltiv(&["kernel", "--config", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["kind"], "empty_set");
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["exit_code"], 2);
}

#[test]
fn decompose_fixed_and_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cart");
    let o = ltiv(&[
        "decompose",
        "--config",
        &preset("decompose_cart.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let d = read_json(&out.join("decomposition.json"));
    assert_eq!(d["delta"], 100.0);
    assert!(d["diagnostics"]["input_residual"].as_f64().unwrap() <= 1e-8);

    let mut cfg = read_json(&presets().join("decompose_cart.json"));
    cfg["decomposition"]["relaxation"] = 1.0.into();
    let strict = write_config(dir.path(), "strict.json", &cfg);
    let o = ltiv(&[
        "decompose",
        "--config",
        &strict,
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_error(&o);
    assert_eq!(e["error"]["kind"], "infeasible");
    assert!(e["error"]["details"]["condition2_ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn auto_delta_sweep_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex4d");
    let o = ltiv(&[
        "decompose",
        "--config",
        &preset("decompose_ex4d.json"),
        "--out",
        out.to_str().unwrap(),
        "--delta",
        "auto",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = read_json(&out.join("decomposition.json"));
    let star = d["delta_search"]["delta_star"].as_f64().unwrap();
    assert!((30.0..=80.0).contains(&star), "{star}");

    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(rows.len() > 50);
    for r in &rows {
        let delta: f64 = r[0].parse().unwrap();
        if delta.abs() < 15.0 {
            assert_eq!(&r[3], "false", "unrelaxed feasibility at {delta}");
        }
    }

    let plot = dir.path().join("plot");
    let o = ltiv(&[
        "plot",
        out.join("sweep.csv").to_str().unwrap(),
        "--out",
        plot.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(plot.join("sweep.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.contains("asymptote"));
}

#[test]
fn cart_pipeline_with_comparison_is_contained_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cart.json", &small_cart(11));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ltiv(&[
            "pipeline",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--compare",
            "--threads",
            "2",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    let r = read_json(&a.join("report.json"));
    assert_eq!(r["comparison"]["contained"], true);
    assert_eq!(r["upper_monotone"], true);
    assert_eq!(r["lower_monotone"], true);
    for f in [
        "product.grid",
        "vtrace/step_000.grid",
        "ctrace/step_000.grid",
        "vtrace/step_020.grid",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let rb = read_json(&b.join("report.json"));
    assert_eq!(r["upper_counts"], rb["upper_counts"]);
    assert_eq!(r["comparison"]["coverage"], rb["comparison"]["coverage"]);
    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["command"], "pipeline");
    assert_eq!(m["threads"], 2);
    let stages: Vec<&str> = m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(stages, ["decomposition", "kernels", "centralized", "write"]);
    assert!(std::fs::read_to_string(a.join("backmap.csv"))
        .unwrap()
        .starts_with("kind,id,x0"));

    let plot = dir.path().join("plot");
    let o = ltiv(&[
        "plot",
        a.join("product.grid").to_str().unwrap(),
        "--out",
        plot.to_str().unwrap(),
        "--slice",
        "0,2:1=0,3=0",
    ]);
    assert!(o.status.success());
    assert!(plot.join("slice.svg").exists() && plot.join("contour.csv").exists());
    let o = ltiv(&[
        "plot",
        a.join("product.grid").to_str().unwrap(),
        "--out",
        plot.to_str().unwrap(),
        "--slice",
        "0,7",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn comparison_over_cap_is_refused_after_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_cart(7);
    v["compare"]["node_cap"] = 100.into();
    let cfg = write_config(dir.path(), "cart.json", &v);
    let out = dir.path().join("o");
    let o = ltiv(&[
        "pipeline",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--compare",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_error(&o)["error"]["kind"], "resource_cap");
    assert!(out.join("report.json").exists());
    assert!(out.join("vtrace/index.json").exists());
    assert_eq!(read_json(&out.join("manifest.json"))["exit_code"], 3);
}

#[test]
fn empty_kernel_plots_blank_with_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&presets().join("kernel_unstable_1d.json"));
    // Every state in [0.5, 1] leaves through the top within the unit horizon.
    cfg["constraint"] = serde_json::json!({"type": "box", "lo": [0.5], "hi": [1.0]});
    cfg.as_object_mut().unwrap().remove("expected_interval");
    let path = write_config(dir.path(), "k.json", &cfg);
    let out = dir.path().join("k");
    assert!(
        ltiv(&["kernel", "--config", &path, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    assert_eq!(read_json(&out.join("report.json"))["kernel_nodes"], 0);
    let plot = dir.path().join("p");
    let o = ltiv(&[
        "plot",
        out.join("kernel.grid").to_str().unwrap(),
        "--out",
        plot.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(plot.join("slice.svg")).unwrap();
    assert!(svg.contains("empty set"));
}
