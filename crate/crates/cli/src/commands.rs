use crate::failure::Failure;
use crate::manifest::RunManifest;
use crate::{DecomposeArgs, KernelArgs, ModeArg, PipelineArgs};
use lti_viab::config::{
    DecomposeConfig, DecompositionMethod, KernelConfig, KernelMode, PipelineConfig,
};
use lti_viab::grid::{AxisBox, GridBox, GridSet};
use lti_viab::kernel::{
    certify_point, invariance_kernel_etuc, viability_kernel, CertifyOptions, KernelTrace,
    SubsystemSpec,
};
use lti_viab::matrix::Mat;
use lti_viab::pipeline::{
    build_report, compare, decompose_config, run_centralized, run_with_decomposition,
    write_outputs, write_trace, Comparison,
};
use lti_viab::riccati::{
    decompose as decompose_at, default_delta_grid, evaluate_delta, gamma_norm, optimize_delta,
    standard_riccati, DecompositionResult, DeltaSample, DeltaSearch, PartitionedSystem,
    SolverOptions,
};
use lti_viab::Error;
use serde::{Deserialize, Serialize};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

/// Nodes sampled for the certification estimate in kernel reports.
const CERTIFY_SAMPLE: usize = 200;

fn io(e: std::io::Error) -> Failure {
    Error::from(e).into()
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::from(Error::from(e)))?;
    std::fs::write(path, text).map_err(io)
}

pub fn print_json(v: &serde_json::Value, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => write_json(p, v),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(v).expect("value serializes")
            );
            Ok(())
        }
    }
}

/// `--delta` value: `None` keeps the config, `Some(None)` means auto.
fn parse_delta(arg: Option<&str>) -> Result<Option<Option<f64>>, Failure> {
    match arg {
        None => Ok(None),
        Some("auto") => Ok(Some(None)),
        Some(s) => s
            .parse::<f64>()
            .map(|d| Some(Some(d)))
            .map_err(|_| Failure::usage(format!("--delta expects a number or 'auto', got '{s}'"))),
    }
}

/// One row of the delta-sweep CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub ratio1: Option<f64>,
    pub ratio2: Option<f64>,
    pub feasible_unrelaxed: bool,
    pub feasible: bool,
    pub coupling_norm: Option<f64>,
    pub upper_bound: Option<f64>,
    pub gamma_norm: f64,
}

fn write_sweep(path: &Path, trace: &[DeltaSample], gamma: f64) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::from(Error::Io(e.into())))?;
    for s in trace {
        w.serialize(SweepRow {
            delta: s.delta,
            ratio1: s.ratio1,
            ratio2: s.ratio2,
            feasible_unrelaxed: s.feasible_unrelaxed,
            feasible: s.feasible,
            coupling_norm: s.coupling_norm,
            upper_bound: s.upper_bound,
            gamma_norm: gamma,
        })
        .map_err(|e| Failure::from(Error::Io(e.into())))?;
    }
    w.flush().map_err(io)
}

pub fn decompose(args: &DecomposeArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut cfg = DecomposeConfig::load(&args.run.config)?;
    if let Some(d) = parse_delta(args.delta.as_deref())? {
        cfg.decomposition.delta = d;
    }
    if args.standard {
        cfg.decomposition.method = DecompositionMethod::Standard;
    }
    let out = &args.run.out;
    let ps = PartitionedSystem::new(cfg.system.resolve()?, cfg.k)?;
    let opts = SolverOptions::default();

    let mut search_summary = None;
    let dec: Result<DecompositionResult, Failure> = m.stage("decomposition", || {
        match (cfg.decomposition.method, cfg.decomposition.delta) {
            (DecompositionMethod::Standard, _) => Ok(standard_riccati(&ps, &opts)?),
            (DecompositionMethod::Modified, Some(delta)) => {
                let relaxed = opts.with_relaxation(cfg.decomposition.relaxation);
                decompose_at(&ps, delta, &relaxed).map_err(|e| {
                    let sample = evaluate_delta(&ps, delta, &opts);
                    Failure::from(e).with_details(serde_json::json!({
                        "delta": delta,
                        "relaxation": cfg.decomposition.relaxation,
                        "condition1_ratio": sample.ratio1,
                        "condition2_ratio": sample.ratio2,
                        "coupling_norm": sample.coupling_norm,
                        "coupling_upper_bound": sample.upper_bound,
                    }))
                })
            }
            (DecompositionMethod::Modified, None) => {
                let search = DeltaSearch::default();
                let gamma = gamma_norm(&ps, opts.norm).unwrap_or(f64::NAN);
                match optimize_delta(&ps, &search, &opts) {
                    Ok(best) => {
                        write_sweep(&out.join("sweep.csv"), &best.trace, gamma)?;
                        search_summary = Some(serde_json::json!({
                            "delta_star": best.delta_star,
                            "f_star": best.f_star,
                            "relaxation": best.relaxation,
                            "gamma_norm": best.gamma_norm,
                        }));
                        Ok(decompose_at(
                            &ps,
                            best.delta_star,
                            &opts.with_relaxation(best.relaxation),
                        )?)
                    }
                    Err(e) => {
                        let trace: Vec<DeltaSample> = default_delta_grid()
                            .into_iter()
                            .map(|d| evaluate_delta(&ps, d, &opts))
                            .collect();
                        write_sweep(&out.join("sweep.csv"), &trace, gamma)?;
                        Err(e.into())
                    }
                }
            }
        }
    });
    let dec = dec?;
    let mut doc = dec.to_json();
    if let Some(s) = search_summary {
        doc["delta_search"] = s;
    }
    doc["method"] = serde_json::to_value(cfg.decomposition.method).expect("method serializes");
    write_json(&out.join("decomposition.json"), &doc)
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    point: Vec<f64>,
    node: Vec<f64>,
    in_kernel: bool,
}

#[derive(Debug, Serialize)]
struct IntervalCheck {
    expected: [f64; 2],
    computed: Option<[f64; 2]>,
    tolerance: f64,
    within_tolerance: bool,
}

#[derive(Debug, Serialize)]
struct KernelReport {
    mode: KernelMode,
    q: f64,
    counts: Vec<usize>,
    monotone: bool,
    kernel_nodes: usize,
    /// Extent of the kernel along each axis (node coordinates).
    extent: Option<Vec<[f64; 2]>>,
    expected_interval: Option<IntervalCheck>,
    probes: Vec<ProbeReport>,
    certified: Option<CertifySummary>,
    shrinkage: Vec<lti_viab::kernel::ShrinkageStep>,
}

#[derive(Debug, Serialize)]
struct CertifySummary {
    sampled: usize,
    certified: usize,
    fraction: f64,
    seed: u64,
}

fn extent(set: &GridSet) -> Option<Vec<[f64; 2]>> {
    let pts = set.occupied_points();
    let first = pts.first()?;
    let mut ext: Vec<[f64; 2]> = first.iter().map(|&v| [v, v]).collect();
    for p in &pts {
        for (e, &v) in ext.iter_mut().zip(p) {
            e[0] = e[0].min(v);
            e[1] = e[1].max(v);
        }
    }
    Some(ext)
}

pub fn kernel(args: &KernelArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut cfg = KernelConfig::load(&args.run.config)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let mode = match args.mode {
        Some(ModeArg::Viab) => KernelMode::Viab,
        Some(ModeArg::Inv) => KernelMode::Inv,
        None => cfg.mode.unwrap_or(KernelMode::Viab),
    };
    let a = cfg.a.to_mat()?;
    let n = a.nrows();
    let grid = GridBox::new(
        cfg.grid.lower.clone(),
        cfg.grid.upper.clone(),
        cfg.grid.nodes.clone(),
    )?;
    cfg.constraint.validate(n)?;
    let out = &args.run.out;

    let (trace, shrinkage, certify_inputs): (KernelTrace, _, Option<(Mat, AxisBox)>) = match mode {
        KernelMode::Viab => {
            let b = match &cfg.b {
                Some(b) => b.to_mat_allow_empty()?,
                None => Mat::zeros(n, 1),
            };
            let u = cfg
                .controls
                .clone()
                .unwrap_or_else(|| AxisBox::symmetric(&vec![0.0; b.ncols()]));
            let spec = SubsystemSpec::controlled(a.clone(), b.clone())?;
            let t = m.stage("kernel", || {
                viability_kernel(
                    &spec,
                    &grid,
                    &cfg.constraint,
                    &u,
                    cfg.tau,
                    cfg.steps,
                    &cfg.kernel,
                )
            })?;
            (t, Vec::new(), Some((b, u)))
        }
        KernelMode::Inv => {
            let vbox = cfg
                .vbox
                .clone()
                .ok_or_else(|| Failure::usage("invariance mode needs a 'vbox' in the config"))?;
            let coupling = cfg
                .coupling
                .as_ref()
                .ok_or_else(|| {
                    Failure::usage("invariance mode needs a 'coupling' matrix in the config")
                })?
                .to_mat()?;
            let spec = SubsystemSpec::uncontrolled(a.clone(), coupling)?;
            let vboxes = vec![vbox; cfg.steps];
            let inv = m.stage("kernel", || {
                invariance_kernel_etuc(
                    &spec,
                    &grid,
                    &cfg.constraint,
                    &vboxes,
                    cfg.tau,
                    cfg.steps,
                    &cfg.kernel,
                )
            })?;
            (inv.trace, inv.shrinkage, None)
        }
    };

    let kernel = trace.kernel();
    m.stage("write", || -> Result<(), Failure> {
        write_trace(&trace, &out.join("trace"))?;
        kernel.write_dump(BufWriter::new(
            std::fs::File::create(out.join("kernel.grid")).map_err(io)?,
        ))?;
        kernel.write_csv(BufWriter::new(
            std::fs::File::create(out.join("kernel.csv")).map_err(io)?,
        ))?;
        Ok(())
    })?;

    let ext = extent(&kernel);
    let expected_interval = cfg.expected_interval.map(|e| {
        let tol = 2.0 * grid.h(0);
        let computed = ext.as_ref().map(|x| x[0]);
        IntervalCheck {
            expected: e,
            computed,
            tolerance: tol,
            within_tolerance: computed
                .is_some_and(|c| (c[0] - e[0]).abs() <= tol && (c[1] - e[1]).abs() <= tol),
        }
    });
    let probes = cfg
        .probes
        .iter()
        .map(|p| {
            let idx = grid.nearest(p);
            ProbeReport {
                point: p.clone(),
                node: grid.point(&idx),
                in_kernel: kernel.contains_index(&idx),
            }
        })
        .collect();

    let certified = match certify_inputs {
        Some((b, u)) if !kernel.is_empty() => Some(m.stage("certify", || {
            certify_sample(&a, &b, &u, &cfg, &kernel, args.run.seed)
        })?),
        _ => None,
    };

    let report = KernelReport {
        mode,
        q: trace.q,
        counts: trace.levels.iter().map(|l| l.count()).collect(),
        monotone: trace.is_monotone(),
        kernel_nodes: kernel.count(),
        extent: ext,
        expected_interval,
        probes,
        certified,
        shrinkage,
    };
    write_json(&out.join("report.json"), &report)
}

/// Certifies an evenly strided sample of kernel nodes.
fn certify_sample(
    a: &Mat,
    b: &Mat,
    u: &AxisBox,
    cfg: &KernelConfig,
    kernel: &GridSet,
    seed: u64,
) -> Result<CertifySummary, Failure> {
    let pts = kernel.occupied_points();
    let stride = pts.len().div_ceil(CERTIFY_SAMPLE).max(1);
    let opts = CertifyOptions {
        seed,
        ..Default::default()
    };
    let mut sampled = 0;
    let mut certified = 0;
    for p in pts.iter().step_by(stride) {
        sampled += 1;
        if certify_point(a, b, p, &cfg.constraint, u, cfg.tau, &opts)? {
            certified += 1;
        }
    }
    Ok(CertifySummary {
        sampled,
        certified,
        fraction: certified as f64 / sampled as f64,
        seed,
    })
}

pub fn pipeline(args: &PipelineArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut cfg = PipelineConfig::load(&args.run.config)?;
    if let Some(d) = parse_delta(args.delta.as_deref())? {
        cfg.decomposition.delta = d;
    }
    if args.standard {
        cfg.decomposition.method = DecompositionMethod::Standard;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if args.compare {
        cfg.compare.enabled = true;
    }
    cfg.validate()?;
    let out = &args.run.out;

    let t0 = Instant::now();
    let dec = m.stage("decomposition", || decompose_config(&cfg))?;
    let decomposition_s = t0.elapsed().as_secs_f64();
    // Written first so a failing kernel stage still leaves the decomposition behind.
    write_json(&out.join("decomposition.json"), &dec.to_json())?;

    let mut result = m.stage("kernels", || run_with_decomposition(&cfg, dec))?;
    result.timings.decomposition_s = decomposition_s;

    let mut refused = None;
    let mut comparison: Option<Comparison> = None;
    let mut centralized_s = None;
    if cfg.compare.enabled {
        let t = Instant::now();
        match m.stage("centralized", || {
            run_centralized(&cfg, &result.decomposition)
        }) {
            Ok(central) => {
                centralized_s = Some(t.elapsed().as_secs_f64());
                let product = match &result.product {
                    Some(p) => p.clone(),
                    None => result
                        .upper_kernel()
                        .cross_product(&result.lower_kernel(), cfg.compare.node_cap)?,
                };
                comparison = Some(compare(&product, &central.kernel())?);
            }
            Err(e @ Error::ResourceCap { .. }) => refused = Some(Failure::from(e)),
            Err(e) => return Err(e.into()),
        }
    }
    let report = build_report(&result, comparison, centralized_s);
    m.stage("write", || write_outputs(&result, &report, out))?;
    match refused {
        Some(f) => Err(Failure {
            message: format!("centralized comparison refused: {}", f.message),
            ..f
        }),
        None => Ok(()),
    }
}
