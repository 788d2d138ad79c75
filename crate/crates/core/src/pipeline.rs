//! Decentralized kernel computation on a decomposed system.
//!
//! The upper subspace carries all input and is handled by the viability
//! recursion; the lower subspace sees the upper state only through the
//! coupling block and is handled by the invariance recursion, with the upper
//! state bounded by the interval hull of the upper set one step ahead.

use crate::config::{DecompositionMethod, PipelineConfig};
use crate::error::{Error, Result};
use crate::grid::{check_cap, AxisBox, GridSet};
use crate::kernel::{
    initial_level, inv_step_etuc, viab_step, viability_kernel, KernelTrace, LevelGrid,
    ShrinkageStep, SubsystemSpec,
};
use crate::matrix::{max_abs, Mat};
use crate::riccati::{
    decompose_with_policy, standard_riccati, DecompositionResult, PartitionedSystem, SolverOptions,
};
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

/// How the lower subspace was treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerTreatment {
    /// No direct input: invariance under the bounded upper state.
    Invariance,
    /// Block-diagonal with its own inputs: independent viability.
    Viability,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub decomposition_s: f64,
    pub kernels_s: f64,
    pub product_s: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub decomposition: DecompositionResult,
    pub upper: KernelTrace,
    pub lower: KernelTrace,
    pub lower_treatment: LowerTreatment,
    /// `vboxes[i]` is the disturbance box used to produce the lower set at step `i`.
    pub vboxes: Vec<Option<AxisBox>>,
    pub shrinkage: Vec<Option<ShrinkageStep>>,
    /// Materialized product set, or `None` when it would exceed the node cap.
    pub product: Option<GridSet>,
    pub timings: Timings,
}

impl PipelineResult {
    pub fn upper_kernel(&self) -> GridSet {
        self.upper.kernel()
    }

    pub fn lower_kernel(&self) -> GridSet {
        self.lower.kernel()
    }

    /// Number of product nodes (computed without materializing).
    pub fn product_count(&self) -> u128 {
        self.upper.levels[0].count() as u128 * self.lower.levels[0].count() as u128
    }
}

/// Decomposes the configured system with the configured method.
pub fn decompose_config(cfg: &PipelineConfig) -> Result<DecompositionResult> {
    let ps = PartitionedSystem::new(cfg.system.resolve()?, cfg.k)?;
    let opts = SolverOptions::default();
    match cfg.decomposition.method {
        DecompositionMethod::Modified => {
            decompose_with_policy(&ps, &cfg.decomposition.policy(), &opts)
        }
        DecompositionMethod::Standard => standard_riccati(&ps, &opts),
    }
}

fn columns(m: &Mat, cols: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn sub_box(b: &AxisBox, cols: &[usize]) -> AxisBox {
    AxisBox {
        lo: cols.iter().map(|&c| b.lo[c]).collect(),
        hi: cols.iter().map(|&c| b.hi[c]).collect(),
    }
}

fn concat_boxes(a: &AxisBox, b: &AxisBox) -> AxisBox {
    AxisBox {
        lo: a.lo.iter().chain(&b.lo).copied().collect(),
        hi: a.hi.iter().chain(&b.hi).copied().collect(),
    }
}

struct Split {
    upper: SubsystemSpec,
    upper_u: AxisBox,
    lower: SubsystemSpec,
    /// Extra disturbance appended after the upper-state box (residual lower input).
    lower_extra: Option<AxisBox>,
    lower_u: Option<AxisBox>,
}

fn split(cfg: &PipelineConfig, dec: &DecompositionResult) -> Result<Split> {
    let (a1, b1) = dec.upper_subsystem();
    let (a2, delta, b2) = dec.lower_subsystem();
    let u = &cfg.controls;
    if cfg.decomposition.method == DecompositionMethod::Standard {
        let thresh = 1e-9;
        let (mut up, mut low) = (Vec::new(), Vec::new());
        for c in 0..b1.ncols() {
            let on_upper = b1.column(c).iter().any(|v| v.abs() > thresh);
            let on_lower = b2.column(c).iter().any(|v| v.abs() > thresh);
            match (on_upper, on_lower) {
                (true, true) => {
                    return Err(Error::Parameter(format!(
                        "input {c} acts on both subspaces after the standard transform; inputs are not disjoint"
                    )))
                }
                (false, true) => low.push(c),
                _ => up.push(c),
            }
        }
        return Ok(Split {
            upper: SubsystemSpec::controlled(a1, columns(&b1, &up))?,
            upper_u: sub_box(u, &up),
            lower: SubsystemSpec::controlled(a2, columns(&b2, &low))?,
            lower_extra: None,
            lower_u: Some(sub_box(u, &low)),
        });
    }
    // Any residual lower input is folded into the disturbance so the lower step stays sound.
    let (coupling, extra) = if max_abs(&b2) > 0.0 {
        let mut c = Mat::zeros(a2.nrows(), delta.ncols() + b2.ncols());
        c.view_mut((0, 0), delta.shape()).copy_from(&delta);
        c.view_mut((0, delta.ncols()), b2.shape()).copy_from(&b2);
        (c, Some(u.clone()))
    } else {
        (delta, None)
    };
    Ok(Split {
        upper: SubsystemSpec::controlled(a1, b1)?,
        upper_u: u.clone(),
        lower: SubsystemSpec::uncontrolled(a2, coupling)?,
        lower_extra: extra,
        lower_u: None,
    })
}

/// Runs the interleaved backward recursion on an already computed decomposition.
pub fn run_with_decomposition(
    cfg: &PipelineConfig,
    dec: DecompositionResult,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let sp = cfg.step_params();
    let parts = split(cfg, &dec)?;
    let n_steps = cfg.steps;
    let mut up = vec![initial_level(&cfg.upper.grid, &cfg.upper.constraint)?];
    let mut low = vec![initial_level(&cfg.lower.grid, &cfg.lower.constraint)?];
    let mut vboxes = Vec::with_capacity(n_steps);
    let mut shrinkage = Vec::with_capacity(n_steps);
    let treatment = if parts.lower_u.is_some() {
        LowerTreatment::Viability
    } else {
        LowerTreatment::Invariance
    };

    for s in 0..n_steps {
        let v_next = up.last().unwrap();
        let c_next = low.last().unwrap();
        let vbox = if v_next.is_empty() {
            None
        } else {
            Some(v_next.to_set().interval_hull()?)
        };
        let (v_new, c_new) = rayon::join(
            || {
                viab_step(
                    &parts.upper,
                    v_next,
                    &cfg.upper.constraint,
                    &parts.upper_u,
                    &sp,
                    s,
                )
            },
            || -> Result<(LevelGrid, Option<ShrinkageStep>)> {
                if let Some(lu) = &parts.lower_u {
                    return Ok((
                        viab_step(&parts.lower, c_next, &cfg.lower.constraint, lu, &sp, s)?,
                        None,
                    ));
                }
                match &vbox {
                    // Nothing left upstairs: the product is empty from here on.
                    None => Ok((
                        LevelGrid {
                            grid: c_next.grid.clone(),
                            values: c_next.values.iter().map(|v| v.min(-1.0)).collect(),
                        },
                        None,
                    )),
                    Some(vb) => {
                        let full = match &parts.lower_extra {
                            Some(extra) => concat_boxes(vb, extra),
                            None => vb.clone(),
                        };
                        let (c, rep) = inv_step_etuc(
                            &parts.lower,
                            c_next,
                            &cfg.lower.constraint,
                            &full,
                            &sp,
                            s,
                        )?;
                        Ok((c, Some(rep)))
                    }
                }
            },
        );
        let v_new = v_new?;
        let (c_new, rep) = c_new?;
        up.push(v_new);
        low.push(c_new);
        vboxes.push(vbox);
        shrinkage.push(rep);
    }
    up.reverse();
    low.reverse();
    vboxes.reverse();
    shrinkage.reverse();
    let kernels_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let upper = KernelTrace {
        levels: up,
        q: sp.q,
    };
    let lower = KernelTrace {
        levels: low,
        q: sp.q,
    };
    let product = match upper
        .kernel()
        .cross_product(&lower.kernel(), cfg.product_cap)
    {
        Ok(p) => Some(p),
        Err(Error::ResourceCap { .. }) => None,
        Err(e) => return Err(e),
    };
    let product_s = t1.elapsed().as_secs_f64();
    Ok(PipelineResult {
        decomposition: dec,
        upper,
        lower,
        lower_treatment: treatment,
        vboxes,
        shrinkage,
        product,
        timings: Timings {
            decomposition_s: 0.0,
            kernels_s,
            product_s,
        },
    })
}

/// Decomposes, then runs the decentralized recursion.
pub fn run_decentralized(cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let dec = decompose_config(cfg)?;
    let decomposition_s = t0.elapsed().as_secs_f64();
    let mut r = run_with_decomposition(cfg, dec)?;
    r.timings.decomposition_s = decomposition_s;
    Ok(r)
}

/// Full-order viability kernel of the transformed system on the product grid.
pub fn run_centralized(cfg: &PipelineConfig, dec: &DecompositionResult) -> Result<KernelTrace> {
    let grid = cfg.product_grid();
    check_cap(&grid, cfg.compare.node_cap)?;
    let spec = SubsystemSpec::controlled(dec.transformed.a.clone(), dec.transformed.b.clone())?;
    viability_kernel(
        &spec,
        &grid,
        &cfg.product_constraint(),
        &cfg.controls,
        cfg.tau,
        cfg.steps,
        &cfg.kernel,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Every decentralized node lies within one cell (Chebyshev) of a centralized node.
    pub contained: bool,
    /// Decentralized node count over centralized node count.
    pub coverage: f64,
    pub decentralized_nodes: usize,
    pub centralized_nodes: usize,
    /// Flat indices of decentralized nodes that violate containment.
    pub offending: Vec<usize>,
}

pub fn compare(decentralized: &GridSet, centralized: &GridSet) -> Result<Comparison> {
    let near = centralized.dilate_cells(&vec![1; centralized.grid.dim()]);
    if decentralized.grid != centralized.grid {
        return Err(Error::GridMismatch(
            "decentralized and centralized grids differ".into(),
        ));
    }
    let offending: Vec<usize> = decentralized
        .occ
        .iter()
        .zip(&near.occ)
        .enumerate()
        .filter(|(_, (d, c))| **d && !**c)
        .map(|(i, _)| i)
        .collect();
    Ok(Comparison {
        contained: offending.is_empty(),
        coverage: decentralized.volume_fraction(centralized)?,
        decentralized_nodes: decentralized.count(),
        centralized_nodes: centralized.count(),
        offending,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageRow {
    pub step: usize,
    pub r_norm: f64,
    pub eta: f64,
    pub vbox_sup: f64,
    pub taylor_reference: f64,
    pub applied_radius: f64,
}

/// Per-step disturbance bounds of the lower recursion (steps with an empty upper set are skipped).
pub fn shrinkage_report(result: &PipelineResult) -> Vec<ShrinkageRow> {
    result
        .shrinkage
        .iter()
        .enumerate()
        .filter_map(|(step, s)| {
            s.as_ref().map(|s| ShrinkageRow {
                step,
                r_norm: s.r_norm,
                eta: s.eta,
                vbox_sup: s.vbox_sup,
                taylor_reference: s.taylor_reference,
                applied_radius: s.applied_radius,
            })
        })
        .collect()
}

/// Product set mapped back to original coordinates.
#[derive(Debug, Clone, Default)]
pub struct BackMap {
    /// `(z, T z)` for every occupied product node.
    pub points: Vec<(Vec<f64>, Vec<f64>)>,
    /// Images of the corners of every fully occupied cell; each is a parallelotope.
    pub cells: Vec<Vec<Vec<f64>>>,
}

pub fn map_back(product: &GridSet, t: &Mat) -> Result<BackMap> {
    let g = &product.grid;
    let d = g.dim();
    if t.nrows() != d || t.ncols() != d {
        return Err(Error::Parameter(format!(
            "map_back: T is {:?}, grid is {d}-dimensional",
            t.shape()
        )));
    }
    let apply = |z: &[f64]| -> Vec<f64> {
        (t * Mat::from_column_slice(d, 1, z))
            .iter()
            .copied()
            .collect()
    };
    let mut out = BackMap::default();
    let strides = g.strides();
    let mut idx = vec![0; d];
    for (f, &b) in product.occ.iter().enumerate() {
        if !b {
            continue;
        }
        g.unravel(f, &mut idx);
        let z = g.point(&idx);
        out.points.push((z.clone(), apply(&z)));
        if (0..d).any(|a| idx[a] + 1 >= g.nodes[a]) {
            continue;
        }
        let corners: Vec<usize> = (0..1usize << d)
            .map(|m| {
                f + (0..d)
                    .filter(|a| m >> a & 1 == 1)
                    .map(|a| strides[a])
                    .sum::<usize>()
            })
            .collect();
        if corners.iter().all(|&c| product.occ[c]) {
            out.cells
                .push(corners.iter().map(|&c| apply(&g.point_of(c))).collect());
        }
    }
    Ok(out)
}

/// Machine-readable summary written to `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub delta: f64,
    pub coupling_norm: f64,
    pub residual_z: f64,
    pub residual_m: f64,
    pub input_residual: f64,
    pub upper_right_zero: f64,
    pub lower_input_zero: f64,
    pub lower_treatment: LowerTreatment,
    pub q: f64,
    pub upper_counts: Vec<usize>,
    pub lower_counts: Vec<usize>,
    pub upper_monotone: bool,
    pub lower_monotone: bool,
    pub product_nodes: u128,
    pub product_materialized: bool,
    pub timings: Timings,
    pub shrinkage: Vec<ShrinkageRow>,
    pub comparison: Option<Comparison>,
    pub centralized_s: Option<f64>,
}

pub fn build_report(
    result: &PipelineResult,
    comparison: Option<Comparison>,
    centralized_s: Option<f64>,
) -> Report {
    let d = &result.decomposition.diagnostics;
    Report {
        delta: result.decomposition.delta,
        coupling_norm: d.coupling_norm,
        residual_z: d.residual_z,
        residual_m: d.residual_m,
        input_residual: d.input_residual,
        upper_right_zero: d.upper_right_zero,
        lower_input_zero: d.lower_input_zero,
        lower_treatment: result.lower_treatment,
        q: result.upper.q,
        upper_counts: result.upper.levels.iter().map(LevelGrid::count).collect(),
        lower_counts: result.lower.levels.iter().map(LevelGrid::count).collect(),
        upper_monotone: result.upper.is_monotone(),
        lower_monotone: result.lower.is_monotone(),
        product_nodes: result.product_count(),
        product_materialized: result.product.is_some(),
        timings: result.timings.clone(),
        shrinkage: shrinkage_report(result),
        comparison,
        centralized_s,
    }
}

/// Writes a trace as `step_NNN.grid` dumps plus `index.json`.
pub fn write_trace(trace: &KernelTrace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::new();
    for (i, lg) in trace.levels.iter().enumerate() {
        let name = format!("step_{i:03}.grid");
        let set = lg.to_set();
        set.write_dump(BufWriter::new(std::fs::File::create(dir.join(&name))?))?;
        index.push(serde_json::json!({ "step": i, "time": i as f64 * trace.q, "file": name, "nodes": set.count() }));
    }
    std::fs::write(
        dir.join("index.json"),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(())
}

pub fn write_backmap(bm: &BackMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let d = bm
        .points
        .first()
        .map(|p| p.0.len())
        .or_else(|| bm.cells.first().map(|c| c[0].len()))
        .unwrap_or(0);
    let head: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
    writeln!(w, "kind,id,{}", head.join(","))?;
    let row = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.12e}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    for (i, (_, x)) in bm.points.iter().enumerate() {
        writeln!(w, "node,{i},{}", row(x))?;
    }
    for (i, cell) in bm.cells.iter().enumerate() {
        for c in cell {
            writeln!(w, "corner,{i},{}", row(c))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the full output directory for a pipeline run.
pub fn write_outputs(result: &PipelineResult, report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("decomposition.json"),
        serde_json::to_string_pretty(&result.decomposition.to_json())?,
    )?;
    write_trace(&result.upper, &dir.join("vtrace"))?;
    write_trace(&result.lower, &dir.join("ctrace"))?;
    if let Some(p) = &result.product {
        p.write_dump(BufWriter::new(std::fs::File::create(
            dir.join("product.grid"),
        )?))?;
        write_backmap(
            &map_back(p, &result.decomposition.t)?,
            &dir.join("backmap.csv"),
        )?;
    }
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(())
}
