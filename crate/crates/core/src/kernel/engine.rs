//! Backward grid recursion for finite-horizon viability and invariance kernels.
//!
//! Sets are carried as node values of a level function (inside iff the value
//! is at least `-LEVEL_TOL`). One step of length `q` retains a node when some
//! sampled constant control keeps every sub-sampled trajectory point inside
//! the constraint, with a per-axis slack covering the motion between samples,
//! and the endpoint lands in the previous set.

use super::constraint::Constraint;
use crate::error::{Error, Result};
use crate::grid::{AxisBox, ControlBox, GridBox, GridSet};
use crate::matrix::{default_norm, expm, largest_singular_value, zoh, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Values at or above `-LEVEL_TOL` count as inside.
pub const LEVEL_TOL: f64 = 1e-9;

/// How level values between nodes are reconstructed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Multilinear interpolation of the cell corners.
    #[default]
    Multilinear,
    /// Minimum over the cell corners that carry positive interpolation weight.
    /// Commutes with pointwise minima, so product-form problems split exactly.
    Lattice,
}

/// Outer bound used for the disturbance entering an uncontrolled subsystem.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceBound {
    /// Per-axis reachable tube of the box disturbance (center shift plus radius).
    #[default]
    BoxTube,
    /// Norm ball of radius `|coupling| * sup|v| * eta(|A|, q)`.
    NormBall,
}

/// Slack applied to intermediate constraint samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MarginPolicy {
    /// Half the sample spacing times a per-axis velocity bound.
    #[default]
    Auto,
    /// Fixed per-axis radius.
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct StepParams {
    /// Step length in time.
    pub q: f64,
    /// Control samples per input axis (endpoints included).
    pub m_u: usize,
    /// Constraint sub-samples per step.
    pub m_t: usize,
    pub mode: EvalMode,
    pub disturbance: DisturbanceBound,
    pub margin: MarginPolicy,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            q: 0.1,
            m_u: 3,
            m_t: 4,
            mode: EvalMode::default(),
            disturbance: DisturbanceBound::default(),
            margin: MarginPolicy::default(),
        }
    }
}

impl StepParams {
    pub fn with_q(q: f64) -> Self {
        Self {
            q,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(Error::Parameter(format!(
                "step length must be positive, got {}",
                self.q
            )));
        }
        if self.m_u < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 control samples per axis, got {}",
                self.m_u
            )));
        }
        if self.m_t < 1 {
            return Err(Error::Parameter(
                "need at least 1 constraint sub-sample".into(),
            ));
        }
        if let MarginPolicy::Explicit(r) = self.margin {
            if !(r >= 0.0) {
                return Err(Error::Parameter(format!(
                    "explicit margin must be nonnegative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Subsystem `z' = A z + B u + coupling v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemSpec {
    pub a: Mat,
    pub b: Mat,
    pub coupling: Mat,
}

impl SubsystemSpec {
    pub fn new(a: Mat, b: Mat, coupling: Mat) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Parameter(format!(
                "subsystem A must be square and nonempty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n || coupling.nrows() != n {
            return Err(Error::Parameter(
                "subsystem B and coupling must have as many rows as A".into(),
            ));
        }
        Ok(Self { a, b, coupling })
    }

    pub fn controlled(a: Mat, b: Mat) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, Mat::zeros(n, 0))
    }

    pub fn uncontrolled(a: Mat, coupling: Mat) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, Mat::zeros(n, 0), coupling)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// True when the subsystem receives no direct input.
    pub fn is_etuc(&self) -> bool {
        self.b.ncols() == 0 || self.b.iter().all(|v| *v == 0.0)
    }
}

/// Level-function node values over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrid {
    pub grid: GridBox,
    pub values: Vec<f64>,
}

impl LevelGrid {
    pub fn from_constraint(grid: GridBox, g: &Constraint) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|f| g.level(&grid.point_of(f)))
            .collect();
        Self { grid, values }
    }

    pub fn to_set(&self) -> GridSet {
        GridSet {
            grid: self.grid.clone(),
            occ: self.values.iter().map(|&v| v >= -LEVEL_TOL).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v >= -LEVEL_TOL).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Value at `p`, or `None` when `p` lies outside the grid box.
    pub fn eval(&self, p: &[f64], mode: EvalMode) -> Option<f64> {
        let g = &self.grid;
        let d = g.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; 16];
        let mut step = [0usize; 16];
        let strides = g.strides();
        for a in 0..d {
            let h = g.h(a);
            let t = (p[a] - g.lower[a]) / h;
            let n = g.nodes[a];
            if t < -1e-9 || t > (n - 1) as f64 + 1e-9 {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(n - 2);
            let mut fr = (t - i as f64).clamp(0.0, 1.0);
            if fr < 1e-12 {
                fr = 0.0;
            } else if fr > 1.0 - 1e-12 {
                fr = 1.0;
            }
            base += i * strides[a];
            frac[a] = fr;
            step[a] = strides[a];
        }
        let mut acc = match mode {
            EvalMode::Multilinear => 0.0,
            EvalMode::Lattice => f64::INFINITY,
        };
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            let mut off = base;
            for a in 0..d {
                if mask >> a & 1 == 1 {
                    w *= frac[a];
                    off += step[a];
                } else {
                    w *= 1.0 - frac[a];
                }
                if w == 0.0 {
                    break;
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = self.values[off];
            match mode {
                EvalMode::Multilinear => acc += w * v,
                EvalMode::Lattice => acc = acc.min(v),
            }
        }
        Some(acc)
    }

    /// Value everywhere: outside the grid a negative Lipschitz extrapolation,
    /// never above the constraint level there.
    pub fn eval_ext(&self, p: &[f64], mode: EvalMode, g: &Constraint, lip: f64) -> f64 {
        if let Some(v) = self.eval(p, mode) {
            return v;
        }
        let gb = &self.grid;
        let mut excess = 0.0f64;
        let clamped: Vec<f64> = (0..gb.dim())
            .map(|a| {
                let c = p[a].clamp(gb.lower[a], gb.upper[a]);
                excess = excess.max((p[a] - c).abs());
                c
            })
            .collect();
        let inner = self.eval(&clamped, mode).unwrap_or(f64::NEG_INFINITY);
        g.level(p).min(-1e-12).min(inner - lip * excess)
    }

    /// Minimum of [`Self::eval_ext`] over the box `[lo, hi]`.
    ///
    /// The interpolant is multilinear (or cornerwise constant) on each cell, so
    /// the minimum is attained on the product of the box faces and the grid
    /// lines crossing the box.
    pub fn box_min(&self, lo: &[f64], hi: &[f64], mode: EvalMode, g: &Constraint, lip: f64) -> f64 {
        let gb = &self.grid;
        let d = gb.dim();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let mut v = vec![lo[a]];
                if hi[a] > lo[a] {
                    let h = gb.h(a);
                    let first = (((lo[a] - gb.lower[a]) / h).floor().max(0.0)) as usize;
                    let last =
                        (((hi[a] - gb.lower[a]) / h).ceil().max(0.0) as usize).min(gb.nodes[a] - 1);
                    for i in first..=last {
                        let c = gb.coord(a, i);
                        if c > lo[a] && c < hi[a] {
                            v.push(c);
                        }
                    }
                    v.push(hi[a]);
                }
                v
            })
            .collect();
        let mut idx = vec![0usize; d];
        let mut p = vec![0.0; d];
        let mut best = f64::INFINITY;
        loop {
            for a in 0..d {
                p[a] = axes[a][idx[a]];
            }
            best = best.min(self.eval_ext(&p, mode, g, lip));
            let mut a = d;
            loop {
                if a == 0 {
                    return best;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
}

/// `(e^{s * norm_a} - 1) / norm_a`, with the limit `s` for a vanishing norm.
pub fn eta(norm_a: f64, s: f64) -> f64 {
    if norm_a <= 1e-14 {
        s
    } else {
        (s * norm_a).exp_m1() / norm_a
    }
}

fn row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn matvec(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn check_shapes(spec: &SubsystemSpec, grid: &GridBox, g: &Constraint) -> Result<()> {
    if grid.dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "grid has dimension {} but the subsystem has {} states",
            grid.dim(),
            spec.dim()
        )));
    }
    if grid.dim() > 16 {
        return Err(Error::Parameter(
            "grids above 16 dimensions are not supported".into(),
        ));
    }
    g.validate(spec.dim())
}

/// Lipschitz bound of a level function after `steps` steps of length `q`.
fn value_lipschitz(spec: &SubsystemSpec, g: &Constraint, q: f64, steps: usize) -> f64 {
    g.lipschitz(spec.dim()) * (default_norm(&spec.a) * q * steps as f64).exp()
}

/// One backward viability step for a controlled subsystem.
///
/// `steps_done` counts the steps already folded into `current`; it only scales
/// the extrapolation slope used outside the grid.
pub fn viab_step(
    spec: &SubsystemSpec,
    current: &LevelGrid,
    g: &Constraint,
    u: &ControlBox,
    sp: &StepParams,
    steps_done: usize,
) -> Result<LevelGrid> {
    sp.validate()?;
    check_shapes(spec, &current.grid, g)?;
    if u.dim() != spec.b.ncols() {
        return Err(Error::Parameter(format!(
            "control box has dimension {} but B has {} columns",
            u.dim(),
            spec.b.ncols()
        )));
    }
    if current.is_empty() {
        return Ok(current.clone());
    }
    let n = spec.dim();
    let mt = sp.m_t;
    let dt = sp.q / mt as f64;
    let controls = u.samples(sp.m_u);
    let mut phis = Vec::with_capacity(mt + 1);
    let mut gus: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(mt + 1); controls.len()];
    for j in 0..=mt {
        let (phi, gm) = zoh(&spec.a, &spec.b, j as f64 * dt)?;
        phis.push(row_major(&phi));
        for (c, uc) in controls.iter().enumerate() {
            let uv = Mat::from_column_slice(uc.len(), 1, uc);
            gus[c].push((&gm * uv).iter().copied().collect());
        }
    }
    let bus: Vec<Vec<f64>> = controls
        .iter()
        .map(|uc| {
            (&spec.b * Mat::from_column_slice(uc.len(), 1, uc))
                .iter()
                .copied()
                .collect()
        })
        .collect();
    let abs_exp = row_major(&expm(&spec.a.abs(), sp.q)?);
    let a_rm = row_major(&spec.a);
    let lip = value_lipschitz(spec, g, sp.q, steps_done);
    let grid = &current.grid;

    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![0usize; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                )
            },
            |(idx, ax, vel, exc, xj), f| {
                grid.unravel(f, idx);
                let x = grid.point(idx);
                let cur = current.values[f];
                matvec(&a_rm, n, &x, ax);
                let mut best = f64::NEG_INFINITY;
                for c in 0..controls.len() {
                    match sp.margin {
                        MarginPolicy::Auto => {
                            for r in 0..n {
                                vel[r] = (ax[r] + bus[c][r]).abs();
                            }
                            matvec(&abs_exp, n, vel, exc);
                            exc.iter_mut().for_each(|e| *e *= 0.5 * dt);
                        }
                        MarginPolicy::Explicit(r) => exc.iter_mut().for_each(|e| *e = r),
                    }
                    let mut val = f64::INFINITY;
                    for j in 0..=mt {
                        matvec(&phis[j], n, &x, xj);
                        for r in 0..n {
                            xj[r] += gus[c][j][r];
                        }
                        val = val.min(g.level_inflated(xj, exc));
                        if val <= best {
                            break;
                        }
                    }
                    if val > best {
                        val = val.min(current.eval_ext(xj, sp.mode, g, lip));
                    }
                    best = best.max(val);
                    if best >= cur {
                        break;
                    }
                }
                cur.min(best)
            },
        )
        .collect();
    Ok(LevelGrid {
        grid: grid.clone(),
        values,
    })
}

/// Per-step record of the disturbance bound used by the invariance step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ShrinkageStep {
    /// Norm-ball radius `|coupling| * sup|v| * eta(|A|, q)`.
    pub r_norm: f64,
    pub eta: f64,
    /// Infinity-norm radius of the disturbance box.
    pub vbox_sup: f64,
    /// Second-order reference `q + q^2/2 * sigma_max(A) * sqrt(n)`.
    pub taylor_reference: f64,
    /// Largest per-axis radius actually applied at the step endpoint.
    pub applied_radius: f64,
}

/// Per-axis bound of `int_0^t |e^{sA} D| ds` (elementwise), rigorous midpoint sum.
fn abs_tube_integral(a: &Mat, d: &Mat, t: f64) -> Result<Mat> {
    const PANELS: usize = 64;
    let (n, k) = (a.nrows(), d.ncols());
    let mut acc = Mat::zeros(n, k);
    if t == 0.0 || k == 0 {
        return Ok(acc);
    }
    let hs = t / PANELS as f64;
    for p in 0..PANELS {
        let e = expm(a, (p as f64 + 0.5) * hs)?;
        acc += (e * d).abs() * hs;
    }
    let na = default_norm(a);
    let err = t * 0.5 * hs * na * (t * na).exp() * default_norm(d);
    acc.iter_mut().for_each(|v| *v += err);
    Ok(acc)
}

/// One backward invariance step for an uncontrolled subsystem driven through
/// `coupling` by any measurable disturbance with values in `vbox`.
pub fn inv_step_etuc(
    spec: &SubsystemSpec,
    current: &LevelGrid,
    g: &Constraint,
    vbox: &AxisBox,
    sp: &StepParams,
    steps_done: usize,
) -> Result<(LevelGrid, ShrinkageStep)> {
    sp.validate()?;
    check_shapes(spec, &current.grid, g)?;
    if !spec.is_etuc() {
        return Err(Error::Parameter(
            "invariance step needs a subsystem without direct input".into(),
        ));
    }
    if vbox.dim() != spec.coupling.ncols() {
        return Err(Error::Parameter(format!(
            "disturbance box has dimension {} but the coupling has {} columns",
            vbox.dim(),
            spec.coupling.ncols()
        )));
    }
    let n = spec.dim();
    let q = sp.q;
    let na = default_norm(&spec.a);
    let nd = if spec.coupling.ncols() == 0 {
        0.0
    } else {
        default_norm(&spec.coupling)
    };
    let et = eta(na, q);
    let r_norm = nd * vbox.inf_radius() * et;
    let taylor_reference = q + 0.5 * q * q * largest_singular_value(&spec.a) * (n as f64).sqrt();

    let mt = sp.m_t;
    let dt = q / mt as f64;
    let k = spec.coupling.ncols();
    let center = Mat::from_column_slice(k, 1, &vbox.center());
    let hw = Mat::from_column_slice(k, 1, &vbox.half_width());
    let mut maps = Vec::with_capacity(mt + 1);
    let mut shifts = Vec::with_capacity(mt + 1);
    let mut rads = Vec::with_capacity(mt + 1);
    for j in 0..=mt {
        let t = j as f64 * dt;
        let (e, s) = zoh(&spec.a, &Mat::identity(n, n), t)?;
        match sp.disturbance {
            DisturbanceBound::BoxTube => {
                shifts.push(
                    (&s * &spec.coupling * &center)
                        .iter()
                        .copied()
                        .collect::<Vec<f64>>(),
                );
                let tube = abs_tube_integral(&spec.a, &spec.coupling, t)?;
                rads.push((tube * &hw).iter().copied().collect::<Vec<f64>>());
            }
            DisturbanceBound::NormBall => {
                shifts.push(vec![0.0; n]);
                rads.push(
                    (0..n)
                        .map(|r| e.row(r).iter().map(|v| v.abs()).sum::<f64>() * r_norm)
                        .collect(),
                );
            }
        }
        maps.push(row_major(&e));
    }
    let applied_radius = rads[mt].iter().fold(0.0f64, |m, v| m.max(*v));
    let report = ShrinkageStep {
        r_norm,
        eta: et,
        vbox_sup: vbox.inf_radius(),
        taylor_reference,
        applied_radius,
    };
    if current.is_empty() {
        return Ok((current.clone(), report));
    }

    let abs_a = spec.a.abs();
    let c1 = row_major(&expm(&abs_a, q)?);
    let a_rm = row_major(&spec.a);
    let vmax = Mat::from_iterator(
        k,
        1,
        vbox.lo
            .iter()
            .zip(&vbox.hi)
            .map(|(l, h)| l.abs().max(h.abs())),
    );
    let drive = spec.coupling.abs() * vmax;
    let s_abs = zoh(&abs_a, &Mat::identity(n, n), q)?.1;
    let cvec: Vec<f64> = (&abs_a * &s_abs * &drive + &drive)
        .iter()
        .copied()
        .collect();
    let lip = value_lipschitz(spec, g, q, steps_done);
    let grid = &current.grid;

    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![0usize; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                )
            },
            |(idx, xa, exc, zj, lo, hi), f| {
                grid.unravel(f, idx);
                let x = grid.point(idx);
                let cur = current.values[f];
                match sp.margin {
                    MarginPolicy::Auto => {
                        matvec(&a_rm, n, &x, xa);
                        xa.iter_mut().for_each(|v| *v = v.abs());
                        matvec(&c1, n, xa, exc);
                        for r in 0..n {
                            exc[r] = 0.5 * dt * (exc[r] + cvec[r]);
                        }
                    }
                    MarginPolicy::Explicit(r) => exc.iter_mut().for_each(|e| *e = r),
                }
                let mut val = cur;
                for j in 0..=mt {
                    matvec(&maps[j], n, &x, zj);
                    for r in 0..n {
                        zj[r] += shifts[j][r];
                        lo[r] = rads[j][r] + exc[r];
                    }
                    val = val.min(g.level_inflated(zj, lo));
                }
                for r in 0..n {
                    lo[r] = zj[r] - rads[mt][r];
                    hi[r] = zj[r] + rads[mt][r];
                }
                val.min(current.box_min(lo, hi, sp.mode, g, lip))
            },
        )
        .collect();
    Ok((
        LevelGrid {
            grid: grid.clone(),
            values,
        },
        report,
    ))
}

/// Backward trace `V_0, ..., V_N` of a controlled subsystem.
#[derive(Debug, Clone)]
pub struct KernelTrace {
    /// `levels[i]` holds the set for remaining horizon `(N - i) q`; `levels[0]` is the kernel.
    pub levels: Vec<LevelGrid>,
    pub q: f64,
}

impl KernelTrace {
    pub fn kernel(&self) -> GridSet {
        self.levels[0].to_set()
    }

    pub fn sets(&self) -> Vec<GridSet> {
        self.levels.iter().map(LevelGrid::to_set).collect()
    }

    /// True when every `V_i` is contained in `V_{i+1}`.
    pub fn is_monotone(&self) -> bool {
        self.levels.windows(2).all(|w| {
            w[0].values
                .iter()
                .zip(&w[1].values)
                .all(|(a, b)| !(*a >= -LEVEL_TOL) || *b >= -LEVEL_TOL)
        })
    }
}

fn step_length(tau: f64, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Parameter(
            "number of steps must be at least 1".into(),
        ));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "horizon must be positive, got {tau}"
        )));
    }
    Ok(tau / steps as f64)
}

/// Initial level grid for constraint `g`; errors when no node satisfies it.
pub fn initial_level(grid: &GridBox, g: &Constraint) -> Result<LevelGrid> {
    let init = LevelGrid::from_constraint(grid.clone(), g);
    if init.is_empty() {
        return Err(Error::EmptySet(
            "state constraint has no grid node (ill-posed problem)".into(),
        ));
    }
    Ok(init)
}

/// Finite-horizon viability kernel over `[0, tau]` with `steps` steps.
/// `sp.q` is replaced by `tau / steps`.
pub fn viability_kernel(
    spec: &SubsystemSpec,
    grid: &GridBox,
    g: &Constraint,
    u: &ControlBox,
    tau: f64,
    steps: usize,
    sp: &StepParams,
) -> Result<KernelTrace> {
    let q = step_length(tau, steps)?;
    let sp = StepParams { q, ..sp.clone() };
    check_shapes(spec, grid, g)?;
    let mut levels = vec![initial_level(grid, g)?];
    for s in 0..steps {
        let next = viab_step(spec, levels.last().unwrap(), g, u, &sp, s)?;
        levels.push(next);
    }
    levels.reverse();
    Ok(KernelTrace { levels, q })
}

/// Backward trace of an uncontrolled subsystem plus the per-step bound record.
#[derive(Debug, Clone)]
pub struct InvarianceTrace {
    pub trace: KernelTrace,
    /// `shrinkage[i]` belongs to the step producing `C_i`.
    pub shrinkage: Vec<ShrinkageStep>,
}

/// Finite-horizon invariance kernel; `vboxes[i]` bounds the disturbance during
/// the step that produces `C_i` (so it should cover the upper set at `i + 1`).
pub fn invariance_kernel_etuc(
    spec: &SubsystemSpec,
    grid: &GridBox,
    g: &Constraint,
    vboxes: &[AxisBox],
    tau: f64,
    steps: usize,
    sp: &StepParams,
) -> Result<InvarianceTrace> {
    let q = step_length(tau, steps)?;
    if vboxes.len() != steps {
        return Err(Error::Parameter(format!(
            "expected {steps} disturbance boxes, got {}",
            vboxes.len()
        )));
    }
    let sp = StepParams { q, ..sp.clone() };
    check_shapes(spec, grid, g)?;
    let mut levels = vec![initial_level(grid, g)?];
    let mut shrinkage = Vec::with_capacity(steps);
    for s in 0..steps {
        let i = steps - 1 - s;
        let (next, rep) = inv_step_etuc(spec, levels.last().unwrap(), g, &vboxes[i], &sp, s)?;
        levels.push(next);
        shrinkage.push(rep);
    }
    levels.reverse();
    shrinkage.reverse();
    Ok(InvarianceTrace {
        trace: KernelTrace { levels, q },
        shrinkage,
    })
}
