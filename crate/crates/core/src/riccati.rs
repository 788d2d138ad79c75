//! Standard and modified Riccati similarity transformations.
//!
//! The modified transformation splits `x = (x1, x2)` with `dim x1 = k` and
//! produces coordinates in which the lower block receives no input (it is
//! externally trivially uncontrollable, ETUC) and the upper block does not
//! depend on the lower one. The remaining coupling from upper to lower is
//! `delta * F(Z)`, where `delta` is a free scalar picked to make it small.

use crate::error::{Error, Result};
use crate::matrix::{
    self, condition_number, inverse, max_abs, norm, pseudoinverse, rank, Mat, MatrixJson, NormKind,
};
use crate::system::LtiSystem;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Numerical knobs shared by all solvers in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub norm: NormKind,
    /// Factor applied to the right-hand side of both feasibility conditions.
    pub relaxation: f64,
    pub max_iter: usize,
    /// Convergence tolerance on successive iterate differences (relative to max(1, |iterate|)).
    pub tol: f64,
    pub residual_tol: f64,
    pub structural_tol: f64,
    pub cond_warning: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            norm: NormKind::default(),
            relaxation: 1.0,
            max_iter: 500,
            tol: 1e-12,
            residual_tol: 1e-8,
            structural_tol: 1e-6,
            cond_warning: 1e6,
        }
    }
}

impl SolverOptions {
    pub fn with_relaxation(mut self, r: f64) -> Self {
        self.relaxation = r;
        self
    }
}

/// An LTI system together with a split index `k` (dimension of the upper block).
#[derive(Debug, Clone)]
pub struct PartitionedSystem {
    pub sys: LtiSystem,
    pub k: usize,
    pub a11: Mat,
    pub a12: Mat,
    pub a21: Mat,
    pub a22: Mat,
    pub b1: Mat,
    pub b2: Mat,
}

impl PartitionedSystem {
    pub fn new(sys: LtiSystem, k: usize) -> Result<Self> {
        let n = sys.states();
        if k == 0 || k >= n {
            return Err(Error::Parameter(format!(
                "split index k = {k} must satisfy 1 <= k < n = {n}"
            )));
        }
        let m = n - k;
        let p = sys.inputs();
        let a = &sys.a;
        let b = &sys.b;
        Ok(Self {
            a11: a.view((0, 0), (k, k)).into_owned(),
            a12: a.view((0, k), (k, m)).into_owned(),
            a21: a.view((k, 0), (m, k)).into_owned(),
            a22: a.view((k, k), (m, m)).into_owned(),
            b1: b.view((0, 0), (k, p)).into_owned(),
            b2: b.view((k, 0), (m, p)).into_owned(),
            sys,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.sys.states()
    }

    pub fn lower_dim(&self) -> usize {
        self.n() - self.k
    }
}

/// True when the row space of B2 lies in the row space of B1, so that
/// `L B1 + B2 = 0` is solvable.
pub fn check_solvability(ps: &PartitionedSystem) -> bool {
    let b1t = ps.b1.transpose();
    let mut stacked = Mat::zeros(b1t.nrows(), b1t.ncols() + ps.b2.nrows());
    stacked.view_mut((0, 0), b1t.shape()).copy_from(&b1t);
    stacked
        .view_mut((0, b1t.ncols()), (b1t.nrows(), ps.b2.nrows()))
        .copy_from(&ps.b2.transpose());
    rank(&b1t) == rank(&stacked)
}

/// Coefficients and initial values of the nonsymmetric Riccati equation in `Z`:
/// `Z a11t - a22t Z - Z a12t Z + a21t = 0`.
#[derive(Debug, Clone)]
pub struct NareProblem {
    pub delta: f64,
    /// Orthogonal projector `B1 B1^+` onto the column space of B1.
    pub proj: Mat,
    /// `B2 B1^+`.
    pub b2_b1pinv: Mat,
    pub xi: Mat,
    pub gamma: Mat,
    /// Closed-form inverse of `(B1 B1^+ - (delta + 1) I)`.
    pub shifted_inverse: Mat,
    pub a11t: Mat,
    pub a12t: Mat,
    pub a21t: Mat,
    pub a22t: Mat,
    pub a22t_inv: Mat,
    pub z0: Mat,
    pub a0: Mat,
}

/// Closed-form inverse of `(P - (delta + 1) I)` for an orthogonal projector `P`.
pub fn shifted_projector_inverse(proj: &Mat, delta: f64) -> Mat {
    let k = proj.nrows();
    (Mat::identity(k, k) + proj / delta) * (-1.0 / (delta + 1.0))
}

fn check_delta(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta.abs() < 1e-12 || (delta + 1.0).abs() < 1e-12 {
        return Err(Error::Parameter(format!(
            "delta = {delta} is not allowed (must be finite, not 0 or -1)"
        )));
    }
    Ok(())
}

pub fn build_nare(ps: &PartitionedSystem, delta: f64) -> Result<NareProblem> {
    check_delta(delta)?;
    if !check_solvability(ps) {
        return Err(Error::Parameter(
            "row space of B2 is not contained in the row space of B1".into(),
        ));
    }
    let k = ps.k;
    let id = Mat::identity(k, k);
    let b1p = pseudoinverse(&ps.b1);
    let proj = &ps.b1 * &b1p;
    let b2_b1pinv = &ps.b2 * &b1p;
    let xi = -(&proj - &id) * (&ps.a11 + &ps.a12 * &b2_b1pinv);
    let gamma = (&ps.a22 * &b2_b1pinv + &ps.a21) - &b2_b1pinv * (&ps.a12 * &b2_b1pinv + &ps.a11);
    let shifted_inverse = shifted_projector_inverse(&proj, delta);
    let a12t = &proj * &ps.a12 - &ps.a12;
    let a22t = &b2_b1pinv * &ps.a12 - &ps.a22;
    let a22t_inv = inverse(&a22t, "B2 B1^+ A12 - A22 (Z0 undefined)")?;
    let a11t = &xi * &shifted_inverse;
    let a21t = &gamma * &shifted_inverse;
    let z0 = &a22t_inv * &a21t;
    let a0 = &a11t - &a12t * &z0;
    Ok(NareProblem {
        delta,
        proj,
        b2_b1pinv,
        xi,
        gamma,
        shifted_inverse,
        a11t,
        a12t,
        a21t,
        a22t,
        a22t_inv,
        z0,
        a0,
    })
}

/// Outcome of evaluating a feasibility condition `lhs <= relaxation * rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub relaxation: f64,
}

impl Feasibility {
    fn new(lhs: f64, denom: f64, relaxation: f64) -> Self {
        let rhs = if denom > 0.0 {
            1.0 / (3.0 * denom)
        } else {
            f64::INFINITY
        };
        Self {
            satisfied: lhs <= relaxation * rhs,
            lhs,
            rhs,
            relaxation,
        }
    }

    /// `lhs / rhs`; the predicted per-iteration error contraction factor.
    pub fn ratio(&self) -> f64 {
        if self.rhs.is_infinite() {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

pub fn feasibility_cond1(np: &NareProblem, kind: NormKind, relaxation: f64) -> Feasibility {
    let lhs = norm(&np.a22t_inv, kind);
    let denom = norm(&np.a0, kind) + norm(&np.a12t, kind) * norm(&np.z0, kind);
    Feasibility::new(lhs, denom, relaxation)
}

/// A priori bound on the norm of the first contraction's fixed point.
pub fn increment_bound1(np: &NareProblem, kind: NormKind) -> f64 {
    let a0 = norm(&np.a0, kind);
    let z0 = norm(&np.z0, kind);
    let den = a0 + norm(&np.a12t, kind) * z0;
    if den == 0.0 {
        0.0
    } else {
        2.0 * a0 * z0 / den
    }
}

/// Result of a fixed-point contraction.
#[derive(Debug, Clone)]
pub struct Contraction {
    /// Fixed-point increment (D or J).
    pub increment: Mat,
    /// Full solution (Z = D + Z0 or M = J + M0).
    pub solution: Mat,
    pub iterations: usize,
    pub residual: f64,
    /// Iterates D_0 = 0, D_1, ... (used for error-bound checks).
    pub iterates: Vec<Mat>,
    pub bound: f64,
}

fn iterate_contraction<F: Fn(&Mat) -> Mat>(
    step: F,
    shape: (usize, usize),
    bound: f64,
    opts: &SolverOptions,
) -> Result<(Mat, Vec<Mat>)> {
    let guard = 1e6 * bound.max(1.0);
    let mut d = Mat::zeros(shape.0, shape.1);
    let mut iterates = vec![d.clone()];
    let mut trace = Vec::new();
    for it in 1..=opts.max_iter {
        let next = step(&d);
        let diff = norm(&(&next - &d), opts.norm);
        let size = norm(&next, opts.norm);
        trace.push(diff);
        iterates.push(next.clone());
        if !size.is_finite() || size > guard {
            return Err(Error::Divergence {
                iterations: it,
                norm: size,
                guard,
                trace,
            });
        }
        d = next;
        if diff <= opts.tol * size.max(1.0) {
            return Ok((d, iterates));
        }
    }
    let last_step = trace.last().copied().unwrap_or(0.0);
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_step,
        trace,
    })
}

/// Residual of the Riccati equation in `Z`.
pub fn nare_residual(np: &NareProblem, z: &Mat) -> Mat {
    z * &np.a11t - &np.a22t * z - z * &np.a12t * z + &np.a21t
}

/// Solves the first contraction `D <- a22t^-1 (Z0 A0 + D A0 - Z0 a12t D - D a12t D)` from D = 0.
/// Feasibility is not checked here; see [`feasibility_cond1`].
pub fn solve_contraction1(np: &NareProblem, opts: &SolverOptions) -> Result<Contraction> {
    let bound = increment_bound1(np, opts.norm);
    let z0a0 = &np.z0 * &np.a0;
    let z0a12t = &np.z0 * &np.a12t;
    let step = |d: &Mat| &np.a22t_inv * (&z0a0 + d * &np.a0 - &z0a12t * d - d * &np.a12t * d);
    let (d, iterates) = iterate_contraction(step, np.z0.shape(), bound, opts)?;
    let z = &d + &np.z0;
    let recast = &d * &np.a0 - (&np.a22t + &z0a12t) * &d - &d * &np.a12t * &d + &z0a0;
    let residual = norm(&nare_residual(np, &z), opts.norm).max(norm(&recast, opts.norm));
    if residual > opts.residual_tol {
        return Err(Error::Residual {
            what: "Riccati residual in Z".into(),
            value: residual,
            tol: opts.residual_tol,
        });
    }
    Ok(Contraction {
        iterations: iterates.len() - 1,
        increment: d,
        solution: z,
        residual,
        iterates,
        bound,
    })
}

/// `L = -B2 B1^+ + Z - Z B1 B1^+`, verified against `L B1 + B2 = 0`.
pub fn recover_l(z: &Mat, ps: &PartitionedSystem, opts: &SolverOptions) -> Result<Mat> {
    let b1p = pseudoinverse(&ps.b1);
    let proj = &ps.b1 * &b1p;
    let l = -(&ps.b2 * &b1p) + z - z * &proj;
    let res = max_abs(&(&l * &ps.b1 + &ps.b2));
    if res > opts.residual_tol {
        return Err(Error::Residual {
            what: "|L B1 + B2|".into(),
            value: res,
            tol: opts.residual_tol,
        });
    }
    Ok(l)
}

/// `F(Z) = Z (A12 - P A12) Z + (A22 - B2 B1^+ A12) Z`; the coupling block is `delta * F(Z)`.
pub fn coupling_f(z: &Mat, ps: &PartitionedSystem) -> Mat {
    let b1p = pseudoinverse(&ps.b1);
    let proj = &ps.b1 * &b1p;
    z * (&ps.a12 - &proj * &ps.a12) * z + (&ps.a22 - &ps.b2 * &b1p * &ps.a12) * z
}

pub fn coupling(z: &Mat, delta: f64, ps: &PartitionedSystem) -> Mat {
    coupling_f(z, ps) * delta
}

/// Initial values of the second contraction.
#[derive(Debug, Clone)]
pub struct SecondStage {
    pub upper: Mat,
    pub upper_inv: Mat,
    pub m0: Mat,
    pub n0: Mat,
    pub coupling: Mat,
}

pub fn second_stage(ps: &PartitionedSystem, l: &Mat, coupling_block: &Mat) -> Result<SecondStage> {
    let upper = &ps.a11 - &ps.a12 * l;
    let upper_inv = inverse(&upper, "A11 - A12 L")?;
    let m0 = -(&upper_inv * &ps.a12);
    let n0 = &ps.a22 + l * &ps.a12 + coupling_block * &m0;
    Ok(SecondStage {
        upper,
        upper_inv,
        m0,
        n0,
        coupling: coupling_block.clone(),
    })
}

pub fn feasibility_cond2(st: &SecondStage, kind: NormKind, relaxation: f64) -> Feasibility {
    let lhs = norm(&st.upper_inv, kind);
    let denom = norm(&st.n0, kind) + norm(&st.coupling, kind) * norm(&st.m0, kind);
    Feasibility::new(lhs, denom, relaxation)
}

pub fn increment_bound2(st: &SecondStage, kind: NormKind) -> f64 {
    let n0 = norm(&st.n0, kind);
    let m0 = norm(&st.m0, kind);
    let den = n0 + norm(&st.coupling, kind) * m0;
    if den == 0.0 {
        0.0
    } else {
        2.0 * n0 * m0 / den
    }
}

/// Residual of the Riccati equation in `M`.
pub fn second_residual(ps: &PartitionedSystem, l: &Mat, coupling_block: &Mat, m: &Mat) -> Mat {
    (&ps.a11 - &ps.a12 * l) * m - m * (&ps.a22 + l * &ps.a12) - m * coupling_block * m + &ps.a12
}

/// Solves `J <- (A11 - A12 L)^-1 (M0 N0 + J N0 + M0 G J + J G J)` from J = 0, with `G = delta F(Z)`.
pub fn solve_contraction2(
    ps: &PartitionedSystem,
    l: &Mat,
    st: &SecondStage,
    opts: &SolverOptions,
) -> Result<Contraction> {
    let bound = increment_bound2(st, opts.norm);
    let m0n0 = &st.m0 * &st.n0;
    let m0g = &st.m0 * &st.coupling;
    let step = |j: &Mat| &st.upper_inv * (&m0n0 + j * &st.n0 + &m0g * j + j * &st.coupling * j);
    let (j, iterates) = iterate_contraction(step, st.m0.shape(), bound, opts)?;
    let m = &j + &st.m0;
    let residual = norm(&second_residual(ps, l, &st.coupling, &m), opts.norm);
    if residual > opts.residual_tol {
        return Err(Error::Residual {
            what: "Riccati residual in M".into(),
            value: residual,
            tol: opts.residual_tol,
        });
    }
    Ok(Contraction {
        iterations: iterates.len() - 1,
        increment: j,
        solution: m,
        residual,
        iterates,
        bound,
    })
}

/// Lower and upper block-triangular factors and their exact inverses.
pub fn transforms(n: usize, k: usize, l: &Mat, m: &Mat) -> (Mat, Mat, Mat, Mat) {
    let mut t1 = Mat::identity(n, n);
    t1.view_mut((k, 0), (n - k, k)).copy_from(&(-l));
    let mut t2 = Mat::identity(n, n);
    t2.view_mut((0, k), (k, n - k)).copy_from(m);
    let mut t1_inv = Mat::identity(n, n);
    t1_inv.view_mut((k, 0), (n - k, k)).copy_from(l);
    let mut t2_inv = Mat::identity(n, n);
    t2_inv.view_mut((0, k), (k, n - k)).copy_from(&(-m));
    let t = &t1 * &t2;
    let t_inv = &t2_inv * &t1_inv;
    (t1, t2, t, t_inv)
}

/// Convergence and structure diagnostics of a decomposition.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations_z: usize,
    pub iterations_m: usize,
    pub residual_z: f64,
    pub residual_m: f64,
    pub input_residual: f64,
    pub upper_right_zero: f64,
    pub lower_input_zero: f64,
    pub condition_t: f64,
    pub condition_warning: bool,
    pub cond1: Option<Feasibility>,
    pub cond2: Option<Feasibility>,
    pub coupling_norm: f64,
    pub upper_eigenvalues: Vec<[f64; 2]>,
    pub lower_eigenvalues: Vec<[f64; 2]>,
    pub disjoint_input: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub k: usize,
    pub delta: f64,
    pub l: Mat,
    pub z: Mat,
    pub m: Mat,
    pub d: Mat,
    pub j: Mat,
    pub t1: Mat,
    pub t2: Mat,
    pub t: Mat,
    pub t_inv: Mat,
    pub transformed: LtiSystem,
    pub coupling: Mat,
    pub diagnostics: Diagnostics,
    /// Iterates of both contractions, kept for error-bound checks.
    pub z_iterates: Vec<Mat>,
    pub m_iterates: Vec<Mat>,
}

impl DecompositionResult {
    /// Dynamics of the upper (controlled) subsystem: `(A, B)`.
    pub fn upper_subsystem(&self) -> (Mat, Mat) {
        let k = self.k;
        let p = self.transformed.inputs();
        (
            self.transformed.a.view((0, 0), (k, k)).into_owned(),
            self.transformed.b.view((0, 0), (k, p)).into_owned(),
        )
    }

    /// Dynamics of the lower subsystem: `(A, coupling from upper states, B)`.
    pub fn lower_subsystem(&self) -> (Mat, Mat, Mat) {
        let k = self.k;
        let n = self.transformed.states();
        let p = self.transformed.inputs();
        (
            self.transformed.a.view((k, k), (n - k, n - k)).into_owned(),
            self.transformed.a.view((k, 0), (n - k, k)).into_owned(),
            self.transformed.b.view((k, 0), (n - k, p)).into_owned(),
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mj = |m: &Mat| MatrixJson::from(m);
        json!({
            "k": self.k,
            "delta": self.delta,
            "T1": mj(&self.t1),
            "T2": mj(&self.t2),
            "T": mj(&self.t),
            "L": mj(&self.l),
            "M": mj(&self.m),
            "Z": mj(&self.z),
            "coupling": mj(&self.coupling),
            "A_transformed": mj(&self.transformed.a),
            "B_transformed": mj(&self.transformed.b),
            "diagnostics": self.diagnostics,
        })
    }
}

fn eigen_pairs(m: &Mat) -> Vec<[f64; 2]> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<[f64; 2]> = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| [c.re, c.im])
        .collect();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    v
}

/// Builds `T`, the transformed system, and verifies the structural zero blocks.
pub fn assemble(
    ps: &PartitionedSystem,
    l: &Mat,
    m: &Mat,
    delta: f64,
    z: &Mat,
    opts: &SolverOptions,
) -> Result<DecompositionResult> {
    let n = ps.n();
    let k = ps.k;
    let (t1, t2, t, t_inv) = transforms(n, k, l, m);
    let a2 = &t_inv * &ps.sys.a * &t;
    let b2 = &t_inv * &ps.sys.b;
    let upper_right = max_abs(&a2.view((0, k), (k, n - k)).into_owned());
    let lower_input = max_abs(&b2.view((k, 0), (n - k, b2.ncols())).into_owned());
    if upper_right > opts.structural_tol || lower_input > opts.structural_tol {
        return Err(Error::StructuralZero {
            upper_right,
            lower_input,
        });
    }
    let cond = condition_number(&t);
    let coupling_block = coupling(z, delta, ps);
    let diagnostics = Diagnostics {
        input_residual: max_abs(&(l * &ps.b1 + &ps.b2)),
        upper_right_zero: upper_right,
        lower_input_zero: lower_input,
        condition_t: cond,
        condition_warning: cond > opts.cond_warning,
        coupling_norm: norm(&coupling_block, opts.norm),
        upper_eigenvalues: eigen_pairs(&a2.view((0, 0), (k, k)).into_owned()),
        lower_eigenvalues: eigen_pairs(&a2.view((k, k), (n - k, n - k)).into_owned()),
        ..Default::default()
    };
    Ok(DecompositionResult {
        k,
        delta,
        l: l.clone(),
        z: z.clone(),
        m: m.clone(),
        d: Mat::zeros(z.nrows(), z.ncols()),
        j: Mat::zeros(m.nrows(), m.ncols()),
        t1,
        t2,
        t,
        t_inv,
        transformed: LtiSystem { a: a2, b: b2 },
        coupling: coupling_block,
        diagnostics,
        z_iterates: Vec::new(),
        m_iterates: Vec::new(),
    })
}

/// Full modified Riccati decomposition at a fixed `delta`.
///
/// Both feasibility conditions are enforced at `opts.relaxation`.
pub fn decompose(
    ps: &PartitionedSystem,
    delta: f64,
    opts: &SolverOptions,
) -> Result<DecompositionResult> {
    let np = build_nare(ps, delta)?;
    let c1 = feasibility_cond1(&np, opts.norm, opts.relaxation);
    if !c1.satisfied {
        return Err(Error::Infeasible {
            which: "cond1",
            lhs: c1.lhs,
            rhs: c1.relaxation * c1.rhs,
        });
    }
    let first = solve_contraction1(&np, opts)?;
    let l = recover_l(&first.solution, ps, opts)?;
    let g = coupling(&first.solution, delta, ps);
    let st = second_stage(ps, &l, &g)?;
    let c2 = feasibility_cond2(&st, opts.norm, opts.relaxation);
    if !c2.satisfied {
        return Err(Error::Infeasible {
            which: "cond2",
            lhs: c2.lhs,
            rhs: c2.relaxation * c2.rhs,
        });
    }
    let second = solve_contraction2(ps, &l, &st, opts)?;
    let mut res = assemble(ps, &l, &second.solution, delta, &first.solution, opts)?;
    res.d = first.increment;
    res.j = second.increment;
    res.diagnostics.iterations_z = first.iterations;
    res.diagnostics.iterations_m = second.iterations;
    res.diagnostics.residual_z = first.residual;
    res.diagnostics.residual_m = second.residual;
    res.diagnostics.cond1 = Some(c1);
    res.diagnostics.cond2 = Some(c2);
    res.z_iterates = first.iterates;
    res.m_iterates = second.iterates;
    Ok(res)
}

/// Terms of the delta-dependent upper bound on the coupling norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingBoundTerms {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn coupling_bound_terms(ps: &PartitionedSystem, kind: NormKind) -> Result<CouplingBoundTerms> {
    let b1p = pseudoinverse(&ps.b1);
    let proj = &ps.b1 * &b1p;
    let b2b1p = &ps.b2 * &b1p;
    let lower = &ps.a22 - &b2b1p * &ps.a12;
    let lower_inv = inverse(&lower, "A22 - B2 B1^+ A12")?;
    let gamma_m = (&ps.a22 * &b2b1p + &ps.a21) - &b2b1p * (&ps.a12 * &b2b1p + &ps.a11);
    let gamma = norm(&gamma_m, kind) * norm(&lower_inv, kind);
    let alpha = norm(&(&ps.a12 - &proj * &ps.a12), kind);
    let beta = norm(&lower, kind);
    let b = 3.0 * norm(&proj, kind) * gamma * beta;
    let a = alpha * (3.0 * norm(&proj, kind) * gamma).powi(2);
    Ok(CouplingBoundTerms {
        a,
        b,
        alpha,
        beta,
        gamma,
    })
}

/// Upper bound on `|delta F(Z(delta))|` valid for every admissible delta.
pub fn coupling_upper_bound(ps: &PartitionedSystem, delta: f64, kind: NormKind) -> Result<f64> {
    check_delta(delta)?;
    let t = coupling_bound_terms(ps, kind)?;
    let r = (delta.abs() + 1.0) / (delta + 1.0).abs();
    Ok(r * r * t.a / delta.abs() + r * t.b)
}

/// Norm of the matrix whose norm is the large-delta limit of the coupling norm.
pub fn gamma_norm(ps: &PartitionedSystem, kind: NormKind) -> Result<f64> {
    let np = build_nare(ps, 1.0)?;
    Ok(norm(&np.gamma, kind))
}

/// One point of a delta sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSample {
    pub delta: f64,
    /// Predicted contraction factors `lhs / rhs` of the two conditions.
    pub ratio1: Option<f64>,
    pub ratio2: Option<f64>,
    /// Coupling norm, when both contractions converged.
    pub coupling_norm: Option<f64>,
    pub upper_bound: Option<f64>,
    /// Feasible under relaxation 1.
    pub feasible_unrelaxed: bool,
    /// Feasible under the relaxation that produced the optimum.
    pub feasible: bool,
}

impl DeltaSample {
    pub fn feasible_at(&self, relaxation: f64) -> bool {
        matches!((self.ratio1, self.ratio2, self.coupling_norm), (Some(r1), Some(r2), Some(_)) if r1 <= relaxation && r2 <= relaxation)
    }
}

/// Evaluates conditions and coupling at one delta without enforcing feasibility.
pub fn evaluate_delta(ps: &PartitionedSystem, delta: f64, opts: &SolverOptions) -> DeltaSample {
    let mut s = DeltaSample {
        delta,
        ratio1: None,
        ratio2: None,
        coupling_norm: None,
        upper_bound: coupling_upper_bound(ps, delta, opts.norm).ok(),
        feasible_unrelaxed: false,
        feasible: false,
    };
    let Ok(np) = build_nare(ps, delta) else {
        return s;
    };
    s.ratio1 = Some(feasibility_cond1(&np, opts.norm, 1.0).ratio());
    let Ok(first) = solve_contraction1(&np, opts) else {
        return s;
    };
    let Ok(l) = recover_l(&first.solution, ps, opts) else {
        return s;
    };
    let g = coupling(&first.solution, delta, ps);
    let Ok(st) = second_stage(ps, &l, &g) else {
        return s;
    };
    s.ratio2 = Some(feasibility_cond2(&st, opts.norm, 1.0).ratio());
    if solve_contraction2(ps, &l, &st, opts).is_err() {
        return s;
    }
    s.coupling_norm = Some(norm(&g, opts.norm));
    s.feasible_unrelaxed = s.feasible_at(1.0);
    s
}

/// Search settings for [`optimize_delta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeltaSearch {
    /// Candidate deltas; empty means the default symmetric log grid.
    pub grid: Vec<f64>,
    /// Relaxation factors tried in order until one admits a feasible delta.
    pub relaxations: Vec<f64>,
    pub refine_steps: usize,
}

impl Default for DeltaSearch {
    fn default() -> Self {
        Self {
            grid: Vec::new(),
            relaxations: vec![1.0, 2.0, 5.0, 10.0],
            refine_steps: 20,
        }
    }
}

/// Log-spaced symmetric grid `+-[1, 1e4]`, 48 points per sign, without -1.
pub fn default_delta_grid() -> Vec<f64> {
    let pos: Vec<f64> = (0..48).map(|i| 10f64.powf(4.0 * i as f64 / 47.0)).collect();
    let mut g: Vec<f64> = pos
        .iter()
        .rev()
        .map(|d| -d)
        .filter(|d| (d + 1.0).abs() > 1e-9)
        .collect();
    g.extend(pos);
    g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaOptimum {
    pub delta_star: f64,
    pub f_star: f64,
    pub relaxation: f64,
    pub gamma_norm: f64,
    pub trace: Vec<DeltaSample>,
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    // (f, delta): smaller f wins, ties go to smaller |delta|.
    a.0 < b.0 - 1e-14 || ((a.0 - b.0).abs() <= 1e-14 && a.1.abs() < b.1.abs())
}

/// Minimizes the coupling norm over delta subject to both feasibility conditions.
pub fn optimize_delta(
    ps: &PartitionedSystem,
    search: &DeltaSearch,
    opts: &SolverOptions,
) -> Result<DeltaOptimum> {
    if !check_solvability(ps) {
        return Err(Error::Parameter(
            "row space of B2 is not contained in the row space of B1".into(),
        ));
    }
    let grid = if search.grid.is_empty() {
        default_delta_grid()
    } else {
        search.grid.clone()
    };
    let mut trace: Vec<DeltaSample> = grid.iter().map(|&d| evaluate_delta(ps, d, opts)).collect();
    let gamma = gamma_norm(ps, opts.norm).unwrap_or(f64::NAN);
    let max_relax = search.relaxations.iter().copied().fold(1.0, f64::max);
    for &relax in &search.relaxations {
        let mut best: Option<usize> = None;
        for (i, s) in trace.iter().enumerate() {
            if s.feasible_at(relax) {
                let cand = (s.coupling_norm.unwrap(), s.delta);
                if best
                    .is_none_or(|b| better(cand, (trace[b].coupling_norm.unwrap(), trace[b].delta)))
                {
                    best = Some(i);
                }
            }
        }
        let Some(bi) = best else { continue };
        for s in trace.iter_mut() {
            s.feasible = s.feasible_at(relax);
        }
        let mut best_pt = (trace[bi].coupling_norm.unwrap(), trace[bi].delta);
        let same_sign = |d: f64| d.signum() == best_pt.1.signum();
        let mut lo = if bi > 0 && same_sign(grid[bi - 1]) {
            grid[bi - 1]
        } else {
            best_pt.1
        };
        let mut hi = if bi + 1 < grid.len() && same_sign(grid[bi + 1]) {
            grid[bi + 1]
        } else {
            best_pt.1
        };
        for _ in 0..search.refine_steps {
            let ml = 0.5 * (lo + best_pt.1);
            let mr = 0.5 * (best_pt.1 + hi);
            let eval = |d: f64| -> Option<(f64, f64)> {
                if d == best_pt.1 {
                    return None;
                }
                let s = evaluate_delta(ps, d, opts);
                if s.feasible_at(relax) {
                    s.coupling_norm.map(|f| (f, d))
                } else {
                    None
                }
            };
            let left = eval(ml);
            let right = eval(mr);
            match (left, right) {
                (Some(l), r) if better(l, best_pt) && r.is_none_or(|r| !better(r, l)) => {
                    hi = best_pt.1;
                    best_pt = l;
                }
                (_, Some(r)) if better(r, best_pt) => {
                    lo = best_pt.1;
                    best_pt = r;
                }
                _ => {
                    lo = ml;
                    hi = mr;
                }
            }
        }
        return Ok(DeltaOptimum {
            delta_star: best_pt.1,
            f_star: best_pt.0,
            relaxation: relax,
            gamma_norm: gamma,
            trace,
        });
    }
    Err(Error::NoFeasibleDelta {
        max_relaxation: max_relax,
    })
}

/// How to choose delta in multi-stage pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPolicy {
    Fixed { delta: f64, relaxation: f64 },
    Auto(DeltaSearch),
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Auto(DeltaSearch::default())
    }
}

/// Resolves the policy and runs the decomposition.
pub fn decompose_with_policy(
    ps: &PartitionedSystem,
    policy: &DeltaPolicy,
    opts: &SolverOptions,
) -> Result<DecompositionResult> {
    match policy {
        DeltaPolicy::Fixed { delta, relaxation } => {
            decompose(ps, *delta, &opts.with_relaxation(*relaxation))
        }
        DeltaPolicy::Auto(search) => {
            let best = optimize_delta(ps, search, opts)?;
            decompose(ps, best.delta_star, &opts.with_relaxation(best.relaxation))
        }
    }
}

/// Fixed-point iteration for the standard Riccati equation in `L`.
///
/// With `lower_dominant` it iterates `L <- A22^-1 (L A11 - L A12 L + A21)` from
/// `A22^-1 A21`; otherwise `L <- (A22 L + L A12 L - A21) A11^-1` from `-A21 A11^-1`.
fn standard_iteration(
    ps: &PartitionedSystem,
    opts: &SolverOptions,
    lower_dominant: bool,
) -> Result<(Mat, usize)> {
    let step: Box<dyn Fn(&Mat) -> Mat> = if lower_dominant {
        let a22_inv = inverse(&ps.a22, "A22")?;
        Box::new(move |l: &Mat| &a22_inv * (l * &ps.a11 - l * &ps.a12 * l + &ps.a21))
    } else {
        let a11_inv = inverse(&ps.a11, "A11")?;
        Box::new(move |l: &Mat| (&ps.a22 * l + l * &ps.a12 * l - &ps.a21) * &a11_inv)
    };
    let mut l = Mat::zeros(ps.lower_dim(), ps.k);
    l = step(&l);
    let guard = 1e6 * norm(&l, opts.norm).max(1.0);
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next = step(&l);
        let diff = norm(&(&next - &l), opts.norm);
        let size = norm(&next, opts.norm);
        trace.push(diff);
        if !size.is_finite() || size > guard {
            return Err(Error::Divergence {
                iterations,
                norm: size,
                guard,
                trace,
            });
        }
        l = next;
        if diff <= opts.tol * size.max(1.0) {
            return Ok((l, iterations));
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                last_step: diff,
                trace,
            });
        }
    }
}

/// Standard Riccati transformation: solves `L A11 - A22 L - L A12 L + A21 = 0` by
/// fixed-point iteration from `L0 = A22^-1 A21`, then the Sylvester equation for M.
pub fn standard_riccati(
    ps: &PartitionedSystem,
    opts: &SolverOptions,
) -> Result<DecompositionResult> {
    let (l, iterations) = match standard_iteration(ps, opts, true) {
        Ok(v) => v,
        // Slow lower blocks make the A22-dominant iteration expand; the
        // A11-dominant rearrangement of the same equation contracts instead.
        Err(first) => standard_iteration(ps, opts, false).map_err(|_| first)?,
    };
    let res_l = norm(
        &(&l * &ps.a11 - &ps.a22 * &l - &l * &ps.a12 * &l + &ps.a21),
        opts.norm,
    );
    if res_l > opts.residual_tol {
        return Err(Error::Residual {
            what: "standard Riccati residual".into(),
            value: res_l,
            tol: opts.residual_tol,
        });
    }
    let upper = &ps.a11 - &ps.a12 * &l;
    let lower = &ps.a22 + &l * &ps.a12;
    let m = matrix::solve_sylvester(&upper, &(-&lower), &(-&ps.a12))?;
    let res_m = norm(&(&upper * &m - &m * &lower + &ps.a12), opts.norm);
    if res_m > opts.residual_tol {
        return Err(Error::Residual {
            what: "Sylvester residual".into(),
            value: res_m,
            tol: opts.residual_tol,
        });
    }
    let n = ps.n();
    let k = ps.k;
    let (t1, t2, t, t_inv) = transforms(n, k, &l, &m);
    let a2 = &t_inv * &ps.sys.a * &t;
    let b2 = &t_inv * &ps.sys.b;
    let upper_right = max_abs(&a2.view((0, k), (k, n - k)).into_owned());
    let lower_left = max_abs(&a2.view((k, 0), (n - k, k)).into_owned());
    if upper_right > opts.structural_tol || lower_left > opts.structural_tol {
        return Err(Error::StructuralZero {
            upper_right,
            lower_input: lower_left,
        });
    }
    let cond = condition_number(&t);
    let disjoint = disjoint_input(&b2, k, 1e-9);
    let diagnostics = Diagnostics {
        iterations_z: iterations,
        residual_z: res_l,
        residual_m: res_m,
        upper_right_zero: upper_right,
        condition_t: cond,
        condition_warning: cond > opts.cond_warning,
        upper_eigenvalues: eigen_pairs(&a2.view((0, 0), (k, k)).into_owned()),
        lower_eigenvalues: eigen_pairs(&a2.view((k, k), (n - k, n - k)).into_owned()),
        disjoint_input: Some(disjoint),
        ..Default::default()
    };
    let zero_coupling = Mat::zeros(n - k, k);
    Ok(DecompositionResult {
        k,
        delta: 0.0,
        z: l.clone(),
        l,
        m,
        d: Mat::zeros(0, 0),
        j: Mat::zeros(0, 0),
        t1,
        t2,
        t,
        t_inv,
        transformed: LtiSystem { a: a2, b: b2 },
        coupling: zero_coupling,
        diagnostics,
        z_iterates: Vec::new(),
        m_iterates: Vec::new(),
    })
}

/// True when no input column acts on both the first `k` rows and the remaining rows.
pub fn disjoint_input(b: &Mat, k: usize, thresh: f64) -> bool {
    (0..b.ncols()).all(|c| {
        let upper = (0..k).any(|r| b[(r, c)].abs() > thresh);
        let lower = (k..b.nrows()).any(|r| b[(r, c)].abs() > thresh);
        !(upper && lower)
    })
}

/// Result of repeatedly splitting the controlled block.
#[derive(Debug, Clone)]
pub struct RecursiveDecomposition {
    pub stages: Vec<DecompositionResult>,
    /// Composite transform over the full state.
    pub t: Mat,
    pub transformed: LtiSystem,
    /// Block sizes from the top (controlled) block downward.
    pub blocks: Vec<usize>,
    /// Set when a stage failed; `stages` then holds the completed prefix.
    pub failure: Option<String>,
}

impl RecursiveDecomposition {
    /// Largest entry in the blocks that must vanish: above the block diagonal,
    /// and the input rows of every block except the first.
    pub fn structural_violation(&self) -> f64 {
        let mut offs = vec![0];
        for b in &self.blocks {
            offs.push(offs.last().unwrap() + b);
        }
        let a = &self.transformed.a;
        let b = &self.transformed.b;
        let mut worst = 0.0_f64;
        for (i, w) in offs.windows(2).enumerate() {
            for r in w[0]..w[1] {
                for c in w[1]..a.ncols() {
                    worst = worst.max(a[(r, c)].abs());
                }
                if i > 0 {
                    for c in 0..b.ncols() {
                        worst = worst.max(b[(r, c)].abs());
                    }
                }
            }
        }
        worst
    }
}

/// Applies the modified transformation to the uppermost block for each split in turn.
pub fn recursive_decompose(
    sys: &LtiSystem,
    splits: &[usize],
    policy: &DeltaPolicy,
    opts: &SolverOptions,
) -> Result<RecursiveDecomposition> {
    let n = sys.states();
    if splits.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Parameter(
            "splits must be strictly decreasing".into(),
        ));
    }
    if let Some(&first) = splits.first() {
        if first >= n || *splits.last().unwrap() == 0 {
            return Err(Error::Parameter("splits must lie in 1..n".into()));
        }
    }
    let mut out = RecursiveDecomposition {
        stages: Vec::new(),
        t: Mat::identity(n, n),
        transformed: sys.clone(),
        blocks: vec![n],
        failure: None,
    };
    let mut upper_dim = n;
    for &k in splits {
        let upper = LtiSystem {
            a: out
                .transformed
                .a
                .view((0, 0), (upper_dim, upper_dim))
                .into_owned(),
            b: out
                .transformed
                .b
                .view((0, 0), (upper_dim, sys.inputs()))
                .into_owned(),
        };
        let stage = PartitionedSystem::new(upper, k)
            .and_then(|ps| decompose_with_policy(&ps, policy, opts));
        match stage {
            Ok(res) => {
                let mut embed = Mat::identity(n, n);
                embed
                    .view_mut((0, 0), (upper_dim, upper_dim))
                    .copy_from(&res.t);
                let mut embed_inv = Mat::identity(n, n);
                embed_inv
                    .view_mut((0, 0), (upper_dim, upper_dim))
                    .copy_from(&res.t_inv);
                out.t = &out.t * &embed;
                out.transformed = LtiSystem {
                    a: &embed_inv * &out.transformed.a * &embed,
                    b: &embed_inv * &out.transformed.b,
                };
                out.blocks[0] = upper_dim - k;
                out.blocks.insert(0, k);
                upper_dim = k;
                out.stages.push(res);
            }
            Err(e) => {
                out.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(out)
}
