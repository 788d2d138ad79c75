//! Monte Carlo witness search for viability of a single initial state.

use super::constraint::Constraint;
use super::engine::LEVEL_TOL;
use crate::error::{Error, Result};
use crate::grid::ControlBox;
use crate::matrix::{zoh, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct CertifyOptions {
    /// Piecewise-constant control segments over the horizon.
    pub segments: usize,
    /// Exact sub-samples per segment at which the constraint is checked.
    pub substeps: usize,
    /// Random control sequences to try.
    pub samples: usize,
    pub seed: u64,
    /// Candidate controls per input axis for the heuristics.
    pub m_u: usize,
    /// Segments simulated ahead when the greedy heuristic scores a control.
    pub lookahead: usize,
    /// Segment simulations allowed for the backtracking search.
    pub search_budget: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            segments: 50,
            substeps: 8,
            samples: 200,
            seed: 0,
            m_u: 5,
            lookahead: 10,
            search_budget: 20_000,
        }
    }
}

struct Sim<'a> {
    phi: Mat,
    gam: Mat,
    g: &'a Constraint,
    substeps: usize,
}

impl Sim<'_> {
    /// Runs one segment with constant `u`, returning the end state and the minimum margin.
    fn segment(&self, x: &Mat, u: &Mat) -> (Mat, f64) {
        let gu = &self.gam * u;
        let mut x = x.clone();
        let mut m = f64::INFINITY;
        for _ in 0..self.substeps {
            x = &self.phi * &x + &gu;
            m = m.min(self.g.level(x.as_slice()));
        }
        (x, m)
    }

    /// Candidates sorted by constant-input lookahead score, best first. The score
    /// is the minimum margin over the simulated steps (the common starting margin
    /// excluded), ties broken by the margin at the end of the horizon.
    fn ranked<'c>(&self, x: &Mat, candidates: &'c [Mat], horizon: usize) -> Vec<&'c Mat> {
        let mut scored: Vec<(&Mat, f64, f64)> = candidates
            .iter()
            .map(|c| {
                let mut y = x.clone();
                let mut worst = f64::INFINITY;
                for _ in 0..horizon {
                    let (ny, m) = self.segment(&y, c);
                    worst = worst.min(m);
                    y = ny;
                }
                (c, worst, self.g.level(y.as_slice()))
            })
            .collect();
        scored.sort_by(|p, q| q.1.total_cmp(&p.1).then(q.2.total_cmp(&p.2)));
        scored.into_iter().map(|(c, _, _)| c).collect()
    }

    fn run(&self, x0: &Mat, seq: impl Iterator<Item = Mat>) -> f64 {
        let mut x = x0.clone();
        let mut worst = self.g.level(x0.as_slice());
        for u in seq {
            let (nx, m) = self.segment(&x, &u);
            worst = worst.min(m);
            if worst < -LEVEL_TOL {
                break;
            }
            x = nx;
        }
        worst
    }
}

/// True when some tried control sequence keeps `x' = a x + b u` inside `g` over `[0, tau]`.
///
/// Tries constant sampled controls, a greedy re-planning heuristic that picks
/// the control with the best constant-input lookahead margin, a budgeted
/// backtracking search in the same ranking order, and `samples` uniformly
/// random piecewise-constant sequences drawn from a seeded generator.
pub fn certify_point(
    a: &Mat,
    b: &Mat,
    x0: &[f64],
    g: &Constraint,
    u: &ControlBox,
    tau: f64,
    opts: &CertifyOptions,
) -> Result<bool> {
    let n = a.nrows();
    if x0.len() != n || b.nrows() != n || u.dim() != b.ncols() {
        return Err(Error::Parameter(
            "certify_point: inconsistent dimensions".into(),
        ));
    }
    if opts.segments == 0 || opts.substeps == 0 || !(tau > 0.0) {
        return Err(Error::Parameter(
            "certify_point: need a positive horizon and step counts".into(),
        ));
    }
    let dt = tau / (opts.segments * opts.substeps) as f64;
    let (phi, gam) = zoh(a, b, dt)?;
    let sim = Sim {
        phi,
        gam,
        g,
        substeps: opts.substeps,
    };
    let x0 = Mat::from_column_slice(n, 1, x0);
    if g.level(x0.as_slice()) < -LEVEL_TOL {
        return Ok(false);
    }
    let col = |v: &[f64]| Mat::from_column_slice(v.len(), 1, v);
    let candidates: Vec<Mat> = u.samples(opts.m_u.max(2)).iter().map(|c| col(c)).collect();

    for c in &candidates {
        if sim.run(&x0, std::iter::repeat_n(c.clone(), opts.segments)) >= -LEVEL_TOL {
            return Ok(true);
        }
    }

    // Greedy re-planning: long lookahead first, then the myopic level ascent.
    let mut horizons = vec![opts.lookahead.max(1), 1];
    horizons.dedup();
    for &h in &horizons {
        if greedy(&sim, &x0, opts.segments, h, &candidates) {
            return Ok(true);
        }
    }

    let mut budget = opts.search_budget;
    if search(&sim, &x0, 0, opts.segments, &candidates, &mut budget) {
        return Ok(true);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.samples {
        let seq: Vec<Mat> = (0..opts.segments)
            .map(|_| {
                let v: Vec<f64> =
                    u.lo.iter()
                        .zip(&u.hi)
                        .map(|(l, h)| if l == h { *l } else { rng.gen_range(*l..=*h) })
                        .collect();
                col(&v)
            })
            .collect();
        if sim.run(&x0, seq.into_iter()) >= -LEVEL_TOL {
            return Ok(true);
        }
    }
    Ok(false)
}

fn greedy(sim: &Sim, x0: &Mat, segments: usize, lookahead: usize, candidates: &[Mat]) -> bool {
    let mut x = x0.clone();
    for s in 0..segments {
        let best = sim.ranked(&x, candidates, lookahead.min(segments - s))[0];
        let (nx, m) = sim.segment(&x, best);
        if m < -LEVEL_TOL {
            return false;
        }
        x = nx;
    }
    true
}

/// Depth-first search over per-segment controls in one-step ranking order,
/// until the horizon is reached or the segment budget runs out.
fn search(
    sim: &Sim,
    x: &Mat,
    seg: usize,
    segments: usize,
    candidates: &[Mat],
    budget: &mut usize,
) -> bool {
    if seg == segments {
        return true;
    }
    for c in sim.ranked(x, candidates, 1) {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let (nx, m) = sim.segment(x, c);
        if m >= -LEVEL_TOL && search(sim, &nx, seg + 1, segments, candidates, budget) {
            return true;
        }
    }
    false
}
