//! State constraints as Lipschitz level functions (`level >= 0` inside).

use crate::error::{Error, Result};
use crate::matrix::MatrixJson;
use serde::{Deserialize, Serialize};

/// One factor of a [`Constraint::Product`], acting on `dim` consecutive coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ProductPart {
    pub dim: usize,
    pub set: Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    /// Axis-aligned box; level is the signed infinity-norm distance to the boundary.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Euclidean ball; level is `radius - |p - center|_2`.
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Union {
        parts: Vec<Constraint>,
    },
    Intersection {
        parts: Vec<Constraint>,
    },
    /// Cartesian product of constraints on consecutive coordinate blocks.
    Product {
        parts: Vec<ProductPart>,
    },
    /// Pulls back a constraint through a linear map: `p` is inside iff `matrix * p` is.
    Mapped {
        matrix: MatrixJson,
        set: Box<Constraint>,
    },
}

impl Constraint {
    pub fn inf_ball(dim: usize, radius: f64) -> Self {
        Constraint::Box {
            lo: vec![-radius; dim],
            hi: vec![radius; dim],
        }
    }

    pub fn product(parts: Vec<(usize, Constraint)>) -> Self {
        Constraint::Product {
            parts: parts
                .into_iter()
                .map(|(dim, set)| ProductPart { dim, set })
                .collect(),
        }
    }

    /// Checks that the constraint is well formed for points of dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            Constraint::Box { lo, hi } => {
                if lo.len() != dim || hi.len() != dim {
                    return bad(format!(
                        "box constraint has dimension {} but {dim} is required",
                        lo.len()
                    ));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                    return Err(Error::EmptySet("box constraint has lo > hi".into()));
                }
            }
            Constraint::Ball { center, radius } => {
                if center.len() != dim {
                    return bad(format!(
                        "ball constraint has dimension {} but {dim} is required",
                        center.len()
                    ));
                }
                if !(*radius >= 0.0) {
                    return Err(Error::EmptySet(
                        "ball constraint has negative radius".into(),
                    ));
                }
            }
            Constraint::Union { parts } | Constraint::Intersection { parts } => {
                if parts.is_empty() {
                    return bad("union/intersection needs at least one part".into());
                }
                for p in parts {
                    p.validate(dim)?;
                }
            }
            Constraint::Product { parts } => {
                let total: usize = parts.iter().map(|p| p.dim).sum();
                if total != dim {
                    return bad(format!(
                        "product parts cover {total} coordinates but {dim} are required"
                    ));
                }
                for p in parts {
                    p.set.validate(p.dim)?;
                }
            }
            Constraint::Mapped { matrix, set } => {
                if matrix.cols != dim || matrix.data.len() != matrix.rows * matrix.cols {
                    return bad("mapped constraint matrix has the wrong shape".into());
                }
                set.validate(matrix.rows)?;
            }
        }
        Ok(())
    }

    pub fn level(&self, p: &[f64]) -> f64 {
        match self {
            Constraint::Box { lo, hi } => {
                let mut m = f64::INFINITY;
                for a in 0..p.len() {
                    m = m.min(p[a] - lo[a]).min(hi[a] - p[a]);
                }
                m
            }
            Constraint::Ball { center, radius } => {
                radius
                    - p.iter()
                        .zip(center)
                        .map(|(x, c)| (x - c) * (x - c))
                        .sum::<f64>()
                        .sqrt()
            }
            Constraint::Union { parts } => parts
                .iter()
                .map(|c| c.level(p))
                .fold(f64::NEG_INFINITY, f64::max),
            Constraint::Intersection { parts } => parts
                .iter()
                .map(|c| c.level(p))
                .fold(f64::INFINITY, f64::min),
            Constraint::Product { parts } => {
                let mut off = 0;
                let mut m = f64::INFINITY;
                for part in parts {
                    m = m.min(part.set.level(&p[off..off + part.dim]));
                    off += part.dim;
                }
                m
            }
            Constraint::Mapped { matrix, set } => set.level(&apply(matrix, p)),
        }
    }

    /// Lower bound of the level over the box `p +- radius` (per-axis radii).
    pub fn level_inflated(&self, p: &[f64], radius: &[f64]) -> f64 {
        match self {
            Constraint::Box { lo, hi } => {
                let mut m = f64::INFINITY;
                for a in 0..p.len() {
                    m = m
                        .min(p[a] - radius[a] - lo[a])
                        .min(hi[a] - p[a] - radius[a]);
                }
                m
            }
            Constraint::Ball { center, radius: r } => {
                let far: f64 = p
                    .iter()
                    .zip(center)
                    .zip(radius)
                    .map(|((x, c), e)| {
                        let d = (x - c).abs() + e;
                        d * d
                    })
                    .sum();
                r - far.sqrt()
            }
            Constraint::Union { parts } => parts
                .iter()
                .map(|c| c.level_inflated(p, radius))
                .fold(f64::NEG_INFINITY, f64::max),
            Constraint::Intersection { parts } => parts
                .iter()
                .map(|c| c.level_inflated(p, radius))
                .fold(f64::INFINITY, f64::min),
            Constraint::Product { parts } => {
                let mut off = 0;
                let mut m = f64::INFINITY;
                for part in parts {
                    m = m.min(
                        part.set
                            .level_inflated(&p[off..off + part.dim], &radius[off..off + part.dim]),
                    );
                    off += part.dim;
                }
                m
            }
            Constraint::Mapped { matrix, set } => {
                let q = apply(matrix, p);
                let r: Vec<f64> = (0..matrix.rows)
                    .map(|i| {
                        (0..matrix.cols)
                            .map(|j| matrix.data[i * matrix.cols + j].abs() * radius[j])
                            .sum()
                    })
                    .collect();
                set.level_inflated(&q, &r)
            }
        }
    }

    /// Lipschitz constant of the level function with respect to the infinity norm.
    pub fn lipschitz(&self, dim: usize) -> f64 {
        match self {
            Constraint::Box { .. } => 1.0,
            Constraint::Ball { .. } => (dim as f64).sqrt(),
            Constraint::Union { parts } | Constraint::Intersection { parts } => {
                parts.iter().map(|c| c.lipschitz(dim)).fold(0.0, f64::max)
            }
            Constraint::Product { parts } => parts
                .iter()
                .map(|c| c.set.lipschitz(c.dim))
                .fold(0.0, f64::max),
            Constraint::Mapped { matrix, set } => {
                let rows = (0..matrix.rows)
                    .map(|i| {
                        (0..matrix.cols)
                            .map(|j| matrix.data[i * matrix.cols + j].abs())
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max);
                rows * set.lipschitz(matrix.rows)
            }
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.level(p) >= 0.0
    }

    /// Restriction of a product constraint to one of its factors.
    pub fn factor(&self, index: usize) -> Option<&Constraint> {
        match self {
            Constraint::Product { parts } => parts.get(index).map(|p| &p.set),
            _ => None,
        }
    }
}

fn apply(m: &MatrixJson, p: &[f64]) -> Vec<f64> {
    (0..m.rows)
        .map(|i| (0..m.cols).map(|j| m.data[i * m.cols + j] * p[j]).sum())
        .collect()
}
