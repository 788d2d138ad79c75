//! JSON run configurations and the bundled presets.

use crate::error::{Error, Result};
use crate::grid::{AxisBox, GridBox, DEFAULT_NODE_CAP};
use crate::kernel::{Constraint, StepParams};
use crate::riccati::{DeltaPolicy, DeltaSearch};
use crate::system::{self, LtiSystem, SystemJson};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Current configuration format version.
pub const CONFIG_VERSION: u32 = 1;

/// A system given inline or by the name of a bundled example.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum SystemSource {
    Preset { preset: String },
    Inline(SystemJson),
}

impl SystemSource {
    pub fn resolve(&self) -> Result<LtiSystem> {
        match self {
            SystemSource::Inline(s) => s.to_system(),
            SystemSource::Preset { preset } => match preset.as_str() {
                "cart" => Ok(system::cart()),
                "example_4d" => Ok(system::example_4d()),
                "example_6d" => Ok(system::example_6d()),
                "shared_input_2d" => Ok(system::shared_input_2d()),
                other => Err(Error::Config(format!("unknown system preset '{other}'"))),
            },
        }
    }
}

/// Which transformation splits the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMethod {
    /// Shifted-projector transform that moves all input into the upper block.
    #[default]
    Modified,
    /// Classical block-diagonalizing transform (needs disjoint inputs afterwards).
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct DecompositionConfig {
    pub method: DecompositionMethod,
    /// Fixed shift; `None` searches for the coupling-minimizing value.
    pub delta: Option<f64>,
    /// Feasibility relaxation factor used with a fixed shift.
    pub relaxation: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            method: DecompositionMethod::Modified,
            delta: None,
            relaxation: 1.0,
        }
    }
}

impl DecompositionConfig {
    pub fn policy(&self) -> DeltaPolicy {
        match self.delta {
            Some(delta) => DeltaPolicy::Fixed {
                delta,
                relaxation: self.relaxation,
            },
            None => DeltaPolicy::Auto(DeltaSearch::default()),
        }
    }
}

/// Grid and constraint for one subspace, in transformed coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SubspaceConfig {
    pub grid: GridBox,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct CompareConfig {
    pub enabled: bool,
    /// Node budget for the full-order grid.
    pub node_cap: u128,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct PipelineConfig {
    pub version: u32,
    pub system: SystemSource,
    /// Dimension of the upper (controlled) subspace.
    pub k: usize,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    pub tau: f64,
    pub steps: usize,
    pub upper: SubspaceConfig,
    pub lower: SubspaceConfig,
    pub controls: AxisBox,
    /// Kernel step parameters; the step length is always `tau / steps`.
    #[serde(default)]
    pub kernel: StepParams,
    #[serde(default)]
    pub compare: CompareConfig,
    /// Node budget for materializing the product set.
    #[serde(default = "default_cap")]
    pub product_cap: u128,
}

fn default_cap() -> u128 {
    DEFAULT_NODE_CAP
}

fn check_version(v: u32) -> Result<()> {
    if v != CONFIG_VERSION {
        return Err(Error::Config(format!(
            "unsupported config version {v}, expected {CONFIG_VERSION}"
        )));
    }
    Ok(())
}

fn check_horizon(tau: f64, steps: usize) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        check_horizon(self.tau, self.steps)?;
        let sys = self.system.resolve()?;
        let n = sys.states();
        if self.k == 0 || self.k >= n {
            return Err(Error::Config(format!(
                "split k = {} must satisfy 0 < k < {n}",
                self.k
            )));
        }
        if self.upper.grid.dim() != self.k || self.lower.grid.dim() != n - self.k {
            return Err(Error::Config(
                "subspace grid dimensions must be k and n - k".into(),
            ));
        }
        GridBox::new(
            self.upper.grid.lower.clone(),
            self.upper.grid.upper.clone(),
            self.upper.grid.nodes.clone(),
        )?;
        GridBox::new(
            self.lower.grid.lower.clone(),
            self.lower.grid.upper.clone(),
            self.lower.grid.nodes.clone(),
        )?;
        self.upper.constraint.validate(self.k)?;
        self.lower.constraint.validate(n - self.k)?;
        AxisBox::new(self.controls.lo.clone(), self.controls.hi.clone())?;
        if self.controls.dim() != sys.inputs() {
            return Err(Error::Config(format!(
                "control box has dimension {} but the system has {} inputs",
                self.controls.dim(),
                sys.inputs()
            )));
        }
        let sp = StepParams {
            q: self.tau / self.steps as f64,
            ..self.kernel.clone()
        };
        sp.validate()?;
        if let Some(d) = self.decomposition.delta {
            if !d.is_finite() || d == 0.0 || d == -1.0 {
                return Err(Error::Config(format!(
                    "delta must be finite and not 0 or -1, got {d}"
                )));
            }
        }
        if !(self.decomposition.relaxation >= 1.0) {
            return Err(Error::Config("relaxation factor must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_params(&self) -> StepParams {
        StepParams {
            q: self.tau / self.steps as f64,
            ..self.kernel.clone()
        }
    }

    /// Full transformed-space grid (upper axes first).
    pub fn product_grid(&self) -> GridBox {
        self.upper.grid.product(&self.lower.grid)
    }

    /// Product constraint over the full transformed space.
    pub fn product_constraint(&self) -> Constraint {
        let n = self.upper.grid.dim() + self.lower.grid.dim();
        Constraint::product(vec![
            (self.k, self.upper.constraint.clone()),
            (n - self.k, self.lower.constraint.clone()),
        ])
    }

    /// Uniformly resizes every subspace grid to `nodes` per axis.
    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.upper.grid.nodes.iter_mut().for_each(|n| *n = nodes);
        self.lower.grid.nodes.iter_mut().for_each(|n| *n = nodes);
        self
    }
}

/// Kernel mode for the single-subsystem command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Viab,
    Inv,
}

/// Single-subsystem kernel run.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct KernelConfig {
    pub version: u32,
    pub a: crate::matrix::MatrixJson,
    /// Input matrix; omit for an uncontrolled subsystem.
    #[serde(default)]
    pub b: Option<crate::matrix::MatrixJson>,
    /// Disturbance input matrix for invariance runs.
    #[serde(default)]
    pub coupling: Option<crate::matrix::MatrixJson>,
    pub grid: GridBox,
    pub constraint: Constraint,
    #[serde(default)]
    pub controls: Option<AxisBox>,
    /// Disturbance box, used for every step of an invariance run.
    #[serde(default)]
    pub vbox: Option<AxisBox>,
    pub tau: f64,
    pub steps: usize,
    #[serde(default)]
    pub mode: Option<KernelMode>,
    #[serde(default)]
    pub kernel: StepParams,
    /// Known kernel extent along the first axis, checked to within two cells.
    #[serde(default)]
    pub expected_interval: Option<[f64; 2]>,
    /// Points whose nearest-node membership is listed in the report.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
}

impl KernelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        check_horizon(self.tau, self.steps)?;
        let n = self.grid.dim();
        if self.probes.iter().any(|p| p.len() != n) {
            return Err(Error::Config(format!(
                "probe points must have {n} coordinates"
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Decomposition-only run.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct DecomposeConfig {
    pub version: u32,
    pub system: SystemSource,
    pub k: usize,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
}

impl DecomposeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        check_version(cfg.version)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// JSON schema of [`PipelineConfig`].
pub fn pipeline_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(PipelineConfig)).expect("schema serializes")
}

fn grid(dim: usize, lo: f64, hi: f64, nodes: usize) -> GridBox {
    GridBox::uniform(dim, lo, hi, nodes).expect("preset grid is valid")
}

/// Cart with two pendulums: box constraint of radius 0.5 in transformed coordinates.
pub fn cart_preset(nodes: usize) -> PipelineConfig {
    PipelineConfig {
        version: CONFIG_VERSION,
        system: SystemSource::Preset {
            preset: "cart".into(),
        },
        k: 2,
        decomposition: DecompositionConfig {
            method: DecompositionMethod::Modified,
            delta: Some(100.0),
            relaxation: 10.0,
        },
        tau: 3.0,
        steps: 50,
        upper: SubspaceConfig {
            grid: grid(2, -0.5, 0.5, nodes),
            constraint: Constraint::inf_ball(2, 0.5),
        },
        lower: SubspaceConfig {
            grid: grid(2, -0.5, 0.5, nodes),
            constraint: Constraint::inf_ball(2, 0.5),
        },
        controls: AxisBox::symmetric(&[10.0]),
        kernel: StepParams::default(),
        compare: CompareConfig::default(),
        product_cap: DEFAULT_NODE_CAP,
    }
}

/// Nonconvex per-subspace constraint of the 6D example: a ball joined with a slab.
pub fn sixd_constraint() -> Constraint {
    Constraint::Union {
        parts: vec![
            Constraint::Ball {
                center: vec![0.0; 3],
                radius: 0.5,
            },
            Constraint::Box {
                lo: vec![-0.9, -0.3, -0.3],
                hi: vec![0.9, 0.3, 0.3],
            },
        ],
    }
}

pub fn sixd_preset(nodes: usize) -> PipelineConfig {
    PipelineConfig {
        version: CONFIG_VERSION,
        system: SystemSource::Preset {
            preset: "example_6d".into(),
        },
        k: 3,
        decomposition: DecompositionConfig {
            method: DecompositionMethod::Modified,
            delta: Some(-25.0),
            relaxation: 10.0,
        },
        tau: 2.0,
        steps: 50,
        upper: SubspaceConfig {
            grid: grid(3, -1.0, 1.0, nodes),
            constraint: sixd_constraint(),
        },
        lower: SubspaceConfig {
            grid: grid(3, -1.0, 1.0, nodes),
            constraint: sixd_constraint(),
        },
        controls: AxisBox::new(vec![-0.5, 0.5], vec![0.5, 1.0]).expect("valid box"),
        kernel: StepParams::default(),
        compare: CompareConfig::default(),
        product_cap: DEFAULT_NODE_CAP,
    }
}

pub fn ex4d_preset(nodes: usize) -> PipelineConfig {
    PipelineConfig {
        version: CONFIG_VERSION,
        system: SystemSource::Preset {
            preset: "example_4d".into(),
        },
        k: 2,
        decomposition: DecompositionConfig::default(),
        tau: 1.0,
        steps: 20,
        upper: SubspaceConfig {
            grid: grid(2, -1.0, 1.0, nodes),
            constraint: Constraint::inf_ball(2, 1.0),
        },
        lower: SubspaceConfig {
            grid: grid(2, -1.0, 1.0, nodes),
            constraint: Constraint::inf_ball(2, 1.0),
        },
        controls: AxisBox::symmetric(&[1.0]),
        kernel: StepParams::default(),
        compare: CompareConfig::default(),
        product_cap: DEFAULT_NODE_CAP,
    }
}

/// Looks up a bundled pipeline preset by name.
pub fn preset(name: &str) -> Result<PipelineConfig> {
    match name {
        "cart" => Ok(cart_preset(21)),
        "sixd" => Ok(sixd_preset(51)),
        "ex4d" => Ok(ex4d_preset(21)),
        other => Err(Error::Config(format!("unknown preset '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["cart", "sixd", "ex4d"] {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            let back = PipelineConfig::from_json(&text).unwrap();
            assert_eq!(
                serde_json::to_value(&back).unwrap(),
                serde_json::to_value(&cfg).unwrap()
            );
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = cart_preset(11);
        c.steps = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cart_preset(11);
        c.version = 7;
        assert!(c.validate().is_err());
        let mut c = cart_preset(11);
        c.controls = AxisBox::symmetric(&[1.0, 1.0]);
        assert!(c.validate().is_err());
        let mut c = cart_preset(11);
        c.k = 3;
        assert!(c.validate().is_err());
        assert!(PipelineConfig::from_json("{ not json").is_err());
    }

    #[test]
    fn schema_mentions_top_level_fields() {
        let s = pipeline_schema().to_string();
        for f in [
            "\"tau\"",
            "\"steps\"",
            "\"upper\"",
            "\"controls\"",
            "\"decomposition\"",
        ] {
            assert!(s.contains(f), "{f}");
        }
    }
}
